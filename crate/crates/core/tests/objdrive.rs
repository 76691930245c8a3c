// SPDX-License-Identifier: Apache-2.0

use iostack::analysis::detect_chains;
use iostack::stack::{ObjectDriveStack, StackModel, StackRegistry, StackSettings};
use iostack::trace::{IoTag, Op, Trace};
use iostack::workload::{
    chunk_object, generate_workload, key_for, load_phase, requests_for_osd, ChunkRequest, ClusterSpec,
    RequestKind, WorkloadKind, WorkloadSpec, MIB,
};

fn put(key: &str, bytes: u64) -> ChunkRequest {
    ChunkRequest {
        ts_ns: 0,
        kind: RequestKind::Put,
        key: key.to_string(),
        bytes,
        thread_id: 0,
    }
}

fn drive() -> ObjectDriveStack {
    ObjectDriveStack::new(&StackSettings::default()).unwrap()
}

fn of(t: &Trace, tag: IoTag, op: Op) -> Vec<u64> {
    t.events().iter().filter(|e| e.tag == tag && e.op == op).map(|e| e.bytes()).collect()
}

#[test]
fn large_chunk_splits_at_value_cap() {
    let chunk = chunk_object(128 * MIB, &ClusterSpec::default()).unwrap();
    let mut d = drive();
    let tr = d.translate(&[put("0000000001", chunk)]).unwrap().trace;
    let od = of(&tr, IoTag::Od, Op::Write);
    assert_eq!(od.len(), chunk.div_ceil(2 * MIB) as usize);
    assert_eq!(od.len(), 6);
    assert_eq!(od.iter().filter(|&&b| b == 2 * MIB).count(), 5);
    assert_eq!(od.iter().sum::<u64>(), chunk);
    assert_eq!(of(&tr, IoTag::Om, Op::Write).len(), 1);
    assert_eq!(tr.events().iter().filter(|e| e.tag == IoTag::Fsm).count(), 0);
}

#[test]
fn list_uses_iterator_batches() {
    let mut d = drive();
    let keys: Vec<_> = (0..1000).map(|i| put(&key_for(i), MIB)).collect();
    d.preload(&keys).unwrap();
    let tr = d.translate(&[ChunkRequest::list(0)]).unwrap().trace;
    assert_eq!(tr.len(), 1000usize.div_ceil(256));
    assert!(tr.events().iter().all(|e| e.tag == IoTag::Om && e.op == Op::Read));
}

#[test]
fn get_mirrors_put() {
    let mut d = drive();
    d.preload(&[put("0000000004", 5 * MIB + 123)]).unwrap();
    let g = ChunkRequest {
        kind: RequestKind::Get,
        ..put("0000000004", 5 * MIB + 123)
    };
    let tr = d.translate(&[g]).unwrap().trace;
    let od = of(&tr, IoTag::Od, Op::Read);
    assert_eq!(od.len(), 3);
    assert_eq!(of(&tr, IoTag::Om, Op::Read).len(), 1);
}

#[test]
fn unknown_keys_are_errors() {
    let mut d = drive();
    let g = ChunkRequest {
        kind: RequestKind::Get,
        ..put("0000000001", MIB)
    };
    assert!(d.translate(&[g]).is_err());
}

fn traces(kind: WorkloadKind, stack: &str) -> Trace {
    let mut w = WorkloadSpec::new(kind, 16 * MIB, 120);
    w.thread_count = 4;
    w.seed = 11;
    let cluster = ClusterSpec::default();
    let ops = generate_workload(&w, &cluster).unwrap();
    let load = requests_for_osd(&load_phase(&w), &cluster, 0).unwrap();
    let reqs = requests_for_osd(&ops, &cluster, 0).unwrap();
    let mut s = StackRegistry::default().create(stack, &StackSettings::default()).unwrap();
    s.preload(&load).unwrap();
    s.translate(&reqs).unwrap().trace
}

#[test]
fn never_emits_filesystem_metadata() {
    for kind in [WorkloadKind::WriteOnly, WorkloadKind::ReadOnly, WorkloadKind::ReadWrite, WorkloadKind::Enumerate] {
        let t = traces(kind, "object-drive");
        assert_eq!(t.events().iter().filter(|e| e.tag == IoTag::Fsm).count(), 0, "{kind}");
    }
}

#[test]
fn od_bytes_match_chunk_bytes() {
    let mut w = WorkloadSpec::new(WorkloadKind::ReadWrite, 16 * MIB, 80);
    w.seed = 3;
    let cluster = ClusterSpec::default();
    let ops = generate_workload(&w, &cluster).unwrap();
    let load = requests_for_osd(&load_phase(&w), &cluster, 0).unwrap();
    let reqs = requests_for_osd(&ops, &cluster, 0).unwrap();
    let mut d = drive();
    d.preload(&load).unwrap();
    let t = d.translate(&reqs).unwrap().trace;
    for (op, kind) in [(Op::Write, RequestKind::Put), (Op::Read, RequestKind::Get)] {
        let want: u64 = reqs.iter().filter(|r| r.kind == kind).map(|r| r.bytes).sum();
        assert_eq!(of(&t, IoTag::Od, op).iter().sum::<u64>(), want);
    }
}

#[test]
fn placement_dominates_filesystem() {
    let od = traces(WorkloadKind::WriteOnly, "object-drive");
    let os = traces(WorkloadKind::WriteOnly, "os-fs:ag-extent");
    let fo = detect_chains(&od, Some(IoTag::Od), None);
    let fs = detect_chains(&os, Some(IoTag::Od), None);
    assert!(fo.byte_ge_nts_fraction >= fs.byte_ge_nts_fraction);
    assert!(fo.count_ge_nts_fraction >= fs.count_ge_nts_fraction);
}

#[test]
fn fewer_metadata_commands_than_filesystem() {
    // skewed re-reads hit the host page cache, so R-O is checked on first touch below
    for kind in [WorkloadKind::WriteOnly, WorkloadKind::ReadWrite, WorkloadKind::Enumerate] {
        let od = traces(kind, "object-drive");
        let os = traces(kind, "os-fs:ag-extent");
        let om = od.events().iter().filter(|e| e.tag == IoTag::Om).count();
        let meta = os.events().iter().filter(|e| e.tag != IoTag::Od).count();
        assert!(om <= meta, "{kind}: {om} > {meta}");
    }
}

#[test]
fn first_touch_reads_need_fewer_metadata_commands() {
    let keys: Vec<_> = (0..200).map(|i| put(&key_for(i), 2 * MIB)).collect();
    let gets: Vec<_> = keys
        .iter()
        .map(|k| ChunkRequest {
            kind: RequestKind::Get,
            ..k.clone()
        })
        .collect();
    let meta = |stack: &str| {
        let mut s = StackRegistry::default().create(stack, &StackSettings::default()).unwrap();
        s.preload(&keys).unwrap();
        let t = s.translate(&gets).unwrap().trace;
        t.events().iter().filter(|e| e.tag != IoTag::Od).count()
    };
    assert!(meta("object-drive") <= meta("os-fs:ag-extent"));
}

#[test]
fn contiguous_runs_per_command_on_empty_device() {
    let mut d = drive();
    let keys: Vec<_> = (0..50).map(|i| put(&key_for(i), 7 * MIB)).collect();
    d.translate(&keys).unwrap();
    for i in 0..50 {
        let runs = d.runs_of(&key_for(i)).unwrap();
        assert_eq!(runs.len(), 4);
        assert!(runs.iter().all(|r| r.len * 512 <= 2 * MIB));
    }
}
