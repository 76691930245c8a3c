// SPDX-License-Identifier: Apache-2.0

use iostack::alloc::AllocatorState;
use iostack::block::{bio_split_merge, RawIo, MAX_BIO_BYTES};
use iostack::cache::DcacheModel;
use iostack::stack::{FsProfile, OsFsStack, StackModel, StackSettings};
use iostack::trace::{IoTag, Op, Trace};
use iostack::workload::{key_for, ChunkRequest, RequestKind, KIB, MIB};

fn put(key: &str, bytes: u64, thread: u32) -> ChunkRequest {
    ChunkRequest {
        ts_ns: 0,
        kind: RequestKind::Put,
        key: key.to_string(),
        bytes,
        thread_id: thread,
    }
}

fn get(key: &str, bytes: u64, thread: u32) -> ChunkRequest {
    ChunkRequest {
        kind: RequestKind::Get,
        ..put(key, bytes, thread)
    }
}

fn ag_stack() -> OsFsStack {
    OsFsStack::new(FsProfile::ag_extent(), &StackSettings::default()).unwrap()
}

fn simple_stack() -> OsFsStack {
    OsFsStack::new(FsProfile::simple_extent(), &StackSettings::default()).unwrap()
}

fn count(t: &Trace, tag: IoTag, op: Op) -> usize {
    t.events().iter().filter(|e| e.tag == tag && e.op == op).count()
}

fn bytes(t: &Trace, tag: IoTag, op: Op) -> u64 {
    t.events().iter().filter(|e| e.tag == tag && e.op == op).map(|e| e.bytes()).sum()
}

#[test]
fn cold_put_of_one_mib() {
    let mut s = ag_stack();
    let tr = s.translate(&[put("0000000001", MIB, 0)]).unwrap().trace;
    let od: Vec<_> = tr.events().iter().filter(|e| e.tag == IoTag::Od).collect();
    assert!(od.iter().all(|e| e.op == Op::Write));
    assert_eq!(od.iter().map(|e| e.bytes()).sum::<u64>(), MIB);
    assert!(od.len() <= 4);
    assert!(od.iter().all(|e| e.bytes() <= 256 * KIB));

    assert_eq!(count(&tr, IoTag::Fsm, Op::Read), 1);
    assert_eq!(bytes(&tr, IoTag::Fsm, Op::Read), 16 * KIB);
    assert_eq!(count(&tr, IoTag::Om, Op::Read), 1);
    assert_eq!(count(&tr, IoTag::Om, Op::Write), 1);
    assert_eq!(bytes(&tr, IoTag::Om, Op::Write), 16 * KIB);
    assert_eq!(count(&tr, IoTag::Fsm, Op::Write), 1);
    assert_eq!(tr.len(), od.len() + 4);
}

#[test]
fn get_of_unknown_key_fails() {
    let mut s = ag_stack();
    assert!(s.translate(&[get("0000000009", MIB, 0)]).is_err());
}

#[test]
fn cold_list_of_1000_keys() {
    let keys: Vec<ChunkRequest> = (0..1000).map(|i| put(&key_for(i), 64 * KIB, 0)).collect();
    for mut s in [ag_stack(), simple_stack()] {
        s.preload(&keys).unwrap();
        let tr = s.translate(&[ChunkRequest::list(0)]).unwrap();
        assert!(tr.trace.events().iter().all(|e| e.tag == IoTag::Fsm && e.op == Op::Read));
        assert_eq!(tr.lookup_misses, 1000);
        assert_eq!(count(&tr.trace, IoTag::Od, Op::Read) + count(&tr.trace, IoTag::Od, Op::Write), 0);
    }
}

#[test]
fn put_od_bytes_equal_chunk_size() {
    let sizes = [4 * KIB, 100 * KIB, MIB + 12 * KIB, 699_056, 3 * MIB];
    for (i, &b) in sizes.iter().enumerate() {
        let mut s = ag_stack();
        let tr = s.translate(&[put(&key_for(i as u64), b, 0)]).unwrap().trace;
        // OD writes cover whole pages
        let expect = b.div_ceil(4 * KIB) * 4 * KIB;
        assert_eq!(bytes(&tr, IoTag::Od, Op::Write), expect, "size {b}");
        assert_eq!(bytes(&tr, IoTag::Om, Op::Write) % (16 * KIB), 0);
        let fsm_w = bytes(&tr, IoTag::Fsm, Op::Write);
        assert_eq!(fsm_w % (4 * KIB), 0);
    }
}

#[test]
fn get_reads_back_the_chunk() {
    let mut s = ag_stack();
    s.preload(&[put("0000000001", MIB, 0)]).unwrap();
    let tr = s.translate(&[get("0000000001", MIB, 0)]).unwrap().trace;
    assert_eq!(bytes(&tr, IoTag::Od, Op::Read), MIB);
    assert_eq!(count(&tr, IoTag::Om, Op::Read), 1);
    assert_eq!(count(&tr, IoTag::Od, Op::Write), 0);
}

#[test]
fn emitted_ios_never_exceed_max_bio() {
    let mut s = ag_stack();
    let reqs: Vec<_> = (0..64).map(|i| put(&key_for(i), 3 * MIB + 4 * KIB, (i % 8) as u32)).collect();
    let tr = s.translate(&reqs).unwrap().trace;
    assert!(tr.events().iter().all(|e| e.bytes() <= MAX_BIO_BYTES));
}

#[test]
fn single_writer_gets_one_extent_per_chunk() {
    let mut s = ag_stack();
    let reqs: Vec<_> = (0..20).map(|i| put(&key_for(i), 10 * MIB, 0)).collect();
    s.translate(&reqs).unwrap();
    for i in 0..20 {
        let ext = s.extents_of(&key_for(i)).unwrap();
        assert_eq!(ext.len(), 1, "key {i}");
    }
}

fn mean_extents(writers: u32) -> f64 {
    let mut s = simple_stack();
    let n = 32u64;
    let reqs: Vec<_> = (0..n).map(|i| put(&key_for(i), 4 * MIB, (i % u64::from(writers)) as u32)).collect();
    s.translate(&reqs).unwrap();
    (0..n).map(|i| s.extents_of(&key_for(i)).unwrap().len() as f64).sum::<f64>() / n as f64
}

#[test]
fn more_writers_never_reduce_fragmentation() {
    let m: Vec<f64> = [1, 2, 4, 8].iter().map(|&w| mean_extents(w)).collect();
    assert_eq!(m[0], 1.0);
    assert!(m.windows(2).all(|w| w[1] >= w[0]), "{m:?}");
}

#[test]
fn two_interleaved_writers_fragment_each_other() {
    let mut a = AllocatorState::new(1 << 24, 1).unwrap();
    let piece = 256 * KIB;
    for _ in 0..(10 * MIB / piece) {
        for f in ["a", "b"] {
            a.allocate_extents(f, piece, 0, FsProfile::simple_extent().extent_max_bytes).unwrap();
        }
    }
    for f in ["a", "b"] {
        let ext = a.extents(f);
        assert!(ext.len() >= 2);
        assert!(ext.iter().all(|e| e.len * 512 < 10 * MIB));
    }
}

#[test]
fn bio_examples() {
    let w = |lba, len| RawIo::new(0, Op::Write, lba, len, IoTag::Od, 0);
    let one = bio_split_merge(&[w(0, 256), w(256, 256)]);
    assert_eq!(one.bios.len(), 1);
    assert_eq!(one.bios[0].bytes(), 256 * KIB);

    let split = bio_split_merge(&[w(0, 2048)]);
    assert_eq!(split.bios.len(), 4);
    assert!(split.bios.iter().all(|b| b.bytes() == 256 * KIB));
}

#[test]
fn dcache_inclusion_property() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let paths: Vec<String> = (0..5000).map(|_| format!("k{}", rng.random_range(0..300))).collect();
    let mut last = u64::MAX;
    for cap in [1, 8, 32, 100, 250, 400] {
        let mut d = DcacheModel::new(cap);
        for p in &paths {
            d.lookup(p);
        }
        let misses = d.counters().misses;
        assert!(misses <= last, "capacity {cap}");
        last = misses;
    }
}

#[test]
fn simple_extent_needs_more_metadata_io_to_enumerate() {
    let keys: Vec<ChunkRequest> = (0..2000).map(|i| put(&key_for(i), 64 * KIB, (i % 4) as u32)).collect();
    let fsm = |mut s: OsFsStack| {
        s.preload(&keys).unwrap();
        let tr = s.translate(&[ChunkRequest::list(0)]).unwrap().trace;
        tr.events().iter().filter(|e| e.tag == IoTag::Fsm).count()
    };
    assert!(fsm(simple_stack()) >= fsm(ag_stack()));
}
