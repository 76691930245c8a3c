// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use iostack::analysis::{
    build_heatmap, coalesce_stats, compute_cdf, detect_chains, layer_breakdown, Filter,
};
use iostack::config::SimConfig;
use iostack::run::{run, RunSpec};
use iostack::trace::{IoEvent, IoTag, LayerLatency, Op, Trace};
use iostack::workload::{WorkloadKind, KIB, MIB};

fn trace(ios: &[(u64, u64)]) -> Trace {
    let events = ios
        .iter()
        .enumerate()
        .map(|(i, &(lba, len))| IoEvent::new(i as u64 * 1000, Op::Write, lba, len, IoTag::Od, 0))
        .collect();
    Trace::from_events(events, 1 << 30, BTreeMap::new()).unwrap()
}

#[test]
fn chain_examples() {
    assert_eq!(detect_chains(&trace(&[(0, 8), (8, 8), (16, 8)]), None, None).chains, vec![12_288]);
    assert_eq!(detect_chains(&trace(&[(0, 8), (100, 8)]), None, None).chains, vec![4096, 4096]);
}

#[test]
fn nts_boundaries() {
    let short = detect_chains(&trace(&[(0, 8), (100, 8), (300, 2048)]), None, None);
    assert_eq!((short.count_ge_nts_fraction, short.byte_ge_nts_fraction), (0.0, 0.0));
    let long = detect_chains(&trace(&[(0, 8192), (10_000, 4096), (14_096, 4096)]), None, None);
    assert_eq!(long.chains, vec![4 * MIB, 4 * MIB]);
    assert_eq!((long.count_ge_nts_fraction, long.byte_ge_nts_fraction), (1.0, 1.0));
}

#[test]
fn ten_thousand_event_chain_scan() {
    // deterministic mix of follow-ons and jumps
    let mut ios = Vec::with_capacity(10_000);
    let mut next = 0u64;
    for i in 0..10_000u64 {
        let len = 8 + (i * 7919 % 13) * 8;
        let lba = if i % 3 == 0 { (i * 104_729) % (1 << 24) } else { next };
        ios.push((lba, len));
        next = lba + len;
    }
    let t = trace(&ios);
    let ev = t.events();
    let mut want = Vec::new();
    for i in 0..ev.len() {
        if i > 0 && ev[i - 1].end_lba() == ev[i].lba {
            continue;
        }
        let mut j = i;
        let mut bytes = ev[i].bytes();
        while j + 1 < ev.len() && ev[j].end_lba() == ev[j + 1].lba {
            j += 1;
            bytes += ev[j].bytes();
        }
        want.push(bytes);
    }
    assert_eq!(detect_chains(&t, None, None).chains, want);
}

#[test]
fn cdf_examples() {
    let t = trace(&[(0, 8), (100, 8), (200, 32), (400, 256)]);
    let cdf = compute_cdf(&t, Filter::default()).unwrap();
    assert_eq!(cdf.points, vec![(4 * KIB, 0.5), (16 * KIB, 0.75), (128 * KIB, 1.0)]);
    let one = compute_cdf(&trace(&[(0, 8)]), Filter::default()).unwrap();
    assert_eq!(one.points, vec![(4 * KIB, 1.0)]);
    assert!(compute_cdf(&t, Filter::tag(IoTag::Fsm)).is_err());
}

#[test]
fn single_event_heatmap() {
    assert_eq!(build_heatmap(&trace(&[(77, 8)]), 1, 1).unwrap().counts, vec![vec![1]]);
}

#[test]
fn device_only_latency_breakdown() {
    let mut e = IoEvent::new(0, Op::Read, 0, 8, IoTag::Od, 0);
    e.lat = LayerLatency {
        device_ns: 5000,
        ..LayerLatency::default()
    };
    e.complete_ns = 5000;
    let t = Trace::from_events(vec![e], 1 << 20, BTreeMap::new()).unwrap();
    let b = layer_breakdown(&t).unwrap();
    assert_eq!((b.vfs_share, b.fs_share, b.block_share, b.device_share), (0.0, 0.0, 0.0, 1.0));
}

#[test]
fn coalesce_examples() {
    // 8 × 128 KiB merged to 1 MiB and split into 4 × 256 KiB
    let s = coalesce_stats(8, &[2, 2, 2, 2]);
    assert_eq!(s.max_raw_per_bio, 2);
    assert_eq!(s.mean_raw_per_bio, 2.0);
    let none = coalesce_stats(5, &[1; 5]);
    assert_eq!(none.mean_raw_per_bio, 1.0);
}

#[test]
fn ag_extent_enumeration_metadata_stays_in_group_bands() {
    let mut cfg = SimConfig::default();
    cfg.workload.kind = WorkloadKind::Enumerate;
    cfg.workload.key_distribution = WorkloadKind::Enumerate.default_distribution();
    let spec = RunSpec {
        stack: "os-fs:ag-extent".into(),
        ..RunSpec::from_config(&cfg)
    };
    let r = run(&spec, &cfg).unwrap();
    let events = r.trace.events().iter().filter(|e| e.tag == IoTag::Fsm).cloned().collect();
    let fsm = Trace::from_events(events, r.trace.capacity_sectors(), BTreeMap::new()).unwrap();
    assert!(!fsm.is_empty());
    let bands = build_heatmap(&fsm, 1, 64).unwrap().lba_bands();
    assert!(bands <= cfg.stack.ag_extent.allocation_groups, "{bands} bands");
}
