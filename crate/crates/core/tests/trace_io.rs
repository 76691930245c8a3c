// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write as _;

use iostack::blkparse::{parse_blkparse_str, parse_blkparse_text};
use iostack::trace::{emit_trace, parse_trace, IoEvent, IoTag, LayerLatency, Op, Trace};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CAP: u64 = 1 << 30;

fn random_event(rng: &mut ChaCha8Rng, replayed: bool) -> IoEvent {
    let len = rng.random_range(1..=512u64);
    let mut e = IoEvent::new(
        rng.random_range(0..50_000_000u64),
        if rng.random_bool(0.5) { Op::Read } else { Op::Write },
        rng.random_range(0..CAP - len),
        len,
        [IoTag::Od, IoTag::Om, IoTag::Fsm][rng.random_range(0..3)],
        rng.random_range(0..64),
    );
    if replayed {
        e.lat = LayerLatency {
            vfs_ns: rng.random_range(0..90_000),
            fs_ns: rng.random_range(0..90_000),
            block_ns: rng.random_range(0..900_000),
            device_ns: rng.random_range(1..9_000_000),
        };
        e.complete_ns = e.submit_ns + e.lat.total_ns();
    }
    e
}

fn random_trace(seed: u64, n: usize) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..n).map(|_| random_event(&mut rng, true)).collect();
    let mut meta = BTreeMap::new();
    meta.insert("seed".to_string(), seed.to_string());
    Trace::from_events(events, CAP, meta).unwrap()
}

#[test]
fn ten_thousand_rows_round_trip_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let t = random_trace(77, 10_000);
    emit_trace(&t, &a).unwrap();
    let back = parse_trace(&a).unwrap();
    assert_eq!(back, t);
    emit_trace(&back, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn parsed_events_are_ordered() {
    let t = random_trace(5, 2000);
    // shuffle rows on disk
    let text = t.emit();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.reverse();
    let shuffled = format!("{header}\n{}\n", lines.join("\n"));
    let back = Trace::parse_str(&shuffled).unwrap();
    assert!(back.events().windows(2).all(|w| w[0].submit_ns <= w[1].submit_ns));
    assert_eq!(back.events(), t.events());
    assert!(back.meta_u64("reordered_rows").unwrap() > 0);
}

fn arb_event() -> impl Strategy<Value = IoEvent> {
    (
        0u64..10_000_000_000,
        any::<bool>(),
        0u64..CAP / 2,
        1u64..4096,
        0usize..3,
        0u32..1000,
        proptest::option::of((0u64..1_000_000, 0u64..1_000_000, 0u64..1_000_000, 0u64..50_000_000)),
    )
        .prop_map(|(ts, read, lba, len, tag, thread, lat)| {
            let op = if read { Op::Read } else { Op::Write };
            let mut e = IoEvent::new(ts, op, lba, len, [IoTag::Od, IoTag::Om, IoTag::Fsm][tag], thread);
            if let Some((v, f, b, d)) = lat {
                e.lat = LayerLatency {
                    vfs_ns: v,
                    fs_ns: f,
                    block_ns: b,
                    device_ns: d,
                };
                e.complete_ns = ts + e.lat.total_ns();
            }
            e
        })
}

proptest! {
    #[test]
    fn emit_then_parse_is_identity(
        events in proptest::collection::vec(arb_event(), 0..200),
        meta in proptest::collection::btree_map("[a-z_]{1,8}", "[A-Za-z0-9.:_-]{0,12}", 0..4),
    ) {
        let t = Trace::from_events(events, CAP, meta).unwrap();
        let back = Trace::parse_str(&t.emit()).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(back.emit(), t.emit());
    }
}

#[test]
fn blkparse_event_count_matches_queue_lines() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut text = String::new();
    let mut seq = 0;
    for i in 0..1000u64 {
        seq += 1;
        let ts = i as f64 * 0.000_01;
        let rw = ["R", "W", "WS", "RA", "FWS", "D"][rng.random_range(0..6)];
        let action = ["Q", "C", "G", "I", "D", "M"][rng.random_range(0..6)];
        let sector = rng.random_range(0..1_000_000u64);
        let len = rng.random_range(1..256u64) * 8;
        let _ = writeln!(text, "  8,0    {}  {seq:>6}  {ts:.9}  {}  {action} {rw} {sector} + {len} [fio]", i % 4, 4000 + i % 7);
    }
    // text-scan oracle: Q actions on plain read/write requests
    let expected = text
        .lines()
        .filter(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            f.get(5) == Some(&"Q") && f.get(6).is_some_and(|rw| !rw.contains('F') && !rw.contains('D') && (rw.contains('R') || rw.contains('W')))
        })
        .count();
    let t = parse_blkparse_str(&text, 1 << 24, &Default::default()).unwrap();
    assert_eq!(t.len(), expected);
}

#[test]
fn blkparse_file_with_tag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.txt");
    let tags = dir.path().join("tags.txt");
    std::fs::write(
        &trace,
        "8,0 3 1 0.000100000 1234 Q W 2048 + 8 [worker]\n\
         8,0 3 2 0.000200000 1234 Q R 4096 + 16 [worker]\n\
         8,0 3 3 0.000500000 0 C W 2048 + 8 [0]\n",
    )
    .unwrap();
    std::fs::write(&tags, "2 FSM\n").unwrap();
    let t = parse_blkparse_text(&trace, 1 << 20, Some(&tags)).unwrap();
    assert_eq!(t.len(), 2);
    let w = &t.events()[0];
    assert_eq!((w.submit_ns, w.op, w.lba, w.len, w.tag), (100_000, Op::Write, 2048, 8, IoTag::Od));
    assert_eq!(w.complete_ns, 500_000);
    assert_eq!(t.events()[1].tag, IoTag::Fsm);
}
