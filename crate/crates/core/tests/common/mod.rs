// SPDX-License-Identifier: Apache-2.0

//! Brute-force oracles for the analysis routines and the LRU cache.

use std::collections::BTreeMap;

use iostack::analysis::{build_heatmap, compute_cdf, detect_chains, Filter, META_NTS};
use iostack::cache::LruCache;
use iostack::trace::{IoEvent, IoTag, Op, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_trace(rng: &mut ChaCha8Rng) -> Trace {
    let cap: u64 = rng.random_range(1_000..2_000_000);
    let n = rng.random_range(1..300);
    let mut events = Vec::with_capacity(n);
    let mut ts = 0u64;
    let mut next_lba = 0u64;
    for _ in 0..n {
        ts += rng.random_range(0..3) * rng.random_range(0..50_000);
        let len = [1, 8, 8, 32, 256, 512, rng.random_range(1..600)][rng.random_range(0..7)].min(cap);
        let lba = if rng.random_bool(0.6) && next_lba + len <= cap {
            next_lba
        } else {
            rng.random_range(0..=cap - len)
        };
        next_lba = lba + len;
        let op = if rng.random_bool(0.7) { Op::Write } else { Op::Read };
        let tag = [IoTag::Od, IoTag::Od, IoTag::Om, IoTag::Fsm][rng.random_range(0..4)];
        events.push(IoEvent::new(ts, op, lba, len, tag, rng.random_range(0..4)));
    }
    let mut meta = BTreeMap::new();
    meta.insert(META_NTS.to_string(), (4096u64 << rng.random_range(0..10)).to_string());
    Trace::from_events(events, cap, meta).unwrap()
}

fn random_filter(rng: &mut ChaCha8Rng) -> (Option<IoTag>, Option<Op>) {
    let tag = [None, Some(IoTag::Od), Some(IoTag::Om), Some(IoTag::Fsm)][rng.random_range(0..4)];
    let op = [None, Some(Op::Read), Some(Op::Write)][rng.random_range(0..3)];
    (tag, op)
}

fn keep(e: &IoEvent, tag: Option<IoTag>, op: Option<Op>) -> bool {
    tag.is_none_or(|t| e.tag == t) && op.is_none_or(|o| e.op == o)
}

/// Restarts a scan at every chain boundary and walks forward to its end.
fn chains_oracle(t: &Trace, tag: Option<IoTag>, op: Option<Op>) -> Vec<u64> {
    let ev: Vec<&IoEvent> = t.events().iter().filter(|e| keep(e, tag, op)).collect();
    let mut out = Vec::new();
    for i in 0..ev.len() {
        let starts = i == 0 || ev[i - 1].lba + ev[i - 1].len != ev[i].lba;
        if !starts {
            continue;
        }
        let mut bytes = ev[i].len * 512;
        let mut j = i + 1;
        while j < ev.len() && ev[j - 1].lba + ev[j - 1].len == ev[j].lba {
            bytes += ev[j].len * 512;
            j += 1;
        }
        out.push(bytes);
    }
    out
}

/// `detect_chains` against a rescan from every boundary.
pub fn chains_suite(runs: u64, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for run in 0..runs {
        let t = random_trace(&mut rng);
        let (tag, op) = random_filter(&mut rng);
        let got = detect_chains(&t, tag, op);
        let want = chains_oracle(&t, tag, op);
        check!(got.chains == want, "run {run}: chains differ");
        let nts: u64 = t.meta["nts_bytes"].parse().unwrap();
        let long = want.iter().filter(|&&c| c >= nts).count();
        let count_frac = if want.is_empty() { 0.0 } else { long as f64 / want.len() as f64 };
        check!(got.count_ge_nts_fraction == count_frac, "run {run}: count fraction");
        let total: u64 = want.iter().sum();
        let long_bytes: u64 = want.iter().filter(|&&c| c >= nts).sum();
        let byte_frac = if total == 0 { 0.0 } else { long_bytes as f64 / total as f64 };
        check!(got.byte_ge_nts_fraction == byte_frac, "run {run}: byte fraction");
        let traced: u64 = t.events().iter().filter(|e| keep(e, tag, op)).map(|e| e.bytes()).sum();
        check!(got.total_bytes() == traced, "run {run}: chain bytes {} vs {traced}", got.total_bytes());
    }
    Ok(())
}

/// `compute_cdf` against sort-and-count.
pub fn cdf_suite(runs: u64, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for run in 0..runs {
        let t = random_trace(&mut rng);
        let (tag, op) = random_filter(&mut rng);
        let sizes: Vec<u64> = t.events().iter().filter(|e| keep(e, tag, op)).map(|e| e.len * 512).collect();
        let got = compute_cdf(&t, Filter { tag, op });
        if sizes.is_empty() {
            check!(got.is_err(), "run {run}: empty selection accepted");
            continue;
        }
        let mut distinct = sizes.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let n = sizes.len() as f64;
        let want: Vec<(u64, f64)> = distinct
            .iter()
            .map(|&s| (s, sizes.iter().filter(|&&x| x <= s).count() as f64 / n))
            .collect();
        let got = got.map_err(|e| format!("run {run}: {e}"))?;
        check!(got.points == want, "run {run}: cdf points differ");
        check!(got.points.windows(2).all(|w| w[0].1 <= w[1].1), "run {run}: cdf decreases");
        check!(got.points.last().map(|p| p.1) == Some(1.0), "run {run}: cdf does not end at 1");
    }
    Ok(())
}

/// `build_heatmap` against per-cell counting.
pub fn heatmap_suite(runs: u64, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for run in 0..runs {
        let t = random_trace(&mut rng);
        let tb = rng.random_range(1..12);
        let lb = rng.random_range(1..12);
        let h = build_heatmap(&t, tb, lb).map_err(|e| format!("run {run}: {e}"))?;
        let ev = t.events();
        let start = ev.iter().map(|e| e.submit_ns).min().unwrap_or(0);
        let end = ev.iter().map(|e| e.submit_ns).max().unwrap_or(0);
        let tw = (end - start + 1).div_ceil(tb as u64);
        let lw = t.capacity_sectors().div_ceil(lb as u64);
        for ti in 0..tb {
            for li in 0..lb {
                let t_lo = start + ti as u64 * tw;
                let t_hi = if ti + 1 == tb { u64::MAX } else { t_lo + tw };
                let l_lo = li as u64 * lw;
                let l_hi = if li + 1 == lb { u64::MAX } else { l_lo + lw };
                let want = ev
                    .iter()
                    .filter(|e| e.submit_ns >= t_lo && e.submit_ns < t_hi && e.lba >= l_lo && e.lba < l_hi)
                    .count() as u64;
                check!(h.counts[ti][li] == want, "run {run}: cell ({ti},{li}) {} vs {want}", h.counts[ti][li]);
            }
        }
        check!(h.total() == ev.len() as u64, "run {run}: matrix sum");
    }
    Ok(())
}

/// Recency list with the most recent entry last.
struct ListLru {
    cap: usize,
    items: Vec<(u32, u32)>,
    hits: u64,
    misses: u64,
    evictions: u64,
}

impl ListLru {
    fn get(&mut self, k: u32) -> Option<u32> {
        match self.items.iter().position(|&(key, _)| key == k) {
            Some(i) => {
                self.hits += 1;
                let item = self.items.remove(i);
                self.items.push(item);
                Some(item.1)
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    fn insert(&mut self, k: u32, v: u32) -> Option<(u32, u32)> {
        if self.cap == 0 {
            return None;
        }
        if let Some(i) = self.items.iter().position(|&(key, _)| key == k) {
            self.items.remove(i);
            self.items.push((k, v));
            return None;
        }
        let evicted = if self.items.len() >= self.cap {
            self.evictions += 1;
            Some(self.items.remove(0))
        } else {
            None
        };
        self.items.push((k, v));
        evicted
    }

    fn remove(&mut self, k: u32) -> Option<u32> {
        let i = self.items.iter().position(|&(key, _)| key == k)?;
        Some(self.items.remove(i).1)
    }
}

/// `LruCache` counters and recency order against a move-to-back list.
pub fn lru_suite(runs: u64, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for run in 0..runs {
        let cap = rng.random_range(0..20);
        let keys = rng.random_range(1..40);
        let mut lru: LruCache<u32, u32> = LruCache::new(cap);
        let mut oracle = ListLru {
            cap,
            items: Vec::new(),
            hits: 0,
            misses: 0,
            evictions: 0,
        };
        for _ in 0..rng.random_range(1..400) {
            let k = rng.random_range(0..keys);
            match rng.random_range(0..10) {
                0..=5 => check!(lru.get(&k).copied() == oracle.get(k), "run {run}: get {k}"),
                6..=8 => {
                    let v = rng.random();
                    check!(lru.insert(k, v) == oracle.insert(k, v), "run {run}: insert {k}");
                }
                _ => check!(lru.remove(&k) == oracle.remove(k), "run {run}: remove {k}"),
            }
        }
        let c = lru.counters();
        check!(
            (c.hits, c.misses, c.evictions) == (oracle.hits, oracle.misses, oracle.evictions),
            "run {run}: counters {c:?}"
        );
        let order: Vec<u32> = lru.keys_lru().copied().collect();
        let want: Vec<u32> = oracle.items.iter().map(|&(k, _)| k).collect();
        check!(order == want, "run {run}: recency order");
    }
    Ok(())
}
