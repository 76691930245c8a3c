// SPDX-License-Identifier: Apache-2.0

//! Trace metrics: sequential chains, IO-size CDFs, LBA heatmaps and
//! per-layer latency shares.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::device::DEFAULT_NTS_BYTES;
use crate::error::{Error, Result};
use crate::trace::{IoEvent, IoTag, Op, Trace};

pub use crate::block::{coalesce_stats, CoalesceStats};

pub const META_NTS: &str = "nts_bytes";

/// Which events an analysis looks at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub tag: Option<IoTag>,
    pub op: Option<Op>,
}

impl Filter {
    pub fn tag(tag: IoTag) -> Self {
        Filter {
            tag: Some(tag),
            op: None,
        }
    }

    pub fn matches(&self, e: &IoEvent) -> bool {
        self.tag.is_none_or(|t| t == e.tag) && self.op.is_none_or(|o| o == e.op)
    }

    pub fn label(&self) -> String {
        format!(
            "{}-{}",
            self.tag.map_or("all", IoTag::as_str),
            self.op.map_or("rw", |o| if o == Op::Read { "read" } else { "write" })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    /// Chain lengths in bytes, in the order the chains started.
    pub chains: Vec<u64>,
    pub nts_bytes: u64,
    pub count_ge_nts_fraction: f64,
    pub byte_ge_nts_fraction: f64,
}

impl ChainStats {
    pub fn total_bytes(&self) -> u64 {
        self.chains.iter().sum()
    }

    pub fn mean_bytes(&self) -> f64 {
        if self.chains.is_empty() {
            0.0
        } else {
            self.total_bytes() as f64 / self.chains.len() as f64
        }
    }
}

fn nts_of(trace: &Trace) -> u64 {
    trace.meta_u64(META_NTS).unwrap_or(DEFAULT_NTS_BYTES)
}

/// Sequential chains over the filtered events in submission order.
///
/// A chain continues while each IO starts at the previous IO's end LBA.
pub fn detect_chains(trace: &Trace, tag: Option<IoTag>, op: Option<Op>) -> ChainStats {
    let filter = Filter { tag, op };
    chains_over(trace.events().iter().filter(|e| filter.matches(e)), nts_of(trace))
}

/// Same as [`detect_chains`] but ordered by completion time.
pub fn detect_chains_completion_order(trace: &Trace, tag: Option<IoTag>, op: Option<Op>) -> ChainStats {
    let filter = Filter { tag, op };
    let mut events: Vec<&IoEvent> = trace.events().iter().filter(|e| filter.matches(e)).collect();
    events.sort_by_key(|e| e.complete_ns);
    chains_over(events.into_iter(), nts_of(trace))
}

fn chains_over<'a>(events: impl Iterator<Item = &'a IoEvent>, nts: u64) -> ChainStats {
    let mut chains = Vec::new();
    let mut end: Option<u64> = None;
    for e in events {
        match (end, chains.last_mut()) {
            (Some(prev_end), Some(last)) if prev_end == e.lba => *last += e.bytes(),
            _ => chains.push(e.bytes()),
        }
        end = Some(e.end_lba());
    }
    let total: u64 = chains.iter().sum();
    let long: Vec<u64> = chains.iter().copied().filter(|&c| c >= nts).collect();
    ChainStats {
        count_ge_nts_fraction: ratio(long.len() as f64, chains.len() as f64),
        byte_ge_nts_fraction: ratio(long.iter().sum::<u64>() as f64, total as f64),
        chains,
        nts_bytes: nts,
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeCdf {
    pub filter: Filter,
    /// `(size_bytes, cumulative_fraction)`, sizes ascending.
    pub points: Vec<(u64, f64)>,
}

impl SizeCdf {
    /// Smallest size whose cumulative fraction reaches `q`.
    pub fn quantile(&self, q: f64) -> u64 {
        self.points
            .iter()
            .find(|&&(_, f)| f >= q)
            .or(self.points.last())
            .map_or(0, |&(s, _)| s)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("size_bytes,cumulative_fraction\n");
        for (s, f) in &self.points {
            let _ = writeln!(out, "{s},{f:.6}");
        }
        out
    }
}

/// Empirical CDF of IO sizes.
pub fn compute_cdf(trace: &Trace, filter: Filter) -> Result<SizeCdf> {
    let mut sizes: Vec<u64> = trace
        .events()
        .iter()
        .filter(|e| filter.matches(e))
        .map(IoEvent::bytes)
        .collect();
    if sizes.is_empty() {
        return Err(Error::Analysis(format!("no events match {}", filter.label())));
    }
    sizes.sort_unstable();
    let n = sizes.len() as f64;
    let mut points: Vec<(u64, f64)> = Vec::new();
    for (i, &s) in sizes.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match points.last_mut() {
            Some(last) if last.0 == s => last.1 = frac,
            _ => points.push((s, frac)),
        }
    }
    if let Some(last) = points.last_mut() {
        last.1 = 1.0;
    }
    Ok(SizeCdf { filter, points })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heatmap {
    /// `counts[time_bin][lba_bin]`.
    pub counts: Vec<Vec<u64>>,
    pub start_ns: u64,
    pub time_bin_ns: u64,
    pub lba_bin_sectors: u64,
}

impl Heatmap {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Maximal runs of adjacent non-empty LBA bins, summed over time.
    pub fn lba_bands(&self) -> usize {
        let lba_bins = self.counts.first().map_or(0, Vec::len);
        let occupied: Vec<bool> = (0..lba_bins)
            .map(|j| self.counts.iter().any(|row| row[j] > 0))
            .collect();
        occupied
            .iter()
            .enumerate()
            .filter(|&(j, &o)| o && (j == 0 || !occupied[j - 1]))
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_bin,lba_bin,count\n");
        for (t, row) in self.counts.iter().enumerate() {
            for (l, c) in row.iter().enumerate() {
                if *c > 0 {
                    let _ = writeln!(out, "{t},{l},{c}");
                }
            }
        }
        out
    }
}

/// Counts events into `time_bins × lba_bins` cells by submit time and LBA.
pub fn build_heatmap(trace: &Trace, time_bins: usize, lba_bins: usize) -> Result<Heatmap> {
    build_heatmap_filtered(trace, time_bins, lba_bins, Filter::default())
}

pub fn build_heatmap_filtered(
    trace: &Trace,
    time_bins: usize,
    lba_bins: usize,
    filter: Filter,
) -> Result<Heatmap> {
    if time_bins == 0 || lba_bins == 0 {
        return Err(Error::Analysis("heatmap bins must be >= 1".into()));
    }
    let events: Vec<&IoEvent> = trace.events().iter().filter(|e| filter.matches(e)).collect();
    let start = events.iter().map(|e| e.submit_ns).min().unwrap_or(0);
    let end = events.iter().map(|e| e.submit_ns).max().unwrap_or(0);
    let time_bin_ns = (end - start + 1).div_ceil(time_bins as u64);
    let lba_bin_sectors = trace.capacity_sectors().max(1).div_ceil(lba_bins as u64);
    let mut counts = vec![vec![0u64; lba_bins]; time_bins];
    for e in events {
        let t = (((e.submit_ns - start) / time_bin_ns) as usize).min(time_bins - 1);
        let l = ((e.lba / lba_bin_sectors) as usize).min(lba_bins - 1);
        counts[t][l] += 1;
    }
    Ok(Heatmap {
        counts,
        start_ns: start,
        time_bin_ns,
        lba_bin_sectors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerBreakdown {
    pub vfs_us: f64,
    pub fs_us: f64,
    pub block_us: f64,
    pub device_us: f64,
    pub vfs_share: f64,
    pub fs_share: f64,
    pub block_share: f64,
    pub device_share: f64,
}

impl LayerBreakdown {
    /// Share of time spent above the device.
    pub fn kernel_share(&self) -> f64 {
        self.vfs_share + self.fs_share + self.block_share
    }

    pub fn total_us(&self) -> f64 {
        self.vfs_us + self.fs_us + self.block_us + self.device_us
    }
}

/// Per-layer totals and shares over a replayed trace.
pub fn layer_breakdown(trace: &Trace) -> Result<LayerBreakdown> {
    if !trace.is_replayed() {
        return Err(Error::Analysis("trace has not been replayed".into()));
    }
    let mut sums = [0u128; 4];
    for e in trace.events() {
        sums[0] += u128::from(e.lat.vfs_ns);
        sums[1] += u128::from(e.lat.fs_ns);
        sums[2] += u128::from(e.lat.block_ns);
        sums[3] += u128::from(e.lat.device_ns);
    }
    let total: u128 = sums.iter().sum();
    let share = |x: u128| x as f64 / total as f64;
    let us = |x: u128| x as f64 / 1000.0;
    Ok(LayerBreakdown {
        vfs_us: us(sums[0]),
        fs_us: us(sums[1]),
        block_us: us(sums[2]),
        device_us: us(sums[3]),
        vfs_share: share(sums[0]),
        fs_share: share(sums[1]),
        block_share: share(sums[2]),
        device_share: share(sums[3]),
    })
}

/// Per-tag byte, IO and latency totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagTotals {
    pub count: u64,
    pub bytes: u64,
    pub latency_ns: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerTag {
    pub od: TagTotals,
    pub om: TagTotals,
    pub fsm: TagTotals,
}

impl PerTag {
    pub fn get(&self, tag: IoTag) -> &TagTotals {
        match tag {
            IoTag::Od => &self.od,
            IoTag::Om => &self.om,
            IoTag::Fsm => &self.fsm,
        }
    }

    fn get_mut(&mut self, tag: IoTag) -> &mut TagTotals {
        match tag {
            IoTag::Od => &mut self.od,
            IoTag::Om => &mut self.om,
            IoTag::Fsm => &mut self.fsm,
        }
    }

    pub fn latency_ns(&self) -> u64 {
        self.od.latency_ns + self.om.latency_ns + self.fsm.latency_ns
    }
}

pub fn per_tag(trace: &Trace) -> PerTag {
    let mut out = PerTag::default();
    for e in trace.events() {
        let t = out.get_mut(e.tag);
        t.count += 1;
        t.bytes += e.bytes();
        t.latency_ns += e.latency_ns();
    }
    out
}
