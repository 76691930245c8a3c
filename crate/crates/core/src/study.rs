// SPDX-License-Identifier: Apache-2.0

//! Canned experiments and the calibration report built from them.

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::Result;
use crate::run::{compare, run, run_parallel, saturation_threads, throughput_point, ComparisonReport, RunResult,
    RunSpec, ThroughputPoint};
use crate::workload::{WorkloadKind, WorkloadSpec};

pub const OS_STACK: &str = "os-fs:ag-extent";
pub const SIMPLE_STACK: &str = "os-fs:simple-extent";
pub const OD_STACK: &str = "object-drive";
pub const RAW_STACK: &str = "raw-block";

fn spec_for(cfg: &SimConfig, workload: WorkloadSpec, stack: &str, device: &str) -> RunSpec {
    RunSpec {
        workload,
        cluster: cfg.cluster,
        stack: stack.to_string(),
        device: device.to_string(),
        osd_index: cfg.osd_index,
        replay: cfg.replay,
    }
}

/// The configured workload with a different kind and its default key skew.
pub fn workload_of(cfg: &SimConfig, kind: WorkloadKind) -> WorkloadSpec {
    let mut w = cfg.workload.clone();
    if w.kind != kind {
        w.key_distribution = kind.default_distribution();
    }
    w.kind = kind;
    w
}

/// Runs the configured workload on two stacks and compares them.
pub fn compare_cell(cfg: &SimConfig, workload: &WorkloadSpec, os_stack: &str, od_stack: &str, device: &str)
    -> Result<ComparisonReport> {
    let os = run(&spec_for(cfg, workload.clone(), os_stack, device), cfg)?;
    let od = run(&spec_for(cfg, workload.clone(), od_stack, device), cfg)?;
    compare(&os, &od)
}

/// Filesystem vs object drive for each workload mix on each device.
pub fn savings_cells(cfg: &SimConfig, devices: &[&str], jobs: usize) -> Result<Vec<ComparisonReport>> {
    let cells: Vec<(WorkloadKind, String)> = WorkloadKind::TABLE
        .iter()
        .flat_map(|&k| devices.iter().map(move |d| (k, d.to_string())))
        .collect();
    run_parallel(cells, jobs, |(k, d)| compare_cell(cfg, &workload_of(cfg, k), OS_STACK, OD_STACK, &d))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumStudy {
    pub ag: RunResult,
    pub simple: RunResult,
    /// simple-extent makespan over ag-extent makespan.
    pub time_ratio: f64,
    pub fsm_count_ratio: f64,
}

pub fn enumeration_study(cfg: &SimConfig) -> Result<EnumStudy> {
    let w = workload_of(cfg, WorkloadKind::Enumerate);
    let dev = cfg.study.enum_device.as_str();
    let ag = run(&spec_for(cfg, w.clone(), OS_STACK, dev), cfg)?;
    let simple = run(&spec_for(cfg, w, SIMPLE_STACK, dev), cfg)?;
    let time_ratio = simple.makespan_us / ag.makespan_us;
    let fsm_count_ratio = simple.per_tag.fsm.count as f64 / ag.per_tag.fsm.count.max(1) as f64;
    Ok(EnumStudy {
        ag,
        simple,
        time_ratio,
        fsm_count_ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainFractions {
    pub ag: f64,
    pub simple: f64,
    pub od: f64,
}

/// Fraction of object-data chains at least NTS long for W-O on each stack.
pub fn chain_study(cfg: &SimConfig, jobs: usize) -> Result<ChainFractions> {
    let mut w = workload_of(cfg, WorkloadKind::WriteOnly);
    w.object_size = cfg.study.chain_object_size;
    w.object_count = cfg.study.chain_object_count;
    let dev = cfg.study.chain_device.clone();
    let stacks = vec![OS_STACK, SIMPLE_STACK, OD_STACK];
    let res = run_parallel(stacks, jobs, |s| {
        run(&spec_for(cfg, w.clone(), s, &dev), cfg).map(|r| r.analysis.chains_od.count_ge_nts_fraction)
    });
    let mut it = res.into_iter();
    let mut next = || it.next().expect("three stacks");
    Ok(ChainFractions {
        ag: next()?,
        simple: next()?,
        od: next()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputCurve {
    pub stack: String,
    pub io_bytes: u64,
    pub points: Vec<ThroughputPoint>,
}

impl ThroughputCurve {
    pub fn saturation_threads(&self, fraction: f64) -> Option<u32> {
        saturation_threads(&self.points, fraction)
    }

    pub fn at(&self, threads: u32) -> Option<&ThroughputPoint> {
        self.points.iter().find(|p| p.threads == threads)
    }
}

/// Append throughput across thread counts for raw and filesystem stacks.
pub fn duic_study(cfg: &SimConfig, jobs: usize) -> Result<Vec<ThroughputCurve>> {
    let st = &cfg.study;
    let dev = st.reference_device.as_str();
    let mut cells = Vec::new();
    for stack in [RAW_STACK, OS_STACK] {
        for &io in &st.io_sizes {
            for &t in &st.thread_counts {
                cells.push((stack, io, t));
            }
        }
    }
    let points = run_parallel(cells.clone(), jobs, |(s, io, t)| {
        throughput_point(s, dev, io, t, st.ios_per_thread, cfg)
    });
    let mut curves: Vec<ThroughputCurve> = Vec::new();
    for ((stack, io, _), p) in cells.into_iter().zip(points) {
        let p = p?;
        match curves.last_mut() {
            Some(c) if c.stack == stack && c.io_bytes == io => c.points.push(p),
            _ => curves.push(ThroughputCurve {
                stack: stack.to_string(),
                io_bytes: io,
                points: vec![p],
            }),
        }
    }
    Ok(curves)
}

/// Kernel share of the reference sequential-write run on the filesystem stack.
pub fn reference_kernel_share(cfg: &SimConfig) -> Result<f64> {
    let st = &cfg.study;
    throughput_point(OS_STACK, &st.reference_device, st.reference_io_bytes, st.reference_threads,
        st.ios_per_thread, cfg)
    .map(|p| p.kernel_share)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    pub value: f64,
    pub low: f64,
    pub high: f64,
    pub hit: bool,
}

impl Target {
    fn band(name: impl Into<String>, value: f64, low: f64, high: f64) -> Self {
        Target {
            name: name.into(),
            value,
            low,
            high,
            hit: value >= low && value <= high,
        }
    }

    fn flag(name: impl Into<String>, ok: bool) -> Self {
        let v = if ok { 1.0 } else { 0.0 };
        Target::band(name, v, 1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub targets: Vec<Target>,
    pub savings: Vec<ComparisonReport>,
    pub curves: Vec<ThroughputCurve>,
    pub chains: ChainFractions,
    pub enum_time_ratio: f64,
    pub enum_fsm_ratio: f64,
}

impl CalibrationReport {
    pub fn all_hit(&self) -> bool {
        self.targets.iter().all(|t| t.hit)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.targets {
            let mark = if t.hit { "hit " } else { "MISS" };
            out.push_str(&format!("{mark} {:<40} {:>10.4}  [{}, {}]\n", t.name, t.value, t.low, t.high));
        }
        out
    }
}

/// DUIC ordering checks over a set of curves, as (name, ok) pairs.
pub fn duic_checks(curves: &[ThroughputCurve], fraction: f64) -> Vec<(String, bool)> {
    let find = |s: &str, io: u64| curves.iter().find(|c| c.stack == s && c.io_bytes == io);
    let mut ios: Vec<u64> = curves.iter().map(|c| c.io_bytes).collect();
    ios.sort_unstable();
    ios.dedup();
    let mut out = Vec::new();
    for &io in &ios {
        let (Some(raw), Some(fs)) = (find(RAW_STACK, io), find(OS_STACK, io)) else { continue };
        let dominates = raw
            .points
            .iter()
            .all(|p| fs.at(p.threads).is_none_or(|q| p.throughput_mbps >= q.throughput_mbps));
        out.push((format!("raw >= fs at every T ({} KiB)", io / 1024), dominates));
        let later = match (fs.saturation_threads(fraction), raw.saturation_threads(fraction)) {
            (Some(f), Some(r)) => f > r,
            _ => false,
        };
        out.push((format!("fs saturates after raw ({} KiB)", io / 1024), later));
    }
    if let (Some(&small), Some(&large)) = (ios.first(), ios.last()) {
        if small != large {
            let sat = |io| find(OS_STACK, io).and_then(|c| c.saturation_threads(fraction));
            let ok = matches!((sat(large), sat(small)), (Some(l), Some(s)) if l < s);
            out.push((format!("{} KiB saturates before {} KiB", large / 1024, small / 1024), ok));
        }
    }
    out
}

pub fn calibrate(cfg: &SimConfig, jobs: usize) -> Result<CalibrationReport> {
    let mut targets = Vec::new();
    let share = reference_kernel_share(cfg)?;
    targets.push(Target::band("kernel share (reference write)", share, 0.35, 0.40));

    let savings = savings_cells(cfg, &["hdd", "ssd"], jobs)?;
    for c in &savings {
        targets.push(Target::band(format!("savings {} {}", c.workload, c.device), c.savings_fraction, 0.20, 0.38));
    }

    let curves = duic_study(cfg, jobs)?;
    for (name, ok) in duic_checks(&curves, cfg.study.saturation_fraction) {
        targets.push(Target::flag(name, ok));
    }

    let e = enumeration_study(cfg)?;
    targets.push(Target::band("enum time ratio simple/ag", e.time_ratio, 2.0, 4.0));
    targets.push(Target::band("enum FSM count ratio simple/ag", e.fsm_count_ratio, 5.0, f64::INFINITY));

    let chains = chain_study(cfg, jobs)?;
    targets.push(Target::band("chains >= NTS, ag-extent", chains.ag, 0.75, 0.85));
    targets.push(Target::band("chains >= NTS, simple-extent", chains.simple, 0.25, 0.35));
    targets.push(Target::flag("chains ag > simple", chains.ag > chains.simple));
    targets.push(Target::flag("chains od >= ag", chains.od >= chains.ag));

    Ok(CalibrationReport {
        targets,
        savings,
        curves,
        chains,
        enum_time_ratio: e.time_ratio,
        enum_fsm_ratio: e.fsm_count_ratio,
    })
}
