// SPDX-License-Identifier: Apache-2.0

//! End-to-end runs: workload, stack translation, device replay, analysis.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    coalesce_stats, compute_cdf, detect_chains, layer_breakdown, per_tag, ChainStats, CoalesceStats, Filter,
    LayerBreakdown, PerTag, SizeCdf, META_NTS,
};
use crate::cache::CacheCounters;
use crate::config::SimConfig;
use crate::device::DeviceRegistry;
use crate::error::{Error, Result};
use crate::replay::{replay, ReplayMode, ReplayOptions};
use crate::stack::StackRegistry;
use crate::trace::{IoTag, Trace};
use crate::workload::{
    generate_workload, load_phase, requests_for_osd, ChunkRequest, ClusterSpec, RequestKind, WorkloadSpec,
};

/// One cell: a workload through one stack onto one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub workload: WorkloadSpec,
    pub cluster: ClusterSpec,
    pub stack: String,
    pub device: String,
    pub osd_index: u32,
    pub replay: ReplayMode,
}

impl RunSpec {
    pub fn from_config(cfg: &SimConfig) -> Self {
        RunSpec {
            workload: cfg.workload.clone(),
            cluster: cfg.cluster,
            stack: cfg.stack_name.clone(),
            device: cfg.device_name.clone(),
            osd_index: cfg.osd_index,
            replay: cfg.replay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub chains_od: ChainStats,
    pub chains_all: ChainStats,
    pub cdf_all: Option<SizeCdf>,
    pub cdf_od_read: Option<SizeCdf>,
    pub cdf_od_write: Option<SizeCdf>,
    pub layers: LayerBreakdown,
    pub dcache: CacheCounters,
    pub pcache: CacheCounters,
    pub coalesce: CoalesceStats,
    pub lookup_misses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub stack: String,
    pub device: String,
    pub workload: String,
    pub seed: u64,
    pub object_size: u64,
    pub object_count: u64,
    pub thread_count: u32,
    /// Sum of per-IO end-to-end latencies.
    pub total_time_us: f64,
    /// First submission to last completion.
    pub makespan_us: f64,
    pub device_busy_us: f64,
    pub throughput_mbps: f64,
    pub per_tag: PerTag,
    pub fsm_bytes: u64,
    pub analysis: Analysis,
    #[serde(skip)]
    pub trace: Trace,
}

/// Requests seen by the selected OSD for the load and measured phases.
pub fn requests(spec: &RunSpec) -> Result<(Vec<ChunkRequest>, Vec<ChunkRequest>)> {
    let ops = generate_workload(&spec.workload, &spec.cluster)?;
    let load = requests_for_osd(&load_phase(&spec.workload), &spec.cluster, spec.osd_index)?;
    let measured = requests_for_osd(&ops, &spec.cluster, spec.osd_index)?;
    Ok((load, measured))
}

pub fn run(spec: &RunSpec, cfg: &SimConfig) -> Result<RunResult> {
    let (load, measured) = requests(spec)?;
    let mut meta = BTreeMap::new();
    meta.insert("workload".to_string(), spec.workload.kind.to_string());
    meta.insert("seed".to_string(), spec.workload.seed.to_string());
    meta.insert("objects".to_string(), spec.workload.object_count.to_string());
    meta.insert("object_size".to_string(), spec.workload.object_size.to_string());
    meta.insert("threads".to_string(), spec.workload.thread_count.to_string());
    meta.insert("distribution".to_string(), spec.workload.key_distribution.to_string());
    meta.insert("osd".to_string(), spec.osd_index.to_string());
    let mut result = run_requests(&spec.stack, &spec.device, &load, &measured, cfg, spec.replay, meta)?;
    result.workload = spec.workload.kind.to_string();
    result.seed = spec.workload.seed;
    result.object_size = spec.workload.object_size;
    result.object_count = spec.workload.object_count;
    result.thread_count = spec.workload.thread_count;
    Ok(result)
}

/// Preloads `load`, translates `measured`, replays and analyses.
pub fn run_requests(
    stack_name: &str,
    device_name: &str,
    load: &[ChunkRequest],
    measured: &[ChunkRequest],
    cfg: &SimConfig,
    mode: ReplayMode,
    meta: BTreeMap<String, String>,
) -> Result<RunResult> {
    let mut stack = StackRegistry::default().create(stack_name, &cfg.stack)?;
    let mut device = DeviceRegistry::default().create(device_name, &cfg.device)?;
    stack.preload(load)?;
    let mut tr = stack.translate(measured)?;
    tr.trace.meta.extend(meta);
    tr.trace.meta.insert(META_NTS.to_string(), device.nts_bytes().to_string());
    let opts = ReplayOptions {
        mode,
        block_contention_ns: Some(stack.block_contention_ns()),
    };
    if tr.trace.is_empty() {
        return Err(Error::InvalidTrace(format!("{stack_name}: workload produced no IO")));
    }
    let (trace, stats) = replay(&tr.trace, device.as_mut(), &opts)?;

    let opt_cdf = |f: Filter| compute_cdf(&trace, f).ok();
    let analysis = Analysis {
        chains_od: detect_chains(&trace, Some(IoTag::Od), None),
        chains_all: detect_chains(&trace, None, None),
        cdf_all: opt_cdf(Filter::default()),
        cdf_od_read: opt_cdf(Filter {
            tag: Some(IoTag::Od),
            op: Some(crate::trace::Op::Read),
        }),
        cdf_od_write: opt_cdf(Filter {
            tag: Some(IoTag::Od),
            op: Some(crate::trace::Op::Write),
        }),
        layers: layer_breakdown(&trace)?,
        dcache: tr.dcache,
        pcache: tr.pcache,
        coalesce: coalesce_stats(tr.raw_count, &tr.raw_per_bio),
        lookup_misses: tr.lookup_misses,
    };
    let tags = per_tag(&trace);
    let makespan_us = stats.makespan_ns as f64 / 1000.0;
    let bytes = trace.total_bytes() as f64;
    Ok(RunResult {
        stack: stack_name.to_string(),
        device: device_name.to_string(),
        workload: trace.meta.get("workload").cloned().unwrap_or_default(),
        seed: trace.meta_u64("seed").unwrap_or(0),
        object_size: 0,
        object_count: 0,
        thread_count: 0,
        total_time_us: tags.latency_ns() as f64 / 1000.0,
        makespan_us,
        device_busy_us: stats.device_busy_ns as f64 / 1000.0,
        throughput_mbps: if makespan_us > 0.0 { bytes / makespan_us } else { 0.0 },
        fsm_bytes: tags.fsm.bytes,
        per_tag: tags,
        analysis,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagShares {
    pub od: f64,
    pub om: f64,
    pub fsm: f64,
}

impl TagShares {
    fn of(t: &PerTag, denom: f64) -> Self {
        let f = |ns: u64| if denom > 0.0 { ns as f64 / 1000.0 / denom } else { 0.0 };
        TagShares {
            od: f(t.od.latency_ns),
            om: f(t.om.latency_ns),
            fsm: f(t.fsm.latency_ns),
        }
    }

    pub fn sum(&self) -> f64 {
        self.od + self.om + self.fsm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagDeltas {
    pub od_us: f64,
    pub om_us: f64,
    pub fsm_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub workload: String,
    pub device: String,
    pub seed: u64,
    pub os_stack: String,
    pub od_stack: String,
    pub os_total_us: f64,
    pub od_total_us: f64,
    pub savings_fraction: f64,
    /// Savings measured on makespan instead of summed IO latency.
    pub makespan_savings_fraction: f64,
    pub tag_deltas: TagDeltas,
    /// Both stacks normalised by the OS stack's total.
    pub os_shares_common: TagShares,
    pub od_shares_common: TagShares,
    /// Each stack normalised by its own total.
    pub os_shares_own: TagShares,
    pub od_shares_own: TagShares,
    pub os: RunResult,
    pub od: RunResult,
}

pub fn compare(os: &RunResult, od: &RunResult) -> Result<ComparisonReport> {
    let same = os.workload == od.workload
        && os.seed == od.seed
        && os.device == od.device
        && os.object_size == od.object_size
        && os.object_count == od.object_count
        && os.thread_count == od.thread_count;
    if !same {
        return Err(Error::Mismatch(format!(
            "results differ in workload/seed/device: {}/{}/{} vs {}/{}/{}",
            os.workload, os.seed, os.device, od.workload, od.seed, od.device
        )));
    }
    let delta = |tag: IoTag| (os.per_tag.get(tag).latency_ns as f64 - od.per_tag.get(tag).latency_ns as f64) / 1000.0;
    let savings = |a: f64, b: f64| if a > 0.0 { 1.0 - b / a } else { 0.0 };
    Ok(ComparisonReport {
        workload: os.workload.clone(),
        device: os.device.clone(),
        seed: os.seed,
        os_stack: os.stack.clone(),
        od_stack: od.stack.clone(),
        os_total_us: os.total_time_us,
        od_total_us: od.total_time_us,
        savings_fraction: savings(os.total_time_us, od.total_time_us),
        makespan_savings_fraction: savings(os.makespan_us, od.makespan_us),
        tag_deltas: TagDeltas {
            od_us: delta(IoTag::Od),
            om_us: delta(IoTag::Om),
            fsm_us: delta(IoTag::Fsm),
        },
        os_shares_common: TagShares::of(&os.per_tag, os.total_time_us),
        od_shares_common: TagShares::of(&od.per_tag, os.total_time_us),
        os_shares_own: TagShares::of(&os.per_tag, os.total_time_us),
        od_shares_own: TagShares::of(&od.per_tag, od.total_time_us),
        os: os.clone(),
        od: od.clone(),
    })
}

impl ComparisonReport {
    /// Stacked per-tag shares, one row per stack and normalisation.
    pub fn shares_csv(&self) -> String {
        let mut out = String::from("stack,normalization,od,om,fsm\n");
        let rows = [
            (&self.os_stack, "common", self.os_shares_common),
            (&self.od_stack, "common", self.od_shares_common),
            (&self.os_stack, "own", self.os_shares_own),
            (&self.od_stack, "own", self.od_shares_own),
        ];
        for (s, n, t) in rows {
            out.push_str(&format!("{s},{n},{:.6},{:.6},{:.6}\n", t.od, t.om, t.fsm));
        }
        out
    }
}

/// Sequential direct writes of `io_bytes` from `threads` threads.
pub fn append_requests(threads: u32, io_bytes: u64, ios_per_thread: u64) -> Vec<ChunkRequest> {
    (0..u64::from(threads) * ios_per_thread)
        .map(|i| ChunkRequest {
            ts_ns: 0,
            kind: RequestKind::Append,
            key: String::new(),
            bytes: io_bytes,
            thread_id: (i % u64::from(threads)) as u32,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputPoint {
    pub threads: u32,
    pub io_bytes: u64,
    pub throughput_mbps: f64,
    pub kernel_share: f64,
}

/// Append throughput of one stack on one device at one thread count.
pub fn throughput_point(
    stack: &str,
    device: &str,
    io_bytes: u64,
    threads: u32,
    ios_per_thread: u64,
    cfg: &SimConfig,
) -> Result<ThroughputPoint> {
    let reqs = append_requests(threads, io_bytes, ios_per_thread);
    let mut meta = BTreeMap::new();
    meta.insert("workload".to_string(), "append".to_string());
    meta.insert("io_bytes".to_string(), io_bytes.to_string());
    meta.insert("threads".to_string(), threads.to_string());
    let r = run_requests(stack, device, &[], &reqs, cfg, ReplayMode::ClosedLoop, meta)?;
    Ok(ThroughputPoint {
        threads,
        io_bytes,
        throughput_mbps: r.throughput_mbps,
        kernel_share: r.analysis.layers.kernel_share(),
    })
}

/// Smallest thread count in `points` reaching `fraction` of the best throughput.
pub fn saturation_threads(points: &[ThroughputPoint], fraction: f64) -> Option<u32> {
    let max = points.iter().map(|p| p.throughput_mbps).fold(0.0, f64::max);
    points
        .iter()
        .filter(|p| p.throughput_mbps >= fraction * max)
        .map(|p| p.threads)
        .min()
}

/// Runs independent jobs on up to `jobs` worker threads, keeping input order.
pub fn run_parallel<T, R, F>(items: Vec<T>, jobs: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let jobs = jobs.max(1);
    if jobs == 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let n = items.len();
    let queue = std::sync::Mutex::new(items.into_iter().enumerate().collect::<Vec<_>>());
    let results = std::sync::Mutex::new((0..n).map(|_| None).collect::<Vec<Option<R>>>());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(n) {
            s.spawn(|| loop {
                let next = queue.lock().expect("queue lock").pop();
                let Some((i, item)) = next else { break };
                let r = f(item);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}
