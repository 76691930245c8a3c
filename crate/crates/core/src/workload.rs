// SPDX-License-Identifier: Apache-2.0

//! Object-level workloads, erasure-coded chunking and per-OSD sharding.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Micros;

pub const PAGE_BYTES: u64 = 4096;
pub const KIB: u64 = 1024;
pub const MIB: u64 = 1024 * 1024;
pub const DEFAULT_ZIPF_THETA: f64 = 0.99;
const KEY_WIDTH: usize = 10;

/// Erasure-coding layout of the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub data_shards: u32,
    pub parity_shards: u32,
    pub num_osds: u32,
    pub num_nodes: u32,
}

impl Default for ClusterSpec {
    /// RS(12,4) over 16 OSDs on 4 nodes.
    fn default() -> Self {
        ClusterSpec {
            data_shards: 12,
            parity_shards: 4,
            num_osds: 16,
            num_nodes: 4,
        }
    }
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        let ClusterSpec {
            data_shards: d,
            parity_shards: p,
            num_osds: osds,
            num_nodes: nodes,
        } = *self;
        if d < 1 {
            return Err(Error::Cluster("data_shards must be >= 1".into()));
        }
        if osds < d + p {
            return Err(Error::Cluster(format!(
                "num_osds ({osds}) must be >= data_shards + parity_shards ({})",
                d + p
            )));
        }
        if nodes < 1 || osds % nodes != 0 {
            return Err(Error::Cluster(format!(
                "num_osds ({osds}) must be divisible by num_nodes ({nodes})"
            )));
        }
        Ok(())
    }
}

/// Exact per-OSD chunk size `O·(D+P) / (D·Di)` in bytes.
pub fn chunk_exact(object_size: u64, cluster: &ClusterSpec) -> Result<Ratio<u128>> {
    cluster.validate()?;
    if object_size == 0 {
        return Err(Error::Workload("object size must be positive".into()));
    }
    let d = u128::from(cluster.data_shards);
    let p = u128::from(cluster.parity_shards);
    let osds = u128::from(cluster.num_osds);
    Ok(Ratio::new(u128::from(object_size) * (d + p), d * osds))
}

/// Ideal contiguous extent per OSD per object, rounded up to a 4 KiB multiple.
pub fn chunk_object(object_size: u64, cluster: &ClusterSpec) -> Result<u64> {
    let exact = chunk_exact(object_size, cluster)?;
    let bytes = exact.ceil().to_integer();
    let page = u128::from(PAGE_BYTES);
    let rounded = bytes.div_ceil(page) * page;
    u64::try_from(rounded).map_err(|_| Error::Workload("chunk size overflows u64".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WorkloadKind {
    #[serde(rename = "w-o")]
    WriteOnly,
    #[serde(rename = "r-o")]
    ReadOnly,
    #[serde(rename = "r-w")]
    ReadWrite,
    #[serde(rename = "enum")]
    Enumerate,
}

impl WorkloadKind {
    pub const TABLE: [WorkloadKind; 3] = [
        WorkloadKind::WriteOnly,
        WorkloadKind::ReadOnly,
        WorkloadKind::ReadWrite,
    ];

    /// PUT:GET percentages; enumeration has none.
    pub fn put_get_ratio(self) -> Option<(u32, u32)> {
        match self {
            WorkloadKind::WriteOnly => Some((95, 5)),
            WorkloadKind::ReadOnly => Some((5, 95)),
            WorkloadKind::ReadWrite => Some((50, 50)),
            WorkloadKind::Enumerate => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadKind::WriteOnly => "w-o",
            WorkloadKind::ReadOnly => "r-o",
            WorkloadKind::ReadWrite => "r-w",
            WorkloadKind::Enumerate => "enum",
        }
    }

    /// Bulk ingestion draws keys uniformly; the read-heavy mixes are skewed.
    pub fn default_distribution(self) -> KeyDistribution {
        match self {
            WorkloadKind::WriteOnly | WorkloadKind::Enumerate => KeyDistribution::Uniform,
            WorkloadKind::ReadOnly | WorkloadKind::ReadWrite => KeyDistribution::Zipfian {
                theta: DEFAULT_ZIPF_THETA,
            },
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkloadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "w-o" | "wo" | "write-only" => Ok(WorkloadKind::WriteOnly),
            "r-o" | "ro" | "read-only" => Ok(WorkloadKind::ReadOnly),
            "r-w" | "rw" | "read-write" => Ok(WorkloadKind::ReadWrite),
            "enum" | "list" | "enumerate" => Ok(WorkloadKind::Enumerate),
            _ => Err(Error::UnknownName {
                kind: "workload",
                name: s.to_string(),
                known: "w-o, r-o, r-w, enum".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KeyDistribution {
    Uniform,
    Zipfian { theta: f64 },
}

impl fmt::Display for KeyDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyDistribution::Uniform => f.write_str("uniform"),
            KeyDistribution::Zipfian { theta } => write!(f, "zipfian:{theta}"),
        }
    }
}

impl FromStr for KeyDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Workload(format!("bad key distribution `{s}`"));
        match s.split_once(':') {
            None if s == "uniform" => Ok(KeyDistribution::Uniform),
            None if s == "zipfian" => Ok(KeyDistribution::Zipfian {
                theta: DEFAULT_ZIPF_THETA,
            }),
            Some(("zipfian", t)) => Ok(KeyDistribution::Zipfian {
                theta: t.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub object_size: u64,
    /// Size of the pre-populated key universe.
    pub object_count: u64,
    /// Operations in the measured phase; defaults to `object_count`.
    pub op_count: Option<u64>,
    pub key_distribution: KeyDistribution,
    pub thread_count: u32,
    pub seed: u64,
    /// Per-thread pause between consecutive operations.
    pub think_time_us: u64,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, object_size: u64, object_count: u64) -> Self {
        WorkloadSpec {
            kind,
            object_size,
            object_count,
            op_count: None,
            key_distribution: kind.default_distribution(),
            thread_count: 1,
            seed: 0,
            think_time_us: 0,
        }
    }

    pub fn ops(&self) -> u64 {
        self.op_count.unwrap_or(self.object_count)
    }

    pub fn put_get_ratio(&self) -> Option<(u32, u32)> {
        self.kind.put_get_ratio()
    }

    pub fn validate(&self) -> Result<()> {
        if self.object_size == 0 {
            return Err(Error::Workload("object_size must be positive".into()));
        }
        if self.object_count == 0 {
            return Err(Error::Workload("object_count must be positive".into()));
        }
        if self.thread_count == 0 {
            return Err(Error::Workload("thread_count must be positive".into()));
        }
        if let KeyDistribution::Zipfian { theta } = self.key_distribution {
            if !(theta > 0.0 && theta < 1.0) {
                return Err(Error::Workload(format!(
                    "zipfian theta must be in (0,1), got {theta}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectOpKind {
    Put,
    Get,
    List,
}

impl ObjectOpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectOpKind::Put => "PUT",
            ObjectOpKind::Get => "GET",
            ObjectOpKind::List => "LIST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectOp {
    pub ts_us: u64,
    pub kind: ObjectOpKind,
    pub key: String,
    pub size: u64,
    pub thread_id: u32,
}

pub fn key_for(index: u64) -> String {
    format!("{index:0KEY_WIDTH$}")
}

pub fn universe_keys(object_count: u64) -> impl Iterator<Item = String> {
    (0..object_count).map(key_for)
}

enum KeySampler {
    Uniform(u64),
    Zipf(Zipf<f64>),
}

impl KeySampler {
    fn new(dist: KeyDistribution, n: u64) -> Result<Self> {
        match dist {
            KeyDistribution::Uniform => Ok(KeySampler::Uniform(n)),
            KeyDistribution::Zipfian { theta } => Zipf::new(n as f64, theta)
                .map(KeySampler::Zipf)
                .map_err(|e| Error::Workload(format!("zipf: {e}"))),
        }
    }

    /// Key index; for zipf, rank 1 maps to key 0.
    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            KeySampler::Uniform(n) => rng.random_range(0..*n),
            KeySampler::Zipf(z) => z.sample(rng) as u64 - 1,
        }
    }
}

/// Generates the measured-phase operation stream.
///
/// Ops go round-robin to threads; each thread's timestamps advance by the
/// think time. The stream depends only on `spec`.
pub fn generate_workload(spec: &WorkloadSpec, cluster: &ClusterSpec) -> Result<Vec<ObjectOp>> {
    cluster.validate()?;
    spec.validate()?;
    let Some((put_pct, _)) = spec.put_get_ratio() else {
        return Ok(vec![ObjectOp {
            ts_us: 0,
            kind: ObjectOpKind::List,
            key: String::new(),
            size: 0,
            thread_id: 0,
        }]);
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sampler = KeySampler::new(spec.key_distribution, spec.object_count)?;
    let threads = u64::from(spec.thread_count);
    let mut ops = Vec::with_capacity(spec.ops() as usize);
    for i in 0..spec.ops() {
        let kind = if rng.random_range(0..100u32) < put_pct {
            ObjectOpKind::Put
        } else {
            ObjectOpKind::Get
        };
        let key = key_for(sampler.sample(&mut rng));
        ops.push(ObjectOp {
            ts_us: (i / threads) * spec.think_time_us,
            kind,
            key,
            size: spec.object_size,
            thread_id: (i % threads) as u32,
        });
    }
    Ok(ops)
}

/// PUTs that populate the key universe before the measured phase.
pub fn load_phase(spec: &WorkloadSpec) -> Vec<ObjectOp> {
    let threads = u64::from(spec.thread_count.max(1));
    universe_keys(spec.object_count)
        .enumerate()
        .map(|(i, key)| ObjectOp {
            ts_us: 0,
            kind: ObjectOpKind::Put,
            key,
            size: spec.object_size,
            thread_id: (i as u64 % threads) as u32,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RequestKind {
    Put,
    Get,
    List,
    /// Plain sequential file write (used by the raw-vs-filesystem study).
    Append,
}

/// What one OSD sees of an object operation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRequest {
    pub ts_ns: u64,
    pub kind: RequestKind,
    pub key: String,
    pub bytes: u64,
    pub thread_id: u32,
}

impl ChunkRequest {
    pub fn list(thread_id: u32) -> Self {
        ChunkRequest {
            ts_ns: 0,
            kind: RequestKind::List,
            key: String::new(),
            bytes: 0,
            thread_id,
        }
    }
}

/// The chunk of `op` stored on OSD `osd_index`. LIST carries no chunk.
///
/// Every shard lands on a distinct OSD, so each PUT/GET touches exactly
/// one chunk on every OSD.
pub fn shard_to_osd(
    op: &ObjectOp,
    cluster: &ClusterSpec,
    osd_index: u32,
) -> Result<Option<ChunkRequest>> {
    cluster.validate()?;
    if osd_index >= cluster.num_osds {
        return Err(Error::Cluster(format!(
            "osd index {osd_index} out of range 0..{}",
            cluster.num_osds
        )));
    }
    let kind = match op.kind {
        ObjectOpKind::Put => RequestKind::Put,
        ObjectOpKind::Get => RequestKind::Get,
        ObjectOpKind::List => return Ok(None),
    };
    Ok(Some(ChunkRequest {
        ts_ns: op.ts_us * 1000,
        kind,
        key: op.key.clone(),
        bytes: chunk_object(op.size, cluster)?,
        thread_id: op.thread_id,
    }))
}

/// Maps an op stream onto the requests seen by one OSD.
pub fn requests_for_osd(
    ops: &[ObjectOp],
    cluster: &ClusterSpec,
    osd_index: u32,
) -> Result<Vec<ChunkRequest>> {
    ops.iter()
        .map(|op| {
            Ok(match shard_to_osd(op, cluster, osd_index)? {
                Some(r) => r,
                None => ChunkRequest {
                    ts_ns: op.ts_us * 1000,
                    ..ChunkRequest::list(op.thread_id)
                },
            })
        })
        .collect()
}

/// Op stream as CSV: `ts_us,kind,key,size,thread_id` after a `#` header.
pub fn emit_ops(spec: &WorkloadSpec, ops: &[ObjectOp]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "# iostack-ops v1 workload={} objects={} ops={} object_size={} distribution={} threads={} seed={}",
        spec.kind,
        spec.object_count,
        ops.len(),
        spec.object_size,
        spec.key_distribution,
        spec.thread_count,
        spec.seed
    )
    .unwrap();
    for op in ops {
        writeln!(
            out,
            "{},{},{},{},{}",
            Micros(op.ts_us * 1000),
            op.kind.as_str(),
            op.key,
            op.size,
            op.thread_id
        )
        .unwrap();
    }
    out
}
