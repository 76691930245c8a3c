// SPDX-License-Identifier: Apache-2.0

//! Storage stacks that turn chunk requests into device IOs.
//!
//! Each stack implements [`StackModel`] and is created by name through a
//! [`StackRegistry`]. All stacks share the same per-thread step scheduler:
//! a request expands into steps, the thread with the earliest clock runs its
//! next step, and each step yields one burst of IOs issued together.

mod objdrive;
mod os;
mod raw;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use objdrive::{DriveProfile, ObjectDriveStack, OidMap};
pub use os::{FsProfile, OsCosts, OsFsStack};
pub use raw::{RawBlockStack, RawCosts};

use crate::block::{bio_split_merge, RawIo};
use crate::cache::CacheCounters;
use crate::error::{Error, Result};
use crate::replay::META_BLOCK_CONTENTION;
use crate::trace::{bytes_to_sectors, IoEvent, IoTag, LayerLatency, Op, Trace};
use crate::workload::{ChunkRequest, MIB};

pub const META_STACK: &str = "stack";

/// Result of translating a request stream.
#[derive(Debug, Clone)]
pub struct Translation {
    pub trace: Trace,
    /// Raw IOs handed to the block layer.
    pub raw_count: usize,
    /// Raw IOs overlapping each emitted BIO.
    pub raw_per_bio: Vec<u32>,
    pub dcache: CacheCounters,
    pub pcache: CacheCounters,
    /// Path lookups that missed the dentry cache.
    pub lookup_misses: u64,
}

/// A storage stack between the object service and the device.
pub trait StackModel: Send {
    fn name(&self) -> &str;
    fn capacity_sectors(&self) -> u64;
    /// Block-layer charge per in-flight IO applied at replay.
    fn block_contention_ns(&self) -> u64;
    /// Applies `requests` to the stack state without tracing them, then
    /// drops clean caches.
    fn preload(&mut self, requests: &[ChunkRequest]) -> Result<()>;
    fn translate(&mut self, requests: &[ChunkRequest]) -> Result<Translation>;
}

/// Everything the registered stacks need to construct themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSettings {
    pub capacity_bytes: u64,
    pub ag_extent: FsProfile,
    pub simple_extent: FsProfile,
    pub os_costs: OsCosts,
    pub dcache_entries: usize,
    pub page_cache_bytes: u64,
    pub dirty_ratio: f64,
    pub drive: DriveProfile,
    pub raw: RawCosts,
}

impl Default for StackSettings {
    fn default() -> Self {
        StackSettings {
            capacity_bytes: 64 * 1024 * MIB,
            ag_extent: FsProfile::ag_extent(),
            simple_extent: FsProfile::simple_extent(),
            os_costs: OsCosts::default(),
            dcache_entries: 100,
            page_cache_bytes: 32 * MIB,
            dirty_ratio: 0.2,
            drive: DriveProfile::default(),
            raw: RawCosts::default(),
        }
    }
}

impl StackSettings {
    pub fn capacity_sectors(&self) -> u64 {
        bytes_to_sectors(self.capacity_bytes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity_bytes < 64 * MIB {
            return Err(Error::Config("capacity_bytes must be at least 64 MiB".into()));
        }
        if !(0.0..=1.0).contains(&self.dirty_ratio) {
            return Err(Error::Config("dirty_ratio must be in [0,1]".into()));
        }
        self.ag_extent.validate()?;
        self.simple_extent.validate()?;
        self.drive.validate()
    }
}

pub type StackFactory = fn(&StackSettings) -> Result<Box<dyn StackModel>>;

/// Stack models by name.
pub struct StackRegistry {
    factories: BTreeMap<&'static str, StackFactory>,
}

impl fmt::Debug for StackRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for StackRegistry {
    fn default() -> Self {
        let mut r = StackRegistry {
            factories: BTreeMap::new(),
        };
        r.register("raw-block", |s| Ok(Box::new(RawBlockStack::new(s)?)));
        r.register("os-fs:ag-extent", |s| {
            Ok(Box::new(OsFsStack::new(s.ag_extent.clone(), s)?))
        });
        r.register("os-fs:simple-extent", |s| {
            Ok(Box::new(OsFsStack::new(s.simple_extent.clone(), s)?))
        });
        r.register("object-drive", |s| Ok(Box::new(ObjectDriveStack::new(s)?)));
        r
    }
}

impl StackRegistry {
    pub fn register(&mut self, name: &'static str, factory: StackFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, settings: &StackSettings) -> Result<Box<dyn StackModel>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::UnknownName {
            kind: "stack",
            name: name.to_string(),
            known: self.names().join(", "),
        })?;
        settings.validate()?;
        factory(settings)
    }
}

/// A device IO before the block layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Io {
    pub op: Op,
    pub lba: u64,
    pub len: u64,
    pub tag: IoTag,
}

impl Io {
    pub fn bytes(op: Op, lba: u64, bytes: u64, tag: IoTag) -> Self {
        Io {
            op,
            lba,
            len: bytes_to_sectors(bytes),
            tag,
        }
    }
}

/// One burst: IOs issued together plus the host costs of producing them.
#[derive(Debug, Clone, Default)]
pub(crate) struct Phase {
    pub ios: Vec<Io>,
    pub vfs_ns: u64,
    pub fs_ns: u64,
    /// Block cost charged to every emitted IO.
    pub block_ns: u64,
    /// Pass the IOs through the block layer's merge/split.
    pub block_layer: bool,
}

impl Phase {
    pub fn cpu(vfs_ns: u64, fs_ns: u64) -> Self {
        Phase {
            vfs_ns,
            fs_ns,
            ..Phase::default()
        }
    }
}

/// Stack-specific behaviour driven by [`schedule`].
pub(crate) trait Stepper {
    type Step;
    /// Steps for one request; state changes happen in [`Stepper::exec`].
    fn expand(&mut self, req: &ChunkRequest) -> Result<Vec<Self::Step>>;
    fn exec(&mut self, step: Self::Step, thread: u32) -> Result<Phase>;
}

#[derive(Debug, Default)]
pub(crate) struct Emitted {
    pub events: Vec<IoEvent>,
    pub raw_count: usize,
    pub raw_per_bio: Vec<u32>,
}

struct ThreadState<S> {
    clock: u64,
    pending_ns: u64,
    requests: VecDeque<usize>,
    steps: VecDeque<S>,
}

/// Runs requests through `model`, interleaving threads by their clocks.
///
/// A thread's clock advances by the longest host cost of each burst it
/// issues. Host work that issues no IO is carried onto the thread's next IO.
pub(crate) fn schedule<M: Stepper>(model: &mut M, requests: &[ChunkRequest], record: bool) -> Result<Emitted> {
    let mut threads: BTreeMap<u32, ThreadState<M::Step>> = BTreeMap::new();
    for (i, r) in requests.iter().enumerate() {
        threads
            .entry(r.thread_id)
            .or_insert_with(|| ThreadState {
                clock: 0,
                pending_ns: 0,
                requests: VecDeque::new(),
                steps: VecDeque::new(),
            })
            .requests
            .push_back(i);
    }
    let mut ready: BinaryHeap<Reverse<(u64, u32)>> = threads.keys().map(|&t| Reverse((0, t))).collect();
    let mut out = Emitted::default();

    while let Some(Reverse((_, tid))) = ready.pop() {
        let st = threads.get_mut(&tid).expect("thread state");
        if st.steps.is_empty() {
            let Some(idx) = st.requests.pop_front() else {
                continue;
            };
            let req = &requests[idx];
            st.clock = st.clock.max(req.ts_ns);
            st.steps = model.expand(req)?.into();
        }
        if let Some(step) = st.steps.pop_front() {
            let phase = model.exec(step, tid)?;
            let st = threads.get_mut(&tid).expect("thread state");
            if phase.ios.is_empty() {
                st.pending_ns += phase.vfs_ns + phase.fs_ns;
            } else {
                let span = emit(&phase, tid, st.clock, st.pending_ns, record, &mut out);
                st.pending_ns = 0;
                st.clock += span;
            }
        }
        let st = &threads[&tid];
        if !st.steps.is_empty() || !st.requests.is_empty() {
            ready.push(Reverse((st.clock, tid)));
        }
    }
    Ok(out)
}

fn emit(phase: &Phase, thread: u32, clock: u64, pending_ns: u64, record: bool, out: &mut Emitted) -> u64 {
    let base = LayerLatency {
        vfs_ns: phase.vfs_ns,
        fs_ns: phase.fs_ns,
        block_ns: phase.block_ns,
        device_ns: 0,
    };
    let mut events: Vec<IoEvent> = if phase.block_layer {
        let raw: Vec<RawIo> = phase
            .ios
            .iter()
            .map(|io| RawIo::new(clock, io.op, io.lba, io.len, io.tag, thread))
            .collect();
        let batch = bio_split_merge(&raw);
        if record {
            out.raw_count += batch.raw_count;
            out.raw_per_bio.extend(batch.raw_per_bio);
        }
        batch.bios
    } else {
        phase
            .ios
            .iter()
            .map(|io| IoEvent::new(clock, io.op, io.lba, io.len, io.tag, thread))
            .collect()
    };
    let n = events.len() as u64;
    for (i, e) in events.iter_mut().enumerate() {
        e.lat = base;
        if n > 1 {
            e.lat.vfs_ns = share(base.vfs_ns, n, i as u64);
            e.lat.fs_ns = share(base.fs_ns, n, i as u64);
        }
    }
    if let Some(first) = events.first_mut() {
        first.lat.vfs_ns += pending_ns;
    }
    let span = base.kernel_ns() + pending_ns;
    if record {
        out.events.extend(events);
    }
    span
}

/// Part `i` of `total` split into `n` near-equal shares.
fn share(total: u64, n: u64, i: u64) -> u64 {
    total / n + u64::from(i < total % n)
}

/// Wraps emitted events into a trace carrying the stack's replay settings.
pub(crate) fn finish(
    emitted: Emitted,
    capacity_sectors: u64,
    stack: &str,
    contention_ns: u64,
) -> Result<(Trace, usize, Vec<u32>)> {
    let mut meta = BTreeMap::new();
    meta.insert(META_STACK.to_string(), stack.to_string());
    meta.insert(META_BLOCK_CONTENTION.to_string(), contention_ns.to_string());
    let trace = Trace::from_events(emitted.events, capacity_sectors, meta)?;
    Ok((trace, emitted.raw_count, emitted.raw_per_bio))
}

pub(crate) fn us(v: f64) -> u64 {
    (v * 1000.0).round() as u64
}
