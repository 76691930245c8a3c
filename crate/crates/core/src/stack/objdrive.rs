// SPDX-License-Identifier: Apache-2.0

//! Object-Drive stack: the device resolves keys itself.
//!
//! Keys map to object ids through a multi-level hash; object data is placed
//! by the drive with no filesystem in between, so no FSM IO is ever issued.

use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

use super::{finish, schedule, us, Io, Phase, StackModel, StackSettings, Stepper, Translation};
use crate::alloc::{AllocatorState, Extent};
use crate::cache::CacheCounters;
use crate::error::{Error, Result};
use crate::trace::{bytes_to_sectors, IoTag, Op};
use crate::workload::{ChunkRequest, RequestKind, KIB, MIB};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveProfile {
    pub value_cap_bytes: u64,
    pub hash_levels: u32,
    pub kv_lib_cost_us: f64,
    pub indevice_index_cost_us: f64,
    pub iterator_batch: u64,
    /// Key plus descriptor returned per iterated key.
    pub iterator_entry_bytes: u64,
    pub om_value_bytes: u64,
    /// Root table size of the key hash, as a power of two.
    pub hash_bucket_bits: u32,
    /// Placement zones the data area is divided into.
    pub placement_zones: usize,
    pub index_region_bytes: u64,
}

impl Default for DriveProfile {
    fn default() -> Self {
        DriveProfile {
            value_cap_bytes: 2 * MIB,
            hash_levels: 2,
            kv_lib_cost_us: 10.0,
            indevice_index_cost_us: 10.0,
            iterator_batch: 256,
            iterator_entry_bytes: 64,
            om_value_bytes: 4 * KIB,
            hash_bucket_bits: 16,
            placement_zones: 64,
            index_region_bytes: 1024 * MIB,
        }
    }
}

impl DriveProfile {
    pub fn validate(&self) -> Result<()> {
        if self.value_cap_bytes == 0
            || self.iterator_batch == 0
            || self.hash_levels == 0
            || self.placement_zones == 0
            || self.om_value_bytes == 0
            || self.iterator_entry_bytes == 0
            || self.hash_bucket_bits == 0
            || self.hash_bucket_bits > 24
        {
            return Err(Error::Config("object-drive parameters out of range".into()));
        }
        Ok(())
    }
}

const LEAF_SPLIT: usize = 64;
const SUB_BITS: u32 = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf(Vec<(String, u64)>),
    Table(Vec<Node>),
}

/// Key to object-id map built as a multi-level hash table.
///
/// The root table is indexed by the top bits of the key hash. A leaf that
/// outgrows its bucket becomes a sub-table indexed by the next bits, up to
/// the configured number of levels.
#[derive(Debug, Clone)]
pub struct OidMap {
    levels: u32,
    root_bits: u32,
    root: Vec<Node>,
    next_oid: u64,
    len: usize,
}

fn key_hash(key: &str) -> u64 {
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    h.finish()
}

fn bucket(hash: u64, depth: u32, root_bits: u32) -> usize {
    let shift = if depth == 0 {
        64 - root_bits
    } else {
        64 - root_bits - depth * SUB_BITS
    };
    let bits = if depth == 0 { root_bits } else { SUB_BITS };
    ((hash >> shift) & ((1u64 << bits) - 1)) as usize
}

impl OidMap {
    pub fn new(levels: u32, root_bits: u32) -> Self {
        OidMap {
            levels: levels.max(1),
            root_bits,
            root: vec![Node::Leaf(Vec::new()); 1 << root_bits],
            next_oid: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, key: &str) -> Option<u64> {
        let h = key_hash(key);
        let mut node = &self.root[bucket(h, 0, self.root_bits)];
        let mut depth = 1;
        loop {
            match node {
                Node::Leaf(v) => return v.iter().find(|(k, _)| k == key).map(|&(_, o)| o),
                Node::Table(t) => {
                    node = &t[bucket(h, depth, self.root_bits)];
                    depth += 1;
                }
            }
        }
    }

    /// Returns the key's object id, assigning the next one if absent.
    pub fn insert(&mut self, key: &str) -> u64 {
        if let Some(oid) = self.get(key) {
            return oid;
        }
        let oid = self.next_oid;
        self.next_oid += 1;
        self.len += 1;
        let h = key_hash(key);
        let (levels, root_bits) = (self.levels, self.root_bits);
        let mut node = &mut self.root[bucket(h, 0, root_bits)];
        let mut depth = 1;
        loop {
            match node {
                Node::Table(t) => {
                    node = &mut t[bucket(h, depth, root_bits)];
                    depth += 1;
                }
                Node::Leaf(v) => {
                    v.push((key.to_string(), oid));
                    if v.len() > LEAF_SPLIT && depth < levels {
                        let mut table = vec![Node::Leaf(Vec::new()); 1 << SUB_BITS];
                        for (k, o) in v.drain(..) {
                            if let Node::Leaf(l) = &mut table[bucket(key_hash(&k), depth, root_bits)] {
                                l.push((k, o));
                            }
                        }
                        *node = Node::Table(table);
                    }
                    return oid;
                }
            }
        }
    }

    /// Deepest level in use (1 when no leaf has split).
    pub fn depth(&self) -> u32 {
        fn walk(n: &Node) -> u32 {
            match n {
                Node::Leaf(_) => 1,
                Node::Table(t) => 1 + t.iter().map(walk).max().unwrap_or(0),
            }
        }
        self.root.iter().map(walk).max().unwrap_or(1)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum OdStep {
    Data { key: String, bytes: u64 },
    OmWrite { key: String },
    OmRead { key: String },
    ReadData { key: String },
    Iterate { batch: u64, index: u64 },
}

/// Object-Drive stack.
#[derive(Debug, Clone)]
pub struct ObjectDriveStack {
    profile: DriveProfile,
    alloc: AllocatorState,
    index: Extent,
    oids: OidMap,
    sizes: std::collections::HashMap<u64, u64>,
    lib_ns: u64,
    index_ns: u64,
}

impl ObjectDriveStack {
    pub fn new(settings: &StackSettings) -> Result<Self> {
        let profile = settings.drive;
        profile.validate()?;
        let mut alloc = AllocatorState::new(settings.capacity_sectors(), profile.placement_zones)?;
        let index = alloc.reserve_front(0, bytes_to_sectors(profile.index_region_bytes))?;
        Ok(ObjectDriveStack {
            alloc,
            index,
            oids: OidMap::new(profile.hash_levels, profile.hash_bucket_bits),
            sizes: std::collections::HashMap::new(),
            lib_ns: us(profile.kv_lib_cost_us),
            index_ns: us(profile.indevice_index_cost_us),
            profile,
        })
    }

    pub fn oid_map(&self) -> &OidMap {
        &self.oids
    }

    /// Device runs of `key`'s object.
    pub fn runs_of(&self, key: &str) -> Option<&[Extent]> {
        let oid = self.oids.get(key)?;
        self.sizes.contains_key(&oid).then(|| self.alloc.extents(&oid.to_string()))
    }

    fn zone(&self, oid: u64) -> usize {
        let mut h = DefaultHasher::new();
        (oid >> 8).hash(&mut h);
        (h.finish() % self.profile.placement_zones as u64) as usize
    }

    fn om_io(&self, oid: u64, op: Op) -> Io {
        let len = bytes_to_sectors(self.profile.om_value_bytes);
        let slots = (self.index.len / len).max(1);
        Io {
            op,
            lba: self.index.lba + (oid % slots) * len,
            len,
            tag: IoTag::Om,
        }
    }

    fn command_phase(&self) -> Phase {
        Phase {
            vfs_ns: self.lib_ns,
            fs_ns: self.index_ns,
            block_ns: 0,
            block_layer: false,
            ios: Vec::new(),
        }
    }

    /// Cuts runs into commands of at most the value cap.
    fn commands(&self, runs: &[Extent], op: Op, ios: &mut Vec<Io>) {
        let cap = bytes_to_sectors(self.profile.value_cap_bytes).max(1);
        let mut budget = cap;
        for r in runs {
            let mut lba = r.lba;
            while lba < r.end() {
                let len = budget.min(r.end() - lba);
                ios.push(Io {
                    op,
                    lba,
                    len,
                    tag: IoTag::Od,
                });
                lba += len;
                budget -= len;
                if budget == 0 {
                    budget = cap;
                }
            }
        }
    }
}

impl Stepper for ObjectDriveStack {
    type Step = OdStep;

    fn expand(&mut self, req: &ChunkRequest) -> Result<Vec<OdStep>> {
        let key = req.key.clone();
        Ok(match req.kind {
            RequestKind::Append => {
                return Err(Error::Workload("object-drive has no append interface".into()));
            }
            RequestKind::Put => {
                if req.bytes == 0 {
                    return Err(Error::Workload("PUT of zero bytes".into()));
                }
                vec![
                    OdStep::Data {
                        key: key.clone(),
                        bytes: req.bytes,
                    },
                    OdStep::OmWrite { key },
                ]
            }
            RequestKind::Get => {
                match self.oids.get(&key) {
                    Some(oid) if self.sizes.contains_key(&oid) => {}
                    _ => return Err(Error::UnknownKey(key)),
                }
                vec![OdStep::OmRead { key: key.clone() }, OdStep::ReadData { key }]
            }
            RequestKind::List => {
                let n = self.sizes.len() as u64;
                let batch = self.profile.iterator_batch;
                (0..n.div_ceil(batch))
                    .map(|i| OdStep::Iterate {
                        batch: batch.min(n - i * batch),
                        index: i,
                    })
                    .collect()
            }
        })
    }

    fn exec(&mut self, step: OdStep, _thread: u32) -> Result<Phase> {
        let mut phase = self.command_phase();
        match step {
            OdStep::Data { key, bytes } => {
                let oid = self.oids.insert(&key);
                let zone = self.zone(oid);
                let staging = format!("{oid}~");
                let cap = self.profile.value_cap_bytes;
                let mut left = bytes;
                let mut runs = Vec::new();
                while left > 0 {
                    let n = left.min(cap);
                    runs.extend(self.alloc.allocate_extents(&staging, n, zone, cap)?);
                    left -= n;
                }
                self.commands(&runs, Op::Write, &mut phase.ios);
                let trim = bytes_to_sectors(bytes.div_ceil(KIB * 4) * KIB * 4);
                debug_assert_eq!(runs.iter().map(|r| r.len).sum::<u64>(), trim);
            }
            OdStep::OmWrite { key } => {
                let oid = self.oids.get(&key).expect("object id assigned by data step");
                let staging = format!("{oid}~");
                self.alloc.rename_file(&staging, &oid.to_string());
                let size: u64 = self.alloc.extents(&oid.to_string()).iter().map(|e| e.len * 512).sum();
                self.sizes.insert(oid, size);
                phase.ios.push(self.om_io(oid, Op::Write));
            }
            OdStep::OmRead { key } => {
                let oid = self.oids.get(&key).ok_or(Error::UnknownKey(key))?;
                phase.ios.push(self.om_io(oid, Op::Read));
            }
            OdStep::ReadData { key } => {
                let oid = self.oids.get(&key).ok_or_else(|| Error::UnknownKey(key.clone()))?;
                let runs: Vec<Extent> = self.alloc.extents(&oid.to_string()).to_vec();
                self.commands(&runs, Op::Read, &mut phase.ios);
            }
            OdStep::Iterate { batch, index } => {
                let bytes = batch * self.profile.iterator_entry_bytes;
                let len = bytes_to_sectors(bytes.div_ceil(512) * 512);
                let slots = (self.index.len / len).max(1);
                phase.ios.push(Io {
                    op: Op::Read,
                    lba: self.index.lba + (index % slots) * len,
                    len,
                    tag: IoTag::Om,
                });
            }
        }
        Ok(phase)
    }
}

impl StackModel for ObjectDriveStack {
    fn name(&self) -> &str {
        "object-drive"
    }

    fn capacity_sectors(&self) -> u64 {
        self.alloc.capacity_sectors()
    }

    fn block_contention_ns(&self) -> u64 {
        0
    }

    fn preload(&mut self, requests: &[ChunkRequest]) -> Result<()> {
        schedule(self, requests, false).map(|_| ())
    }

    fn translate(&mut self, requests: &[ChunkRequest]) -> Result<Translation> {
        let emitted = schedule(self, requests, true)?;
        let capacity = self.capacity_sectors();
        let (trace, raw_count, raw_per_bio) = finish(emitted, capacity, "object-drive", 0)?;
        Ok(Translation {
            trace,
            raw_count,
            raw_per_bio,
            dcache: CacheCounters::default(),
            pcache: CacheCounters::default(),
            lookup_misses: 0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oid_map_is_bijective_and_splits() {
        let mut m = OidMap::new(2, 4);
        for i in 0..5000 {
            assert_eq!(m.insert(&format!("{i:010}")), i);
        }
        for i in 0..5000 {
            assert_eq!(m.get(&format!("{i:010}")), Some(i));
        }
        assert_eq!(m.insert("0000000007"), 7);
        assert_eq!(m.len(), 5000);
        assert_eq!(m.get("missing"), None);
        assert_eq!(m.depth(), 2);
    }

    #[test]
    fn command_split_at_value_cap() {
        let s = StackSettings::default();
        let d = ObjectDriveStack::new(&s).unwrap();
        let mut ios = Vec::new();
        let runs = [Extent { lba: 0, len: 5 * 4096 + 100 }];
        d.commands(&runs, Op::Write, &mut ios);
        assert_eq!(ios.len(), 6);
        assert!(ios[..5].iter().all(|i| i.len == 4096));
        assert_eq!(ios[5].len, 100);
    }
}
