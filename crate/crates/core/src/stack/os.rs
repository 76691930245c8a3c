// SPDX-License-Identifier: Apache-2.0

//! Conventional object store on a local filesystem.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{finish, schedule, us, Io, Phase, StackModel, StackSettings, Stepper, Translation};
use crate::alloc::{AllocatorState, Extent};
use crate::cache::{CacheCounters, DcacheModel, PageCacheModel};
use crate::error::{Error, Result};
use crate::trace::{bytes_to_sectors, sectors_to_bytes, IoTag, Op};
use crate::workload::{ChunkRequest, RequestKind, KIB, MIB, PAGE_BYTES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsProfile {
    pub name: String,
    pub metadata_node_bytes: u64,
    pub allocation_groups: usize,
    pub delayed_alloc_window: u64,
    pub journal_write_bytes: u64,
    pub extent_max_bytes: u64,
    /// Per-group metadata region; zero interleaves metadata with data.
    pub metadata_band_bytes: u64,
    pub inode_bytes: u64,
    pub dirent_bytes: u64,
    pub journal_bytes: u64,
    /// Plain appends per journal commit.
    pub journal_every: u32,
    pub writeback_io_bytes: u64,
    pub read_io_bytes: u64,
    /// Bytes a buffered read fetches before waiting on the device.
    pub readahead_bytes: u64,
}

impl FsProfile {
    pub fn ag_extent() -> Self {
        FsProfile {
            name: "ag-extent".into(),
            metadata_node_bytes: 16 * KIB,
            allocation_groups: 4,
            delayed_alloc_window: 1024 * MIB,
            journal_write_bytes: 4 * KIB,
            extent_max_bytes: 1024 * MIB,
            metadata_band_bytes: 256 * MIB,
            inode_bytes: 512,
            dirent_bytes: 64,
            journal_bytes: 64 * MIB,
            journal_every: 16,
            writeback_io_bytes: 128 * KIB,
            read_io_bytes: 128 * KIB,
            readahead_bytes: 256 * KIB,
        }
    }

    pub fn simple_extent() -> Self {
        FsProfile {
            name: "simple-extent".into(),
            metadata_node_bytes: 4 * KIB,
            allocation_groups: 1,
            delayed_alloc_window: MIB,
            journal_write_bytes: 4 * KIB,
            extent_max_bytes: 128 * MIB,
            metadata_band_bytes: 0,
            inode_bytes: 256,
            dirent_bytes: 64,
            journal_bytes: 64 * MIB,
            journal_every: 16,
            writeback_io_bytes: 128 * KIB,
            read_io_bytes: 128 * KIB,
            readahead_bytes: 256 * KIB,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = matches!(self.name.as_str(), "ag-extent" | "simple-extent");
        if named && ![4 * KIB, 16 * KIB].contains(&self.metadata_node_bytes) {
            return Err(Error::Config(format!(
                "{}: metadata_node_bytes must be 4 KiB or 16 KiB",
                self.name
            )));
        }
        if self.allocation_groups == 0 {
            return Err(Error::Config("allocation_groups must be >= 1".into()));
        }
        let sizes = [
            self.metadata_node_bytes,
            self.delayed_alloc_window,
            self.journal_write_bytes,
            self.extent_max_bytes,
            self.inode_bytes,
            self.dirent_bytes,
            self.journal_bytes,
            self.writeback_io_bytes,
            self.read_io_bytes,
            self.readahead_bytes,
        ];
        if sizes.contains(&0) || self.journal_every == 0 {
            return Err(Error::Config(format!("{}: sizes must be positive", self.name)));
        }
        if self.inode_bytes > self.metadata_node_bytes || self.dirent_bytes > self.metadata_node_bytes {
            return Err(Error::Config("inode/dirent larger than a metadata node".into()));
        }
        Ok(())
    }

    fn banded(&self) -> bool {
        self.metadata_band_bytes > 0
    }
}

/// Host-side costs in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OsCosts {
    pub vfs_lookup_us: f64,
    pub vfs_miss_us: f64,
    pub vfs_io_us: f64,
    pub fs_extent_us: f64,
    pub fs_meta_us: f64,
    pub block_bio_us: f64,
    pub block_contention_us: f64,
    pub list_key_us: f64,
}

impl Default for OsCosts {
    fn default() -> Self {
        OsCosts {
            vfs_lookup_us: 2.0,
            vfs_miss_us: 8.0,
            vfs_io_us: 40.0,
            fs_extent_us: 30.0,
            fs_meta_us: 20.0,
            block_bio_us: 15.0,
            block_contention_us: 14.0,
            list_key_us: 40.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Costs {
    lookup: u64,
    miss: u64,
    io: u64,
    extent: u64,
    meta: u64,
    bio: u64,
    contention: u64,
    list_key: u64,
}

impl From<&OsCosts> for Costs {
    fn from(c: &OsCosts) -> Self {
        Costs {
            lookup: us(c.vfs_lookup_us),
            miss: us(c.vfs_miss_us),
            io: us(c.vfs_io_us),
            extent: us(c.fs_extent_us),
            meta: us(c.fs_meta_us),
            bio: us(c.block_bio_us),
            contention: us(c.block_contention_us),
            list_key: us(c.list_key_us),
        }
    }
}

/// Page-cache file id for metadata nodes (keyed by LBA).
const META_FILE: u64 = 0;
const PAGE_SECTORS: u64 = PAGE_BYTES / 512;

#[derive(Debug, Clone)]
struct Version {
    id: u64,
    ag: usize,
    om: Extent,
    size: u64,
}

#[derive(Debug, Clone)]
struct Entry {
    ag: usize,
    dir_lba: u64,
    inode_node_lba: u64,
    current: Option<Version>,
}

#[derive(Debug, Clone)]
pub(crate) enum OsStep {
    Lookup { key: String },
    Begin { key: String, bytes: u64 },
    OmRead { key: String },
    Flush { bytes: u64 },
    OmWrite,
    Journal,
    Commit { key: String },
    ReadData { key: String, window: u64 },
    ListKey { key: String },
    Append { bytes: u64 },
}

/// Filesystem-backed stack: dentry cache, page cache, extent allocator and
/// the block layer.
#[derive(Debug, Clone)]
pub struct OsFsStack {
    name: String,
    profile: FsProfile,
    costs: Costs,
    alloc: AllocatorState,
    dcache: DcacheModel,
    pcache: PageCacheModel,
    entries: BTreeMap<String, Entry>,
    /// New version being written by each thread.
    pending: HashMap<u32, Version>,
    next_id: u64,
    bands: Vec<Extent>,
    band_slots: Vec<u64>,
    dir_blocks: Vec<u64>,
    dir_entries: u64,
    journal: Extent,
    journal_cursor: u64,
    append_count: HashMap<u32, u64>,
    lookup_misses: u64,
}

impl OsFsStack {
    pub fn new(profile: FsProfile, settings: &StackSettings) -> Result<Self> {
        profile.validate()?;
        let capacity = settings.capacity_sectors();
        let mut alloc = AllocatorState::new(capacity, profile.allocation_groups)?;
        let journal = alloc.reserve_front(0, bytes_to_sectors(profile.journal_bytes))?;
        let mut bands = Vec::new();
        if profile.banded() {
            for ag in 0..profile.allocation_groups {
                bands.push(alloc.allocate_loose(ag, bytes_to_sectors(profile.metadata_band_bytes))?);
            }
        }
        let page_capacity = (settings.page_cache_bytes / PAGE_BYTES) as usize;
        Ok(OsFsStack {
            name: format!("os-fs:{}", profile.name),
            band_slots: vec![0; bands.len()],
            bands,
            costs: Costs::from(&settings.os_costs),
            alloc,
            dcache: DcacheModel::new(settings.dcache_entries),
            pcache: PageCacheModel::new(page_capacity, settings.dirty_ratio),
            entries: BTreeMap::new(),
            pending: HashMap::new(),
            next_id: 1,
            dir_blocks: Vec::new(),
            dir_entries: 0,
            journal,
            journal_cursor: 0,
            append_count: HashMap::new(),
            lookup_misses: 0,
            profile,
        })
    }

    pub fn profile(&self) -> &FsProfile {
        &self.profile
    }

    pub fn allocator(&self) -> &AllocatorState {
        &self.alloc
    }

    /// Extents of the committed version of `key`.
    pub fn extents_of(&self, key: &str) -> Option<&[Extent]> {
        let v = self.entries.get(key)?.current.as_ref()?;
        Some(self.alloc.extents(&v.id.to_string()))
    }

    /// Metadata bands, one per allocation group (empty when interleaved).
    pub fn bands(&self) -> &[Extent] {
        &self.bands
    }

    fn node_sectors(&self) -> u64 {
        bytes_to_sectors(self.profile.metadata_node_bytes)
    }

    fn node_align(&self, offset_bytes: u64) -> u64 {
        let node = self.profile.metadata_node_bytes;
        bytes_to_sectors(offset_bytes / node * node)
    }

    fn ensure_entry(&mut self, key: &str) -> Result<()> {
        if self.entries.contains_key(key) {
            return Ok(());
        }
        let p = &self.profile;
        let (ag, dir_lba, inode_node_lba) = if p.banded() {
            let ag = self.alloc.next_directory_group();
            let band = self.bands[ag];
            let slot = self.band_slots[ag];
            let dir_area = sectors_to_bytes(band.len) / 4;
            let inode_off = dir_area + slot * p.inode_bytes;
            if inode_off + p.metadata_node_bytes > sectors_to_bytes(band.len) {
                return Err(Error::OutOfSpace {
                    ag,
                    requested: bytes_to_sectors(p.inode_bytes),
                });
            }
            self.band_slots[ag] += 1;
            (
                ag,
                band.lba + self.node_align(slot * p.dirent_bytes),
                band.lba + self.node_align(inode_off),
            )
        } else {
            let per_block = p.metadata_node_bytes / p.dirent_bytes;
            if self.dir_entries.is_multiple_of(per_block) {
                let blk = self.alloc.allocate_loose(0, self.node_sectors())?;
                self.dir_blocks.push(blk.lba);
            }
            let dir_lba = *self.dir_blocks.last().expect("directory block");
            self.dir_entries += 1;
            let inode = self.alloc.allocate_loose(0, self.node_sectors())?;
            (0, dir_lba, inode.lba)
        };
        self.entries.insert(
            key.to_string(),
            Entry {
                ag,
                dir_lba,
                inode_node_lba,
                current: None,
            },
        );
        Ok(())
    }

    fn entry(&self, key: &str) -> Result<&Entry> {
        self.entries.get(key).ok_or_else(|| Error::UnknownKey(key.to_string()))
    }

    /// Reads a metadata node through the page cache.
    fn meta_read(&mut self, lba: u64, tag: IoTag, ios: &mut Vec<Io>) {
        let (hit, _) = self.pcache.read((META_FILE, lba));
        if !hit {
            ios.push(Io {
                op: Op::Read,
                lba,
                len: self.node_sectors(),
                tag,
            });
        }
    }

    fn lookup(&mut self, key: &str, phase: &mut Phase) -> Result<()> {
        let dir_lba = self.entry(key)?.dir_lba;
        phase.vfs_ns += self.costs.lookup;
        if !self.dcache.lookup(key) {
            self.lookup_misses += 1;
            phase.vfs_ns += self.costs.miss;
            self.meta_read(dir_lba, IoTag::Fsm, &mut phase.ios);
            let e = self.entry(key)?;
            if e.current.is_some() {
                let inode = e.inode_node_lba;
                phase.fs_ns += self.costs.meta;
                self.meta_read(inode, IoTag::Fsm, &mut phase.ios);
            }
        }
        Ok(())
    }

    fn journal_io(&mut self) -> Io {
        let len = bytes_to_sectors(self.profile.journal_write_bytes);
        if self.journal_cursor + len > self.journal.len {
            self.journal_cursor = 0;
        }
        let lba = self.journal.lba + self.journal_cursor;
        self.journal_cursor += len;
        Io {
            op: Op::Write,
            lba,
            len,
            tag: IoTag::Fsm,
        }
    }

    fn split_extents(extents: &[Extent], piece_bytes: u64, op: Op, ios: &mut Vec<Io>) {
        let piece = bytes_to_sectors(piece_bytes).max(1);
        for e in extents {
            let mut lba = e.lba;
            while lba < e.end() {
                let len = piece.min(e.end() - lba);
                ios.push(Io {
                    op,
                    lba,
                    len,
                    tag: IoTag::Od,
                });
                lba += len;
            }
        }
    }

    fn flush_bytes(&self) -> u64 {
        let dirty_limit = (self.pcache.capacity_pages() as f64 * self.pcache.dirty_ratio_threshold) as u64;
        let limit = dirty_limit.max(1) * PAGE_BYTES;
        self.profile.delayed_alloc_window.min(limit).max(PAGE_BYTES)
    }

    fn io_phase(&self) -> Phase {
        Phase {
            block_ns: self.costs.bio,
            block_layer: true,
            ..Phase::default()
        }
    }

    /// Places the object-metadata node right behind the file data and writes it.
    fn om_write(&mut self, thread: u32, phase: &mut Phase) -> Result<()> {
        let v = self.pending.get(&thread).expect("om write without begin");
        let (ag, file) = (v.ag, v.id.to_string());
        let tail = self.alloc.extents(&file).last().map(Extent::end);
        let sectors = self.node_sectors();
        let om = match tail {
            Some(t) => self.alloc.allocate_near(ag, t, sectors)?,
            None => self.alloc.allocate_loose(ag, sectors)?,
        };
        self.pending.get_mut(&thread).expect("pending version").om = om;
        self.pcache.read((META_FILE, om.lba));
        phase.vfs_ns += self.costs.io;
        phase.fs_ns += self.costs.meta;
        phase.ios.push(Io {
            op: Op::Write,
            lba: om.lba,
            len: om.len,
            tag: IoTag::Om,
        });
        Ok(())
    }

    fn counters(&self) -> (CacheCounters, CacheCounters) {
        (self.dcache.counters(), self.pcache.counters())
    }
}

fn delta(after: CacheCounters, before: CacheCounters) -> CacheCounters {
    CacheCounters {
        hits: after.hits - before.hits,
        misses: after.misses - before.misses,
        evictions: after.evictions - before.evictions,
    }
}

impl Stepper for OsFsStack {
    type Step = OsStep;

    fn expand(&mut self, req: &ChunkRequest) -> Result<Vec<OsStep>> {
        let key = req.key.clone();
        Ok(match req.kind {
            RequestKind::Put => {
                if req.bytes == 0 {
                    return Err(Error::Workload("PUT of zero bytes".into()));
                }
                let mut steps = vec![
                    OsStep::Begin {
                        key: key.clone(),
                        bytes: req.bytes,
                    },
                    OsStep::Lookup { key: key.clone() },
                    OsStep::OmRead { key: key.clone() },
                ];
                let chunk = self.flush_bytes();
                let mut left = req.bytes;
                while left > 0 {
                    let n = left.min(chunk);
                    left -= n;
                    steps.push(OsStep::Flush { bytes: n });
                }
                steps.extend([OsStep::OmWrite, OsStep::Journal, OsStep::Commit { key }]);
                steps
            }
            RequestKind::Get => {
                if self.entry(&key)?.current.is_none() {
                    return Err(Error::UnknownKey(key));
                }
                let size = self.entry(&key)?.current.as_ref().map_or(0, |v| v.size);
                let mut steps = vec![
                    OsStep::Lookup { key: key.clone() },
                    OsStep::OmRead { key: key.clone() },
                ];
                let windows = size.div_ceil(self.profile.readahead_bytes).max(1);
                steps.extend((0..windows).map(|window| OsStep::ReadData {
                    key: key.clone(),
                    window,
                }));
                steps
            }
            RequestKind::List => self
                .entries
                .iter()
                .filter(|(_, e)| e.current.is_some())
                .map(|(k, _)| OsStep::ListKey { key: k.clone() })
                .collect(),
            RequestKind::Append => {
                let n = self.append_count.entry(req.thread_id).or_insert(0);
                *n += 1;
                let mut steps = vec![OsStep::Append { bytes: req.bytes }];
                if (*n).is_multiple_of(u64::from(self.profile.journal_every)) {
                    steps.push(OsStep::Journal);
                }
                steps
            }
        })
    }

    fn exec(&mut self, step: OsStep, thread: u32) -> Result<Phase> {
        let mut phase = self.io_phase();
        match step {
            OsStep::Begin { key, bytes } => {
                self.ensure_entry(&key)?;
                let ag = self.entry(&key)?.ag;
                let id = self.next_id;
                self.next_id += 1;
                let om = Extent { lba: 0, len: 0 };
                self.pending.insert(thread, Version { id, ag, om, size: bytes });
                phase = Phase::cpu(0, self.costs.meta);
            }
            OsStep::Lookup { key } => self.lookup(&key, &mut phase)?,
            OsStep::OmRead { key } => {
                let e = self.entry(&key)?;
                let lba = match (&e.current, self.pending.contains_key(&thread)) {
                    (Some(v), _) => v.om.lba,
                    (None, true) => e.inode_node_lba,
                    (None, false) => return Err(Error::UnknownKey(key)),
                };
                phase.vfs_ns += self.costs.io;
                phase.fs_ns += self.costs.meta;
                self.meta_read(lba, IoTag::Om, &mut phase.ios);
            }
            OsStep::Flush { bytes } => {
                let v = self.pending.get_mut(&thread).expect("flush without begin");
                let (id, ag) = (v.id, v.ag);
                let file = id.to_string();
                let written: u64 = self.alloc.extents(&file).iter().map(|e| sectors_to_bytes(e.len)).sum();
                let first_page = written / PAGE_BYTES;
                let pages = bytes.div_ceil(PAGE_BYTES);
                for p in first_page..first_page + pages {
                    self.pcache.write((id, p));
                }
                let extents = self
                    .alloc
                    .allocate_extents(&file, bytes, ag, self.profile.extent_max_bytes)?;
                for p in first_page..first_page + pages {
                    self.pcache.mark_clean(&(id, p));
                }
                phase.vfs_ns += self.costs.io;
                phase.fs_ns += self.costs.extent * extents.len() as u64;
                Self::split_extents(&extents, self.profile.writeback_io_bytes, Op::Write, &mut phase.ios);
            }
            OsStep::OmWrite => self.om_write(thread, &mut phase)?,
            OsStep::Journal => {
                phase.fs_ns += self.costs.meta;
                let io = self.journal_io();
                phase.ios.push(io);
            }
            OsStep::Commit { key } => {
                let new = self.pending.remove(&thread).expect("commit without begin");
                let entry = self.entries.get_mut(&key).expect("entry created at begin");
                if let Some(old) = entry.current.replace(new) {
                    for p in 0..old.size.div_ceil(PAGE_BYTES) {
                        self.pcache.invalidate(&(old.id, p));
                    }
                    self.pcache.invalidate(&(META_FILE, old.om.lba));
                    self.alloc.remove_file(&old.id.to_string());
                    self.alloc.release(old.om);
                }
                phase = Phase::cpu(0, self.costs.meta);
            }
            OsStep::ReadData { key, window } => {
                let v = self.entry(&key)?.current.clone().ok_or(Error::UnknownKey(key))?;
                let win_pages = self.profile.readahead_bytes.div_ceil(PAGE_BYTES);
                let first = window * win_pages;
                let last = ((window + 1) * win_pages).min(v.size.div_ceil(PAGE_BYTES));
                let extents: Vec<Extent> = self.alloc.extents(&v.id.to_string()).to_vec();
                let mut missing: Vec<Extent> = Vec::new();
                let mut run: Option<Extent> = None;
                let mut touched = 0u64;
                let mut page = 0u64;
                for e in &extents {
                    let e_pages = e.len / PAGE_SECTORS;
                    if page + e_pages <= first || page >= last {
                        page += e_pages;
                        missing.extend(run.take());
                        continue;
                    }
                    touched += 1;
                    for k in first.max(page)..last.min(page + e_pages) {
                        let lba = e.lba + (k - page) * PAGE_SECTORS;
                        let (hit, _) = self.pcache.read((v.id, k));
                        if hit {
                            missing.extend(run.take());
                        } else {
                            match run.as_mut() {
                                Some(r) if r.end() == lba => r.len += PAGE_SECTORS,
                                _ => {
                                    missing.extend(run.take());
                                    run = Some(Extent { lba, len: PAGE_SECTORS });
                                }
                            }
                        }
                    }
                    page += e_pages;
                }
                missing.extend(run);
                phase.vfs_ns += self.costs.io;
                phase.fs_ns += self.costs.extent * touched.max(1);
                Self::split_extents(&missing, self.profile.read_io_bytes, Op::Read, &mut phase.ios);
            }
            OsStep::ListKey { key } => {
                phase.vfs_ns += self.costs.list_key;
                self.lookup(&key, &mut phase)?;
                let inode = self.entry(&key)?.inode_node_lba;
                phase.fs_ns += self.costs.meta;
                self.meta_read(inode, IoTag::Fsm, &mut phase.ios);
            }
            OsStep::Append { bytes } => {
                let file = format!("append-{thread}");
                let ag = thread as usize % self.profile.allocation_groups;
                let extents = self
                    .alloc
                    .allocate_extents(&file, bytes, ag, self.profile.extent_max_bytes)?;
                phase.vfs_ns += self.costs.io;
                phase.fs_ns += self.costs.extent;
                Self::split_extents(&extents, u64::MAX / 2, Op::Write, &mut phase.ios);
            }
        }
        Ok(phase)
    }
}

impl StackModel for OsFsStack {
    fn name(&self) -> &str {
        &self.name
    }

    fn capacity_sectors(&self) -> u64 {
        self.alloc.capacity_sectors()
    }

    fn block_contention_ns(&self) -> u64 {
        self.costs.contention
    }

    fn preload(&mut self, requests: &[ChunkRequest]) -> Result<()> {
        schedule(self, requests, false)?;
        self.dcache.drop_all();
        self.pcache.drop_clean();
        Ok(())
    }

    fn translate(&mut self, requests: &[ChunkRequest]) -> Result<Translation> {
        let (d0, p0) = self.counters();
        let misses0 = self.lookup_misses;
        let emitted = schedule(self, requests, true)?;
        let (d1, p1) = self.counters();
        let (trace, raw_count, raw_per_bio) =
            finish(emitted, self.capacity_sectors(), &self.name, self.costs.contention)?;
        Ok(Translation {
            trace,
            raw_count,
            raw_per_bio,
            dcache: delta(d1, d0),
            pcache: delta(p1, p0),
            lookup_misses: self.lookup_misses - misses0,
        })
    }
}
