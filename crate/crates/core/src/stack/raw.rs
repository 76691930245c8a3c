// SPDX-License-Identifier: Apache-2.0

//! Raw block device access: no namespace, no page cache, no filesystem.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{finish, schedule, us, Io, Phase, StackModel, StackSettings, Stepper, Translation};
use crate::cache::CacheCounters;
use crate::error::{Error, Result};
use crate::trace::{bytes_to_sectors, IoTag, Op};
use crate::workload::{ChunkRequest, RequestKind, MIB, PAGE_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawCosts {
    pub block_bio_us: f64,
    pub block_contention_us: f64,
    /// Sequential region reserved for each appending thread.
    pub append_region_bytes: u64,
}

impl Default for RawCosts {
    fn default() -> Self {
        RawCosts {
            block_bio_us: 15.0,
            block_contention_us: 4.0,
            append_region_bytes: 256 * MIB,
        }
    }
}

/// Chunks live at fixed LBAs handed out in first-seen order; appends go to
/// per-thread regions in the upper half of the device.
#[derive(Debug, Clone)]
pub struct RawBlockStack {
    capacity: u64,
    bio_ns: u64,
    contention_ns: u64,
    region_sectors: u64,
    slots: HashMap<String, (u64, u64)>,
    cursor: u64,
    append_cursor: HashMap<u32, u64>,
}

impl RawBlockStack {
    pub fn new(settings: &StackSettings) -> Result<Self> {
        let c = &settings.raw;
        if c.append_region_bytes == 0 {
            return Err(Error::Config("append_region_bytes must be positive".into()));
        }
        Ok(RawBlockStack {
            capacity: settings.capacity_sectors(),
            bio_ns: us(c.block_bio_us),
            contention_ns: us(c.block_contention_us),
            region_sectors: bytes_to_sectors(c.append_region_bytes),
            slots: HashMap::new(),
            cursor: 0,
            append_cursor: HashMap::new(),
        })
    }

    fn slot(&mut self, key: &str, bytes: u64, create: bool) -> Result<u64> {
        let sectors = bytes_to_sectors(bytes.div_ceil(PAGE_BYTES) * PAGE_BYTES);
        if let Some(&(lba, len)) = self.slots.get(key) {
            if sectors > len {
                return Err(Error::Workload(format!("raw slot for `{key}` cannot grow")));
            }
            return Ok(lba);
        }
        if !create {
            return Err(Error::UnknownKey(key.to_string()));
        }
        if self.cursor + sectors > self.capacity / 2 {
            return Err(Error::OutOfSpace {
                ag: 0,
                requested: sectors,
            });
        }
        let lba = self.cursor;
        self.cursor += sectors;
        self.slots.insert(key.to_string(), (lba, sectors));
        Ok(lba)
    }

    fn phase(&self, io: Io) -> Phase {
        Phase {
            ios: vec![io],
            block_ns: self.bio_ns,
            block_layer: true,
            ..Phase::default()
        }
    }
}

impl Stepper for RawBlockStack {
    type Step = Phase;

    fn expand(&mut self, req: &ChunkRequest) -> Result<Vec<Phase>> {
        Ok(match req.kind {
            RequestKind::Put | RequestKind::Get => {
                let put = req.kind == RequestKind::Put;
                let lba = self.slot(&req.key, req.bytes, put)?;
                let op = if put { Op::Write } else { Op::Read };
                vec![self.phase(Io::bytes(op, lba, req.bytes, IoTag::Od))]
            }
            RequestKind::List => Vec::new(),
            RequestKind::Append => {
                let len = bytes_to_sectors(req.bytes);
                let base = self.capacity / 2 + u64::from(req.thread_id) * self.region_sectors;
                if base + self.region_sectors > self.capacity || len > self.region_sectors {
                    return Err(Error::OutOfSpace {
                        ag: 0,
                        requested: len,
                    });
                }
                let cur = self.append_cursor.entry(req.thread_id).or_insert(0);
                if *cur + len > self.region_sectors {
                    *cur = 0;
                }
                let lba = base + *cur;
                *cur += len;
                vec![self.phase(Io {
                    op: Op::Write,
                    lba,
                    len,
                    tag: IoTag::Od,
                })]
            }
        })
    }

    fn exec(&mut self, step: Phase, _thread: u32) -> Result<Phase> {
        Ok(step)
    }
}

impl StackModel for RawBlockStack {
    fn name(&self) -> &str {
        "raw-block"
    }

    fn capacity_sectors(&self) -> u64 {
        self.capacity
    }

    fn block_contention_ns(&self) -> u64 {
        self.contention_ns
    }

    fn preload(&mut self, requests: &[ChunkRequest]) -> Result<()> {
        schedule(self, requests, false).map(|_| ())
    }

    fn translate(&mut self, requests: &[ChunkRequest]) -> Result<Translation> {
        let emitted = schedule(self, requests, true)?;
        let (trace, raw_count, raw_per_bio) = finish(emitted, self.capacity, "raw-block", self.contention_ns)?;
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
