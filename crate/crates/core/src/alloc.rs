// SPDX-License-Identifier: Apache-2.0

//! Extent allocator with allocation groups.
//!
//! Each allocation group keeps its free space as sorted, disjoint runs of
//! sectors. Allocation is first-fit within the hinted group, preferring to
//! extend the file's last extent, and rotates to the next group when the
//! hinted one has no run large enough. Files flushing alternately into the
//! same group end up with interleaved extents.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::bytes_to_sectors;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Extent {
    pub lba: u64,
    pub len: u64,
}

impl Extent {
    pub fn end(&self) -> u64 {
        self.lba + self.len
    }
}

/// Sorted, disjoint free runs keyed by start sector.
#[derive(Debug, Clone, Default)]
pub struct FreeMap {
    runs: BTreeMap<u64, u64>,
    free: u64,
}

impl FreeMap {
    pub fn with_range(start: u64, len: u64) -> Self {
        let mut m = FreeMap::default();
        if len > 0 {
            m.runs.insert(start, len);
            m.free = len;
        }
        m
    }

    pub fn free_sectors(&self) -> u64 {
        self.free
    }

    pub fn runs(&self) -> impl Iterator<Item = Extent> + '_ {
        self.runs.iter().map(|(&lba, &len)| Extent { lba, len })
    }

    pub fn largest_run(&self) -> u64 {
        self.runs.values().copied().max().unwrap_or(0)
    }

    /// Removes `[lba, lba+len)`, which must lie inside one free run.
    fn take(&mut self, lba: u64, len: u64) {
        let (&start, &run) = self
            .runs
            .range(..=lba)
            .next_back()
            .expect("take outside free space");
        assert!(lba + len <= start + run, "take crosses run boundary");
        self.runs.remove(&start);
        if lba > start {
            self.runs.insert(start, lba - start);
        }
        if lba + len < start + run {
            self.runs.insert(lba + len, start + run - lba - len);
        }
        self.free -= len;
    }

    /// Takes up to `want` sectors starting exactly at `lba` if free.
    fn take_at(&mut self, lba: u64, want: u64) -> Option<Extent> {
        let (&start, &run) = self.runs.range(..=lba).next_back()?;
        if lba >= start + run {
            return None;
        }
        let len = want.min(start + run - lba);
        self.take(lba, len);
        Some(Extent { lba, len })
    }

    /// First run with at least `want` sectors.
    fn first_fit(&mut self, want: u64) -> Option<Extent> {
        let (&lba, _) = self.runs.iter().find(|(_, &len)| len >= want)?;
        self.take(lba, want);
        Some(Extent { lba, len: want })
    }

    /// Up to `want` sectors from the largest run.
    fn take_largest(&mut self, want: u64) -> Option<Extent> {
        let (&lba, &len) = self
            .runs
            .iter()
            .max_by_key(|(&lba, &len)| (len, std::cmp::Reverse(lba)))?;
        let len = len.min(want);
        self.take(lba, len);
        Some(Extent { lba, len })
    }

    pub fn release(&mut self, ext: Extent) {
        if ext.len == 0 {
            return;
        }
        let mut lba = ext.lba;
        let mut len = ext.len;
        if let Some((&start, &run)) = self.runs.range(..lba).next_back() {
            assert!(start + run <= lba, "double free at {lba}");
            if start + run == lba {
                self.runs.remove(&start);
                lba = start;
                len += run;
            }
        }
        if let Some((&start, &run)) = self.runs.range(lba..).next() {
            assert!(ext.end() <= start, "double free at {}", ext.lba);
            if start == ext.end() {
                self.runs.remove(&start);
                len += run;
            }
        }
        self.runs.insert(lba, len);
        self.free += ext.len;
    }
}

#[derive(Debug, Clone)]
pub struct AllocationGroup {
    pub start: u64,
    pub end: u64,
    pub free: FreeMap,
}

impl AllocationGroup {
    pub fn contains(&self, lba: u64) -> bool {
        lba >= self.start && lba < self.end
    }
}

/// Free space per allocation group plus the extent list of every file.
#[derive(Debug, Clone)]
pub struct AllocatorState {
    capacity_sectors: u64,
    groups: Vec<AllocationGroup>,
    files: HashMap<String, Vec<Extent>>,
    dir_cursor: usize,
}

/// Granularity of data allocation.
pub const BLOCK_SECTORS: u64 = 8;

impl AllocatorState {
    /// Splits `capacity_sectors` into `groups` equal allocation groups.
    pub fn new(capacity_sectors: u64, groups: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::Config("allocation_groups must be >= 1".into()));
        }
        let per = capacity_sectors / groups as u64 / BLOCK_SECTORS * BLOCK_SECTORS;
        if per == 0 {
            return Err(Error::Config("device too small for allocation groups".into()));
        }
        let groups = (0..groups as u64)
            .map(|i| AllocationGroup {
                start: i * per,
                end: (i + 1) * per,
                free: FreeMap::with_range(i * per, per),
            })
            .collect();
        Ok(AllocatorState {
            capacity_sectors,
            groups,
            files: HashMap::new(),
            dir_cursor: 0,
        })
    }

    pub fn capacity_sectors(&self) -> u64 {
        self.capacity_sectors
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[AllocationGroup] {
        &self.groups
    }

    pub fn group_of(&self, lba: u64) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(lba))
    }

    pub fn free_sectors(&self) -> u64 {
        self.groups.iter().map(|g| g.free.free_sectors()).sum()
    }

    pub fn extents(&self, file: &str) -> &[Extent] {
        self.files.get(file).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn files(&self) -> impl Iterator<Item = (&String, &Vec<Extent>)> {
        self.files.iter()
    }

    /// Picks the group for a new directory: the one with the most free
    /// space, scanning round-robin from the cursor so ties rotate.
    pub fn next_directory_group(&mut self) -> usize {
        let n = self.groups.len();
        let mut best = self.dir_cursor % n;
        for step in 0..n {
            let g = (self.dir_cursor + step) % n;
            if self.groups[g].free.free_sectors() > self.groups[best].free.free_sectors() {
                best = g;
            }
        }
        self.dir_cursor = best + 1;
        best
    }

    /// Carves `sectors` off the front of a group (metadata bands, logs).
    pub fn reserve_front(&mut self, group: usize, sectors: u64) -> Result<Extent> {
        let g = &mut self.groups[group];
        let start = g.start;
        g.free
            .take_at(start, sectors)
            .filter(|e| e.len == sectors)
            .ok_or(Error::OutOfSpace {
                ag: group,
                requested: sectors,
            })
    }

    /// Allocates `sectors` first-fit in `group` (or the next group with room),
    /// not attached to any file.
    pub fn allocate_loose(&mut self, group: usize, sectors: u64) -> Result<Extent> {
        let n = self.groups.len();
        for step in 0..n {
            let g = (group + step) % n;
            if let Some(e) = self.groups[g].free.first_fit(sectors) {
                return Ok(e);
            }
        }
        Err(Error::OutOfSpace {
            ag: group,
            requested: sectors,
        })
    }

    /// Takes exactly `sectors` at `lba` when that space is free, otherwise
    /// falls back to [`allocate_loose`](Self::allocate_loose).
    pub fn allocate_near(&mut self, group: usize, lba: u64, sectors: u64) -> Result<Extent> {
        if let Some(g) = self.group_of(lba) {
            let free = &mut self.groups[g].free;
            let fits = free
                .runs
                .range(..=lba)
                .next_back()
                .is_some_and(|(&s, &r)| lba + sectors <= s + r && lba >= s);
            if fits {
                return Ok(free.take_at(lba, sectors).expect("checked run"));
            }
        }
        self.allocate_loose(group, sectors)
    }

    pub fn release(&mut self, ext: Extent) {
        let g = self.group_of(ext.lba).expect("extent outside device");
        self.groups[g].free.release(ext);
    }

    /// Frees every extent of `file` and forgets it.
    pub fn remove_file(&mut self, file: &str) {
        if let Some(exts) = self.files.remove(file) {
            for e in exts {
                self.release(e);
            }
        }
    }

    /// Moves the extent list of `from` to `to`, freeing whatever `to` held.
    pub fn rename_file(&mut self, from: &str, to: &str) {
        self.remove_file(to);
        if let Some(exts) = self.files.remove(from) {
            self.files.insert(to.to_string(), exts);
        }
    }

    /// Allocates `bytes` for `file`, preferring group `ag_hint`.
    ///
    /// Each returned extent is at most `extent_max_bytes` long. The file's
    /// extent list is extended (adjacent extents coalesce up to the maximum).
    pub fn allocate_extents(
        &mut self,
        file: &str,
        bytes: u64,
        ag_hint: usize,
        extent_max_bytes: u64,
    ) -> Result<Vec<Extent>> {
        if bytes == 0 {
            return Err(Error::Config("allocation of zero bytes".into()));
        }
        let n = self.groups.len();
        let ag_hint = ag_hint % n;
        let mut remaining = bytes_to_sectors(bytes).div_ceil(BLOCK_SECTORS) * BLOCK_SECTORS;
        if remaining > self.free_sectors() {
            return Err(Error::OutOfSpace {
                ag: ag_hint,
                requested: remaining,
            });
        }
        let max = (bytes_to_sectors(extent_max_bytes) / BLOCK_SECTORS * BLOCK_SECTORS).max(BLOCK_SECTORS);

        let mut out: Vec<Extent> = Vec::new();
        while remaining > 0 {
            let want = remaining.min(max);
            let tail = out
                .last()
                .copied()
                .or_else(|| self.files.get(file).and_then(|v| v.last().copied()));
            let ext = self
                .extend_tail(tail, want)
                .or_else(|| {
                    (0..n).find_map(|step| self.groups[(ag_hint + step) % n].free.first_fit(want))
                })
                .or_else(|| self.groups[ag_hint].free.take_largest(want))
                .or_else(|| {
                    (1..n).find_map(|step| self.groups[(ag_hint + step) % n].free.take_largest(want))
                })
                .ok_or(Error::OutOfSpace {
                    ag: ag_hint,
                    requested: remaining,
                })?;
            remaining -= ext.len;
            out.push(ext);
        }

        let list = self.files.entry(file.to_string()).or_default();
        for e in &out {
            match list.last_mut() {
                Some(last) if last.end() == e.lba && last.len + e.len <= max => last.len += e.len,
                _ => list.push(*e),
            }
        }
        Ok(out)
    }

    fn extend_tail(&mut self, tail: Option<Extent>, want: u64) -> Option<Extent> {
        let tail = tail?;
        let g = self.group_of(tail.end())?;
        self.groups[g].free.take_at(tail.end(), want)
    }

    /// Checks free runs and file extents are pairwise disjoint and sorted.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut all: Vec<(Extent, &str)> = Vec::new();
        for g in &self.groups {
            let runs: Vec<Extent> = g.free.runs().collect();
            for w in runs.windows(2) {
                if w[0].end() >= w[1].lba {
                    return Err(format!("free runs not sorted/disjoint: {:?} {:?}", w[0], w[1]));
                }
            }
            for r in runs {
                if r.lba < g.start || r.end() > g.end {
                    return Err(format!("free run {r:?} outside its group"));
                }
                all.push((r, "<free>"));
            }
        }
        for (f, exts) in &self.files {
            for e in exts {
                all.push((*e, f.as_str()));
            }
        }
        all.sort();
        for w in all.windows(2) {
            if w[0].0.end() > w[1].0.lba {
                return Err(format!(
                    "overlap between {:?} ({}) and {:?} ({})",
                    w[0].0, w[0].1, w[1].0, w[1].1
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{KIB, MIB};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_file_single_extent() {
        let mut a = AllocatorState::new(1 << 22, 4).unwrap();
        let ext = a.allocate_extents("f", 10 * MIB, 0, 128 * MIB).unwrap();
        assert_eq!(ext.len(), 1);
        assert_eq!(ext[0].len * 512, 10 * MIB);
        assert_eq!(a.extents("f").len(), 1);
        a.check_invariants().unwrap();
    }

    #[test]
    fn alternating_flushes_fragment_both_files() {
        let mut a = AllocatorState::new(1 << 22, 1).unwrap();
        for _ in 0..40 {
            a.allocate_extents("a", 256 * KIB, 0, 128 * MIB).unwrap();
            a.allocate_extents("b", 256 * KIB, 0, 128 * MIB).unwrap();
        }
        for f in ["a", "b"] {
            let ex = a.extents(f);
            assert!(ex.len() >= 2, "{f}: {ex:?}");
            assert!(ex.iter().all(|e| e.len * 512 < 10 * MIB));
            assert_eq!(ex.iter().map(|e| e.len).sum::<u64>() * 512, 10 * MIB);
        }
        a.check_invariants().unwrap();
    }

    #[test]
    fn extent_max_caps_each_extent() {
        let mut a = AllocatorState::new(1 << 22, 1).unwrap();
        let ext = a.allocate_extents("f", 3 * MIB, 0, MIB).unwrap();
        assert_eq!(ext.len(), 3);
        assert!(ext.iter().all(|e| e.len * 512 == MIB));
        // adjacent but capped: the file list keeps three extents
        assert_eq!(a.extents("f").len(), 3);
    }

    #[test]
    fn falls_back_to_next_group() {
        let mut a = AllocatorState::new(8 * 1024, 2).unwrap();
        // group 0 holds 4096 sectors = 2 MiB
        a.allocate_extents("x", 2 * MIB, 0, 128 * MIB).unwrap();
        let e = a.allocate_extents("y", MIB, 0, 128 * MIB).unwrap();
        assert_eq!(a.group_of(e[0].lba), Some(1));
        assert!(matches!(
            a.allocate_extents("z", 2 * MIB, 0, 128 * MIB),
            Err(Error::OutOfSpace { .. })
        ));
    }

    #[test]
    fn release_coalesces() {
        let mut m = FreeMap::with_range(0, 100);
        let a = m.first_fit(10).unwrap();
        let b = m.first_fit(10).unwrap();
        assert_eq!(m.runs().count(), 1);
        m.release(a);
        assert_eq!(m.runs().count(), 2);
        m.release(b);
        assert_eq!(m.runs().collect::<Vec<_>>(), vec![Extent { lba: 0, len: 100 }]);
        assert_eq!(m.free_sectors(), 100);
    }

    #[test]
    fn directory_groups_rotate() {
        let mut a = AllocatorState::new(1 << 20, 4).unwrap();
        let picks: Vec<usize> = (0..8).map(|_| a.next_directory_group()).collect();
        assert_eq!(picks, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn random_allocation_fuzz_stays_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a = AllocatorState::new(1 << 24, 4).unwrap();
        let mut live: Vec<String> = Vec::new();
        for i in 0..10_000u32 {
            if !live.is_empty() && rng.random_bool(0.3) {
                let idx = rng.random_range(0..live.len());
                let f = live.swap_remove(idx);
                a.remove_file(&f);
            } else {
                let f = format!("f{}", rng.random_range(0..500u32));
                let bytes = rng.random_range(1..=64u64) * 4 * KIB;
                match a.allocate_extents(&f, bytes, (i % 4) as usize, 256 * KIB) {
                    Ok(_) => live.push(f),
                    Err(Error::OutOfSpace { .. }) => {}
                    Err(e) => panic!("{e}"),
                }
            }
            if i % 500 == 0 {
                a.check_invariants().unwrap();
            }
        }
        a.check_invariants().unwrap();
        let used: u64 = a.files().flat_map(|(_, v)| v.iter()).map(|e| e.len).sum();
        assert_eq!(used + a.free_sectors(), a.groups().iter().map(|g| g.end - g.start).sum());
    }
}
