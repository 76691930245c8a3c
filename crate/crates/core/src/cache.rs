// SPDX-License-Identifier: Apache-2.0

//! LRU caches for the VFS dentry cache and the page cache.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

impl CacheCounters {
    pub fn miss_ratio(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.misses as f64 / total as f64
        }
    }
}

/// Least-recently-used map with hit/miss/eviction counters.
///
/// Recency is a monotonically increasing stamp; the oldest stamp is evicted.
#[derive(Debug, Clone)]
pub struct LruCache<K, V> {
    capacity: usize,
    clock: u64,
    map: HashMap<K, (V, u64)>,
    order: BTreeMap<u64, K>,
    counters: CacheCounters,
}

impl<K: Clone + Eq + Hash, V> LruCache<K, V> {
    pub fn new(capacity: usize) -> Self {
        LruCache {
            capacity,
            clock: 0,
            map: HashMap::new(),
            order: BTreeMap::new(),
            counters: CacheCounters::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn counters(&self) -> CacheCounters {
        self.counters
    }

    pub fn contains(&self, key: &K) -> bool {
        self.map.contains_key(key)
    }

    fn touch(&mut self, key: &K) {
        self.clock += 1;
        let stamp = self.clock;
        if let Some(entry) = self.map.get_mut(key) {
            self.order.remove(&entry.1);
            entry.1 = stamp;
            self.order.insert(stamp, key.clone());
        }
    }

    /// Counted lookup; a hit refreshes recency.
    pub fn get(&mut self, key: &K) -> Option<&mut V> {
        if self.map.contains_key(key) {
            self.counters.hits += 1;
            self.touch(key);
            self.map.get_mut(key).map(|e| &mut e.0)
        } else {
            self.counters.misses += 1;
            None
        }
    }

    /// Uncounted lookup that leaves recency unchanged.
    pub fn peek(&self, key: &K) -> Option<&V> {
        self.map.get(key).map(|e| &e.0)
    }

    pub fn peek_mut(&mut self, key: &K) -> Option<&mut V> {
        self.map.get_mut(key).map(|e| &mut e.0)
    }

    /// Inserts or refreshes `key`; returns the entry evicted to make room.
    pub fn insert(&mut self, key: K, value: V) -> Option<(K, V)> {
        if self.capacity == 0 {
            return None;
        }
        if let Some(entry) = self.map.get_mut(&key) {
            entry.0 = value;
            self.touch(&key);
            return None;
        }
        let evicted = if self.map.len() >= self.capacity {
            self.pop_lru()
        } else {
            None
        };
        self.clock += 1;
        self.order.insert(self.clock, key.clone());
        self.map.insert(key, (value, self.clock));
        evicted
    }

    fn pop_lru(&mut self) -> Option<(K, V)> {
        let (_, key) = self.order.pop_first()?;
        let (value, _) = self.map.remove(&key)?;
        self.counters.evictions += 1;
        Some((key, value))
    }

    pub fn remove(&mut self, key: &K) -> Option<V> {
        let (value, stamp) = self.map.remove(key)?;
        self.order.remove(&stamp);
        Some(value)
    }

    /// Drops every entry without touching the counters.
    pub fn clear(&mut self) {
        self.map.clear();
        self.order.clear();
    }

    /// Keys from least to most recently used.
    pub fn keys_lru(&self) -> impl Iterator<Item = &K> {
        self.order.values()
    }
}

/// Dentry cache: pathnames resolved without touching the disk.
#[derive(Debug, Clone)]
pub struct DcacheModel {
    lru: LruCache<String, ()>,
}

impl DcacheModel {
    pub fn new(capacity_entries: usize) -> Self {
        DcacheModel {
            lru: LruCache::new(capacity_entries),
        }
    }

    /// Returns true on a hit; a miss installs the entry.
    pub fn lookup(&mut self, path: &str) -> bool {
        if self.lru.get(&path.to_string()).is_some() {
            true
        } else {
            self.lru.insert(path.to_string(), ());
            false
        }
    }

    pub fn invalidate(&mut self, path: &str) {
        self.lru.remove(&path.to_string());
    }

    pub fn counters(&self) -> CacheCounters {
        self.lru.counters()
    }

    pub fn len(&self) -> usize {
        self.lru.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lru.is_empty()
    }

    pub fn drop_all(&mut self) {
        self.lru.clear();
    }
}

/// Identifies a cached 4 KiB page: `(file id, page index)`.
pub type PageKey = (u64, u64);

/// Page cache of 4 KiB pages, each clean or dirty.
#[derive(Debug, Clone)]
pub struct PageCacheModel {
    lru: LruCache<PageKey, bool>,
    dirty: usize,
    pub dirty_ratio_threshold: f64,
}

impl PageCacheModel {
    pub fn new(capacity_pages: usize, dirty_ratio_threshold: f64) -> Self {
        PageCacheModel {
            lru: LruCache::new(capacity_pages),
            dirty: 0,
            dirty_ratio_threshold,
        }
    }

    pub fn capacity_pages(&self) -> usize {
        self.lru.capacity()
    }

    pub fn len(&self) -> usize {
        self.lru.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lru.is_empty()
    }

    pub fn dirty_pages(&self) -> usize {
        self.dirty
    }

    pub fn dirty_fraction(&self) -> f64 {
        if self.lru.capacity() == 0 {
            0.0
        } else {
            self.dirty as f64 / self.lru.capacity() as f64
        }
    }

    pub fn over_dirty_threshold(&self) -> bool {
        self.lru.capacity() > 0 && self.dirty_fraction() > self.dirty_ratio_threshold
    }

    pub fn counters(&self) -> CacheCounters {
        self.lru.counters()
    }

    /// Counted read; on a miss the page is installed clean.
    /// Returns `(hit, evicted dirty page)`.
    pub fn read(&mut self, page: PageKey) -> (bool, Option<PageKey>) {
        if self.lru.get(&page).is_some() {
            return (true, None);
        }
        let evicted = self.lru.insert(page, false);
        (false, self.account_eviction(evicted))
    }

    /// Uncounted presence test.
    pub fn contains(&self, page: &PageKey) -> bool {
        self.lru.contains(page)
    }

    /// Buffers a write; returns a dirty page pushed out by the insertion.
    pub fn write(&mut self, page: PageKey) -> Option<PageKey> {
        match self.lru.peek_mut(&page) {
            Some(dirty) => {
                if !*dirty {
                    *dirty = true;
                    self.dirty += 1;
                }
                self.lru.insert(page, true);
                None
            }
            None => {
                let evicted = self.lru.insert(page, true);
                if self.lru.contains(&page) {
                    self.dirty += 1;
                }
                self.account_eviction(evicted)
            }
        }
    }

    fn account_eviction(&mut self, evicted: Option<(PageKey, bool)>) -> Option<PageKey> {
        match evicted {
            Some((key, true)) => {
                self.dirty -= 1;
                Some(key)
            }
            _ => None,
        }
    }

    pub fn mark_clean(&mut self, page: &PageKey) {
        if let Some(dirty) = self.lru.peek_mut(page) {
            if *dirty {
                *dirty = false;
                self.dirty -= 1;
            }
        }
    }

    pub fn is_dirty(&self, page: &PageKey) -> bool {
        self.lru.peek(page).copied().unwrap_or(false)
    }

    pub fn invalidate(&mut self, page: &PageKey) {
        if let Some(true) = self.lru.remove(page) {
            self.dirty -= 1;
        }
    }

    /// Dirty pages from least to most recently used.
    pub fn dirty_lru(&self) -> Vec<PageKey> {
        self.lru
            .keys_lru()
            .filter(|k| self.lru.peek(k).copied().unwrap_or(false))
            .copied()
            .collect()
    }

    /// Drops clean pages (`echo 1 > drop_caches`); dirty pages stay.
    pub fn drop_clean(&mut self) {
        let dirty: Vec<PageKey> = self.dirty_lru();
        self.lru.clear();
        for p in dirty {
            self.lru.insert(p, true);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force LRU: a recency list scanned linearly.
    fn oracle_misses(capacity: usize, refs: &[u32]) -> (u64, u64, u64) {
        let mut stack: Vec<u32> = Vec::new();
        let (mut hits, mut misses, mut evictions) = (0, 0, 0);
        for &r in refs {
            if let Some(pos) = stack.iter().position(|&x| x == r) {
                hits += 1;
                stack.remove(pos);
            } else {
                misses += 1;
                if capacity == 0 {
                    continue;
                }
                if stack.len() == capacity {
                    stack.remove(0);
                    evictions += 1;
                }
            }
            if capacity > 0 {
                stack.push(r);
            }
        }
        (hits, misses, evictions)
    }

    fn run_lru(capacity: usize, refs: &[u32]) -> CacheCounters {
        let mut c = LruCache::new(capacity);
        for &r in refs {
            if c.get(&r).is_none() {
                c.insert(r, ());
            }
        }
        c.counters()
    }

    #[test]
    fn basic_lru_eviction() {
        let mut c = LruCache::new(2);
        c.insert(1, "a");
        c.insert(2, "b");
        assert!(c.get(&1).is_some());
        let ev = c.insert(3, "c");
        assert_eq!(ev, Some((2, "b")));
        assert_eq!(c.len(), 2);
        assert_eq!(c.counters().evictions, 1);
    }

    #[test]
    fn matches_oracle_on_fixed_sequence() {
        let refs = [1, 2, 3, 1, 4, 5, 2, 1, 3, 3, 6, 1];
        for cap in 0..6 {
            let got = run_lru(cap, &refs);
            assert_eq!((got.hits, got.misses, got.evictions), oracle_misses(cap, &refs));
        }
    }

    #[test]
    fn dcache_lookup() {
        let mut d = DcacheModel::new(1);
        assert!(!d.lookup("/a"));
        assert!(d.lookup("/a"));
        assert!(!d.lookup("/b"));
        assert!(!d.lookup("/a"));
        assert_eq!(d.counters().misses, 3);
        assert!(d.len() <= 1);
    }

    #[test]
    fn page_cache_dirty_accounting() {
        let mut p = PageCacheModel::new(3, 0.5);
        assert_eq!(p.write((1, 0)), None);
        assert_eq!(p.write((1, 1)), None);
        assert!(p.over_dirty_threshold());
        p.mark_clean(&(1, 0));
        assert_eq!(p.dirty_pages(), 1);
        assert!(!p.over_dirty_threshold());
        assert_eq!(p.read((2, 0)), (false, None));
        // (1,0) is clean and least recent
        assert_eq!(p.write((3, 0)), None);
        assert_eq!(p.len(), 3);
        // (1,1) dirty is now LRU
        assert_eq!(p.read((4, 0)), (false, Some((1, 1))));
        assert_eq!(p.dirty_pages(), 1);
        assert!(p.dirty_fraction() <= 1.0);
    }

    #[test]
    fn zero_capacity_never_caches() {
        let mut p = PageCacheModel::new(0, 0.2);
        assert_eq!(p.read((1, 1)), (false, None));
        assert_eq!(p.read((1, 1)), (false, None));
        assert_eq!(p.write((1, 1)), None);
        assert_eq!(p.dirty_pages(), 0);
    }
}
