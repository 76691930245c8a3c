// SPDX-License-Identifier: Apache-2.0

//! Block layer: staging-window merging and splitting of BIOs.

use serde::{Deserialize, Serialize};

use crate::trace::{bytes_to_sectors, IoEvent, IoTag, LayerLatency, Op};

/// Largest BIO the block layer emits.
pub const MAX_BIO_BYTES: u64 = 256 * 1024;
pub const MAX_BIO_SECTORS: u64 = MAX_BIO_BYTES / 512;
/// Raw IOs staged before the window is forced out.
pub const STAGING_WINDOW: usize = 16;

/// An IO as handed down by the filesystem, before merging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawIo {
    pub submit_ns: u64,
    pub op: Op,
    pub lba: u64,
    pub len: u64,
    pub tag: IoTag,
    pub thread_id: u32,
    pub lat: LayerLatency,
    /// Closes the staging window after this IO (a plug flush).
    pub boundary: bool,
}

impl RawIo {
    pub fn new(submit_ns: u64, op: Op, lba: u64, len: u64, tag: IoTag, thread_id: u32) -> Self {
        RawIo {
            submit_ns,
            op,
            lba,
            len,
            tag,
            thread_id,
            lat: LayerLatency::default(),
            boundary: false,
        }
    }

    pub fn from_bytes(submit_ns: u64, op: Op, lba: u64, bytes: u64, tag: IoTag, thread_id: u32) -> Self {
        RawIo::new(submit_ns, op, lba, bytes_to_sectors(bytes), tag, thread_id)
    }

    fn end(&self) -> u64 {
        self.lba + self.len
    }
}

struct Staged {
    first: RawIo,
    lba: u64,
    len: u64,
    /// `(lba, len)` of every raw IO folded in.
    parts: Vec<(u64, u64)>,
}

impl Staged {
    fn accepts(&self, io: &RawIo) -> bool {
        self.first.op == io.op
            && self.first.tag == io.tag
            && self.first.thread_id == io.thread_id
            && (self.lba + self.len == io.lba || io.end() == self.lba)
    }
}

/// Output of [`bio_split_merge`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BioBatch {
    pub bios: Vec<IoEvent>,
    /// For each BIO, how many raw IOs overlap its sector range.
    pub raw_per_bio: Vec<u32>,
    pub raw_count: usize,
}

/// Merges adjacent raw IOs inside each staging window and splits the
/// results at [`MAX_BIO_BYTES`].
///
/// Merging requires the same op, tag and submitting thread. A window closes
/// after [`STAGING_WINDOW`] raw IOs or at an IO marked `boundary`. BIOs leave
/// a window in the order their first raw IO arrived.
pub fn bio_split_merge(pending: &[RawIo]) -> BioBatch {
    let mut out = BioBatch {
        raw_count: pending.len(),
        ..BioBatch::default()
    };
    let mut staged: Vec<Staged> = Vec::new();
    let mut in_window = 0usize;
    for io in pending {
        if io.len > 0 {
            match staged.iter_mut().find(|s| s.accepts(io)) {
                Some(s) => {
                    s.lba = s.lba.min(io.lba);
                    s.len += io.len;
                    s.first.submit_ns = s.first.submit_ns.min(io.submit_ns);
                    s.parts.push((io.lba, io.len));
                }
                None => staged.push(Staged {
                    first: io.clone(),
                    lba: io.lba,
                    len: io.len,
                    parts: vec![(io.lba, io.len)],
                }),
            }
        }
        in_window += 1;
        if io.boundary || in_window >= STAGING_WINDOW {
            drain(&mut staged, &mut out);
            in_window = 0;
        }
    }
    drain(&mut staged, &mut out);
    out
}

fn drain(staged: &mut Vec<Staged>, out: &mut BioBatch) {
    for s in staged.drain(..) {
        let mut lba = s.lba;
        let end = s.lba + s.len;
        while lba < end {
            let len = MAX_BIO_SECTORS.min(end - lba);
            let mut ev = IoEvent::new(s.first.submit_ns, s.first.op, lba, len, s.first.tag, s.first.thread_id);
            ev.lat = s.first.lat;
            let overlap = s
                .parts
                .iter()
                .filter(|&&(pl, pn)| pl < lba + len && lba < pl + pn)
                .count() as u32;
            out.bios.push(ev);
            out.raw_per_bio.push(overlap.max(1));
            lba += len;
        }
    }
}

/// Mean and maximum raw IOs per emitted BIO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoalesceStats {
    pub raw_count: usize,
    pub bio_count: usize,
    pub mean_raw_per_bio: f64,
    pub max_raw_per_bio: u32,
}

/// Merge report from the per-BIO raw-overlap counts.
pub fn coalesce_stats(raw_count: usize, raw_per_bio: &[u32]) -> CoalesceStats {
    let bio_count = raw_per_bio.len();
    let mean = if bio_count == 0 {
        1.0
    } else {
        (raw_per_bio.iter().map(|&c| f64::from(c.max(1))).sum::<f64>() / bio_count as f64).max(1.0)
    };
    CoalesceStats {
        raw_count,
        bio_count,
        mean_raw_per_bio: mean,
        max_raw_per_bio: raw_per_bio.iter().copied().max().unwrap_or(1).max(1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn w(lba: u64, len: u64) -> RawIo {
        RawIo::new(0, Op::Write, lba, len, IoTag::Od, 0)
    }

    #[test]
    fn two_adjacent_writes_merge_to_one_bio() {
        let b = bio_split_merge(&[w(0, 256), w(256, 256)]);
        assert_eq!(b.bios.len(), 1);
        assert_eq!(b.bios[0].bytes(), 256 * 1024);
        assert_eq!(b.raw_per_bio, vec![2]);
    }

    #[test]
    fn one_mib_write_splits_into_four() {
        let b = bio_split_merge(&[w(0, 2048)]);
        assert_eq!(b.bios.len(), 4);
        assert!(b.bios.iter().all(|e| e.bytes() == MAX_BIO_BYTES));
        assert_eq!(b.bios[3].lba, 1536);
        assert_eq!(coalesce_stats(1, &b.raw_per_bio).mean_raw_per_bio, 1.0);
    }

    #[test]
    fn eight_reads_of_128k_give_max_two_per_bio() {
        let raw: Vec<RawIo> = (0..8)
            .map(|i| RawIo::new(0, Op::Read, i * 256, 256, IoTag::Od, 3))
            .collect();
        let b = bio_split_merge(&raw);
        assert_eq!(b.bios.len(), 4);
        let s = coalesce_stats(raw.len(), &b.raw_per_bio);
        assert_eq!(s.max_raw_per_bio, 2);
        assert_eq!(s.mean_raw_per_bio, 2.0);
    }

    #[test]
    fn different_threads_or_tags_do_not_merge() {
        let mut a = w(0, 8);
        let mut b = w(8, 8);
        b.thread_id = 1;
        assert_eq!(bio_split_merge(&[a.clone(), b]).bios.len(), 2);
        a.tag = IoTag::Fsm;
        assert_eq!(bio_split_merge(&[a, w(8, 8)]).bios.len(), 2);
    }

    #[test]
    fn boundary_closes_window() {
        let mut a = w(0, 8);
        a.boundary = true;
        assert_eq!(bio_split_merge(&[a, w(8, 8)]).bios.len(), 2);
    }

    #[test]
    fn window_limit_is_sixteen_raw_ios() {
        let raw: Vec<RawIo> = (0..17).map(|i| w(i * 8, 8)).collect();
        let b = bio_split_merge(&raw);
        assert_eq!(b.bios.len(), 2);
        assert_eq!(b.bios[0].len, 16 * 8);
        assert_eq!(b.bios[1].lba, 16 * 8);
    }

    #[test]
    fn front_merge() {
        let b = bio_split_merge(&[w(8, 8), w(0, 8)]);
        assert_eq!(b.bios.len(), 1);
        assert_eq!((b.bios[0].lba, b.bios[0].len), (0, 16));
    }

    #[test]
    fn gapped_ios_never_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut lba = 0u64;
            let mut raw = Vec::new();
            for _ in 0..rng.random_range(1..60) {
                let len = rng.random_range(1..=512u64);
                raw.push(w(lba, len));
                lba += len + rng.random_range(1..=64u64);
            }
            // brute force: no raw IO begins where another ends
            let adjacent = raw
                .iter()
                .any(|a| raw.iter().any(|b| a.lba + a.len == b.lba));
            assert!(!adjacent);
            let b = bio_split_merge(&raw);
            let expect: usize = raw.iter().map(|r| r.len.div_ceil(MAX_BIO_SECTORS) as usize).sum();
            assert_eq!(b.bios.len(), expect);
            assert!(b.bios.iter().all(|e| e.bytes() <= MAX_BIO_BYTES));
        }
    }

    #[test]
    fn no_merge_ratio_is_one() {
        let s = coalesce_stats(3, &[1, 1, 1]);
        assert_eq!(s.mean_raw_per_bio, 1.0);
        assert_eq!(s.max_raw_per_bio, 1);
        assert_eq!(coalesce_stats(0, &[]).mean_raw_per_bio, 1.0);
    }
}
