// SPDX-License-Identifier: Apache-2.0

//! Import of blkparse default-format text output.
//!
//! Only `Q` (queue) and `C` (complete) actions of plain reads and writes are
//! consumed. A queue line becomes an [`IoEvent`]; a completion is matched to
//! the oldest pending event with the same `(lba, len, op)`.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trace::{IoEvent, IoTag, Op, Trace};

pub const META_UNMATCHED: &str = "unmatched_completions";
pub const META_SKIPPED_FLUSH: &str = "skipped_flush_discard";

/// Reads a blkparse text file, with an optional side-channel tag file.
///
/// The tag file holds `<line-number> <OD|OM|FSM>` pairs, one per line,
/// where the line number is 1-based in the blkparse file and points at a
/// `Q` line. Untagged events default to OD.
pub fn parse_blkparse_text(
    path: impl AsRef<Path>,
    capacity_sectors: u64,
    tag_file: Option<&Path>,
) -> Result<Trace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tags = match tag_file {
        Some(p) => {
            let t = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_tag_file(&t)?
        }
        None => HashMap::new(),
    };
    parse_blkparse_str(&text, capacity_sectors, &tags)
}

pub fn parse_tag_file(text: &str) -> Result<HashMap<usize, IoTag>> {
    let mut out = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(n), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse {
                line: idx + 1,
                column: 1,
                msg: "expected `<line> <tag>`".into(),
            });
        };
        let n: usize = n.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            column: 1,
            msg: format!("bad line number `{n}`"),
        })?;
        let tag = tag.parse::<IoTag>().map_err(|tag| Error::UnknownTag {
            line: idx + 1,
            tag,
        })?;
        out.insert(n, tag);
    }
    Ok(out)
}

#[derive(Debug, PartialEq)]
struct BlkLine {
    time_ns: u64,
    pid: u32,
    action: char,
    op: Option<Op>,
    sector: u64,
    len: u64,
}

pub fn parse_blkparse_str(
    text: &str,
    capacity_sectors: u64,
    tags: &HashMap<usize, IoTag>,
) -> Result<Trace> {
    if capacity_sectors == 0 {
        return Err(Error::InvalidTrace("capacity must be positive".into()));
    }
    let mut events: Vec<IoEvent> = Vec::new();
    let mut pending: HashMap<(u64, u64, Op), VecDeque<usize>> = HashMap::new();
    let mut unmatched = 0u64;
    let mut skipped = 0u64;

    for (idx, raw) in text.lines().enumerate() {
        let Some(line) = parse_line(raw) else {
            continue;
        };
        if line.action != 'Q' && line.action != 'C' {
            continue;
        }
        let Some(op) = line.op.filter(|_| line.len > 0) else {
            skipped += 1;
            continue;
        };
        let key = (line.sector, line.len, op);
        if line.action == 'Q' {
            let tag = tags.get(&(idx + 1)).copied().unwrap_or(IoTag::Od);
            pending.entry(key).or_default().push_back(events.len());
            events.push(IoEvent::new(line.time_ns, op, line.sector, line.len, tag, line.pid));
        } else {
            match pending.get_mut(&key).and_then(VecDeque::pop_front) {
                Some(i) => {
                    let ev = &mut events[i];
                    ev.complete_ns = line.time_ns.max(ev.submit_ns);
                    ev.lat.device_ns = ev.complete_ns - ev.submit_ns;
                }
                None => unmatched += 1,
            }
        }
    }

    if events.is_empty() {
        return Err(Error::InvalidTrace(
            "no parseable blkparse queue lines".into(),
        ));
    }
    let mut meta = BTreeMap::new();
    meta.insert("source".to_string(), "blkparse".to_string());
    meta.insert(META_UNMATCHED.to_string(), unmatched.to_string());
    meta.insert(META_SKIPPED_FLUSH.to_string(), skipped.to_string());
    Trace::from_events(events, capacity_sectors, meta)
}

/// `8,0 3 1 0.000100000 1234 Q W 2048 + 8 [worker]`
fn parse_line(line: &str) -> Option<BlkLine> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() < 7 || !f[0].contains(',') {
        return None;
    }
    let time_ns = parse_seconds(f[3])?;
    let pid = f[4].parse().ok()?;
    let mut action = f[5].chars();
    let action_char = action.next()?;
    if action.next().is_some() {
        return None;
    }
    let rwbs = f[6];
    let (sector, len) = if f.len() >= 10 && f[8] == "+" {
        (f[7].parse().ok()?, f[9].parse().ok()?)
    } else {
        (0, 0)
    };
    Some(BlkLine {
        time_ns,
        pid,
        action: action_char,
        op: classify_rwbs(rwbs),
        sector,
        len,
    })
}

/// Plain reads and writes only; flushes, FUA, discards and barriers are dropped.
fn classify_rwbs(rwbs: &str) -> Option<Op> {
    if rwbs.contains(['F', 'D', 'B', 'N']) {
        return None;
    }
    match (rwbs.contains('R'), rwbs.contains('W')) {
        (true, false) => Some(Op::Read),
        (false, true) => Some(Op::Write),
        _ => None,
    }
}

fn parse_seconds(s: &str) -> Option<u64> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let secs: u64 = int.parse().ok()?;
    let mut ns = 0u64;
    for (i, b) in frac.bytes().enumerate() {
        ns += u64::from(b - b'0') * 10u64.pow(8 - i as u32);
    }
    Some(secs * 1_000_000_000 + ns)
}
