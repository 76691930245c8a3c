// SPDX-License-Identifier: Apache-2.0

//! Device-level IO traces and the native line-oriented CSV format.
//!
//! A trace file starts with one header line
//!
//! ```text
//! # iostack-trace v1 capacity_sectors=<n> [key=value ...]
//! ```
//!
//! followed by one row per IO:
//!
//! ```text
//! submit_ts_us,op,lba_sector,len_sectors,tag,thread_id,vfs_us,fs_us,block_us,device_us,complete_ts_us
//! ```
//!
//! Times are written in microseconds with exactly three decimals; internally
//! they are integer nanoseconds so that replay annotations add up exactly.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECTOR_BYTES: u64 = 512;
pub const FORMAT_MAGIC: &str = "iostack-trace";
pub const FORMAT_VERSION: &str = "v1";

/// Meta key counting rows that were out of order in a parsed file.
pub const META_REORDERED: &str = "reordered_rows";

pub fn bytes_to_sectors(bytes: u64) -> u64 {
    bytes.div_ceil(SECTOR_BYTES)
}

pub fn sectors_to_bytes(sectors: u64) -> u64 {
    sectors * SECTOR_BYTES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Read => "R",
            Op::Write => "W",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Source of a device IO: object data, object metadata or filesystem metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IoTag {
    #[serde(rename = "OD")]
    Od,
    #[serde(rename = "OM")]
    Om,
    #[serde(rename = "FSM")]
    Fsm,
}

impl IoTag {
    pub const ALL: [IoTag; 3] = [IoTag::Od, IoTag::Om, IoTag::Fsm];

    pub fn as_str(self) -> &'static str {
        match self {
            IoTag::Od => "OD",
            IoTag::Om => "OM",
            IoTag::Fsm => "FSM",
        }
    }
}

impl fmt::Display for IoTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IoTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "OD" => Ok(IoTag::Od),
            "OM" => Ok(IoTag::Om),
            "FSM" => Ok(IoTag::Fsm),
            other => Err(other.to_string()),
        }
    }
}

/// Per-layer latency contributions in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerLatency {
    pub vfs_ns: u64,
    pub fs_ns: u64,
    pub block_ns: u64,
    pub device_ns: u64,
}

impl LayerLatency {
    pub fn total_ns(&self) -> u64 {
        self.vfs_ns + self.fs_ns + self.block_ns + self.device_ns
    }

    /// Host-side (kernel) part: everything but the device.
    pub fn kernel_ns(&self) -> u64 {
        self.vfs_ns + self.fs_ns + self.block_ns
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoEvent {
    pub submit_ns: u64,
    pub op: Op,
    pub lba: u64,
    pub len: u64,
    pub tag: IoTag,
    pub thread_id: u32,
    pub lat: LayerLatency,
    /// Zero until the trace has been replayed.
    pub complete_ns: u64,
}

impl IoEvent {
    pub fn new(submit_ns: u64, op: Op, lba: u64, len: u64, tag: IoTag, thread_id: u32) -> Self {
        IoEvent {
            submit_ns,
            op,
            lba,
            len,
            tag,
            thread_id,
            lat: LayerLatency::default(),
            complete_ns: 0,
        }
    }

    pub fn bytes(&self) -> u64 {
        sectors_to_bytes(self.len)
    }

    pub fn end_lba(&self) -> u64 {
        self.lba + self.len
    }

    pub fn latency_ns(&self) -> u64 {
        self.complete_ns.saturating_sub(self.submit_ns)
    }

    fn order_key(&self) -> (u64, u32, u64) {
        (self.submit_ns, self.thread_id, self.lba)
    }
}

/// An ordered sequence of device IOs on one device.
///
/// Events are kept sorted by `(submit_ns, thread_id, lba)`; the sort is
/// stable so IOs with an identical key keep their emission order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Trace {
    events: Vec<IoEvent>,
    capacity_sectors: u64,
    pub meta: BTreeMap<String, String>,
}

impl Trace {
    pub fn new(capacity_sectors: u64) -> Self {
        Trace {
            events: Vec::new(),
            capacity_sectors,
            meta: BTreeMap::new(),
        }
    }

    /// Builds a trace, validating every event and restoring the ordering invariant.
    pub fn from_events(
        mut events: Vec<IoEvent>,
        capacity_sectors: u64,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        for (i, ev) in events.iter().enumerate() {
            validate_event(ev, capacity_sectors).map_err(|msg| {
                Error::InvalidTrace(format!("event {i}: {msg}"))
            })?;
        }
        events.sort_by_key(IoEvent::order_key);
        Ok(Trace {
            events,
            capacity_sectors,
            meta,
        })
    }

    pub fn events(&self) -> &[IoEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<IoEvent> {
        self.events
    }

    pub fn capacity_sectors(&self) -> u64 {
        self.capacity_sectors
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Replaces the event list (e.g. after replay annotation), re-sorting it.
    pub fn replace_events(&mut self, mut events: Vec<IoEvent>) {
        events.sort_by_key(IoEvent::order_key);
        self.events = events;
    }

    pub fn is_ordered(&self) -> bool {
        self.events
            .windows(2)
            .all(|w| w[0].order_key() <= w[1].order_key())
    }

    /// True once every event carries a completion time.
    pub fn is_replayed(&self) -> bool {
        !self.events.is_empty()
            && self
                .events
                .iter()
                .all(|e| e.complete_ns >= e.submit_ns && e.lat.total_ns() > 0)
    }

    pub fn meta_u64(&self, key: &str) -> Option<u64> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    pub fn total_bytes(&self) -> u64 {
        self.events.iter().map(IoEvent::bytes).sum()
    }

    pub fn emit(&self) -> String {
        let mut out = String::with_capacity(64 + self.events.len() * 72);
        write!(out, "# {FORMAT_MAGIC} {FORMAT_VERSION} capacity_sectors={}", self.capacity_sectors)
            .unwrap();
        for (k, v) in &self.meta {
            write!(out, " {k}={v}").unwrap();
        }
        out.push('\n');
        for ev in &self.events {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                Micros(ev.submit_ns),
                ev.op,
                ev.lba,
                ev.len,
                ev.tag,
                ev.thread_id,
                Micros(ev.lat.vfs_ns),
                Micros(ev.lat.fs_ns),
                Micros(ev.lat.block_ns),
                Micros(ev.lat.device_ns),
                Micros(ev.complete_ns),
            )
            .unwrap();
        }
        out
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            column: 1,
            msg: "missing header line".into(),
        })?;
        let (capacity_sectors, mut meta) = parse_header(header)?;

        let mut events = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let ev = parse_row(line, lineno)?;
            validate_event(&ev, capacity_sectors).map_err(|msg| Error::Parse {
                line: lineno,
                column: 3,
                msg,
            })?;
            events.push(ev);
        }

        let out_of_order = events
            .windows(2)
            .filter(|w| w[0].order_key() > w[1].order_key())
            .count();
        if out_of_order > 0 {
            events.sort_by_key(IoEvent::order_key);
            let prev = meta
                .get(META_REORDERED)
                .and_then(|v| v.parse::<usize>().ok())
                .unwrap_or(0);
            meta.insert(META_REORDERED.into(), (prev + out_of_order).to_string());
        }
        Ok(Trace {
            events,
            capacity_sectors,
            meta,
        })
    }
}

/// Reads a native trace file.
pub fn parse_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Trace::parse_str(&text)
}

/// Writes a native trace file. Output bytes depend only on the trace value.
pub fn emit_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, trace.emit()).map_err(|e| Error::io(path, e))
}

fn validate_event(ev: &IoEvent, capacity_sectors: u64) -> std::result::Result<(), String> {
    if ev.len == 0 {
        return Err("zero-length IO".into());
    }
    if ev.lba.checked_add(ev.len).is_none_or(|end| end > capacity_sectors) {
        return Err(format!(
            "IO [{}, +{}) exceeds device capacity of {capacity_sectors} sectors",
            ev.lba, ev.len
        ));
    }
    Ok(())
}

fn parse_header(line: &str) -> Result<(u64, BTreeMap<String, String>)> {
    let err = |column: usize, msg: &str| Error::Parse {
        line: 1,
        column,
        msg: msg.to_string(),
    };
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| err(1, "header must start with `#`"))?;
    let mut words = body.split_whitespace();
    if words.next() != Some(FORMAT_MAGIC) {
        return Err(err(3, "not an iostack trace"));
    }
    match words.next() {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(Error::Version(v.to_string())),
        None => return Err(err(3, "missing format version")),
    }
    let mut capacity = None;
    let mut meta = BTreeMap::new();
    for word in words {
        let (k, v) = word
            .split_once('=')
            .ok_or_else(|| err(1, &format!("header field `{word}` is not key=value")))?;
        if k == "capacity_sectors" {
            capacity = Some(
                v.parse::<u64>()
                    .map_err(|_| err(1, &format!("bad capacity `{v}`")))?,
            );
        } else {
            meta.insert(k.to_string(), v.to_string());
        }
    }
    let capacity = capacity.ok_or_else(|| err(1, "header lacks capacity_sectors"))?;
    Ok((capacity, meta))
}

fn parse_row(line: &str, lineno: usize) -> Result<IoEvent> {
    let cols: Vec<&str> = line.split(',').collect();
    if cols.len() != 11 {
        return Err(Error::Parse {
            line: lineno,
            column: cols.len().min(11) + 1,
            msg: format!("expected 11 columns, found {}", cols.len()),
        });
    }
    let bad = |column: usize, what: &str| Error::Parse {
        line: lineno,
        column,
        msg: format!("bad {what} `{}`", cols[column - 1]),
    };
    let micros = |column: usize, what: &str| parse_micros(cols[column - 1]).ok_or_else(|| bad(column, what));
    let int = |column: usize, what: &str| cols[column - 1].parse::<u64>().map_err(|_| bad(column, what));

    let op = match cols[1] {
        "R" => Op::Read,
        "W" => Op::Write,
        _ => return Err(bad(2, "op")),
    };
    let tag = cols[4].parse::<IoTag>().map_err(|tag| Error::UnknownTag { line: lineno, tag })?;
    let thread_id = cols[5].parse::<u32>().map_err(|_| bad(6, "thread id"))?;
    Ok(IoEvent {
        submit_ns: micros(1, "submit timestamp")?,
        op,
        lba: int(3, "lba")?,
        len: int(4, "length")?,
        tag,
        thread_id,
        lat: LayerLatency {
            vfs_ns: micros(7, "vfs latency")?,
            fs_ns: micros(8, "fs latency")?,
            block_ns: micros(9, "block latency")?,
            device_ns: micros(10, "device latency")?,
        },
        complete_ns: micros(11, "completion timestamp")?,
    })
}

/// Formats nanoseconds as microseconds with three decimals.
pub struct Micros(pub u64);

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

/// Parses `123`, `123.4` or `123.456` microseconds into nanoseconds.
pub fn parse_micros(s: &str) -> Option<u64> {
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int.is_empty() || frac.len() > 3 || !int.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let whole: u64 = int.parse().ok()?;
    let mut ns: u64 = 0;
    for (i, b) in frac.bytes().enumerate() {
        ns += u64::from(b - b'0') * [100, 10, 1][i];
    }
    whole.checked_mul(1000)?.checked_add(ns)
}

/// Converts floating-point microseconds to integer nanoseconds.
pub fn us_to_ns(us: f64) -> u64 {
    (us * 1000.0).round().max(0.0) as u64
}

pub fn ns_to_us(ns: u64) -> f64 {
    ns as f64 / 1000.0
}
