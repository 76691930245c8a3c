// SPDX-License-Identifier: Apache-2.0

//! Discrete-event replay of a trace against a device model.
//!
//! An IO leaves the host after its vfs, fs and block costs plus a
//! contention charge proportional to the IOs already in flight. It then
//! waits for room in the device queue (charged to the block layer) and for a
//! service slot (charged to the device).
//!
//! In closed-loop mode each thread issues its IOs in bursts: consecutive
//! events with the same submit time go out together, and the next burst
//! follows once the whole burst has completed, keeping the idle gap the
//! original trace had between them. Open-loop mode issues every event at its
//! recorded submit time.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::trace::{IoEvent, Trace};

pub const META_BLOCK_CONTENTION: &str = "block_contention_ns";
pub const META_REPLAY: &str = "replay";
pub const META_DEVICE: &str = "device";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReplayMode {
    ClosedLoop,
    OpenLoop,
}

impl ReplayMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReplayMode::ClosedLoop => "closed-loop",
            ReplayMode::OpenLoop => "open-loop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOptions {
    pub mode: ReplayMode,
    /// Block-layer charge per IO already in flight; `None` reads the trace meta.
    pub block_contention_ns: Option<u64>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            mode: ReplayMode::ClosedLoop,
            block_contention_ns: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayStats {
    /// First submission to last completion.
    pub makespan_ns: u64,
    /// Time with at least one command in service.
    pub device_busy_ns: u64,
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Complete(usize),
    Issue(usize),
    Arrive(usize),
}

struct Burst {
    events: Vec<usize>,
    next: Option<usize>,
    gap_ns: u64,
    remaining: usize,
    last_complete: u64,
}

#[derive(Default, Clone, Copy)]
struct Timing {
    submit: u64,
    contention: u64,
    arrive: u64,
    dispatch: u64,
    complete: u64,
}

/// Replays `trace` on `device`, returning the annotated trace.
pub fn replay(
    trace: &Trace,
    device: &mut dyn DeviceModel,
    opts: &ReplayOptions,
) -> Result<(Trace, ReplayStats)> {
    let events = trace.events();
    let contention_ns = match opts.block_contention_ns {
        Some(c) => c,
        None => match trace.meta.get(META_BLOCK_CONTENTION) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::InvalidTrace(format!("bad {META_BLOCK_CONTENTION} `{v}`")))?,
            None => 0,
        },
    };
    device.reset(trace.capacity_sectors());
    let depth = device.queue_depth().max(1);
    let slots = device.service_slots().max(1);

    let mut bursts = build_bursts(events, opts.mode);
    let mut burst_of = vec![0usize; events.len()];
    for (b, burst) in bursts.iter().enumerate() {
        for &i in &burst.events {
            burst_of[i] = b;
        }
    }

    let mut heap: BinaryHeap<Reverse<(u64, Ev)>> = BinaryHeap::new();
    let mut has_pred = vec![false; bursts.len()];
    for b in &bursts {
        if let Some(n) = b.next {
            has_pred[n] = true;
        }
    }
    for (b, burst) in bursts.iter().enumerate() {
        if !has_pred[b] {
            heap.push(Reverse((events[burst.events[0]].submit_ns, Ev::Issue(b))));
        }
    }

    let mut timing = vec![Timing::default(); events.len()];
    let mut host_in_flight = 0usize;
    let mut in_device = 0usize;
    let mut busy = 0usize;
    let mut block_queue: VecDeque<usize> = VecDeque::new();
    let mut device_queue: VecDeque<usize> = VecDeque::new();
    let mut bus_free = 0u64;
    let mut busy_since = 0u64;
    let mut stats = ReplayStats::default();

    while let Some(Reverse((now, ev))) = heap.pop() {
        match ev {
            Ev::Issue(b) => {
                for &i in &bursts[b].events {
                    let lat = events[i].lat;
                    let contention = contention_ns * host_in_flight as u64;
                    host_in_flight += 1;
                    stats.max_in_flight = stats.max_in_flight.max(host_in_flight);
                    let arrive = now + lat.vfs_ns + lat.fs_ns + lat.block_ns + contention;
                    timing[i] = Timing {
                        submit: now,
                        contention,
                        arrive,
                        ..Timing::default()
                    };
                    heap.push(Reverse((arrive, Ev::Arrive(i))));
                }
            }
            Ev::Arrive(i) => {
                if in_device < depth {
                    in_device += 1;
                    timing[i].dispatch = now;
                    if busy < slots {
                        start(i, now, events, device, &mut busy, &mut busy_since, &mut bus_free, &mut heap);
                    } else {
                        device_queue.push_back(i);
                    }
                } else {
                    block_queue.push_back(i);
                }
            }
            Ev::Complete(i) => {
                timing[i].complete = now;
                busy -= 1;
                in_device -= 1;
                host_in_flight -= 1;
                if busy == 0 {
                    stats.device_busy_ns += now - busy_since;
                }
                if let Some(j) = device_queue.pop_front() {
                    start(j, now, events, device, &mut busy, &mut busy_since, &mut bus_free, &mut heap);
                }
                if let Some(j) = block_queue.pop_front() {
                    in_device += 1;
                    timing[j].dispatch = now;
                    if busy < slots {
                        start(j, now, events, device, &mut busy, &mut busy_since, &mut bus_free, &mut heap);
                    } else {
                        device_queue.push_back(j);
                    }
                }
                let b = burst_of[i];
                let burst = &mut bursts[b];
                burst.remaining -= 1;
                burst.last_complete = burst.last_complete.max(now);
                if burst.remaining == 0 {
                    if let Some(n) = burst.next {
                        let at = burst.last_complete + burst.gap_ns;
                        heap.push(Reverse((at, Ev::Issue(n))));
                    }
                }
            }
        }
    }

    let mut out = Vec::with_capacity(events.len());
    let mut first = u64::MAX;
    let mut last = 0u64;
    for (ev, t) in events.iter().zip(&timing) {
        let mut e = ev.clone();
        e.submit_ns = t.submit;
        e.lat.block_ns += t.contention + (t.dispatch - t.arrive);
        e.lat.device_ns = t.complete - t.dispatch;
        e.complete_ns = t.complete;
        debug_assert_eq!(e.submit_ns + e.lat.total_ns(), e.complete_ns);
        first = first.min(e.submit_ns);
        last = last.max(e.complete_ns);
        out.push(e);
    }
    stats.makespan_ns = last.saturating_sub(first);

    let mut replayed = Trace::from_events(out, trace.capacity_sectors(), trace.meta.clone())?;
    replayed.meta.insert(META_REPLAY.into(), opts.mode.as_str().into());
    replayed.meta.insert(META_DEVICE.into(), device.name().into());
    replayed.meta.insert(META_BLOCK_CONTENTION.into(), contention_ns.to_string());
    Ok((replayed, stats))
}

#[allow(clippy::too_many_arguments)]
fn start(
    i: usize,
    now: u64,
    events: &[IoEvent],
    device: &mut dyn DeviceModel,
    busy: &mut usize,
    busy_since: &mut u64,
    bus_free: &mut u64,
    heap: &mut BinaryHeap<Reverse<(u64, Ev)>>,
) {
    if *busy == 0 {
        *busy_since = now;
    }
    *busy += 1;
    let io = &events[i];
    let mut done = now + device.service_ns(io, *busy);
    if let Some(bus) = device.bus_ns(io) {
        let bus_start = now.max(*bus_free);
        *bus_free = bus_start + bus;
        done = done.max(*bus_free);
    }
    heap.push(Reverse((done, Ev::Complete(i))));
}

fn build_bursts(events: &[IoEvent], mode: ReplayMode) -> Vec<Burst> {
    let single = |i: usize| Burst {
        events: vec![i],
        next: None,
        gap_ns: 0,
        remaining: 1,
        last_complete: 0,
    };
    if mode == ReplayMode::OpenLoop {
        return (0..events.len()).map(single).collect();
    }
    let mut per_thread: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        per_thread.entry(e.thread_id).or_default().push(i);
    }
    let mut bursts: Vec<Burst> = Vec::new();
    for idx in per_thread.values() {
        let mut prev: Option<usize> = None;
        let mut k = 0;
        while k < idx.len() {
            let submit = events[idx[k]].submit_ns;
            let mut members = Vec::new();
            while k < idx.len() && events[idx[k]].submit_ns == submit {
                members.push(idx[k]);
                k += 1;
            }
            let b = bursts.len();
            if let Some(p) = prev {
                let pb: &Burst = &bursts[p];
                let p_submit = events[pb.events[0]].submit_ns;
                let span = pb
                    .events
                    .iter()
                    .map(|&j| events[j].lat.kernel_ns())
                    .max()
                    .unwrap_or(0);
                let gap = submit.saturating_sub(p_submit + span);
                bursts[p].next = Some(b);
                bursts[p].gap_ns = gap;
            }
            bursts.push(Burst {
                remaining: members.len(),
                events: members,
                next: None,
                gap_ns: 0,
                last_complete: 0,
            });
            prev = Some(b);
        }
    }
    bursts
}
