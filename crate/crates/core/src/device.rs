// SPDX-License-Identifier: Apache-2.0

//! Device service-time models.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::IoEvent;
use crate::workload::{KIB, MIB};

/// Natural transfer size shared by both device kinds.
pub const DEFAULT_NTS_BYTES: u64 = 4 * MIB;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HddProfile {
    pub avg_seek_us: f64,
    pub rpm: f64,
    pub transfer_mbps: f64,
    pub per_cmd_us: f64,
    pub nts_bytes: u64,
}

impl Default for HddProfile {
    fn default() -> Self {
        // roughly a 15K RPM SAS drive
        HddProfile {
            avg_seek_us: 3400.0,
            rpm: 15_000.0,
            transfer_mbps: 200.0,
            per_cmd_us: 100.0,
            nts_bytes: DEFAULT_NTS_BYTES,
        }
    }
}

impl HddProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.avg_seek_us, self.rpm, self.transfer_mbps, self.per_cmd_us];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("hdd parameters must be positive".into()));
        }
        validate_nts(self.nts_bytes)
    }

    pub fn half_rotation_us(&self) -> f64 {
        30.0e6 / self.rpm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsdProfile {
    pub per_cmd_us: f64,
    pub transfer_mbps: f64,
    pub channel_parallelism: u32,
    pub nts_bytes: u64,
    /// Host interface bandwidth shared by all in-flight commands.
    pub bandwidth_cap_mbps: f64,
    /// Commands the device accepts before the host has to hold them back.
    pub queue_depth: u32,
}

impl Default for SsdProfile {
    fn default() -> Self {
        // roughly a datacenter NVMe drive
        SsdProfile {
            per_cmd_us: 80.0,
            transfer_mbps: 3000.0,
            channel_parallelism: 8,
            nts_bytes: DEFAULT_NTS_BYTES,
            bandwidth_cap_mbps: 3200.0,
            queue_depth: 1024,
        }
    }
}

impl SsdProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.per_cmd_us, self.transfer_mbps, self.bandwidth_cap_mbps];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.channel_parallelism == 0
            || self.queue_depth == 0
        {
            return Err(Error::Config("ssd parameters must be positive".into()));
        }
        validate_nts(self.nts_bytes)
    }
}

fn validate_nts(nts: u64) -> Result<()> {
    if nts < 4 * KIB || !nts.is_multiple_of(4 * KIB) || !(nts / (4 * KIB)).is_power_of_two() {
        return Err(Error::Config(format!(
            "nts_bytes must be a power-of-two multiple of 4 KiB, got {nts}"
        )));
    }
    Ok(())
}

/// Microseconds to move `bytes` at `mbps` (10^6 bytes per second).
pub fn transfer_us(bytes: u64, mbps: f64) -> f64 {
    bytes as f64 / mbps
}

/// HDD service time and the head position afterwards.
///
/// A command that starts where the head rests pays neither seek nor
/// rotation. Otherwise seek grows linearly with distance (full stroke costs
/// twice the average seek) with a floor of a tenth of the average, and the
/// platter turns half a revolution on average.
pub fn hdd_service(
    profile: &HddProfile,
    io: &IoEvent,
    head_lba: u64,
    capacity_sectors: u64,
) -> (f64, u64) {
    let (seek, rotation) = if io.lba == head_lba {
        (0.0, 0.0)
    } else {
        let distance = io.lba.abs_diff(head_lba) as f64 / capacity_sectors.max(1) as f64;
        let seek = (profile.avg_seek_us * 2.0 * distance).max(0.1 * profile.avg_seek_us);
        (seek, profile.half_rotation_us())
    };
    let time = profile.per_cmd_us + seek + rotation + transfer_us(io.bytes(), profile.transfer_mbps);
    (time, io.end_lba())
}

/// SSD service time with `outstanding` commands in the device.
pub fn ssd_service(profile: &SsdProfile, io: &IoEvent, outstanding: u32) -> f64 {
    let factor = outstanding.clamp(1, profile.channel_parallelism);
    profile.per_cmd_us + transfer_us(io.bytes(), profile.transfer_mbps) / f64::from(factor)
}

pub(crate) fn us_to_ns_f(us: f64) -> u64 {
    (us * 1000.0).round() as u64
}

/// A device as seen by the replay engine.
///
/// `service_ns` may carry state between calls (e.g. head position); the
/// replay engine calls it in service-start order.
pub trait DeviceModel: Send {
    fn name(&self) -> &'static str;
    fn nts_bytes(&self) -> u64;
    /// Commands the device holds at once.
    fn queue_depth(&self) -> usize;
    /// Commands the device works on concurrently.
    fn service_slots(&self) -> usize;
    fn reset(&mut self, capacity_sectors: u64);
    /// Service time of `io` starting with `in_service` commands active,
    /// itself included.
    fn service_ns(&mut self, io: &IoEvent, in_service: usize) -> u64;
    /// Occupancy of a bus shared by all commands, if the device has one.
    fn bus_ns(&self, _io: &IoEvent) -> Option<u64> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct Hdd {
    pub profile: HddProfile,
    head: u64,
    capacity: u64,
}

impl Hdd {
    pub fn new(profile: HddProfile) -> Self {
        Hdd {
            profile,
            head: 0,
            capacity: 1,
        }
    }
}

impl DeviceModel for Hdd {
    fn name(&self) -> &'static str {
        "hdd"
    }

    fn nts_bytes(&self) -> u64 {
        self.profile.nts_bytes
    }

    fn queue_depth(&self) -> usize {
        1
    }

    fn service_slots(&self) -> usize {
        1
    }

    fn reset(&mut self, capacity_sectors: u64) {
        self.head = 0;
        self.capacity = capacity_sectors;
    }

    fn service_ns(&mut self, io: &IoEvent, _in_service: usize) -> u64 {
        let (us, head) = hdd_service(&self.profile, io, self.head, self.capacity);
        self.head = head;
        us_to_ns_f(us)
    }
}

#[derive(Debug, Clone)]
pub struct Ssd {
    pub profile: SsdProfile,
}

impl Ssd {
    pub fn new(profile: SsdProfile) -> Self {
        Ssd { profile }
    }
}

impl DeviceModel for Ssd {
    fn name(&self) -> &'static str {
        "ssd"
    }

    fn nts_bytes(&self) -> u64 {
        self.profile.nts_bytes
    }

    fn queue_depth(&self) -> usize {
        self.profile.queue_depth as usize
    }

    fn service_slots(&self) -> usize {
        self.profile.channel_parallelism as usize
    }

    fn reset(&mut self, _capacity_sectors: u64) {}

    fn service_ns(&mut self, io: &IoEvent, in_service: usize) -> u64 {
        us_to_ns_f(ssd_service(&self.profile, io, in_service as u32))
    }

    fn bus_ns(&self, io: &IoEvent) -> Option<u64> {
        Some(us_to_ns_f(transfer_us(io.bytes(), self.profile.bandwidth_cap_mbps)))
    }
}

/// Parameters for every registered device kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceSettings {
    pub hdd: HddProfile,
    pub ssd: SsdProfile,
}

pub type DeviceFactory = fn(&DeviceSettings) -> Box<dyn DeviceModel>;

/// Device models by name.
pub struct DeviceRegistry {
    factories: BTreeMap<&'static str, DeviceFactory>,
}

impl fmt::Debug for DeviceRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for DeviceRegistry {
    fn default() -> Self {
        let mut r = DeviceRegistry {
            factories: BTreeMap::new(),
        };
        r.register("hdd", |s| Box::new(Hdd::new(s.hdd)));
        r.register("ssd", |s| Box::new(Ssd::new(s.ssd)));
        r
    }
}

impl DeviceRegistry {
    pub fn register(&mut self, name: &'static str, factory: DeviceFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, settings: &DeviceSettings) -> Result<Box<dyn DeviceModel>> {
        let factory = self.factories.get(name).ok_or_else(|| Error::UnknownName {
            kind: "device",
            name: name.to_string(),
            known: self.names().join(", "),
        })?;
        Ok(factory(settings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{IoTag, Op};

    fn io(lba: u64, bytes: u64) -> IoEvent {
        IoEvent::new(0, Op::Write, lba, bytes / 512, IoTag::Od, 0)
    }

    #[test]
    fn contiguous_hdd_128k() {
        let p = HddProfile {
            transfer_mbps: 200.0,
            per_cmd_us: 100.0,
            ..HddProfile::default()
        };
        let (t, head) = hdd_service(&p, &io(1000, 128 * KIB), 1000, 1 << 30);
        // 100 + 131072 / 200
        assert!((t - 755.36).abs() < 1e-9);
        assert_eq!(head, 1256);
    }

    #[test]
    fn half_rotation_at_15k() {
        assert_eq!(HddProfile::default().half_rotation_us(), 2000.0);
    }

    #[test]
    fn hdd_seek_floor_and_full_stroke() {
        let p = HddProfile::default();
        let cap = 1u64 << 30;
        let xfer = transfer_us(4096, p.transfer_mbps);
        let (near, _) = hdd_service(&p, &io(8, 4096), 0, cap);
        assert!((near - (p.per_cmd_us + 0.1 * p.avg_seek_us + 2000.0 + xfer)).abs() < 1e-9);
        let (far, _) = hdd_service(&p, &io(0, 4096), cap, cap);
        assert!((far - (p.per_cmd_us + 2.0 * p.avg_seek_us + 2000.0 + xfer)).abs() < 1e-9);
    }

    #[test]
    fn ssd_single_outstanding_128k() {
        let p = SsdProfile::default();
        let t = ssd_service(&p, &io(0, 128 * KIB), 1);
        // 80 + 131072 / 3000
        assert!((t - 123.690_666_666).abs() < 1e-6);
    }

    #[test]
    fn ssd_parallel_factor() {
        let p = SsdProfile::default();
        let x = transfer_us(128 * KIB, p.transfer_mbps);
        let full = ssd_service(&p, &io(0, 128 * KIB), 8) - p.per_cmd_us;
        let half = ssd_service(&p, &io(0, 128 * KIB), 4) - p.per_cmd_us;
        assert!((half - 2.0 * full).abs() < 1e-9);
        assert!((full - x / 8.0).abs() < 1e-9);
        assert_eq!(ssd_service(&p, &io(0, 4096), 64), ssd_service(&p, &io(0, 4096), 8));
    }

    #[test]
    fn small_ios_cost_more_per_byte() {
        let p = SsdProfile::default();
        for out in [1, 4, 8, 16] {
            let small = ssd_service(&p, &io(0, 4 * KIB), out) / (4 * KIB) as f64;
            let large = ssd_service(&p, &io(0, 128 * KIB), out) / (128 * KIB) as f64;
            assert!(small > large);
        }
    }

    #[test]
    fn service_grows_with_bytes() {
        let h = HddProfile::default();
        let s = SsdProfile::default();
        let mut prev = (0.0, 0.0);
        for kib in [4, 8, 64, 128, 256, 1024] {
            let cur = (
                hdd_service(&h, &io(0, kib * KIB), 0, 1 << 30).0,
                ssd_service(&s, &io(0, kib * KIB), 2),
            );
            assert!(cur.0 > prev.0 && cur.1 > prev.1);
            prev = cur;
        }
    }

    #[test]
    fn registry_lookup() {
        let r = DeviceRegistry::default();
        assert_eq!(r.names(), vec!["hdd", "ssd"]);
        let d = r.create("ssd", &DeviceSettings::default()).unwrap();
        assert_eq!(d.service_slots(), 8);
        assert!(matches!(
            r.create("tape", &DeviceSettings::default()),
            Err(Error::UnknownName { .. })
        ));
    }

    #[test]
    fn nts_validation() {
        assert!(HddProfile::default().validate().is_ok());
        let bad = SsdProfile {
            nts_bytes: 3 * MIB,
            ..SsdProfile::default()
        };
        assert!(bad.validate().is_err());
    }
}
