// SPDX-License-Identifier: Apache-2.0

//! INI configuration. Every tunable has a default; `dump` prints them all and
//! parsing starts from the defaults, rejecting unknown sections and keys.

use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use serde::{Deserialize, Serialize};

use crate::device::DeviceSettings;
use crate::error::{Error, Result};
use crate::replay::ReplayMode;
use crate::stack::StackSettings;
use crate::workload::{ClusterSpec, KeyDistribution, WorkloadKind, WorkloadSpec, KIB, MIB};

pub const CONFIG_ENV: &str = "IOSTACK_SIM_CONFIG";

/// Parameters of the throughput, chain and enumeration studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub io_sizes: Vec<u64>,
    pub thread_counts: Vec<u32>,
    pub ios_per_thread: u64,
    pub saturation_fraction: f64,
    pub reference_io_bytes: u64,
    pub reference_threads: u32,
    pub reference_device: String,
    pub chain_object_size: u64,
    pub chain_object_count: u64,
    pub chain_device: String,
    pub enum_device: String,
}

impl Default for StudySettings {
    fn default() -> Self {
        StudySettings {
            io_sizes: vec![4 * KIB, 128 * KIB],
            thread_counts: vec![1, 4, 16, 64],
            ios_per_thread: 32,
            saturation_fraction: 0.9,
            reference_io_bytes: 128 * KIB,
            reference_threads: 64,
            reference_device: "ssd".into(),
            chain_object_size: 128 * MIB,
            chain_object_count: 200,
            chain_device: "ssd".into(),
            enum_device: "ssd".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub osd_index: u32,
    pub replay: ReplayMode,
    pub stack_name: String,
    pub device_name: String,
    pub workload: WorkloadSpec,
    pub cluster: ClusterSpec,
    pub stack: StackSettings,
    pub device: DeviceSettings,
    pub study: StudySettings,
}

impl Default for SimConfig {
    fn default() -> Self {
        let mut workload = WorkloadSpec::new(WorkloadKind::WriteOnly, 8 * MIB, 1000);
        workload.thread_count = 8;
        workload.seed = 42;
        SimConfig {
            osd_index: 0,
            replay: ReplayMode::ClosedLoop,
            stack_name: "os-fs:ag-extent".into(),
            device_name: "ssd".into(),
            workload,
            cluster: ClusterSpec::default(),
            stack: StackSettings::default(),
            device: DeviceSettings::default(),
            study: StudySettings::default(),
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(section: &str, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(section, key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn replay_mode(s: &str) -> Result<ReplayMode> {
    match s.trim() {
        "closed-loop" => Ok(ReplayMode::ClosedLoop),
        "open-loop" => Ok(ReplayMode::OpenLoop),
        _ => Err(Error::Config(format!("replay must be closed-loop or open-loop, got `{s}`"))),
    }
}

impl SimConfig {
    /// Every (section, key, value) triple, in dump order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let w = &self.workload;
        let c = &self.cluster;
        let s = &self.stack;
        let o = &s.os_costs;
        let r = &s.raw;
        let d = &s.drive;
        let h = &self.device.hdd;
        let q = &self.device.ssd;
        let st = &self.study;
        let mut v = vec![
            ("sim", "osd_index", self.osd_index.to_string()),
            ("sim", "replay", self.replay.as_str().to_string()),
            ("sim", "stack", self.stack_name.clone()),
            ("sim", "device", self.device_name.clone()),
            ("workload", "kind", w.kind.to_string()),
            ("workload", "object_size", w.object_size.to_string()),
            ("workload", "object_count", w.object_count.to_string()),
            ("workload", "op_count", w.op_count.unwrap_or(0).to_string()),
            ("workload", "distribution", w.key_distribution.to_string()),
            ("workload", "threads", w.thread_count.to_string()),
            ("workload", "seed", w.seed.to_string()),
            ("workload", "think_time_us", w.think_time_us.to_string()),
            ("cluster", "data_shards", c.data_shards.to_string()),
            ("cluster", "parity_shards", c.parity_shards.to_string()),
            ("cluster", "num_osds", c.num_osds.to_string()),
            ("cluster", "num_nodes", c.num_nodes.to_string()),
            ("stack", "capacity_bytes", s.capacity_bytes.to_string()),
            ("stack", "dcache_entries", s.dcache_entries.to_string()),
            ("stack", "page_cache_bytes", s.page_cache_bytes.to_string()),
            ("stack", "dirty_ratio", s.dirty_ratio.to_string()),
            ("costs.os", "vfs_lookup_us", o.vfs_lookup_us.to_string()),
            ("costs.os", "vfs_miss_us", o.vfs_miss_us.to_string()),
            ("costs.os", "vfs_io_us", o.vfs_io_us.to_string()),
            ("costs.os", "fs_extent_us", o.fs_extent_us.to_string()),
            ("costs.os", "fs_meta_us", o.fs_meta_us.to_string()),
            ("costs.os", "block_bio_us", o.block_bio_us.to_string()),
            ("costs.os", "block_contention_us", o.block_contention_us.to_string()),
            ("costs.os", "list_key_us", o.list_key_us.to_string()),
            ("costs.raw", "block_bio_us", r.block_bio_us.to_string()),
            ("costs.raw", "block_contention_us", r.block_contention_us.to_string()),
            ("costs.raw", "append_region_bytes", r.append_region_bytes.to_string()),
        ];
        for (sec, p) in [("fs.ag-extent", &s.ag_extent), ("fs.simple-extent", &s.simple_extent)] {
            v.extend([
                (sec, "metadata_node_bytes", p.metadata_node_bytes.to_string()),
                (sec, "allocation_groups", p.allocation_groups.to_string()),
                (sec, "delayed_alloc_window", p.delayed_alloc_window.to_string()),
                (sec, "journal_write_bytes", p.journal_write_bytes.to_string()),
                (sec, "extent_max_bytes", p.extent_max_bytes.to_string()),
                (sec, "metadata_band_bytes", p.metadata_band_bytes.to_string()),
                (sec, "inode_bytes", p.inode_bytes.to_string()),
                (sec, "dirent_bytes", p.dirent_bytes.to_string()),
                (sec, "journal_bytes", p.journal_bytes.to_string()),
                (sec, "journal_every", p.journal_every.to_string()),
                (sec, "writeback_io_bytes", p.writeback_io_bytes.to_string()),
                (sec, "read_io_bytes", p.read_io_bytes.to_string()),
                (sec, "readahead_bytes", p.readahead_bytes.to_string()),
            ]);
        }
        v.extend([
            ("drive", "value_cap_bytes", d.value_cap_bytes.to_string()),
            ("drive", "hash_levels", d.hash_levels.to_string()),
            ("drive", "kv_lib_cost_us", d.kv_lib_cost_us.to_string()),
            ("drive", "indevice_index_cost_us", d.indevice_index_cost_us.to_string()),
            ("drive", "iterator_batch", d.iterator_batch.to_string()),
            ("drive", "iterator_entry_bytes", d.iterator_entry_bytes.to_string()),
            ("drive", "om_value_bytes", d.om_value_bytes.to_string()),
            ("drive", "hash_bucket_bits", d.hash_bucket_bits.to_string()),
            ("drive", "placement_zones", d.placement_zones.to_string()),
            ("drive", "index_region_bytes", d.index_region_bytes.to_string()),
            ("device.hdd", "avg_seek_us", h.avg_seek_us.to_string()),
            ("device.hdd", "rpm", h.rpm.to_string()),
            ("device.hdd", "transfer_mbps", h.transfer_mbps.to_string()),
            ("device.hdd", "per_cmd_us", h.per_cmd_us.to_string()),
            ("device.hdd", "nts_bytes", h.nts_bytes.to_string()),
            ("device.ssd", "per_cmd_us", q.per_cmd_us.to_string()),
            ("device.ssd", "transfer_mbps", q.transfer_mbps.to_string()),
            ("device.ssd", "channel_parallelism", q.channel_parallelism.to_string()),
            ("device.ssd", "nts_bytes", q.nts_bytes.to_string()),
            ("device.ssd", "bandwidth_cap_mbps", q.bandwidth_cap_mbps.to_string()),
            ("device.ssd", "queue_depth", q.queue_depth.to_string()),
            ("study", "io_sizes", join(&st.io_sizes)),
            ("study", "thread_counts", join(&st.thread_counts)),
            ("study", "ios_per_thread", st.ios_per_thread.to_string()),
            ("study", "saturation_fraction", st.saturation_fraction.to_string()),
            ("study", "reference_io_bytes", st.reference_io_bytes.to_string()),
            ("study", "reference_threads", st.reference_threads.to_string()),
            ("study", "reference_device", st.reference_device.clone()),
            ("study", "chain_object_size", st.chain_object_size.to_string()),
            ("study", "chain_object_count", st.chain_object_count.to_string()),
            ("study", "chain_device", st.chain_device.clone()),
            ("study", "enum_device", st.enum_device.clone()),
        ]);
        v
    }

    /// Sets one key; unknown sections or keys are errors.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        macro_rules! p {
            () => {
                parse(section, key, v)?
            };
        }
        match section {
            "sim" => match key {
                "osd_index" => self.osd_index = p!(),
                "replay" => self.replay = replay_mode(v)?,
                "stack" => self.stack_name = v.to_string(),
                "device" => self.device_name = v.to_string(),
                _ => return unknown(section, key),
            },
            "workload" => {
                let w = &mut self.workload;
                match key {
                    "kind" => {
                        w.kind = v.parse::<WorkloadKind>()?;
                    }
                    "object_size" => w.object_size = p!(),
                    "object_count" => w.object_count = p!(),
                    "op_count" => {
                        let n: u64 = p!();
                        w.op_count = (n > 0).then_some(n);
                    }
                    "distribution" => w.key_distribution = v.parse::<KeyDistribution>()?,
                    "threads" => w.thread_count = p!(),
                    "seed" => w.seed = p!(),
                    "think_time_us" => w.think_time_us = p!(),
                    _ => return unknown(section, key),
                }
            }
            "cluster" => {
                let c = &mut self.cluster;
                match key {
                    "data_shards" => c.data_shards = p!(),
                    "parity_shards" => c.parity_shards = p!(),
                    "num_osds" => c.num_osds = p!(),
                    "num_nodes" => c.num_nodes = p!(),
                    _ => return unknown(section, key),
                }
            }
            "stack" => {
                let s = &mut self.stack;
                match key {
                    "capacity_bytes" => s.capacity_bytes = p!(),
                    "dcache_entries" => s.dcache_entries = p!(),
                    "page_cache_bytes" => s.page_cache_bytes = p!(),
                    "dirty_ratio" => s.dirty_ratio = p!(),
                    _ => return unknown(section, key),
                }
            }
            "costs.os" => {
                let o = &mut self.stack.os_costs;
                match key {
                    "vfs_lookup_us" => o.vfs_lookup_us = p!(),
                    "vfs_miss_us" => o.vfs_miss_us = p!(),
                    "vfs_io_us" => o.vfs_io_us = p!(),
                    "fs_extent_us" => o.fs_extent_us = p!(),
                    "fs_meta_us" => o.fs_meta_us = p!(),
                    "block_bio_us" => o.block_bio_us = p!(),
                    "block_contention_us" => o.block_contention_us = p!(),
                    "list_key_us" => o.list_key_us = p!(),
                    _ => return unknown(section, key),
                }
            }
            "costs.raw" => {
                let r = &mut self.stack.raw;
                match key {
                    "block_bio_us" => r.block_bio_us = p!(),
                    "block_contention_us" => r.block_contention_us = p!(),
                    "append_region_bytes" => r.append_region_bytes = p!(),
                    _ => return unknown(section, key),
                }
            }
            "fs.ag-extent" | "fs.simple-extent" => {
                let f = if section == "fs.ag-extent" {
                    &mut self.stack.ag_extent
                } else {
                    &mut self.stack.simple_extent
                };
                match key {
                    "metadata_node_bytes" => f.metadata_node_bytes = p!(),
                    "allocation_groups" => f.allocation_groups = p!(),
                    "delayed_alloc_window" => f.delayed_alloc_window = p!(),
                    "journal_write_bytes" => f.journal_write_bytes = p!(),
                    "extent_max_bytes" => f.extent_max_bytes = p!(),
                    "metadata_band_bytes" => f.metadata_band_bytes = p!(),
                    "inode_bytes" => f.inode_bytes = p!(),
                    "dirent_bytes" => f.dirent_bytes = p!(),
                    "journal_bytes" => f.journal_bytes = p!(),
                    "journal_every" => f.journal_every = p!(),
                    "writeback_io_bytes" => f.writeback_io_bytes = p!(),
                    "read_io_bytes" => f.read_io_bytes = p!(),
                    "readahead_bytes" => f.readahead_bytes = p!(),
                    _ => return unknown(section, key),
                }
            }
            "drive" => {
                let d = &mut self.stack.drive;
                match key {
                    "value_cap_bytes" => d.value_cap_bytes = p!(),
                    "hash_levels" => d.hash_levels = p!(),
                    "kv_lib_cost_us" => d.kv_lib_cost_us = p!(),
                    "indevice_index_cost_us" => d.indevice_index_cost_us = p!(),
                    "iterator_batch" => d.iterator_batch = p!(),
                    "iterator_entry_bytes" => d.iterator_entry_bytes = p!(),
                    "om_value_bytes" => d.om_value_bytes = p!(),
                    "hash_bucket_bits" => d.hash_bucket_bits = p!(),
                    "placement_zones" => d.placement_zones = p!(),
                    "index_region_bytes" => d.index_region_bytes = p!(),
                    _ => return unknown(section, key),
                }
            }
            "device.hdd" => {
                let h = &mut self.device.hdd;
                match key {
                    "avg_seek_us" => h.avg_seek_us = p!(),
                    "rpm" => h.rpm = p!(),
                    "transfer_mbps" => h.transfer_mbps = p!(),
                    "per_cmd_us" => h.per_cmd_us = p!(),
                    "nts_bytes" => h.nts_bytes = p!(),
                    _ => return unknown(section, key),
                }
            }
            "device.ssd" => {
                let q = &mut self.device.ssd;
                match key {
                    "per_cmd_us" => q.per_cmd_us = p!(),
                    "transfer_mbps" => q.transfer_mbps = p!(),
                    "channel_parallelism" => q.channel_parallelism = p!(),
                    "nts_bytes" => q.nts_bytes = p!(),
                    "bandwidth_cap_mbps" => q.bandwidth_cap_mbps = p!(),
                    "queue_depth" => q.queue_depth = p!(),
                    _ => return unknown(section, key),
                }
            }
            "study" => {
                let st = &mut self.study;
                match key {
                    "io_sizes" => st.io_sizes = parse_list(section, key, v)?,
                    "thread_counts" => st.thread_counts = parse_list(section, key, v)?,
                    "ios_per_thread" => st.ios_per_thread = p!(),
                    "saturation_fraction" => st.saturation_fraction = p!(),
                    "reference_io_bytes" => st.reference_io_bytes = p!(),
                    "reference_threads" => st.reference_threads = p!(),
                    "reference_device" => st.reference_device = v.to_string(),
                    "chain_object_size" => st.chain_object_size = p!(),
                    "chain_object_count" => st.chain_object_count = p!(),
                    "chain_device" => st.chain_device = v.to_string(),
                    "enum_device" => st.enum_device = v.to_string(),
                    _ => return unknown(section, key),
                }
            }
            _ => return Err(Error::Config(format!("unknown section [{section}]"))),
        }
        Ok(())
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (sec, key, val) in self.entries() {
            if sec != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                current = sec;
            }
            out.push_str(&format!("{key} = {val}\n"));
        }
        out
    }

    /// Defaults overlaid with the given INI text.
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = SimConfig::default();
        for (sec, props) in ini.iter() {
            let Some(sec) = sec else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::Config(format!("key `{k}` outside any section")));
                }
                continue;
            };
            for (k, v) in props.iter() {
                cfg.set(sec, k, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ini_str(&text)
    }

    /// Loads `path`, else the file named by `IOSTACK_SIM_CONFIG`, else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        self.stack.validate()?;
        self.device.hdd.validate()?;
        self.device.ssd.validate()?;
        if self.osd_index >= self.cluster.num_osds {
            return Err(Error::Config(format!(
                "osd_index {} out of range for {} OSDs",
                self.osd_index, self.cluster.num_osds
            )));
        }
        let st = &self.study;
        if st.io_sizes.is_empty() || st.thread_counts.is_empty() || st.thread_counts.contains(&0) {
            return Err(Error::Config("study needs io_sizes and positive thread_counts".into()));
        }
        if !(0.0..=1.0).contains(&st.saturation_fraction) {
            return Err(Error::Config("saturation_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn unknown(section: &str, key: &str) -> Result<()> {
    Err(Error::Config(format!("unknown key `{key}` in [{section}]")))
}
