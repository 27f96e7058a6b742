//! Engine configuration and its plain-text `key = value` form.

use std::path::Path;
use std::time::Duration;

use crate::error::{Error, Result};

const KIB: u64 = 1 << 10;
const MIB: u64 = 1 << 20;
const GIB: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Values of at least this many bytes are stored in value files.
    pub separation_threshold: usize,
    pub memtable_size: u64,
    pub ksst_size: u64,
    pub vsst_size: u64,
    pub block_cache_size: u64,
    pub high_priority_ratio: f64,
    pub dropcache_size: u64,
    pub gc_garbage_threshold: f64,
    pub gc_aggressive_threshold: f64,
    pub space_quota: Option<u64>,
    pub soft_ratio: f64,
    pub max_write_delay: Duration,
    pub write_stall_timeout: Duration,
    pub level_multiplier: u64,
    pub level_base_size: u64,
    pub l0_trigger: usize,
    /// Writers wait while L0 holds this many files.
    pub l0_stop_trigger: usize,
    pub bloom_bits_per_key: usize,
    pub partition_size: usize,
    pub block_size: usize,
    /// 0 runs flush, compaction and GC inline on the writing thread.
    pub background_threads: usize,
    pub max_immutable_memtables: usize,
    pub sync_wal: bool,
    pub sync_files: bool,
    pub manifest_rotate_size: u64,
    pub gc_enabled: bool,
    pub gc_readahead: bool,
    pub gc_readahead_size: u64,
    /// GC record reads bypass the page cache.
    pub gc_direct_io: bool,
    /// Ablation switches.
    pub compensation: bool,
    pub lazy_read: bool,
    pub dtable_split: bool,
    pub dropcache: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            separation_threshold: 512,
            memtable_size: 64 * MIB,
            ksst_size: 64 * MIB,
            vsst_size: 256 * MIB,
            block_cache_size: GIB,
            high_priority_ratio: 0.5,
            dropcache_size: 16 * MIB,
            gc_garbage_threshold: 0.2,
            gc_aggressive_threshold: 0.05,
            space_quota: None,
            soft_ratio: 0.9,
            max_write_delay: Duration::from_millis(2),
            write_stall_timeout: Duration::from_secs(30),
            level_multiplier: 10,
            level_base_size: 256 * MIB,
            l0_trigger: 4,
            l0_stop_trigger: 20,
            bloom_bits_per_key: 10,
            partition_size: 4096,
            block_size: 4096,
            background_threads: 1,
            max_immutable_memtables: 4,
            sync_wal: false,
            sync_files: true,
            manifest_rotate_size: 4 * MIB,
            gc_enabled: true,
            gc_readahead: false,
            gc_readahead_size: 256 * KIB,
            gc_direct_io: true,
            compensation: true,
            lazy_read: true,
            dtable_split: true,
            dropcache: true,
        }
    }
}

impl EngineConfig {
    /// Default sizes divided by 512, for runs of a few hundred MiB.
    pub fn desk() -> Self {
        let d = Self::default();
        Self {
            memtable_size: d.memtable_size / 512,
            ksst_size: d.ksst_size / 512,
            vsst_size: d.vsst_size / 512,
            block_cache_size: 2 * MIB,
            dropcache_size: d.dropcache_size / 512,
            level_base_size: d.level_base_size / 512,
            manifest_rotate_size: MIB,
            sync_files: false,
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("memtable_size", self.memtable_size),
            ("ksst_size", self.ksst_size),
            ("vsst_size", self.vsst_size),
            ("level_base_size", self.level_base_size),
            ("block_size", self.block_size as u64),
            ("partition_size", self.partition_size as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if !(0.0 < self.gc_aggressive_threshold
            && self.gc_aggressive_threshold <= self.gc_garbage_threshold
            && self.gc_garbage_threshold < 1.0)
        {
            return Err(Error::Config(
                "need 0 < gc_aggressive_threshold <= gc_garbage_threshold < 1".into(),
            ));
        }
        if !(0.0 < self.soft_ratio && self.soft_ratio <= 1.0) {
            return Err(Error::Config("soft_ratio must be in (0, 1]".into()));
        }
        if self.level_multiplier < 2 {
            return Err(Error::Config("level_multiplier must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.high_priority_ratio) {
            return Err(Error::Config("high_priority_ratio must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, Self::default())
    }

    /// Applies `key = value` lines on top of `base`. `#` starts a comment.
    pub fn parse(text: &str, base: Self) -> Result<Self> {
        let mut c = base;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            c.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "separation_threshold" => self.separation_threshold = parse_size(v)? as usize,
            "memtable_size" => self.memtable_size = parse_size(v)?,
            "ksst_size" => self.ksst_size = parse_size(v)?,
            "vsst_size" => self.vsst_size = parse_size(v)?,
            "block_cache_size" => self.block_cache_size = parse_size(v)?,
            "high_priority_ratio" => self.high_priority_ratio = parse_f64(v)?,
            "dropcache_size" => self.dropcache_size = parse_size(v)?,
            "gc_garbage_threshold" => self.gc_garbage_threshold = parse_f64(v)?,
            "gc_aggressive_threshold" => self.gc_aggressive_threshold = parse_f64(v)?,
            "space_quota" => {
                self.space_quota = match v {
                    "unlimited" | "none" => None,
                    _ => Some(parse_size(v)?),
                }
            }
            "soft_ratio" => self.soft_ratio = parse_f64(v)?,
            "max_write_delay_us" => self.max_write_delay = Duration::from_micros(parse_size(v)?),
            "write_stall_timeout_ms" => {
                self.write_stall_timeout = Duration::from_millis(parse_size(v)?)
            }
            "level_multiplier" => self.level_multiplier = parse_size(v)?,
            "level_base_size" => self.level_base_size = parse_size(v)?,
            "l0_trigger" => self.l0_trigger = parse_size(v)? as usize,
            "l0_stop_trigger" => self.l0_stop_trigger = parse_size(v)? as usize,
            "bloom_bits_per_key" => self.bloom_bits_per_key = parse_size(v)? as usize,
            "partition_size" => self.partition_size = parse_size(v)? as usize,
            "block_size" => self.block_size = parse_size(v)? as usize,
            "background_threads" => self.background_threads = parse_size(v)? as usize,
            "max_immutable_memtables" => self.max_immutable_memtables = parse_size(v)? as usize,
            "sync_wal" => self.sync_wal = parse_bool(v)?,
            "sync_files" => self.sync_files = parse_bool(v)?,
            "gc_direct_io" => self.gc_direct_io = parse_bool(v)?,
            "manifest_rotate_size" => self.manifest_rotate_size = parse_size(v)?,
            "gc_enabled" => self.gc_enabled = parse_bool(v)?,
            "gc_readahead" => self.gc_readahead = parse_bool(v)?,
            "gc_readahead_size" => self.gc_readahead_size = parse_size(v)?,
            "compensation" => self.compensation = parse_bool(v)?,
            "lazy_read" => self.lazy_read = parse_bool(v)?,
            "dtable_split" => self.dtable_split = parse_bool(v)?,
            "dropcache" => self.dropcache = parse_bool(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

/// Parses `4096`, `64K`, `64KiB`, `1.5G` and similar.
pub fn parse_size(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim();
    let split = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let mult = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => KIB,
        "m" | "mb" | "mib" => MIB,
        "g" | "gb" | "gib" => GIB,
        other => return Err(format!("unknown size unit `{other}`")),
    };
    if num.contains('.') {
        let f: f64 = num.parse().map_err(|_| format!("bad number `{num}`"))?;
        Ok((f * mult as f64) as u64)
    } else {
        let n: u64 = num.parse().map_err(|_| format!("bad number `{num}`"))?;
        n.checked_mul(mult).ok_or_else(|| "size overflows".to_string())
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse().map_err(|_| format!("bad number `{s}`"))
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("bad boolean `{s}`")),
    }
}
