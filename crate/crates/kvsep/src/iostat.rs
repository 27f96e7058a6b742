//! Per-engine I/O accounting by activity and block kind.
//!
//! The activity is a thread-local set with [`IoScope`]; every file read
//! or write done through this crate is charged to the current activity.

use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

use kvsep_core::format::BlockKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activity {
    Foreground,
    Wal,
    Flush,
    Compaction,
    Gc,
    GcLookup,
    Manifest,
    Recovery,
}

impl Activity {
    pub const ALL: [Activity; 8] = [
        Activity::Foreground,
        Activity::Wal,
        Activity::Flush,
        Activity::Compaction,
        Activity::Gc,
        Activity::GcLookup,
        Activity::Manifest,
        Activity::Recovery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activity::Foreground => "foreground",
            Activity::Wal => "wal",
            Activity::Flush => "flush",
            Activity::Compaction => "compaction",
            Activity::Gc => "gc",
            Activity::GcLookup => "gc_lookup",
            Activity::Manifest => "manifest",
            Activity::Recovery => "recovery",
        }
    }
}

const NA: usize = Activity::ALL.len();
const NK: usize = BlockKind::ALL.len();

thread_local! {
    static CURRENT: Cell<Activity> = const { Cell::new(Activity::Foreground) };
}

pub fn current() -> Activity {
    CURRENT.with(|c| c.get())
}

/// Sets the current thread's activity until dropped.
pub struct IoScope {
    prev: Activity,
}

impl IoScope {
    pub fn enter(a: Activity) -> Self {
        let prev = CURRENT.with(|c| c.replace(a));
        Self { prev }
    }
}

impl Drop for IoScope {
    fn drop(&mut self) {
        CURRENT.with(|c| c.set(self.prev));
    }
}

#[derive(Debug, Default)]
pub struct IoStats {
    read_bytes: [AtomicU64; NA],
    write_bytes: [AtomicU64; NA],
    /// Block accesses, cache hits included.
    accesses: [[AtomicU64; NK]; NA],
    /// Bytes fetched from disk, by block kind.
    disk_bytes: [[AtomicU64; NK]; NA],
    cache_hits: [AtomicU64; NA],
    cache_misses: [AtomicU64; NA],
}

/// Plain copy of the counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IoSnapshot {
    pub read_bytes: [u64; NA],
    pub write_bytes: [u64; NA],
    pub accesses: [[u64; NK]; NA],
    pub disk_bytes: [[u64; NK]; NA],
    pub cache_hits: [u64; NA],
    pub cache_misses: [u64; NA],
}

impl IoStats {
    pub fn record_read(&self, kind: BlockKind, bytes: u64) {
        let a = current() as usize;
        self.read_bytes[a].fetch_add(bytes, Ordering::Relaxed);
        self.disk_bytes[a][kind.index()].fetch_add(bytes, Ordering::Relaxed);
    }

    /// Reads outside any block structure (WAL and manifest replay).
    pub fn record_raw_read(&self, bytes: u64) {
        self.read_bytes[current() as usize].fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn record_write(&self, bytes: u64) {
        self.write_bytes[current() as usize].fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn record_access(&self, kind: BlockKind) {
        self.accesses[current() as usize][kind.index()].fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_cache(&self, hit: bool) {
        let a = current() as usize;
        if hit {
            self.cache_hits[a].fetch_add(1, Ordering::Relaxed);
        } else {
            self.cache_misses[a].fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn snapshot(&self) -> IoSnapshot {
        let mut s = IoSnapshot::default();
        for a in 0..NA {
            s.read_bytes[a] = self.read_bytes[a].load(Ordering::Relaxed);
            s.write_bytes[a] = self.write_bytes[a].load(Ordering::Relaxed);
            s.cache_hits[a] = self.cache_hits[a].load(Ordering::Relaxed);
            s.cache_misses[a] = self.cache_misses[a].load(Ordering::Relaxed);
            for k in 0..NK {
                s.accesses[a][k] = self.accesses[a][k].load(Ordering::Relaxed);
                s.disk_bytes[a][k] = self.disk_bytes[a][k].load(Ordering::Relaxed);
            }
        }
        s
    }
}

impl IoSnapshot {
    pub fn read(&self, a: Activity) -> u64 {
        self.read_bytes[a as usize]
    }

    pub fn written(&self, a: Activity) -> u64 {
        self.write_bytes[a as usize]
    }

    pub fn accesses(&self, a: Activity, k: BlockKind) -> u64 {
        self.accesses[a as usize][k.index()]
    }

    pub fn disk(&self, a: Activity, k: BlockKind) -> u64 {
        self.disk_bytes[a as usize][k.index()]
    }

    pub fn total_read(&self) -> u64 {
        self.read_bytes.iter().sum()
    }

    pub fn total_written(&self) -> u64 {
        self.write_bytes.iter().sum()
    }

    pub fn cache_hit_ratio(&self, a: Activity) -> f64 {
        let h = self.cache_hits[a as usize];
        let m = self.cache_misses[a as usize];
        if h + m == 0 {
            0.0
        } else {
            h as f64 / (h + m) as f64
        }
    }

    /// Counter-wise `self - earlier`.
    pub fn since(&self, earlier: &IoSnapshot) -> IoSnapshot {
        let mut d = IoSnapshot::default();
        for a in 0..NA {
            d.read_bytes[a] = self.read_bytes[a] - earlier.read_bytes[a];
            d.write_bytes[a] = self.write_bytes[a] - earlier.write_bytes[a];
            d.cache_hits[a] = self.cache_hits[a] - earlier.cache_hits[a];
            d.cache_misses[a] = self.cache_misses[a] - earlier.cache_misses[a];
            for k in 0..NK {
                d.accesses[a][k] = self.accesses[a][k] - earlier.accesses[a][k];
                d.disk_bytes[a][k] = self.disk_bytes[a][k] - earlier.disk_bytes[a][k];
            }
        }
        d
    }
}

/// Process-wide syscall byte counters from `/proc/self/io` (`rchar`, `wchar`).
pub fn process_io() -> Option<(u64, u64)> {
    let text = std::fs::read_to_string("/proc/self/io").ok()?;
    let mut r = None;
    let mut w = None;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("rchar:") {
            r = v.trim().parse().ok();
        } else if let Some(v) = line.strip_prefix("wchar:") {
            w = v.trim().parse().ok();
        }
    }
    Some((r?, w?))
}
