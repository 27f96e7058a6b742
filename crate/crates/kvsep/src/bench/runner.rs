//! Drives one workload phase against an open engine.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use kvsep_core::gc::{gc_latency_report, GcJobStats, LatencyReport};

use super::workload::{encode_key, fill_value, partition, Op, WorkloadSpec};
use crate::db::{Db, Metrics};
use crate::error::{Error, Result};
use crate::iostat::{process_io, Activity, IoSnapshot};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub threads: usize,
    /// Period of full space-stat samples; `None` disables them.
    pub space_interval: Option<Duration>,
    /// Period of disk-usage polls.
    pub poll_interval: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 16,
            space_interval: Some(Duration::from_secs(1)),
            poll_interval: Duration::from_millis(10),
        }
    }
}

/// One row of the space time series.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceRow {
    pub t_secs: f64,
    pub phase: String,
    pub k_upper: u64,
    pub k_last: u64,
    pub valid: u64,
    pub exposed_garbage: u64,
    pub index_space_amp: Option<f64>,
    pub value_space_amp: Option<f64>,
    pub disk_bytes: u64,
    pub throttle: &'static str,
}

impl SpaceRow {
    pub fn sample(db: &Db, phase: &str, t_secs: f64) -> Result<Self> {
        let s = db.space_stats()?;
        Ok(Self {
            t_secs,
            phase: phase.to_string(),
            k_upper: s.k_upper,
            k_last: s.k_last,
            valid: s.valid,
            exposed_garbage: s.exposed_garbage,
            index_space_amp: s.index_space_amp(),
            value_space_amp: s.value_space_amp(),
            disk_bytes: s.total_disk_bytes,
            throttle: db.throttle_state_at(s.total_disk_bytes).as_str(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct PhaseReport {
    pub phase: String,
    pub ops: u64,
    pub seconds: f64,
    pub logical_write_bytes: u64,
    pub reads: u64,
    pub read_hits: u64,
    pub scans: u64,
    pub scanned_pairs: u64,
    pub write_stalls: u64,
    /// Engine I/O during the phase, by activity.
    pub io: IoSnapshot,
    /// Process-level `rchar` / `wchar` deltas when available.
    pub process_read: Option<u64>,
    pub process_write: Option<u64>,
    pub metrics: Metrics,
    pub gc_jobs: Vec<GcJobStats>,
    pub gc_latency: Option<LatencyReport>,
    pub peak_disk: u64,
    pub max_polled_disk: u64,
    pub final_disk: u64,
}

impl PhaseReport {
    pub fn ops_per_sec(&self) -> f64 {
        if self.seconds > 0.0 {
            self.ops as f64 / self.seconds
        } else {
            0.0
        }
    }

    pub fn gc_value_bytes_read(&self) -> u64 {
        self.gc_jobs.iter().map(|j| j.value_bytes_read).sum()
    }

    pub fn gc_kv_reads_in_lookup(&self) -> u64 {
        self.gc_jobs.iter().map(|j| j.kv_block_reads_in_lookup).sum()
    }

    pub fn engine_read_bytes(&self) -> u64 {
        self.io.total_read()
    }

    pub fn engine_write_bytes(&self) -> u64 {
        self.io.total_written()
    }

    pub fn read_by(&self, a: Activity) -> u64 {
        self.io.read(a)
    }

    pub fn written_by(&self, a: Activity) -> u64 {
        self.io.written(a)
    }
}

#[derive(Default)]
struct ClientTotals {
    ops: AtomicU64,
    written: AtomicU64,
    reads: AtomicU64,
    hits: AtomicU64,
    scans: AtomicU64,
    scanned: AtomicU64,
}

fn run_client(db: &Db, ops: &[(u64, Op)], totals: &ClientTotals) -> Result<()> {
    let (mut n, mut written, mut reads, mut hits, mut scans, mut scanned) = (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    let mut buf = Vec::new();
    // stalls are counted by the engine and are not fatal here
    let put = |rank: u64, id: u64, len: u32, buf: &mut Vec<u8>| -> Result<()> {
        fill_value(buf, id, len as usize);
        match db.put(&encode_key(rank), buf) {
            Err(Error::WriteStalled) => Ok(()),
            r => r,
        }
    };
    for &(id, op) in ops {
        match op {
            Op::Put { rank, value_len } => put(rank, id, value_len, &mut buf)?,
            Op::Get { rank } => {
                reads += 1;
                if db.get(&encode_key(rank))?.is_some() {
                    hits += 1;
                }
            }
            Op::Scan { rank, len } => {
                scans += 1;
                scanned += db.scan(&encode_key(rank), len as usize)?.len() as u64;
            }
            Op::ReadModifyWrite { rank, value_len } => {
                reads += 1;
                if db.get(&encode_key(rank))?.is_some() {
                    hits += 1;
                }
                put(rank, id, value_len, &mut buf)?;
            }
        }
        written += op.write_bytes();
        n += 1;
    }
    totals.ops.fetch_add(n, Ordering::Relaxed);
    totals.written.fetch_add(written, Ordering::Relaxed);
    totals.reads.fetch_add(reads, Ordering::Relaxed);
    totals.hits.fetch_add(hits, Ordering::Relaxed);
    totals.scans.fetch_add(scans, Ordering::Relaxed);
    totals.scanned.fetch_add(scanned, Ordering::Relaxed);
    Ok(())
}

/// Runs the phase with `opts.threads` clients. Space samples are appended
/// to `space`, timestamped relative to `epoch`.
pub fn run_phase(
    db: &Db,
    spec: &WorkloadSpec,
    opts: &RunOptions,
    epoch: Instant,
    space: &mut Vec<SpaceRow>,
) -> Result<PhaseReport> {
    let ops = spec.generate().map_err(Error::Config)?;
    run_ops(db, &spec.phase.to_string(), &ops, opts, epoch, space)
}

pub fn run_ops(
    db: &Db,
    phase: &str,
    ops: &[Op],
    opts: &RunOptions,
    epoch: Instant,
    space: &mut Vec<SpaceRow>,
) -> Result<PhaseReport> {
    let parts = partition(ops, opts.threads);
    let io0 = db.io_stats();
    let proc0 = process_io();
    let m0 = db.metrics();
    let jobs0 = db.gc_jobs().len();
    db.reset_peak_disk_usage();
    let totals = ClientTotals::default();
    let done = AtomicBool::new(false);
    let max_polled = AtomicU64::new(db.disk_usage());
    let start = Instant::now();

    let (client_result, samples) = thread::scope(|s| {
        let sampler = s.spawn(|| -> Result<Vec<SpaceRow>> {
            let mut rows = Vec::new();
            let mut next_sample = Instant::now();
            while !done.load(Ordering::Acquire) {
                max_polled.fetch_max(db.disk_usage(), Ordering::Relaxed);
                if let Some(iv) = opts.space_interval {
                    if Instant::now() >= next_sample {
                        if db.is_poisoned() {
                            break;
                        }
                        rows.push(SpaceRow::sample(db, phase, epoch.elapsed().as_secs_f64())?);
                        next_sample = Instant::now() + iv;
                    }
                }
                thread::sleep(opts.poll_interval);
            }
            Ok(rows)
        });
        let handles: Vec<_> = parts
            .iter()
            .map(|p| s.spawn(|| run_client(db, p, &totals)))
            .collect();
        let mut res = Ok(());
        for h in handles {
            let r = h.join().expect("client thread panicked");
            if res.is_ok() {
                res = r;
            }
        }
        done.store(true, Ordering::Release);
        (res, sampler.join().expect("sampler panicked"))
    });
    client_result?;
    space.extend(samples?);
    let seconds = start.elapsed().as_secs_f64();
    max_polled.fetch_max(db.disk_usage(), Ordering::Relaxed);

    let io = db.io_stats().since(&io0);
    let proc1 = process_io();
    let (process_read, process_write) = match (proc0, proc1) {
        (Some(a), Some(b)) => (Some(b.0 - a.0), Some(b.1 - a.1)),
        _ => (None, None),
    };
    let metrics = db.metrics().since(&m0);
    let gc_jobs: Vec<GcJobStats> = db.gc_jobs()[jobs0..].to_vec();
    let gc_latency = gc_latency_report(&gc_jobs).ok();
    Ok(PhaseReport {
        phase: phase.to_string(),
        ops: totals.ops.load(Ordering::Relaxed),
        seconds,
        logical_write_bytes: totals.written.load(Ordering::Relaxed),
        reads: totals.reads.load(Ordering::Relaxed),
        read_hits: totals.hits.load(Ordering::Relaxed),
        scans: totals.scans.load(Ordering::Relaxed),
        scanned_pairs: totals.scanned.load(Ordering::Relaxed),
        write_stalls: metrics.stall_timeouts,
        io,
        process_read,
        process_write,
        metrics,
        gc_jobs,
        gc_latency,
        peak_disk: db.peak_disk_usage(),
        max_polled_disk: max_polled.load(Ordering::Relaxed),
        final_disk: db.disk_usage(),
    })
}
