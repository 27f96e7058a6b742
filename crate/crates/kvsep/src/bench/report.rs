//! CSV output: `phases.csv`, `space.csv` and `gc_jobs.csv`.

use std::fs;
use std::path::Path;

use kvsep_core::gc::GcJobStats;

use super::runner::{PhaseReport, SpaceRow};
use crate::error::{Error, Result};
use crate::iostat::Activity;

pub const PHASE_COLUMNS: &[&str] = &[
    "phase",
    "ops",
    "seconds",
    "ops_per_sec",
    "logical_write_bytes",
    "reads",
    "read_hits",
    "scans",
    "foreground_read",
    "wal_write",
    "flush_read",
    "flush_write",
    "compaction_read",
    "compaction_write",
    "gc_read",
    "gc_lookup_read",
    "gc_write",
    "manifest_write",
    "engine_read",
    "engine_write",
    "process_read",
    "process_write",
    "flushes",
    "compactions",
    "trivial_moves",
    "gc_jobs",
    "gc_read_share",
    "gc_lookup_share",
    "gc_write_share",
    "gc_index_bytes_read",
    "gc_value_bytes_read",
    "gc_bytes_written",
    "gc_lookup_kv_block_reads",
    "delayed_writes",
    "halts",
    "write_stalls",
    "peak_disk_bytes",
    "max_polled_disk_bytes",
    "final_disk_bytes",
];

pub const SPACE_COLUMNS: &[&str] = &[
    "t_secs",
    "phase",
    "k_upper",
    "k_last",
    "valid",
    "exposed_garbage",
    "s_index",
    "s_value",
    "disk_bytes",
    "throttle",
];

pub const GC_COLUMNS: &[&str] = &[
    "job_id",
    "inputs",
    "outputs",
    "read_ns",
    "lookup_ns",
    "write_ns",
    "index_bytes_read",
    "value_bytes_read",
    "value_bytes_fetched",
    "bytes_written",
    "input_entries",
    "input_value_bytes",
    "survivor_entries",
    "survivor_bytes",
    "garbage_entries",
    "survivor_ratio",
    "temperature_overrides",
    "kv_block_reads_in_lookup",
];

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn opt_u(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn files(list: &[u64]) -> String {
    list.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
}

pub fn phase_row(r: &PhaseReport) -> Vec<String> {
    let io = &r.io;
    let lat = r.gc_latency;
    let sum = |f: fn(&GcJobStats) -> u64| r.gc_jobs.iter().map(f).sum::<u64>().to_string();
    vec![
        r.phase.clone(),
        r.ops.to_string(),
        format!("{:.3}", r.seconds),
        format!("{:.1}", r.ops_per_sec()),
        r.logical_write_bytes.to_string(),
        r.reads.to_string(),
        r.read_hits.to_string(),
        r.scans.to_string(),
        io.read(Activity::Foreground).to_string(),
        io.written(Activity::Wal).to_string(),
        io.read(Activity::Flush).to_string(),
        io.written(Activity::Flush).to_string(),
        io.read(Activity::Compaction).to_string(),
        io.written(Activity::Compaction).to_string(),
        io.read(Activity::Gc).to_string(),
        io.read(Activity::GcLookup).to_string(),
        io.written(Activity::Gc).to_string(),
        io.written(Activity::Manifest).to_string(),
        io.total_read().to_string(),
        io.total_written().to_string(),
        opt_u(r.process_read),
        opt_u(r.process_write),
        r.metrics.flushes.to_string(),
        r.metrics.compactions.to_string(),
        r.metrics.trivial_moves.to_string(),
        r.gc_jobs.len().to_string(),
        opt_f(lat.map(|l| l.read_share)),
        opt_f(lat.map(|l| l.lookup_share)),
        opt_f(lat.map(|l| l.write_share)),
        sum(|j| j.index_bytes_read),
        sum(|j| j.value_bytes_read),
        sum(|j| j.bytes_written),
        sum(|j| j.kv_block_reads_in_lookup),
        r.metrics.delayed_writes.to_string(),
        r.metrics.halts.to_string(),
        r.write_stalls.to_string(),
        r.peak_disk.to_string(),
        r.max_polled_disk.to_string(),
        r.final_disk.to_string(),
    ]
}

pub fn space_row(s: &SpaceRow) -> Vec<String> {
    vec![
        format!("{:.3}", s.t_secs),
        s.phase.clone(),
        s.k_upper.to_string(),
        s.k_last.to_string(),
        s.valid.to_string(),
        s.exposed_garbage.to_string(),
        opt_f(s.index_space_amp),
        opt_f(s.value_space_amp),
        s.disk_bytes.to_string(),
        s.throttle.to_string(),
    ]
}

pub fn gc_row(j: &GcJobStats) -> Vec<String> {
    vec![
        j.job_id.to_string(),
        files(&j.inputs),
        files(&j.outputs),
        j.read_ns.to_string(),
        j.lookup_ns.to_string(),
        j.write_ns.to_string(),
        j.index_bytes_read.to_string(),
        j.value_bytes_read.to_string(),
        j.value_bytes_fetched.to_string(),
        j.bytes_written.to_string(),
        j.input_entries.to_string(),
        j.input_value_bytes.to_string(),
        j.survivor_entries.to_string(),
        j.survivor_bytes.to_string(),
        j.garbage_entries.to_string(),
        format!("{:.4}", j.survivor_ratio()),
        j.temperature_overrides.to_string(),
        j.kv_block_reads_in_lookup.to_string(),
    ]
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the three CSV files into `dir`, creating it if needed.
pub fn emit_report(dir: &Path, phases: &[PhaseReport], space: &[SpaceRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("phases.csv"), PHASE_COLUMNS, phases.iter().map(phase_row))?;
    write_csv(&dir.join("space.csv"), SPACE_COLUMNS, space.iter().map(space_row))?;
    write_csv(
        &dir.join("gc_jobs.csv"),
        GC_COLUMNS,
        phases.iter().flat_map(|p| p.gc_jobs.iter()).map(gc_row),
    )
}
