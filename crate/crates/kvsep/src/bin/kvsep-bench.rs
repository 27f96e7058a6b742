use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use kvsep::bench::workload::key_space_for;
use kvsep::bench::{emit_report, run_phase, KeyDist, Phase, RunOptions, ValueDist, WorkloadSpec};
use kvsep::config::parse_size;
use kvsep::{Db, EngineConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scale {
    /// Engine sizes divided by 512.
    Desk,
    /// `EngineConfig::default()` sizes.
    Full,
}

/// Drives the engine through load / update / read / scan / YCSB-style
/// phases and writes CSV reports.
#[derive(Debug, Parser)]
#[command(name = "kvsep-bench", version)]
struct Args {
    /// Database directory.
    #[arg(long)]
    dir: PathBuf,

    /// Comma-separated phases: load, update, read, scan, mixed:R, ycsb-a..ycsb-f.
    #[arg(long, default_value = "load,update")]
    phase: String,

    /// Operation count for phases without a byte target.
    #[arg(long, default_value_t = 100_000)]
    ops: u64,

    /// Logical bytes written by update and mixed phases.
    #[arg(long, default_value = "600M", value_parser = parse_size)]
    bytes: u64,

    /// Logical bytes written by the load phase.
    #[arg(long, default_value = "200M", value_parser = parse_size)]
    load_bytes: u64,

    /// fixed:N | mixed[:LO,HI,LARGE,FRAC] | pareto:MEAN
    #[arg(long, default_value = "mixed")]
    value_dist: ValueDist,

    /// uniform | zipf:THETA
    #[arg(long, default_value = "zipf:0.99")]
    key_dist: KeyDist,

    /// Key-space size; derived from --load-bytes when omitted.
    #[arg(long)]
    keys: Option<u64>,

    #[arg(long, default_value_t = 16)]
    threads: usize,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Absolute size (e.g. 300M) or a multiple of --load-bytes (e.g. 1.5x).
    #[arg(long)]
    space_quota: Option<String>,

    #[arg(long)]
    gc_threshold: Option<f64>,

    #[arg(long, value_enum)]
    readahead: Option<OnOff>,

    #[arg(long)]
    disable_compensation: bool,

    #[arg(long)]
    disable_lazy_read: bool,

    #[arg(long)]
    disable_dtable_split: bool,

    #[arg(long)]
    disable_dropcache: bool,

    /// Directory for phases.csv, space.csv and gc_jobs.csv.
    #[arg(long)]
    report: Option<PathBuf>,

    /// Engine config file (`key = value` lines) applied over --scale.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "desk")]
    scale: Scale,

    /// Seconds between space samples; 0 disables them.
    #[arg(long, default_value_t = 1.0)]
    sample_secs: f64,
}

fn engine_config(a: &Args) -> Result<EngineConfig, String> {
    let base = match a.scale {
        Scale::Desk => EngineConfig::desk(),
        Scale::Full => EngineConfig::default(),
    };
    let mut c = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            EngineConfig::parse(&text, base).map_err(|e| e.to_string())?
        }
        None => base,
    };
    if let Some(q) = &a.space_quota {
        c.space_quota = Some(match q.strip_suffix('x') {
            Some(m) => {
                let m: f64 = m.parse().map_err(|_| format!("bad quota multiple `{q}`"))?;
                (a.load_bytes as f64 * m) as u64
            }
            None => parse_size(q)?,
        });
    }
    if let Some(t) = a.gc_threshold {
        c.gc_garbage_threshold = t;
        c.gc_aggressive_threshold = c.gc_aggressive_threshold.min(t);
    }
    if let Some(r) = a.readahead {
        c.gc_readahead = matches!(r, OnOff::On);
    }
    c.compensation &= !a.disable_compensation;
    c.lazy_read &= !a.disable_lazy_read;
    c.dtable_split &= !a.disable_dtable_split;
    c.dropcache &= !a.disable_dropcache;
    c.validate().map_err(|e| e.to_string())?;
    Ok(c)
}

fn run(a: Args) -> Result<(), String> {
    let cfg = engine_config(&a)?;
    let phases: Vec<Phase> = a
        .phase
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()?;
    let keys = a.keys.unwrap_or_else(|| key_space_for(a.load_bytes, &a.value_dist));
    let db = Db::open(&a.dir, cfg).map_err(|e| e.to_string())?;
    let opts = RunOptions {
        threads: a.threads,
        space_interval: (a.sample_secs > 0.0).then(|| std::time::Duration::from_secs_f64(a.sample_secs)),
        ..RunOptions::default()
    };
    let epoch = Instant::now();
    let mut reports = Vec::new();
    let mut space = Vec::new();
    for (i, phase) in phases.into_iter().enumerate() {
        let (op_count, byte_target) = match phase {
            Phase::Load => (None, Some(a.load_bytes)),
            Phase::Update | Phase::Mixed { .. } => (None, Some(a.bytes)),
            _ => (Some(a.ops), None),
        };
        let spec = WorkloadSpec {
            phase,
            op_count,
            byte_target,
            key_space: keys,
            key_dist: if phase == Phase::Load { KeyDist::Uniform } else { a.key_dist },
            value_dist: a.value_dist,
            seed: a.seed.wrapping_add(i as u64),
        };
        let r = run_phase(&db, &spec, &opts, epoch, &mut space).map_err(|e| e.to_string())?;
        eprintln!(
            "{:<10} {:>9} ops {:>8.1} s {:>10.0} ops/s  gc jobs {:>4}  disk {:>6.1} MiB",
            r.phase,
            r.ops,
            r.seconds,
            r.ops_per_sec(),
            r.gc_jobs.len(),
            r.final_disk as f64 / (1 << 20) as f64,
        );
        reports.push(r);
    }
    db.wait_for_idle().map_err(|e| e.to_string())?;
    if let Some(dir) = &a.report {
        emit_report(dir, &reports, &space).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
