use std::time::{Duration, Instant};

use kvsep::bench::report::{GC_COLUMNS, PHASE_COLUMNS, SPACE_COLUMNS};
use kvsep::bench::workload::{key_space_for, partition, zipf_top_mass, KeySampler};
use kvsep::bench::{emit_report, run_phase, KeyDist, Op, Phase, RunOptions, ValueDist, WorkloadSpec};
use kvsep::{Db, EngineConfig};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn spec(phase: Phase, ops: u64) -> WorkloadSpec {
    WorkloadSpec {
        phase,
        op_count: Some(ops),
        byte_target: None,
        key_space: 500,
        key_dist: KeyDist::Zipf(0.99),
        value_dist: ValueDist::mixed_default(),
        seed: 7,
    }
}

#[test]
fn same_seed_same_stream() {
    let a = spec(Phase::Ycsb('a'), 5000).generate().unwrap();
    assert_eq!(a, spec(Phase::Ycsb('a'), 5000).generate().unwrap());
    let mut other = spec(Phase::Ycsb('a'), 5000);
    other.seed = 8;
    assert_ne!(a, other.generate().unwrap());

    // splitting across clients keeps every op exactly once
    let parts = partition(&a, 3);
    let mut ids: Vec<u64> = parts.iter().flatten().map(|(i, _)| *i).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..5000).collect::<Vec<_>>());
}

#[test]
fn load_covers_key_space_once() {
    let mut s = spec(Phase::Load, u64::MAX);
    s.op_count = None;
    let ops = s.generate().unwrap();
    let mut ranks: Vec<u64> = ops
        .iter()
        .map(|op| match op {
            Op::Put { rank, .. } => *rank,
            other => panic!("{other:?}"),
        })
        .collect();
    ranks.sort_unstable();
    assert_eq!(ranks, (0..500).collect::<Vec<_>>());
}

#[test]
fn byte_target_stops_phase() {
    let mut s = spec(Phase::Update, u64::MAX);
    s.op_count = None;
    s.byte_target = Some(10 << 20);
    let ops = s.generate().unwrap();
    let written: u64 = ops.iter().map(Op::write_bytes).sum();
    let last = ops.last().unwrap().write_bytes();
    assert!(written >= 10 << 20 && written - last < 10 << 20);
}

#[test]
fn distribution_means() {
    let mut rng = StdRng::seed_from_u64(1);
    for (d, want) in [
        (ValueDist::mixed_default(), 8.25 * 1024.0),
        (ValueDist::pareto(1024.0).unwrap(), 1024.0),
        ("fixed:16K".parse().unwrap(), 16384.0),
    ] {
        assert!((d.mean() - want).abs() < want * 0.03, "{d:?}");
        let n = 200_000;
        let m = (0..n).map(|_| f64::from(d.sample(&mut rng))).sum::<f64>() / n as f64;
        assert!((m - want).abs() < want * 0.05, "{d:?}: {m}");
    }
    let sampler = KeySampler::new(KeyDist::Zipf(0.99), 10_000).unwrap();
    let n = 200_000;
    let top = (0..n).filter(|_| sampler.sample(&mut rng) == 0).count() as f64 / n as f64;
    let want = zipf_top_mass(10_000, 0.99);
    assert!((top - want).abs() < want * 0.1, "{top} vs {want}");
}

#[test]
fn parsers_round_trip() {
    for p in ["load", "update", "read", "scan", "mixed:0.5", "ycsb-a", "ycsb-f"] {
        assert_eq!(p.parse::<Phase>().unwrap().to_string(), p);
    }
    assert!("ycsb-g".parse::<Phase>().is_err());
    assert!("mixed:2".parse::<Phase>().is_err());
    assert_eq!("zipf:0.99".parse::<KeyDist>().unwrap(), KeyDist::Zipf(0.99));
    assert_eq!("fixed:8K".parse::<ValueDist>().unwrap(), ValueDist::Fixed(8192));
    assert!("pareto:0".parse::<ValueDist>().is_err());
    assert_eq!(key_space_for(1 << 20, &ValueDist::Fixed(1000)), 1024);
}

#[test]
fn report_files_have_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EngineConfig {
        memtable_size: 64 << 10,
        ksst_size: 32 << 10,
        vsst_size: 256 << 10,
        level_base_size: 128 << 10,
        background_threads: 0,
        sync_files: false,
        ..EngineConfig::default()
    };
    let db = Db::open(dir.path().join("db"), cfg).unwrap();
    let opts = RunOptions {
        threads: 2,
        space_interval: Some(Duration::from_millis(1)),
        ..RunOptions::default()
    };
    let epoch = Instant::now();
    let mut space = Vec::new();
    let mut reports = Vec::new();
    for (phase, ops) in [(Phase::Load, None), (Phase::Update, Some(3000)), (Phase::Read, Some(500))] {
        let s = WorkloadSpec {
            phase,
            op_count: ops,
            byte_target: None,
            key_space: 300,
            key_dist: if phase == Phase::Load { KeyDist::Uniform } else { KeyDist::Zipf(0.99) },
            value_dist: ValueDist::mixed_default(),
            seed: 3,
        };
        reports.push(run_phase(&db, &s, &opts, epoch, &mut space).unwrap());
    }
    assert_eq!(reports[2].reads, 500);
    assert_eq!(reports[2].read_hits, 500);
    let out = dir.path().join("report");
    emit_report(&out, &reports, &space).unwrap();
    for (name, cols, rows) in [
        ("phases.csv", PHASE_COLUMNS, reports.len()),
        ("space.csv", SPACE_COLUMNS, space.len()),
        ("gc_jobs.csv", GC_COLUMNS, reports.iter().map(|r| r.gc_jobs.len()).sum()),
    ] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), cols.join(","));
        assert_eq!(lines.count(), rows, "{name}");
    }
}
