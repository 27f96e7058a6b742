//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs are deterministic: maintenance is inline on a single client thread
//! and every workload is seeded. Set `ACCEPTANCE_STRICT=1` to make any
//! failure, including the documented ones, fail the process.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kvsep::bench::workload::{key_space_for, zipf_top_mass, KeySampler};
use kvsep::bench::{run_phase, KeyDist, PhaseReport, Phase, RunOptions, SpaceRow, ValueDist, WorkloadSpec};
use kvsep::{Db, EngineConfig, Error, FailPoint};
use kvsep_core::vstore::Temperature;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const MIB: u64 = 1 << 20;
const SEED: u64 = 42;
const LOAD_BYTES: u64 = 200 * MIB;
const UPDATE_BYTES: u64 = 600 * MIB;

const C1_OPS: usize = 200_000;
const C1_MAX_SECS: f64 = 120.0;
/// Garbage fraction the lazy-read comparison is seeded at.
const C2_GC_THRESHOLD: f64 = 0.5;
const C2_MIN_RATIO: f64 = 1.5;
const C4_MAX_S_INDEX: f64 = 1.3;
const C5_MAX_S_VALUE: f64 = 2.3;
const C5_MAX_EXPOSED: f64 = 0.35;
const C6_QUOTA_FACTOR: f64 = 1.5;
const C7_MIN_GAP: f64 = 1.2;
const C7_MAX_ABLATED_GAP: f64 = 1.1;
const C8_LOAD_BYTES: u64 = 100 * MIB;
const C8_MAX_OVERHEAD: f64 = 0.05;
const C9_SUM_TOLERANCE: f64 = 0.005;
const C10_SAMPLES: usize = 1_000_000;
const C10_MEAN_TOLERANCE: f64 = 0.10;
const C10_ZIPF_TOLERANCE: f64 = 0.15;
const C11_WARMUP_OPS: usize = 3_000;
const C11_MAX_OPS: usize = 60_000;

/// Criteria whose failure is recorded in the decisions ledger and does not
/// fail the default run.
const KNOWN_FAILURES: &[u8] = &[];

struct Outcome {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: u8, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, name, pass, detail }
}

fn desk(f: impl FnOnce(&mut EngineConfig)) -> EngineConfig {
    let mut c = EngineConfig {
        background_threads: 0,
        ..EngineConfig::desk()
    };
    f(&mut c);
    c
}

fn small(f: impl FnOnce(&mut EngineConfig)) -> EngineConfig {
    let mut c = EngineConfig {
        memtable_size: 32 << 10,
        ksst_size: 32 << 10,
        vsst_size: 128 << 10,
        level_base_size: 128 << 10,
        block_cache_size: 1 << 20,
        dropcache_size: 8 << 10,
        background_threads: 0,
        sync_files: false,
        ..EngineConfig::default()
    };
    f(&mut c);
    c
}

struct Run {
    db: Db,
    _dir: tempfile::TempDir,
    phases: Vec<PhaseReport>,
    space: Vec<SpaceRow>,
}

impl Run {
    fn update(&self) -> &PhaseReport {
        &self.phases[1]
    }

    /// Samples from the second half of the update phase.
    fn steady(&self) -> Vec<&SpaceRow> {
        let upd: Vec<&SpaceRow> = self.space.iter().filter(|r| r.phase == "update").collect();
        upd[upd.len() / 2..].to_vec()
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Load then Zipf(0.99) updates, the bench's default two-phase run.
fn desk_run(cfg: EngineConfig, value_dist: &str, update_bytes: u64) -> Run {
    let dir = tempfile::tempdir().expect("tempdir");
    let db = Db::open(dir.path(), cfg).expect("open");
    let value_dist: ValueDist = value_dist.parse().expect("value dist");
    let key_space = key_space_for(LOAD_BYTES, &value_dist);
    let opts = RunOptions {
        threads: 1,
        space_interval: Some(Duration::from_millis(500)),
        ..RunOptions::default()
    };
    let epoch = Instant::now();
    let mut space = Vec::new();
    let mut phases = Vec::new();
    let plan = [
        (Phase::Load, KeyDist::Uniform, LOAD_BYTES),
        (Phase::Update, KeyDist::Zipf(0.99), update_bytes),
    ];
    for (i, (phase, key_dist, bytes)) in plan.into_iter().enumerate() {
        let spec = WorkloadSpec {
            phase,
            op_count: None,
            byte_target: Some(bytes),
            key_space,
            key_dist,
            value_dist,
            seed: SEED + i as u64,
        };
        phases.push(run_phase(&db, &spec, &opts, epoch, &mut space).expect("phase"));
    }
    Run {
        db,
        _dir: dir,
        phases,
        space,
    }
}

fn c1_oracle() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(dir.path(), small(|_| {})).unwrap();
    let mut rng = StdRng::seed_from_u64(SEED);
    let mut model: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();
    let key = |i: u32| format!("k{i:06}").into_bytes();
    let start = Instant::now();
    let mut mismatches = 0u64;
    let mut reads = 0u64;
    for n in 0..C1_OPS {
        let k = key(rng.random_range(0..5_000));
        match rng.random_range(0..100) {
            0..40 => {
                let len = if rng.random_bool(0.5) {
                    rng.random_range(1..512)
                } else {
                    rng.random_range(512..4096)
                };
                let mut v = format!("{n}:").into_bytes();
                v.resize(len.max(v.len()), b'a' + (n % 26) as u8);
                db.put(&k, &v).unwrap();
                model.insert(k, v);
            }
            40..50 => {
                db.delete(&k).unwrap();
                model.remove(&k);
            }
            50..85 => {
                reads += 1;
                if db.get(&k).unwrap() != model.get(&k).cloned() {
                    mismatches += 1;
                }
            }
            _ => {
                reads += 1;
                let limit = rng.random_range(1..40);
                let want: Vec<_> = model.range(k.clone()..).take(limit).map(|(a, b)| (a.clone(), b.clone())).collect();
                if db.scan(&k, limit).unwrap() != want {
                    mismatches += 1;
                }
            }
        }
    }
    let m = db.metrics();
    let gc = db.gc_jobs().len();
    drop(db);
    let db = Db::open(dir.path(), small(|_| {})).unwrap();
    let all = db.scan(b"", usize::MAX).unwrap();
    let want: Vec<_> = model.into_iter().collect();
    if all != want {
        mismatches += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        1,
        "oracle equivalence",
        mismatches == 0 && secs < C1_MAX_SECS && gc > 0,
        format!(
            "{C1_OPS} ops, {reads} checked reads, {mismatches} mismatches, {} compactions, {gc} gc jobs, {secs:.1} s (limit {C1_MAX_SECS} s)",
            m.compactions
        ),
    )
}

fn c2_lazy_read(lazy: &Run, eager: &Run) -> Outcome {
    let jobs = &lazy.update().gc_jobs;
    let exact = jobs.iter().filter(|j| j.value_bytes_read == j.survivor_bytes).count();
    let lazy_bytes = lazy.update().gc_value_bytes_read();
    let eager_bytes = eager.update().gc_value_bytes_read();
    let ratio = eager_bytes as f64 / lazy_bytes.max(1) as f64;
    let garbage = 1.0
        - jobs.iter().map(|j| j.survivor_bytes).sum::<u64>() as f64
            / jobs.iter().map(|j| j.input_value_bytes).sum::<u64>().max(1) as f64;
    outcome(
        2,
        "lazy-read exactness",
        !jobs.is_empty() && exact == jobs.len() && ratio >= C2_MIN_RATIO,
        format!(
            "{exact}/{} jobs read exactly their survivors; value bytes read {eager_bytes} eager vs {lazy_bytes} lazy = {ratio:.2}x (min {C2_MIN_RATIO}x); input garbage {garbage:.2}",
            jobs.len()
        ),
    )
}

fn c3_kf_only(fixed16: &Run) -> Outcome {
    let clean = fixed16.update().gc_kv_reads_in_lookup();
    let split_off = desk_run(desk(|c| c.dtable_split = false), "mixed", 200 * MIB);
    let mixed = split_off.update().gc_kv_reads_in_lookup();
    outcome(
        3,
        "kf-only purity",
        clean == 0 && mixed > 0 && !split_off.update().gc_jobs.is_empty(),
        format!("kv blocks read by GC-Lookup: {clean} with split tables (want 0), {mixed} without (want > 0)"),
    )
}

fn c4_index_amp() -> Outcome {
    let steady = |r: &Run| mean(r.steady().iter().filter_map(|s| s.index_space_amp));
    let on = steady(&desk_run(desk(|_| {}), "fixed:8K", UPDATE_BYTES));
    let off = steady(&desk_run(desk(|c| c.compensation = false), "fixed:8K", UPDATE_BYTES));
    outcome(
        4,
        "index space amplification",
        on <= C4_MAX_S_INDEX && off > on,
        format!("steady S_index {on:.3} compensated (max {C4_MAX_S_INDEX}), {off:.3} uncompensated"),
    )
}

fn c5_total_amp(mixed: &Run) -> Outcome {
    let steady = mixed.steady();
    let s_value = mean(steady.iter().filter_map(|s| s.value_space_amp));
    let exposed = mean(steady.iter().map(|s| s.exposed_garbage as f64 / s.valid.max(1) as f64));
    outcome(
        5,
        "total space amplification",
        s_value <= C5_MAX_S_VALUE && exposed <= C5_MAX_EXPOSED,
        format!(
            "steady S_value {s_value:.3} (max {C5_MAX_S_VALUE}), G_E/D {exposed:.3} (max {C5_MAX_EXPOSED}) over {} samples",
            steady.len()
        ),
    )
}

fn c6_quota() -> Outcome {
    let quota = (LOAD_BYTES as f64 * C6_QUOTA_FACTOR) as u64;
    let mut pass = true;
    let mut parts = Vec::new();
    for threshold in [0.2, 0.5] {
        let r = desk_run(
            desk(|c| {
                c.space_quota = Some(quota);
                c.gc_garbage_threshold = threshold;
            }),
            "mixed",
            UPDATE_BYTES,
        );
        let limit = quota + r.db.config().vsst_size;
        let polled = r.phases.iter().map(|p| p.max_polled_disk).max().unwrap_or(0);
        let m = &r.update().metrics;
        r.db.wait_for_idle().unwrap();
        let mut reopened = "after idle";
        if r.db.throttle_state() != kvsep::ThrottleState::Open {
            // hidden garbage only becomes collectable once compaction exposes it
            r.db.compact_all().unwrap();
            r.db.wait_for_idle().unwrap();
            reopened = "after compaction";
        }
        let open = r.db.throttle_state() == kvsep::ThrottleState::Open;
        if !open {
            reopened = "never";
        }
        pass &= polled <= limit && open;
        parts.push(format!(
            "threshold {threshold}: max polled {polled} (limit {limit}), {} delayed, {} halts, open {reopened}",
            m.delayed_writes, m.halts
        ));
    }
    outcome(6, "quota enforcement", pass, parts.join("; "))
}

/// Mean garbage ratio of hot and cold live value files after draining
/// maintenance, pausing GC and exposing hidden garbage by compaction.
fn settled_gap(r: &Run) -> (f64, f64, usize, usize) {
    r.db.wait_for_idle().unwrap();
    r.db.set_gc_paused(true);
    r.db.compact_all().unwrap();
    let live: Vec<_> = r.db.value_files().into_iter().filter(|m| m.is_live()).collect();
    let side = |t: Temperature| {
        let v: Vec<f64> = live.iter().filter(|m| m.temperature == t).map(|m| m.garbage_ratio()).collect();
        (mean(v.iter().copied()), v.len())
    };
    let (hot, nh) = side(Temperature::Hot);
    let (cold, nc) = side(Temperature::Cold);
    (hot, cold, nh, nc)
}

fn c7_hot_cold(mixed: &Run) -> Outcome {
    let (hot, cold, nh, nc) = settled_gap(mixed);
    let gap = hot / cold;
    let ablated = desk_run(desk(|c| c.dropcache = false), "mixed", UPDATE_BYTES);
    let (ahot, acold, anh, anc) = settled_gap(&ablated);
    let agap = ahot / acold;
    outcome(
        7,
        "hot/cold effectiveness",
        gap >= C7_MIN_GAP && agap < C7_MAX_ABLATED_GAP,
        format!(
            "hot {hot:.3} ({nh} files) vs cold {cold:.3} ({nc}) = {gap:.2}x (min {C7_MIN_GAP}x); unrouted {ahot:.3} ({anh}) vs {acold:.3} ({anc}) = {agap:.2}x (max {C7_MAX_ABLATED_GAP}x)"
        ),
    )
}

fn c8_rtable_overhead() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(dir.path(), desk(|_| {})).unwrap();
    let value_dist = ValueDist::pareto(1024.0).unwrap();
    let spec = WorkloadSpec {
        phase: Phase::Load,
        op_count: None,
        byte_target: Some(C8_LOAD_BYTES),
        key_space: key_space_for(C8_LOAD_BYTES, &value_dist),
        key_dist: KeyDist::Uniform,
        value_dist,
        seed: SEED,
    };
    let opts = RunOptions {
        threads: 1,
        space_interval: None,
        ..RunOptions::default()
    };
    run_phase(&db, &spec, &opts, Instant::now(), &mut Vec::new()).unwrap();
    db.flush().unwrap();
    let live: Vec<_> = db.value_files().into_iter().filter(|m| m.is_live()).collect();
    let file: u64 = live.iter().map(|m| m.file_size).sum();
    let records: u64 = live.iter().map(|m| m.total_value_bytes).sum();
    let entries: u64 = live.iter().map(|m| m.total_entries).sum();
    let overhead = (file - records) as f64 / records.max(1) as f64;
    outcome(
        8,
        "value table overhead",
        entries > 0 && overhead <= C8_MAX_OVERHEAD,
        format!(
            "{} files, {entries} records, index bytes / record bytes = {:.2}% (max {:.0}%)",
            live.len(),
            overhead * 100.0,
            C8_MAX_OVERHEAD * 100.0
        ),
    )
}

fn c9_latency(fixed16: &Run) -> Outcome {
    match fixed16.update().gc_latency {
        Some(l) => {
            let sum = l.read_share + l.lookup_share + l.write_share;
            outcome(
                9,
                "gc latency breakdown",
                (sum - 1.0).abs() <= C9_SUM_TOLERANCE && l.read_share > l.lookup_share,
                format!(
                    "read {:.1}% lookup {:.1}% write {:.1}%, sum {:.2}%",
                    l.read_share * 100.0,
                    l.lookup_share * 100.0,
                    l.write_share * 100.0,
                    sum * 100.0
                ),
            )
        }
        None => outcome(9, "gc latency breakdown", false, "no gc jobs ran".into()),
    }
}

fn c10_generators() -> Outcome {
    let mut rng = StdRng::seed_from_u64(SEED);
    let mut sample_mean = |d: &ValueDist| mean((0..C10_SAMPLES).map(|_| f64::from(d.sample(&mut rng))));
    let mixed = sample_mean(&ValueDist::mixed_default());
    let pareto = sample_mean(&ValueDist::pareto(1024.0).unwrap());
    let n = key_space_for(LOAD_BYTES, &ValueDist::mixed_default());
    let sampler = KeySampler::new(KeyDist::Zipf(0.99), n).unwrap();
    let top = (0..C10_SAMPLES).filter(|_| sampler.sample(&mut rng) == 0).count() as f64 / C10_SAMPLES as f64;
    let analytic = zipf_top_mass(n, 0.99);
    let within = |x: f64, want: f64, tol: f64| (x - want).abs() <= tol * want;
    let mixed_want = 8.25 * 1024.0;
    outcome(
        10,
        "workload generators",
        within(mixed, mixed_want, C10_MEAN_TOLERANCE)
            && within(pareto, 1024.0, C10_MEAN_TOLERANCE)
            && within(top, analytic, C10_ZIPF_TOLERANCE),
        format!(
            "mixed mean {mixed:.0} B (want {mixed_want:.0} +-10%), pareto mean {pareto:.0} B (want 1024 +-10%), zipf top rank {top:.5} vs {analytic:.5} over {n} keys (+-15%)"
        ),
    )
}

/// Writes until the injected crash fires, reopens, and checks that every
/// acknowledged write survived. The write that crashed may or may not.
fn kill_point(fp: FailPoint) -> Result<String, String> {
    let dir = tempfile::tempdir().unwrap();
    let key = |i: u32| format!("key{i:05}").into_bytes();
    let mut rng = StdRng::seed_from_u64(SEED ^ fp as u64);
    let mut model: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();
    let mut pending = None;
    {
        let db = Db::open(dir.path(), small(|_| {})).unwrap();
        for n in 0..C11_MAX_OPS {
            if n == C11_WARMUP_OPS {
                db.inject_failpoint(fp);
            }
            let k = key(rng.random_range(0..600));
            let v: Option<Vec<u8>> = if rng.random_bool(0.1) {
                None
            } else {
                let mut v = format!("{n}:").into_bytes();
                v.resize(rng.random_range(600..1400), b'a' + (n % 26) as u8);
                Some(v)
            };
            let r = match &v {
                Some(v) => db.put(&k, v),
                None => db.delete(&k),
            };
            match r {
                Ok(()) => {
                    match v {
                        Some(v) => model.insert(k, v),
                        None => model.remove(&k),
                    };
                }
                Err(Error::InjectedCrash(_)) => {
                    pending = Some((k, v));
                    break;
                }
                Err(e) => return Err(format!("unexpected error: {e}")),
            }
        }
        if pending.is_none() {
            return Err("kill point never reached".into());
        }
    }
    let (pk, pv) = pending.unwrap();
    for round in 0..2 {
        let db = Db::open(dir.path(), small(|_| {})).map_err(|e| format!("reopen: {e}"))?;
        for i in 0..600 {
            let k = key(i);
            let got = db.get(&k).map_err(|e| e.to_string())?;
            let want = model.get(&k).cloned();
            let ok = got == want || (round == 0 && k == pk && got == pv);
            if !ok {
                return Err(format!("key {i} lost after recovery"));
            }
            if round == 0 && k == pk {
                // settle the ambiguous write either way
                match got {
                    Some(v) => model.insert(k, v),
                    None => model.remove(&k),
                };
            }
        }
        db.check_integrity().map_err(|e| format!("integrity: {e}"))?;
        for n in 0..500 {
            let k = key(rng.random_range(0..600));
            let mut v = format!("after{round}:{n}").into_bytes();
            v.resize(700, b'z');
            db.put(&k, &v).map_err(|e| e.to_string())?;
            model.insert(k, v);
        }
    }
    let db = Db::open(dir.path(), small(|_| {})).map_err(|e| e.to_string())?;
    let report = db.check_integrity().map_err(|e| format!("integrity: {e}"))?;
    Ok(format!("{} live / {} retired value files", report.live_value_files, report.retired_value_files))
}

fn c11_crash() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for fp in FailPoint::ALL {
        match kill_point(fp) {
            Ok(_) => parts.push(format!("{} ok", fp.name())),
            Err(e) => {
                pass = false;
                parts.push(format!("{} FAILED ({e})", fp.name()));
            }
        }
    }
    outcome(11, "crash safety", pass, parts.join(", "))
}

fn main() -> ExitCode {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let start = Instant::now();
    let mut results = Vec::new();
    let mut report = |o: Outcome| {
        let tag = match (o.pass, KNOWN_FAILURES.contains(&o.id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} criterion {:>2} {}: {}", o.id, o.name, o.detail);
        results.push(o);
    };

    report(c1_oracle());
    let fixed16 = desk_run(desk(|c| c.gc_garbage_threshold = C2_GC_THRESHOLD), "fixed:16K", UPDATE_BYTES);
    let eager = desk_run(
        desk(|c| {
            c.gc_garbage_threshold = C2_GC_THRESHOLD;
            c.lazy_read = false;
        }),
        "fixed:16K",
        UPDATE_BYTES,
    );
    report(c2_lazy_read(&fixed16, &eager));
    drop(eager);
    report(c3_kf_only(&fixed16));
    report(c4_index_amp());
    let mixed = desk_run(desk(|_| {}), "mixed", UPDATE_BYTES);
    report(c5_total_amp(&mixed));
    report(c6_quota());
    report(c7_hot_cold(&mixed));
    drop(mixed);
    report(c8_rtable_overhead());
    report(c9_latency(&fixed16));
    drop(fixed16);
    report(c10_generators());
    report(c11_crash());

    let failed: Vec<u8> = results.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    let unexpected = failed.iter().any(|id| strict || !KNOWN_FAILURES.contains(id));
    println!(
        "acceptance: {}/{} passed in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if unexpected {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
