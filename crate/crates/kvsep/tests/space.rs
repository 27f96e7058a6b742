use kvsep::{Db, EngineConfig, ThrottleState};

fn config(quota: Option<u64>) -> EngineConfig {
    EngineConfig {
        memtable_size: 64 << 10,
        ksst_size: 32 << 10,
        vsst_size: 256 << 10,
        level_base_size: 128 << 10,
        block_cache_size: 1 << 20,
        background_threads: 0,
        sync_files: false,
        space_quota: quota,
        ..EngineConfig::default()
    }
}

fn key(i: u32) -> Vec<u8> {
    format!("key{i:06}").into_bytes()
}

fn value(i: u32, round: u32) -> Vec<u8> {
    let mut v = format!("{i}:{round}:").into_bytes();
    v.resize(2000, b'a' + (round % 26) as u8);
    v
}

#[test]
fn stats_track_valid_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(dir.path(), config(None)).unwrap();
    db.set_gc_paused(true);
    for i in 0..1000 {
        db.put(&key(i), &value(i, 0)).unwrap();
    }
    db.flush().unwrap();
    db.compact_all().unwrap();
    let s = db.space_stats().unwrap();
    assert_eq!(s.valid, 1000 * 2017);
    assert_eq!(s.exposed_garbage, 0);
    assert!(s.total_disk_bytes >= s.value_file_bytes);
    assert!(s.value_file_bytes >= s.valid);

    for i in 0..500 {
        db.put(&key(i), &value(i, 1)).unwrap();
    }
    db.flush().unwrap();
    db.compact_all().unwrap();
    let s = db.space_stats().unwrap();
    // a full compaction exposes every overwritten value
    assert_eq!(s.valid, 1000 * 2017);
    assert_eq!(s.exposed_garbage, 500 * 2017);
    assert_eq!(s.hidden_garbage_measured(), s.value_file_bytes - s.valid - s.exposed_garbage);
    let amp = s.value_space_amp().unwrap();
    assert!(amp >= 1.5, "{amp}");
}

#[test]
fn quota_bounds_disk_and_reopens() {
    let dataset = 400 * 2000;
    let quota = dataset * 3 / 2;
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(dir.path(), config(Some(quota))).unwrap();
    let mut max_disk = 0;
    for round in 0..20 {
        for i in 0..400 {
            db.put(&key(i), &value(i, round)).unwrap();
            max_disk = max_disk.max(db.disk_usage());
        }
    }
    db.wait_for_idle().unwrap();
    let m = db.metrics();
    assert!(m.delayed_writes > 0 || max_disk < quota * 7 / 8);
    assert!(max_disk <= quota + db.config().vsst_size, "{max_disk} > {quota}");
    if db.throttle_state() != ThrottleState::Open {
        // hidden garbage only becomes collectable once compaction exposes it
        db.compact_all().unwrap();
        db.wait_for_idle().unwrap();
    }
    assert_eq!(db.throttle_state(), ThrottleState::Open);
    for i in 0..400 {
        assert_eq!(db.get(&key(i)).unwrap(), Some(value(i, 19)));
    }
}

#[test]
fn throttle_state_follows_usage() {
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(dir.path(), config(Some(10 << 20))).unwrap();
    assert_eq!(db.throttle_state_at(0), ThrottleState::Open);
    assert_eq!(db.throttle_state_at(10 << 20), ThrottleState::Halted);
    assert_ne!(db.throttle_state_at((10 << 20) - (64 << 10)), ThrottleState::Open);

    let db2_dir = tempfile::tempdir().unwrap();
    let unlimited = Db::open(db2_dir.path(), config(None)).unwrap();
    assert_eq!(unlimited.throttle_state_at(u64::MAX), ThrottleState::Open);
}
