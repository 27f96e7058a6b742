use kvsep::{Db, EngineConfig};

fn config(f: impl FnOnce(&mut EngineConfig)) -> EngineConfig {
    let mut c = EngineConfig {
        memtable_size: 64 << 10,
        ksst_size: 32 << 10,
        vsst_size: 256 << 10,
        level_base_size: 128 << 10,
        block_cache_size: 1 << 20,
        background_threads: 0,
        sync_files: false,
        ..EngineConfig::default()
    };
    f(&mut c);
    c
}

fn key(i: u32) -> Vec<u8> {
    format!("key{i:06}").into_bytes()
}

fn value(i: u32, round: u32) -> Vec<u8> {
    let mut v = format!("{i}:{round}:").into_bytes();
    v.resize(1000, b'a' + (round % 26) as u8);
    v
}

/// Loads 400 keys, flushes, then overwrites every other key so the first
/// value files are half garbage. Returns the live files from the load.
fn half_garbage(db: &Db) -> Vec<u64> {
    db.set_gc_paused(true);
    for i in 0..400 {
        db.put(&key(i), &value(i, 0)).unwrap();
    }
    db.flush().unwrap();
    let loaded: Vec<u64> = db.value_files().iter().filter(|m| m.is_live()).map(|m| m.file_number).collect();
    for i in (0..400).step_by(2) {
        db.put(&key(i), &value(i, 1)).unwrap();
    }
    db.flush().unwrap();
    db.compact_all().unwrap();
    loaded
}

fn check(db: &Db) {
    for i in 0..400 {
        let round = if i % 2 == 0 { 1 } else { 0 };
        assert_eq!(db.get(&key(i)).unwrap(), Some(value(i, round)), "key {i}");
    }
    db.check_integrity().unwrap();
}

#[test]
fn lazy_read_fetches_only_survivors() {
    for direct in [true, false] {
        let dir = tempfile::tempdir().unwrap();
        let db = Db::open(dir.path(), config(|c| c.gc_direct_io = direct)).unwrap();
        let files = half_garbage(&db);
        let job = db.gc_files(&files).unwrap();
        assert_eq!(job.survivor_entries, 200);
        assert_eq!(job.garbage_entries, 200);
        assert_eq!(job.value_bytes_read, job.survivor_bytes);
        assert!(job.value_bytes_fetched >= job.value_bytes_read);
        check(&db);
    }
}

#[test]
fn eager_read_fetches_whole_files() {
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(dir.path(), config(|c| c.lazy_read = false)).unwrap();
    let files = half_garbage(&db);
    let job = db.gc_files(&files).unwrap();
    assert!(job.value_bytes_read >= job.input_value_bytes);
    assert!(job.value_bytes_read > job.survivor_bytes * 19 / 10);
    check(&db);
}

#[test]
fn kf_only_lookup_ignores_inline_blocks() {
    for split in [true, false] {
        let dir = tempfile::tempdir().unwrap();
        let db = Db::open(dir.path(), config(|c| c.dtable_split = split)).unwrap();
        db.set_gc_paused(true);
        for i in 0..2000 {
            // interleave small inline values with separated ones
            let v = if i % 2 == 0 { value(i, 0) } else { b"tiny".to_vec() };
            db.put(&key(i), &v).unwrap();
        }
        db.flush().unwrap();
        db.compact_all().unwrap();
        drop(db);
        let db = Db::open(dir.path(), config(|c| c.dtable_split = split)).unwrap();
        db.set_gc_paused(true);
        let files: Vec<u64> = db.value_files().iter().filter(|m| m.is_live()).map(|m| m.file_number).collect();
        let job = db.gc_files(&files).unwrap();
        if split {
            assert_eq!(job.kv_block_reads_in_lookup, 0);
        } else {
            assert!(job.kv_block_reads_in_lookup > 0);
        }
    }
}

#[test]
fn retired_files_resolve_through_successors() {
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(dir.path(), config(|_| {})).unwrap();
    let files = half_garbage(&db);
    let job = db.gc_files(&files).unwrap();
    assert!(!job.outputs.is_empty());
    let metas = db.value_files();
    for f in &files {
        assert!(metas.iter().all(|m| m.file_number != *f || !m.is_live()));
    }
    check(&db);
    drop(db);
    let db = Db::open(dir.path(), config(|_| {})).unwrap();
    check(&db);
}

#[test]
fn threshold_triggers_background_collection() {
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(dir.path(), config(|c| c.gc_garbage_threshold = 0.3)).unwrap();
    for round in 0..8 {
        for i in 0..400 {
            db.put(&key(i), &value(i, round)).unwrap();
        }
    }
    db.wait_for_idle().unwrap();
    assert!(!db.gc_jobs().is_empty());
    for i in 0..400 {
        assert_eq!(db.get(&key(i)).unwrap(), Some(value(i, 7)));
    }
}
