use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;

use kvsep::{Db, EngineConfig, Error, FailPoint};

fn config() -> EngineConfig {
    EngineConfig {
        memtable_size: 16 << 10,
        ksst_size: 16 << 10,
        vsst_size: 64 << 10,
        level_base_size: 64 << 10,
        block_cache_size: 1 << 20,
        background_threads: 0,
        sync_files: false,
        ..EngineConfig::default()
    }
}

fn key(i: u32) -> Vec<u8> {
    format!("k{i:05}").into_bytes()
}

fn value(i: u32, round: u32) -> Vec<u8> {
    let mut v = format!("{i}/{round}/").into_bytes();
    v.resize(500 + (i % 7) as usize * 50, b'x');
    v
}

/// Writes rounds of overwrites until the failpoint fires. Returns the
/// acknowledged state and the key of the write that crashed.
fn write_until_crash(db: &Db, fp: FailPoint) -> (BTreeMap<Vec<u8>, Vec<u8>>, Vec<u8>) {
    let mut model = BTreeMap::new();
    for round in 0..200 {
        if round == 2 {
            db.inject_failpoint(fp);
        }
        for i in 0..200 {
            match db.put(&key(i), &value(i, round)) {
                Ok(()) => {
                    model.insert(key(i), value(i, round));
                }
                Err(Error::InjectedCrash(_)) => return (model, key(i)),
                Err(e) => panic!("{e}"),
            }
        }
    }
    panic!("{} never fired", fp.name());
}

#[test]
fn every_kill_point_recovers_acknowledged_writes() {
    for fp in FailPoint::ALL {
        let dir = tempfile::tempdir().unwrap();
        let (model, crashed) = {
            let db = Db::open(dir.path(), config()).unwrap();
            let r = write_until_crash(&db, fp);
            assert!(db.is_poisoned(), "{}", fp.name());
            r
        };
        let db = Db::open(dir.path(), config()).unwrap();
        for (k, v) in &model {
            let got = db.get(k).unwrap();
            if *k != crashed {
                assert_eq!(got.as_ref(), Some(v), "{} lost {:?}", fp.name(), k);
            }
        }
        db.check_integrity().unwrap();
    }
}

#[test]
fn poisoned_db_rejects_writes() {
    let dir = tempfile::tempdir().unwrap();
    let db = Db::open(dir.path(), config()).unwrap();
    db.put(b"a", b"1").unwrap();
    db.inject_failpoint(FailPoint::WalAfterAppend);
    assert!(matches!(db.put(b"b", b"2"), Err(Error::InjectedCrash(_))));
    assert!(db.put(b"c", b"3").is_err());
    drop(db);
    let db = Db::open(dir.path(), config()).unwrap();
    assert_eq!(db.get(b"a").unwrap().as_deref(), Some(&b"1"[..]));
    // appended before the crash, so it is durable
    assert_eq!(db.get(b"b").unwrap().as_deref(), Some(&b"2"[..]));
    assert_eq!(db.get(b"c").unwrap(), None);
}

#[test]
fn garbage_after_wal_tail_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    {
        let db = Db::open(dir.path(), config()).unwrap();
        for i in 0..20 {
            db.put(&key(i), &value(i, 0)).unwrap();
        }
    }
    let wal = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "wal"))
        .max()
        .unwrap();
    OpenOptions::new().append(true).open(&wal).unwrap().write_all(&[0xAB; 37]).unwrap();
    let db = Db::open(dir.path(), config()).unwrap();
    for i in 0..20 {
        assert_eq!(db.get(&key(i)).unwrap(), Some(value(i, 0)));
    }
    db.put(b"later", b"v").unwrap();
    drop(db);
    let db = Db::open(dir.path(), config()).unwrap();
    assert_eq!(db.get(b"later").unwrap().as_deref(), Some(&b"v"[..]));
}

#[test]
fn repeated_reopen_after_gc_keeps_chains_resolvable() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = BTreeMap::new();
    for round in 0..6 {
        let db = Db::open(dir.path(), config()).unwrap();
        for i in 0..300 {
            if (i + round) % 5 == 0 {
                db.delete(&key(i)).unwrap();
                model.remove(&key(i));
            } else {
                db.put(&key(i), &value(i, round)).unwrap();
                model.insert(key(i), value(i, round));
            }
        }
        db.wait_for_idle().unwrap();
        db.check_integrity().unwrap();
    }
    let db = Db::open(dir.path(), config()).unwrap();
    let all: BTreeMap<_, _> = db.scan(b"", usize::MAX).unwrap().into_iter().collect();
    assert_eq!(all, model);
}
