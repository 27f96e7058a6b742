//! The engine: write path, reads, recovery and maintenance scheduling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use kvsep_core::dropcache::DropCache;
use kvsep_core::format::{
    DTableBuilder, DTableOptions, DTableReader, LookupMode, RTableBuilder, RTableOptions, RTableReader,
};
use kvsep_core::gc::{successor_temperature, GcJobStats, GcPolicy};
use kvsep_core::levels::{compensated_size, FileMeta, LevelConfig, NUM_LEVELS};
use kvsep_core::manifest::{EditItem, VersionEdit, VersionState};
use kvsep_core::merge::MergeIter;
use kvsep_core::space::{SpaceStats, Throttle, ThrottleState};
use kvsep_core::vstore::{Temperature, VsstMeta};
use kvsep_core::wal::{scan_log, WalKind};
use kvsep_core::{EntryValue, IndexEntry};

use crate::cache::BlockCache;
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::file::{file_path, parse_file_name, DiskUsage, FileEnv, FileKind, FileSink, TableFile, CURRENT};
use crate::iostat::{Activity, IoScope, IoSnapshot, IoStats};
use crate::log::{load_manifest, ManifestWriter, WalWriter};
use crate::memtable::Memtable;
use crate::version::{KTable, VTable, Version};

mod gc;

const TEMPERATURES: [Temperature; 2] = [Temperature::Hot, Temperature::Cold];

fn slot(t: Temperature) -> usize {
    match t {
        Temperature::Hot => 0,
        Temperature::Cold => 1,
    }
}

/// Points where a crash can be injected. Each fires once; the engine is
/// unusable afterwards and must be reopened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailPoint {
    /// Half of the WAL record reaches the file.
    WalTorn,
    /// The WAL record is written but the write is not acknowledged.
    WalAfterAppend,
    FlushBeforeInstall,
    FlushAfterInstall,
    CompactionBeforeInstall,
    CompactionAfterInstall,
    GcBeforeInstall,
    GcAfterInstall,
}

impl FailPoint {
    pub const ALL: [FailPoint; 8] = [
        FailPoint::WalTorn,
        FailPoint::WalAfterAppend,
        FailPoint::FlushBeforeInstall,
        FailPoint::FlushAfterInstall,
        FailPoint::CompactionBeforeInstall,
        FailPoint::CompactionAfterInstall,
        FailPoint::GcBeforeInstall,
        FailPoint::GcAfterInstall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FailPoint::WalTorn => "wal_torn",
            FailPoint::WalAfterAppend => "wal_after_append",
            FailPoint::FlushBeforeInstall => "flush_before_install",
            FailPoint::FlushAfterInstall => "flush_after_install",
            FailPoint::CompactionBeforeInstall => "compaction_before_install",
            FailPoint::CompactionAfterInstall => "compaction_after_install",
            FailPoint::GcBeforeInstall => "gc_before_install",
            FailPoint::GcAfterInstall => "gc_after_install",
        }
    }
}

macro_rules! counters {
    ($($name:ident),* $(,)?) => {
        #[derive(Debug, Default)]
        struct Counters {
            $($name: AtomicU64,)*
        }

        /// Event counters since open.
        #[derive(Debug, Clone, Default, PartialEq, Eq)]
        pub struct Metrics {
            $(pub $name: u64,)*
        }

        impl Counters {
            fn snapshot(&self) -> Metrics {
                Metrics { $($name: self.$name.load(Ordering::Relaxed),)* }
            }
        }

        impl Metrics {
            /// Field-wise `self - earlier`.
            pub fn since(&self, earlier: &Metrics) -> Metrics {
                Metrics { $($name: self.$name - earlier.$name,)* }
            }
        }
    };
}

counters!(
    flushes,
    compactions,
    trivial_moves,
    forced_compactions,
    gc_jobs,
    drop_events,
    accounted_drops,
    delayed_writes,
    delay_nanos,
    halts,
    stall_timeouts,
    write_waits,
);

fn bump(c: &AtomicU64, n: u64) {
    c.fetch_add(n, Ordering::Relaxed);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Work {
    FlushOnly,
    Normal,
    /// Normal work, then forced compactions while disk usage is over quota.
    Forced,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LevelSummary {
    pub files: usize,
    pub raw_bytes: u64,
    pub compensated_bytes: u64,
}

/// Counts gathered by [`Db::check_integrity`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntegrityReport {
    pub index_entries: u64,
    pub references: u64,
    pub live_value_files: usize,
    pub retired_value_files: usize,
}

struct MemState {
    active: Arc<Memtable>,
    /// Oldest first.
    imm: Vec<Arc<Memtable>>,
}

struct Maint {
    manifest: Option<ManifestWriter>,
    dropcache: DropCache,
    next_job: u64,
}

pub(crate) struct Inner {
    dir: PathBuf,
    cfg: EngineConfig,
    env: FileEnv,
    throttle: Throttle,
    gc_policy: GcPolicy,
    wal: Mutex<Option<WalWriter>>,
    mem: RwLock<MemState>,
    version: RwLock<Arc<Version>>,
    maint: Mutex<Maint>,
    last_seq: AtomicU64,
    next_file: AtomicU64,
    poisoned: Mutex<Option<String>>,
    failpoint: Mutex<Option<FailPoint>>,
    gc_paused: AtomicBool,
    wake: (Mutex<bool>, Condvar),
    shutdown: AtomicBool,
    counters: Counters,
    gc_jobs: Mutex<Vec<GcJobStats>>,
}

pub struct Db {
    inner: Arc<Inner>,
    worker: Option<JoinHandle<()>>,
}

impl Db {
    pub fn open(dir: impl AsRef<Path>, cfg: EngineConfig) -> Result<Self> {
        cfg.validate()?;
        let inner = Arc::new(Inner::recover(dir.as_ref(), cfg)?);
        let worker = if inner.cfg.background_threads > 0 {
            let w = inner.clone();
            Some(
                thread::Builder::new()
                    .name("kvsep-maint".into())
                    .spawn(move || w.worker_loop())?,
            )
        } else {
            None
        };
        Ok(Self { inner, worker })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.inner.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.inner.dir
    }

    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.inner.write(key, Some(value))
    }

    pub fn delete(&self, key: &[u8]) -> Result<()> {
        self.inner.write(key, None)
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        self.inner.check_poison()?;
        self.inner.get(key)
    }

    /// Up to `limit` live pairs with key >= `start`, ascending.
    pub fn scan(&self, start: &[u8], limit: usize) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        self.inner.check_poison()?;
        self.inner.scan(start, limit)
    }

    /// Flushes every memtable to L0.
    pub fn flush(&self) -> Result<()> {
        self.inner.check_poison()?;
        self.inner.rotate_if_nonempty()?;
        self.inner.maintain(Work::FlushOnly)
    }

    /// Runs flush, compaction and GC until nothing is due.
    pub fn wait_for_idle(&self) -> Result<()> {
        self.inner.check_poison()?;
        self.inner.maintain(Work::Normal)
    }

    /// Flushes, then pushes all data into the last level.
    pub fn compact_all(&self) -> Result<()> {
        self.flush()?;
        self.inner.compact_all()
    }

    /// Suspends or resumes value-file GC.
    pub fn set_gc_paused(&self, paused: bool) {
        self.inner.gc_paused.store(paused, Ordering::Relaxed);
    }

    /// Runs one GC job over the given live value files regardless of
    /// thresholds.
    pub fn gc_files(&self, files: &[u64]) -> Result<GcJobStats> {
        self.inner.check_poison()?;
        let mut m = self.inner.maint.lock().unwrap();
        let v = self.inner.current();
        let r = self.inner.run_gc(&mut m, &v, files.to_vec());
        self.inner.poison_on_err(r)
    }

    pub fn inject_failpoint(&self, fp: FailPoint) {
        *self.inner.failpoint.lock().unwrap() = Some(fp);
    }

    pub fn is_poisoned(&self) -> bool {
        self.inner.poisoned.lock().unwrap().is_some()
    }

    pub fn space_stats(&self) -> Result<SpaceStats> {
        self.inner.space_stats()
    }

    pub fn check_integrity(&self) -> Result<IntegrityReport> {
        self.inner.check_integrity()
    }

    pub fn metrics(&self) -> Metrics {
        self.inner.counters.snapshot()
    }

    pub fn io_stats(&self) -> IoSnapshot {
        self.inner.env.stats.snapshot()
    }

    pub fn gc_jobs(&self) -> Vec<GcJobStats> {
        self.inner.gc_jobs.lock().unwrap().clone()
    }

    pub fn disk_usage(&self) -> u64 {
        self.inner.env.disk.get()
    }

    pub fn peak_disk_usage(&self) -> u64 {
        self.inner.env.disk.peak()
    }

    pub fn reset_peak_disk_usage(&self) {
        self.inner.env.disk.reset_peak()
    }

    pub fn throttle_state(&self) -> ThrottleState {
        self.throttle_state_at(self.disk_usage())
    }

    /// The state the throttle would be in at `usage` bytes on disk.
    pub fn throttle_state_at(&self, usage: u64) -> ThrottleState {
        self.inner.throttle.admit_write(usage).state()
    }

    pub fn cache(&self) -> &BlockCache {
        &self.inner.env.cache
    }

    pub fn value_files(&self) -> Vec<VsstMeta> {
        self.inner.current().state.registry.files().cloned().collect()
    }

    pub fn level_summary(&self) -> Result<Vec<LevelSummary>> {
        let v = self.inner.current();
        v.state
            .levels
            .iter()
            .map(|files| {
                let mut s = LevelSummary {
                    files: files.len(),
                    ..Default::default()
                };
                for f in files {
                    s.raw_bytes += f.raw_size;
                    s.compensated_bytes += compensated_size(f, &v.state.registry)?;
                }
                Ok(s)
            })
            .collect()
    }

    pub fn last_sequence(&self) -> u64 {
        self.inner.last_seq.load(Ordering::Relaxed)
    }

    pub fn dropcache_len(&self) -> usize {
        self.inner.maint.lock().unwrap().dropcache.len()
    }
}

impl Drop for Db {
    fn drop(&mut self) {
        self.inner.shutdown.store(true, Ordering::Release);
        self.inner.notify();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
        if let Some(w) = self.inner.wal.lock().unwrap().as_mut() {
            let _ = w.sync();
        }
    }
}

struct KsstOut {
    number: u64,
    builder: DTableBuilder<FileSink>,
}

struct VsstOut {
    number: u64,
    builder: RTableBuilder<FileSink>,
    /// Bytes DropCache classified hot / cold, for labelling unrouted files.
    hot_bytes: u64,
    cold_bytes: u64,
}

impl Inner {
    fn recover(dir: &Path, cfg: EngineConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let env = FileEnv {
            cache: Arc::new(BlockCache::new(cfg.block_cache_size, cfg.high_priority_ratio)),
            stats: Arc::new(IoStats::default()),
            disk: Arc::new(DiskUsage::default()),
        };
        let _s = IoScope::enter(Activity::Recovery);
        let (state, old_manifest) = match load_manifest(dir, &env.stats)? {
            Some((s, n)) => (s, Some(n)),
            None => (VersionState::default(), None),
        };
        state.check_integrity()?;

        let mut ktables = HashMap::new();
        for n in state.ksst_numbers() {
            ktables.insert(n, Arc::new(open_ktable(dir, n, &env)?));
        }
        let mut vtables = HashMap::new();
        for m in state.registry.live_files() {
            let n = m.file_number;
            vtables.insert(n, Arc::new(open_vtable(dir, n, &env)?));
        }

        // Remove what the manifest does not reference and count what stays.
        let mut max_seen = 0;
        let mut wals = Vec::new();
        for ent in fs::read_dir(dir)? {
            let ent = ent?;
            let name = ent.file_name().to_string_lossy().into_owned();
            let len = ent.metadata()?.len();
            let keep = match parse_file_name(&name) {
                Some((kind, n)) => {
                    max_seen = max_seen.max(n);
                    match kind {
                        FileKind::Ksst => ktables.contains_key(&n),
                        FileKind::Vsst => vtables.contains_key(&n),
                        FileKind::Manifest => Some(n) == old_manifest,
                        FileKind::Wal => {
                            let keep = n >= state.log_number;
                            if keep {
                                wals.push(n);
                            }
                            keep
                        }
                    }
                }
                None => name == CURRENT,
            };
            if keep {
                env.disk.add(len);
            } else if ent.file_type()?.is_file() {
                fs::remove_file(ent.path())?;
            }
        }
        wals.sort_unstable();

        let next_file = state.next_file.max(max_seen + 1);
        let mut last_seq = state.last_seq;
        let recovered = Memtable::new(wals.first().copied().unwrap_or(0));
        for &w in &wals {
            let bytes = fs::read(file_path(dir, FileKind::Wal, w))?;
            env.stats.record_raw_read(bytes.len() as u64);
            for r in scan_log(&bytes).records {
                if r.seq <= state.last_seq {
                    continue;
                }
                let value = match r.kind {
                    WalKind::Put => Some(r.value.as_slice()),
                    WalKind::Delete => None,
                };
                let newer = recovered.get(&r.key).is_none_or(|e| e.seq < r.seq);
                if newer {
                    recovered.insert(&r.key, r.seq, value);
                }
                last_seq = last_seq.max(r.seq);
            }
        }

        let dropcache = DropCache::new(cfg.dropcache_size as usize);
        let throttle = Throttle {
            quota: cfg.space_quota,
            soft_ratio: cfg.soft_ratio,
            max_delay_nanos: cfg.max_write_delay.as_nanos() as u64,
        };
        let gc_policy = GcPolicy {
            garbage_threshold: cfg.gc_garbage_threshold,
            aggressive_threshold: cfg.gc_aggressive_threshold,
            max_concurrent_jobs: 1,
        };
        let inner = Inner {
            dir: dir.to_path_buf(),
            env,
            throttle,
            gc_policy,
            wal: Mutex::new(None),
            mem: RwLock::new(MemState {
                active: Arc::new(Memtable::new(0)),
                imm: Vec::new(),
            }),
            version: RwLock::new(Arc::new(Version {
                state,
                ktables,
                vtables,
            })),
            maint: Mutex::new(Maint {
                manifest: None,
                dropcache,
                next_job: 0,
            }),
            last_seq: AtomicU64::new(last_seq),
            next_file: AtomicU64::new(next_file),
            poisoned: Mutex::new(None),
            failpoint: Mutex::new(None),
            gc_paused: AtomicBool::new(false),
            wake: (Mutex::new(false), Condvar::new()),
            shutdown: AtomicBool::new(false),
            counters: Counters::default(),
            gc_jobs: Mutex::new(Vec::new()),
            cfg,
        };

        let wal_no = inner.alloc_file();
        let wal = WalWriter::create(
            dir,
            wal_no,
            inner.cfg.sync_wal,
            inner.env.stats.clone(),
            inner.env.disk.clone(),
        )?;
        *inner.wal.lock().unwrap() = Some(wal);
        {
            let mut mem = inner.mem.write().unwrap();
            mem.active = Arc::new(Memtable::new(wal_no));
            if !recovered.is_empty() {
                mem.imm.push(Arc::new(recovered));
            }
        }
        {
            let mut m = inner.maint.lock().unwrap();
            let state = inner.current().state.clone();
            inner.new_manifest(&mut m, &state)?;
            if let Some(n) = old_manifest {
                let p = file_path(dir, FileKind::Manifest, n);
                if let Ok(md) = fs::metadata(&p) {
                    fs::remove_file(&p)?;
                    inner.env.disk.sub(md.len());
                }
            }
            while inner.flush_one(&mut m)? {}
        }
        // replayed logs hold nothing newer than the tree
        inner.delete_wals_below(wal_no);
        Ok(inner)
    }

    fn new_manifest(&self, m: &mut Maint, state: &VersionState) -> Result<()> {
        let _s = IoScope::enter(Activity::Manifest);
        let n = self.alloc_file();
        let mut state = state.clone();
        state.prune_registry();
        state.next_file = state.next_file.max(self.next_file.load(Ordering::Relaxed));
        let w = ManifestWriter::create(
            &self.dir,
            n,
            &state,
            self.cfg.sync_files,
            self.env.stats.clone(),
            self.env.disk.clone(),
        )?;
        if let Some(old) = m.manifest.replace(w) {
            old.remove();
        }
        Ok(())
    }

    fn alloc_file(&self) -> u64 {
        self.next_file.fetch_add(1, Ordering::Relaxed)
    }

    fn current(&self) -> Arc<Version> {
        self.version.read().unwrap().clone()
    }

    fn check_poison(&self) -> Result<()> {
        match &*self.poisoned.lock().unwrap() {
            Some(msg) => Err(Error::Poisoned(msg.clone())),
            None => Ok(()),
        }
    }

    fn poison_on_err<T>(&self, r: Result<T>) -> Result<T> {
        if let Err(e) = &r {
            let mut p = self.poisoned.lock().unwrap();
            if p.is_none() {
                *p = Some(e.to_string());
            }
        }
        r
    }

    fn fail(&self, fp: FailPoint) -> Result<()> {
        let mut g = self.failpoint.lock().unwrap();
        if *g == Some(fp) {
            *g = None;
            *self.poisoned.lock().unwrap() = Some(format!("crash injected at {}", fp.name()));
            return Err(Error::InjectedCrash(fp.name()));
        }
        Ok(())
    }

    fn notify(&self) {
        let (lock, cv) = &self.wake;
        *lock.lock().unwrap() = true;
        cv.notify_all();
    }

    fn worker_loop(&self) {
        let (lock, cv) = &self.wake;
        loop {
            {
                let mut pending = lock.lock().unwrap();
                if !*pending && !self.shutdown.load(Ordering::Acquire) {
                    pending = cv.wait_timeout(pending, Duration::from_millis(50)).unwrap().0;
                }
                *pending = false;
            }
            if self.shutdown.load(Ordering::Acquire) || self.poisoned.lock().unwrap().is_some() {
                return;
            }
            let work = if self.halted() { Work::Forced } else { Work::Normal };
            if self.maintain(work).is_err() {
                return;
            }
        }
    }

    // ---- write path ----

    fn write(&self, key: &[u8], value: Option<&[u8]>) -> Result<()> {
        self.check_poison()?;
        if key.is_empty() {
            return Err(Error::InvalidArgument("empty key"));
        }
        self.admit()?;
        self.wait_for_write_room()?;
        let rotated = {
            let mut wal = self.wal.lock().unwrap();
            self.check_poison()?;
            let w = wal.as_mut().expect("wal open");
            let seq = self.last_seq.load(Ordering::Relaxed) + 1;
            {
                let _s = IoScope::enter(Activity::Wal);
                if self.fail(FailPoint::WalTorn).is_err() {
                    w.append_torn(seq, key, value)?;
                    return Err(Error::InjectedCrash(FailPoint::WalTorn.name()));
                }
                w.append(seq, key, value)?;
            }
            self.fail(FailPoint::WalAfterAppend)?;
            let active = self.mem.read().unwrap().active.clone();
            active.insert(key, seq, value);
            self.last_seq.store(seq, Ordering::Relaxed);
            if active.approximate_size() >= self.cfg.memtable_size {
                self.rotate(&mut wal)?;
                true
            } else {
                false
            }
        };
        if rotated {
            self.schedule()?;
        }
        Ok(())
    }

    fn rotate(&self, wal: &mut MutexGuard<'_, Option<WalWriter>>) -> Result<()> {
        let n = self.alloc_file();
        let w = WalWriter::create(
            &self.dir,
            n,
            self.cfg.sync_wal,
            self.env.stats.clone(),
            self.env.disk.clone(),
        )?;
        if let Some(mut old) = wal.replace(w) {
            if self.cfg.sync_files {
                old.sync()?;
            }
        }
        let mut mem = self.mem.write().unwrap();
        let old = std::mem::replace(&mut mem.active, Arc::new(Memtable::new(n)));
        mem.imm.push(old);
        Ok(())
    }

    fn rotate_if_nonempty(&self) -> Result<()> {
        let mut wal = self.wal.lock().unwrap();
        if !self.mem.read().unwrap().active.is_empty() {
            self.rotate(&mut wal)?;
        }
        Ok(())
    }

    fn schedule(&self) -> Result<()> {
        if self.cfg.background_threads == 0 {
            self.maintain(Work::Normal)
        } else {
            self.notify();
            Ok(())
        }
    }

    fn wait_for_write_room(&self) -> Result<()> {
        let mut counted = false;
        loop {
            let imm_full = self.mem.read().unwrap().imm.len() >= self.cfg.max_immutable_memtables;
            let l0_full = self.current().state.levels[0].len() >= self.cfg.l0_stop_trigger;
            if !imm_full && !l0_full {
                return Ok(());
            }
            if !counted {
                bump(&self.counters.write_waits, 1);
                counted = true;
            }
            if self.cfg.background_threads == 0 {
                self.maintain(if l0_full { Work::Normal } else { Work::FlushOnly })?;
            } else {
                self.check_poison()?;
                self.notify();
                thread::sleep(Duration::from_micros(500));
            }
        }
    }

    fn halted(&self) -> bool {
        self.throttle.admit_write(self.env.disk.get()).state() == ThrottleState::Halted
    }

    fn under_pressure(&self) -> bool {
        self.throttle.admit_write(self.env.disk.get()).state() != ThrottleState::Open
    }

    /// Space-aware admission: a linear delay above the soft limit, and a
    /// halt with maintenance at the quota.
    fn admit(&self) -> Result<()> {
        use kvsep_core::space::Admission;
        if self.throttle.quota.is_none() {
            return Ok(());
        }
        let start = Instant::now();
        let mut halted = false;
        loop {
            match self.throttle.admit_write(self.env.disk.get()) {
                Admission::Admit => return Ok(()),
                Admission::DelayNanos(d) => {
                    bump(&self.counters.delayed_writes, 1);
                    bump(&self.counters.delay_nanos, d);
                    if self.cfg.background_threads > 0 {
                        self.notify();
                    }
                    thread::sleep(Duration::from_nanos(d));
                    return Ok(());
                }
                Admission::Halt => {
                    if !halted {
                        bump(&self.counters.halts, 1);
                        halted = true;
                    }
                    if start.elapsed() >= self.cfg.write_stall_timeout {
                        bump(&self.counters.stall_timeouts, 1);
                        return Err(Error::WriteStalled);
                    }
                    if self.cfg.background_threads == 0 {
                        self.maintain(Work::Forced)?;
                        if self.halted() {
                            thread::sleep(Duration::from_millis(1));
                        }
                    } else {
                        self.check_poison()?;
                        self.notify();
                        thread::sleep(Duration::from_millis(1));
                    }
                }
            }
        }
    }

    // ---- reads ----

    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        let (active, imms) = {
            let m = self.mem.read().unwrap();
            (m.active.clone(), m.imm.clone())
        };
        if let Some(e) = active.get(key) {
            return Ok(e.value);
        }
        for imm in imms.iter().rev() {
            if let Some(e) = imm.get(key) {
                return Ok(e.value);
            }
        }
        let v = self.current();
        match v.lookup(key, LookupMode::Full)? {
            None => Ok(None),
            Some(e) => match e.value {
                EntryValue::Tombstone => Ok(None),
                EntryValue::Inline(b) => Ok(Some(b)),
                EntryValue::Reference(f) => v.read_value(key, f).map(Some),
            },
        }
    }

    fn scan(&self, start: &[u8], limit: usize) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        let (active, imms) = {
            let m = self.mem.read().unwrap();
            (m.active.clone(), m.imm.clone())
        };
        let v = self.current();
        let mut sources: Vec<crate::version::EntryIter<'_>> = Vec::new();
        sources.push(Box::new(active.iter_from(start).map(Ok)));
        for imm in imms.iter().rev() {
            sources.push(Box::new(imm.iter_from(start).map(Ok)));
        }
        sources.extend(v.sources_from(start));
        let mut out = Vec::new();
        for m in MergeIter::new(sources) {
            if out.len() >= limit {
                break;
            }
            let w = m?.winner;
            match w.value {
                EntryValue::Tombstone => {}
                EntryValue::Inline(b) => out.push((w.key, b)),
                EntryValue::Reference(f) => {
                    let val = v.read_value(&w.key, f)?;
                    out.push((w.key, val));
                }
            }
        }
        Ok(out)
    }

    // ---- maintenance ----

    fn maintain(&self, work: Work) -> Result<()> {
        let mut m = self.maint.lock().unwrap();
        self.check_poison()?;
        let r = self.maintain_locked(&mut m, work);
        self.poison_on_err(r)
    }

    fn maintain_locked(&self, m: &mut Maint, work: Work) -> Result<()> {
        // one step of each kind per pass so a steady stream of flushes
        // cannot starve compaction or GC
        loop {
            let flushed = self.flush_one(m)?;
            if work == Work::FlushOnly {
                if flushed {
                    continue;
                }
                return Ok(());
            }
            let compacted = self.compact_one(m, false)?;
            let collected = self.gc_one(m)?;
            if flushed || compacted || collected {
                continue;
            }
            if work == Work::Forced && self.halted() && self.compact_one(m, true)? {
                bump(&self.counters.forced_compactions, 1);
                continue;
            }
            return Ok(());
        }
    }

    fn compact_all(&self) -> Result<()> {
        let mut m = self.maint.lock().unwrap();
        self.check_poison()?;
        let r = (|| {
            while self.compact_one(&mut m, true)? {
                bump(&self.counters.forced_compactions, 1);
            }
            self.maintain_locked(&mut m, Work::Normal)
        })();
        self.poison_on_err(r)
    }

    /// Writes `edit` to the manifest and publishes the resulting version.
    /// Tables that dropped out are deleted once no reader holds them.
    fn install(
        &self,
        m: &mut Maint,
        mut edit: VersionEdit,
        new_k: Vec<Arc<KTable>>,
        new_v: Vec<Arc<VTable>>,
    ) -> Result<()> {
        let cur = self.current();
        edit.push(EditItem::NextFile(self.next_file.load(Ordering::Relaxed)));
        let mut state = cur.state.clone();
        state.apply(&edit)?;
        {
            let _s = IoScope::enter(Activity::Manifest);
            m.manifest.as_mut().expect("manifest open").append(&edit)?;
        }
        let mut ktables = cur.ktables.clone();
        for k in new_k {
            ktables.insert(k.source().number(), k);
        }
        let live_k: HashSet<u64> = state.ksst_numbers().collect();
        ktables.retain(|n, k| {
            let keep = live_k.contains(n);
            if !keep {
                k.source().mark_obsolete();
            }
            keep
        });
        let mut vtables = cur.vtables.clone();
        for t in new_v {
            vtables.insert(t.source().number(), t);
        }
        vtables.retain(|n, t| {
            let keep = state.registry.get(*n).is_some_and(|m| m.is_live());
            if !keep {
                t.source().mark_obsolete();
            }
            keep
        });
        let rotate = m.manifest.as_ref().is_some_and(|w| w.size() > self.cfg.manifest_rotate_size);
        if rotate {
            state.prune_registry();
        }
        let snapshot = rotate.then(|| state.clone());
        *self.version.write().unwrap() = Arc::new(Version {
            state,
            ktables,
            vtables,
        });
        if let Some(s) = snapshot {
            self.new_manifest(m, &s)?;
        }
        Ok(())
    }

    fn new_ksst(&self) -> Result<KsstOut> {
        let number = self.alloc_file();
        let sink = FileSink::create(file_path(&self.dir, FileKind::Ksst, number), self.env.clone())?;
        let opts = DTableOptions {
            block_size: self.cfg.block_size,
            bits_per_key: self.cfg.bloom_bits_per_key,
            split: self.cfg.dtable_split,
        };
        Ok(KsstOut {
            number,
            builder: DTableBuilder::new(sink, opts),
        })
    }

    fn finish_ksst(&self, out: KsstOut) -> Result<(FileMeta, Arc<KTable>)> {
        let (sink, props) = out.builder.finish()?;
        sink.finish(self.cfg.sync_files)?;
        let t = Arc::new(open_ktable(&self.dir, out.number, &self.env)?);
        let meta = FileMeta {
            number: out.number,
            smallest: props.smallest_key,
            largest: props.largest_key,
            raw_size: props.file_size,
            entry_count: props.entry_count,
            max_seq: props.max_seq,
            dependencies: props.dependencies,
        };
        Ok((meta, t))
    }

    fn new_vsst(&self) -> Result<VsstOut> {
        let number = self.alloc_file();
        let sink = FileSink::create(file_path(&self.dir, FileKind::Vsst, number), self.env.clone())?;
        let opts = RTableOptions {
            partition_size: self.cfg.partition_size,
            bits_per_key: self.cfg.bloom_bits_per_key,
        };
        Ok(VsstOut {
            number,
            builder: RTableBuilder::new(sink, opts),
            hot_bytes: 0,
            cold_bytes: 0,
        })
    }

    /// `temp` is the routed temperature; with routing off the file is
    /// labelled by the majority of its bytes instead.
    fn finish_vsst(&self, out: VsstOut, temp: Temperature) -> Result<(VsstMeta, Arc<VTable>)> {
        let temp = if self.cfg.dropcache {
            temp
        } else {
            successor_temperature(out.hot_bytes, out.cold_bytes)
        };
        let (sink, props) = out.builder.finish()?;
        sink.finish(self.cfg.sync_files)?;
        let t = Arc::new(open_vtable(&self.dir, out.number, &self.env)?);
        let meta = VsstMeta::new(
            out.number,
            props.file_size,
            props.record_count,
            props.records_size,
            temp,
        );
        Ok((meta, t))
    }

    fn delete_wals_below(&self, log_number: u64) {
        let Ok(rd) = fs::read_dir(&self.dir) else { return };
        for ent in rd.flatten() {
            let name = ent.file_name();
            if let Some((FileKind::Wal, n)) = parse_file_name(&name.to_string_lossy()) {
                if n < log_number {
                    let len = ent.metadata().map(|m| m.len()).unwrap_or(0);
                    if fs::remove_file(ent.path()).is_ok() {
                        self.env.disk.sub(len);
                    }
                }
            }
        }
    }

    /// Flushes the oldest immutable memtable. Returns false when none.
    fn flush_one(&self, m: &mut Maint) -> Result<bool> {
        let Some(imm) = self.mem.read().unwrap().imm.first().cloned() else {
            return Ok(false);
        };
        let _s = IoScope::enter(Activity::Flush);
        let mut edit = VersionEdit::new();
        let mut new_v = Vec::new();
        let mut vouts: [Option<VsstOut>; 2] = [None, None];
        let mut kout = self.new_ksst()?;
        for e in imm.iter_from(&[]) {
            let entry = match e.value {
                EntryValue::Inline(v) if v.len() >= self.cfg.separation_threshold => {
                    let hot = m.dropcache.is_hot(&e.key);
                    let temp = if self.cfg.dropcache && hot {
                        Temperature::Hot
                    } else {
                        Temperature::Cold
                    };
                    let cell = &mut vouts[slot(temp)];
                    if cell.is_none() {
                        *cell = Some(self.new_vsst()?);
                    }
                    let out = cell.as_mut().expect("just set");
                    out.builder.add(&e.key, e.seq, &v)?;
                    *(if hot { &mut out.hot_bytes } else { &mut out.cold_bytes }) += v.len() as u64;
                    let number = out.number;
                    if out.builder.estimated_size() >= self.cfg.vsst_size {
                        let (meta, t) = self.finish_vsst(cell.take().expect("present"), temp)?;
                        edit.push(EditItem::AddVsst(meta));
                        new_v.push(t);
                    }
                    IndexEntry::new(e.key, e.seq, EntryValue::Reference(number))
                }
                _ => e,
            };
            kout.builder.add(&entry)?;
        }
        for temp in TEMPERATURES {
            if let Some(out) = vouts[slot(temp)].take() {
                let (meta, t) = self.finish_vsst(out, temp)?;
                edit.push(EditItem::AddVsst(meta));
                new_v.push(t);
            }
        }
        let (meta, kt) = self.finish_ksst(kout)?;
        edit.push(EditItem::AddKsst { level: 0, meta });
        let next_log = {
            let mem = self.mem.read().unwrap();
            mem.imm.get(1).map_or(mem.active.wal_number(), |t| t.wal_number())
        };
        edit.push(EditItem::LogNumber(next_log));
        edit.push(EditItem::LastSeq(imm.max_seq()));
        self.fail(FailPoint::FlushBeforeInstall)?;
        self.install(m, edit, vec![kt], new_v)?;
        self.fail(FailPoint::FlushAfterInstall)?;
        self.mem.write().unwrap().imm.remove(0);
        self.delete_wals_below(next_log);
        bump(&self.counters.flushes, 1);
        Ok(true)
    }

    /// Runs one compaction. `forced` ignores scores and drains the upper
    /// level holding the most data.
    fn compact_one(&self, m: &mut Maint, forced: bool) -> Result<bool> {
        use kvsep_core::levels::{pick_compaction, pick_forced, LevelView};
        let v = self.current();
        let levels = &v.state.levels;
        let mut sizes = Vec::with_capacity(NUM_LEVELS);
        for files in levels {
            let mut s = Vec::with_capacity(files.len());
            for f in files {
                s.push(if self.cfg.compensation {
                    compensated_size(f, &v.state.registry)?
                } else {
                    f.raw_size
                });
            }
            sizes.push(s);
        }
        let view = LevelView {
            files: levels,
            sizes: &sizes,
        };
        let lcfg = LevelConfig {
            base_size: self.cfg.level_base_size,
            multiplier: self.cfg.level_multiplier,
            l0_trigger: self.cfg.l0_trigger,
        };
        let pick = if forced {
            pick_forced(&view, &lcfg)
        } else {
            pick_compaction(&view, &lcfg)
        };
        let Some(pick) = pick else {
            return Ok(false);
        };
        let _s = IoScope::enter(Activity::Compaction);
        let find = |level: usize, n: u64| -> FileMeta {
            levels[level]
                .iter()
                .find(|f| f.number == n)
                .expect("picked file exists")
                .clone()
        };
        let mut edit = VersionEdit::new();
        if pick.is_trivial_move() {
            for &n in &pick.inputs {
                edit.push(EditItem::DeleteKsst {
                    level: pick.level as u8,
                    number: n,
                });
                edit.push(EditItem::AddKsst {
                    level: pick.output_level as u8,
                    meta: find(pick.level, n),
                });
            }
            self.fail(FailPoint::CompactionBeforeInstall)?;
            self.install(m, edit, Vec::new(), Vec::new())?;
            self.fail(FailPoint::CompactionAfterInstall)?;
            bump(&self.counters.trivial_moves, 1);
            return Ok(true);
        }

        // upper inputs in level order (L0 newest first), then the next level
        let mut inputs: Vec<(usize, FileMeta)> = levels[pick.level]
            .iter()
            .filter(|f| pick.inputs.contains(&f.number))
            .map(|f| (pick.level, f.clone()))
            .collect();
        inputs.extend(
            levels[pick.output_level]
                .iter()
                .filter(|f| pick.next_inputs.contains(&f.number))
                .map(|f| (pick.output_level, f.clone())),
        );
        let lo = inputs.iter().map(|(_, f)| f.smallest.clone()).min().expect("inputs");
        let hi = inputs.iter().map(|(_, f)| f.largest.clone()).max().expect("inputs");
        let bottommost = levels[pick.output_level + 1..]
            .iter()
            .all(|files| files.iter().all(|f| !f.overlaps(&lo, &hi)));

        let mut sources = Vec::with_capacity(inputs.len());
        for (_, f) in &inputs {
            sources.push(v.ktable(f.number)?.iter());
        }
        let mut garbage: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
        let mut outputs = Vec::new();
        let mut out: Option<KsstOut> = None;
        for item in MergeIter::new(sources) {
            let mg = item?;
            if !mg.shadowed.is_empty() {
                m.dropcache.note_dropped(&mg.winner.key);
            }
            for s in &mg.shadowed {
                if let EntryValue::Reference(f) = s.value {
                    bump(&self.counters.drop_events, 1);
                    self.account_drop(&v, &s.key, s.seq, f, &mut garbage)?;
                }
            }
            if bottommost && mg.winner.value == EntryValue::Tombstone {
                continue;
            }
            if out.is_none() {
                out = Some(self.new_ksst()?);
            }
            let o = out.as_mut().expect("just set");
            // point surviving references at the file now holding the record
            // so retired files stop being reachable
            let mut winner = mg.winner;
            if let EntryValue::Reference(f) = winner.value {
                if let Some(live) = v.state.registry.resolve(f)? {
                    winner.value = EntryValue::Reference(live);
                }
            }
            o.builder.add(&winner)?;
            if o.builder.estimated_size() >= self.cfg.ksst_size {
                outputs.push(self.finish_ksst(out.take().expect("present"))?);
            }
        }
        if let Some(o) = out {
            outputs.push(self.finish_ksst(o)?);
        }

        for (level, f) in &inputs {
            edit.push(EditItem::DeleteKsst {
                level: *level as u8,
                number: f.number,
            });
        }
        let mut new_k = Vec::new();
        for (meta, t) in outputs {
            edit.push(EditItem::AddKsst {
                level: pick.output_level as u8,
                meta,
            });
            new_k.push(t);
        }
        for (file, (bytes, entries)) in garbage {
            let cur = v.state.registry.get(file).ok_or(Error::MissingFile(file))?;
            edit.push(EditItem::Garbage {
                file,
                bytes: cur.exposed_garbage_bytes + bytes,
                entries: cur.exposed_garbage_entries + entries,
            });
        }
        self.fail(FailPoint::CompactionBeforeInstall)?;
        self.install(m, edit, new_k, Vec::new())?;
        self.fail(FailPoint::CompactionAfterInstall)?;
        bump(&self.counters.compactions, 1);
        Ok(true)
    }

    /// Charges a dropped reference to the live file now holding its record,
    /// if that file still holds this exact version.
    fn account_drop(
        &self,
        v: &Version,
        key: &[u8],
        seq: u64,
        file: u64,
        garbage: &mut BTreeMap<u64, (u64, u64)>,
    ) -> Result<()> {
        let Some(live) = v.state.registry.resolve(file)? else {
            return Ok(());
        };
        let t = v.vtable(live)?;
        if let Some(e) = t.find(key).map_err(Error::in_file(live))? {
            if e.seq == seq {
                let g = garbage.entry(live).or_default();
                g.0 += e.size;
                g.1 += 1;
                bump(&self.counters.accounted_drops, 1);
            }
        }
        Ok(())
    }

    fn gc_one(&self, m: &mut Maint) -> Result<bool> {
        if !self.cfg.gc_enabled || self.gc_paused.load(Ordering::Relaxed) {
            return Ok(false);
        }
        let v = self.current();
        let threshold = self.gc_policy.effective_threshold(self.under_pressure());
        let candidates =
            kvsep_core::gc::pick_gc_candidates(v.state.registry.live_files(), threshold);
        if candidates.is_empty() {
            return Ok(false);
        }
        let mut inputs = Vec::new();
        let mut projected = 0u64;
        for f in candidates {
            let meta = v.state.registry.get(f).ok_or(Error::MissingFile(f))?;
            inputs.push(f);
            projected += meta.total_value_bytes.saturating_sub(meta.exposed_garbage_bytes);
            if projected >= self.cfg.vsst_size {
                break;
            }
        }
        self.run_gc(m, &v, inputs)?;
        Ok(true)
    }

    fn space_stats(&self) -> Result<SpaceStats> {
        // memtables first: a flush in between only hides a few keys from D
        let (active, imms) = {
            let m = self.mem.read().unwrap();
            (m.active.clone(), m.imm.clone())
        };
        let v = self.current();
        let reg = &v.state.registry;
        let mut per_level = [0u64; NUM_LEVELS];
        for (l, files) in v.state.levels.iter().enumerate() {
            for f in files {
                per_level[l] += compensated_size(f, reg)?;
            }
        }
        let mut s = SpaceStats::default();
        if let Some(last) = (0..NUM_LEVELS).rev().find(|&l| !v.state.levels[l].is_empty()) {
            s.k_last = per_level[last];
            s.k_upper = per_level[..last].iter().sum();
        }
        for m in MergeIter::new(v.sources_from(&[])) {
            let w = m?.winner;
            let EntryValue::Reference(f) = w.value else {
                continue;
            };
            if active.contains(&w.key) || imms.iter().any(|t| t.contains(&w.key)) {
                continue;
            }
            let Some(live) = reg.resolve(f)? else {
                continue;
            };
            if let Some(e) = v.vtable(live)?.find(&w.key).map_err(Error::in_file(live))? {
                s.valid += e.size;
            }
        }
        s.exposed_garbage = reg.exposed_garbage_bytes();
        s.value_file_bytes = reg.live_value_bytes();
        s.total_disk_bytes = self.env.disk.get();
        Ok(s)
    }

    fn check_integrity(&self) -> Result<IntegrityReport> {
        let _m = self.maint.lock().unwrap();
        let v = self.current();
        v.state.check_integrity()?;
        let mut r = IntegrityReport::default();
        for m in v.state.registry.files() {
            if m.is_live() {
                r.live_value_files += 1;
                v.vtable(m.file_number)?;
            } else {
                r.retired_value_files += 1;
            }
        }
        for files in &v.state.levels {
            for f in files {
                for e in v.ktable(f.number)?.iter() {
                    let e = e.map_err(Error::in_file(f.number))?;
                    r.index_entries += 1;
                    if let EntryValue::Reference(vf) = e.value {
                        r.references += 1;
                        // Shadowed versions may legitimately point at
                        // collected records; only resolvable ones are read.
                        if let Some(live) = v.state.registry.resolve(vf)? {
                            v.vtable(live)?;
                        }
                    }
                }
            }
        }
        for m in MergeIter::new(v.sources_from(&[])) {
            let w = m?.winner;
            if let EntryValue::Reference(f) = w.value {
                let live = v
                    .state
                    .registry
                    .resolve(f)?
                    .ok_or_else(|| Error::DanglingReference {
                        key: w.key.clone(),
                        file: f,
                    })?;
                match v.vtable(live)?.find(&w.key).map_err(Error::in_file(live))? {
                    Some(e) if e.seq == w.seq => {}
                    _ => {
                        return Err(Error::DanglingReference {
                            key: w.key.clone(),
                            file: f,
                        })
                    }
                }
            }
        }
        Ok(r)
    }
}

fn open_ktable(dir: &Path, n: u64, env: &FileEnv) -> Result<KTable> {
    let f = open_table_file(dir, FileKind::Ksst, n, env)?;
    DTableReader::open(Arc::new(f)).map_err(Error::in_file(n))
}

fn open_vtable(dir: &Path, n: u64, env: &FileEnv) -> Result<VTable> {
    let f = open_table_file(dir, FileKind::Vsst, n, env)?;
    RTableReader::open(Arc::new(f)).map_err(Error::in_file(n))
}

fn open_table_file(dir: &Path, kind: FileKind, n: u64, env: &FileEnv) -> Result<TableFile> {
    match TableFile::open(file_path(dir, kind, n), n, env.clone()) {
        Ok(f) => Ok(f),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(n)),
        Err(e) => Err(e.into()),
    }
}
