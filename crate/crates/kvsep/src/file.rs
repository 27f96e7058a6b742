//! Table files on disk: naming, counted positional reads and writes, and
//! deferred deletion of obsolete files.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::os::unix::fs::OpenOptionsExt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use kvsep_core::format::{BlockHandle, BlockKind, BlockSource, Sink};
use kvsep_core::lru::Priority;

use crate::cache::BlockCache;
use crate::iostat::IoStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Ksst,
    Vsst,
    Wal,
    Manifest,
}

pub fn file_name(kind: FileKind, number: u64) -> String {
    match kind {
        FileKind::Ksst => format!("{number:06}.ksst"),
        FileKind::Vsst => format!("{number:06}.vsst"),
        FileKind::Wal => format!("{number:06}.wal"),
        FileKind::Manifest => format!("MANIFEST-{number:06}"),
    }
}

pub fn file_path(dir: &Path, kind: FileKind, number: u64) -> PathBuf {
    dir.join(file_name(kind, number))
}

pub const CURRENT: &str = "CURRENT";

pub fn parse_file_name(name: &str) -> Option<(FileKind, u64)> {
    if let Some(n) = name.strip_prefix("MANIFEST-") {
        return n.parse().ok().map(|n| (FileKind::Manifest, n));
    }
    let (stem, ext) = name.split_once('.')?;
    let kind = match ext {
        "ksst" => FileKind::Ksst,
        "vsst" => FileKind::Vsst,
        "wal" => FileKind::Wal,
        _ => return None,
    };
    stem.parse().ok().map(|n| (kind, n))
}

/// Bytes currently on disk for the engine, plus the high-water mark.
#[derive(Debug, Default)]
pub struct DiskUsage {
    bytes: AtomicU64,
    peak: AtomicU64,
}

impl DiskUsage {
    pub fn add(&self, n: u64) {
        let now = self.bytes.fetch_add(n, Ordering::Relaxed) + n;
        self.peak.fetch_max(now, Ordering::Relaxed);
    }

    pub fn sub(&self, n: u64) {
        let _ = self
            .bytes
            .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |b| Some(b.saturating_sub(n)));
    }

    pub fn get(&self) -> u64 {
        self.bytes.load(Ordering::Relaxed)
    }

    pub fn peak(&self) -> u64 {
        self.peak.load(Ordering::Relaxed)
    }

    pub fn reset_peak(&self) {
        self.peak.store(self.get(), Ordering::Relaxed);
    }
}

/// Shared handles every file needs.
#[derive(Clone)]
pub struct FileEnv {
    pub cache: Arc<BlockCache>,
    pub stats: Arc<IoStats>,
    pub disk: Arc<DiskUsage>,
}

fn cache_priority(kind: BlockKind) -> Option<Priority> {
    match kind {
        BlockKind::KfBlock | BlockKind::RTableIndexPartition => Some(Priority::High),
        BlockKind::KvBlock => Some(Priority::Low),
        // pinned by the readers, or values read once
        BlockKind::Meta | BlockKind::Filter | BlockKind::Record => None,
    }
}

/// An immutable table file opened for positional reads.
pub struct TableFile {
    number: u64,
    path: PathBuf,
    file: File,
    len: u64,
    env: FileEnv,
    obsolete: AtomicBool,
    /// Opened on first direct read; `None` when the filesystem refuses.
    direct: OnceLock<Option<File>>,
}

const DIRECT_ALIGN: u64 = 4096;

impl TableFile {
    pub fn open(path: PathBuf, number: u64, env: FileEnv) -> io::Result<Self> {
        let file = File::open(&path)?;
        let len = file.metadata()?.len();
        Ok(Self {
            number,
            path,
            file,
            len,
            env,
            obsolete: AtomicBool::new(false),
            direct: OnceLock::new(),
        })
    }

    pub fn number(&self) -> u64 {
        self.number
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// The file is removed once the last handle drops.
    pub fn mark_obsolete(&self) {
        self.obsolete.store(true, Ordering::Release);
    }

    /// Uncached read of an arbitrary range, charged as `kind`.
    pub fn read_raw(&self, offset: u64, len: u64, kind: BlockKind) -> io::Result<Vec<u8>> {
        let end = offset.checked_add(len).filter(|&e| e <= self.len);
        if end.is_none() {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "read past end of file"));
        }
        let mut buf = vec![0u8; len as usize];
        self.file.read_exact_at(&mut buf, offset)?;
        self.env.stats.record_read(kind, len);
        Ok(buf)
    }

    /// Like [`read_raw`](Self::read_raw) but bypassing the page cache with
    /// `O_DIRECT`, falling back to a buffered read where that is refused.
    /// Returns the bytes and how many were fetched from the device after
    /// alignment.
    pub fn read_direct(&self, offset: u64, len: u64, kind: BlockKind) -> io::Result<(Vec<u8>, u64)> {
        let direct = self.direct.get_or_init(|| {
            OpenOptions::new()
                .read(true)
                .custom_flags(libc::O_DIRECT)
                .open(&self.path)
                .ok()
        });
        let Some(file) = direct else {
            return self.read_raw(offset, len, kind).map(|b| (b, len));
        };
        let end = offset.checked_add(len).filter(|&e| e <= self.len);
        let Some(end) = end else {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "read past end of file"));
        };
        let lo = offset / DIRECT_ALIGN * DIRECT_ALIGN;
        let hi = end.div_ceil(DIRECT_ALIGN) * DIRECT_ALIGN;
        let span = (hi - lo) as usize;
        let mut raw = vec![0u8; span + DIRECT_ALIGN as usize];
        let pad = raw.as_ptr().align_offset(DIRECT_ALIGN as usize);
        let buf = &mut raw[pad..pad + span];
        let mut got = 0usize;
        while (got as u64) < end - lo {
            match file.read_at(&mut buf[got..], lo + got as u64) {
                Ok(0) => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "short direct read")),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        self.env.stats.record_read(kind, got as u64);
        let start = (offset - lo) as usize;
        Ok((buf[start..start + len as usize].to_vec(), got as u64))
    }
}

impl BlockSource for TableFile {
    fn len(&self) -> u64 {
        self.len
    }

    fn read(&self, h: BlockHandle) -> kvsep_core::Result<Arc<[u8]>> {
        self.env.stats.record_access(h.kind);
        let load = || -> crate::Result<Arc<[u8]>> {
            Ok(Arc::from(self.read_raw(h.offset, h.size, h.kind)?))
        };
        let res = match cache_priority(h.kind) {
            Some(prio) => self
                .env
                .cache
                .get_or_load(self.number, h.offset, prio, load)
                .map(|(b, hit)| {
                    self.env.stats.record_cache(hit);
                    b
                }),
            None => load(),
        };
        res.map_err(|e| match e {
            crate::Error::Format(e) => e,
            other => kvsep_core::Error::Io(Box::new(io::Error::other(other.to_string()))),
        })
    }
}

impl Drop for TableFile {
    fn drop(&mut self) {
        if self.obsolete.load(Ordering::Acquire) {
            self.env.cache.invalidate_file(self.number);
            if fs::remove_file(&self.path).is_ok() {
                self.env.disk.sub(self.len);
            }
        }
    }
}

/// Buffered writer for a new file. Every byte is charged to the current
/// activity and added to disk usage as it is written.
pub struct FileSink {
    path: PathBuf,
    out: Option<BufWriter<File>>,
    written: u64,
    env: FileEnv,
}

impl FileSink {
    pub fn create(path: PathBuf, env: FileEnv) -> io::Result<Self> {
        let f = OpenOptions::new().write(true).create_new(true).open(&path)?;
        Ok(Self {
            path,
            out: Some(BufWriter::with_capacity(64 << 10, f)),
            written: 0,
            env,
        })
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn finish(mut self, sync: bool) -> io::Result<u64> {
        let out = self.out.take().expect("finish called once");
        let f = out.into_inner().map_err(|e| e.into_error())?;
        if sync {
            f.sync_all()?;
        }
        Ok(self.written)
    }

    /// Removes a partially written file.
    pub fn abandon(mut self) {
        self.out.take();
        if fs::remove_file(&self.path).is_ok() {
            self.env.disk.sub(self.written);
        }
    }
}

impl Sink for FileSink {
    fn write_all(&mut self, bytes: &[u8]) -> kvsep_core::Result<()> {
        let out = self.out.as_mut().expect("sink is open");
        out.write_all(bytes)
            .map_err(|e| kvsep_core::Error::Io(Box::new(e)))?;
        self.written += bytes.len() as u64;
        self.env.stats.record_write(bytes.len() as u64);
        self.env.disk.add(bytes.len() as u64);
        Ok(())
    }
}

pub fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}
