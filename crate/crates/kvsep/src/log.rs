//! Append-only logs: the write-ahead log and the manifest.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use kvsep_core::manifest::{decode_log, VersionEdit, VersionState};
use kvsep_core::wal::{encode_record, WalKind};

use crate::error::{Error, Result};
use crate::file::{file_name, file_path, sync_dir, DiskUsage, FileKind, CURRENT};
use crate::iostat::IoStats;

pub struct WalWriter {
    number: u64,
    file: File,
    size: u64,
    sync: bool,
    buf: Vec<u8>,
    stats: Arc<IoStats>,
    disk: Arc<DiskUsage>,
}

impl WalWriter {
    pub fn create(dir: &Path, number: u64, sync: bool, stats: Arc<IoStats>, disk: Arc<DiskUsage>) -> io::Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .create_new(true)
            .open(file_path(dir, FileKind::Wal, number))?;
        Ok(Self {
            number,
            file,
            size: 0,
            sync,
            buf: Vec::new(),
            stats,
            disk,
        })
    }

    pub fn number(&self) -> u64 {
        self.number
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    fn encode(&mut self, seq: u64, value: Option<&[u8]>, key: &[u8]) {
        self.buf.clear();
        match value {
            Some(v) => encode_record(&mut self.buf, seq, WalKind::Put, key, v),
            None => encode_record(&mut self.buf, seq, WalKind::Delete, key, &[]),
        }
    }

    pub fn append(&mut self, seq: u64, key: &[u8], value: Option<&[u8]>) -> io::Result<()> {
        self.encode(seq, value, key);
        let n = self.buf.len();
        self.write_prefix(n)?;
        if self.sync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    /// Writes only the first half of the record, as a crash mid-write would.
    pub fn append_torn(&mut self, seq: u64, key: &[u8], value: Option<&[u8]>) -> io::Result<()> {
        self.encode(seq, value, key);
        let n = self.buf.len() / 2;
        self.write_prefix(n)
    }

    fn write_prefix(&mut self, n: usize) -> io::Result<()> {
        self.file.write_all(&self.buf[..n])?;
        self.size += n as u64;
        self.stats.record_write(n as u64);
        self.disk.add(n as u64);
        Ok(())
    }

    pub fn sync(&mut self) -> io::Result<()> {
        self.file.sync_data()
    }
}

/// Replays the log named by CURRENT. `None` when the directory holds no
/// database yet.
pub fn load_manifest(dir: &Path, stats: &IoStats) -> Result<Option<(VersionState, u64)>> {
    let current = match fs::read_to_string(dir.join(CURRENT)) {
        Ok(s) => s,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let name = current.trim();
    let number = match crate::file::parse_file_name(name) {
        Some((FileKind::Manifest, n)) => n,
        _ => return Err(Error::Config(format!("CURRENT names `{name}`, not a manifest"))),
    };
    let bytes = fs::read(dir.join(name))?;
    stats.record_raw_read(bytes.len() as u64);
    let (edits, _used) = decode_log(&bytes)?;
    let mut state = VersionState::default();
    for e in &edits {
        state.apply(e)?;
    }
    Ok(Some((state, number)))
}

pub struct ManifestWriter {
    dir: PathBuf,
    number: u64,
    file: File,
    size: u64,
    sync: bool,
    stats: Arc<IoStats>,
    disk: Arc<DiskUsage>,
}

impl ManifestWriter {
    /// Starts a new manifest holding a snapshot of `state` and points
    /// CURRENT at it. The previous manifest, if any, is removed.
    pub fn create(
        dir: &Path,
        number: u64,
        state: &VersionState,
        sync: bool,
        stats: Arc<IoStats>,
        disk: Arc<DiskUsage>,
    ) -> Result<Self> {
        let path = file_path(dir, FileKind::Manifest, number);
        let file = OpenOptions::new().append(true).create_new(true).open(&path)?;
        let mut w = Self {
            dir: dir.to_path_buf(),
            number,
            file,
            size: 0,
            sync,
            stats,
            disk,
        };
        w.append(&state.snapshot())?;
        w.file.sync_all()?;
        let tmp = dir.join("CURRENT.tmp");
        fs::write(&tmp, format!("{}\n", file_name(FileKind::Manifest, number)))?;
        File::open(&tmp)?.sync_all()?;
        fs::rename(&tmp, dir.join(CURRENT))?;
        sync_dir(dir)?;
        Ok(w)
    }

    pub fn number(&self) -> u64 {
        self.number
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn append(&mut self, edit: &VersionEdit) -> Result<()> {
        let mut buf = Vec::new();
        edit.encode_framed(&mut buf);
        self.file.write_all(&buf)?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.size += buf.len() as u64;
        self.stats.record_write(buf.len() as u64);
        self.disk.add(buf.len() as u64);
        Ok(())
    }

    /// Deletes this manifest's file; used after a successor took over.
    pub fn remove(self) {
        let path = file_path(&self.dir, FileKind::Manifest, self.number);
        drop(self.file);
        if fs::remove_file(path).is_ok() {
            self.disk.sub(self.size);
        }
    }
}
