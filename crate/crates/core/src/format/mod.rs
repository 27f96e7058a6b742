//! On-disk table formats.
//!
//! Both formats are written through a [`Sink`] and read through a
//! [`BlockSource`]; the std crate supplies file-backed and cached
//! implementations. Every read names the [`BlockKind`] it touches so that
//! callers can account bytes and choose cache priority per region.

use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::coding::{put_u64, Decoder};
use crate::error::{Error, Region, Result};

pub mod dtable;
pub mod rtable;

pub use dtable::{DTableBuilder, DTableOptions, DTableProps, DTableReader, LookupMode};
pub use rtable::{RTableBuilder, RTableIndexEntry, RTableOptions, RTableProps, RTableReader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    /// DTable block holding index entries (references and tombstones).
    KfBlock,
    /// DTable block holding inline records.
    KvBlock,
    RTableIndexPartition,
    Filter,
    /// Footers, directories, block indexes and properties.
    Meta,
    /// A single RTable record (or a run of them).
    Record,
}

impl BlockKind {
    pub const ALL: [BlockKind; 6] = [
        BlockKind::KfBlock,
        BlockKind::KvBlock,
        BlockKind::RTableIndexPartition,
        BlockKind::Filter,
        BlockKind::Meta,
        BlockKind::Record,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHandle {
    pub offset: u64,
    pub size: u64,
    pub kind: BlockKind,
}

impl BlockHandle {
    pub fn new(offset: u64, size: u64, kind: BlockKind) -> Self {
        Self { offset, size, kind }
    }

    pub fn end(&self) -> u64 {
        self.offset + self.size
    }

    pub(crate) fn encode_into(&self, buf: &mut Vec<u8>) {
        put_u64(buf, self.offset);
        put_u64(buf, self.size);
    }

    pub(crate) fn decode_from(d: &mut Decoder<'_>, kind: BlockKind) -> Result<Self> {
        let offset = d.u64()?;
        let size = d.u64()?;
        Ok(Self { offset, size, kind })
    }

    pub(crate) fn check_within(&self, file_len: u64, region: Region) -> Result<()> {
        match self.offset.checked_add(self.size) {
            Some(end) if end <= file_len => Ok(()),
            _ => Err(Error::corrupt(region, "handle out of bounds")),
        }
    }
}

/// Random-access, immutable byte source for an opened table file.
pub trait BlockSource {
    fn len(&self) -> u64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn read(&self, handle: BlockHandle) -> Result<Arc<[u8]>>;
}

impl<S: BlockSource + ?Sized> BlockSource for Arc<S> {
    fn len(&self) -> u64 {
        (**self).len()
    }

    fn read(&self, handle: BlockHandle) -> Result<Arc<[u8]>> {
        (**self).read(handle)
    }
}

impl<S: BlockSource + ?Sized> BlockSource for &S {
    fn len(&self) -> u64 {
        (**self).len()
    }

    fn read(&self, handle: BlockHandle) -> Result<Arc<[u8]>> {
        (**self).read(handle)
    }
}

/// Append-only destination for a table being built.
pub trait Sink {
    fn write_all(&mut self, bytes: &[u8]) -> Result<()>;
}

impl Sink for Vec<u8> {
    fn write_all(&mut self, bytes: &[u8]) -> Result<()> {
        self.extend_from_slice(bytes);
        Ok(())
    }
}

impl<S: Sink + ?Sized> Sink for &mut S {
    fn write_all(&mut self, bytes: &[u8]) -> Result<()> {
        (**self).write_all(bytes)
    }
}

/// In-memory source that counts reads and bytes per block kind.
#[derive(Debug)]
pub struct MemSource {
    data: Arc<[u8]>,
    reads: [AtomicU64; 6],
    bytes: [AtomicU64; 6],
}

impl MemSource {
    pub fn new(data: impl Into<Arc<[u8]>>) -> Self {
        Self {
            data: data.into(),
            reads: Default::default(),
            bytes: Default::default(),
        }
    }

    pub fn reads(&self, kind: BlockKind) -> u64 {
        self.reads[kind.index()].load(Ordering::Relaxed)
    }

    pub fn bytes(&self, kind: BlockKind) -> u64 {
        self.bytes[kind.index()].load(Ordering::Relaxed)
    }

    pub fn total_bytes(&self) -> u64 {
        BlockKind::ALL.iter().map(|k| self.bytes(*k)).sum()
    }

    pub fn reset_counters(&self) {
        for i in 0..6 {
            self.reads[i].store(0, Ordering::Relaxed);
            self.bytes[i].store(0, Ordering::Relaxed);
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

impl BlockSource for MemSource {
    fn len(&self) -> u64 {
        self.data.len() as u64
    }

    fn read(&self, h: BlockHandle) -> Result<Arc<[u8]>> {
        let end = h
            .offset
            .checked_add(h.size)
            .filter(|e| *e <= self.data.len() as u64)
            .ok_or(Error::InvalidArgument("read past end of source"))?;
        self.reads[h.kind.index()].fetch_add(1, Ordering::Relaxed);
        self.bytes[h.kind.index()].fetch_add(h.size, Ordering::Relaxed);
        Ok(Arc::from(&self.data[h.offset as usize..end as usize]))
    }
}

/// Counts bytes passed through to an inner sink.
pub(crate) struct CountingSink<S> {
    pub inner: S,
    pub written: u64,
}

impl<S: Sink> CountingSink<S> {
    pub fn new(inner: S) -> Self {
        Self { inner, written: 0 }
    }

    pub fn write(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes)?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}
