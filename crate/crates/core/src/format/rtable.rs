//! RTable: value table with a dense, partitioned key index.
//!
//! ```text
//! records   : { key_len u32 | val_len u32 | key | value }*
//! partitions: { count u32 | { key_len u32 | key | offset u64 | seq u64 }* | crc u32 }*
//! directory : count u32 | { key_len u32 | last_key | part_off u64 | part_size u64 | records_end u64 }* | crc u32
//! filter    : bloom | crc u32
//! footer    : version u32 | flags u32 | record_count u64 | records_size u64 | value_bytes u64
//!             | partitions (off,size) | directory (off,size) | filter (off,size) | crc u32 | magic [8]
//! ```
//!
//! A record's size is the distance to the next record's offset, or to the
//! partition's `records_end` for the last entry of a partition.

use alloc::sync::Arc;
use alloc::vec::Vec;

use super::{BlockHandle, BlockKind, BlockSource, CountingSink, Sink};
use crate::bloom::{BloomBuilder, BloomFilter, DEFAULT_BITS_PER_KEY};
use crate::coding::{put_len_prefixed, put_u32, put_u64, seal, unseal, Decoder};
use crate::error::{Error, Region, Result};

pub const MAGIC: &[u8; 8] = b"KVSRTBL1";
pub const VERSION: u32 = 1;
pub const FOOTER_LEN: u64 = 92;
pub const RECORD_HEADER_LEN: u64 = 8;

#[derive(Debug, Clone, Copy)]
pub struct RTableOptions {
    pub partition_size: usize,
    pub bits_per_key: usize,
}

impl Default for RTableOptions {
    fn default() -> Self {
        Self {
            partition_size: 4096,
            bits_per_key: DEFAULT_BITS_PER_KEY,
        }
    }
}

/// Byte accounting reported by the builder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RTableProps {
    pub record_count: u64,
    /// Size of the records segment, headers included.
    pub records_size: u64,
    /// Sum of value lengths only.
    pub value_bytes: u64,
    pub partition_count: u64,
    pub partitions_size: u64,
    pub directory_size: u64,
    pub filter_size: u64,
    pub file_size: u64,
}

impl RTableProps {
    /// Everything that is not a record: partitions, directory, filter, footer.
    pub fn non_record_bytes(&self) -> u64 {
        self.file_size - self.records_size
    }
}

/// One dense index entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RTableIndexEntry {
    pub key: Vec<u8>,
    pub offset: u64,
    pub size: u64,
    pub seq: u64,
}

impl RTableIndexEntry {
    pub fn handle(&self) -> BlockHandle {
        BlockHandle::new(self.offset, self.size, BlockKind::Record)
    }
}

struct DirEntry {
    last_key: Vec<u8>,
    handle: BlockHandle,
    records_end: u64,
}

pub struct RTableBuilder<S: Sink> {
    out: CountingSink<S>,
    opts: RTableOptions,
    last_key: Option<Vec<u8>>,
    bloom: BloomBuilder,
    partitions: Vec<u8>,
    part_body: Vec<u8>,
    part_count: u32,
    directory: Vec<DirEntry>,
    record_count: u64,
    value_bytes: u64,
}

impl<S: Sink> RTableBuilder<S> {
    pub fn new(sink: S, opts: RTableOptions) -> Self {
        Self {
            out: CountingSink::new(sink),
            bloom: BloomBuilder::new(opts.bits_per_key),
            opts,
            last_key: None,
            partitions: Vec::new(),
            part_body: Vec::new(),
            part_count: 0,
            directory: Vec::new(),
            record_count: 0,
            value_bytes: 0,
        }
    }

    pub fn record_count(&self) -> u64 {
        self.record_count
    }

    /// Bytes of records written so far.
    pub fn records_size(&self) -> u64 {
        self.out.written
    }

    /// Rough final file size, used to decide when to roll outputs.
    pub fn estimated_size(&self) -> u64 {
        self.out.written + self.partitions.len() as u64 + self.part_body.len() as u64
    }

    pub fn add(&mut self, key: &[u8], seq: u64, value: &[u8]) -> Result<()> {
        if let Some(last) = &self.last_key {
            if key <= last.as_slice() {
                return Err(Error::Unsorted);
            }
        }
        let offset = self.out.written;
        let entry_len = 4 + key.len() + 16;
        if self.part_count > 0 && 4 + self.part_body.len() + entry_len + 4 > self.opts.partition_size
        {
            self.cut_partition(offset);
        }

        let mut header = [0u8; 8];
        header[..4].copy_from_slice(&(key.len() as u32).to_le_bytes());
        header[4..].copy_from_slice(&(value.len() as u32).to_le_bytes());
        self.out.write(&header)?;
        self.out.write(key)?;
        self.out.write(value)?;

        put_len_prefixed(&mut self.part_body, key);
        put_u64(&mut self.part_body, offset);
        put_u64(&mut self.part_body, seq);
        self.part_count += 1;
        self.bloom.add_key(key);
        self.record_count += 1;
        self.value_bytes += value.len() as u64;
        self.last_key = Some(key.to_vec());
        Ok(())
    }

    fn cut_partition(&mut self, records_end: u64) {
        let start = self.partitions.len();
        put_u32(&mut self.partitions, self.part_count);
        self.partitions.extend_from_slice(&self.part_body);
        seal(&mut self.partitions, start);
        let size = (self.partitions.len() - start) as u64;
        self.directory.push(DirEntry {
            last_key: self.last_key.clone().unwrap_or_default(),
            // relative for now, rebased in finish()
            handle: BlockHandle::new(start as u64, size, BlockKind::RTableIndexPartition),
            records_end,
        });
        self.part_body.clear();
        self.part_count = 0;
    }

    /// Writes the index, filter and footer. Returns the sink and the props.
    pub fn finish(mut self) -> Result<(S, RTableProps)> {
        if self.record_count == 0 {
            return Err(Error::EmptyInput);
        }
        let records_size = self.out.written;
        self.cut_partition(records_size);

        let partitions_off = records_size;
        let partitions = core::mem::take(&mut self.partitions);
        self.out.write(&partitions)?;

        let mut dir = Vec::new();
        put_u32(&mut dir, self.directory.len() as u32);
        for d in &self.directory {
            put_len_prefixed(&mut dir, &d.last_key);
            put_u64(&mut dir, partitions_off + d.handle.offset);
            put_u64(&mut dir, d.handle.size);
            put_u64(&mut dir, d.records_end);
        }
        seal(&mut dir, 0);
        let dir_off = self.out.written;
        self.out.write(&dir)?;

        let mut filter = self.bloom.finish();
        seal(&mut filter, 0);
        let filter_off = self.out.written;
        self.out.write(&filter)?;

        let mut footer = Vec::with_capacity(FOOTER_LEN as usize);
        put_u32(&mut footer, VERSION);
        put_u32(&mut footer, 0);
        put_u64(&mut footer, self.record_count);
        put_u64(&mut footer, records_size);
        put_u64(&mut footer, self.value_bytes);
        BlockHandle::new(partitions_off, partitions.len() as u64, BlockKind::Meta)
            .encode_into(&mut footer);
        BlockHandle::new(dir_off, dir.len() as u64, BlockKind::Meta).encode_into(&mut footer);
        BlockHandle::new(filter_off, filter.len() as u64, BlockKind::Filter)
            .encode_into(&mut footer);
        seal(&mut footer, 0);
        footer.extend_from_slice(MAGIC);
        debug_assert_eq!(footer.len() as u64, FOOTER_LEN);
        self.out.write(&footer)?;

        let props = RTableProps {
            record_count: self.record_count,
            records_size,
            value_bytes: self.value_bytes,
            partition_count: self.directory.len() as u64,
            partitions_size: partitions.len() as u64,
            directory_size: dir.len() as u64,
            filter_size: filter.len() as u64,
            file_size: self.out.written,
        };
        Ok((self.out.inner, props))
    }
}

/// Splits a record into key and value, checking the embedded key.
pub fn decode_record<'a>(bytes: &'a [u8], expected_key: &[u8]) -> Result<&'a [u8]> {
    let mut d = Decoder::new(bytes, Region::Record);
    let klen = d.u32()? as usize;
    let vlen = d.u32()? as usize;
    let key = d.bytes(klen)?;
    let value = d.bytes(vlen)?;
    if key != expected_key {
        return Err(Error::corrupt(Region::Record, "record key does not match index"));
    }
    if !d.is_empty() {
        return Err(Error::corrupt(Region::Record, "record size mismatch"));
    }
    Ok(value)
}

pub fn record_size(key_len: usize, value_len: usize) -> u64 {
    RECORD_HEADER_LEN + key_len as u64 + value_len as u64
}

#[derive(Debug, Clone, Copy)]
struct Footer {
    record_count: u64,
    records_size: u64,
    value_bytes: u64,
    partitions: BlockHandle,
    directory: BlockHandle,
    filter: BlockHandle,
}

/// Opened RTable. The footer, partition directory and filter stay in memory.
pub struct RTableReader<S> {
    src: S,
    footer: Footer,
    dir: Vec<DirEntry>,
    filter: BloomFilter,
}

impl<S: BlockSource> RTableReader<S> {
    pub fn open(src: S) -> Result<Self> {
        let len = src.len();
        if len < FOOTER_LEN {
            return Err(Error::corrupt(Region::Footer, "file too short"));
        }
        let raw = src.read(BlockHandle::new(len - FOOTER_LEN, FOOTER_LEN, BlockKind::Meta))?;
        let (body, magic) = raw.split_at(raw.len() - 8);
        if magic != MAGIC {
            return Err(Error::corrupt(Region::Footer, "bad magic"));
        }
        let body = unseal(body, Region::Footer)?;
        let mut d = Decoder::new(body, Region::Footer);
        if d.u32()? != VERSION {
            return Err(Error::corrupt(Region::Footer, "unsupported version"));
        }
        let _flags = d.u32()?;
        let record_count = d.u64()?;
        let records_size = d.u64()?;
        let value_bytes = d.u64()?;
        let partitions = BlockHandle::decode_from(&mut d, BlockKind::RTableIndexPartition)?;
        let directory = BlockHandle::decode_from(&mut d, BlockKind::Meta)?;
        let filter = BlockHandle::decode_from(&mut d, BlockKind::Filter)?;
        for h in [partitions, directory, filter] {
            h.check_within(len - FOOTER_LEN, Region::Footer)?;
        }
        if records_size > partitions.offset {
            return Err(Error::corrupt(Region::Footer, "records overlap index"));
        }
        let footer = Footer {
            record_count,
            records_size,
            value_bytes,
            partitions,
            directory,
            filter,
        };

        let raw = src.read(directory)?;
        let body = unseal(&raw, Region::RTableDirectory)?;
        let mut d = Decoder::new(body, Region::RTableDirectory);
        let n = d.u32()? as usize;
        let mut dir = Vec::with_capacity(n);
        for _ in 0..n {
            let last_key = d.len_prefixed()?.to_vec();
            let handle = BlockHandle::decode_from(&mut d, BlockKind::RTableIndexPartition)?;
            let records_end = d.u64()?;
            if handle.offset < partitions.offset
                || handle.end() > partitions.end()
                || records_end > records_size
            {
                return Err(Error::corrupt(Region::RTableDirectory, "partition out of bounds"));
            }
            dir.push(DirEntry {
                last_key,
                handle,
                records_end,
            });
        }

        let raw = src.read(filter)?;
        let filter = BloomFilter::decode(unseal(&raw, Region::Filter)?)?;
        Ok(Self {
            src,
            footer,
            dir,
            filter,
        })
    }

    pub fn source(&self) -> &S {
        &self.src
    }

    pub fn record_count(&self) -> u64 {
        self.footer.record_count
    }

    pub fn records_size(&self) -> u64 {
        self.footer.records_size
    }

    pub fn value_bytes(&self) -> u64 {
        self.footer.value_bytes
    }

    pub fn partition_count(&self) -> usize {
        self.dir.len()
    }

    /// Bytes pinned by `open`: footer, directory and filter.
    pub fn pinned_bytes(&self) -> u64 {
        FOOTER_LEN + self.footer.directory.size + self.footer.filter.size
    }

    pub fn partitions_size(&self) -> u64 {
        self.footer.partitions.size
    }

    fn read_partition(&self, i: usize) -> Result<Vec<RTableIndexEntry>> {
        let de = &self.dir[i];
        let raw = self.src.read(de.handle)?;
        let body = unseal(&raw, Region::RTableIndex)?;
        let mut d = Decoder::new(body, Region::RTableIndex);
        let n = d.u32()? as usize;
        let mut out: Vec<RTableIndexEntry> = Vec::with_capacity(n);
        for _ in 0..n {
            let key = d.len_prefixed()?.to_vec();
            let offset = d.u64()?;
            let seq = d.u64()?;
            if let Some(prev) = out.last_mut() {
                if offset <= prev.offset || key <= prev.key {
                    return Err(Error::corrupt(Region::RTableIndex, "entries out of order"));
                }
                prev.size = offset - prev.offset;
            }
            out.push(RTableIndexEntry {
                key,
                offset,
                size: 0,
                seq,
            });
        }
        if let Some(last) = out.last_mut() {
            if de.records_end <= last.offset {
                return Err(Error::corrupt(Region::RTableIndex, "records_end before last record"));
            }
            last.size = de.records_end - last.offset;
        }
        if !d.is_empty() {
            return Err(Error::corrupt(Region::RTableIndex, "trailing bytes"));
        }
        Ok(out)
    }

    /// Reads every index partition. Touches no record bytes.
    pub fn read_index(&self) -> Result<Vec<RTableIndexEntry>> {
        let mut all = Vec::with_capacity(self.footer.record_count as usize);
        for i in 0..self.dir.len() {
            all.extend(self.read_partition(i)?);
        }
        if all.len() as u64 != self.footer.record_count {
            return Err(Error::corrupt(Region::RTableIndex, "entry count differs from footer"));
        }
        Ok(all)
    }

    pub fn may_contain(&self, key: &[u8]) -> bool {
        self.filter.may_contain(key)
    }

    /// Index lookup only, no record I/O.
    pub fn find(&self, key: &[u8]) -> Result<Option<RTableIndexEntry>> {
        if !self.filter.may_contain(key) {
            return Ok(None);
        }
        let i = self.dir.partition_point(|d| d.last_key.as_slice() < key);
        if i == self.dir.len() {
            return Ok(None);
        }
        let part = self.read_partition(i)?;
        Ok(part
            .binary_search_by(|e| e.key.as_slice().cmp(key))
            .ok()
            .map(|j| part[j].clone()))
    }

    pub fn read_value(&self, entry: &RTableIndexEntry) -> Result<Vec<u8>> {
        let raw = self.src.read(entry.handle())?;
        Ok(decode_record(&raw, &entry.key)?.to_vec())
    }

    pub fn read_record_raw(&self, entry: &RTableIndexEntry) -> Result<Arc<[u8]>> {
        self.src.read(entry.handle())
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        match self.find(key)? {
            Some(e) => self.read_value(&e).map(Some),
            None => Ok(None),
        }
    }

    /// All records in key order.
    pub fn scan_all(&self) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        let index = self.read_index()?;
        let mut out = Vec::with_capacity(index.len());
        for e in index {
            let v = self.read_value(&e)?;
            out.push((e.key, v));
        }
        Ok(out)
    }
}
