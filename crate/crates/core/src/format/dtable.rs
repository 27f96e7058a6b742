//! DTable: key table with index entries (KF) and inline records (KV) kept
//! in separate data blocks, each kind with its own block index.
//!
//! ```text
//! data blocks : { count u32 | entry* | crc u32 }*      (KF and KV interleaved as they fill)
//! kf index    : count u32 | { key_len u32 | last_key | off u64 | size u64 }* | crc u32
//! kv index    : same layout
//! filter      : bloom | crc u32
//! properties  : see DTableProps::encode
//! footer      : version u32 | flags u32 | kf index h | kv index h | filter h | props h | crc u32 | magic [8]
//! ```
//!
//! With splitting disabled every entry goes to KV blocks, which is the
//! layout of a conventional table.

use alloc::collections::BTreeMap;
use core::cmp::Ordering;
use alloc::vec::Vec;

use super::{BlockHandle, BlockKind, BlockSource, CountingSink, Sink};
use crate::bloom::{BloomBuilder, BloomFilter, DEFAULT_BITS_PER_KEY};
use crate::coding::{put_len_prefixed, put_u32, put_u64, seal, unseal, Decoder};
use crate::entry::{EntryValue, IndexEntry};
use crate::error::{Error, Region, Result};

pub const MAGIC: &[u8; 8] = b"KVSDTBL1";
pub const VERSION: u32 = 1;
pub const FOOTER_LEN: u64 = 84;
const FLAG_SPLIT: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub struct DTableOptions {
    pub block_size: usize,
    pub bits_per_key: usize,
    pub split: bool,
}

impl Default for DTableOptions {
    fn default() -> Self {
        Self {
            block_size: 4096,
            bits_per_key: DEFAULT_BITS_PER_KEY,
            split: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupMode {
    Full,
    /// Index entries only; inline records are invisible. Used by GC-Lookup.
    KfOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DTableProps {
    pub entry_count: u64,
    pub reference_count: u64,
    pub inline_count: u64,
    pub tombstone_count: u64,
    pub kf_block_count: u64,
    pub kv_block_count: u64,
    pub smallest_key: Vec<u8>,
    pub largest_key: Vec<u8>,
    pub max_seq: u64,
    /// (value file number, references) sorted by file number.
    pub dependencies: Vec<(u64, u64)>,
    pub file_size: u64,
}

impl DTableProps {
    fn encode(&self, buf: &mut Vec<u8>) {
        let start = buf.len();
        put_u64(buf, self.entry_count);
        put_u64(buf, self.reference_count);
        put_u64(buf, self.inline_count);
        put_u64(buf, self.tombstone_count);
        put_u64(buf, self.kf_block_count);
        put_u64(buf, self.kv_block_count);
        put_len_prefixed(buf, &self.smallest_key);
        put_len_prefixed(buf, &self.largest_key);
        put_u64(buf, self.max_seq);
        put_u32(buf, self.dependencies.len() as u32);
        for (f, n) in &self.dependencies {
            put_u64(buf, *f);
            put_u64(buf, *n);
        }
        seal(buf, start);
    }

    fn decode(raw: &[u8], file_size: u64) -> Result<Self> {
        let body = unseal(raw, Region::Properties)?;
        let mut d = Decoder::new(body, Region::Properties);
        let mut p = DTableProps {
            entry_count: d.u64()?,
            reference_count: d.u64()?,
            inline_count: d.u64()?,
            tombstone_count: d.u64()?,
            kf_block_count: d.u64()?,
            kv_block_count: d.u64()?,
            smallest_key: d.len_prefixed()?.to_vec(),
            largest_key: d.len_prefixed()?.to_vec(),
            max_seq: d.u64()?,
            dependencies: Vec::new(),
            file_size,
        };
        let n = d.u32()? as usize;
        for _ in 0..n {
            let f = d.u64()?;
            let c = d.u64()?;
            p.dependencies.push((f, c));
        }
        Ok(p)
    }
}

struct PendingBlock {
    body: Vec<u8>,
    count: u32,
    last_key: Vec<u8>,
    index: Vec<u8>,
    index_count: u32,
    blocks: u64,
}

impl PendingBlock {
    fn new() -> Self {
        Self {
            body: Vec::new(),
            count: 0,
            last_key: Vec::new(),
            index: Vec::new(),
            index_count: 0,
            blocks: 0,
        }
    }
}

pub struct DTableBuilder<S: Sink> {
    out: CountingSink<S>,
    opts: DTableOptions,
    kf: PendingBlock,
    kv: PendingBlock,
    bloom: BloomBuilder,
    props: DTableProps,
    deps: BTreeMap<u64, u64>,
    last_key: Option<Vec<u8>>,
}

impl<S: Sink> DTableBuilder<S> {
    pub fn new(sink: S, opts: DTableOptions) -> Self {
        Self {
            out: CountingSink::new(sink),
            bloom: BloomBuilder::new(opts.bits_per_key),
            opts,
            kf: PendingBlock::new(),
            kv: PendingBlock::new(),
            props: DTableProps::default(),
            deps: BTreeMap::new(),
            last_key: None,
        }
    }

    pub fn entry_count(&self) -> u64 {
        self.props.entry_count
    }

    pub fn estimated_size(&self) -> u64 {
        self.out.written + (self.kf.body.len() + self.kv.body.len()) as u64
    }

    /// Adds the single surviving version of a key. Keys must strictly increase.
    pub fn add(&mut self, e: &IndexEntry) -> Result<()> {
        if let Some(last) = &self.last_key {
            if e.key.as_slice() <= last.as_slice() {
                return Err(Error::Unsorted);
            }
        }
        match &e.value {
            EntryValue::Reference(f) => {
                self.props.reference_count += 1;
                *self.deps.entry(*f).or_insert(0) += 1;
            }
            EntryValue::Inline(_) => self.props.inline_count += 1,
            EntryValue::Tombstone => self.props.tombstone_count += 1,
        }
        if self.props.entry_count == 0 {
            self.props.smallest_key = e.key.clone();
        }
        self.props.entry_count += 1;
        self.props.max_seq = self.props.max_seq.max(e.seq);
        self.bloom.add_key(&e.key);

        let to_kf = self.opts.split && e.value.is_index_side();
        let block = if to_kf { &mut self.kf } else { &mut self.kv };
        e.encode_into(&mut block.body);
        block.count += 1;
        block.last_key.clear();
        block.last_key.extend_from_slice(&e.key);
        if block.body.len() + 8 >= self.opts.block_size {
            let kind = if to_kf { BlockKind::KfBlock } else { BlockKind::KvBlock };
            self.flush_block(kind)?;
        }
        self.last_key = Some(e.key.clone());
        Ok(())
    }

    fn flush_block(&mut self, kind: BlockKind) -> Result<()> {
        let block = match kind {
            BlockKind::KfBlock => &mut self.kf,
            _ => &mut self.kv,
        };
        if block.count == 0 {
            return Ok(());
        }
        let mut raw = Vec::with_capacity(block.body.len() + 8);
        put_u32(&mut raw, block.count);
        raw.extend_from_slice(&block.body);
        seal(&mut raw, 0);
        let offset = self.out.written;
        self.out.write(&raw)?;
        put_len_prefixed(&mut block.index, &block.last_key);
        put_u64(&mut block.index, offset);
        put_u64(&mut block.index, raw.len() as u64);
        block.index_count += 1;
        block.blocks += 1;
        block.body.clear();
        block.count = 0;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(S, DTableProps)> {
        if self.props.entry_count == 0 {
            return Err(Error::EmptyInput);
        }
        self.flush_block(BlockKind::KfBlock)?;
        self.flush_block(BlockKind::KvBlock)?;

        let mut handles = [BlockHandle::new(0, 0, BlockKind::Meta); 4];
        for (i, block) in [&self.kf, &self.kv].into_iter().enumerate() {
            let mut idx = Vec::with_capacity(block.index.len() + 8);
            put_u32(&mut idx, block.index_count);
            idx.extend_from_slice(&block.index);
            seal(&mut idx, 0);
            handles[i] = BlockHandle::new(self.out.written, idx.len() as u64, BlockKind::Meta);
            self.out.write(&idx)?;
        }

        let mut filter = self.bloom.finish();
        seal(&mut filter, 0);
        handles[2] = BlockHandle::new(self.out.written, filter.len() as u64, BlockKind::Filter);
        self.out.write(&filter)?;

        self.props.largest_key = self.last_key.take().unwrap_or_default();
        self.props.kf_block_count = self.kf.blocks;
        self.props.kv_block_count = self.kv.blocks;
        self.props.dependencies = self.deps.iter().map(|(f, n)| (*f, *n)).collect();
        let mut props = Vec::new();
        self.props.encode(&mut props);
        handles[3] = BlockHandle::new(self.out.written, props.len() as u64, BlockKind::Meta);
        self.out.write(&props)?;

        let mut footer = Vec::with_capacity(FOOTER_LEN as usize);
        put_u32(&mut footer, VERSION);
        put_u32(&mut footer, if self.opts.split { FLAG_SPLIT } else { 0 });
        for h in &handles {
            h.encode_into(&mut footer);
        }
        seal(&mut footer, 0);
        footer.extend_from_slice(MAGIC);
        debug_assert_eq!(footer.len() as u64, FOOTER_LEN);
        self.out.write(&footer)?;

        self.props.file_size = self.out.written;
        Ok((self.out.inner, self.props))
    }
}

#[derive(Debug, Clone)]
struct IndexItem {
    last_key: Vec<u8>,
    handle: BlockHandle,
}

fn decode_block_index(raw: &[u8], kind: BlockKind, data_end: u64) -> Result<Vec<IndexItem>> {
    let body = unseal(raw, Region::BlockIndex)?;
    let mut d = Decoder::new(body, Region::BlockIndex);
    let n = d.u32()? as usize;
    let mut out: Vec<IndexItem> = Vec::with_capacity(n);
    for _ in 0..n {
        let last_key = d.len_prefixed()?.to_vec();
        let handle = BlockHandle::decode_from(&mut d, kind)?;
        handle.check_within(data_end, Region::BlockIndex)?;
        if let Some(prev) = out.last() {
            if last_key <= prev.last_key {
                return Err(Error::corrupt(Region::BlockIndex, "block keys out of order"));
            }
        }
        out.push(IndexItem { last_key, handle });
    }
    Ok(out)
}

/// Opened DTable. Footer, block indexes, filter and properties are pinned.
pub struct DTableReader<S> {
    src: S,
    split: bool,
    kf_index: Vec<IndexItem>,
    kv_index: Vec<IndexItem>,
    filter: BloomFilter,
    props: DTableProps,
}

impl<S: BlockSource> DTableReader<S> {
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
        let flags = d.u32()?;
        let kf_h = BlockHandle::decode_from(&mut d, BlockKind::Meta)?;
        let kv_h = BlockHandle::decode_from(&mut d, BlockKind::Meta)?;
        let filter_h = BlockHandle::decode_from(&mut d, BlockKind::Filter)?;
        let props_h = BlockHandle::decode_from(&mut d, BlockKind::Meta)?;
        for h in [kf_h, kv_h, filter_h, props_h] {
            h.check_within(len - FOOTER_LEN, Region::Footer)?;
        }
        let data_end = kf_h.offset;
        let kf_index = decode_block_index(&src.read(kf_h)?, BlockKind::KfBlock, data_end)?;
        let kv_index = decode_block_index(&src.read(kv_h)?, BlockKind::KvBlock, data_end)?;
        let filter = BloomFilter::decode(unseal(&src.read(filter_h)?, Region::Filter)?)?;
        let props = DTableProps::decode(&src.read(props_h)?, len)?;
        Ok(Self {
            src,
            split: flags & FLAG_SPLIT != 0,
            kf_index,
            kv_index,
            filter,
            props,
        })
    }

    pub fn props(&self) -> &DTableProps {
        &self.props
    }

    pub fn is_split(&self) -> bool {
        self.split
    }

    pub fn source(&self) -> &S {
        &self.src
    }

    pub fn kf_block_count(&self) -> usize {
        self.kf_index.len()
    }

    pub fn kv_block_count(&self) -> usize {
        self.kv_index.len()
    }

    fn read_block(&self, h: BlockHandle) -> Result<Vec<IndexEntry>> {
        let raw = self.src.read(h)?;
        let body = unseal(&raw, Region::DataBlock)?;
        let mut d = Decoder::new(body, Region::DataBlock);
        let n = d.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(IndexEntry::decode_from(&mut d, Region::DataBlock)?);
        }
        if !d.is_empty() {
            return Err(Error::corrupt(Region::DataBlock, "trailing bytes"));
        }
        Ok(out)
    }

    fn search(&self, index: &[IndexItem], key: &[u8]) -> Result<Option<IndexEntry>> {
        let i = index.partition_point(|b| b.last_key.as_slice() < key);
        if i == index.len() {
            return Ok(None);
        }
        let raw = self.src.read(index[i].handle)?;
        let body = unseal(&raw, Region::DataBlock)?;
        let mut d = Decoder::new(body, Region::DataBlock);
        let n = d.u32()?;
        // walk keys in place and decode only the match
        for _ in 0..n {
            let at = d.position();
            let k = d.len_prefixed()?;
            match k.cmp(key) {
                Ordering::Less => {
                    d.bytes(9)?;
                    d.len_prefixed()?;
                }
                Ordering::Equal => {
                    let mut d = Decoder::new(&body[at..], Region::DataBlock);
                    return IndexEntry::decode_from(&mut d, Region::DataBlock).map(Some);
                }
                Ordering::Greater => break,
            }
        }
        Ok(None)
    }

    pub fn get(&self, key: &[u8], mode: LookupMode) -> Result<Option<IndexEntry>> {
        if key < self.props.smallest_key.as_slice()
            || key > self.props.largest_key.as_slice()
            || !self.filter.may_contain(key)
        {
            return Ok(None);
        }
        if self.split {
            if let Some(e) = self.search(&self.kf_index, key)? {
                return Ok(Some(e));
            }
            if mode == LookupMode::KfOnly {
                return Ok(None);
            }
            return self.search(&self.kv_index, key);
        }
        let found = self.search(&self.kv_index, key)?;
        Ok(match (mode, found) {
            (LookupMode::KfOnly, Some(e)) if !e.value.is_index_side() => None,
            (_, found) => found,
        })
    }

    pub fn iter(&self) -> DTableIter<'_, S> {
        self.iter_from(&[])
    }

    /// Iterator over entries with key >= `start`.
    pub fn iter_from(&self, start: &[u8]) -> DTableIter<'_, S> {
        DTableIter {
            kf: Cursor::new(self, &self.kf_index, start),
            kv: Cursor::new(self, &self.kv_index, start),
            failed: false,
        }
    }
}

struct Cursor<'a, S> {
    reader: &'a DTableReader<S>,
    index: &'a [IndexItem],
    next_block: usize,
    entries: Vec<IndexEntry>,
    pos: usize,
    start: Vec<u8>,
}

impl<'a, S: BlockSource> Cursor<'a, S> {
    fn new(reader: &'a DTableReader<S>, index: &'a [IndexItem], start: &[u8]) -> Self {
        let first = index.partition_point(|b| b.last_key.as_slice() < start);
        Self {
            reader,
            index,
            next_block: first,
            entries: Vec::new(),
            pos: 0,
            start: start.to_vec(),
        }
    }

    fn peek(&mut self) -> Result<Option<&IndexEntry>> {
        while self.pos >= self.entries.len() {
            if self.next_block >= self.index.len() {
                return Ok(None);
            }
            self.entries = self.reader.read_block(self.index[self.next_block].handle)?;
            self.next_block += 1;
            self.pos = self
                .entries
                .partition_point(|e| e.key.as_slice() < self.start.as_slice());
        }
        Ok(Some(&self.entries[self.pos]))
    }

    fn take(&mut self) -> IndexEntry {
        let e = core::mem::replace(
            &mut self.entries[self.pos],
            IndexEntry::new(Vec::new(), 0, EntryValue::Tombstone),
        );
        self.pos += 1;
        e
    }
}

/// Merged ascending iteration over KF and KV blocks.
pub struct DTableIter<'a, S> {
    kf: Cursor<'a, S>,
    kv: Cursor<'a, S>,
    failed: bool,
}

impl<S: BlockSource> DTableIter<'_, S> {
    fn step(&mut self) -> Result<Option<IndexEntry>> {
        let a = self.kf.peek()?.map(|e| e.key.clone());
        let b = self.kv.peek()?.map(|e| e.key.as_slice() < a.as_deref().unwrap_or(&[]));
        Ok(match (a, b) {
            (None, None) => None,
            (Some(_), None) => Some(self.kf.take()),
            (None, Some(_)) => Some(self.kv.take()),
            (Some(_), Some(kv_first)) => Some(if kv_first { self.kv.take() } else { self.kf.take() }),
        })
    }
}

impl<S: BlockSource> Iterator for DTableIter<'_, S> {
    type Item = Result<IndexEntry>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.step() {
            Ok(e) => e.map(Ok),
            Err(err) => {
                self.failed = true;
                Some(Err(err))
            }
        }
    }
}
