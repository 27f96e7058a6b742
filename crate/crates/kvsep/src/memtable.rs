//! In-memory write buffer backed by a concurrent skiplist.

use std::sync::atomic::{AtomicU64, Ordering};

use crossbeam_skiplist::SkipMap;
use kvsep_core::{EntryValue, IndexEntry};

/// Per-entry bookkeeping charged on top of key and value bytes.
const ENTRY_OVERHEAD: u64 = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemEntry {
    pub seq: u64,
    /// `None` is a deletion.
    pub value: Option<Vec<u8>>,
}

impl MemEntry {
    fn footprint(&self, key_len: usize) -> u64 {
        key_len as u64 + self.value.as_ref().map_or(0, |v| v.len() as u64) + ENTRY_OVERHEAD
    }

    pub fn to_index_entry(&self, key: &[u8]) -> IndexEntry {
        let value = match &self.value {
            Some(v) => EntryValue::Inline(v.clone()),
            None => EntryValue::Tombstone,
        };
        IndexEntry::new(key, self.seq, value)
    }
}

/// Holds the newest version of each key. Writers are serialized by the
/// engine; readers may run concurrently.
pub struct Memtable {
    map: SkipMap<Vec<u8>, MemEntry>,
    size: AtomicU64,
    max_seq: AtomicU64,
    wal_number: u64,
}

impl Memtable {
    pub fn new(wal_number: u64) -> Self {
        Self {
            map: SkipMap::new(),
            size: AtomicU64::new(0),
            max_seq: AtomicU64::new(0),
            wal_number,
        }
    }

    pub fn wal_number(&self) -> u64 {
        self.wal_number
    }

    pub fn insert(&self, key: &[u8], seq: u64, value: Option<&[u8]>) {
        let e = MemEntry {
            seq,
            value: value.map(<[u8]>::to_vec),
        };
        let add = e.footprint(key.len());
        let old = self.map.get(key).map(|o| o.value().footprint(key.len()));
        self.map.insert(key.to_vec(), e);
        self.size.fetch_add(add, Ordering::Relaxed);
        if let Some(old) = old {
            self.size.fetch_sub(old, Ordering::Relaxed);
        }
        self.max_seq.fetch_max(seq, Ordering::Relaxed);
    }

    pub fn get(&self, key: &[u8]) -> Option<MemEntry> {
        self.map.get(key).map(|e| e.value().clone())
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.map.contains_key(key)
    }

    pub fn approximate_size(&self) -> u64 {
        self.size.load(Ordering::Relaxed)
    }

    pub fn max_seq(&self) -> u64 {
        self.max_seq.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Entries with key >= `start`, ascending.
    pub fn iter_from<'a>(&'a self, start: &[u8]) -> impl Iterator<Item = IndexEntry> + 'a {
        self.map
            .range(start.to_vec()..)
            .map(|e| e.value().to_index_entry(e.key()))
    }
}
