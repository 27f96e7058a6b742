//! An immutable view of the tree: manifest state plus open table handles.

use std::collections::HashMap;
use std::sync::Arc;

use kvsep_core::format::{DTableReader, LookupMode, RTableReader};
use kvsep_core::levels::NUM_LEVELS;
use kvsep_core::manifest::VersionState;
use kvsep_core::IndexEntry;

use crate::error::{Error, Result};
use crate::file::TableFile;

pub type KTable = DTableReader<Arc<TableFile>>;
pub type VTable = RTableReader<Arc<TableFile>>;

pub(crate) type EntryIter<'a> = Box<dyn Iterator<Item = kvsep_core::Result<IndexEntry>> + 'a>;

/// Every key table in `state` has a handle in `ktables`, and every live
/// value file one in `vtables`.
pub struct Version {
    pub state: VersionState,
    pub ktables: HashMap<u64, Arc<KTable>>,
    pub vtables: HashMap<u64, Arc<VTable>>,
}

impl Version {
    pub fn empty() -> Self {
        Self {
            state: VersionState::default(),
            ktables: HashMap::new(),
            vtables: HashMap::new(),
        }
    }

    pub fn ktable(&self, n: u64) -> Result<&Arc<KTable>> {
        self.ktables.get(&n).ok_or(Error::MissingFile(n))
    }

    pub fn vtable(&self, n: u64) -> Result<&Arc<VTable>> {
        self.vtables.get(&n).ok_or(Error::MissingFile(n))
    }

    /// Newest index entry for `key`.
    pub fn lookup(&self, key: &[u8], mode: LookupMode) -> Result<Option<IndexEntry>> {
        for f in &self.state.levels[0] {
            if f.overlaps(key, key) {
                if let Some(e) = self.ktable(f.number)?.get(key, mode).map_err(Error::in_file(f.number))? {
                    return Ok(Some(e));
                }
            }
        }
        for files in &self.state.levels[1..] {
            let i = files.partition_point(|f| f.largest.as_slice() < key);
            if i < files.len() && files[i].smallest.as_slice() <= key {
                let n = files[i].number;
                if let Some(e) = self.ktable(n)?.get(key, mode).map_err(Error::in_file(n))? {
                    return Ok(Some(e));
                }
            }
        }
        Ok(None)
    }

    /// Follows `file` through inheritance and reads the value of `key`.
    pub fn read_value(&self, key: &[u8], file: u64) -> Result<Vec<u8>> {
        let dangling = || Error::DanglingReference {
            key: key.to_vec(),
            file,
        };
        let live = self.state.registry.resolve(file)?.ok_or_else(dangling)?;
        self.vtable(live)?
            .get(key)
            .map_err(Error::in_file(live))?
            .ok_or_else(dangling)
    }

    /// One sorted source per L0 file (newest first), then one per level.
    pub(crate) fn sources_from<'a>(&'a self, start: &[u8]) -> Vec<EntryIter<'a>> {
        let mut out: Vec<EntryIter<'a>> = Vec::new();
        for f in &self.state.levels[0] {
            out.push(Box::new(self.ktables[&f.number].iter_from(start)));
        }
        for files in &self.state.levels[1..NUM_LEVELS] {
            if files.is_empty() {
                continue;
            }
            let first = files.partition_point(|f| f.largest.as_slice() < start);
            let s = start.to_vec();
            out.push(Box::new(
                files[first..]
                    .iter()
                    .flat_map(move |f| self.ktables[&f.number].iter_from(&s)),
            ));
        }
        out
    }
}
