//! File-number inheritance: a retired value file maps to the file that now
//! holds its surviving records, so index entries never need rewriting.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Longest chain we are willing to walk before declaring the map broken.
const MAX_CHAIN: usize = 1 << 16;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InheritanceMap {
    succ: BTreeMap<u64, u64>,
}

impl InheritanceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.succ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succ.is_empty()
    }

    pub fn successor(&self, old: u64) -> Option<u64> {
        self.succ.get(&old).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.succ.iter().map(|(a, b)| (*a, *b))
    }

    /// Installs `old -> new`. Each file gets at most one successor and the
    /// map must stay acyclic.
    pub fn insert(&mut self, old: u64, new: u64) -> Result<()> {
        if old == new {
            return Err(Error::Inheritance("file cannot inherit from itself"));
        }
        if self.succ.contains_key(&old) {
            return Err(Error::Inheritance("file already has a successor"));
        }
        if self.resolve(new)? == old {
            return Err(Error::Inheritance("edit would create a cycle"));
        }
        self.succ.insert(old, new);
        Ok(())
    }

    /// Follows successors to the end of the chain.
    pub fn resolve(&self, mut f: u64) -> Result<u64> {
        for _ in 0..MAX_CHAIN {
            match self.succ.get(&f) {
                Some(&n) => f = n,
                None => return Ok(f),
            }
        }
        Err(Error::Inheritance("chain does not terminate"))
    }

    /// Points every entry on `f`'s chain directly at its terminal file.
    pub fn compress(&mut self, f: u64) -> Result<u64> {
        let end = self.resolve(f)?;
        let mut cur = f;
        while let Some(&next) = self.succ.get(&cur) {
            if next != end {
                self.succ.insert(cur, end);
            }
            cur = next;
        }
        Ok(end)
    }

    pub fn compress_all(&mut self) -> Result<()> {
        let keys: Vec<u64> = self.succ.keys().copied().collect();
        for k in keys {
            self.compress(k)?;
        }
        Ok(())
    }

    /// True when every chain terminates, which also rules out cycles.
    pub fn is_acyclic(&self) -> bool {
        self.succ.keys().all(|k| self.resolve(*k).is_ok())
    }

    pub fn remove(&mut self, old: u64) -> Option<u64> {
        self.succ.remove(&old)
    }
}
