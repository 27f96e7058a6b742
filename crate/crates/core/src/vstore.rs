//! Registry of value files and their garbage accounting.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::inherit::InheritanceMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Temperature {
    Hot,
    Cold,
}

impl Temperature {
    pub fn as_u8(self) -> u8 {
        match self {
            Temperature::Hot => 1,
            Temperature::Cold => 0,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Temperature::Cold),
            1 => Some(Temperature::Hot),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VsstState {
    Live,
    /// Retired by GC with a successor holding its survivors.
    Superseded,
    /// Retired with nothing left to inherit.
    Deletable,
}

impl VsstState {
    pub fn as_u8(self) -> u8 {
        match self {
            VsstState::Live => 0,
            VsstState::Superseded => 1,
            VsstState::Deletable => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(VsstState::Live),
            1 => Some(VsstState::Superseded),
            2 => Some(VsstState::Deletable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VsstMeta {
    pub file_number: u64,
    pub file_size: u64,
    pub total_entries: u64,
    /// Sum of record sizes, headers included. Fixed at creation.
    pub total_value_bytes: u64,
    pub exposed_garbage_bytes: u64,
    pub exposed_garbage_entries: u64,
    pub temperature: Temperature,
    pub state: VsstState,
}

impl VsstMeta {
    pub fn new(
        file_number: u64,
        file_size: u64,
        total_entries: u64,
        total_value_bytes: u64,
        temperature: Temperature,
    ) -> Self {
        Self {
            file_number,
            file_size,
            total_entries,
            total_value_bytes,
            exposed_garbage_bytes: 0,
            exposed_garbage_entries: 0,
            temperature,
            state: VsstState::Live,
        }
    }

    pub fn garbage_ratio(&self) -> f64 {
        if self.total_value_bytes == 0 {
            return 0.0;
        }
        self.exposed_garbage_bytes as f64 / self.total_value_bytes as f64
    }

    pub fn is_live(&self) -> bool {
        self.state == VsstState::Live
    }
}

/// All value files ever registered, live or retired, plus the inheritance map.
#[derive(Debug, Clone, Default)]
pub struct ValueRegistry {
    files: BTreeMap<u64, VsstMeta>,
    inherit: InheritanceMap,
    anomalies: u64,
}

impl ValueRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, meta: VsstMeta) -> Result<()> {
        if self.files.contains_key(&meta.file_number) {
            return Err(Error::InvalidArgument("value file registered twice"));
        }
        self.files.insert(meta.file_number, meta);
        Ok(())
    }

    pub fn get(&self, f: u64) -> Option<&VsstMeta> {
        self.files.get(&f)
    }

    pub fn inheritance(&self) -> &InheritanceMap {
        &self.inherit
    }

    pub fn files(&self) -> impl Iterator<Item = &VsstMeta> {
        self.files.values()
    }

    pub fn live_files(&self) -> impl Iterator<Item = &VsstMeta> {
        self.files.values().filter(|m| m.is_live())
    }

    /// Count of garbage updates that had to be clamped.
    pub fn accounting_anomalies(&self) -> u64 {
        self.anomalies
    }

    /// Resolves a referenced file number to the live file holding its data.
    /// `None` means the chain ends in a file whose records are all garbage.
    pub fn resolve(&self, f: u64) -> Result<Option<u64>> {
        if !self.files.contains_key(&f) {
            return Err(Error::UnknownFile(f));
        }
        let end = self.inherit.resolve(f)?;
        match self.files.get(&end) {
            Some(m) if m.is_live() => Ok(Some(end)),
            Some(_) => Ok(None),
            None => Err(Error::UnknownFile(end)),
        }
    }

    /// Installs a raw link without touching file states (snapshot replay).
    pub fn insert_inheritance(&mut self, old: u64, new: u64) -> Result<()> {
        if !self.files.contains_key(&old) {
            return Err(Error::UnknownFile(old));
        }
        if !self.files.contains_key(&new) {
            return Err(Error::UnknownFile(new));
        }
        self.inherit.insert(old, new)
    }

    /// Drops retired files that no chain from `referenced` passes through,
    /// along with their links. Returns how many entries were removed.
    pub fn prune_retired(&mut self, referenced: impl IntoIterator<Item = u64>) -> usize {
        let mut keep = BTreeSet::new();
        for mut f in referenced {
            while self.files.contains_key(&f) && keep.insert(f) {
                match self.inherit.successor(f) {
                    Some(n) => f = n,
                    None => break,
                }
            }
        }
        let before = self.files.len();
        self.files.retain(|f, m| m.is_live() || keep.contains(f));
        let gone: Vec<u64> = self
            .inherit
            .iter()
            .filter(|(old, _)| !self.files.contains_key(old))
            .map(|(old, _)| old)
            .collect();
        for old in gone {
            self.inherit.remove(old);
        }
        before - self.files.len()
    }

    pub fn compress_paths(&mut self) -> Result<()> {
        self.inherit.compress_all()
    }

    /// Adds exposed garbage to a live file, clamping at its total.
    pub fn record_garbage(&mut self, live: u64, bytes: u64) -> Result<()> {
        let m = self.files.get_mut(&live).ok_or(Error::UnknownFile(live))?;
        let bytes_after = m.exposed_garbage_bytes + bytes;
        let entries_after = m.exposed_garbage_entries + 1;
        if bytes_after > m.total_value_bytes || entries_after > m.total_entries {
            self.anomalies += 1;
        }
        m.exposed_garbage_bytes = bytes_after.min(m.total_value_bytes);
        m.exposed_garbage_entries = entries_after.min(m.total_entries);
        Ok(())
    }

    pub fn set_garbage(&mut self, f: u64, bytes: u64, entries: u64) -> Result<()> {
        let m = self.files.get_mut(&f).ok_or(Error::UnknownFile(f))?;
        m.exposed_garbage_bytes = bytes.min(m.total_value_bytes);
        m.exposed_garbage_entries = entries.min(m.total_entries);
        Ok(())
    }

    /// Retires a live file. With a successor, references keep resolving to
    /// the successor; without one the file held no survivors.
    pub fn retire(&mut self, old: u64, successor: Option<u64>) -> Result<()> {
        match self.files.get(&old) {
            Some(m) if m.is_live() => {}
            Some(_) => return Err(Error::Inheritance("retired file is not live")),
            None => return Err(Error::UnknownFile(old)),
        }
        if let Some(s) = successor {
            match self.files.get(&s) {
                Some(m) if m.is_live() => {}
                Some(_) => return Err(Error::Inheritance("successor is not live")),
                None => return Err(Error::UnknownFile(s)),
            }
            self.inherit.insert(old, s)?;
        }
        let m = self.files.get_mut(&old).expect("checked above");
        m.state = if successor.is_some() {
            VsstState::Superseded
        } else {
            VsstState::Deletable
        };
        Ok(())
    }

    /// Share of a dependency's bytes attributed to `refs` referencing
    /// entries: `file_size * refs / total_entries` of the resolved file.
    pub fn dependency_bytes(&self, f: u64, refs: u64) -> Result<u64> {
        let Some(live) = self.resolve(f)? else {
            return Ok(0);
        };
        let m = &self.files[&live];
        if m.total_entries == 0 {
            return Ok(0);
        }
        let share = u128::from(m.file_size) * u128::from(refs) / u128::from(m.total_entries);
        Ok(share.min(u128::from(m.file_size)) as u64)
    }

    pub fn live_value_bytes(&self) -> u64 {
        self.live_files().map(|m| m.total_value_bytes).sum()
    }

    pub fn live_file_bytes(&self) -> u64 {
        self.live_files().map(|m| m.file_size).sum()
    }

    pub fn exposed_garbage_bytes(&self) -> u64 {
        self.live_files().map(|m| m.exposed_garbage_bytes).sum()
    }
}
