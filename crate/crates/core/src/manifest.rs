//! Version edits and the in-memory version state they build.
//!
//! The manifest is a log of framed edits (`crc u32 | len u32 | payload`,
//! same framing as the WAL). Each payload is a list of tagged items applied
//! atomically.

use alloc::vec;
use alloc::vec::Vec;

use crate::coding::{crc32, put_len_prefixed, put_u32, put_u64, put_u8, Decoder};
use crate::error::{Error, Region, Result};
use crate::levels::{FileMeta, NUM_LEVELS};
use crate::vstore::{Temperature, ValueRegistry, VsstMeta, VsstState};

const TAG_LOG_NUMBER: u8 = 1;
const TAG_NEXT_FILE: u8 = 2;
const TAG_LAST_SEQ: u8 = 3;
const TAG_ADD_KSST: u8 = 4;
const TAG_DEL_KSST: u8 = 5;
const TAG_ADD_VSST: u8 = 6;
const TAG_GARBAGE: u8 = 7;
const TAG_INHERIT: u8 = 8;
const TAG_RETIRE: u8 = 9;

#[derive(Debug, Clone, PartialEq)]
pub enum EditItem {
    LogNumber(u64),
    NextFile(u64),
    LastSeq(u64),
    AddKsst { level: u8, meta: FileMeta },
    DeleteKsst { level: u8, number: u64 },
    AddVsst(VsstMeta),
    /// Absolute exposed-garbage counters for a value file.
    Garbage { file: u64, bytes: u64, entries: u64 },
    /// Raw inheritance link, used by snapshots.
    Inherit { old: u64, new: u64 },
    Retire { file: u64, successor: Option<u64> },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VersionEdit {
    pub items: Vec<EditItem>,
}

impl VersionEdit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, item: EditItem) -> &mut Self {
        self.items.push(item);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends one framed record.
    pub fn encode_framed(&self, buf: &mut Vec<u8>) {
        let start = buf.len();
        put_u32(buf, 0);
        put_u32(buf, 0);
        for item in &self.items {
            encode_item(buf, item);
        }
        let len = (buf.len() - start - 8) as u32;
        buf[start + 4..start + 8].copy_from_slice(&len.to_le_bytes());
        let crc = crc32(&buf[start + 4..]);
        buf[start..start + 4].copy_from_slice(&crc.to_le_bytes());
    }

    fn decode_payload(p: &[u8]) -> Result<Self> {
        let mut d = Decoder::new(p, Region::Manifest);
        let mut items = Vec::new();
        while !d.is_empty() {
            items.push(decode_item(&mut d)?);
        }
        Ok(Self { items })
    }
}

fn encode_item(buf: &mut Vec<u8>, item: &EditItem) {
    match item {
        EditItem::LogNumber(n) => {
            put_u8(buf, TAG_LOG_NUMBER);
            put_u64(buf, *n);
        }
        EditItem::NextFile(n) => {
            put_u8(buf, TAG_NEXT_FILE);
            put_u64(buf, *n);
        }
        EditItem::LastSeq(n) => {
            put_u8(buf, TAG_LAST_SEQ);
            put_u64(buf, *n);
        }
        EditItem::AddKsst { level, meta } => {
            put_u8(buf, TAG_ADD_KSST);
            put_u8(buf, *level);
            put_u64(buf, meta.number);
            put_len_prefixed(buf, &meta.smallest);
            put_len_prefixed(buf, &meta.largest);
            put_u64(buf, meta.raw_size);
            put_u64(buf, meta.entry_count);
            put_u64(buf, meta.max_seq);
            put_u32(buf, meta.dependencies.len() as u32);
            for (f, n) in &meta.dependencies {
                put_u64(buf, *f);
                put_u64(buf, *n);
            }
        }
        EditItem::DeleteKsst { level, number } => {
            put_u8(buf, TAG_DEL_KSST);
            put_u8(buf, *level);
            put_u64(buf, *number);
        }
        EditItem::AddVsst(m) => {
            put_u8(buf, TAG_ADD_VSST);
            put_u64(buf, m.file_number);
            put_u64(buf, m.file_size);
            put_u64(buf, m.total_entries);
            put_u64(buf, m.total_value_bytes);
            put_u64(buf, m.exposed_garbage_bytes);
            put_u64(buf, m.exposed_garbage_entries);
            put_u8(buf, m.temperature.as_u8());
            put_u8(buf, m.state.as_u8());
        }
        EditItem::Garbage {
            file,
            bytes,
            entries,
        } => {
            put_u8(buf, TAG_GARBAGE);
            put_u64(buf, *file);
            put_u64(buf, *bytes);
            put_u64(buf, *entries);
        }
        EditItem::Inherit { old, new } => {
            put_u8(buf, TAG_INHERIT);
            put_u64(buf, *old);
            put_u64(buf, *new);
        }
        EditItem::Retire { file, successor } => {
            put_u8(buf, TAG_RETIRE);
            put_u64(buf, *file);
            put_u64(buf, successor.map_or(0, |s| s + 1));
        }
    }
}

fn decode_item(d: &mut Decoder<'_>) -> Result<EditItem> {
    Ok(match d.u8()? {
        TAG_LOG_NUMBER => EditItem::LogNumber(d.u64()?),
        TAG_NEXT_FILE => EditItem::NextFile(d.u64()?),
        TAG_LAST_SEQ => EditItem::LastSeq(d.u64()?),
        TAG_ADD_KSST => {
            let level = d.u8()?;
            let number = d.u64()?;
            let smallest = d.len_prefixed()?.to_vec();
            let largest = d.len_prefixed()?.to_vec();
            let raw_size = d.u64()?;
            let entry_count = d.u64()?;
            let max_seq = d.u64()?;
            let n = d.u32()? as usize;
            let mut dependencies = Vec::with_capacity(n);
            for _ in 0..n {
                let f = d.u64()?;
                let c = d.u64()?;
                dependencies.push((f, c));
            }
            EditItem::AddKsst {
                level,
                meta: FileMeta {
                    number,
                    smallest,
                    largest,
                    raw_size,
                    entry_count,
                    max_seq,
                    dependencies,
                },
            }
        }
        TAG_DEL_KSST => EditItem::DeleteKsst {
            level: d.u8()?,
            number: d.u64()?,
        },
        TAG_ADD_VSST => {
            let file_number = d.u64()?;
            let file_size = d.u64()?;
            let total_entries = d.u64()?;
            let total_value_bytes = d.u64()?;
            let exposed_garbage_bytes = d.u64()?;
            let exposed_garbage_entries = d.u64()?;
            let temperature = Temperature::from_u8(d.u8()?)
                .ok_or(Error::corrupt(Region::Manifest, "bad temperature"))?;
            let state = VsstState::from_u8(d.u8()?)
                .ok_or(Error::corrupt(Region::Manifest, "bad vsst state"))?;
            EditItem::AddVsst(VsstMeta {
                file_number,
                file_size,
                total_entries,
                total_value_bytes,
                exposed_garbage_bytes,
                exposed_garbage_entries,
                temperature,
                state,
            })
        }
        TAG_GARBAGE => EditItem::Garbage {
            file: d.u64()?,
            bytes: d.u64()?,
            entries: d.u64()?,
        },
        TAG_INHERIT => EditItem::Inherit {
            old: d.u64()?,
            new: d.u64()?,
        },
        TAG_RETIRE => {
            let file = d.u64()?;
            let s = d.u64()?;
            EditItem::Retire {
                file,
                successor: s.checked_sub(1),
            }
        }
        _ => return Err(Error::corrupt(Region::Manifest, "unknown edit tag")),
    })
}

/// Decodes a manifest log. A truncated final frame is tolerated (torn
/// write); a complete frame with a bad checksum is corruption.
pub fn decode_log(bytes: &[u8]) -> Result<(Vec<VersionEdit>, usize)> {
    let mut edits = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < 8 {
            break;
        }
        let crc = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]);
        let len = u32::from_le_bytes([rest[4], rest[5], rest[6], rest[7]]) as usize;
        if rest.len() < 8 + len {
            break;
        }
        if crc32(&rest[4..8 + len]) != crc {
            return Err(Error::corrupt(Region::Manifest, "checksum mismatch"));
        }
        edits.push(VersionEdit::decode_payload(&rest[8..8 + len])?);
        pos += 8 + len;
    }
    Ok((edits, pos))
}

/// Levels of key tables plus the value registry.
#[derive(Debug, Clone)]
pub struct VersionState {
    /// L0 newest first; L1+ sorted by smallest key.
    pub levels: Vec<Vec<FileMeta>>,
    pub registry: ValueRegistry,
    pub log_number: u64,
    pub next_file: u64,
    pub last_seq: u64,
}

impl Default for VersionState {
    fn default() -> Self {
        Self {
            levels: vec![Vec::new(); NUM_LEVELS],
            registry: ValueRegistry::new(),
            log_number: 0,
            next_file: 1,
            last_seq: 0,
        }
    }
}

impl VersionState {
    pub fn apply(&mut self, edit: &VersionEdit) -> Result<()> {
        for item in &edit.items {
            self.apply_item(item)?;
        }
        Ok(())
    }

    fn apply_item(&mut self, item: &EditItem) -> Result<()> {
        match item {
            EditItem::LogNumber(n) => self.log_number = *n,
            EditItem::NextFile(n) => self.next_file = self.next_file.max(*n),
            EditItem::LastSeq(n) => self.last_seq = self.last_seq.max(*n),
            EditItem::AddKsst { level, meta } => {
                let l = *level as usize;
                if l >= NUM_LEVELS {
                    return Err(Error::corrupt(Region::Manifest, "level out of range"));
                }
                self.next_file = self.next_file.max(meta.number + 1);
                let files = &mut self.levels[l];
                if l == 0 {
                    let pos = files.partition_point(|f| {
                        (f.max_seq, f.number) > (meta.max_seq, meta.number)
                    });
                    files.insert(pos, meta.clone());
                } else {
                    let pos = files.partition_point(|f| f.smallest < meta.smallest);
                    files.insert(pos, meta.clone());
                }
            }
            EditItem::DeleteKsst { level, number } => {
                let l = *level as usize;
                let files = self
                    .levels
                    .get_mut(l)
                    .ok_or(Error::corrupt(Region::Manifest, "level out of range"))?;
                let pos = files
                    .iter()
                    .position(|f| f.number == *number)
                    .ok_or(Error::corrupt(Region::Manifest, "deleting unknown key table"))?;
                files.remove(pos);
            }
            EditItem::AddVsst(m) => {
                self.next_file = self.next_file.max(m.file_number + 1);
                self.registry.register(m.clone())?;
            }
            EditItem::Garbage {
                file,
                bytes,
                entries,
            } => self.registry.set_garbage(*file, *bytes, *entries)?,
            EditItem::Inherit { old, new } => self.registry.insert_inheritance(*old, *new)?,
            EditItem::Retire { file, successor } => self.registry.retire(*file, *successor)?,
        }
        Ok(())
    }

    /// One edit that rebuilds this state from scratch.
    pub fn snapshot(&self) -> VersionEdit {
        let mut e = VersionEdit::new();
        e.push(EditItem::LogNumber(self.log_number));
        e.push(EditItem::NextFile(self.next_file));
        e.push(EditItem::LastSeq(self.last_seq));
        for m in self.registry.files() {
            e.push(EditItem::AddVsst(m.clone()));
        }
        for (old, new) in self.registry.inheritance().iter() {
            e.push(EditItem::Inherit { old, new });
        }
        for (l, files) in self.levels.iter().enumerate() {
            for f in files {
                e.push(EditItem::AddKsst {
                    level: l as u8,
                    meta: f.clone(),
                });
            }
        }
        e
    }

    /// Forgets retired value files that no key table can still reach.
    pub fn prune_registry(&mut self) -> usize {
        let refs: Vec<u64> = self
            .levels
            .iter()
            .flatten()
            .flat_map(|f| f.dependencies.iter().map(|(d, _)| *d))
            .collect();
        self.registry.prune_retired(refs)
    }

    pub fn level_of(&self, number: u64) -> Option<usize> {
        self.levels
            .iter()
            .position(|files| files.iter().any(|f| f.number == number))
    }

    pub fn ksst_numbers(&self) -> impl Iterator<Item = u64> + '_ {
        self.levels.iter().flatten().map(|f| f.number)
    }

    /// Structural checks: disjoint L1+ levels, known dependencies, acyclic
    /// inheritance.
    pub fn check_integrity(&self) -> Result<()> {
        for files in self.levels.iter().skip(1) {
            for w in files.windows(2) {
                if w[0].largest >= w[1].smallest {
                    return Err(Error::Inheritance("overlapping files within a level"));
                }
            }
        }
        if !self.registry.inheritance().is_acyclic() {
            return Err(Error::Inheritance("inheritance map has a cycle"));
        }
        for f in self.levels.iter().flatten() {
            for (dep, _) in &f.dependencies {
                self.registry.resolve(*dep)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ksst(number: u64, lo: &str, hi: &str, seq: u64) -> FileMeta {
        FileMeta {
            number,
            smallest: lo.into(),
            largest: hi.into(),
            raw_size: 10,
            entry_count: 1,
            max_seq: seq,
            dependencies: vec![(3, 1)],
        }
    }

    #[test]
    fn log_roundtrip_and_snapshot() {
        let mut e1 = VersionEdit::new();
        e1.push(EditItem::AddVsst(VsstMeta::new(3, 100, 1, 90, Temperature::Hot)))
            .push(EditItem::AddVsst(VsstMeta::new(4, 100, 1, 90, Temperature::Cold)))
            .push(EditItem::AddKsst {
                level: 0,
                meta: ksst(5, "a", "b", 7),
            })
            .push(EditItem::AddKsst {
                level: 0,
                meta: ksst(6, "a", "c", 9),
            })
            .push(EditItem::LastSeq(9));
        let mut e2 = VersionEdit::new();
        e2.push(EditItem::Retire {
            file: 3,
            successor: Some(4),
        })
        .push(EditItem::Garbage {
            file: 4,
            bytes: 10,
            entries: 1,
        });
        let mut log = Vec::new();
        e1.encode_framed(&mut log);
        e2.encode_framed(&mut log);
        let (edits, used) = decode_log(&log).unwrap();
        assert_eq!(used, log.len());
        assert_eq!(edits, vec![e1.clone(), e2.clone()]);

        let mut v = VersionState::default();
        v.apply(&e1).unwrap();
        v.apply(&e2).unwrap();
        assert_eq!(v.levels[0][0].number, 6);
        assert_eq!(v.registry.resolve(3).unwrap(), Some(4));
        v.check_integrity().unwrap();

        let mut w = VersionState::default();
        w.apply(&v.snapshot()).unwrap();
        assert_eq!(w.levels, v.levels);
        assert_eq!(w.registry.resolve(3).unwrap(), Some(4));
        assert_eq!(w.registry.get(4).unwrap().exposed_garbage_bytes, 10);
        assert_eq!(w.next_file, 7);
    }

    #[test]
    fn torn_tail_tolerated_bad_crc_fatal() {
        let mut log = Vec::new();
        let mut e = VersionEdit::new();
        e.push(EditItem::NextFile(42));
        e.encode_framed(&mut log);
        e.encode_framed(&mut log);
        let (edits, _) = decode_log(&log[..log.len() - 3]).unwrap();
        assert_eq!(edits.len(), 1);
        log[10] ^= 1;
        assert!(decode_log(&log).unwrap_err().is_corruption());
    }
}
