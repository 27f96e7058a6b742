//! K-way merge of sorted entry streams, newest version wins.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::entry::IndexEntry;
use crate::error::Result;

/// The surviving version of one key plus every older version it hides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Merged {
    pub winner: IndexEntry,
    pub shadowed: Vec<IndexEntry>,
}

/// Merges streams that are each strictly increasing by key. On equal keys
/// the higher sequence number wins; on equal sequence numbers the stream
/// listed first wins.
pub struct MergeIter<I> {
    sources: Vec<I>,
    heads: Vec<Option<IndexEntry>>,
    heap: BinaryHeap<Reverse<(Vec<u8>, usize)>>,
    primed: bool,
    failed: bool,
}

impl<I: Iterator<Item = Result<IndexEntry>>> MergeIter<I> {
    pub fn new(sources: Vec<I>) -> Self {
        let n = sources.len();
        Self {
            sources,
            heads: (0..n).map(|_| None).collect(),
            heap: BinaryHeap::with_capacity(n),
            primed: false,
            failed: false,
        }
    }

    fn advance(&mut self, i: usize) -> Result<()> {
        match self.sources[i].next() {
            Some(Ok(e)) => {
                self.heap.push(Reverse((e.key.clone(), i)));
                self.heads[i] = Some(e);
            }
            Some(Err(err)) => return Err(err),
            None => self.heads[i] = None,
        }
        Ok(())
    }

    fn step(&mut self) -> Result<Option<Merged>> {
        if !self.primed {
            self.primed = true;
            for i in 0..self.sources.len() {
                self.advance(i)?;
            }
        }
        let Some(Reverse((key, first))) = self.heap.pop() else {
            return Ok(None);
        };
        let mut group = Vec::new();
        group.push((first, self.heads[first].take().expect("head present")));
        while let Some(Reverse((k, _))) = self.heap.peek() {
            if *k != key {
                break;
            }
            let Reverse((_, i)) = self.heap.pop().expect("peeked");
            group.push((i, self.heads[i].take().expect("head present")));
        }
        for &(i, _) in &group {
            self.advance(i)?;
        }
        let best = group
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.1.seq.cmp(&b.1.seq).then(b.0.cmp(&a.0)))
            .map(|(pos, _)| pos)
            .expect("group is non-empty");
        let (_, winner) = group.swap_remove(best);
        let mut shadowed: Vec<IndexEntry> = group.into_iter().map(|(_, e)| e).collect();
        shadowed.sort_by_key(|e| core::cmp::Reverse(e.seq));
        Ok(Some(Merged { winner, shadowed }))
    }
}

impl<I: Iterator<Item = Result<IndexEntry>>> Iterator for MergeIter<I> {
    type Item = Result<Merged>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.step() {
            Ok(m) => m.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entry::EntryValue;
    use alloc::vec;
    use alloc::vec::IntoIter;

    type Source = core::iter::Map<IntoIter<IndexEntry>, fn(IndexEntry) -> Result<IndexEntry>>;

    fn src(entries: &[(&str, u64, EntryValue)]) -> Source {
        let v: Vec<IndexEntry> = entries
            .iter()
            .map(|(k, s, v)| IndexEntry::new(k.as_bytes(), *s, v.clone()))
            .collect();
        v.into_iter().map(Ok as fn(IndexEntry) -> Result<IndexEntry>)
    }

    #[test]
    fn newest_wins_and_shadowed_reported() {
        let newer = src(&[("a", 2, EntryValue::Tombstone), ("c", 5, EntryValue::Reference(1))]);
        let older = src(&[("a", 1, EntryValue::Reference(7)), ("b", 1, EntryValue::Reference(7))]);
        let out: Vec<Merged> = MergeIter::new(vec![newer, older]).map(|m| m.unwrap()).collect();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].winner.seq, 2);
        assert_eq!(out[0].shadowed.len(), 1);
        assert_eq!(out[0].shadowed[0].value, EntryValue::Reference(7));
        assert_eq!(out[1].winner.key, b"b");
        assert!(out[1].shadowed.is_empty());
        assert_eq!(out[2].winner.key, b"c");
    }
}
