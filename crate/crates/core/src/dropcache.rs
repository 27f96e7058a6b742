//! LRU set of keys recently dropped by compaction.
//!
//! A key whose older version was just merged away is likely to be updated
//! again, so writes of such keys are classified hot.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

/// Fixed per-key charge on top of the key bytes.
pub const KEY_OVERHEAD: usize = 8;

#[derive(Debug, Clone)]
pub struct DropCache {
    capacity: usize,
    used: usize,
    tick: u64,
    by_key: BTreeMap<Vec<u8>, u64>,
    by_tick: BTreeMap<u64, Vec<u8>>,
}

impl DropCache {
    pub fn new(capacity_bytes: usize) -> Self {
        Self {
            capacity: capacity_bytes,
            used: 0,
            tick: 0,
            by_key: BTreeMap::new(),
            by_tick: BTreeMap::new(),
        }
    }

    pub fn charge(key: &[u8]) -> usize {
        key.len() + KEY_OVERHEAD
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    fn touch(&mut self, key: &[u8]) -> bool {
        let Some(old) = self.by_key.get_mut(key) else {
            return false;
        };
        self.tick += 1;
        let k = self.by_tick.remove(old).expect("tick index in sync");
        *old = self.tick;
        self.by_tick.insert(self.tick, k);
        true
    }

    pub fn note_dropped(&mut self, key: &[u8]) {
        if self.touch(key) {
            return;
        }
        let c = Self::charge(key);
        if c > self.capacity {
            return;
        }
        while self.used + c > self.capacity {
            let (_, victim) = self.by_tick.pop_first().expect("used > 0 implies entries");
            self.used -= Self::charge(&victim);
            self.by_key.remove(&victim);
        }
        self.tick += 1;
        self.by_key.insert(key.to_vec(), self.tick);
        self.by_tick.insert(self.tick, key.to_vec());
        self.used += c;
    }

    /// Membership test; a hit refreshes the key's recency.
    pub fn is_hot(&mut self, key: &[u8]) -> bool {
        self.touch(key)
    }

    /// Membership test without promotion.
    pub fn contains(&self, key: &[u8]) -> bool {
        self.by_key.contains_key(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_four_byte_key_charges_thirty_two() {
        assert_eq!(DropCache::charge(&[0u8; 24]), 32);
    }

    #[test]
    fn lru_eviction_and_promotion() {
        let mut c = DropCache::new(3 * DropCache::charge(b"k1"));
        c.note_dropped(b"k1");
        c.note_dropped(b"k2");
        c.note_dropped(b"k3");
        assert!(c.is_hot(b"k1"));
        c.note_dropped(b"k4");
        assert!(!c.contains(b"k2"));
        assert!(c.contains(b"k1") && c.contains(b"k3") && c.contains(b"k4"));
        c.note_dropped(b"k3");
        c.note_dropped(b"k5");
        assert!(!c.contains(b"k1"));
        assert!(c.used() <= c.capacity());
        assert!(!c.is_hot(b"absent"));
    }
}
