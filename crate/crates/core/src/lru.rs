//! Two-priority LRU with a shared byte budget.
//!
//! High-priority entries live in their own list. When that list grows past
//! its share of the budget its oldest entries are demoted to the low list.
//! Eviction drains the low list first.

use alloc::collections::BTreeMap;
use core::ops::RangeBounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Priority {
    High,
    Low,
}

#[derive(Debug)]
struct Slot<V> {
    value: V,
    charge: usize,
    high: bool,
    tick: u64,
}

#[derive(Debug)]
pub struct PriorityLru<K: Ord + Clone, V: Clone> {
    capacity: usize,
    high_capacity: usize,
    usage: usize,
    high_usage: usize,
    tick: u64,
    map: BTreeMap<K, Slot<V>>,
    high: BTreeMap<u64, K>,
    low: BTreeMap<u64, K>,
}

impl<K: Ord + Clone, V: Clone> PriorityLru<K, V> {
    pub fn new(capacity: usize, high_ratio: f64) -> Self {
        let high_ratio = high_ratio.clamp(0.0, 1.0);
        Self {
            capacity,
            high_capacity: (capacity as f64 * high_ratio) as usize,
            usage: 0,
            high_usage: 0,
            tick: 0,
            map: BTreeMap::new(),
            high: BTreeMap::new(),
            low: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn usage(&self) -> usize {
        self.usage
    }

    pub fn high_usage(&self) -> usize {
        self.high_usage
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn contains(&self, k: &K) -> bool {
        self.map.contains_key(k)
    }

    /// Priority the entry currently sits at, if resident.
    pub fn priority_of(&self, k: &K) -> Option<Priority> {
        self.map
            .get(k)
            .map(|s| if s.high { Priority::High } else { Priority::Low })
    }

    fn unlink(&mut self, high: bool, tick: u64) {
        if high {
            self.high.remove(&tick);
        } else {
            self.low.remove(&tick);
        }
    }

    pub fn get(&mut self, k: &K) -> Option<V> {
        self.tick += 1;
        let tick = self.tick;
        let slot = self.map.get_mut(k)?;
        let (high, old) = (slot.high, slot.tick);
        slot.tick = tick;
        let value = slot.value.clone();
        self.unlink(high, old);
        if high {
            self.high.insert(tick, k.clone());
        } else {
            self.low.insert(tick, k.clone());
        }
        Some(value)
    }

    /// Inserts or replaces. Returns false if the entry is larger than the
    /// whole cache and was not admitted.
    pub fn insert(&mut self, k: K, v: V, charge: usize, prio: Priority) -> bool {
        self.remove(&k);
        if charge > self.capacity {
            return false;
        }
        self.tick += 1;
        let high = prio == Priority::High;
        if high {
            self.high.insert(self.tick, k.clone());
            self.high_usage += charge;
        } else {
            self.low.insert(self.tick, k.clone());
        }
        self.usage += charge;
        self.map.insert(
            k,
            Slot {
                value: v,
                charge,
                high,
                tick: self.tick,
            },
        );
        self.demote_overflow();
        self.evict_to_fit();
        true
    }

    fn demote_overflow(&mut self) {
        while self.high_usage > self.high_capacity {
            let Some((tick, k)) = self.high.pop_first() else {
                break;
            };
            let slot = self.map.get_mut(&k).expect("list and map in sync");
            slot.high = false;
            self.high_usage -= slot.charge;
            self.low.insert(tick, k);
        }
    }

    fn evict_to_fit(&mut self) {
        while self.usage > self.capacity {
            let victim = match self.low.pop_first() {
                Some((_, k)) => k,
                None => match self.high.pop_first() {
                    Some((_, k)) => k,
                    None => break,
                },
            };
            let slot = self.map.remove(&victim).expect("list and map in sync");
            self.usage -= slot.charge;
            if slot.high {
                self.high_usage -= slot.charge;
            }
        }
    }

    pub fn remove(&mut self, k: &K) -> Option<V> {
        let slot = self.map.remove(k)?;
        self.unlink(slot.high, slot.tick);
        self.usage -= slot.charge;
        if slot.high {
            self.high_usage -= slot.charge;
        }
        Some(slot.value)
    }

    /// Removes every key in `range`; returns how many were removed.
    pub fn remove_range<R: RangeBounds<K>>(&mut self, range: R) -> usize {
        let keys: alloc::vec::Vec<K> = self.map.range(range).map(|(k, _)| k.clone()).collect();
        for k in &keys {
            self.remove(k);
        }
        keys.len()
    }
}
