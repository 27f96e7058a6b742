//! Shared block cache with high/low priority and single-flight loading.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use kvsep_core::lru::{Priority, PriorityLru};

use crate::error::Result;

/// Bookkeeping charged on top of each block's bytes.
pub const ENTRY_OVERHEAD: usize = 64;

type Key = (u64, u64);
type Block = Arc<[u8]>;

#[derive(Default)]
struct Flight {
    result: Mutex<Option<Option<Block>>>,
    cv: Condvar,
}

pub struct BlockCache {
    lru: Mutex<PriorityLru<Key, Block>>,
    inflight: Mutex<HashMap<Key, Arc<Flight>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    loads: AtomicU64,
}

impl BlockCache {
    pub fn new(capacity: u64, high_priority_ratio: f64) -> Self {
        Self {
            lru: Mutex::new(PriorityLru::new(capacity as usize, high_priority_ratio)),
            inflight: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            loads: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.lru.lock().unwrap().capacity()
    }

    pub fn usage(&self) -> usize {
        self.lru.lock().unwrap().usage()
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Number of times a loader actually ran.
    pub fn loads(&self) -> u64 {
        self.loads.load(Ordering::Relaxed)
    }

    pub fn contains(&self, file: u64, offset: u64) -> bool {
        self.lru.lock().unwrap().contains(&(file, offset))
    }

    /// Returns the cached block or runs `load` once, even when several
    /// threads miss on the same key at the same time. The flag is true on a
    /// hit.
    pub fn get_or_load<F>(&self, file: u64, offset: u64, prio: Priority, load: F) -> Result<(Block, bool)>
    where
        F: FnOnce() -> Result<Block>,
    {
        let key = (file, offset);
        let mut load = Some(load);
        loop {
            if let Some(b) = self.lru.lock().unwrap().get(&key) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok((b, true));
            }
            let (flight, leader) = {
                let mut inflight = self.inflight.lock().unwrap();
                match inflight.get(&key) {
                    Some(f) => (f.clone(), false),
                    None => {
                        let f = Arc::new(Flight::default());
                        inflight.insert(key, f.clone());
                        (f, true)
                    }
                }
            };
            if !leader {
                let mut done = flight.result.lock().unwrap();
                while done.is_none() {
                    done = flight.cv.wait(done).unwrap();
                }
                if let Some(Some(b)) = done.as_ref() {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok((b.clone(), true));
                }
                // the leader failed; try again ourselves
                continue;
            }
            self.misses.fetch_add(1, Ordering::Relaxed);
            self.loads.fetch_add(1, Ordering::Relaxed);
            let res = (load.take().expect("leader loads once"))();
            if let Ok(b) = &res {
                self.lru
                    .lock()
                    .unwrap()
                    .insert(key, b.clone(), b.len() + ENTRY_OVERHEAD, prio);
            }
            *flight.result.lock().unwrap() = Some(res.as_ref().ok().cloned());
            flight.cv.notify_all();
            self.inflight.lock().unwrap().remove(&key);
            return res.map(|b| (b, false));
        }
    }

    pub fn invalidate_file(&self, file: u64) -> usize {
        self.lru
            .lock()
            .unwrap()
            .remove_range((file, 0)..=(file, u64::MAX))
    }
}
