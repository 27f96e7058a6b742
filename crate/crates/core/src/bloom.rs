//! Double-hashing Bloom filter.
//!
//! Encoding: `bit array | num_probes u8`. Probe `i` tests bit
//! `(h1 + i * h2) mod nbits` where `h1`/`h2` are the low/high halves of
//! [`key_hash`].

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Region, Result};

pub const DEFAULT_BITS_PER_KEY: usize = 10;

/// FNV-1a followed by the murmur3 64-bit finalizer.
pub fn key_hash(key: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in key {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

fn probes(h: u64) -> (u32, u32) {
    let h1 = h as u32;
    // odd stride so that probes cycle through all residues
    let h2 = ((h >> 32) as u32) | 1;
    (h1, h2)
}

pub struct BloomBuilder {
    bits_per_key: usize,
    hashes: Vec<u64>,
}

impl BloomBuilder {
    pub fn new(bits_per_key: usize) -> Self {
        Self {
            bits_per_key: bits_per_key.max(1),
            hashes: Vec::new(),
        }
    }

    pub fn add_key(&mut self, key: &[u8]) {
        self.hashes.push(key_hash(key));
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    pub fn finish(&self) -> Vec<u8> {
        // k = round(bits_per_key * ln 2), integer approximation
        let k = ((self.bits_per_key * 69 + 50) / 100).clamp(1, 30) as u8;
        let nbits = (self.hashes.len() * self.bits_per_key).max(64);
        let nbytes = nbits.div_ceil(8);
        let nbits = (nbytes * 8) as u32;
        let mut out = vec![0u8; nbytes + 1];
        for &h in &self.hashes {
            let (h1, h2) = probes(h);
            for i in 0..u32::from(k) {
                let bit = h1.wrapping_add(i.wrapping_mul(h2)) % nbits;
                out[(bit / 8) as usize] |= 1 << (bit % 8);
            }
        }
        out[nbytes] = k;
        out
    }
}

/// Read-only view over an encoded filter.
#[derive(Debug, Clone)]
pub struct BloomFilter {
    bits: Vec<u8>,
    k: u8,
}

impl BloomFilter {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 2 {
            return Err(Error::corrupt(Region::Filter, "filter too short"));
        }
        let (bits, k) = bytes.split_at(bytes.len() - 1);
        if k[0] == 0 || k[0] > 30 {
            return Err(Error::corrupt(Region::Filter, "bad probe count"));
        }
        Ok(Self {
            bits: bits.to_vec(),
            k: k[0],
        })
    }

    pub fn may_contain(&self, key: &[u8]) -> bool {
        let nbits = (self.bits.len() * 8) as u32;
        let (h1, h2) = probes(key_hash(key));
        (0..u32::from(self.k)).all(|i| {
            let bit = h1.wrapping_add(i.wrapping_mul(h2)) % nbits;
            self.bits[(bit / 8) as usize] & (1 << (bit % 8)) != 0
        })
    }
}
