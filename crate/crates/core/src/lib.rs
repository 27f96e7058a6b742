//! Core data structures for a key-value separated LSM-tree.
//!
//! Everything in this crate is IO-free and only needs `alloc`: the on-disk
//! table codecs are driven through the [`format::BlockSource`] and
//! [`format::Sink`] traits, and all scheduling/accounting logic operates on
//! plain metadata. The `kvsep` crate wires these pieces to files, threads
//! and the block cache.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bloom;
pub mod coding;
pub mod dropcache;
pub mod entry;
pub mod error;
pub mod format;
pub mod gc;
pub mod inherit;
pub mod levels;
pub mod lru;
pub mod manifest;
pub mod merge;
pub mod space;
pub mod vstore;
pub mod wal;

pub use entry::{EntryValue, IndexEntry};
pub use error::{Error, Region, Result};
