//! Key-value separated LSM-tree engine.
//!
//! Small values stay inline in the index tree; large values go to value
//! files and the index stores a reference. Value files are collected by a
//! GC that reads only index bytes until it knows which records survive.

pub mod bench;
pub mod cache;
pub mod config;
pub mod db;
pub mod error;
pub mod file;
pub mod iostat;
pub mod log;
pub mod memtable;
pub mod version;

pub use config::EngineConfig;
pub use db::{Db, FailPoint, IntegrityReport, LevelSummary, Metrics};
pub use error::{Error, Result};
pub use kvsep_core::gc::GcJobStats;
pub use kvsep_core::space::{SpaceStats, ThrottleState};
