//! Benchmark harness: workload generation, phase execution and CSV reports.

pub mod report;
pub mod runner;
pub mod workload;

pub use report::emit_report;
pub use runner::{run_ops, run_phase, PhaseReport, RunOptions, SpaceRow};
pub use workload::{KeyDist, Op, Phase, ValueDist, WorkloadSpec};
