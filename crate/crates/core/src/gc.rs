//! GC policy, candidate selection and per-job statistics.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vstore::{Temperature, VsstMeta};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcPolicy {
    pub garbage_threshold: f64,
    /// Effective threshold while the space throttle is engaged.
    pub aggressive_threshold: f64,
    pub max_concurrent_jobs: usize,
}

impl Default for GcPolicy {
    fn default() -> Self {
        Self {
            garbage_threshold: 0.2,
            aggressive_threshold: 0.05,
            max_concurrent_jobs: 1,
        }
    }
}

impl GcPolicy {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.aggressive_threshold
            && self.aggressive_threshold <= self.garbage_threshold
            && self.garbage_threshold < 1.0;
        if !ok {
            return Err(Error::InvalidArgument(
                "gc thresholds must satisfy 0 < aggressive <= threshold < 1",
            ));
        }
        Ok(())
    }

    pub fn effective_threshold(&self, under_pressure: bool) -> f64 {
        if under_pressure {
            self.aggressive_threshold
        } else {
            self.garbage_threshold
        }
    }
}

/// Live files at or above `threshold`, highest garbage ratio first, older
/// file numbers first on ties.
pub fn pick_gc_candidates<'a>(
    files: impl IntoIterator<Item = &'a VsstMeta>,
    threshold: f64,
) -> Vec<u64> {
    let mut c: Vec<(f64, u64)> = files
        .into_iter()
        .filter(|m| m.is_live() && m.exposed_garbage_bytes > 0)
        .map(|m| (m.garbage_ratio(), m.file_number))
        .filter(|(r, _)| *r >= threshold)
        .collect();
    c.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    c.into_iter().map(|(_, f)| f).collect()
}

/// Temperature for one input's survivors: the majority wins so that the
/// input keeps a single successor. Ties go to cold.
pub fn successor_temperature(hot_bytes: u64, cold_bytes: u64) -> Temperature {
    if hot_bytes > cold_bytes {
        Temperature::Hot
    } else {
        Temperature::Cold
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GcJobStats {
    pub job_id: u64,
    pub inputs: Vec<u64>,
    pub outputs: Vec<u64>,
    pub read_ns: u64,
    pub lookup_ns: u64,
    pub write_ns: u64,
    pub index_bytes_read: u64,
    /// Record bytes consumed by the job (logical).
    pub value_bytes_read: u64,
    /// Bytes actually fetched from disk for records, including readahead.
    pub value_bytes_fetched: u64,
    pub bytes_written: u64,
    pub input_entries: u64,
    pub input_value_bytes: u64,
    pub survivor_entries: u64,
    pub survivor_bytes: u64,
    pub garbage_entries: u64,
    /// Inputs whose survivors were split across temperatures and had to be
    /// forced to one.
    pub temperature_overrides: u64,
    pub kv_block_reads_in_lookup: u64,
}

impl GcJobStats {
    pub fn total_ns(&self) -> u64 {
        self.read_ns + self.lookup_ns + self.write_ns
    }

    pub fn survivor_ratio(&self) -> f64 {
        if self.input_entries == 0 {
            return 0.0;
        }
        self.survivor_entries as f64 / self.input_entries as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyReport {
    pub jobs: usize,
    pub read_share: f64,
    pub lookup_share: f64,
    pub write_share: f64,
    pub read_ns_per_entry: f64,
    pub lookup_ns_per_entry: f64,
    pub write_ns_per_entry: f64,
}

/// Per-step share of total GC time, plus per-entry averages.
pub fn gc_latency_report(jobs: &[GcJobStats]) -> Result<LatencyReport> {
    if jobs.is_empty() {
        return Err(Error::InvalidArgument("no completed gc jobs"));
    }
    let read: u64 = jobs.iter().map(|j| j.read_ns).sum();
    let lookup: u64 = jobs.iter().map(|j| j.lookup_ns).sum();
    let write: u64 = jobs.iter().map(|j| j.write_ns).sum();
    let total = read + lookup + write;
    if total == 0 {
        return Err(Error::InvalidArgument("gc jobs have zero duration"));
    }
    let entries = jobs.iter().map(|j| j.input_entries).sum::<u64>().max(1) as f64;
    let t = total as f64;
    Ok(LatencyReport {
        jobs: jobs.len(),
        read_share: read as f64 / t,
        lookup_share: lookup as f64 / t,
        write_share: write as f64 / t,
        read_ns_per_entry: read as f64 / entries,
        lookup_ns_per_entry: lookup as f64 / entries,
        write_ns_per_entry: write as f64 / entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn meta(f: u64, garbage: u64) -> VsstMeta {
        let mut m = VsstMeta::new(f, 100, 10, 100, Temperature::Cold);
        m.exposed_garbage_bytes = garbage;
        m
    }

    #[test]
    fn candidates_filter_and_sort() {
        let files = [meta(1, 30), meta(2, 10), meta(3, 25), meta(0, 25)];
        assert_eq!(pick_gc_candidates(&files, 0.2), vec![1, 0, 3]);
        assert!(pick_gc_candidates(&files, 0.5).is_empty());
    }

    #[test]
    fn report_shares() {
        let job = GcJobStats {
            read_ns: 2_000,
            lookup_ns: 1_000,
            write_ns: 1_000,
            input_entries: 4,
            ..Default::default()
        };
        let r = gc_latency_report(&[job]).unwrap();
        assert_eq!((r.read_share, r.lookup_share, r.write_share), (0.5, 0.25, 0.25));
        assert!(gc_latency_report(&[]).is_err());
        assert!(gc_latency_report(&[GcJobStats::default()]).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(GcPolicy::default().validate().is_ok());
        let bad = GcPolicy {
            aggressive_threshold: 0.3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
