//! Space-amplification model and the space-aware write throttle.
//!
//! With `K_U` the compensated size of the upper index levels and `K_L` that
//! of the last non-empty level:
//!
//! ```text
//! S_index ≈ (K_U + K_L) / K_L
//! G_H     ≈ D * K_U / K_L
//! S_value ≈ G_E / D + S_index
//! ```

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpaceStats {
    pub k_upper: u64,
    pub k_last: u64,
    /// Valid value bytes.
    pub valid: u64,
    pub exposed_garbage: u64,
    /// Record bytes held by live value files.
    pub value_file_bytes: u64,
    pub total_disk_bytes: u64,
}

impl SpaceStats {
    pub fn index_space_amp(&self) -> Option<f64> {
        (self.k_last > 0).then(|| (self.k_upper + self.k_last) as f64 / self.k_last as f64)
    }

    pub fn hidden_garbage_estimate(&self) -> Option<f64> {
        (self.k_last > 0).then(|| self.valid as f64 * self.k_upper as f64 / self.k_last as f64)
    }

    pub fn value_space_amp(&self) -> Option<f64> {
        if self.valid == 0 {
            return None;
        }
        Some(self.exposed_garbage as f64 / self.valid as f64 + self.index_space_amp()?)
    }

    pub fn exposed_ratio(&self) -> Option<f64> {
        (self.valid > 0).then(|| self.exposed_garbage as f64 / self.valid as f64)
    }

    /// Hidden garbage implied by the exact counters, `value bytes - D - G_E`.
    pub fn hidden_garbage_measured(&self) -> u64 {
        self.value_file_bytes
            .saturating_sub(self.valid)
            .saturating_sub(self.exposed_garbage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThrottleState {
    Open,
    Delayed,
    Halted,
}

impl ThrottleState {
    pub fn as_str(self) -> &'static str {
        match self {
            ThrottleState::Open => "open",
            ThrottleState::Delayed => "delayed",
            ThrottleState::Halted => "halted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admit,
    DelayNanos(u64),
    Halt,
}

impl Admission {
    pub fn state(self) -> ThrottleState {
        match self {
            Admission::Admit => ThrottleState::Open,
            Admission::DelayNanos(_) => ThrottleState::Delayed,
            Admission::Halt => ThrottleState::Halted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Throttle {
    pub quota: Option<u64>,
    pub soft_ratio: f64,
    pub max_delay_nanos: u64,
}

impl Default for Throttle {
    fn default() -> Self {
        Self {
            quota: None,
            soft_ratio: 0.9,
            max_delay_nanos: 2_000_000,
        }
    }
}

impl Throttle {
    /// Linear delay between the soft limit and the quota, halt at the quota.
    pub fn admit_write(&self, usage: u64) -> Admission {
        let Some(quota) = self.quota else {
            return Admission::Admit;
        };
        let soft = (quota as f64 * self.soft_ratio) as u64;
        if usage >= quota {
            Admission::Halt
        } else if usage < soft {
            Admission::Admit
        } else {
            let num = u128::from(self.max_delay_nanos) * u128::from(usage - soft);
            let delay = num / u128::from((quota - soft).max(1));
            Admission::DelayNanos((delay as u64).max(1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_amp_examples() {
        let s = SpaceStats {
            k_upper: 1,
            k_last: 9,
            ..Default::default()
        };
        assert!((s.index_space_amp().unwrap() - 1.111).abs() < 1e-3);
        let s = SpaceStats {
            k_upper: 1 << 30,
            k_last: 2 << 30,
            ..Default::default()
        };
        assert_eq!(s.index_space_amp(), Some(1.5));
        assert_eq!(SpaceStats::default().index_space_amp(), None);
    }

    #[test]
    fn value_amp_matches_substituted_identity() {
        let s = SpaceStats {
            k_upper: 11,
            k_last: 100,
            valid: 10,
            exposed_garbage: 2,
            ..Default::default()
        };
        assert!((s.value_space_amp().unwrap() - 1.31).abs() < 1e-9);
        let via_estimate =
            (s.exposed_garbage as f64 + s.hidden_garbage_estimate().unwrap() + s.valid as f64)
                / s.valid as f64;
        assert!((s.value_space_amp().unwrap() - via_estimate).abs() < 1e-9);
    }

    #[test]
    fn throttle_bands() {
        let t = Throttle {
            quota: Some(1000),
            ..Default::default()
        };
        assert_eq!(t.admit_write(500), Admission::Admit);
        assert_eq!(t.admit_write(1000), Admission::Halt);
        assert!(matches!(t.admit_write(950), Admission::DelayNanos(d) if d == 1_000_000));
        assert_eq!(Throttle::default().admit_write(u64::MAX), Admission::Admit);
    }
}
