//! Workload description and deterministic operation streams.

use std::fmt;
use std::str::FromStr;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Zipf};

pub const KEY_SIZE: usize = 24;
pub const PARETO_SHAPE: f64 = 0.2;
pub const PARETO_MIN: u64 = 64;
pub const PARETO_MAX: u64 = 64 << 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueDist {
    Fixed(u32),
    Mixed {
        small_lo: u32,
        small_hi: u32,
        large: u32,
        large_fraction: f64,
    },
    /// Generalized Pareto clamped to [64 B, 64 KiB]; `scale` is solved so
    /// the clamped mean equals `mean`.
    Pareto { mean: f64, shape: f64, scale: f64 },
}

impl ValueDist {
    pub fn mixed_default() -> Self {
        ValueDist::Mixed {
            small_lo: 100,
            small_hi: 512,
            large: 16 << 10,
            large_fraction: 0.5,
        }
    }

    pub fn pareto(mean: f64) -> Result<Self, String> {
        let scale = pareto_scale_for_mean(mean, PARETO_SHAPE)?;
        Ok(ValueDist::Pareto {
            mean,
            shape: PARETO_SHAPE,
            scale,
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        match *self {
            ValueDist::Fixed(n) => n,
            ValueDist::Mixed {
                small_lo,
                small_hi,
                large,
                large_fraction,
            } => {
                if rng.random_bool(large_fraction) {
                    large
                } else {
                    rng.random_range(small_lo..=small_hi)
                }
            }
            ValueDist::Pareto { shape, scale, .. } => {
                let u: f64 = rng.random();
                let x = scale / shape * ((1.0 - u).powf(-shape) - 1.0);
                x.clamp(PARETO_MIN as f64, PARETO_MAX as f64).round() as u32
            }
        }
    }

    /// Expected value size.
    pub fn mean(&self) -> f64 {
        match *self {
            ValueDist::Fixed(n) => n as f64,
            ValueDist::Mixed {
                small_lo,
                small_hi,
                large,
                large_fraction,
            } => {
                large_fraction * large as f64
                    + (1.0 - large_fraction) * (small_lo as f64 + small_hi as f64) / 2.0
            }
            ValueDist::Pareto { mean, .. } => mean,
        }
    }
}

/// Mean of a generalized Pareto (location 0) clamped to [lo, hi]:
/// `lo + ∫_lo^hi P(X > x) dx`.
pub fn clamped_pareto_mean(scale: f64, shape: f64, lo: f64, hi: f64) -> f64 {
    let p = 1.0 - 1.0 / shape;
    let tail = |x: f64| (1.0 + shape * x / scale).powf(p);
    lo + scale / (1.0 - shape) * (tail(lo) - tail(hi))
}

pub fn pareto_scale_for_mean(mean: f64, shape: f64) -> Result<f64, String> {
    let (lo, hi) = (PARETO_MIN as f64, PARETO_MAX as f64);
    if !(lo < mean && mean < hi) || !(0.0 < shape && shape < 1.0) {
        return Err(format!("pareto mean must be in ({lo}, {hi}) and shape in (0, 1)"));
    }
    let (mut a, mut b) = (1e-6f64, 1e9f64);
    for _ in 0..200 {
        let mid = (a * b).sqrt();
        if clamped_pareto_mean(mid, shape, lo, hi) < mean {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((a * b).sqrt())
}

impl FromStr for ValueDist {
    type Err = String;

    /// `fixed:N`, `mixed` / `mixed:LO,HI,LARGE,FRAC`, `pareto:MEAN`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let size = |v: &str| crate::config::parse_size(v);
        match kind {
            "fixed" => {
                let n = size(arg)?;
                if n == 0 || n > u32::MAX as u64 {
                    return Err("fixed size must be in 1..2^32".into());
                }
                Ok(ValueDist::Fixed(n as u32))
            }
            "mixed" if arg.is_empty() => Ok(Self::mixed_default()),
            "mixed" => {
                let parts: Vec<&str> = arg.split(',').collect();
                let [lo, hi, large, frac] = parts[..] else {
                    return Err("mixed takes LO,HI,LARGE,FRAC".into());
                };
                let (lo, hi, large) = (size(lo)? as u32, size(hi)? as u32, size(large)? as u32);
                let frac: f64 = frac.parse().map_err(|_| format!("bad fraction `{frac}`"))?;
                if lo == 0 || lo > hi || large == 0 || !(0.0..=1.0).contains(&frac) {
                    return Err("mixed needs 0 < LO <= HI, LARGE > 0, FRAC in [0, 1]".into());
                }
                Ok(ValueDist::Mixed {
                    small_lo: lo,
                    small_hi: hi,
                    large,
                    large_fraction: frac,
                })
            }
            "pareto" => ValueDist::pareto(size(arg)? as f64),
            _ => Err(format!("unknown value distribution `{s}`")),
        }
    }
}

impl fmt::Display for ValueDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueDist::Fixed(n) => write!(f, "fixed:{n}"),
            ValueDist::Mixed {
                small_lo,
                small_hi,
                large,
                large_fraction,
            } => write!(f, "mixed:{small_lo},{small_hi},{large},{large_fraction}"),
            ValueDist::Pareto { mean, .. } => write!(f, "pareto:{mean}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyDist {
    Uniform,
    Zipf(f64),
}

impl FromStr for KeyDist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "uniform" => Ok(KeyDist::Uniform),
            Some(("zipf", t)) => {
                let t: f64 = t.parse().map_err(|_| format!("bad theta `{t}`"))?;
                if !(t > 0.0 && t <= 1.0) {
                    return Err("zipf theta must be in (0, 1]".into());
                }
                Ok(KeyDist::Zipf(t))
            }
            _ => Err(format!("unknown key distribution `{s}`")),
        }
    }
}

impl fmt::Display for KeyDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyDist::Uniform => write!(f, "uniform"),
            KeyDist::Zipf(t) => write!(f, "zipf:{t}"),
        }
    }
}

/// Draws key ranks in `0..n`. Rank 0 is the most popular under Zipf.
pub struct KeySampler {
    n: u64,
    zipf: Option<Zipf<f64>>,
}

impl KeySampler {
    pub fn new(dist: KeyDist, n: u64) -> Result<Self, String> {
        if n == 0 {
            return Err("key space must be non-empty".into());
        }
        let zipf = match dist {
            KeyDist::Uniform => None,
            KeyDist::Zipf(t) => Some(Zipf::new(n as f64, t).map_err(|e| e.to_string())?),
        };
        Ok(Self { n, zipf })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        match &self.zipf {
            None => rng.random_range(0..self.n),
            Some(z) => (z.sample(rng) as u64).clamp(1, self.n) - 1,
        }
    }
}

/// Analytic probability of the most popular rank under Zipf(theta) over n
/// keys.
pub fn zipf_top_mass(n: u64, theta: f64) -> f64 {
    let h: f64 = (1..=n).map(|k| (k as f64).powf(-theta)).sum();
    1.0 / h
}

fn mix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^ (x >> 33)
}

/// 24-byte key: four hex digits of a rank hash, then the zero-padded rank.
/// The prefix spreads popular ranks over the key space.
pub fn encode_key(rank: u64) -> [u8; KEY_SIZE] {
    let s = format!("{:04x}{:020}", mix64(rank) & 0xffff, rank);
    let mut k = [0u8; KEY_SIZE];
    k.copy_from_slice(s.as_bytes());
    k
}

/// Value bytes for operation `id`: deterministic and cheap to produce.
pub fn fill_value(buf: &mut Vec<u8>, id: u64, len: usize) {
    buf.clear();
    buf.extend_from_slice(&id.to_le_bytes());
    buf.resize(len.max(8), (mix64(id) % 251) as u8);
    buf.truncate(len);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    /// Every key in the key space once, in random order.
    Load,
    Update,
    Read,
    Scan,
    /// Reads with probability `read_ratio`, updates otherwise.
    Mixed { read_ratio: f64 },
    /// YCSB-style presets `a`..`f`.
    Ycsb(char),
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "load" => Ok(Phase::Load),
            "update" => Ok(Phase::Update),
            "read" => Ok(Phase::Read),
            "scan" => Ok(Phase::Scan),
            _ => {
                if let Some(r) = s.strip_prefix("mixed:") {
                    let r: f64 = r.parse().map_err(|_| format!("bad read ratio `{r}`"))?;
                    if !(0.0..=1.0).contains(&r) {
                        return Err("read ratio must be in [0, 1]".into());
                    }
                    return Ok(Phase::Mixed { read_ratio: r });
                }
                match s.strip_prefix("ycsb-").and_then(|c| c.chars().next()) {
                    Some(c @ 'a'..='f') if s.len() == 6 => Ok(Phase::Ycsb(c)),
                    _ => Err(format!("unknown phase `{s}`")),
                }
            }
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Load => write!(f, "load"),
            Phase::Update => write!(f, "update"),
            Phase::Read => write!(f, "read"),
            Phase::Scan => write!(f, "scan"),
            Phase::Mixed { read_ratio } => write!(f, "mixed:{read_ratio}"),
            Phase::Ycsb(c) => write!(f, "ycsb-{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub phase: Phase,
    pub op_count: Option<u64>,
    /// Stop once this many logical key + value bytes have been written.
    pub byte_target: Option<u64>,
    pub key_space: u64,
    pub key_dist: KeyDist,
    pub value_dist: ValueDist,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Put { rank: u64, value_len: u32 },
    Get { rank: u64 },
    Scan { rank: u64, len: u32 },
    ReadModifyWrite { rank: u64, value_len: u32 },
}

impl Op {
    /// Logical bytes this op writes.
    pub fn write_bytes(&self) -> u64 {
        match *self {
            Op::Put { value_len, .. } | Op::ReadModifyWrite { value_len, .. } => {
                KEY_SIZE as u64 + value_len as u64
            }
            _ => 0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.key_space == 0 {
            return Err("key space must be non-empty".into());
        }
        if self.op_count.is_none() && self.byte_target.is_none() && self.phase != Phase::Load {
            return Err(format!("phase {} needs an op count or a byte target", self.phase));
        }
        Ok(())
    }

    /// The full operation stream. The same seed gives the same stream no
    /// matter how it is later split across clients.
    pub fn generate(&self) -> Result<Vec<Op>, String> {
        self.validate()?;
        let mut rng = StdRng::seed_from_u64(self.seed);
        let keys = KeySampler::new(self.key_dist, self.key_space)?;
        let limit = self.op_count.unwrap_or(u64::MAX);
        let target = self.byte_target.unwrap_or(u64::MAX);
        let mut ops = Vec::new();
        let mut written = 0u64;
        if self.phase == Phase::Load {
            let mut ranks: Vec<u64> = (0..self.key_space).collect();
            ranks.shuffle(&mut rng);
            for rank in ranks {
                if ops.len() as u64 >= limit || written >= target {
                    break;
                }
                let op = Op::Put {
                    rank,
                    value_len: self.value_dist.sample(&mut rng),
                };
                written += op.write_bytes();
                ops.push(op);
            }
            return Ok(ops);
        }
        let mut latest = self.key_space;
        while (ops.len() as u64) < limit && written < target {
            let p: f64 = rng.random();
            let rank = keys.sample(&mut rng);
            let put = |rng: &mut StdRng, rank| Op::Put {
                rank,
                value_len: self.value_dist.sample(rng),
            };
            let op = match self.phase {
                Phase::Load => unreachable!(),
                Phase::Update => put(&mut rng, rank),
                Phase::Read => Op::Get { rank },
                Phase::Scan => Op::Scan {
                    rank,
                    len: rng.random_range(1..=1000),
                },
                Phase::Mixed { read_ratio } => {
                    if p < read_ratio {
                        Op::Get { rank }
                    } else {
                        put(&mut rng, rank)
                    }
                }
                Phase::Ycsb(c) => match c {
                    'a' if p < 0.5 => put(&mut rng, rank),
                    'b' if p < 0.05 => put(&mut rng, rank),
                    'a' | 'b' | 'c' => Op::Get { rank },
                    'd' if p < 0.05 => {
                        latest += 1;
                        put(&mut rng, latest - 1)
                    }
                    // popular ranks map to the most recent inserts
                    'd' => Op::Get {
                        rank: latest - 1 - rank.min(latest - 1),
                    },
                    'e' if p < 0.05 => {
                        latest += 1;
                        put(&mut rng, latest - 1)
                    }
                    'e' => Op::Scan {
                        rank,
                        len: rng.random_range(1..=1000),
                    },
                    'f' if p < 0.5 => Op::ReadModifyWrite {
                        rank,
                        value_len: self.value_dist.sample(&mut rng),
                    },
                    _ => Op::Get { rank },
                },
            };
            written += op.write_bytes();
            ops.push(op);
        }
        Ok(ops)
    }
}

/// Round-robin split of one stream across `clients`.
pub fn partition(ops: &[Op], clients: usize) -> Vec<Vec<(u64, Op)>> {
    let clients = clients.max(1);
    let mut out = vec![Vec::with_capacity(ops.len() / clients + 1); clients];
    for (i, op) in ops.iter().enumerate() {
        out[i % clients].push((i as u64, *op));
    }
    out
}

/// Key-space size that makes `bytes` of data at the distribution's mean.
pub fn key_space_for(bytes: u64, dist: &ValueDist) -> u64 {
    ((bytes as f64 / (dist.mean() + KEY_SIZE as f64)).ceil() as u64).max(1)
}
