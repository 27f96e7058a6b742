//! Level targets, scores and compaction picking for the index tree.
//!
//! Targets follow last-level anchoring: the largest level fixes the scale,
//! each level above it is ten times smaller, and L0 flushes land on the
//! highest level whose target still fits under `base_size` (the base level).
//! No target drops below `base_size`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::vstore::ValueRegistry;

pub const NUM_LEVELS: usize = 7;

/// Metadata of one key table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileMeta {
    pub number: u64,
    pub smallest: Vec<u8>,
    pub largest: Vec<u8>,
    pub raw_size: u64,
    pub entry_count: u64,
    pub max_seq: u64,
    /// (value file number, referencing entries), sorted by file number.
    pub dependencies: Vec<(u64, u64)>,
}

impl FileMeta {
    pub fn overlaps(&self, lo: &[u8], hi: &[u8]) -> bool {
        self.smallest.as_slice() <= hi && self.largest.as_slice() >= lo
    }
}

/// `raw + Σ size(dep) * refs / entries(dep)`, with dependencies resolved
/// through inheritance. Unknown dependencies are an integrity error.
pub fn compensated_size(f: &FileMeta, reg: &ValueRegistry) -> Result<u64> {
    let mut total = f.raw_size;
    for &(dep, refs) in &f.dependencies {
        total += reg.dependency_bytes(dep, refs)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelConfig {
    pub base_size: u64,
    pub multiplier: u64,
    pub l0_trigger: usize,
}

impl Default for LevelConfig {
    fn default() -> Self {
        Self {
            base_size: 256 << 20,
            multiplier: 10,
            l0_trigger: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelTargets {
    /// Unused levels (above the base level) carry `u64::MAX`.
    pub targets: [u64; NUM_LEVELS],
    pub base_level: usize,
}

/// `sizes[i]` is the scheduling size of level i (index 0 is ignored).
pub fn compute_level_targets(sizes: &[u64; NUM_LEVELS], cfg: &LevelConfig) -> LevelTargets {
    let last = NUM_LEVELS - 1;
    let mut targets = [u64::MAX; NUM_LEVELS];
    let max_size = sizes[1..].iter().copied().max().unwrap_or(0);
    if max_size == 0 {
        targets[last] = cfg.base_size;
        return LevelTargets {
            targets,
            base_level: last,
        };
    }
    let first = (1..NUM_LEVELS).find(|&i| sizes[i] > 0).unwrap_or(last);
    let mut cur = max_size;
    for _ in first..last {
        cur /= cfg.multiplier;
    }
    let mut base_level = first;
    while base_level > 1 && cur > cfg.base_size {
        base_level -= 1;
        cur /= cfg.multiplier;
    }
    for (i, t) in targets.iter_mut().enumerate().skip(base_level) {
        let mut level_size = max_size;
        for _ in i..last {
            level_size /= cfg.multiplier;
        }
        *t = level_size.max(cfg.base_size);
    }
    LevelTargets {
        targets,
        base_level,
    }
}

/// Scores per level. The last level is never scored above its anchor.
pub fn level_scores(
    sizes: &[u64; NUM_LEVELS],
    l0_files: usize,
    targets: &LevelTargets,
    cfg: &LevelConfig,
) -> [f64; NUM_LEVELS] {
    let mut scores = [0.0; NUM_LEVELS];
    let by_count = l0_files as f64 / cfg.l0_trigger.max(1) as f64;
    let by_size = sizes[0] as f64 / cfg.base_size.max(1) as f64;
    scores[0] = by_count.max(by_size);
    for i in 1..NUM_LEVELS - 1 {
        if targets.targets[i] != u64::MAX && targets.targets[i] > 0 {
            scores[i] = sizes[i] as f64 / targets.targets[i] as f64;
        }
    }
    scores
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactionPick {
    pub level: usize,
    pub output_level: usize,
    pub inputs: Vec<u64>,
    pub next_inputs: Vec<u64>,
    pub score: f64,
}

impl CompactionPick {
    /// No overlap below: the files can simply be relinked one level down.
    pub fn is_trivial_move(&self) -> bool {
        self.next_inputs.is_empty() && self.level > 0
    }
}

/// Read-only view of the tree used by the picker. `sizes[l][i]` is the
/// scheduling size of `files[l][i]` (compensated or raw).
pub struct LevelView<'a> {
    pub files: &'a [Vec<FileMeta>],
    pub sizes: &'a [Vec<u64>],
}

impl LevelView<'_> {
    pub fn level_sizes(&self) -> [u64; NUM_LEVELS] {
        let mut out = [0u64; NUM_LEVELS];
        for (i, s) in self.sizes.iter().enumerate().take(NUM_LEVELS) {
            out[i] = s.iter().sum();
        }
        out
    }

    fn density(&self, level: usize, i: usize) -> f64 {
        let raw = self.files[level][i].raw_size.max(1);
        self.sizes[level][i] as f64 / raw as f64
    }
}

fn output_level_for(level: usize, base_level: usize) -> usize {
    if level == 0 {
        base_level
    } else {
        level + 1
    }
}

/// Picks the level with the highest score above 1 (ties go to the upper
/// level) and, within it, the densest file.
pub fn pick_compaction(view: &LevelView<'_>, cfg: &LevelConfig) -> Option<CompactionPick> {
    let sizes = view.level_sizes();
    let targets = compute_level_targets(&sizes, cfg);
    let scores = level_scores(&sizes, view.files[0].len(), &targets, cfg);
    let mut best: Option<(usize, f64)> = None;
    for (l, &s) in scores.iter().enumerate() {
        if s > 1.0 && best.is_none_or(|(_, b)| s > b) {
            best = Some((l, s));
        }
    }
    let (level, score) = best?;
    pick_in_level(view, level, targets.base_level, score)
}

/// Picks a compaction from the upper level holding the most data,
/// regardless of score. Used to expose garbage under space pressure.
pub fn pick_forced(view: &LevelView<'_>, cfg: &LevelConfig) -> Option<CompactionPick> {
    let sizes = view.level_sizes();
    let targets = compute_level_targets(&sizes, cfg);
    let level = (0..NUM_LEVELS - 1)
        .filter(|&l| !view.files[l].is_empty())
        .max_by_key(|&l| (sizes[l], core::cmp::Reverse(l)))?;
    pick_in_level(view, level, targets.base_level, 0.0)
}

fn pick_in_level(
    view: &LevelView<'_>,
    level: usize,
    base_level: usize,
    score: f64,
) -> Option<CompactionPick> {
    let files = &view.files[level];
    if files.is_empty() {
        return None;
    }
    let output_level = output_level_for(level, base_level);
    let chosen: Vec<usize> = if level == 0 {
        l0_closure(files)
    } else {
        let mut best = 0;
        for i in 1..files.len() {
            let (d, bd) = (view.density(level, i), view.density(level, best));
            if d > bd || (d == bd && files[i].smallest < files[best].smallest) {
                best = i;
            }
        }
        vec![best]
    };
    let lo = chosen.iter().map(|&i| &files[i].smallest).min()?;
    let hi = chosen.iter().map(|&i| &files[i].largest).max()?;
    let next_inputs = view.files[output_level]
        .iter()
        .filter(|f| f.overlaps(lo, hi))
        .map(|f| f.number)
        .collect();
    Some(CompactionPick {
        level,
        output_level,
        inputs: chosen.iter().map(|&i| files[i].number).collect(),
        next_inputs,
        score,
    })
}

/// L0 files are ordered newest first. Starting from the oldest file, pull in
/// every file whose range transitively overlaps, so that no newer version is
/// left above an older one that moves down.
fn l0_closure(files: &[FileMeta]) -> Vec<usize> {
    let n = files.len();
    let mut chosen = vec![false; n];
    chosen[n - 1] = true;
    let (mut lo, mut hi) = (files[n - 1].smallest.clone(), files[n - 1].largest.clone());
    loop {
        let mut grew = false;
        for (i, f) in files.iter().enumerate() {
            if !chosen[i] && f.overlaps(&lo, &hi) {
                chosen[i] = true;
                if f.smallest < lo {
                    lo = f.smallest.clone();
                }
                if f.largest > hi {
                    hi = f.largest.clone();
                }
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    // a chosen file must not be newer than an unchosen overlapping one; the
    // closure guarantees unchosen files do not overlap at all
    (0..n).filter(|&i| chosen[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vstore::{Temperature, VsstMeta};
    use alloc::format;

    const MIB: u64 = 1 << 20;

    fn file(number: u64, lo: &str, hi: &str, raw: u64) -> FileMeta {
        FileMeta {
            number,
            smallest: lo.into(),
            largest: hi.into(),
            raw_size: raw,
            entry_count: 100,
            max_seq: number,
            dependencies: Vec::new(),
        }
    }

    #[test]
    fn compensated_examples() {
        let mut reg = ValueRegistry::new();
        reg.register(VsstMeta::new(1, 256 * MIB, 1000, 256 * MIB, Temperature::Cold))
            .unwrap();
        reg.register(VsstMeta::new(2, 100 * MIB, 100, 100 * MIB, Temperature::Cold))
            .unwrap();
        reg.register(VsstMeta::new(3, 200 * MIB, 100, 200 * MIB, Temperature::Cold))
            .unwrap();
        let mut f = file(10, "a", "z", MIB);
        assert_eq!(compensated_size(&f, &reg).unwrap(), MIB);
        f.dependencies = vec![(1, 500)];
        assert_eq!(compensated_size(&f, &reg).unwrap(), 129 * MIB);
        let mut g = file(11, "a", "z", 2 * MIB);
        g.dependencies = vec![(2, 25), (3, 10)];
        assert_eq!(compensated_size(&g, &reg).unwrap(), 47 * MIB);
        g.dependencies.push((99, 1));
        assert!(compensated_size(&g, &reg).is_err());
    }

    #[test]
    fn targets_anchor_on_largest_level() {
        let cfg = LevelConfig {
            base_size: 256 * MIB,
            ..Default::default()
        };
        let mut sizes = [0u64; NUM_LEVELS];
        sizes[6] = 10 * 1024 * MIB;
        let t = compute_level_targets(&sizes, &cfg);
        assert_eq!(t.targets[6], 10 * 1024 * MIB);
        assert_eq!(t.targets[5], 1024 * MIB);
        assert_eq!(t.base_level, 4);
        assert_eq!(t.targets[4], 256 * MIB);
        assert_eq!(t.targets[3], u64::MAX);

        let empty = compute_level_targets(&[0; NUM_LEVELS], &cfg);
        assert_eq!(empty.base_level, 6);
        assert_eq!(empty.targets[6], 256 * MIB);
    }

    #[test]
    fn scores_and_none_when_under_target() {
        let cfg = LevelConfig {
            base_size: 100,
            ..Default::default()
        };
        let files = vec![
            vec![],
            vec![],
            vec![],
            vec![],
            vec![file(1, "a", "c", 100)],
            vec![file(2, "a", "c", 1000)],
            vec![file(3, "a", "z", 10_000)],
        ];
        let sizes: Vec<Vec<u64>> = files
            .iter()
            .map(|l| l.iter().map(|f| f.raw_size).collect())
            .collect();
        let view = LevelView {
            files: &files,
            sizes: &sizes,
        };
        assert_eq!(pick_compaction(&view, &cfg), None);
        let mut sizes2 = sizes.clone();
        sizes2[5][0] = 2000;
        let view = LevelView {
            files: &files,
            sizes: &sizes2,
        };
        let s = view.level_sizes();
        let t = compute_level_targets(&s, &cfg);
        assert_eq!(level_scores(&s, 0, &t, &cfg)[5], 2.0);
        let p = pick_compaction(&view, &cfg).unwrap();
        assert_eq!((p.level, p.output_level, p.next_inputs.clone()), (5, 6, vec![3]));
    }

    #[test]
    fn densest_file_wins() {
        let cfg = LevelConfig {
            base_size: 100,
            ..Default::default()
        };
        let mut files = vec![Vec::new(); NUM_LEVELS];
        files[5] = vec![file(1, "a", "b", 10), file(2, "c", "d", 10)];
        files[6] = vec![file(3, "a", "z", 1000)];
        let mut sizes: Vec<Vec<u64>> = files
            .iter()
            .map(|l| l.iter().map(|f| f.raw_size).collect())
            .collect();
        sizes[5] = vec![30, 400];
        let view = LevelView {
            files: &files,
            sizes: &sizes,
        };
        assert_eq!(pick_compaction(&view, &cfg).unwrap().inputs, vec![2]);
    }

    #[test]
    fn l0_count_trigger_pulls_overlapping_files() {
        let cfg = LevelConfig::default();
        let mut files = vec![Vec::new(); NUM_LEVELS];
        files[0] = (0..4)
            .rev()
            .map(|i| file(10 + i, &format!("k{i}"), &format!("k{}", i + 1), 10))
            .collect();
        files[0].push(file(1, "x", "y", 10));
        files[6] = vec![file(2, "k0", "k9", 50)];
        let sizes: Vec<Vec<u64>> = files
            .iter()
            .map(|l| l.iter().map(|f| f.raw_size).collect())
            .collect();
        let view = LevelView {
            files: &files,
            sizes: &sizes,
        };
        let p = pick_compaction(&view, &cfg).unwrap();
        assert_eq!(p.level, 0);
        assert_eq!(p.inputs, vec![1]);
        assert_eq!(p.output_level, 6);
    }
}
