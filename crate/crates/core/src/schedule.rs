//! Per-epoch allocation of batch slots across difficulty levels.
//!
//! The on-demand rule gives each sub-task a share of the batch inversely
//! proportional to its mean validation PSNR. The baselines (rigid joint,
//! staged and cumulative curricula in both directions, hard mining and
//! fixated models) sit behind the same [`SchedulerState::allocate`] call so
//! the training loop is agnostic to the regime.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corrupt::{level_of_value, TaskKind};
use crate::error::{Error, Result};

/// Integer slot counts per sub-task (index 0 is level 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation(pub Vec<usize>);

impl Allocation {
    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn levels(&self) -> usize {
        self.0.len()
    }

    /// `batch` split evenly over `levels`, remainder to the lowest indices.
    pub fn uniform(levels: usize, batch: usize) -> Self {
        Self::uniform_over(levels, 0..levels, batch)
    }

    /// Even split over the index range `active`, zero elsewhere.
    pub fn uniform_over(levels: usize, active: std::ops::Range<usize>, batch: usize) -> Self {
        let k = active.len().max(1);
        let mut counts = vec![0; levels];
        for (j, i) in active.enumerate() {
            counts[i] = batch / k + usize::from(j < batch % k);
        }
        Self(counts)
    }

    pub fn one_hot(levels: usize, index: usize, batch: usize) -> Self {
        let mut counts = vec![0; levels];
        counts[index] = batch;
        Self(counts)
    }

    /// Level (1-based) of each slot, in ascending level order.
    pub fn slot_levels(&self) -> Vec<u8> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat((i + 1) as u8).take(c))
            .collect()
    }
}

impl fmt::Display for Allocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Integer allocation with shares `batch * (1/P_i) / sum_j (1/P_j)`.
///
/// Shares are rounded by largest remainder (ties to the lower index) with a
/// floor of one slot per sub-task: any sub-task whose share falls below one
/// is pinned at one and the remaining budget is re-apportioned among the
/// others.
pub fn on_demand_allocate(psnr: &[f64], batch: usize) -> Result<Allocation> {
    let n = psnr.len();
    if n == 0 {
        return Err(Error::Config("on-demand allocation needs at least one sub-task".into()));
    }
    if batch < n {
        return Err(Error::Config(format!(
            "batch size {batch} is smaller than the number of sub-tasks {n}"
        )));
    }
    if let Some((i, p)) = psnr.iter().enumerate().find(|(_, p)| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::Config(format!(
            "PSNR of sub-task {} is {p}; on-demand allocation needs positive finite values",
            i + 1
        )));
    }
    let inv: Vec<f64> = psnr.iter().map(|p| 1.0 / p).collect();
    let mut pinned = vec![false; n];
    let shares = loop {
        let budget = (batch - pinned.iter().filter(|&&p| p).count()) as f64;
        let total: f64 = inv.iter().zip(&pinned).filter(|(_, &p)| !p).map(|(v, _)| v).sum();
        let shares: Vec<f64> = inv
            .iter()
            .zip(&pinned)
            .map(|(v, &p)| if p { 1.0 } else { budget * v / total })
            .collect();
        // Pinning one level raises everyone else's share, so pin the
        // smallest only and recompute.
        let smallest = (0..n)
            .filter(|&i| !pinned[i] && shares[i] < 1.0)
            .min_by(|&a, &b| shares[a].total_cmp(&shares[b]).then(a.cmp(&b)));
        match smallest {
            Some(i) => pinned[i] = true,
            None => break shares,
        }
    };
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(batch.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(Allocation(counts))
}

/// Indices of the `k` largest losses, largest first, ties to the lower index.
pub fn select_hard(losses: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..losses.len()).collect();
    idx.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
    idx.truncate(k.min(losses.len()));
    idx
}

/// What a fixated model trains on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedTarget {
    /// Uniform draws from one difficulty level.
    Level(u8),
    /// A single parameter value (both axes for deblurring).
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchedulerKind {
    OnDemand,
    RigidJoint,
    StagedCurriculum,
    StagedAnti,
    CumulativeCurriculum,
    CumulativeAnti,
    HardMining,
    Fixated(FixedTarget),
}

impl SchedulerKind {
    pub fn name(&self) -> String {
        match self {
            SchedulerKind::OnDemand => "on-demand".into(),
            SchedulerKind::RigidJoint => "rigid-joint".into(),
            SchedulerKind::StagedCurriculum => "staged-curriculum".into(),
            SchedulerKind::StagedAnti => "staged-anti".into(),
            SchedulerKind::CumulativeCurriculum => "cumulative-curriculum".into(),
            SchedulerKind::CumulativeAnti => "cumulative-anti".into(),
            SchedulerKind::HardMining => "hard-mining".into(),
            SchedulerKind::Fixated(FixedTarget::Level(l)) => format!("fixated-level:{l}"),
            SchedulerKind::Fixated(FixedTarget::Value(v)) => format!("fixated:{v}"),
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    /// Accepts the names printed by `Display`; underscores work as dashes.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        let kind = match s.as_str() {
            "on-demand" | "ondemand" => SchedulerKind::OnDemand,
            "rigid-joint" | "rigid" => SchedulerKind::RigidJoint,
            "staged-curriculum" => SchedulerKind::StagedCurriculum,
            "staged-anti" | "staged-anti-curriculum" => SchedulerKind::StagedAnti,
            "cumulative-curriculum" => SchedulerKind::CumulativeCurriculum,
            "cumulative-anti" | "cumulative-anti-curriculum" => SchedulerKind::CumulativeAnti,
            "hard-mining" => SchedulerKind::HardMining,
            other => {
                if let Some(v) = other.strip_prefix("fixated-level:") {
                    let l: u8 = v
                        .parse()
                        .map_err(|_| Error::Config(format!("bad fixated level {v:?}")))?;
                    SchedulerKind::Fixated(FixedTarget::Level(l))
                } else if let Some(v) = other.strip_prefix("fixated:") {
                    let x: f64 = v
                        .parse()
                        .map_err(|_| Error::Config(format!("bad fixated value {v:?}")))?;
                    SchedulerKind::Fixated(FixedTarget::Value(x))
                } else {
                    return Err(Error::Config(format!("unknown scheduler {other:?}")));
                }
            }
        };
        Ok(kind)
    }
}

impl Serialize for SchedulerKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for SchedulerKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Scheduler state owned and advanced by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState {
    pub kind: SchedulerKind,
    pub task: TaskKind,
    pub levels: usize,
    /// Epochs completed so far.
    pub epoch: usize,
    pub last_psnr: Option<Vec<f64>>,
    pub stage_length: usize,
}

impl SchedulerState {
    pub fn new(kind: SchedulerKind, task: TaskKind, levels: usize, stage_length: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config("at least one sub-task is required".into()));
        }
        if stage_length == 0 {
            return Err(Error::Config("stage_length must be positive".into()));
        }
        if let SchedulerKind::Fixated(FixedTarget::Level(l)) = kind {
            if l == 0 || l as usize > levels {
                return Err(Error::Config(format!("fixated level {l} outside 1..={levels}")));
            }
        }
        if let SchedulerKind::Fixated(FixedTarget::Value(v)) = kind {
            level_of_value(task, v)?;
        }
        Ok(Self {
            kind,
            task,
            levels,
            epoch: 0,
            last_psnr: None,
            stage_length,
        })
    }

    /// 1-based stage index, clamped at the last stage.
    pub fn stage(&self) -> usize {
        (self.epoch / self.stage_length + 1).min(self.levels)
    }

    /// Records the validation PSNRs of the epoch just finished.
    pub fn observe(&mut self, psnr: Vec<f64>) -> Result<()> {
        if psnr.len() != self.levels {
            return Err(Error::Config(format!(
                "expected {} sub-task PSNRs, got {}",
                self.levels,
                psnr.len()
            )));
        }
        self.last_psnr = Some(psnr);
        self.epoch += 1;
        Ok(())
    }

    /// Allocation for the upcoming epoch.
    pub fn allocate(&self, batch: usize) -> Result<Allocation> {
        let n = self.levels;
        if batch < n {
            return Err(Error::Config(format!("batch size {batch} is smaller than {n} sub-tasks")));
        }
        let k = self.stage();
        let alloc = match self.kind {
            SchedulerKind::RigidJoint | SchedulerKind::HardMining => Allocation::uniform(n, batch),
            SchedulerKind::StagedCurriculum => Allocation::one_hot(n, k - 1, batch),
            SchedulerKind::StagedAnti => Allocation::one_hot(n, n - k, batch),
            SchedulerKind::CumulativeCurriculum => Allocation::uniform_over(n, 0..k, batch),
            SchedulerKind::CumulativeAnti => Allocation::uniform_over(n, n - k..n, batch),
            SchedulerKind::Fixated(FixedTarget::Level(l)) => Allocation::one_hot(n, l as usize - 1, batch),
            SchedulerKind::Fixated(FixedTarget::Value(v)) => {
                let level = (level_of_value(self.task, v)? as usize).min(n);
                Allocation::one_hot(n, level - 1, batch)
            }
            SchedulerKind::OnDemand => match (&self.last_psnr, self.epoch) {
                (_, 0) | (None, _) => Allocation::uniform(n, batch),
                (Some(p), _) => on_demand_allocate(p, batch)?,
            },
        };
        debug_assert_eq!(alloc.total(), batch);
        Ok(alloc)
    }
}
