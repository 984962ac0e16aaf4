//! Training loop, per-sub-task validation, the multi-trial test protocol and
//! sliding-window restoration.

mod evaluate;
mod tile;
mod train;

pub use evaluate::{evaluate_test, validate_subtasks, LevelReport, SubtaskValidator, TestReport, Validator};
pub use tile::{coverage_map, tile_origins, tile_restore, TILE_STRIDE};
pub use train::{train, EpochReport, Trainer, TrainerState};

use serde::{Deserialize, Serialize};

use crate::corrupt::{self, CorruptionSpec, TaskKind, TRAIN_LEVELS};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::schedule::SchedulerKind;
use crate::tensor::Tensor4;

/// Stream keys separating the uses of the corruption seed.
pub(crate) const KEY_TRAIN: u64 = 1;
pub(crate) const KEY_VALIDATE: u64 = 2;
pub(crate) const KEY_TEST: u64 = 3;
pub(crate) const KEY_POOL: u64 = 4;
pub(crate) const KEY_ORDER: u64 = 5;

/// Images restored per forward call outside training.
pub(crate) const EVAL_CHUNK: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardMiningConfig {
    /// Pre-corrupted instances in the static pool; `None` means one per training image.
    pub pool_size: Option<usize>,
    /// Epochs of plain training on the pool before selection starts.
    pub warmup_epochs: usize,
    /// Highest-loss instances kept from each batch.
    pub keep: usize,
}

impl Default for HardMiningConfig {
    fn default() -> Self {
        Self {
            pool_size: None,
            warmup_epochs: 50,
            keep: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub scheduler: SchedulerKind,
    /// Number of training sub-tasks.
    pub levels: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Defaults to `floor(train images / batch_size)`.
    pub batches_per_epoch: Option<usize>,
    /// Epochs per stage for staged and cumulative schedules; defaults to `epochs / levels`.
    pub stage_length: Option<usize>,
    /// Seeds the per-epoch shuffle.
    pub data_seed: u64,
    /// Seeds every corruption draw (training, validation, pool).
    pub corruption_seed: u64,
    pub adam: Adam,
    /// Reuse epoch-0 validation corruptions every epoch instead of fresh ones.
    pub fixed_validation: bool,
    pub hard_mining: HardMiningConfig,
}

impl TrainConfig {
    pub fn new(task: TaskKind, scheduler: SchedulerKind, epochs: usize) -> Self {
        Self {
            task,
            scheduler,
            levels: TRAIN_LEVELS as usize,
            batch_size: 100,
            epochs,
            batches_per_epoch: None,
            stage_length: None,
            data_seed: 1,
            corruption_seed: 2,
            adam: Adam::default(),
            fixed_validation: false,
            hard_mining: HardMiningConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > TRAIN_LEVELS as usize {
            return Err(Error::Config(format!("levels must be in 1..={TRAIN_LEVELS}, got {}", self.levels)));
        }
        if self.batch_size < self.levels {
            return Err(Error::Config(format!(
                "batch_size {} must be at least the number of sub-tasks {}",
                self.batch_size, self.levels
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.stage_length == Some(0) {
            return Err(Error::Config("stage_length must be positive".into()));
        }
        if self.batches_per_epoch == Some(0) {
            return Err(Error::Config("batches_per_epoch must be positive".into()));
        }
        if matches!(self.scheduler, SchedulerKind::HardMining) {
            let hm = &self.hard_mining;
            if hm.keep == 0 || hm.keep > self.batch_size {
                return Err(Error::Config(format!(
                    "hard_mining.keep {} must be in 1..={}",
                    hm.keep, self.batch_size
                )));
            }
            if hm.pool_size == Some(0) {
                return Err(Error::Config("hard_mining.pool_size must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn stage_length(&self) -> usize {
        self.stage_length.unwrap_or((self.epochs / self.levels).max(1))
    }

    /// Batches per epoch for a source of `available` instances.
    pub fn batches_for(&self, available: usize) -> Result<usize> {
        let max = available / self.batch_size;
        if max == 0 {
            return Err(Error::Config(format!(
                "{available} training instances cannot fill one batch of {}",
                self.batch_size
            )));
        }
        match self.batches_per_epoch {
            None => Ok(max),
            Some(b) if b <= max => Ok(b),
            Some(b) => Err(Error::Config(format!(
                "batches_per_epoch {b} needs {} instances, only {available} available",
                b * self.batch_size
            ))),
        }
    }
}

/// Corrupts the listed images of `images` under `specs`, returning the
/// corrupted batch and its clean targets.
pub(crate) fn corrupt_batch(
    images: &Tensor4<f64>,
    picks: &[(usize, CorruptionSpec)],
    fill: &[f64],
) -> Result<(Tensor4<f64>, Tensor4<f64>)> {
    let mut corrupted = Vec::with_capacity(picks.len());
    let mut clean = Vec::with_capacity(picks.len());
    for (i, spec) in picks {
        let img = images.sample_tensor(*i);
        corrupted.push(corrupt::apply(&img, spec, fill)?);
        clean.push(img);
    }
    Ok((Tensor4::stack(&corrupted)?, Tensor4::stack(&clean)?))
}

pub(crate) fn image_hw(images: &Tensor4<f64>) -> (usize, usize) {
    (images.dims().h, images.dims().w)
}
