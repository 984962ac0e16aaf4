use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corrupt::{TaskKind, MAX_LEVEL, TRAIN_LEVELS};
use crate::error::{Error, Result};
use crate::harness::{HardMiningConfig, TrainConfig};
use crate::net::NetworkConfig;
use crate::nn::Adam;
use crate::rng::derive;
use crate::schedule::SchedulerKind;

/// Environment variable naming the default image directory.
pub const DATA_ENV: &str = "ODL_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Every seed of a run. Unset seeds derive from `master`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub master: u64,
    pub init: Option<u64>,
    pub data: Option<u64>,
    pub corruption: Option<u64>,
    pub split: Option<u64>,
    pub validation: Option<u64>,
    pub test: Option<u64>,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            master: 0,
            init: None,
            data: None,
            corruption: None,
            split: None,
            validation: None,
            test: None,
        }
    }
}

impl Seeds {
    /// All seeds made explicit, so a manifest replays without re-deriving.
    /// Derived seeds keep to 63 bits because TOML integers are signed.
    pub fn resolved(&self) -> Self {
        let pick = |s: Option<u64>, k: u64| Some(s.unwrap_or_else(|| derive(self.master, &[k]) >> 1));
        Self {
            master: self.master,
            init: pick(self.init, 1),
            data: pick(self.data, 2),
            corruption: pick(self.corruption, 3),
            split: pick(self.split, 4),
            validation: pick(self.validation, 5),
            test: pick(self.test, 6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkShape {
    pub encoder_channels: Vec<usize>,
    pub latent_spatial: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        let d = NetworkConfig::default();
        Self {
            encoder_channels: d.encoder_channels,
            latent_spatial: d.latent_spatial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Image directory; falls back to `$ODL_DATA` when neither this nor `synthetic` is set.
    pub dir: Option<PathBuf>,
    /// Generate this many procedural images instead of reading a directory.
    pub synthetic: Option<usize>,
    pub synthetic_seed: u64,
    pub train_size: usize,
    /// Defaults to `min(200, half of what remains after training)`.
    pub val_size: Option<usize>,
    pub test_size: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            synthetic: None,
            synthetic_seed: 0,
            train_size: 2000,
            val_size: None,
            test_size: None,
        }
    }
}

impl DataConfig {
    /// Concrete (train, val, test) split sizes for `available` images.
    pub fn sizes(&self, available: usize) -> Result<(usize, usize, usize)> {
        let rest = available.saturating_sub(self.train_size);
        let val = self.val_size.unwrap_or((rest / 2).min(200));
        let test = self.test_size.unwrap_or((rest.saturating_sub(val)).min(200));
        if val == 0 || test == 0 || self.train_size + val + test > available {
            return Err(Error::Data(format!(
                "{available} images cannot supply {} train + {val} validation + {test} test",
                self.train_size
            )));
        }
        Ok((self.train_size, val, test))
    }

    pub fn source_dir(&self) -> Option<PathBuf> {
        self.dir
            .clone()
            .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub trials: usize,
    pub levels: Vec<u8>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            levels: (1..=MAX_LEVEL).collect(),
        }
    }
}

/// Full description of a training run, as read from a config file and
/// written back into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub scheduler: SchedulerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub levels: usize,
    pub batches_per_epoch: Option<usize>,
    pub stage_length: Option<usize>,
    pub precision: Precision,
    /// Save a checkpoint every this many epochs (always after the last).
    pub checkpoint_every: usize,
    pub fixed_validation: bool,
    pub seeds: Seeds,
    pub network: NetworkShape,
    pub adam: Adam,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub hard_mining: HardMiningConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Denoise,
            scheduler: SchedulerKind::OnDemand,
            epochs: 150,
            batch_size: 100,
            levels: TRAIN_LEVELS as usize,
            batches_per_epoch: None,
            stage_length: None,
            precision: Precision::F32,
            checkpoint_every: 10,
            fixed_validation: false,
            seeds: Seeds::default(),
            network: NetworkShape::default(),
            adam: Adam::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            hard_mining: HardMiningConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn channels(&self) -> usize {
        self.task.channels()
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            input_channels: self.channels(),
            input_size: crate::data::PATCH,
            encoder_channels: self.network.encoder_channels.clone(),
            latent_spatial: self.network.latent_spatial,
            seed: self.seeds.resolved().init.expect("resolved"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = self.seeds.resolved();
        TrainConfig {
            task: self.task,
            scheduler: self.scheduler,
            levels: self.levels,
            batch_size: self.batch_size,
            epochs: self.epochs,
            batches_per_epoch: self.batches_per_epoch,
            stage_length: self.stage_length,
            data_seed: s.data.expect("resolved"),
            corruption_seed: s.corruption.expect("resolved"),
            adam: self.adam,
            fixed_validation: self.fixed_validation,
            hard_mining: self.hard_mining,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.network_config().validate()?;
        if self.eval.trials == 0 {
            return Err(Error::Config("eval.trials must be at least 1".into()));
        }
        if let Some(l) = self.eval.levels.iter().find(|l| **l == 0 || **l > MAX_LEVEL) {
            return Err(Error::Config(format!("eval level {l} outside 1..={MAX_LEVEL}")));
        }
        Ok(())
    }
}
