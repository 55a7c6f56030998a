use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::dp::DpConfig;
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;
use crate::rng::derive_seed;
use crate::targets::{Family, LinearScheduleSpec, TrainConfig};
use crate::traj::{BoundingBox, SynthParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic {
        seq_len: usize,
        #[serde(default)]
        params: SynthParams,
    },
    Csv {
        path: PathBuf,
        seq_len: usize,
        #[serde(default)]
        bounds: Option<BoundingBox>,
    },
}

impl DataSource {
    pub fn seq_len(&self) -> usize {
        match self {
            DataSource::Synthetic { seq_len, .. } | DataSource::Csv { seq_len, .. } => *seq_len,
        }
    }
}

/// Pool sizes. Every member is part of the target's training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub members: usize,
    pub non_members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    pub family: Family,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<DpConfig>,
    pub attack: AttackConfig,
    #[serde(default)]
    pub schedule: LinearScheduleSpec,
    pub split: SplitSizes,
    pub master_seed: u64,
}

/// Stage seeds, each hashed from the master seed and a stage label, so e.g.
/// changing the attack stage never perturbs training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub data: u64,
    pub split: u64,
    pub train: u64,
    pub attack: u64,
}

impl StageSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            data: derive_seed(master, "data"),
            split: derive_seed(master, "split"),
            train: derive_seed(master, "train"),
            attack: derive_seed(master, "attack"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attack.kind.family() != self.family {
            return Err(Error::Config(format!(
                "{:?} attack is incompatible with a {} target",
                self.attack.kind, self.family
            )));
        }
        if self.split.members == 0 || self.split.non_members == 0 {
            return Err(Error::Config("both pools must be non-empty".into()));
        }
        if self.data.seq_len() < 2 {
            return Err(Error::Config("seq_len must be at least 2".into()));
        }
        if let (Some(a), Some(b)) = (&self.dp, &self.train.dp) {
            if a != b {
                return Err(Error::Config(
                    "conflicting dp settings in `dp` and `train.dp`".into(),
                ));
            }
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        if self.family == Family::Diffusion {
            let t_max = self.schedule.build()?.t_max();
            if self.attack.probe_timesteps == 0 || self.attack.probe_timesteps > t_max {
                return Err(Error::Config(format!(
                    "probe timesteps must be in [1, {t_max}], got {}",
                    self.attack.probe_timesteps
                )));
            }
        }
        Ok(())
    }

    /// Copy with stage seeds filled in from `master_seed` and the DP config
    /// pushed into the training config.
    pub fn resolved(&self) -> Self {
        let seeds = StageSeeds::from_master(self.master_seed);
        let mut out = self.clone();
        out.train.seed = seeds.train;
        out.attack.seed = seeds.attack;
        if out.dp.is_none() {
            out.dp = out.train.dp;
        }
        out.train.dp = out.dp;
        out
    }

    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_dp(mut self, dp: Option<DpConfig>) -> Self {
        self.dp = dp;
        self.train.dp = dp;
        self
    }
}

/// Names of the bundled presets.
pub const PRESETS: [&str; 4] = ["leaky-gan", "safe-gan", "leaky-diffusion", "safe-diffusion"];

pub const DEFAULT_MASTER_SEED: u64 = 20_240_601;

const SEQ_LEN: usize = 10;

/// Built-in experiment regimes. The leaky presets train on a small set for
/// many epochs; the safe presets train on a large set and stop early.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let data = DataSource::Synthetic {
        seq_len: SEQ_LEN,
        params: SynthParams::default(),
    };
    let cfg = match name {
        "leaky-gan" => ExperimentConfig {
            name: name.into(),
            data,
            family: Family::Gan,
            train: TrainConfig {
                epochs: 2000,
                batch_size: 16,
                learning_rate: 1e-3,
                optimizer: OptimizerKind::Adam,
                hidden: vec![128, 128],
                generator_hidden: vec![32],
                latent_dim: 8,
                ..TrainConfig::default()
            },
            dp: None,
            attack: AttackConfig::discriminator(0),
            schedule: LinearScheduleSpec::default(),
            split: SplitSizes {
                members: 64,
                non_members: 256,
            },
            master_seed: DEFAULT_MASTER_SEED,
        },
        "safe-gan" => ExperimentConfig {
            name: name.into(),
            data,
            family: Family::Gan,
            train: TrainConfig {
                epochs: 50,
                batch_size: 64,
                learning_rate: 1e-3,
                optimizer: OptimizerKind::Adam,
                hidden: vec![64],
                generator_hidden: vec![32],
                latent_dim: 8,
                ..TrainConfig::default()
            },
            dp: None,
            attack: AttackConfig::discriminator(0),
            schedule: LinearScheduleSpec::default(),
            split: SplitSizes {
                members: 4096,
                non_members: 1024,
            },
            master_seed: DEFAULT_MASTER_SEED,
        },
        "leaky-diffusion" => ExperimentConfig {
            name: name.into(),
            data,
            family: Family::Diffusion,
            train: TrainConfig {
                epochs: 3000,
                batch_size: 16,
                learning_rate: 1e-3,
                optimizer: OptimizerKind::Adam,
                hidden: vec![128, 128],
                ..TrainConfig::default()
            },
            dp: None,
            attack: AttackConfig::loss_based(50, 0),
            schedule: LinearScheduleSpec::default(),
            split: SplitSizes {
                members: 64,
                non_members: 256,
            },
            master_seed: DEFAULT_MASTER_SEED,
        },
        "safe-diffusion" => ExperimentConfig {
            name: name.into(),
            data,
            family: Family::Diffusion,
            train: TrainConfig {
                epochs: 50,
                batch_size: 64,
                learning_rate: 1e-3,
                optimizer: OptimizerKind::Adam,
                hidden: vec![64],
                ..TrainConfig::default()
            },
            dp: None,
            attack: AttackConfig::loss_based(50, 0),
            schedule: LinearScheduleSpec::default(),
            split: SplitSizes {
                members: 4096,
                non_members: 1024,
            },
            master_seed: DEFAULT_MASTER_SEED,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (available: {})",
                PRESETS.join(", ")
            )))
        }
    };
    debug_assert_eq!(cfg.attack.kind, AttackKind::for_family(cfg.family));
    Ok(cfg)
}
