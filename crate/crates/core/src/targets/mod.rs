//! The two desk-scale target models and their persistence.
//!
//! [`GanTarget`] exposes its discriminator, [`DiffusionTarget`] its noise
//! predictor. Those are the only surfaces the attacks touch.

mod diffusion;
mod gan;
mod schedule;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dp::DpConfig;
use crate::error::{Error, Result};
use crate::nn::{Activation, GradientSet, Mlp, OptimizerKind};

pub use diffusion::{sample_diffusion, train_diffusion, DiffusionTarget};
pub use gan::{train_gan, GanLossTrace, GanTarget, DISCRIMINATOR_CLAMP};
pub use schedule::{forward_noising, noise_with_alpha_bar, LinearScheduleSpec, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gan,
    Diffusion,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Gan => "gan",
            Family::Diffusion => "diffusion",
        })
    }
}

/// Training hyperparameters shared by both families. `latent_dim` and
/// `generator_hidden` only apply to the GAN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Hidden widths of the discriminator or noise predictor.
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub hidden_activation: Activation,
    #[serde(default = "default_generator_hidden")]
    pub generator_hidden: Vec<usize>,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default)]
    pub seed: u64,
    /// Enables DP-SGD on the network that sees real data.
    #[serde(default)]
    pub dp: Option<DpConfig>,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_generator_hidden() -> Vec<usize> {
    vec![64]
}

fn default_latent_dim() -> usize {
    8
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            hidden: vec![64, 64],
            hidden_activation: default_activation(),
            generator_hidden: default_generator_hidden(),
            latent_dim: default_latent_dim(),
            seed: 0,
            dp: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self, data_len: usize) -> Result<()> {
        if data_len == 0 {
            return Err(Error::EmptyInput("no training trajectories".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "epochs and batch size must be positive".into(),
            ));
        }
        if data_len < self.batch_size {
            return Err(Error::InsufficientData {
                required: self.batch_size,
                available: data_len,
            });
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.hidden.contains(&0) || self.generator_hidden.contains(&0) || self.latent_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if let Some(dp) = &self.dp {
            dp.validate()?;
        }
        Ok(())
    }
}

fn layer_plan(
    input: usize,
    hidden: &[usize],
    output: usize,
    act: Activation,
    last: Activation,
) -> (Vec<usize>, Vec<Activation>) {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    let mut acts = vec![act; hidden.len()];
    acts.push(last);
    (dims, acts)
}

/// Averages per-example gradients, or privatizes them when DP is on.
fn aggregate(
    per_example: Vec<GradientSet>,
    dp: Option<&DpConfig>,
    rng: &mut crate::rng::Rng,
) -> Result<GradientSet> {
    match dp {
        Some(cfg) => crate::dp::privatize_with_rng(&per_example, cfg, rng),
        None => {
            let n = per_example.len() as f64;
            let mut iter = per_example.into_iter();
            let mut total = iter
                .next()
                .ok_or_else(|| Error::EmptyInput("empty batch".into()))?;
            for g in iter {
                total.add_assign(&g)?;
            }
            total.scale(1.0 / n);
            Ok(total)
        }
    }
}

/// A trained target of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Gan(GanTarget),
    Diffusion(DiffusionTarget),
}

/// Metadata sidecar written next to the network checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TargetMeta {
    family: Family,
    seq_len: usize,
    dataset_size: usize,
    train_config: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schedule: Option<LinearScheduleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gan_loss_trace: Option<GanLossTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diffusion_loss_trace: Option<Vec<f64>>,
}

pub const META_FILE: &str = "target.meta.json";
const GENERATOR_FILE: &str = "generator.mlp.json";
const DISCRIMINATOR_FILE: &str = "discriminator.mlp.json";
const NOISE_NET_FILE: &str = "noise_net.mlp.json";

impl Target {
    pub fn family(&self) -> Family {
        match self {
            Target::Gan(_) => Family::Gan,
            Target::Diffusion(_) => Family::Diffusion,
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            Target::Gan(g) => g.seq_len,
            Target::Diffusion(d) => d.seq_len,
        }
    }

    pub fn train_config(&self) -> &TrainConfig {
        match self {
            Target::Gan(g) => &g.config,
            Target::Diffusion(d) => &d.config,
        }
    }

    pub fn dataset_size(&self) -> usize {
        match self {
            Target::Gan(g) => g.dataset_size,
            Target::Diffusion(d) => d.dataset_size,
        }
    }

    /// Writes the network checkpoints and the metadata sidecar into `dir`,
    /// returning the paths written.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let meta = match self {
            Target::Gan(g) => {
                for (name, net) in [
                    (GENERATOR_FILE, &g.generator),
                    (DISCRIMINATOR_FILE, &g.discriminator),
                ] {
                    let p = dir.join(name);
                    net.save(&p)?;
                    written.push(p);
                }
                TargetMeta {
                    family: Family::Gan,
                    seq_len: g.seq_len,
                    dataset_size: g.dataset_size,
                    train_config: g.config.clone(),
                    schedule: None,
                    gan_loss_trace: Some(g.loss_trace.clone()),
                    diffusion_loss_trace: None,
                }
            }
            Target::Diffusion(d) => {
                let p = dir.join(NOISE_NET_FILE);
                d.noise_net.save(&p)?;
                written.push(p);
                TargetMeta {
                    family: Family::Diffusion,
                    seq_len: d.seq_len,
                    dataset_size: d.dataset_size,
                    train_config: d.config.clone(),
                    schedule: Some(d.schedule_spec),
                    gan_loss_trace: None,
                    diffusion_loss_trace: Some(d.loss_trace.clone()),
                }
            }
        };
        let p = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(META_FILE);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: TargetMeta = serde_json::from_str(&text)?;
        let target = match meta.family {
            Family::Gan => Target::Gan(GanTarget {
                generator: Mlp::load(&dir.join(GENERATOR_FILE))?,
                discriminator: Mlp::load(&dir.join(DISCRIMINATOR_FILE))?,
                config: meta.train_config,
                seq_len: meta.seq_len,
                dataset_size: meta.dataset_size,
                loss_trace: meta.gan_loss_trace.unwrap_or_default(),
            }),
            Family::Diffusion => {
                let spec = meta.schedule.ok_or_else(|| {
                    Error::Validation("diffusion checkpoint lacks a schedule".into())
                })?;
                Target::Diffusion(DiffusionTarget {
                    noise_net: Mlp::load(&dir.join(NOISE_NET_FILE))?,
                    schedule: spec.build()?,
                    schedule_spec: spec,
                    config: meta.train_config,
                    seq_len: meta.seq_len,
                    dataset_size: meta.dataset_size,
                    loss_trace: meta.diffusion_loss_trace.unwrap_or_default(),
                })
            }
        };
        target.validate()?;
        Ok(target)
    }

    fn validate(&self) -> Result<()> {
        let d = 2 * self.seq_len();
        let ok = match self {
            Target::Gan(g) => {
                g.generator.output_dim() == d
                    && g.discriminator.input_dim() == d
                    && g.discriminator.output_dim() == 1
            }
            Target::Diffusion(m) => {
                m.noise_net.input_dim() == d + 1 && m.noise_net.output_dim() == d
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "checkpoint networks do not match sequence length {}",
                self.seq_len()
            )))
        }
    }
}

fn check_data(data: &[crate::traj::Trajectory]) -> Result<usize> {
    let first = data
        .first()
        .ok_or_else(|| Error::EmptyInput("no training trajectories".into()))?;
    let len = first.len();
    if len < 2 {
        return Err(Error::Shape("trajectories need at least 2 points".into()));
    }
    if let Some(t) = data.iter().find(|t| t.len() != len) {
        return Err(Error::Shape(format!(
            "trajectory {} has {} points, expected {len}",
            t.id,
            t.len()
        )));
    }
    Ok(len)
}
