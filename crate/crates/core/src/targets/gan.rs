use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{aggregate, check_data, layer_plan, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, GradientSet, Mlp, Optimizer};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::traj::Trajectory;

/// Discriminator outputs are clamped to `[κ, 1 − κ]` before any log.
pub const DISCRIMINATOR_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GanLossTrace {
    /// Mean binary cross-entropy of the discriminator per epoch.
    pub discriminator: Vec<f64>,
    /// Mean non-saturating generator loss `−log D(G(z))` per epoch.
    pub generator: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanTarget {
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub config: TrainConfig,
    pub seq_len: usize,
    pub dataset_size: usize,
    pub loss_trace: GanLossTrace,
}

impl GanTarget {
    /// `D(flatten(x))`, clamped to `[κ, 1 − κ]`.
    pub fn discriminator_confidence(&self, x: &Trajectory) -> Result<f64> {
        if x.len() != self.seq_len {
            return Err(Error::Shape(format!(
                "trajectory {} has {} points, model expects {}",
                x.id,
                x.len(),
                self.seq_len
            )));
        }
        let p = self.discriminator.forward(&x.flatten())?[0];
        Ok(p.clamp(DISCRIMINATOR_CLAMP, 1.0 - DISCRIMINATOR_CLAMP))
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|i| {
                let z = gaussian(&mut rng, self.config.latent_dim);
                let flat = self.generator.forward(&z)?;
                Ok(Trajectory::from_flat(format!("gan-{i}"), &flat))
            })
            .collect()
    }
}

fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(DISCRIMINATOR_CLAMP, 1.0 - DISCRIMINATOR_CLAMP)
}

/// BCE loss and its derivative with respect to the discriminator output.
fn bce(p: f64, real: bool) -> (f64, f64) {
    let p = clamp_prob(p);
    if real {
        (-p.ln(), -1.0 / p)
    } else {
        (-(1.0 - p).ln(), 1.0 / (1.0 - p))
    }
}

fn check_finite(
    epoch: usize,
    d_loss: f64,
    g_loss: f64,
    discriminator: &Mlp,
    generator: &Mlp,
) -> Result<()> {
    if d_loss.is_finite()
        && g_loss.is_finite()
        && discriminator.is_finite()
        && generator.is_finite()
    {
        return Ok(());
    }
    Err(Error::Divergence {
        epoch,
        message: format!("discriminator loss {d_loss}, generator loss {g_loss}"),
    })
}

/// Adversarial training, one discriminator step then one generator step
/// per minibatch.
pub fn train_gan(data: &[Trajectory], config: &TrainConfig) -> Result<GanTarget> {
    config.validate(data.len())?;
    let seq_len = check_data(data)?;
    let dim = 2 * seq_len;
    let act = config.hidden_activation;

    let (g_dims, g_acts) = layer_plan(
        config.latent_dim,
        &config.generator_hidden,
        dim,
        act,
        Activation::Tanh,
    );
    let (d_dims, d_acts) = layer_plan(dim, &config.hidden, 1, act, Activation::Sigmoid);
    let mut generator = Mlp::new(
        &g_dims,
        &g_acts,
        &mut rng_from_seed(derive_seed(config.seed, "generator")),
    )?;
    let mut discriminator = Mlp::new(
        &d_dims,
        &d_acts,
        &mut rng_from_seed(derive_seed(config.seed, "discriminator")),
    )?;
    let mut g_opt = Optimizer::new(config.optimizer, &generator, config.learning_rate);
    let mut d_opt = Optimizer::new(config.optimizer, &discriminator, config.learning_rate);
    let mut rng = rng_from_seed(derive_seed(config.seed, "gan-loop"));

    let flat: Vec<Vec<f64>> = data.iter().map(Trajectory::flatten).collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    let mut trace = GanLossTrace::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut d_total, mut g_total, mut seen) = (0.0, 0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let b = batch.len() as f64;
            let fakes: Vec<Vec<f64>> = batch
                .iter()
                .map(|_| generator.forward(&gaussian(&mut rng, config.latent_dim)))
                .collect::<Result<_>>()?;

            let mut per_example = Vec::with_capacity(batch.len());
            for (&i, fake) in batch.iter().zip(&fakes) {
                let real = &flat[i];
                let (l_real, d_real) = bce(discriminator.forward(real)?[0], true);
                let (l_fake, d_fake) = bce(discriminator.forward(fake)?[0], false);
                let mut g = discriminator.backward(real, &[d_real])?;
                g.add_assign(&discriminator.backward(fake, &[d_fake])?)?;
                per_example.push(g);
                d_total += l_real + l_fake;
            }
            let d_grad = aggregate(per_example, config.dp.as_ref(), &mut rng)?;
            d_opt.step(&mut discriminator, &d_grad)?;

            let mut g_grad = GradientSet::zeros_like(&generator);
            for _ in batch {
                let z = gaussian(&mut rng, config.latent_dim);
                let x = generator.forward(&z)?;
                let p = discriminator.forward(&x)?[0];
                let (loss, dp) = bce(p, true);
                let (_, dx) = discriminator.backward_with_input(&x, &[dp])?;
                g_grad.add_assign(&generator.backward(&z, &dx)?)?;
                g_total += loss;
            }
            g_grad.scale(1.0 / b);
            g_opt.step(&mut generator, &g_grad)?;
            seen += batch.len();
        }
        let d_loss = d_total / seen as f64;
        let g_loss = g_total / seen as f64;
        check_finite(epoch, d_loss, g_loss, &discriminator, &generator)?;
        trace.discriminator.push(d_loss);
        trace.generator.push(g_loss);
    }

    Ok(GanTarget {
        generator,
        discriminator,
        config: config.clone(),
        seq_len,
        dataset_size: data.len(),
        loss_trace: trace,
    })
}
