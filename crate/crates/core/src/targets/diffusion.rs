use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::schedule::{forward_noising, LinearScheduleSpec, NoiseSchedule};
use super::{aggregate, check_data, layer_plan, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Optimizer};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::traj::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionTarget {
    /// ε_θ: `[x_t ⊕ t/T_max] → ε̂`.
    pub noise_net: Mlp,
    pub schedule: NoiseSchedule,
    pub schedule_spec: LinearScheduleSpec,
    pub config: TrainConfig,
    pub seq_len: usize,
    pub dataset_size: usize,
    /// Mean per-coordinate noise-prediction MSE per epoch.
    pub loss_trace: Vec<f64>,
}

impl DiffusionTarget {
    /// ε_θ(x_t, t).
    pub fn predict_noise(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        let input = conditioned_input(x_t, t, self.schedule.t_max());
        self.noise_net.forward(&input)
    }
}

fn conditioned_input(x_t: &[f64], t: usize, t_max: usize) -> Vec<f64> {
    let mut input = Vec::with_capacity(x_t.len() + 1);
    input.extend_from_slice(x_t);
    input.push(t as f64 / t_max as f64);
    input
}

fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Trains ε_θ on the noise-prediction objective with `t ~ U{1..T_max}`.
pub fn train_diffusion(
    data: &[Trajectory],
    config: &TrainConfig,
    schedule_spec: &LinearScheduleSpec,
) -> Result<DiffusionTarget> {
    config.validate(data.len())?;
    let seq_len = check_data(data)?;
    let schedule = schedule_spec.build()?;
    let t_max = schedule.t_max();
    let dim = 2 * seq_len;

    let (dims, acts) = layer_plan(
        dim + 1,
        &config.hidden,
        dim,
        config.hidden_activation,
        Activation::Identity,
    );
    let mut net = Mlp::new(
        &dims,
        &acts,
        &mut rng_from_seed(derive_seed(config.seed, "noise-net")),
    )?;
    let mut opt = Optimizer::new(config.optimizer, &net, config.learning_rate);
    let mut rng = rng_from_seed(derive_seed(config.seed, "diffusion-loop"));

    let flat: Vec<Vec<f64>> = data.iter().map(Trajectory::flatten).collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut per_example = Vec::with_capacity(batch.len());
            for &i in batch {
                let t = rng.random_range(1..=t_max);
                let eps = gaussian(&mut rng, dim);
                let x_t = forward_noising(&flat[i], t, &eps, &schedule)?;
                let input = conditioned_input(&x_t, t, t_max);
                let pred = net.forward(&input)?;
                let mut loss = 0.0;
                let upstream: Vec<f64> = pred
                    .iter()
                    .zip(&eps)
                    .map(|(p, e)| {
                        let r = p - e;
                        loss += r * r;
                        2.0 * r / dim as f64
                    })
                    .collect();
                total += loss / dim as f64;
                per_example.push(net.backward(&input, &upstream)?);
            }
            let grad = aggregate(per_example, config.dp.as_ref(), &mut rng)?;
            opt.step(&mut net, &grad)?;
        }
        let mean = total / flat.len() as f64;
        if !mean.is_finite() || !net.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("noise-prediction loss {mean}"),
            });
        }
        trace.push(mean);
    }

    Ok(DiffusionTarget {
        noise_net: net,
        schedule,
        schedule_spec: *schedule_spec,
        config: config.clone(),
        seq_len,
        dataset_size: data.len(),
        loss_trace: trace,
    })
}

/// DDPM ancestral sampling from `N(0, I)` through all `T_max` steps, with
/// `σ_t² = β_t`.
pub fn sample_diffusion(model: &DiffusionTarget, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let dim = 2 * model.seq_len;
    let s = &model.schedule;
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|i| {
            let mut x = gaussian(&mut rng, dim);
            for t in (1..=s.t_max()).rev() {
                let eps_hat = model.predict_noise(&x, t)?;
                let alpha = s.alpha(t)?;
                let beta = s.beta(t)?;
                let coef = beta / (1.0 - s.alpha_bar(t)?).sqrt();
                let scale = 1.0 / alpha.sqrt();
                let sigma = beta.sqrt();
                let noise = if t > 1 {
                    gaussian(&mut rng, dim)
                } else {
                    vec![0.0; dim]
                };
                x = x
                    .iter()
                    .zip(&eps_hat)
                    .zip(&noise)
                    .map(|((xv, e), z)| scale * (xv - coef * e) + sigma * z)
                    .collect();
            }
            Ok(Trajectory::from_flat(format!("sample-{i}"), &x))
        })
        .collect()
}
