use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance schedule of the forward noising process. Timesteps are
/// 1-based: `beta(1)` is the first increment and `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Serialized form: the parameters a linear schedule is rebuilt from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearScheduleSpec {
    pub beta_start: f64,
    pub beta_end: f64,
    pub steps: usize,
}

impl Default for LinearScheduleSpec {
    fn default() -> Self {
        Self {
            beta_start: 1e-4,
            beta_end: 0.02,
            steps: 100,
        }
    }
}

impl LinearScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.beta_start, self.beta_end, self.steps)
    }
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config(
                "noise schedule needs at least one step".into(),
            ));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// `steps` betas evenly spaced from `beta_start` to `beta_end`.
    pub fn linear(beta_start: f64, beta_end: f64, steps: usize) -> Result<Self> {
        let betas = match steps {
            0 => Vec::new(),
            1 => vec![beta_start],
            _ => (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect(),
        };
        Self::from_betas(betas)
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max() {
            return Err(Error::Range(format!(
                "timestep {t} outside [1, {}]",
                self.t_max()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.betas[t - 1])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alphas[t - 1])
    }

    /// ᾱ_t for `t ∈ [0, T_max]`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t > self.t_max() {
            return Err(Error::Range(format!(
                "timestep {t} outside [0, {}]",
                self.t_max()
            )));
        }
        Ok(self.alpha_bars[t])
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// `√ᾱ·x0 + √(1−ᾱ)·eps`, for an explicit ᾱ.
pub fn noise_with_alpha_bar(x0: &[f64], eps: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::Shape(format!(
            "noise has length {}, trajectory {}",
            eps.len(),
            x0.len()
        )));
    }
    let signal = alpha_bar.sqrt();
    let noise = (1.0 - alpha_bar).sqrt();
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(x, e)| signal * x + noise * e)
        .collect())
}

/// Closed-form forward process: `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
pub fn forward_noising(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    schedule.check(t)?;
    noise_with_alpha_bar(x0, eps, schedule.alpha_bars[t])
}
