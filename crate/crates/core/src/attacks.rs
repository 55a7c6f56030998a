//! White-box membership-inference attacks.
//!
//! Both scores are oriented so that a higher value means "more likely a
//! training member":
//!
//! * GAN targets: the logit of the discriminator's confidence,
//!   `log(D(x) / (1 − D(x)))`.
//! * Diffusion targets: the negated noise-prediction error averaged over
//!   `T` probe timesteps, `−(1/T) Σ_t E_ε ‖ε − ε_θ(x_t, t)‖²`.

use std::fs;
use std::path::Path;
use std::thread;

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::targets::{forward_noising, DiffusionTarget, Family, GanTarget, Target};
use crate::traj::{MembershipDataset, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub score: f64,
    pub is_member: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Discriminator,
    LossBased,
}

impl AttackKind {
    pub fn family(self) -> Family {
        match self {
            AttackKind::Discriminator => Family::Gan,
            AttackKind::LossBased => Family::Diffusion,
        }
    }

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Gan => AttackKind::Discriminator,
            Family::Diffusion => AttackKind::LossBased,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Probe timesteps per sample (loss-based only).
    #[serde(default = "default_probes")]
    pub probe_timesteps: usize,
    #[serde(default = "default_draws")]
    pub noise_draws_per_timestep: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_probes() -> usize {
    50
}

fn default_draws() -> usize {
    1
}

impl AttackConfig {
    pub fn discriminator(seed: u64) -> Self {
        Self {
            kind: AttackKind::Discriminator,
            probe_timesteps: default_probes(),
            noise_draws_per_timestep: default_draws(),
            seed,
        }
    }

    pub fn loss_based(probe_timesteps: usize, seed: u64) -> Self {
        Self {
            kind: AttackKind::LossBased,
            probe_timesteps,
            noise_draws_per_timestep: default_draws(),
            seed,
        }
    }
}

/// `log(p / (1 − p))` on the open unit interval.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("logit needs p in (0, 1), got {p}")));
    }
    Ok((p / (1.0 - p)).ln())
}

pub fn disc_score(model: &GanTarget, x: &Trajectory) -> Result<f64> {
    logit(model.discriminator_confidence(x)?)
}

/// One noise-prediction probe: a timestep and the Gaussian draw injected at
/// it.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub timestep: usize,
    pub noise: Vec<f64>,
}

/// The probes `loss_score` evaluates for `sample_id`: `probe_timesteps`
/// distinct timesteps drawn uniformly from `[1, T_max]`, each with
/// `noise_draws_per_timestep` noise vectors. The stream is keyed by
/// `(config.seed, sample_id)` so it does not depend on pool order.
pub fn probe_plan(
    model: &DiffusionTarget,
    sample_id: &str,
    config: &AttackConfig,
) -> Result<Vec<Probe>> {
    let t_max = model.schedule.t_max();
    if config.probe_timesteps == 0 || config.probe_timesteps > t_max {
        return Err(Error::Config(format!(
            "probe timesteps must be in [1, {t_max}], got {}",
            config.probe_timesteps
        )));
    }
    if config.noise_draws_per_timestep == 0 {
        return Err(Error::Config(
            "noise draws per timestep must be positive".into(),
        ));
    }
    let dim = 2 * model.seq_len;
    let mut rng = rng_from_seed(derive_seed(config.seed, sample_id));
    let steps = index::sample(&mut rng, t_max, config.probe_timesteps).into_vec();
    let mut probes = Vec::with_capacity(steps.len() * config.noise_draws_per_timestep);
    for t in steps {
        for _ in 0..config.noise_draws_per_timestep {
            probes.push(Probe {
                timestep: t + 1,
                noise: (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
            });
        }
    }
    Ok(probes)
}

/// `−mean ‖ε − ε_θ(x_t, t)‖²` over explicit probes.
pub fn loss_score_with_probes(
    model: &DiffusionTarget,
    x0: &Trajectory,
    probes: &[Probe],
) -> Result<f64> {
    if x0.len() != model.seq_len {
        return Err(Error::Shape(format!(
            "trajectory {} has {} points, model expects {}",
            x0.id,
            x0.len(),
            model.seq_len
        )));
    }
    if probes.is_empty() {
        return Err(Error::Config("no probes".into()));
    }
    let flat = x0.flatten();
    let mut total = 0.0;
    for probe in probes {
        let x_t = forward_noising(&flat, probe.timestep, &probe.noise, &model.schedule)?;
        let pred = model.predict_noise(&x_t, probe.timestep)?;
        let mut sq = 0.0;
        for (e, p) in probe.noise.iter().zip(&pred) {
            sq += (e - p) * (e - p);
        }
        total += sq;
    }
    Ok(-(total / probes.len() as f64))
}

pub fn loss_score(model: &DiffusionTarget, x0: &Trajectory, config: &AttackConfig) -> Result<f64> {
    if config.kind != AttackKind::LossBased {
        return Err(Error::Config(
            "loss_score needs a loss-based attack config".into(),
        ));
    }
    let probes = probe_plan(model, &x0.id, config)?;
    loss_score_with_probes(model, x0, &probes)
}

fn score_one(target: &Target, x: &Trajectory, config: &AttackConfig) -> Result<f64> {
    let score = match target {
        Target::Gan(g) => disc_score(g, x)?,
        Target::Diffusion(d) => loss_score(d, x, config)?,
    };
    if !score.is_finite() {
        return Err(Error::Numeric(format!("score for {} is not finite", x.id)));
    }
    Ok(score)
}

/// Scores every trajectory in both pools on one thread.
pub fn run_attack(
    target: &Target,
    dataset: &MembershipDataset,
    config: &AttackConfig,
) -> Result<Vec<ScoredSample>> {
    run_attack_parallel(target, dataset, config, 1)
}

/// Like [`run_attack`] with up to `workers` threads. Results are identical
/// for any worker count. Output is sorted by `sample_id`.
pub fn run_attack_parallel(
    target: &Target,
    dataset: &MembershipDataset,
    config: &AttackConfig,
    workers: usize,
) -> Result<Vec<ScoredSample>> {
    if config.kind.family() != target.family() {
        return Err(Error::Config(format!(
            "{:?} attack cannot target a {} model",
            config.kind,
            target.family()
        )));
    }
    dataset.validate()?;
    let jobs: Vec<(&Trajectory, bool)> = dataset
        .members
        .iter()
        .map(|t| (t, true))
        .chain(dataset.non_members.iter().map(|t| (t, false)))
        .collect();

    let workers = workers.clamp(1, jobs.len());
    let chunk = jobs.len().div_ceil(workers);
    let scores: Vec<f64> = if workers == 1 {
        jobs.iter()
            .map(|(t, _)| score_one(target, t, config))
            .collect::<Result<_>>()?
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| {
                    s.spawn(move || {
                        part.iter()
                            .map(|(t, _)| score_one(target, t, config))
                            .collect::<Result<Vec<f64>>>()
                    })
                })
                .collect();
            let mut all = Vec::with_capacity(jobs.len());
            for h in handles {
                all.extend(h.join().expect("scoring worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };

    let mut out: Vec<ScoredSample> = jobs
        .iter()
        .zip(scores)
        .map(|((t, m), score)| ScoredSample {
            sample_id: t.id.clone(),
            score,
            is_member: *m,
        })
        .collect();
    out.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(out)
}

/// `sample_id,score,is_member`, rows sorted by `sample_id`.
pub fn scores_to_csv(samples: &[ScoredSample]) -> String {
    let mut rows: Vec<&ScoredSample> = samples.iter().collect();
    rows.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut out = String::from("sample_id,score,is_member\n");
    for s in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            s.sample_id,
            s.score,
            u8::from(s.is_member)
        ));
    }
    out
}

pub fn write_scores(path: &Path, samples: &[ScoredSample]) -> Result<()> {
    fs::write(path, scores_to_csv(samples)).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct ScoreRow {
    sample_id: String,
    score: f64,
    is_member: u8,
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoredSample>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{other:?}")),
    })?;
    let mut out = Vec::new();
    for row in reader.deserialize::<ScoreRow>() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let is_member = match row.is_member {
            0 => false,
            1 => true,
            v => {
                return Err(Error::Validation(format!(
                    "is_member must be 0 or 1, got {v}"
                )))
            }
        };
        out.push(ScoredSample {
            sample_id: row.sample_id,
            score: row.score,
            is_member,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{train_diffusion, train_gan, LinearScheduleSpec, TrainConfig};
    use crate::traj::{split_membership, synth_mobility, SynthParams};
    use proptest::prelude::*;

    #[test]
    fn logit_reference_values() {
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert!((logit(0.8).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!((logit(0.8).unwrap() - 1.386294).abs() < 1e-6);
        assert!((logit(0.2).unwrap() + 1.386294).abs() < 1e-6);
    }

    #[test]
    fn logit_domain_errors() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(logit(p), Err(Error::Domain(_))), "{p}");
        }
    }

    #[test]
    fn logit_at_clamp_ceiling() {
        let s = logit(1.0 - 1e-7).unwrap();
        let exact = ((1.0 - 1e-7) / 1e-7f64).ln();
        assert!((s - exact).abs() < 1e-9);
        assert!((s - 16.118).abs() < 1e-3);
    }

    fn tiny() -> (Vec<Trajectory>, TrainConfig) {
        let data = synth_mobility(12, 4, 8, &SynthParams::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            hidden: vec![8],
            generator_hidden: vec![8],
            latent_dim: 2,
            seed: 2,
            ..TrainConfig::default()
        };
        (data, cfg)
    }

    #[test]
    fn disc_score_is_logit_of_confidence() {
        let (data, cfg) = tiny();
        let model = train_gan(&data, &cfg).unwrap();
        for t in &data {
            let direct = logit(model.discriminator_confidence(t).unwrap()).unwrap();
            assert_eq!(disc_score(&model, t).unwrap(), direct);
        }
    }

    #[test]
    fn run_attack_counts_labels_and_rejects_family_mismatch() {
        let (data, cfg) = tiny();
        let gan = Target::Gan(train_gan(&data, &cfg).unwrap());
        let ds = split_membership(&data, 2, 2, 1).unwrap();
        let scored = run_attack(&gan, &ds, &AttackConfig::discriminator(1)).unwrap();
        assert_eq!(scored.len(), 4);
        assert_eq!(scored.iter().filter(|s| s.is_member).count(), 2);
        for s in &scored {
            let in_members = ds.members.iter().any(|t| t.id == s.sample_id);
            assert_eq!(s.is_member, in_members);
        }
        assert!(matches!(
            run_attack(&gan, &ds, &AttackConfig::loss_based(5, 1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scores_ignore_pool_order_and_worker_count() {
        let (data, cfg) = tiny();
        let diff = Target::Diffusion(
            train_diffusion(&data, &cfg, &LinearScheduleSpec::default()).unwrap(),
        );
        let ds = split_membership(&data, 5, 5, 3).unwrap();
        let config = AttackConfig::loss_based(10, 77);
        let base = run_attack(&diff, &ds, &config).unwrap();
        let mut shuffled = ds.clone();
        shuffled.members.reverse();
        shuffled.non_members.rotate_left(2);
        assert_eq!(run_attack(&diff, &shuffled, &config).unwrap(), base);
        assert_eq!(run_attack_parallel(&diff, &ds, &config, 3).unwrap(), base);
    }

    #[test]
    fn loss_score_is_deterministic_and_checks_config() {
        let (data, cfg) = tiny();
        let model = train_diffusion(&data, &cfg, &LinearScheduleSpec::default()).unwrap();
        let c = AttackConfig::loss_based(50, 4);
        assert_eq!(
            loss_score(&model, &data[0], &c).unwrap(),
            loss_score(&model, &data[0], &c).unwrap()
        );
        let too_many = AttackConfig::loss_based(101, 4);
        assert!(matches!(
            loss_score(&model, &data[0], &too_many),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            loss_score(&model, &data[0], &AttackConfig::discriminator(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn probe_plan_uses_distinct_timesteps() {
        let (data, cfg) = tiny();
        let model = train_diffusion(&data, &cfg, &LinearScheduleSpec::default()).unwrap();
        let mut c = AttackConfig::loss_based(100, 4);
        c.noise_draws_per_timestep = 2;
        let plan = probe_plan(&model, "x", &c).unwrap();
        assert_eq!(plan.len(), 200);
        let mut steps: Vec<usize> = plan.iter().step_by(2).map(|p| p.timestep).collect();
        steps.sort_unstable();
        assert_eq!(steps, (1..=100).collect::<Vec<_>>());
    }

    #[test]
    fn scores_csv_round_trips_in_id_order() {
        let samples = vec![
            ScoredSample {
                sample_id: "b".into(),
                score: -0.1,
                is_member: false,
            },
            ScoredSample {
                sample_id: "a".into(),
                score: 1.0 / 3.0,
                is_member: true,
            },
        ];
        let text = scores_to_csv(&samples);
        assert!(text.starts_with("sample_id,score,is_member\na,"));
        let f = tempfile::NamedTempFile::new().unwrap();
        write_scores(f.path(), &samples).unwrap();
        let back = read_scores(f.path()).unwrap();
        assert_eq!(back[0], samples[1]);
        assert_eq!(back[1], samples[0]);
    }

    proptest! {
        #[test]
        fn logit_is_antisymmetric(p in 1e-3f64..(1.0 - 1e-3)) {
            let a = logit(p).unwrap() + logit(1.0 - p).unwrap();
            prop_assert!(a.abs() < 1e-12);
        }

        #[test]
        fn logit_is_strictly_increasing(a in 1e-6f64..0.999, gap in 1e-6f64..1e-3) {
            let b = (a + gap).min(1.0 - 1e-7);
            prop_assume!(b > a);
            prop_assert!(logit(a).unwrap() < logit(b).unwrap());
        }
    }
}
