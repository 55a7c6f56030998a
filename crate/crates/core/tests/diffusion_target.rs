mod common;

use std::sync::OnceLock;

use common::{brute_force_loss_score, linear_alpha_bar, mean};
use rand_distr::{Distribution, StandardNormal};
use trajaudit::attacks::{loss_score, loss_score_with_probes, probe_plan, AttackConfig, Probe};
use trajaudit::harness::{prepare_dataset, preset, train_target, StageSeeds};
use trajaudit::rng::rng_from_seed;
use trajaudit::targets::{
    forward_noising, sample_diffusion, train_diffusion, DiffusionTarget, LinearScheduleSpec,
    Target, TrainConfig,
};
use trajaudit::traj::{synth_anchors, synth_mobility, MembershipDataset, SynthParams, Trajectory};
use trajaudit::Error;

fn gaussian(rng: &mut trajaudit::rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn small_model() -> DiffusionTarget {
    let data = synth_mobility(32, 10, 5, &SynthParams::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 8,
        hidden: vec![32, 32],
        seed: 8,
        ..TrainConfig::default()
    };
    train_diffusion(&data, &cfg, &LinearScheduleSpec::default()).unwrap()
}

#[test]
fn forward_noising_variance_matches_one_minus_alpha_bar() {
    let spec = LinearScheduleSpec::default();
    let schedule = spec.build().unwrap();
    let x0: Vec<f64> = (0..20).map(|i| (i as f64 / 10.0) - 1.0).collect();
    let mut rng = rng_from_seed(404);
    for t in [1, schedule.t_max() / 2, schedule.t_max()] {
        let draws: Vec<Vec<f64>> = (0..10_000)
            .map(|_| forward_noising(&x0, t, &gaussian(&mut rng, 20), &schedule).unwrap())
            .collect();
        let expected = 1.0 - linear_alpha_bar(&spec, t);
        for j in 0..20 {
            let m = mean(draws.iter().map(|d| d[j]));
            let var =
                draws.iter().map(|d| (d[j] - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
            assert!(
                (var - expected).abs() / expected < 0.05,
                "t={t} coord {j}: {var} vs {expected}"
            );
        }
    }
}

#[test]
fn loss_score_matches_brute_force_bit_for_bit() {
    let model = small_model();
    let t_max = model.schedule.t_max();
    let trajs = synth_mobility(10, 10, 77, &SynthParams::default()).unwrap();
    let mut rng = rng_from_seed(9);
    for x0 in &trajs {
        let probes: Vec<Probe> = (1..=t_max)
            .map(|t| Probe {
                timestep: t,
                noise: gaussian(&mut rng, 20),
            })
            .collect();
        let got = loss_score_with_probes(&model, x0, &probes).unwrap();
        assert_eq!(
            got.to_bits(),
            brute_force_loss_score(&model, x0, &probes).to_bits()
        );
    }
}

#[test]
fn exhaustive_probe_plan_scores_match_brute_force() {
    let model = small_model();
    let cfg = AttackConfig::loss_based(model.schedule.t_max(), 31);
    for x0 in &synth_mobility(10, 10, 78, &SynthParams::default()).unwrap() {
        let probes = probe_plan(&model, &x0.id, &cfg).unwrap();
        let mut steps: Vec<usize> = probes.iter().map(|p| p.timestep).collect();
        steps.sort_unstable();
        assert_eq!(steps, (1..=model.schedule.t_max()).collect::<Vec<_>>());
        let got = loss_score(&model, x0, &cfg).unwrap();
        assert_eq!(
            got.to_bits(),
            brute_force_loss_score(&model, x0, &probes).to_bits()
        );
        assert_eq!(got, loss_score(&model, x0, &cfg).unwrap());
    }
}

#[test]
fn zero_noise_predictor_scores_minus_dimension() {
    let mut model = small_model();
    for l in &mut model.noise_net.layers {
        l.weights.iter_mut().for_each(|w| *w = 0.0);
        l.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let cfg = AttackConfig {
        noise_draws_per_timestep: 50,
        ..AttackConfig::loss_based(model.schedule.t_max(), 3)
    };
    for x0 in synth_mobility(5, 10, 1, &SynthParams::default()).unwrap() {
        let s = loss_score(&model, &x0, &cfg).unwrap();
        assert!((s + 20.0).abs() / 20.0 < 0.05, "{s}");
    }
}

#[test]
fn runaway_learning_rate_reports_divergence() {
    let data = synth_mobility(8, 5, 2, &SynthParams::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 4,
        hidden: vec![8],
        learning_rate: 1e200,
        optimizer: trajaudit::nn::OptimizerKind::Sgd,
        ..TrainConfig::default()
    };
    match train_diffusion(&data, &cfg, &LinearScheduleSpec::default()) {
        Err(Error::Divergence { .. }) => {}
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
}

/// The leaky-diffusion data trained for each epoch count in the grid.
struct Grid {
    dataset: MembershipDataset,
    anchors: Vec<(f64, f64)>,
    models: Vec<(usize, DiffusionTarget)>,
}

fn grid() -> &'static Grid {
    static GRID: OnceLock<Grid> = OnceLock::new();
    GRID.get_or_init(|| {
        let base = preset("leaky-diffusion").unwrap().resolved();
        let dataset = prepare_dataset(&base).unwrap();
        let params = SynthParams::default();
        let anchors = synth_anchors(StageSeeds::from_master(base.master_seed).data, &params);
        let models = [100, 1000, 3000]
            .into_iter()
            .map(|epochs| {
                let mut cfg = base.clone();
                cfg.train.epochs = epochs;
                match train_target(&cfg, &dataset.members).unwrap() {
                    Target::Diffusion(d) => (epochs, d),
                    Target::Gan(_) => unreachable!(),
                }
            })
            .collect();
        Grid {
            dataset,
            anchors,
            models,
        }
    })
}

fn mean_loss(model: &DiffusionTarget, pool: &[Trajectory]) -> f64 {
    let cfg = AttackConfig::loss_based(50, 12);
    mean(pool.iter().map(|x| -loss_score(model, x, &cfg).unwrap()))
}

#[test]
fn overfit_model_denoises_members_better() {
    let g = grid();
    let (_, model) = g.models.last().unwrap();
    let members = mean_loss(model, &g.dataset.members);
    let others = mean_loss(model, &g.dataset.non_members);
    assert!(members < others);
    assert!(
        (others - members) / others >= 0.05,
        "members {members}, non-members {others}"
    );
}

#[test]
fn overfit_gap_grows_with_epochs() {
    let g = grid();
    let gaps: Vec<f64> = g
        .models
        .iter()
        .map(|(_, m)| mean_loss(m, &g.dataset.non_members) - mean_loss(m, &g.dataset.members))
        .collect();
    assert!(gaps.windows(2).all(|w| w[0] <= w[1]), "{gaps:?}");
}

fn near_anchor_fraction(samples: &[Trajectory], anchors: &[(f64, f64)]) -> f64 {
    let near = samples
        .iter()
        .filter(|t| {
            let end = t.points.last().unwrap();
            anchors
                .iter()
                .any(|(ax, ay)| ((end.x - ax).powi(2) + (end.y - ay).powi(2)).sqrt() <= 0.3)
        })
        .count();
    near as f64 / samples.len() as f64
}

#[test]
fn trained_sampler_lands_near_anchors() {
    let g = grid();
    let (_, model) = g.models.last().unwrap();
    let samples = sample_diffusion(model, 400, 5).unwrap();
    assert!(samples
        .iter()
        .all(|t| t.len() == 10 && t.validate().is_ok()));
    let trained = near_anchor_fraction(&samples, &g.anchors);
    assert!(trained >= 0.5, "{trained}");

    let mut untrained = model.clone();
    let mut rng = rng_from_seed(1);
    untrained.noise_net = trajaudit::nn::Mlp::new(
        &[21, 8, 20],
        &[
            trajaudit::nn::Activation::Tanh,
            trajaudit::nn::Activation::Identity,
        ],
        &mut rng,
    )
    .unwrap();
    let baseline = near_anchor_fraction(&sample_diffusion(&untrained, 400, 5).unwrap(), &g.anchors);
    assert!(
        baseline < trained,
        "untrained {baseline}, trained {trained}"
    );
}
