//! Independent reference implementations used as test oracles. Nothing
//! here calls into the code under test except to read plain data fields.

// Each test binary uses a different subset; the index loops are kept
// literal on purpose.
#![allow(dead_code, clippy::needless_range_loop)]

use trajaudit::attacks::{Probe, ScoredSample};
use trajaudit::nn::{Activation, Mlp};
use trajaudit::targets::{DiffusionTarget, LinearScheduleSpec};
use trajaudit::traj::Trajectory;

pub fn activate(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Tanh => z.tanh(),
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Identity => z,
    }
}

/// Row-by-row matrix-vector evaluation with indices spelled out.
pub fn straight_line_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for layer in &net.layers {
        let mut y = vec![0.0; layer.out_dim];
        for r in 0..layer.out_dim {
            let mut acc = 0.0;
            for c in 0..layer.in_dim {
                acc += layer.weights[r * layer.in_dim + c] * x[c];
            }
            y[r] = activate(layer.activation, acc + layer.bias[r]);
        }
        x = y;
    }
    x
}

/// `L(θ) = Σ_i c_i · net(x)_i`, so `c` is the upstream gradient.
pub fn linear_loss(net: &Mlp, x: &[f64], c: &[f64]) -> f64 {
    straight_line_forward(net, x)
        .iter()
        .zip(c)
        .map(|(o, w)| o * w)
        .sum()
}

fn param_mut(net: &mut Mlp, layer: usize, bias: bool, i: usize) -> &mut f64 {
    let l = &mut net.layers[layer];
    if bias {
        &mut l.bias[i]
    } else {
        &mut l.weights[i]
    }
}

/// Central differences of [`linear_loss`] for every parameter, in
/// layer order, weights before biases.
pub fn finite_difference_params(net: &Mlp, x: &[f64], c: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut probe = net.clone();
    for l in 0..net.layers.len() {
        for bias in [false, true] {
            let n = if bias {
                net.layers[l].bias.len()
            } else {
                net.layers[l].weights.len()
            };
            for i in 0..n {
                let orig = *param_mut(&mut probe, l, bias, i);
                *param_mut(&mut probe, l, bias, i) = orig + h;
                let up = linear_loss(&probe, x, c);
                *param_mut(&mut probe, l, bias, i) = orig - h;
                let down = linear_loss(&probe, x, c);
                *param_mut(&mut probe, l, bias, i) = orig;
                out.push((up - down) / (2.0 * h));
            }
        }
    }
    out
}

pub fn finite_difference_input(net: &Mlp, x: &[f64], c: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += h;
            down[i] -= h;
            (linear_loss(net, &up, c) - linear_loss(net, &down, c)) / (2.0 * h)
        })
        .collect()
}

/// Relative error with a small absolute floor so entries that are zero in
/// both estimates do not divide by zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Brute-force Mann-Whitney: `P(member > non-member) + ½·P(tie)`.
pub fn mann_whitney(samples: &[ScoredSample]) -> f64 {
    let members: Vec<f64> = samples
        .iter()
        .filter(|s| s.is_member)
        .map(|s| s.score)
        .collect();
    let others: Vec<f64> = samples
        .iter()
        .filter(|s| !s.is_member)
        .map(|s| s.score)
        .collect();
    let mut wins = 0.0;
    for m in &members {
        for n in &others {
            if m > n {
                wins += 1.0;
            } else if m == n {
                wins += 0.5;
            }
        }
    }
    wins / (members.len() * others.len()) as f64
}

/// ᾱ_t of the evenly spaced β schedule, from scratch.
pub fn linear_alpha_bar(spec: &LinearScheduleSpec, t: usize) -> f64 {
    let mut ab = 1.0;
    for i in 0..t {
        let beta = spec.beta_start
            + (spec.beta_end - spec.beta_start) * i as f64 / (spec.steps - 1) as f64;
        ab *= 1.0 - beta;
    }
    ab
}

/// `−mean ‖ε − ε_θ(√ᾱ_t x0 + √(1−ᾱ_t) ε, t)‖²` over the given probes,
/// evaluated with the oracle forward pass.
pub fn brute_force_loss_score(model: &DiffusionTarget, x0: &Trajectory, probes: &[Probe]) -> f64 {
    let mut flat = Vec::new();
    for p in &x0.points {
        flat.push(p.x);
        flat.push(p.y);
    }
    let t_max = model.schedule_spec.steps;
    let mut total = 0.0;
    for probe in probes {
        let ab = linear_alpha_bar(&model.schedule_spec, probe.timestep);
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut input = Vec::new();
        for j in 0..flat.len() {
            input.push(s * flat[j] + n * probe.noise[j]);
        }
        input.push(probe.timestep as f64 / t_max as f64);
        let pred = straight_line_forward(&model.noise_net, &input);
        let mut sq = 0.0;
        for j in 0..pred.len() {
            sq += (probe.noise[j] - pred[j]) * (probe.noise[j] - pred[j]);
        }
        total += sq;
    }
    -(total / probes.len() as f64)
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    s / n as f64
}

/// The gradient-check matrix: every activation as hidden and output layer,
/// from a single layer up to three hidden layers.
pub fn layer_test_matrix() -> Vec<(Vec<usize>, Vec<Activation>)> {
    use Activation::*;
    let all = [Tanh, Relu, Sigmoid, Identity];
    let mut cases = Vec::new();
    for &a in &all {
        cases.push((vec![3, 2], vec![a]));
        for &b in &all {
            cases.push((vec![4, 5, 3], vec![a, b]));
        }
        cases.push((vec![6, 8, 7, 1], vec![a, a, Sigmoid]));
        cases.push((vec![21, 16, 16, 16, 20], vec![a, a, a, Identity]));
    }
    cases
}

/// Largest relative error between `backward_with_input` and central
/// differences (h = 1e-5), over all parameters and input coordinates,
/// for a seeded random net, input, and upstream gradient.
pub fn max_gradient_error(dims: &[usize], acts: &[Activation], seed: u64) -> f64 {
    use rand::Rng as _;
    let mut rng = trajaudit::rng::rng_from_seed(seed);
    let mut net = Mlp::new(dims, acts, &mut rng).unwrap();
    for l in &mut net.layers {
        for b in &mut l.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..*dims.last().unwrap())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let (grads, dx) = net.backward_with_input(&x, &c).unwrap();
    let fd = finite_difference_params(&net, &x, &c, 1e-5);
    let fd_x = finite_difference_input(&net, &x, &c, 1e-5);
    assert_eq!(fd.len(), grads.values().count());
    grads
        .values()
        .zip(&fd)
        .chain(dx.iter().zip(&fd_x))
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Random labelled scores with M, N ∈ [1, 200]. Every other set draws from a
/// coarse grid so ties across and within classes are common.
pub fn random_scored_set(seed: u64) -> Vec<ScoredSample> {
    use rand::Rng as _;
    let mut rng = trajaudit::rng::rng_from_seed(seed);
    let m = rng.random_range(1..=200usize);
    let n = rng.random_range(1..=200usize);
    let coarse = seed.is_multiple_of(2);
    let shift: f64 = rng.random_range(-0.5..0.5);
    (0..m + n)
        .map(|i| {
            let is_member = i < m;
            let raw: f64 = rng.random_range(-1.0..1.0) + if is_member { shift } else { 0.0 };
            ScoredSample {
                sample_id: format!("s{i:03}"),
                score: if coarse {
                    (raw * 4.0).round() / 4.0
                } else {
                    raw
                },
                is_member,
            }
        })
        .collect()
}
