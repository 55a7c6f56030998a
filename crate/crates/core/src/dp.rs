//! DP-SGD mechanics and a brute-force (ε, δ) checker for finite mechanisms.
//!
//! A mechanism M is (ε, δ)-DP over an adjacency relation when, for every
//! adjacent pair (D, D′) and every output set S,
//! `Pr[M(D) ∈ S] ≤ e^ε · Pr[M(D′) ∈ S] + δ`.
//!
//! No privacy accountant is provided: DP-SGD training here reports its
//! clipping and noise parameters but never claims an ε.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sgd_step, GradientSet, Mlp};
use crate::rng::{rng_from_seed, Rng};

/// Slack on probability comparisons; matches the row-sum tolerance.
pub const PROB_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UnitOfPrivacy {
    /// Adjacent datasets differ by one complete trajectory.
    #[default]
    Instance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Per-example ℓ2 bound C.
    pub clip_norm: f64,
    /// σ; the added noise has standard deviation σ·C.
    pub noise_multiplier: f64,
    #[serde(default)]
    pub unit_of_privacy: UnitOfPrivacy,
}

impl DpConfig {
    pub fn new(clip_norm: f64, noise_multiplier: f64) -> Self {
        Self {
            clip_norm,
            noise_multiplier,
            unit_of_privacy: UnitOfPrivacy::Instance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!(
                "clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "noise multiplier must be non-negative, got {}",
                self.noise_multiplier
            )));
        }
        Ok(())
    }
}

/// Rescales `grads` onto the ℓ2 ball of radius `clip_norm` (global norm
/// over every parameter).
pub fn clip_per_example(grads: &GradientSet, clip_norm: f64) -> Result<GradientSet> {
    if !(clip_norm > 0.0) {
        return Err(Error::Config(format!(
            "clip norm must be positive, got {clip_norm}"
        )));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("gradient has non-finite entries".into()));
    }
    let norm = grads.l2_norm();
    let mut out = grads.clone();
    if norm > clip_norm {
        out.scale(clip_norm / norm);
        // Rounding can leave the norm an ulp above the bound; shave until it
        // is not, so a second clip is an exact no-op.
        while out.l2_norm() > clip_norm {
            out.scale(1.0 - f64::EPSILON);
        }
    }
    Ok(out)
}

/// Clip each example, sum, add `N(0, (σC)² I)`, divide by the batch size.
pub fn privatize_with_rng(
    per_example: &[GradientSet],
    config: &DpConfig,
    rng: &mut Rng,
) -> Result<GradientSet> {
    config.validate()?;
    let (first, rest) = per_example
        .split_first()
        .ok_or_else(|| Error::EmptyInput("DP-SGD batch is empty".into()))?;
    let mut sum = clip_per_example(first, config.clip_norm)?;
    for g in rest {
        sum.add_assign(&clip_per_example(g, config.clip_norm)?)?;
    }
    let std = config.noise_multiplier * config.clip_norm;
    if std > 0.0 {
        for v in sum.values_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += std * z;
        }
    }
    sum.scale(1.0 / per_example.len() as f64);
    Ok(sum)
}

/// One DP-SGD update of `net`, with noise drawn from `seed`.
pub fn dp_sgd_step(
    per_example_grads: &[GradientSet],
    config: &DpConfig,
    lr: f64,
    net: &mut Mlp,
    seed: u64,
) -> Result<()> {
    let grad = privatize_with_rng(per_example_grads, config, &mut rng_from_seed(seed))?;
    sgd_step(net, &grad, lr)
}

/// A finite mechanism as an explicit table `P[output | dataset]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMechanism {
    datasets: Vec<String>,
    outputs: Vec<String>,
    probabilities: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl DiscreteMechanism {
    pub fn new(
        datasets: Vec<String>,
        outputs: Vec<String>,
        probabilities: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if datasets.is_empty() || outputs.is_empty() {
            return Err(Error::Validation(
                "mechanism needs datasets and outputs".into(),
            ));
        }
        if probabilities.len() != datasets.len() {
            return Err(Error::Validation(format!(
                "{} probability rows for {} datasets",
                probabilities.len(),
                datasets.len()
            )));
        }
        for (name, row) in datasets.iter().zip(&probabilities) {
            if row.len() != outputs.len() {
                return Err(Error::Validation(format!(
                    "row for {name} has {} entries, expected {}",
                    row.len(),
                    outputs.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Validation(format!(
                    "row for {name} has a probability outside [0, 1]"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOLERANCE {
                return Err(Error::Validation(format!("row for {name} sums to {total}")));
            }
        }
        let mut index = HashMap::new();
        for (i, d) in datasets.iter().enumerate() {
            if index.insert(d.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate dataset {d}")));
            }
        }
        Ok(Self {
            datasets,
            outputs,
            probabilities,
            index,
        })
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn row(&self, dataset: &str) -> Result<&[f64]> {
        self.index
            .get(dataset)
            .map(|&i| self.probabilities[i].as_slice())
            .ok_or_else(|| Error::Validation(format!("unknown dataset {dataset}")))
    }

    /// Binary randomized response: reports the true bit with probability
    /// `1 − flip`.
    pub fn randomized_response(flip: f64) -> Result<Self> {
        Self::new(
            vec!["0".into(), "1".into()],
            vec!["0".into(), "1".into()],
            vec![vec![1.0 - flip, flip], vec![flip, 1.0 - flip]],
        )
    }

    /// Outputs its input exactly.
    pub fn identity(datasets: &[&str]) -> Result<Self> {
        let n = datasets.len();
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let names: Vec<String> = datasets.iter().map(|s| s.to_string()).collect();
        Self::new(names.clone(), names, rows)
    }

    /// The same output distribution regardless of input.
    pub fn constant(datasets: &[&str], distribution: &[f64]) -> Result<Self> {
        let outputs = (0..distribution.len()).map(|i| format!("o{i}")).collect();
        Self::new(
            datasets.iter().map(|s| s.to_string()).collect(),
            outputs,
            vec![distribution.to_vec(); datasets.len()],
        )
    }
}

/// A violating adjacent pair and output set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub dataset: String,
    pub neighbor: String,
    pub outputs: Vec<String>,
    /// `Pr[M(D) ∈ S] − e^ε·Pr[M(D′) ∈ S]`, which exceeds δ.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Violated(Witness),
}

impl Verdict {
    pub fn holds(&self) -> bool {
        matches!(self, Verdict::Holds)
    }
}

fn check_params(epsilon: f64, delta: f64) -> Result<f64> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Config(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Config(format!(
            "delta must be in [0, 1], got {delta}"
        )));
    }
    Ok(epsilon.exp())
}

/// Both orientations of every listed pair.
fn directed_pairs(adjacency: &[(String, String)]) -> impl Iterator<Item = (&str, &str)> {
    adjacency
        .iter()
        .flat_map(|(a, b)| [(a.as_str(), b.as_str()), (b.as_str(), a.as_str())])
}

/// Checks (ε, δ)-DP using the tight per-pair quantity
/// `Σ_o max(P[o|D] − e^ε·P[o|D′], 0)`, whose maximizing set
/// `S* = {o : P[o|D] > e^ε·P[o|D′]}` is returned as the witness.
pub fn verify_dp(
    mech: &DiscreteMechanism,
    adjacency: &[(String, String)],
    epsilon: f64,
    delta: f64,
) -> Result<Verdict> {
    let e_eps = check_params(epsilon, delta)?;
    for (d, d2) in directed_pairs(adjacency) {
        let (p, q) = (mech.row(d)?, mech.row(d2)?);
        let mut excess = 0.0;
        let mut set = Vec::new();
        for (o, (pi, qi)) in p.iter().zip(q).enumerate() {
            let gap = pi - e_eps * qi;
            if gap > 0.0 {
                excess += gap;
                set.push(mech.outputs[o].clone());
            }
        }
        if excess > delta + PROB_TOLERANCE {
            return Ok(Verdict::Violated(Witness {
                dataset: d.to_string(),
                neighbor: d2.to_string(),
                outputs: set,
                excess,
            }));
        }
    }
    Ok(Verdict::Holds)
}

/// Outputs above which subset enumeration is refused.
pub const MAX_ENUMERATED_OUTPUTS: usize = 20;

/// Checks (ε, δ)-DP by enumerating every non-empty output subset of every
/// directed adjacent pair. Exponential in the number of outputs.
pub fn verify_dp_exhaustive(
    mech: &DiscreteMechanism,
    adjacency: &[(String, String)],
    epsilon: f64,
    delta: f64,
) -> Result<Verdict> {
    let e_eps = check_params(epsilon, delta)?;
    let k = mech.outputs.len();
    if k > MAX_ENUMERATED_OUTPUTS {
        return Err(Error::Config(format!(
            "{k} outputs is too many to enumerate (limit {MAX_ENUMERATED_OUTPUTS})"
        )));
    }
    for (d, d2) in directed_pairs(adjacency) {
        let (p, q) = (mech.row(d)?, mech.row(d2)?);
        for mask in 1u32..(1u32 << k) {
            let (mut ps, mut qs) = (0.0, 0.0);
            for o in (0..k).filter(|o| mask & (1 << o) != 0) {
                ps += p[o];
                qs += q[o];
            }
            let excess = ps - e_eps * qs;
            if excess > delta + PROB_TOLERANCE {
                return Ok(Verdict::Violated(Witness {
                    dataset: d.to_string(),
                    neighbor: d2.to_string(),
                    outputs: (0..k)
                        .filter(|o| mask & (1 << o) != 0)
                        .map(|o| mech.outputs[o].clone())
                        .collect(),
                    excess,
                }));
            }
        }
    }
    Ok(Verdict::Holds)
}

/// Mechanism specification file.
///
/// ```json
/// {
///   "datasets": [{"name": "D0", "records": ["a"]}, {"name": "D1", "records": ["a", "b"]}],
///   "outputs": ["yes", "no"],
///   "probabilities": [[0.75, 0.25], [0.25, 0.75]],
///   "adjacency": "remove-one"
/// }
/// ```
///
/// `adjacency` is `"remove-one"`, `"replace-one"`, or an explicit list of
/// dataset-name pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MechanismFile {
    pub datasets: Vec<DatasetSpec>,
    pub outputs: Vec<String>,
    pub probabilities: Vec<Vec<f64>>,
    pub adjacency: AdjacencySpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    /// Multiset over a small record alphabet.
    #[serde(default)]
    pub records: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdjacencySpec {
    Rule(AdjacencyRule),
    Pairs(Vec<(String, String)>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdjacencyRule {
    RemoveOne,
    ReplaceOne,
}

fn multiset(records: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for r in records {
        *m.entry(r.as_str()).or_insert(0) += 1;
    }
    m
}

/// `(added, removed)` record counts turning `a` into `b`.
fn multiset_distance(a: &[String], b: &[String]) -> (usize, usize) {
    let (ma, mb) = (multiset(a), multiset(b));
    let mut added = 0;
    let mut removed = 0;
    for (k, &ca) in &ma {
        removed += ca.saturating_sub(*mb.get(k).unwrap_or(&0));
    }
    for (k, &cb) in &mb {
        added += cb.saturating_sub(*ma.get(k).unwrap_or(&0));
    }
    (added, removed)
}

/// Unordered adjacent pairs under a rule, in dataset order.
pub fn derive_adjacency(datasets: &[DatasetSpec], rule: AdjacencyRule) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    for (i, a) in datasets.iter().enumerate() {
        for b in &datasets[i + 1..] {
            let dist = multiset_distance(&a.records, &b.records);
            let adjacent = match rule {
                AdjacencyRule::RemoveOne => matches!(dist, (1, 0) | (0, 1)),
                AdjacencyRule::ReplaceOne => dist == (1, 1),
            };
            if adjacent {
                pairs.push((a.name.clone(), b.name.clone()));
            }
        }
    }
    pairs
}

impl MechanismFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Validates the table and resolves the adjacency list.
    pub fn into_parts(self) -> Result<(DiscreteMechanism, Vec<(String, String)>)> {
        let adjacency = match &self.adjacency {
            AdjacencySpec::Rule(rule) => derive_adjacency(&self.datasets, *rule),
            AdjacencySpec::Pairs(pairs) => pairs.clone(),
        };
        let names = self.datasets.into_iter().map(|d| d.name).collect();
        let mech = DiscreteMechanism::new(names, self.outputs, self.probabilities)?;
        for (a, b) in &adjacency {
            mech.row(a)?;
            mech.row(b)?;
        }
        Ok((mech, adjacency))
    }
}
