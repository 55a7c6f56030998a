use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ExperimentConfig;
use crate::attacks::{AttackKind, ScoredSample};
use crate::dp::{DpConfig, UnitOfPrivacy};
use crate::error::Result;
use crate::metrics::{audit_metrics, AuditMetrics};
use crate::targets::{Family, Target};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl ScoreSummary {
    fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            count: n,
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSummaries {
    pub members: ScoreSummary,
    pub non_members: ScoreSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    /// `discriminator-bce` or `noise-mse`.
    pub loss: String,
    pub dataset_size: usize,
    pub epochs: usize,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
    pub min_epoch_loss: f64,
}

/// DP-SGD parameters as run. `epsilon` is always `null`: no accountant is
/// applied, so no formal guarantee is claimed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSummary {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub unit_of_privacy: UnitOfPrivacy,
    pub steps: usize,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub toolkit_version: String,
    pub experiment: Option<String>,
    pub family: Option<Family>,
    pub attack: Option<AttackKind>,
    pub metrics: AuditMetrics,
    pub score_summary: ClassSummaries,
    pub training: Option<TrainingSummary>,
    pub dp: Option<DpSummary>,
    pub scores_csv: String,
    pub roc_csv: String,
    pub notes: Vec<String>,
    pub config: Option<ExperimentConfig>,
    pub wall_clock_seconds: f64,
}

impl AuditReport {
    /// The report with run-dependent timing zeroed, for reproducibility
    /// checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_seconds: 0.0,
            ..self.clone()
        }
    }
}

const NOTE_CONSTRUCTED: &str =
    "Regimes are constructed desk-scale stand-ins (small MLP targets on synthetic \
     anchor-attracted walks), not replications of published target models.";
const NOTE_SAME_DISTRIBUTION: &str =
    "Members and non-members are drawn from the same synthetic distribution.";
const NOTE_NO_EPSILON: &str = "DP-SGD clipping and noise were applied; no privacy accountant is run, so no epsilon is claimed.";

fn training_summary(target: &Target) -> Option<TrainingSummary> {
    let (loss, trace): (&str, &[f64]) = match target {
        Target::Gan(g) => ("discriminator-bce", &g.loss_trace.discriminator),
        Target::Diffusion(d) => ("noise-mse", &d.loss_trace),
    };
    let first = *trace.first()?;
    Some(TrainingSummary {
        loss: loss.into(),
        dataset_size: target.dataset_size(),
        epochs: trace.len(),
        first_epoch_loss: first,
        final_epoch_loss: *trace.last()?,
        min_epoch_loss: trace.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

fn dp_summary(dp: &DpConfig, target: &Target) -> DpSummary {
    let cfg = target.train_config();
    let n = target.dataset_size();
    DpSummary {
        clip_norm: dp.clip_norm,
        noise_multiplier: dp.noise_multiplier,
        unit_of_privacy: dp.unit_of_privacy,
        steps: cfg.epochs * n.div_ceil(cfg.batch_size),
        batch_size: cfg.batch_size,
        dataset_size: n,
        epsilon: None,
    }
}

pub(super) fn build(
    config: Option<&ExperimentConfig>,
    target: Option<&Target>,
    scores: &[ScoredSample],
    wall_clock_seconds: f64,
) -> Result<AuditReport> {
    let (metrics, _) = audit_metrics(scores)?;
    let pick = |member: bool| -> Vec<f64> {
        scores
            .iter()
            .filter(|s| s.is_member == member)
            .map(|s| s.score)
            .collect()
    };
    let dp = target.and_then(|t| t.train_config().dp.as_ref().map(|dp| dp_summary(dp, t)));
    let mut notes = Vec::new();
    if matches!(
        config.map(|c| &c.data),
        Some(super::DataSource::Synthetic { .. })
    ) {
        notes.push(NOTE_CONSTRUCTED.to_string());
        notes.push(NOTE_SAME_DISTRIBUTION.to_string());
    }
    if dp.is_some() {
        notes.push(NOTE_NO_EPSILON.to_string());
    }
    Ok(AuditReport {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: config.map(|c| c.name.clone()),
        family: target.map(Target::family).or(config.map(|c| c.family)),
        attack: config.map(|c| c.attack.kind),
        metrics,
        score_summary: ClassSummaries {
            members: ScoreSummary::of(&pick(true)),
            non_members: ScoreSummary::of(&pick(false)),
        },
        training: target.and_then(training_summary),
        dp,
        scores_csv: super::SCORES_FILE.to_string(),
        roc_csv: super::ROC_FILE.to_string(),
        notes,
        config: config.cloned(),
        wall_clock_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDiff {
    /// Dotted path into the config JSON.
    pub path: String,
    pub a: Value,
    pub b: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreShift {
    pub mean_delta: f64,
    pub std_delta: f64,
}

impl ScoreShift {
    fn between(a: &ScoreSummary, b: &ScoreSummary) -> Self {
        Self {
            mean_delta: b.mean - a.mean,
            std_delta: b.std - a.std,
        }
    }

    fn is_zero(&self) -> bool {
        self.mean_delta == 0.0 && self.std_delta == 0.0
    }
}

/// Differences from report `a` to report `b` (deltas are `b − a`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDiff {
    pub auc_a: f64,
    pub auc_b: f64,
    pub auc_delta: f64,
    pub family_mismatch: bool,
    pub config_diffs: Vec<FieldDiff>,
    pub members_shift: ScoreShift,
    pub non_members_shift: ScoreShift,
    /// Change in the member-minus-non-member mean score gap.
    pub separation_delta: f64,
}

impl ReportDiff {
    pub fn is_empty(&self) -> bool {
        self.auc_delta == 0.0
            && !self.family_mismatch
            && self.config_diffs.is_empty()
            && self.members_shift.is_zero()
            && self.non_members_shift.is_zero()
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&path, child, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

fn config_diffs(a: Option<&ExperimentConfig>, b: Option<&ExperimentConfig>) -> Vec<FieldDiff> {
    let to_flat = |c: Option<&ExperimentConfig>| {
        let mut out = Vec::new();
        if let Some(c) = c {
            let v = serde_json::to_value(c).unwrap_or(Value::Null);
            flatten("", &v, &mut out);
        }
        out
    };
    let fa = to_flat(a);
    let fb = to_flat(b);
    let lookup = |flat: &[(String, Value)], key: &str| {
        flat.iter()
            .find(|(k, _)| k == key)
            .map_or(Value::Null, |(_, v)| v.clone())
    };
    let mut keys: Vec<&String> = fa.iter().chain(&fb).map(|(k, _)| k).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter_map(|k| {
            let (va, vb) = (lookup(&fa, k), lookup(&fb, k));
            (va != vb).then(|| FieldDiff {
                path: k.clone(),
                a: va,
                b: vb,
            })
        })
        .collect()
}

pub fn compare_reports(a: &AuditReport, b: &AuditReport) -> ReportDiff {
    let sa = &a.score_summary;
    let sb = &b.score_summary;
    ReportDiff {
        auc_a: a.metrics.auc,
        auc_b: b.metrics.auc,
        auc_delta: b.metrics.auc - a.metrics.auc,
        family_mismatch: a.family != b.family,
        config_diffs: config_diffs(a.config.as_ref(), b.config.as_ref()),
        members_shift: ScoreShift::between(&sa.members, &sb.members),
        non_members_shift: ScoreShift::between(&sa.non_members, &sb.non_members),
        separation_delta: (sb.members.mean - sb.non_members.mean)
            - (sa.members.mean - sa.non_members.mean),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::preset;

    fn scored(m: &[f64], n: &[f64]) -> Vec<ScoredSample> {
        m.iter()
            .map(|&s| (s, true))
            .chain(n.iter().map(|&s| (s, false)))
            .enumerate()
            .map(|(i, (score, is_member))| ScoredSample {
                sample_id: format!("s{i}"),
                score,
                is_member,
            })
            .collect()
    }

    #[test]
    fn report_vs_itself_is_empty() {
        let cfg = preset("leaky-gan").unwrap();
        let r = build(Some(&cfg), None, &scored(&[1.0, 2.0], &[0.0, 1.5]), 3.0).unwrap();
        let d = compare_reports(&r, &r);
        assert!(d.is_empty());
        assert_eq!(d.auc_delta, 0.0);
    }

    #[test]
    fn family_mismatch_still_compares_metrics() {
        let a = build(
            Some(&preset("leaky-gan").unwrap()),
            None,
            &scored(&[1.0, 2.0], &[0.0, 1.5]),
            0.0,
        )
        .unwrap();
        let b = build(
            Some(&preset("leaky-diffusion").unwrap()),
            None,
            &scored(&[1.0], &[2.0]),
            0.0,
        )
        .unwrap();
        let d = compare_reports(&a, &b);
        assert!(d.family_mismatch);
        assert!(!d.is_empty());
        assert_eq!(d.auc_delta, 0.0 - 0.75);
        assert!(d.config_diffs.iter().any(|f| f.path == "family"));
    }

    #[test]
    fn summaries_are_per_class() {
        let r = build(None, None, &scored(&[1.0, 3.0], &[-1.0]), 0.0).unwrap();
        assert_eq!(r.score_summary.members.mean, 2.0);
        assert_eq!(r.score_summary.members.min, 1.0);
        assert_eq!(r.score_summary.members.max, 3.0);
        assert!((r.score_summary.members.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.score_summary.non_members.std, 0.0);
        assert!(r.config.is_none() && r.notes.is_empty());
    }
}
