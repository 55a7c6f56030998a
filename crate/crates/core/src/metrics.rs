//! ROC curves, AUC and TPR at fixed FPR over scored samples.
//!
//! Thresholds sweep the distinct scores in descending order; all samples
//! sharing a score cross the threshold together. Under that rule the
//! trapezoidal area equals the Mann-Whitney statistic with ties counted as
//! one half, and a constant scorer gets exactly 0.5.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::ScoredSample;
use crate::error::{Error, Result};

/// FPR targets reported in [`AuditMetrics`].
pub const REPORTED_FPRS: [f64; 2] = [0.1, 0.01];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores `>= threshold` are called members. `+∞` at the origin.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

/// `(threshold, true positives, false positives)` after each distinct
/// threshold.
type Steps = Vec<(f64, u64, u64)>;

/// Cumulative counts after each distinct threshold, starting from (0, 0),
/// plus the class totals.
fn sweep(samples: &[ScoredSample]) -> Result<(Steps, u64, u64)> {
    let positives = samples.iter().filter(|s| s.is_member).count() as u64;
    let negatives = samples.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::ClassMissing {
            members: positives as usize,
            non_members: negatives as usize,
        });
    }
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::Numeric(format!(
            "score for {} is not finite",
            s.sample_id
        )));
    }
    let mut sorted: Vec<&ScoredSample> = samples.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut steps = vec![(f64::INFINITY, 0u64, 0u64)];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        while i < sorted.len() && sorted[i].score == threshold {
            if sorted[i].is_member {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((threshold, tp, fp));
    }
    Ok((steps, positives, negatives))
}

pub fn roc_curve(samples: &[ScoredSample]) -> Result<RocCurve> {
    let (steps, pos, neg) = sweep(samples)?;
    let points = steps
        .into_iter()
        .map(|(threshold, tp, fp)| RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        })
        .collect();
    Ok(RocCurve { points })
}

/// Area under the tie-grouped ROC curve. The trapezoid sum is carried out
/// on integer counts and divided once, so the result is the exact
/// Mann-Whitney fraction rounded to `f64`.
pub fn auc(samples: &[ScoredSample]) -> Result<f64> {
    let (steps, pos, neg) = sweep(samples)?;
    let twice_area: u128 = steps
        .windows(2)
        .map(|w| {
            let (_, tp0, fp0) = w[0];
            let (_, tp1, fp1) = w[1];
            u128::from(fp1 - fp0) * u128::from(tp1 + tp0)
        })
        .sum();
    Ok(twice_area as f64 / (2 * u128::from(pos) * u128::from(neg)) as f64)
}

impl RocCurve {
    /// Trapezoidal area computed from the floating-point curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum()
    }

    /// `threshold,fpr,tpr` rows in sweep order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Highest TPR reachable without exceeding `target_fpr`, read off the last
/// curve point at or below it (no interpolation between thresholds).
pub fn tpr_at_fpr(curve: &RocCurve, target_fpr: f64) -> f64 {
    curve
        .points
        .iter()
        .take_while(|p| p.fpr <= target_fpr)
        .last()
        .map_or(0.0, |p| p.tpr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub target_fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditMetrics {
    pub auc: f64,
    pub tpr_at_fpr: Vec<TprAtFpr>,
    pub n_members: usize,
    pub n_non_members: usize,
}

pub fn audit_metrics(samples: &[ScoredSample]) -> Result<(AuditMetrics, RocCurve)> {
    let curve = roc_curve(samples)?;
    let n_members = samples.iter().filter(|s| s.is_member).count();
    let metrics = AuditMetrics {
        auc: auc(samples)?,
        tpr_at_fpr: REPORTED_FPRS
            .iter()
            .map(|&f| TprAtFpr {
                target_fpr: f,
                tpr: tpr_at_fpr(&curve, f),
            })
            .collect(),
        n_members,
        n_non_members: samples.len() - n_members,
    };
    Ok((metrics, curve))
}
