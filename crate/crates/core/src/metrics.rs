//! ROC analysis for membership scores. Positives are members; every score
//! follows the member-is-larger convention.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default FPR levels for `EvalReport::tpr_at`.
pub const DEFAULT_FPR_LEVELS: [f64; 2] = [0.25, 0.05];

/// One realized operating point: everything scoring `>= threshold` is called a member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_positive: usize,
    pub n_negative: usize,
}

impl RocCurve {
    /// `fpr,tpr,threshold` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr,threshold\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_f64(p.fpr),
                fmt_f64(p.tpr),
                fmt_f64(p.threshold)
            ));
        }
        out
    }
}

/// 17 significant digits, round-trips exactly through `str::parse`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn validate(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Misaligned(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(Error::SingleClass("nonmembers"));
    }
    if neg == 0 {
        return Err(Error::SingleClass("members"));
    }
    Ok((pos, neg))
}

/// Threshold sweep over distinct scores, descending. Tied scores cross the
/// threshold together. Starts at (0, 0) with threshold `+inf`.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (n_pos, n_neg) = validate(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
        true_positives: 0,
        false_positives: 0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
            true_positives: tp,
            false_positives: fp,
        });
    }
    Ok(RocCurve {
        points,
        n_positive: n_pos,
        n_negative: n_neg,
    })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    let area2: f64 = curve
        .points
        .windows(2)
        .map(|w| {
            let dfp = (w[1].false_positives - w[0].false_positives) as f64;
            dfp * (w[1].true_positives + w[0].true_positives) as f64
        })
        .sum();
    area2 / (2.0 * curve.n_positive as f64 * curve.n_negative as f64)
}

/// Highest TPR among realized operating points with FPR <= `fpr_level`.
pub fn tpr_at_fpr(curve: &RocCurve, fpr_level: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.fpr <= fpr_level)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}

/// Best `(TP + TN) / total` over all thresholds (including "nobody is a member").
pub fn best_accuracy(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = roc(scores, labels)?;
    let total = (curve.n_positive + curve.n_negative) as f64;
    Ok(curve
        .points
        .iter()
        .map(|p| (p.true_positives + curve.n_negative - p.false_positives) as f64 / total)
        .fold(0.0, f64::max))
}

/// `(v - mean) / std` with the population standard deviation.
pub fn zscore(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("cannot z-score an empty column"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::ZeroVariance("values".into()));
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// `sign(x) * ln(|x| + 1)`.
pub fn log_modulus(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub attack: String,
    pub auc: f64,
    /// Keyed by the FPR level formatted with `fmt_fpr_key`.
    pub tpr_at: BTreeMap<String, f64>,
    pub best_accuracy: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
}

pub fn fmt_fpr_key(level: f64) -> String {
    format!("{level}")
}

/// Full report for one score column.
pub fn evaluate(
    attack: &str,
    scores: &[f64],
    labels: &[bool],
    fpr_levels: &[f64],
) -> Result<(EvalReport, RocCurve)> {
    let curve = roc(scores, labels)?;
    let report = EvalReport {
        attack: attack.to_string(),
        auc: auc(&curve),
        tpr_at: fpr_levels
            .iter()
            .map(|&l| (fmt_fpr_key(l), tpr_at_fpr(&curve, l)))
            .collect(),
        best_accuracy: best_accuracy(scores, labels)?,
        n_members: curve.n_positive,
        n_nonmembers: curve.n_negative,
    };
    Ok((report, curve))
}
