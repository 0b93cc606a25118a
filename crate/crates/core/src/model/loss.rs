use serde::{Deserialize, Serialize};

use super::ForwardResult;
use crate::error::{Error, Result};

/// Probability floor applied before taking logarithms.
pub const CE_EPSILON: f64 = 1e-12;

/// Numerically stable softmax: `exp(z_i − max z) / Σ_j exp(z_j − max z)`.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::validation("softmax of an empty row"));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logits {logits:?}")));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log(max(p_t, ε))` where `t` is the hot index of `target`.
pub fn categorical_cross_entropy(probs: &[f64], target: &[f64]) -> Result<f64> {
    if probs.len() != target.len() {
        return Err(Error::validation(format!(
            "probability row has width {} but target has width {}",
            probs.len(),
            target.len()
        )));
    }
    let hot = one_hot_index(target)?;
    Ok(cross_entropy_at(probs, hot))
}

pub(crate) fn cross_entropy_at(probs: &[f64], index: usize) -> f64 {
    -probs[index].max(CE_EPSILON).ln()
}

fn one_hot_index(target: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &t) in target.iter().enumerate() {
        if t == 1.0 && hot.is_none() {
            hot = Some(i);
        } else if t != 0.0 {
            return Err(Error::validation(format!("target {target:?} is not one-hot")));
        }
    }
    hot.ok_or_else(|| Error::validation(format!("target {target:?} is not one-hot")))
}

pub fn one_hot(index: usize, width: usize) -> Vec<f64> {
    let mut v = vec![0.0; width];
    v[index] = 1.0;
    v
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-head loss weights `(w_class, w_threat)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub class: f64,
    pub threat: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { class: 1.0, threat: 1.0 }
    }
}

impl LossWeights {
    pub fn new(class: f64, threat: f64) -> Self {
        Self { class, threat }
    }
}

/// Per-head mean cross-entropy over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadLosses {
    pub class: f64,
    pub threat: f64,
}

impl HeadLosses {
    pub fn weighted(&self, w: LossWeights) -> f64 {
        w.class * self.class + w.threat * self.threat
    }
}

pub(crate) fn check_targets(
    result: &ForwardResult,
    class_targets: &[usize],
    threat_targets: &[usize],
) -> Result<()> {
    let b = result.batch_size();
    if class_targets.len() != b || threat_targets.len() != b {
        return Err(Error::validation(format!(
            "batch of {b} rows but {} class / {} threat targets",
            class_targets.len(),
            threat_targets.len()
        )));
    }
    let k = result.class_probs.shape()[1];
    if let Some(t) = class_targets.iter().find(|&&t| t >= k) {
        return Err(Error::validation(format!("class target {t} outside 0..{k}")));
    }
    if let Some(t) = threat_targets.iter().find(|&&t| t >= 3) {
        return Err(Error::validation(format!("threat target {t} outside 0..3")));
    }
    Ok(())
}

pub fn head_losses(
    result: &ForwardResult,
    class_targets: &[usize],
    threat_targets: &[usize],
) -> Result<HeadLosses> {
    check_targets(result, class_targets, threat_targets)?;
    let b = result.batch_size() as f64;
    let class: f64 = class_targets
        .iter()
        .enumerate()
        .map(|(i, &t)| cross_entropy_at(result.class_probs.row(i), t))
        .sum();
    let threat: f64 = threat_targets
        .iter()
        .enumerate()
        .map(|(i, &t)| cross_entropy_at(result.threat_probs.row(i), t))
        .sum();
    Ok(HeadLosses {
        class: class / b,
        threat: threat / b,
    })
}

/// `w_c · mean CE(class) + w_t · mean CE(threat)`.
pub fn total_loss(
    result: &ForwardResult,
    class_targets: &[usize],
    threat_targets: &[usize],
    weights: LossWeights,
) -> Result<f64> {
    Ok(head_losses(result, class_targets, threat_targets)?.weighted(weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_and_shift_invariant() {
        assert_eq!(softmax(&[0.0; 4]).unwrap(), vec![0.25; 4]);
        for c in [-1e3, -3.5, 0.0, 7.25, 1e3] {
            let p = softmax(&[c, c, c]).unwrap();
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    /// Reference values from a 50-digit evaluation of e/(e+3) and 1/(e+3).
    #[test]
    fn softmax_matches_high_precision_reference() {
        let p = softmax(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let hot = 0.475_366_886_418_671_7_f64;
        let cold = 0.174_877_704_527_109_44_f64;
        assert!((p[0] - hot).abs() < 1e-15, "{}", p[0]);
        for v in &p[1..] {
            assert!((v - cold).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax(&[0.0, f64::NAN]), Err(Error::Numeric(_))));
        assert!(matches!(softmax(&[f64::INFINITY]), Err(Error::Numeric(_))));
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(categorical_cross_entropy(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        let ce4 = categorical_cross_entropy(&[0.25; 4], &one_hot(2, 4)).unwrap();
        assert!((ce4 - 4f64.ln()).abs() < 1e-12 && (ce4 - 1.386294).abs() < 1e-6);
        let ce3 = categorical_cross_entropy(&[1.0 / 3.0; 3], &one_hot(0, 3)).unwrap();
        assert!((ce3 - 1.098612).abs() < 1e-6);
        let floored = categorical_cross_entropy(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((floored - (-(1e-12f64).ln())).abs() < 1e-9);
        assert!(categorical_cross_entropy(&[0.5, 0.5], &[1.0, 0.0, 0.0]).is_err());
        assert!(categorical_cross_entropy(&[0.5, 0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }
}
