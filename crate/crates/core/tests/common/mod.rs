//! Helpers shared by integration test targets.
#![allow(dead_code)]

pub mod gradcheck;

use aerothreat::evaluation::{Averages, ClassificationReport, ReportRow};
use rand::Rng;

/// Recomputes a classification report by scanning the label pairs
/// directly, without a confusion matrix.
pub fn recount(truth: &[usize], pred: &[usize], labels: &[String]) -> ClassificationReport {
    let n = truth.len();
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut rows = Vec::new();
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for (k, label) in labels.iter().enumerate() {
        let mut tp = 0;
        let mut support = 0;
        let mut predicted = 0;
        for (&t, &p) in truth.iter().zip(pred) {
            tp += usize::from(t == k && p == k);
            support += usize::from(t == k);
            predicted += usize::from(p == k);
        }
        let precision = div(tp, predicted);
        let recall = div(tp, support);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        if predicted > 0 {
            wp += (support as f64 * tp as f64) / predicted as f64;
        }
        if support > 0 {
            wr += (support as f64 * tp as f64) / support as f64;
        }
        wf += support as f64 * f1;
        rows.push(ReportRow { label: label.clone(), precision, recall, f1, support });
    }
    let m = labels.len() as f64;
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    ClassificationReport {
        accuracy: correct as f64 / n as f64,
        macro_avg: Averages {
            precision: rows.iter().map(|r| r.precision).sum::<f64>() / m,
            recall: rows.iter().map(|r| r.recall).sum::<f64>() / m,
            f1: rows.iter().map(|r| r.f1).sum::<f64>() / m,
        },
        weighted_avg: Averages { precision: wp / n as f64, recall: wr / n as f64, f1: wf / n as f64 },
        total_support: n,
        rows,
    }
}

/// A random labelling problem with at most `max_labels` labels and
/// `max_samples` samples.
pub fn random_instance(rng: &mut impl Rng, max_labels: usize, max_samples: usize) -> (Vec<String>, Vec<usize>, Vec<usize>) {
    let k = rng.random_range(1..=max_labels);
    let n = rng.random_range(1..=max_samples);
    let labels = (0..k).map(|i| format!("L{i}")).collect();
    let truth = (0..n).map(|_| rng.random_range(0..k)).collect();
    let pred = (0..n).map(|_| rng.random_range(0..k)).collect();
    (labels, truth, pred)
}
