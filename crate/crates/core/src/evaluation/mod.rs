//! Confusion matrices, per-label classification reports and their export.

mod plot;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DualHeadNetwork;
use crate::training::{score, LabeledImages};
use crate::types::ThreatLevel;

pub use plot::{plot_accuracy_curves, plot_loss_curves};

/// Which output head is being evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Category,
    Threat,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::Category => "category",
            Head::Threat => "threat",
        }
    }
}

impl std::str::FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "category" | "class" => Ok(Head::Category),
            "threat" => Ok(Head::Threat),
            other => Err(Error::validation(format!("unknown head {other:?}"))),
        }
    }
}

/// Threat-level labels as printed in reports.
pub fn threat_labels() -> Vec<String> {
    ThreatLevel::ALL
        .iter()
        .map(|l| l.report_label().to_string())
        .collect()
}

/// `counts[i][j]` = samples with true label `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    /// Builds a matrix from label indices into `labels`.
    pub fn from_indices(labels: Vec<String>, truth: &[usize], pred: &[usize]) -> Result<Self> {
        check_labels(&labels)?;
        if truth.len() != pred.len() {
            return Err(Error::validation(format!(
                "{} true labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let n = labels.len();
        let mut counts = vec![vec![0; n]; n];
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= n || p >= n {
                return Err(Error::validation(format!(
                    "label index {} out of range for {n} labels",
                    t.max(p)
                )));
            }
            counts[t][p] += 1;
        }
        Ok(Self { labels, counts })
    }

    /// Builds a matrix from explicit counts.
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<usize>>) -> Result<Self> {
        check_labels(&labels)?;
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::validation("confusion counts must be square and match the labels"));
        }
        Ok(Self { labels, counts })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<usize>] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Row sum: number of samples whose true label is `i`.
    pub fn support(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }

    /// Column sum: number of samples predicted as `j`.
    pub fn predicted(&self, j: usize) -> usize {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// CSV with a header row of predicted labels and one row per true label.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\pred");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format { what: "confusion matrix CSV", message: m };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let labels: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut counts = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let label = cells.next().unwrap_or_default();
            if labels.get(i).map(String::as_str) != Some(label) {
                return Err(bad(format!("row {} is labelled {label:?}", i + 1)));
            }
            let row = cells
                .map(|c| c.trim().parse::<usize>().map_err(|e| bad(format!("{c:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            counts.push(row);
        }
        Self::from_counts(labels, counts)
    }
}

fn check_labels(labels: &[String]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::validation("a confusion matrix needs at least one label"));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
        return Err(Error::validation(format!("duplicate label {dup:?}")));
    }
    Ok(())
}

/// Tallies `(truth, pred)` label pairs. Matrix order follows `labels`.
pub fn confusion_matrix<S: AsRef<str>>(
    truth: &[S],
    pred: &[S],
    labels: &[S],
) -> Result<ConfusionMatrix> {
    let labels: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let lookup = |values: &[S]| -> Result<Vec<usize>> {
        values
            .iter()
            .map(|v| {
                index.get(v.as_ref()).copied().ok_or_else(|| {
                    Error::validation(format!("label {:?} is not one of {labels:?}", v.as_ref()))
                })
            })
            .collect()
    };
    let (t, p) = (lookup(truth)?, lookup(pred)?);
    ConfusionMatrix::from_indices(labels.clone(), &t, &p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub rows: Vec<ReportRow>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total_support: usize,
}

/// `num / den`, or 0 when `den` is 0.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Support-weighted contribution of `num / den`, computed as
/// `(support · num) / den` so that the weighted recall term reduces to an
/// exact integer and weighted recall equals accuracy bit for bit.
fn weighted_term(support: usize, num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        (support as f64 * num as f64) / den as f64
    }
}

/// Per-label precision, recall and F1 with macro and support-weighted
/// averages. Undefined ratios count as 0.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::validation("cannot report on an empty confusion matrix"));
    }
    let n = cm.labels.len();
    let mut rows = Vec::with_capacity(n);
    let (mut wp, mut wr, mut wf) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let tp = cm.counts[i][i];
        let support = cm.support(i);
        let predicted = cm.predicted(i);
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = f1_score(precision, recall);
        wp += weighted_term(support, tp, predicted);
        wr += weighted_term(support, tp, support);
        wf += support as f64 * f1;
        rows.push(ReportRow {
            label: cm.labels[i].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let mean = |f: fn(&ReportRow) -> f64| rows.iter().map(f).sum::<f64>() / n as f64;
    let macro_avg = Averages {
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
    };
    let t = total as f64;
    Ok(ClassificationReport {
        accuracy: cm.trace() as f64 / t,
        macro_avg,
        weighted_avg: Averages {
            precision: wp / t,
            recall: wr / t,
            f1: wf / t,
        },
        total_support: total,
        rows,
    })
}

impl ClassificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            what: "classification report",
            message: e.to_string(),
        })
    }

    /// Fixed-width table: one row per label, then Accuracy, Macro Avg and
    /// Weighted Avg. Values are rounded to two decimals for display only.
    pub fn to_text(&self, title: &str) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.chars().count())
            .chain([title.chars().count(), "Weighted Avg".len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{title:<width$}  {:>9}  {:>9}  {:>9}  {:>9}",
            "Precision", "Recall", "F1-Score", "Support"
        );
        let line = |out: &mut String, name: &str, p: String, r: String, f: String, s: usize| {
            let _ = writeln!(out, "{name:<width$}  {p:>9}  {r:>9}  {f:>9}  {s:>9}");
        };
        for row in &self.rows {
            line(&mut out, &row.label, fmt2(row.precision), fmt2(row.recall), fmt2(row.f1), row.support);
        }
        line(&mut out, "Accuracy", "-".into(), "-".into(), fmt2(self.accuracy), self.total_support);
        for (name, avg) in [("Macro Avg", self.macro_avg), ("Weighted Avg", self.weighted_avg)] {
            line(&mut out, name, fmt2(avg.precision), fmt2(avg.recall), fmt2(avg.f1), self.total_support);
        }
        out
    }
}

/// Two-decimal display. The conversion is exact-decimal with ties to even.
pub fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

/// Paths written by [`export_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedReport {
    pub json: PathBuf,
    pub text: PathBuf,
    pub confusion_csv: PathBuf,
}

/// Writes `<stem>_report.json`, `<stem>_report.txt` and
/// `<stem>_confusion.csv` into `dir`.
pub fn export_report(
    report: &ClassificationReport,
    cm: &ConfusionMatrix,
    dir: &Path,
    stem: &str,
    title: &str,
) -> Result<ExportedReport> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ExportedReport {
        json: dir.join(format!("{stem}_report.json")),
        text: dir.join(format!("{stem}_report.txt")),
        confusion_csv: dir.join(format!("{stem}_confusion.csv")),
    };
    for (path, body) in [
        (&files.json, report.to_json() + "\n"),
        (&files.text, report.to_text(title)),
        (&files.confusion_csv, cm.to_csv()),
    ] {
        fs::write(path, body).map_err(|e| Error::io(path, e))?;
    }
    Ok(files)
}

/// Scores `data` with `net` and tallies the chosen head. Row-wise argmax
/// breaks ties toward the lowest label index.
pub fn evaluate_model(
    net: &DualHeadNetwork,
    data: &LabeledImages,
    head: Head,
) -> Result<(ConfusionMatrix, ClassificationReport)> {
    let both = evaluate_heads(net, data)?;
    Ok(match head {
        Head::Category => both.category,
        Head::Threat => both.threat,
    })
}

/// Matrices and reports for both heads from a single scoring pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadEvaluations {
    pub category: (ConfusionMatrix, ClassificationReport),
    pub threat: (ConfusionMatrix, ClassificationReport),
}

pub fn evaluate_heads(net: &DualHeadNetwork, data: &LabeledImages) -> Result<HeadEvaluations> {
    if data.is_empty() {
        return Err(Error::validation("the evaluation set is empty"));
    }
    if data.label_space != net.config.label_space {
        return Err(Error::validation(format!(
            "label space mismatch: checkpoint has {}, data has {}",
            net.config.label_space, data.label_space
        )));
    }
    let s = score(net, data, 64, Default::default())?;
    let categories: Vec<String> = data
        .label_space
        .members()
        .iter()
        .map(|l| l.as_str().to_string())
        .collect();
    let class_cm = ConfusionMatrix::from_indices(categories, &data.class_targets, &s.class_predictions)?;
    let threat_cm =
        ConfusionMatrix::from_indices(threat_labels(), &data.threat_targets, &s.threat_predictions)?;
    Ok(HeadEvaluations {
        category: (class_cm.clone(), classification_report(&class_cm)?),
        threat: (threat_cm.clone(), classification_report(&threat_cm)?),
    })
}

/// `(truth, pred)` label pairs per head, read from a `head,truth,pred` CSV.
pub type PredictionPairs = BTreeMap<Head, (Vec<String>, Vec<String>)>;

pub fn parse_predictions_csv(text: &str) -> Result<PredictionPairs> {
    let bad = |line: usize, m: String| Error::Format {
        what: "predictions file",
        message: format!("line {line}: {m}"),
    };
    let mut out = PredictionPairs::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("head,truth,pred")) {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let [head, truth, pred] = cells[..] else {
            return Err(bad(line_no, format!("expected 3 fields, got {}", cells.len())));
        };
        let head: Head = head.parse().map_err(|e: Error| bad(line_no, e.to_string()))?;
        let entry = out.entry(head).or_default();
        entry.0.push(truth.to_string());
        entry.1.push(pred.to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    /// Truth supports 23/27/794 with every prediction HIGH.
    fn all_high_matrix() -> ConfusionMatrix {
        let mut truth = vec!["LOW"; 23];
        truth.extend(vec!["MEDIUM"; 27]);
        truth.extend(vec!["HIGH"; 794]);
        let pred = vec!["HIGH"; truth.len()];
        confusion_matrix(&truth, &pred, &["LOW", "MEDIUM", "HIGH"]).unwrap()
    }

    /// Pairs (A,A), (A,B), (B,B): one of each, three in total.
    #[test]
    fn toy_matrix_by_hand() {
        let cm = confusion_matrix(&["A", "A", "B"], &["A", "B", "B"], &["A", "B"]).unwrap();
        assert_eq!(cm.counts(), &[vec![1, 1], vec![0, 1]]);
        assert_eq!(cm.total(), 3);
    }

    #[test]
    fn all_high_column() {
        let cm = all_high_matrix();
        assert_eq!(cm.counts(), &[vec![0, 0, 23], vec![0, 0, 27], vec![0, 0, 794]]);
    }

    #[test]
    fn all_high_report_values() {
        let r = classification_report(&all_high_matrix()).unwrap();
        let cells: Vec<String> = r
            .rows
            .iter()
            .flat_map(|row| [row.precision, row.recall, row.f1])
            .map(fmt2)
            .collect();
        assert_eq!(cells, ["0.00", "0.00", "0.00", "0.00", "0.00", "0.00", "0.94", "1.00", "0.97"]);
        let avg = |a: Averages| [a.precision, a.recall, a.f1].map(fmt2);
        assert_eq!(avg(r.macro_avg), ["0.31", "0.33", "0.32"]);
        assert_eq!(avg(r.weighted_avg), ["0.89", "0.94", "0.91"]);
        assert_eq!(r.total_support, 844);
        assert_eq!(r.rows[2].precision, 794.0 / 844.0);
    }

    #[test]
    fn unknown_label_is_rejected() {
        assert!(confusion_matrix(&["A", "C"], &["A", "A"], &["A", "B"]).is_err());
        assert!(confusion_matrix(&["A"], &["A", "A"], &["A", "B"]).is_err());
    }

    #[test]
    fn diagonal_is_perfect() {
        let cm = confusion_matrix(&["x", "y", "y", "z"], &["x", "y", "y", "z"], &["x", "y", "z"]).unwrap();
        let r = classification_report(&cm).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.rows.iter().all(|row| row.precision == 1.0 && row.recall == 1.0 && row.f1 == 1.0));
        assert_eq!(r.macro_avg, Averages { precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn single_label_table() {
        let cm = confusion_matrix(&["only"; 5], &["only"; 5], &["only"]).unwrap();
        let r = classification_report(&cm).unwrap();
        assert_eq!(r.macro_avg.f1, r.rows[0].f1);
        assert_eq!(r.weighted_avg.precision, r.rows[0].precision);
        let text = r.to_text("Label");
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn text_table_layout() {
        let r = classification_report(&all_high_matrix()).unwrap();
        let text = r.to_text("Threat Level");
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].contains("Precision") && lines[0].contains("Support"));
        let fields = |l: &str| l.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        assert_eq!(fields(lines[3]), ["HIGH", "0.94", "1.00", "0.97", "794"]);
        assert_eq!(fields(lines[5]), ["Macro", "Avg", "0.31", "0.33", "0.32", "844"]);
        assert_eq!(fields(lines[6]), ["Weighted", "Avg", "0.89", "0.94", "0.91", "844"]);
    }

    #[test]
    fn json_and_csv_round_trip() {
        let cm = all_high_matrix();
        let r = classification_report(&cm).unwrap();
        assert_eq!(ClassificationReport::from_json(&r.to_json()).unwrap(), r);
        assert_eq!(ConfusionMatrix::from_csv(&cm.to_csv()).unwrap(), cm);
    }

    #[test]
    fn empty_matrix_has_no_report() {
        let cm = ConfusionMatrix::from_indices(labels(&["a", "b"]), &[], &[]).unwrap();
        assert!(classification_report(&cm).is_err());
    }

    #[test]
    fn predictions_csv() {
        let text = "head,truth,pred\nthreat,LOW,HIGH\ncategory,Drone,Bird\nthreat,HIGH,HIGH\n";
        let p = parse_predictions_csv(text).unwrap();
        assert_eq!(p[&Head::Threat].0, ["LOW", "HIGH"]);
        assert_eq!(p[&Head::Category].1, ["Bird"]);
        assert!(parse_predictions_csv("threat,LOW\n").is_err());
        assert!(parse_predictions_csv("tail,LOW,HIGH\n").is_err());
    }
}
