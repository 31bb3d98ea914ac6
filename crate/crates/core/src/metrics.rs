//! Imbalanced-multiclass evaluation: confusion matrix, one-vs-rest
//! precision/recall/specificity/F1 in macro and support-weighted variants,
//! balanced accuracy, and rank-based (Mann-Whitney) one-vs-rest AUC.
//!
//! Conventions: zero-support or zero-denominator classes contribute 0 to
//! their per-class metric so aggregates stay total; the support-weighted
//! recall is algebraically the overall accuracy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<u64>, class_names: Vec<String>) -> Result<ConfusionMatrix> {
        let c = class_names.len();
        if counts.len() != c * c || c == 0 {
            return Err(Error::dim(format!(
                "confusion matrix needs {c}x{c} counts, got {}",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { counts, class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.num_classes() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        let c = self.num_classes();
        self.counts[true_class * c..(true_class + 1) * c].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        let c = self.num_classes();
        (0..c).map(|t| self.counts[t * c + predicted]).sum()
    }
}

/// Tallies labels/predictions into a confusion matrix.
pub fn confusion(
    labels: &[usize],
    predictions: &[usize],
    class_names: &[String],
) -> Result<ConfusionMatrix> {
    let c = class_names.len();
    if labels.len() != predictions.len() {
        return Err(Error::dim(format!(
            "confusion: {} labels vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut counts = vec![0u64; c * c];
    for (i, (&t, &p)) in labels.iter().zip(predictions).enumerate() {
        if t >= c {
            return Err(Error::invalid(format!("label {t} at index {i} out of range [0, {c})")));
        }
        if p >= c {
            return Err(Error::invalid(format!(
                "prediction {p} at index {i} out of range [0, {c})"
            )));
        }
        counts[t * c + p] += 1;
    }
    ConfusionMatrix::from_counts(counts, class_names.to_vec())
}

/// One-vs-rest tallies and rates for a single class.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PerClassMetrics {
    pub name: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
}

/// The full metric battery. Field order is the serialized key order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub mean_auc: Option<f64>,
    pub balanced_accuracy: f64,
    pub accuracy: f64,
    pub f1_weighted: f64,
    pub f1_macro: f64,
    pub precision_weighted: f64,
    pub precision_macro: f64,
    pub recall_weighted: f64,
    pub recall_macro: f64,
    pub specificity_macro: f64,
    pub per_class: Vec<PerClassMetrics>,
    pub num_samples: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Computes every report field except `mean_auc` (which needs scores).
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("confusion matrix has no samples".to_string()));
    }
    let c = cm.num_classes();
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.count(k, k);
        let fn_ = cm.row_sum(k) - tp;
        let fp = cm.col_sum(k) - tp;
        let tn = total - tp - fn_ - fp;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let specificity = ratio(tn, tn + fp);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(PerClassMetrics {
            name: cm.class_names()[k].clone(),
            support: cm.row_sum(k),
            precision,
            recall,
            specificity,
            f1,
        });
    }
    let macro_mean = |f: &dyn Fn(&PerClassMetrics) -> f64| {
        per_class.iter().map(|p| f(p)).sum::<f64>() / c as f64
    };
    let weighted_mean = |f: &dyn Fn(&PerClassMetrics) -> f64| {
        per_class.iter().map(|p| p.support as f64 * f(p)).sum::<f64>() / total as f64
    };
    let trace: u64 = (0..c).map(|k| cm.count(k, k)).sum();
    Ok(MetricsReport {
        mean_auc: None,
        balanced_accuracy: macro_mean(&|p| p.recall),
        accuracy: trace as f64 / total as f64,
        f1_weighted: weighted_mean(&|p| p.f1),
        f1_macro: macro_mean(&|p| p.f1),
        precision_weighted: weighted_mean(&|p| p.precision),
        precision_macro: macro_mean(&|p| p.precision),
        recall_weighted: weighted_mean(&|p| p.recall),
        recall_macro: macro_mean(&|p| p.recall),
        specificity_macro: macro_mean(&|p| p.specificity),
        per_class,
        num_samples: total,
    })
}

/// One-vs-rest ROC AUC per class via the rank (Mann-Whitney) statistic with
/// ties counted half, macro-averaged over classes that have at least one
/// positive and one negative sample.
pub fn mean_auc(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    let s = scores.shape();
    if s.len() != 2 {
        return Err(Error::dim(format!("mean_auc: scores must be [N, C], got {s:?}")));
    }
    let (n, c) = (s[0], s[1]);
    if labels.len() != n || n < 2 {
        return Err(Error::invalid(format!(
            "mean_auc: {} labels for {n} score rows (need N >= 2)",
            labels.len()
        )));
    }
    scores.check_finite("mean_auc scores")?;
    for (i, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(Error::invalid(format!("label {l} at index {i} out of range [0, {c})")));
        }
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for class in 0..c {
        let n_pos = labels.iter().filter(|&&l| l == class).count();
        let n_neg = n - n_pos;
        if n_pos == 0 || n_neg == 0 {
            continue;
        }
        // average ranks with ties shared
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores.data()[a * c + class]
                .partial_cmp(&scores.data()[b * c + class])
                .unwrap()
        });
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            let v = scores.data()[order[i] * c + class];
            while j < n && scores.data()[order[j] * c + class] == v {
                j += 1;
            }
            let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1..=j
            for &idx in &order[i..j] {
                ranks[idx] = avg_rank;
            }
            i = j;
        }
        let rank_sum: f64 =
            labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| ranks[i]).sum();
        let auc = (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
        sum += auc;
        used += 1;
    }
    if used == 0 {
        return Err(Error::invalid(
            "mean_auc undefined: every class lacks positives or negatives".to_string(),
        ));
    }
    Ok(sum / used as f64)
}

fn round4(x: f64) -> f64 {
    (x * 10_000.0).round() / 10_000.0
}

impl MetricsReport {
    /// The report with every scalar rounded to 4 decimals, as emitted.
    pub fn rounded(&self) -> MetricsReport {
        MetricsReport {
            mean_auc: self.mean_auc.map(round4),
            balanced_accuracy: round4(self.balanced_accuracy),
            accuracy: round4(self.accuracy),
            f1_weighted: round4(self.f1_weighted),
            f1_macro: round4(self.f1_macro),
            precision_weighted: round4(self.precision_weighted),
            precision_macro: round4(self.precision_macro),
            recall_weighted: round4(self.recall_weighted),
            recall_macro: round4(self.recall_macro),
            specificity_macro: round4(self.specificity_macro),
            per_class: self
                .per_class
                .iter()
                .map(|p| PerClassMetrics {
                    name: p.name.clone(),
                    support: p.support,
                    precision: round4(p.precision),
                    recall: round4(p.recall),
                    specificity: round4(p.specificity),
                    f1: round4(p.f1),
                })
                .collect(),
            num_samples: self.num_samples,
        }
    }
}

/// Writes the report as JSON with fixed key order and 4-decimal values.
pub fn emit_report(report: &MetricsReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&report.rounded())
        .map_err(|e| Error::invalid(format!("report serialization: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn parse_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("report parse: {e}")))
}

/// Published full-scale validation results for this architecture ("Reference")
/// and the two baselines it was compared against. Cells are kept verbatim as
/// strings ("-" where unreported) and parsed for delta computation.
#[derive(Debug, Clone, Copy)]
pub struct BaselineRow {
    pub name: &'static str,
    /// mean AUC, balanced accuracy, avg accuracy, avg F1, avg precision,
    /// avg recall, avg specificity - all in percent.
    pub cells: [&'static str; 7],
}

impl BaselineRow {
    pub fn numeric(&self, column: usize) -> Option<f64> {
        self.cells[column].parse().ok()
    }
}

pub const BASELINE_COLUMNS: [&str; 7] = [
    "mean_auc",
    "balanced_accuracy",
    "avg_accuracy",
    "avg_f1",
    "avg_precision",
    "avg_recall",
    "avg_specificity",
];

pub const BASELINES: [BaselineRow; 3] = [
    BaselineRow {
        name: "VGG16",
        cells: ["91.61", "56.84", "69.06", "48.44", "52.46", "54.30", "96.97"],
    },
    BaselineRow {
        name: "ResNet50",
        cells: ["87.10", "-", "76.02", "76.0", "78.0", "76.0", "-"],
    },
    BaselineRow {
        name: "Reference",
        cells: ["87.49", "94.81", "91.19", "91.11", "91.17", "91.19", "98.44"],
    },
];

/// The report's values in baseline-column order, in percent.
pub fn report_row_percent(report: &MetricsReport) -> [Option<f64>; 7] {
    [
        report.mean_auc.map(|v| v * 100.0),
        Some(report.balanced_accuracy * 100.0),
        Some(report.accuracy * 100.0),
        Some(report.f1_weighted * 100.0),
        Some(report.precision_weighted * 100.0),
        Some(report.recall_weighted * 100.0),
        Some(report.specificity_macro * 100.0),
    ]
}

/// Renders the comparison table: the published rows verbatim, this run's
/// row, and signed deltas against each published row.
pub fn compare_to_baselines(report: &MetricsReport) -> String {
    let mine = report_row_percent(report);
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.2}"),
        None => "-".to_string(),
    };
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>9} {:>13} {:>9} {:>8} {:>10} {:>8} {:>12}\n",
        "method", "mean_auc", "balanced_acc", "accuracy", "f1", "precision", "recall", "specificity"
    ));
    for row in BASELINES {
        out.push_str(&format!(
            "{:<12} {:>9} {:>13} {:>9} {:>8} {:>10} {:>8} {:>12}\n",
            row.name,
            row.cells[0],
            row.cells[1],
            row.cells[2],
            row.cells[3],
            row.cells[4],
            row.cells[5],
            row.cells[6]
        ));
    }
    out.push_str(&format!(
        "{:<12} {:>9} {:>13} {:>9} {:>8} {:>10} {:>8} {:>12}\n",
        "this run",
        fmt(mine[0]),
        fmt(mine[1]),
        fmt(mine[2]),
        fmt(mine[3]),
        fmt(mine[4]),
        fmt(mine[5]),
        fmt(mine[6])
    ));
    for row in BASELINES {
        let deltas: Vec<String> = (0..7)
            .map(|i| match (mine[i], row.numeric(i)) {
                (Some(m), Some(b)) => format!("{:+.2}", m - b),
                _ => "-".to_string(),
            })
            .collect();
        out.push_str(&format!(
            "{:<12} {:>9} {:>13} {:>9} {:>8} {:>10} {:>8} {:>12}\n",
            format!("d {}", row.name),
            deltas[0],
            deltas[1],
            deltas[2],
            deltas[3],
            deltas[4],
            deltas[5],
            deltas[6]
        ));
    }
    out
}

/// Parsed `sample_id,true_label,predicted_label,score_0..score_{C-1}` CSV.
pub struct Predictions {
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
    pub scores: Tensor,
}

pub fn read_predictions_csv(path: &Path) -> Result<Predictions> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers().map_err(Error::from)?.clone();
    if headers.len() < 4
        || &headers[0] != "sample_id"
        || &headers[1] != "true_label"
        || &headers[2] != "predicted_label"
    {
        return Err(Error::invalid(format!(
            "{}: expected header sample_id,true_label,predicted_label,score_0..., found {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let c = headers.len() - 3;
    for (i, name) in headers.iter().skip(3).enumerate() {
        if name != format!("score_{i}") {
            return Err(Error::invalid(format!(
                "{}: score column {} named {name:?}, expected score_{i}",
                path.display(),
                i + 3
            )));
        }
    }
    let mut labels = Vec::new();
    let mut predictions = Vec::new();
    let mut scores = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(Error::from)?;
        let line = i + 2;
        if record.len() != 3 + c {
            return Err(Error::invalid(format!(
                "{} line {line}: expected {} fields, found {}",
                path.display(),
                3 + c,
                record.len()
            )));
        }
        let parse_usize = |s: &str, what: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                Error::invalid(format!("{} line {line}: bad {what} {s:?}", path.display()))
            })
        };
        labels.push(parse_usize(&record[1], "true_label")?);
        predictions.push(parse_usize(&record[2], "predicted_label")?);
        for j in 0..c {
            let v: f64 = record[3 + j].parse().map_err(|_| {
                Error::invalid(format!(
                    "{} line {line}: bad score {:?}",
                    path.display(),
                    &record[3 + j]
                ))
            })?;
            scores.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::invalid(format!("{}: no prediction rows", path.display())));
    }
    let n = labels.len();
    Ok(Predictions { labels, predictions, scores: Tensor::new(scores, &[n, c]) })
}

/// Writes the predictions CSV consumed by [`read_predictions_csv`].
pub fn write_predictions_csv(
    path: &Path,
    labels: &[usize],
    predictions: &[usize],
    scores: &[Vec<f64>],
) -> Result<()> {
    use std::io::Write;
    let c = scores.first().map(|s| s.len()).unwrap_or(0);
    let mut f = std::fs::File::create(path)?;
    let mut header = String::from("sample_id,true_label,predicted_label");
    for j in 0..c {
        header.push_str(&format!(",score_{j}"));
    }
    writeln!(f, "{header}")?;
    for (i, ((t, p), row)) in labels.iter().zip(predictions).zip(scores).enumerate() {
        let mut line = format!("{i},{t},{p}");
        for v in row {
            line.push_str(&format!(",{v:.9}"));
        }
        writeln!(f, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn names(c: usize) -> Vec<String> {
        (0..c).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], &names(3)).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.count(t, p), u64::from(t == p));
            }
        }
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 0, 1], &names(2)).unwrap();
        assert_eq!(
            (cm.count(0, 0), cm.count(0, 1), cm.count(1, 0), cm.count(1, 1)),
            (1, 1, 1, 1)
        );
        let err = confusion(&[0, 5], &[0, 0], &names(3)).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }

    #[test]
    fn confusion_row_sums_count_labels() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let labels: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..5)).collect();
        let preds: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..5)).collect();
        let cm = confusion(&labels, &preds, &names(5)).unwrap();
        for class in 0..5 {
            let want = labels.iter().filter(|&&l| l == class).count() as u64;
            assert_eq!(cm.row_sum(class), want);
        }
        assert_eq!(cm.total(), 1000);
    }

    #[test]
    fn worked_two_class_example() {
        let cm = ConfusionMatrix::from_counts(vec![9, 1, 2, 8], names(2)).unwrap();
        let r = classification_metrics(&cm).unwrap();
        assert!((r.balanced_accuracy - 0.85).abs() <= 1e-15);
        assert!((r.accuracy - 0.85).abs() <= 1e-15);
        assert!((r.per_class[0].specificity - 0.8).abs() <= 1e-15);
        assert!((r.per_class[1].specificity - 0.9).abs() <= 1e-15);
        assert!((r.specificity_macro - 0.85).abs() <= 1e-15);
    }

    #[test]
    fn perfect_diagonal_scores_ones() {
        let cm = ConfusionMatrix::from_counts(vec![5, 0, 0, 0, 3, 0, 0, 0, 9], names(3)).unwrap();
        let r = classification_metrics(&cm).unwrap();
        for v in [
            r.balanced_accuracy,
            r.accuracy,
            r.f1_weighted,
            r.f1_macro,
            r.precision_weighted,
            r.precision_macro,
            r.recall_weighted,
            r.recall_macro,
            r.specificity_macro,
        ] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn weighted_recall_is_accuracy() {
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        for _ in 0..50 {
            let c = rng.gen_range(2..7);
            let counts: Vec<u64> = (0..c * c).map(|_| rng.gen_range(0..30)).collect();
            if counts.iter().sum::<u64>() == 0 {
                continue;
            }
            let cm = ConfusionMatrix::from_counts(counts, names(c)).unwrap();
            let r = classification_metrics(&cm).unwrap();
            assert!((r.recall_weighted - r.accuracy).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_support_class_contributes_zero() {
        // class 1 never appears and is never predicted
        let cm = ConfusionMatrix::from_counts(vec![4, 0, 0, 0, 0, 0, 1, 0, 5], names(3)).unwrap();
        let r = classification_metrics(&cm).unwrap();
        assert_eq!(r.per_class[1].recall, 0.0);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert!((r.balanced_accuracy - (1.0 + 0.0 + 5.0 / 6.0) / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn auc_perfect_and_ties() {
        let scores = Tensor::new(
            vec![
                0.9, 0.1, //
                0.8, 0.2, //
                0.1, 0.9, //
                0.2, 0.8,
            ],
            &[4, 2],
        );
        let auc = mean_auc(&scores, &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 1.0);

        let flat = Tensor::new(vec![0.5; 8], &[4, 2]);
        let auc = mean_auc(&flat, &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn auc_matches_pairwise_concordance_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        for _ in 0..20 {
            let (n, c) = (50, 3);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            // quantized scores force ties through the tie-handling path
            let scores: Vec<f64> = (0..n * c)
                .map(|_| (rng.gen_range(0.0_f64..1.0) * 8.0).round() / 8.0)
                .collect();
            let t = Tensor::new(scores.clone(), &[n, c]);
            let got = mean_auc(&t, &labels).unwrap();

            // O(N^2) oracle: P(pos > neg) + 0.5 P(tie), macro over classes
            let mut sum = 0.0;
            let mut used = 0;
            for class in 0..c {
                let pos: Vec<f64> = (0..n)
                    .filter(|&i| labels[i] == class)
                    .map(|i| scores[i * c + class])
                    .collect();
                let neg: Vec<f64> = (0..n)
                    .filter(|&i| labels[i] != class)
                    .map(|i| scores[i * c + class])
                    .collect();
                if pos.is_empty() || neg.is_empty() {
                    continue;
                }
                let mut acc = 0.0;
                for p in &pos {
                    for q in &neg {
                        acc += if p > q {
                            1.0
                        } else if p == q {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
                sum += acc / (pos.len() * neg.len()) as f64;
                used += 1;
            }
            let want = sum / used as f64;
            assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn auc_monotone_transform_invariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(34);
        let (n, c) = (30, 3);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let scores: Vec<f64> = (0..n * c).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let base = mean_auc(&Tensor::new(scores.clone(), &[n, c]), &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|v| (3.0 * v).tanh() * 5.0 + 1.0).collect();
        let got = mean_auc(&Tensor::new(warped, &[n, c]), &labels).unwrap();
        assert!((base - got).abs() <= 1e-12);
    }

    #[test]
    fn auc_skips_degenerate_classes_and_errors_when_all_skipped() {
        // class 2 has no positives: skipped, mean over classes 0 and 1
        let scores = Tensor::new(vec![0.9, 0.1, 0.0, 0.1, 0.9, 0.0], &[2, 3]);
        let auc = mean_auc(&scores, &[0, 1]).unwrap();
        assert_eq!(auc, 1.0);

        // single class present everywhere -> undefined
        let scores = Tensor::new(vec![0.9, 0.8], &[2, 1]);
        let err = mean_auc(&scores, &[0, 0]).unwrap_err();
        assert!(err.to_string().contains("undefined"), "{err}");
    }

    #[test]
    fn random_predictor_balanced_accuracy_near_chance() {
        let mut rng = ChaCha20Rng::seed_from_u64(35);
        let c = 10;
        // deliberately imbalanced labels
        let labels: Vec<usize> =
            (0..10_000).map(|_| if rng.gen_bool(0.5) { 0 } else { rng.gen_range(0..c) }).collect();
        let preds: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..c)).collect();
        let cm = confusion(&labels, &preds, &names(c)).unwrap();
        let r = classification_metrics(&cm).unwrap();
        assert!((r.balanced_accuracy - 0.1).abs() <= 0.05, "{}", r.balanced_accuracy);
    }

    #[test]
    fn report_roundtrip_through_emit() {
        let cm = ConfusionMatrix::from_counts(vec![9, 1, 2, 8], names(2)).unwrap();
        let mut r = classification_metrics(&cm).unwrap();
        r.mean_auc = Some(0.876543);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        emit_report(&r, &path).unwrap();
        let back = parse_report(&path).unwrap();
        assert_eq!(back, r.rounded());

        // fixed key order in the serialized text
        let text = std::fs::read_to_string(&path).unwrap();
        let auc_pos = text.find("mean_auc").unwrap();
        let bal_pos = text.find("balanced_accuracy").unwrap();
        let acc_pos = text.find("\"accuracy\"").unwrap();
        assert!(auc_pos < bal_pos && bal_pos < acc_pos);
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let reference = &BASELINES[2];
        let report = MetricsReport {
            mean_auc: Some(0.8749),
            balanced_accuracy: 0.9481,
            accuracy: 0.9119,
            f1_weighted: 0.9111,
            f1_macro: 0.9111,
            precision_weighted: 0.9117,
            precision_macro: 0.9117,
            recall_weighted: 0.9119,
            recall_macro: 0.9481,
            specificity_macro: 0.9844,
            per_class: vec![],
            num_samples: 100,
        };
        let table = compare_to_baselines(&report);
        for cell in reference.cells {
            assert!(table.contains(cell), "missing {cell} in\n{table}");
        }
        // the delta row against the reference is all zeros
        let delta_line = table.lines().find(|l| l.starts_with("d Reference")).unwrap();
        let zeros = delta_line.matches("+0.00").count() + delta_line.matches("-0.00").count();
        assert_eq!(zeros, 7, "{delta_line}");
    }

    #[test]
    fn comparison_carries_all_baseline_rows_verbatim() {
        let report = MetricsReport {
            mean_auc: None,
            balanced_accuracy: 0.5,
            accuracy: 0.5,
            f1_weighted: 0.5,
            f1_macro: 0.5,
            precision_weighted: 0.5,
            precision_macro: 0.5,
            recall_weighted: 0.5,
            recall_macro: 0.5,
            specificity_macro: 0.5,
            per_class: vec![],
            num_samples: 10,
        };
        let table = compare_to_baselines(&report);
        for row in BASELINES {
            assert!(table.contains(row.name));
            for cell in row.cells {
                assert!(table.contains(cell), "missing {cell}");
            }
        }
    }

    #[test]
    fn predictions_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.csv");
        let labels = vec![0usize, 1, 2, 1];
        let preds = vec![0usize, 1, 1, 1];
        let scores = vec![
            vec![0.7, 0.2, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.2, 0.5, 0.3],
            vec![0.05, 0.9, 0.05],
        ];
        write_predictions_csv(&path, &labels, &preds, &scores).unwrap();
        let p = read_predictions_csv(&path).unwrap();
        assert_eq!(p.labels, labels);
        assert_eq!(p.predictions, preds);
        assert_eq!(p.scores.shape(), &[4, 3]);
        assert!((p.scores.data()[4] - 0.8).abs() <= 1e-9);

        std::fs::write(&path, "sample_id,true,pred,score_0\n0,0,0,1.0\n").unwrap();
        assert!(read_predictions_csv(&path).is_err());
    }
}
