//! Confusion matrices and recognition measures.
//!
//! Two accuracies are reported side by side and they are not the same
//! quantity:
//!
//! * the **hit rate**, the fraction of windows whose prediction is correct;
//! * the **macro one-vs-rest accuracy**,
//!   `(1/M) Σ_i (TP_i + TN_i) / (TP_i + TN_i + FP_i + FN_i)`.
//!
//! Each misclassification counts once as a false negative and once as a false
//! positive, so for `M` classes the macro accuracy equals
//! `1 − 2(1 − hit rate)/M`.
//!
//! Ratios with an empty denominator are `None` ("not applicable"), never 0.

use std::fmt::Write as _;

use crate::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    class_labels: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_labels: Vec<String>) -> Self {
        let m = class_labels.len();
        Self {
            class_labels,
            counts: vec![0; m * m],
        }
    }

    pub fn from_counts(class_labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let m = class_labels.len();
        if counts.len() != m || counts.iter().any(|r| r.len() != m) {
            return Err(Error::Invalid(format!("confusion counts must be {m}x{m}")));
        }
        Ok(Self {
            class_labels,
            counts: counts.into_iter().flatten().collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let m = self.classes();
        if truth >= m || predicted >= m {
            return Err(Error::Invalid(format!(
                "label pair ({truth}, {predicted}) outside the {m} known classes"
            )));
        }
        self.counts[truth * m + predicted] += 1;
        Ok(())
    }

    /// Adds the counts of another matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.class_labels != other.class_labels {
            return Err(Error::Invalid("cannot merge matrices over different classes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.classes()).filter(|&j| j != class).map(|j| self.get(class, j)).sum()
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.classes()).filter(|&i| i != class).map(|i| self.get(i, class)).sum()
    }

    pub fn true_negatives(&self, class: usize) -> u64 {
        self.total() - self.true_positives(class) - self.false_negatives(class) - self.false_positives(class)
    }

    pub fn hit_rate(&self) -> Option<f64> {
        let correct: u64 = (0..self.classes()).map(|i| self.get(i, i)).sum();
        ratio(correct, self.total())
    }

    pub fn precision(&self, class: usize) -> Option<f64> {
        let tp = self.true_positives(class);
        ratio(tp, tp + self.false_positives(class))
    }

    pub fn recall(&self, class: usize) -> Option<f64> {
        let tp = self.true_positives(class);
        ratio(tp, tp + self.false_negatives(class))
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Counts `(true, predicted)` pairs.
pub fn confusion(
    class_labels: Vec<String>,
    pairs: impl IntoIterator<Item = (usize, usize)>,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(class_labels);
    for (t, p) in pairs {
        cm.add(t, p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    /// Sensitivity, `TP / (TP + FN)`.
    pub tpr: Option<f64>,
    /// Specificity, `TN / (TN + FP)`.
    pub tnr: Option<f64>,
    pub acc: Option<f64>,
}

/// Sensitivity, specificity and accuracy of a two-class matrix.
pub fn binary_metrics(cm: &ConfusionMatrix, positive: usize) -> Result<BinaryMetrics> {
    if cm.classes() != 2 {
        return Err(Error::Invalid(format!(
            "binary metrics need 2 classes, matrix has {}",
            cm.classes()
        )));
    }
    if positive > 1 {
        return Err(Error::Invalid(format!("positive class {positive} out of range")));
    }
    let tp = cm.true_positives(positive);
    let fn_ = cm.false_negatives(positive);
    let fp = cm.false_positives(positive);
    let tn = cm.true_negatives(positive);
    Ok(BinaryMetrics {
        tpr: ratio(tp, tp + fn_),
        tnr: ratio(tn, tn + fp),
        acc: ratio(tp + tn, tp + tn + fp + fn_),
    })
}

/// Macro one-vs-rest accuracy.
pub fn multiclass_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let m = cm.classes();
    if m < 2 {
        return Err(Error::Invalid("multiclass accuracy needs at least 2 classes".into()));
    }
    let total = cm.total();
    if total == 0 {
        return Err(Error::Invalid("multiclass accuracy of an empty matrix".into()));
    }
    let sum: f64 = (0..m)
        .map(|i| (cm.true_positives(i) + cm.true_negatives(i)) as f64 / total as f64)
        .sum();
    Ok(sum / m as f64)
}

fn fmt_ratio(r: Option<f64>) -> String {
    match r {
        Some(v) => format!("{v:.6}"),
        None => "n/a".to_string(),
    }
}

/// Plain-text report: matrix, per-class precision/recall, both accuracies
/// and, for two classes with a positive class, TPR/TNR/ACC.
pub fn report(cm: &ConfusionMatrix, positive: Option<usize>) -> String {
    let mut out = String::new();
    let m = cm.classes();
    let _ = writeln!(out, "windows\t{}", cm.total());
    let _ = writeln!(out, "confusion (rows = true, columns = predicted)");
    let _ = write!(out, "true\\pred");
    for l in cm.class_labels() {
        let _ = write!(out, "\t{l}");
    }
    let _ = writeln!(out);
    for i in 0..m {
        let _ = write!(out, "{}", cm.class_labels()[i]);
        for j in 0..m {
            let _ = write!(out, "\t{}", cm.get(i, j));
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "class\tprecision\trecall");
    for i in 0..m {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            cm.class_labels()[i],
            fmt_ratio(cm.precision(i)),
            fmt_ratio(cm.recall(i))
        );
    }
    let _ = writeln!(out, "hit_rate\t{}", fmt_ratio(cm.hit_rate()));
    let _ = writeln!(out, "macro_acc\t{}", fmt_ratio(multiclass_accuracy(cm).ok()));
    if let Some(p) = positive {
        if let Ok(b) = binary_metrics(cm, p) {
            let _ = writeln!(out, "positive_class\t{}", cm.class_labels()[p]);
            let _ = writeln!(out, "tpr\t{}", fmt_ratio(b.tpr));
            let _ = writeln!(out, "tnr\t{}", fmt_ratio(b.tnr));
            let _ = writeln!(out, "acc\t{}", fmt_ratio(b.acc));
        }
    }
    out
}
