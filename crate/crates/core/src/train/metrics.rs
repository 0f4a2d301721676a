use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `C × C` counts; entry `(i, j)` is the number of samples of true class `i`
/// predicted as `j`.
pub type ConfusionMatrix = Vec<Vec<u64>>;

pub fn confusion_matrix(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::Index(format!(
                "prediction {p} / label {l} with {n_classes} classes"
            )));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Per-class precision, recall and F1 as fractions. Undefined ratios are 0.
pub fn per_class_prf(confmat: &ConfusionMatrix) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = confmat.len();
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut p = Vec::with_capacity(c);
    let mut r = Vec::with_capacity(c);
    let mut f = Vec::with_capacity(c);
    for i in 0..c {
        let tp = confmat[i][i];
        let predicted: u64 = confmat.iter().map(|row| row[i]).sum();
        let support: u64 = confmat[i].iter().sum();
        let (pi, ri) = (ratio(tp, predicted), ratio(tp, support));
        p.push(pi);
        r.push(ri);
        f.push(if pi + ri > 0.0 { 2.0 * pi * ri / (pi + ri) } else { 0.0 });
    }
    (p, r, f)
}

/// Support-weighted precision, recall and F1, in percent.
pub fn weighted_prf(confmat: &ConfusionMatrix) -> Result<(f64, f64, f64)> {
    let supports: Vec<u64> = confmat.iter().map(|row| row.iter().sum()).collect();
    let total: u64 = supports.iter().sum();
    if total == 0 {
        return Err(Error::Data("metrics over zero samples".into()));
    }
    let (p, _, f) = per_class_prf(confmat);
    let weigh = |v: &[f64]| 100.0 * v.iter().zip(&supports).map(|(x, &s)| x * s as f64).sum::<f64>() / total as f64;
    // support-weighted recall collapses to Σ TP / N
    let tp: u64 = (0..confmat.len()).map(|i| confmat[i][i]).sum();
    let recall = 100.0 * tp as f64 / total as f64;
    Ok((weigh(&p), recall, weigh(&f)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn from_predictions(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Self> {
        let confusion = confusion_matrix(preds, labels, n_classes)?;
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let (precision, recall, f1) = weighted_prf(&confusion)?;
        let n: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let (p, r, _) = per_class_prf(&confusion);
        Ok(Self {
            accuracy: 100.0 * correct as f64 / n as f64,
            precision,
            recall,
            f1,
            per_class_precision: p.iter().map(|v| 100.0 * v).collect(),
            per_class_recall: r.iter().map(|v| 100.0 * v).collect(),
            confusion,
            n_samples: n as usize,
        })
    }

    /// Accuracy over samples whose true class is in `classes`.
    pub fn accuracy_within(&self, classes: &[usize]) -> Option<f64> {
        let (mut correct, mut total) = (0u64, 0u64);
        for &c in classes {
            correct += self.confusion[c][c];
            total += self.confusion[c].iter().sum::<u64>();
        }
        (total > 0).then(|| 100.0 * correct as f64 / total as f64)
    }

    pub fn headline(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricSummary {
    fn from_array(a: [f64; 4]) -> Self {
        Self {
            accuracy: a[0],
            precision: a[1],
            recall: a[2],
            f1: a[3],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

/// Per-fold reports with their mean and sample standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: Vec<MetricsReport>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

impl CrossValReport {
    pub fn new(folds: Vec<MetricsReport>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::Data("cross-validation produced no folds".into()));
        }
        let n = folds.len() as f64;
        let mut mean = [0.0; 4];
        for f in &folds {
            for (m, v) in mean.iter_mut().zip(f.headline()) {
                *m += v / n;
            }
        }
        let mut std = [0.0; 4];
        if folds.len() > 1 {
            for f in &folds {
                for ((s, v), m) in std.iter_mut().zip(f.headline()).zip(mean) {
                    *s += (v - m).powi(2);
                }
            }
            std.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt());
        }
        Ok(Self {
            folds,
            mean: MetricSummary::from_array(mean),
            std: MetricSummary::from_array(std),
        })
    }

    /// `fold,accuracy,precision,recall,f1` with one row per fold, then the
    /// mean and standard deviation rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fold,accuracy,precision,recall,f1\n");
        let row = |label: &str, v: [f64; 4]| format!("{label},{:.4},{:.4},{:.4},{:.4}\n", v[0], v[1], v[2], v[3]);
        for (i, f) in self.folds.iter().enumerate() {
            out += &row(&i.to_string(), f.headline());
        }
        out += &row("mean", self.mean.as_array());
        out += &row("std", self.std.as_array());
        out
    }
}

/// Confusion matrix as CSV with class names heading rows (true) and
/// columns (predicted).
pub fn confusion_csv(confmat: &ConfusionMatrix, names: &[String]) -> String {
    let mut out = String::from("true\\predicted");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (name, row) in names.iter().zip(confmat) {
        out.push_str(name);
        for v in row {
            out += &format!(",{v}");
        }
        out.push('\n');
    }
    out
}
