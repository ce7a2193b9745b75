//! Confusion matrix and per-class precision / recall / F1.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[t][p]` = number of samples with true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Argument("confusion matrix must be square".into()));
        }
        Ok(Self {
            k,
            counts: rows.into_iter().flatten().collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.k).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    /// Rows are true classes, columns predicted classes; a header names the
    /// predicted columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for p in 0..self.k {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
        for t in 0..self.k {
            let _ = write!(s, "{t}");
            for p in 0..self.k {
                let _ = write!(s, ",{}", self.get(t, p));
            }
            s.push('\n');
        }
        s
    }
}

/// Tallies predictions against ground truth over `k` classes.
pub fn confusion(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::Argument(format!(
            "{} true labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut m = ConfusionMatrix::zeros(k);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(Error::Argument(format!("label {} out of range for {k} classes", t.max(p))));
        }
        m.counts[t * k + p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub matrix: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy and one-vs-rest precision, recall and F1 per class. A metric
/// whose denominator is zero is reported as 0.
pub fn report(matrix: &ConfusionMatrix) -> Result<EvalReport> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::Argument("confusion matrix is empty".into()));
    }
    let per_class = (0..matrix.k)
        .map(|c| {
            let tp = matrix.get(c, c);
            let precision = ratio(tp, matrix.col_sum(c));
            let recall = ratio(tp, matrix.row_sum(c));
            // 2PR / (P + R) rewritten over counts: 2TP / (2TP + FP + FN)
            let f1 = if tp == 0 {
                0.0
            } else {
                ratio(2 * tp, matrix.col_sum(c) + matrix.row_sum(c))
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: matrix.row_sum(c),
            }
        })
        .collect();
    Ok(EvalReport {
        accuracy: ratio(matrix.trace(), total),
        per_class,
        matrix: matrix.clone(),
    })
}

impl EvalReport {
    /// JSON text: overall accuracy, per-class blocks and the raw matrix.
    pub fn to_json(&self) -> String {
        let mut s = String::from("{\n");
        let _ = writeln!(s, "  \"accuracy\": {},", self.accuracy);
        let _ = writeln!(s, "  \"total\": {},", self.matrix.total());
        s.push_str("  \"classes\": [\n");
        for (c, m) in self.per_class.iter().enumerate() {
            let _ = write!(
                s,
                "    {{\"class\": {c}, \"precision\": {}, \"recall\": {}, \"f1\": {}, \"support\": {}}}",
                m.precision, m.recall, m.f1, m.support
            );
            s.push_str(if c + 1 < self.per_class.len() { ",\n" } else { "\n" });
        }
        s.push_str("  ],\n  \"confusion\": [");
        for t in 0..self.matrix.k {
            let row: Vec<String> = (0..self.matrix.k)
                .map(|p| self.matrix.get(t, p).to_string())
                .collect();
            let _ = write!(s, "{}[{}]", if t == 0 { "" } else { ", " }, row.join(", "));
        }
        s.push_str("]\n}\n");
        s
    }

    /// Pulls `"accuracy"` back out of [`EvalReport::to_json`] output.
    pub fn accuracy_from_json(text: &str) -> Option<f64> {
        let rest = text.split("\"accuracy\":").nth(1)?;
        rest.split([',', '\n', '}'])
            .next()?
            .trim()
            .parse()
            .ok()
    }
}
