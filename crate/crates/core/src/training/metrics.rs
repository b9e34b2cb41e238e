use crate::error::{Error, Result};

/// Classification quality on one evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// Seed of the run that produced the predictions.
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class F1 is `2tp / (2tp + fp + fn)`, 0 when the denominator is 0.
/// Macro-F1 averages over all `classes`.
pub fn compute_metrics(predicted: &[usize], labels: &[usize], classes: usize) -> Result<MetricsReport> {
    if predicted.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predicted.len(), labels.len())));
    }
    if labels.is_empty() || classes == 0 {
        return Err(Error::Param("metrics need at least one sample and one class".into()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        for v in [p, y] {
            if v >= classes {
                return Err(Error::Index { index: v, len: classes });
            }
        }
        confusion[y][p] += 1;
    }
    let mut precision = Vec::with_capacity(classes);
    let mut recall = Vec::with_capacity(classes);
    let mut f1 = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = confusion[c][c];
        let actual: usize = confusion[c].iter().sum();
        let called: usize = confusion.iter().map(|row| row[c]).sum();
        precision.push(ratio(tp, called));
        recall.push(ratio(tp, actual));
        f1.push(ratio(2 * tp, actual + called));
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        seed: 0,
        accuracy: ratio(correct, labels.len()),
        macro_f1: f1.iter().sum::<f64>() / classes as f64,
        precision,
        recall,
        f1,
        confusion,
    })
}

impl MetricsReport {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Index of the largest entry in each row of a row-major `[n, classes]` buffer.
pub fn argmax_rows(scores: &[f64], classes: usize) -> Vec<usize> {
    scores
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
