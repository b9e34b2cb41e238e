//! Plain-loop reference implementations of the objectives and the optimizer
//! update. They share no code with the tensor paths and exist to cross-check
//! them.

use crate::losses::AnchorMode;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Future-step InfoNCE for row-major `[B, K, d]` predictions and targets.
pub fn temporal_loss(pred: &[f64], target: &[f64], b: usize, k: usize, d: usize) -> f64 {
    let row = |x: &[f64], i: usize, s: usize| x[(i * k + s) * d..(i * k + s + 1) * d].to_vec();
    let mut total = 0.0;
    for i in 0..b {
        for s in 0..k {
            let p = row(pred, i, s);
            let scores: Vec<f64> = (0..b).map(|n| dot(&p, &row(target, n, s))).collect();
            total += log_sum_exp(&scores) - scores[i];
        }
    }
    total / (b * k) as f64
}

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    dot(u, v) / (dot(u, u).sqrt() * dot(v, v).sqrt())
}

/// NT-Xent over `2N` contexts, rows `i` and `i + N` paired.
pub fn contextual_loss(contexts: &[Vec<f64>], tau: f64, mode: AnchorMode) -> f64 {
    let m = contexts.len();
    let n = m / 2;
    let per_anchor: Vec<f64> = (0..m)
        .map(|i| {
            let pos = if i < n { i + n } else { i - n };
            let others: Vec<f64> =
                (0..m).filter(|&j| j != i).map(|j| cosine(&contexts[i], &contexts[j]) / tau).collect();
            log_sum_exp(&others) - cosine(&contexts[i], &contexts[pos]) / tau
        })
        .collect();
    match mode {
        AnchorMode::Symmetric2N => per_anchor.iter().sum::<f64>() / m as f64,
        AnchorMode::PaperN => per_anchor[..n].iter().sum(),
    }
}

pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    logits.iter().zip(labels).map(|(row, &y)| log_sum_exp(row) - row[y]).sum::<f64>() / labels.len() as f64
}

/// Scalar Adam with decoupled weight decay; returns the parameter after each
/// gradient in `grads`.
pub fn adam_trajectory(p0: f64, grads: &[f64], lr: f64, wd: f64, beta1: f64, beta2: f64, eps: f64) -> Vec<f64> {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    let mut out = Vec::with_capacity(grads.len());
    for (step, &g) in grads.iter().enumerate() {
        let t = (step + 1) as i32;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        let m_hat = m / (1.0 - beta1.powi(t));
        let v_hat = v / (1.0 - beta2.powi(t));
        p = p - lr * m_hat / (v_hat.sqrt() + eps) - lr * wd * p;
        out.push(p);
    }
    out
}
