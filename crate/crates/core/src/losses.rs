//! Temporal and contextual contrastive objectives, their weighted sum and
//! cross-entropy for the supervised phases.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::PredictionHeads;
use crate::nn::Ctx;
use crate::tensor::Tensor;

/// InfoNCE over future steps: for every sample `i` and step `k`, the score of
/// `pred[i,k]` against `target[n,k]` for all `n` in the batch, with `n = i`
/// the positive. Returns the mean over samples and steps.
pub fn future_infonce(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let (sp, st) = (pred.shape(), target.shape());
    if sp.len() != 3 || sp != st {
        return Err(Error::Shape(format!("future_infonce expects equal [B, K, d] inputs, got {sp:?} and {st:?}")));
    }
    let (b, k) = (sp[0], sp[1]);
    let p = pred.permute(&[1, 0, 2])?;
    let t = target.permute(&[1, 2, 0])?;
    let scores = p.matmul(&t)?;
    let logp = scores.log_softmax(-1)?.reshape(&[k * b, b])?;
    let index: Vec<usize> = (0..k * b).map(|r| r % b).collect();
    Ok(logp.gather_rows(&index)?.mean().neg())
}

/// Contexts and future latents of both views for one batch.
pub struct TemporalBatchViews<'a> {
    pub c_strong: Tensor,
    pub c_weak: Tensor,
    /// `z_{t+1..t+K}` of the strong view, `[B, K, d]`.
    pub z_strong: Tensor,
    pub z_weak: Tensor,
    pub heads: &'a PredictionHeads,
}

/// `(L_s, L_w)`. Cross-view: the strong context predicts the weak view's
/// future and vice versa. Otherwise each context predicts its own view.
pub fn temporal_contrast_loss(ctx: &Ctx, v: &TemporalBatchViews, cross_view: bool) -> Result<(Tensor, Tensor)> {
    for z in [&v.z_strong, &v.z_weak] {
        if z.rank() != 3 || z.shape()[1] != v.heads.len() {
            return Err(Error::Shape(format!(
                "future latents {:?} do not match {} prediction heads",
                z.shape(),
                v.heads.len()
            )));
        }
    }
    let pred_s = v.heads.predict_all(ctx, &v.c_strong)?;
    let pred_w = v.heads.predict_all(ctx, &v.c_weak)?;
    let (target_s, target_w) = if cross_view { (&v.z_weak, &v.z_strong) } else { (&v.z_strong, &v.z_weak) };
    Ok((future_infonce(&pred_s, target_s)?, future_infonce(&pred_w, target_w)?))
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("cosine_sim of lengths {} and {}", u.len(), v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AnchorMode {
    /// Mean over all `2N` anchors.
    #[default]
    Symmetric2N,
    /// Sum over the first `N` anchors (the strong-view contexts).
    PaperN,
}

impl fmt::Display for AnchorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnchorMode::Symmetric2N => "symmetric_2n",
            AnchorMode::PaperN => "paper_n",
        })
    }
}

impl FromStr for AnchorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric_2n" => Ok(AnchorMode::Symmetric2N),
            "paper_n" => Ok(AnchorMode::PaperN),
            _ => Err(Error::Config(format!("unknown anchor mode `{s}` (symmetric_2n | paper_n)"))),
        }
    }
}

/// NT-Xent over `2N` projected contexts where rows `i` and `i + N` are the two
/// views of sample `i`. Every other row is in the denominator.
pub fn contextual_contrast_loss(z: &Tensor, tau: f64, mode: AnchorMode) -> Result<Tensor> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Param(format!("temperature must be positive, got {tau}")));
    }
    let s = z.shape();
    if s.len() != 2 || !s[0].is_multiple_of(2) {
        return Err(Error::Shape(format!("contextual loss needs [2N, h] contexts, got {s:?}")));
    }
    let (m, h) = (s[0], s[1]);
    let n = m / 2;
    if z.data().chunks(h).any(|row| row.iter().all(|&v| v == 0.0)) {
        return Err(Error::Numeric("cosine similarity of a zero vector".into()));
    }
    let norms = z.square().sum_axis(1, true)?.sqrt();
    let unit = z.div(&norms)?;
    let sim = unit.matmul(&unit.t()?)?.scale(1.0 / tau);
    let mut mask = vec![0.0; m * m];
    for i in 0..m {
        mask[i * m + i] = f64::NEG_INFINITY;
    }
    let logp = sim.add(&Tensor::from_vec(mask, &[m, m])?)?.log_softmax(-1)?;
    let positives: Vec<usize> = (0..m).map(|i| (i + n) % m).collect();
    let per_anchor = logp.gather_rows(&positives)?.neg();
    match mode {
        AnchorMode::Symmetric2N => Ok(per_anchor.mean()),
        AnchorMode::PaperN => Ok(per_anchor.narrow(0, 0, n)?.sum()),
    }
}

/// Scalar parts of one objective evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_tc_s: f64,
    pub l_tc_w: f64,
    pub l_cc: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    pub fn new(l_tc_s: f64, l_tc_w: f64, l_cc: f64, lambda1: f64, lambda2: f64) -> Self {
        let total = lambda1 * (l_tc_s + l_tc_w) + lambda2 * l_cc;
        Self { l_tc_s, l_tc_w, l_cc, total, lambda1, lambda2 }
    }
}

/// `lambda1 * (l_s + l_w) + lambda2 * l_cc`; an absent `l_cc` contributes 0.
pub fn total_loss(l_s: &Tensor, l_w: &Tensor, l_cc: Option<&Tensor>, lambda1: f64, lambda2: f64) -> Result<Tensor> {
    if !(lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::Param(format!("loss weights must be non-negative, got {lambda1}, {lambda2}")));
    }
    let tc = l_s.add(l_w)?.scale(lambda1);
    match l_cc {
        Some(cc) => tc.add(&cc.scale(lambda2)),
        None => Ok(tc),
    }
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::Shape(format!("cross_entropy needs [B, classes] logits for {} labels, got {s:?}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s[1]) {
        return Err(Error::Index { index: bad, len: s[1] });
    }
    Ok(logits.log_softmax(-1)?.gather_rows(labels)?.mean().neg())
}
