//! Numeric agreement and invariance checks of the objectives and
//! augmentations, reported as rows with an observed error and a bound.

use crate::augment::{strong_augment, weak_augment, AugmentParams};
use crate::data::TimeSeriesBatch;
use crate::error::Result;
use crate::losses::{contextual_contrast_loss, cross_entropy, future_infonce, AnchorMode};
use crate::oracle;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Bound for agreement between vectorized losses and loop references.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub cases: usize,
    /// Largest absolute deviation seen.
    pub max_error: f64,
    /// The row passes when `max_error <= tolerance`.
    pub tolerance: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn row(name: &str, errors: &[f64], tolerance: f64) -> CheckRow {
    let max_error = errors.iter().fold(0.0f64, |m, &e| if e.is_nan() { f64::INFINITY } else { m.max(e) });
    CheckRow { name: name.to_string(), cases: errors.len(), max_error, tolerance }
}

fn randn(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal(0.0, 1.0)).collect()
}

fn tensor(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
    Tensor::from_vec(data, shape)
}

fn rows_of(t: &[f64], h: usize) -> Vec<Vec<f64>> {
    t.chunks(h).map(<[f64]>::to_vec).collect()
}

fn cc(data: &[f64], rows: usize, h: usize, tau: f64, mode: AnchorMode) -> Result<f64> {
    Ok(contextual_contrast_loss(&tensor(data.to_vec(), &[rows, h])?, tau, mode)?.item())
}

/// Vectorized losses against the double-loop references on `cases` random
/// draws each (B ≤ 4, K ≤ 3, d ≤ 5, h ≤ 6), plus the closed-form values.
pub fn oracle_suite(cases: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let root = Rng::new(seed);
    let mut out = Vec::new();

    let mut rng = root.split(1);
    let mut errs = Vec::with_capacity(cases);
    for _ in 0..cases {
        let (b, k, d) = (1 + rng.below(4), 1 + rng.below(3), 1 + rng.below(5));
        let p = randn(&mut rng, b * k * d);
        let t = randn(&mut rng, b * k * d);
        let got = future_infonce(&tensor(p.clone(), &[b, k, d])?, &tensor(t.clone(), &[b, k, d])?)?.item();
        errs.push((got - oracle::temporal_loss(&p, &t, b, k, d)).abs());
    }
    out.push(row("temporal_vs_loop", &errs, ORACLE_TOL));

    for (tag, mode) in [(2, AnchorMode::Symmetric2N), (3, AnchorMode::PaperN)] {
        let mut rng = root.split(tag);
        let mut errs = Vec::with_capacity(cases);
        for _ in 0..cases {
            let (n, h) = (1 + rng.below(4), 1 + rng.below(6));
            let tau = rng.uniform_range(0.05, 2.0);
            let data = randn(&mut rng, 2 * n * h);
            let got = cc(&data, 2 * n, h, tau, mode)?;
            errs.push((got - oracle::contextual_loss(&rows_of(&data, h), tau, mode)).abs());
        }
        out.push(row(&format!("contextual_vs_loop_{mode}"), &errs, ORACLE_TOL));
    }

    let mut rng = root.split(4);
    let mut errs = Vec::with_capacity(cases);
    for _ in 0..cases {
        let (b, c) = (1 + rng.below(6), 2 + rng.below(5));
        let logits = randn(&mut rng, b * c);
        let labels: Vec<usize> = (0..b).map(|_| rng.below(c)).collect();
        let got = cross_entropy(&tensor(logits.clone(), &[b, c])?, &labels)?.item();
        errs.push((got - oracle::cross_entropy(&rows_of(&logits, c), &labels)).abs());
    }
    out.push(row("cross_entropy_vs_loop", &errs, ORACLE_TOL));

    let mut rng = root.split(5);
    let single = future_infonce(&tensor(randn(&mut rng, 12), &[1, 3, 4])?, &tensor(randn(&mut rng, 12), &[1, 3, 4])?)?;
    out.push(row("temporal_single_sample_is_zero", &[single.item().abs()], 0.0));

    let pm = tensor(vec![1.0, -1.0], &[2, 1, 1])?;
    let two = future_infonce(&pm, &pm)?.item();
    out.push(row("temporal_hand_0.126928", &[(two - 0.126928).abs()], 5e-7));

    let same = [1.0, 2.0, -1.0].repeat(4);
    let errs: Vec<f64> = [0.05, 0.2, 3.0]
        .iter()
        .map(|&tau| cc(&same, 4, 3, tau, AnchorMode::Symmetric2N).map(|v| (v - 3f64.ln()).abs()))
        .collect::<Result<_>>()?;
    out.push(row("contextual_identical_ln3", &errs, 1e-12));

    let ortho = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
    let v = cc(&ortho, 4, 2, 0.2, AnchorMode::Symmetric2N)?;
    let exact = (1.0 + 2.0 * (-5f64).exp()).ln();
    out.push(row("contextual_orthogonal_closed_form", &[(v - exact).abs()], 1e-12));
    out.push(row("contextual_orthogonal_0.013386", &[(v - 0.013386).abs()], 5e-7));
    Ok(out)
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
fn orthogonal(h: usize, rng: &mut Rng) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < h {
        let mut v = randn(rng, h);
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    q.concat()
}

fn sorted_bits(x: &[f64]) -> Vec<u64> {
    let mut b: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
    b.sort_unstable();
    b
}

/// Symmetries the objectives and augmentations must respect, each on
/// `cases` random draws.
pub fn invariance_suite(cases: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let root = Rng::new(seed);
    let mode = AnchorMode::Symmetric2N;
    let (mut rot, mut scale, mut perm_cc, mut perm_tc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut rng = root.split(1);
    for _ in 0..cases {
        let (n, h) = (2 + rng.below(3), 2 + rng.below(5));
        let data = randn(&mut rng, 2 * n * h);
        let base = cc(&data, 2 * n, h, 0.2, mode)?;

        let q = tensor(orthogonal(h, &mut rng), &[h, h])?;
        let rotated = tensor(data.clone(), &[2 * n, h])?.matmul(&q)?;
        rot.push((contextual_contrast_loss(&rotated, 0.2, mode)?.item() - base).abs());

        let mut scaled = data.clone();
        for r in scaled.chunks_mut(h) {
            let s = rng.uniform_range(0.01, 100.0);
            r.iter_mut().for_each(|v| *v *= s);
        }
        scale.push((cc(&scaled, 2 * n, h, 0.2, mode)? - base).abs());

        let perm = rng.permutation(n);
        let mut shuffled = Vec::with_capacity(data.len());
        for half in 0..2 {
            for &i in &perm {
                shuffled.extend_from_slice(&data[(half * n + i) * h..(half * n + i + 1) * h]);
            }
        }
        perm_cc.push((cc(&shuffled, 2 * n, h, 0.2, mode)? - base).abs());

        let (b, k, d) = (2 + rng.below(4), 1 + rng.below(3), 1 + rng.below(5));
        let (p, t) = (randn(&mut rng, b * k * d), randn(&mut rng, b * k * d));
        let tc = |p: Vec<f64>, t: Vec<f64>| -> Result<f64> {
            Ok(future_infonce(&tensor(p, &[b, k, d])?, &tensor(t, &[b, k, d])?)?.item())
        };
        let base = tc(p.clone(), t.clone())?;
        let perm = rng.permutation(b);
        let gather = |x: &[f64]| perm.iter().flat_map(|&i| x[i * k * d..(i + 1) * k * d].to_vec()).collect();
        perm_tc.push((tc(gather(&p), gather(&t))? - base).abs());
    }
    let mut out = vec![
        row("contextual_orthogonal_transform", &rot, ORACLE_TOL),
        row("contextual_positive_scaling", &scale, ORACLE_TOL),
        row("contextual_batch_permutation", &perm_cc, ORACLE_TOL),
        row("temporal_batch_permutation", &perm_tc, ORACLE_TOL),
    ];

    let mut rng = root.split(2);
    let (mut ident_w, mut ident_s, mut multiset) = (Vec::new(), Vec::new(), Vec::new());
    let weak_id = AugmentParams { scale_mean: 1.0, scale_sigma: 0.0, jitter_sigma_weak: 0.0, ..AugmentParams::default() };
    let strong_id = AugmentParams { max_segments: 1, jitter_sigma_strong: 0.0, ..AugmentParams::default() };
    let no_jitter = AugmentParams { jitter_sigma_strong: 0.0, ..AugmentParams::default() };
    for i in 0..cases {
        let (b, c, l) = (1 + rng.below(5), 1 + rng.below(4), 10 + rng.below(60));
        let x = TimeSeriesBatch::from_values(randn(&mut rng, b * c * l), b, c, l)?;
        let r = root.split(100 + i as u64);
        let differs = |y: &TimeSeriesBatch| {
            let same = y.values.iter().zip(&x.values).all(|(a, b)| a.to_bits() == b.to_bits());
            if same { 0.0 } else { 1.0 }
        };
        ident_w.push(differs(&weak_augment(&x, &weak_id, &r)?));
        ident_s.push(differs(&strong_augment(&x, &strong_id, &r)?));
        let y = strong_augment(&x, &no_jitter, &r)?;
        let mut bad = 0.0;
        for (a, b) in x.values.chunks(l).zip(y.values.chunks(l)) {
            if sorted_bits(a) != sorted_bits(b) {
                bad = 1.0;
            }
        }
        multiset.push(bad);
    }
    out.push(row("weak_identity_config_bit_identical", &ident_w, 0.0));
    out.push(row("strong_identity_config_bit_identical", &ident_s, 0.0));
    out.push(row("strong_preserves_channel_multisets", &multiset, 0.0));
    Ok(out)
}
