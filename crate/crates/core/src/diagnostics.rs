//! Gradient diagnostics: central-difference checks of every primitive,
//! every composite block and every objective, collected as report rows.

use crate::error::Result;
use crate::losses::{
    contextual_contrast_loss, cross_entropy, future_infonce, temporal_contrast_loss, total_loss, AnchorMode,
    TemporalBatchViews,
};
use crate::model::{ConvBlock, PredictionHeads};
use crate::nn::{module_gradcheck, Ctx, MultiHeadAttention, ParamStore, ProjectionHead, TransformerLayer};
use crate::rng::Rng;
use crate::tensor::{finite_diff_check, GradCheckReport, Tensor};

/// Largest accepted relative error.
pub const GRAD_TOL: f64 = 1e-6;
/// Step for single primitives.
pub const EPS_PRIMITIVE: f64 = 1e-5;
/// Step for composite blocks, large enough to keep round-off in deep
/// compositions below the tolerance.
pub const EPS_COMPOSITE: f64 = 2e-5;

fn randn(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.normal(0.0, 1.0)).collect(), shape).expect("sized buffer")
}

/// Random projection so every output entry carries an O(1) gradient.
fn project(y: &Tensor, seed: u64) -> Result<Tensor> {
    let w = randn(y.shape(), &mut Rng::new(seed));
    Ok(y.mul(&w)?.sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub name: String,
    pub group: &'static str,
    /// Number of random instances checked.
    pub instances: usize,
    /// Scalar entries compared over all instances.
    pub entries: usize,
    pub max_rel_error: f64,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOL
    }
}

fn fold(name: &str, group: &'static str, reports: &[GradCheckReport]) -> GradRow {
    GradRow {
        name: name.to_string(),
        group,
        instances: reports.len(),
        entries: reports.iter().map(|r| r.entries).sum(),
        max_rel_error: reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
    }
}

/// Scalar objective over a list of tensors.
pub type Objective = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

/// A named generator of random inputs and the objective to check on them.
pub type Case = (&'static str, fn(&mut Rng) -> (Vec<Tensor>, Objective));

/// One case per differentiable tensor primitive, with random small shapes.
pub fn primitive_cases() -> Vec<Case> {
    vec![
        ("add_broadcast", |r| {
            let a = [1 + r.below(3), 1 + r.below(4)];
            (vec![randn(&a, r), randn(&a[1..], r)], Box::new(|p| project(&p[0].add(&p[1])?, 1)))
        }),
        ("sub", |r| {
            let s = [1 + r.below(4), 1 + r.below(4)];
            (vec![randn(&s, r), randn(&s, r)], Box::new(|p| project(&p[0].sub(&p[1])?, 2)))
        }),
        ("mul_broadcast_column", |r| {
            let (m, n) = (1 + r.below(4), 1 + r.below(4));
            (vec![randn(&[m, n], r), randn(&[m, 1], r)], Box::new(|p| project(&p[0].mul(&p[1])?, 3)))
        }),
        ("div", |r| {
            let s = [1 + r.below(5)];
            let den: Vec<f64> = (0..s[0]).map(|_| 1.0 + r.uniform()).collect();
            (
                vec![randn(&s, r), Tensor::from_vec(den, &s).unwrap()],
                Box::new(|p| project(&p[0].div(&p[1])?, 4)),
            )
        }),
        ("relu", |r| {
            let s = [1 + r.below(6), 1 + r.below(3)];
            (vec![randn(&s, r)], Box::new(|p| project(&p[0].relu(), 5)))
        }),
        ("exp_ln_sqrt", |r| {
            let n = 1 + r.below(6);
            let pos: Vec<f64> = (0..n).map(|_| 0.5 + r.uniform()).collect();
            (
                vec![Tensor::from_vec(pos, &[n]).unwrap()],
                Box::new(|p| project(&p[0].exp().add(&p[0].ln())?.add(&p[0].sqrt())?.scale(0.5).neg().add_scalar(1.0), 6)),
            )
        }),
        ("mean_axis", |r| {
            let s = [1 + r.below(3), 1 + r.below(4), 1 + r.below(3)];
            let axis = r.below(3) as isize;
            (vec![randn(&s, r)], Box::new(move |p| project(&p[0].mean_axis(axis, false)?, 7)))
        }),
        ("matmul", |r| {
            let (m, k, n) = (1 + r.below(4), 1 + r.below(4), 1 + r.below(4));
            (vec![randn(&[m, k], r), randn(&[k, n], r)], Box::new(|p| project(&p[0].matmul(&p[1])?, 8)))
        }),
        ("batched_matmul", |r| {
            let (b, m, k, n) = (1 + r.below(3), 1 + r.below(3), 1 + r.below(3), 1 + r.below(3));
            (vec![randn(&[b, m, k], r), randn(&[b, k, n], r)], Box::new(|p| project(&p[0].matmul(&p[1])?, 9)))
        }),
        ("permute_reshape", |r| {
            let s = [1 + r.below(3), 1 + r.below(3), 1 + r.below(3)];
            (
                vec![randn(&s, r)],
                Box::new(move |p| {
                    let y = p[0].permute(&[2, 0, 1])?;
                    project(&y.reshape(&[y.numel()])?, 10)
                }),
            )
        }),
        ("broadcast_to", |r| {
            let n = 1 + r.below(4);
            let b = 1 + r.below(3);
            (vec![randn(&[1, n], r)], Box::new(move |p| project(&p[0].broadcast_to(&[b, 2, n])?, 11)))
        }),
        ("softmax", |r| {
            let s = [1 + r.below(3), 2 + r.below(4)];
            let axis = r.below(2) as isize;
            (vec![randn(&s, r)], Box::new(move |p| project(&p[0].softmax(axis)?, 12)))
        }),
        ("log_softmax", |r| {
            let s = [1 + r.below(3), 2 + r.below(4)];
            (vec![randn(&s, r)], Box::new(|p| project(&p[0].log_softmax(-1)?, 13)))
        }),
        ("conv1d", |r| {
            let (b, cin, cout, k) = (1 + r.below(2), 1 + r.below(3), 1 + r.below(3), 1 + r.below(4));
            let len = k + r.below(6);
            let stride = 1 + r.below(2);
            let (pl, pr) = (r.below(3), r.below(3));
            (
                vec![randn(&[b, cin, len], r), randn(&[cout, cin, k], r)],
                Box::new(move |p| project(&p[0].conv1d_padded(&p[1], stride, pl, pr)?, 14)),
            )
        }),
        ("max_pool1d", |r| {
            let s = [1 + r.below(2), 1 + r.below(3), 2 + r.below(8)];
            (vec![randn(&s, r)], Box::new(|p| project(&p[0].max_pool1d(2, 2)?, 15)))
        }),
        ("batch_norm", |r| {
            // groups of two normalize to +-1 and carry no input gradient
            let (b, c, l) = (1 + r.below(3), 1 + r.below(3), 3 + r.below(5));
            (
                vec![randn(&[b, c, l], r), randn(&[c], r), randn(&[c], r)],
                Box::new(|p| project(&p[0].batch_norm(&p[1], &p[2], None, 1e-5)?.0, 16)),
            )
        }),
        ("batch_norm_fixed", |r| {
            let (b, c, l) = (1 + r.below(3), 1 + r.below(3), 1 + r.below(5));
            let mean: Vec<f64> = (0..c).map(|_| r.normal(0.0, 1.0)).collect();
            let var: Vec<f64> = (0..c).map(|_| 0.5 + r.uniform()).collect();
            (
                vec![randn(&[b, c, l], r), randn(&[c], r), randn(&[c], r)],
                Box::new(move |p| project(&p[0].batch_norm(&p[1], &p[2], Some((&mean, &var)), 1e-5)?.0, 17)),
            )
        }),
        ("layer_norm", |r| {
            let s = [1 + r.below(3), 3 + r.below(5)];
            let n = s[1];
            (
                vec![randn(&s, r), randn(&[n], r), randn(&[n], r)],
                Box::new(|p| project(&p[0].layer_norm(&p[1], &p[2], 1e-5)?, 18)),
            )
        }),
        ("concat_narrow", |r| {
            let (a, b, n) = (1 + r.below(3), 1 + r.below(3), 1 + r.below(3));
            (
                vec![randn(&[2, a, n], r), randn(&[2, b, n], r)],
                Box::new(move |p| {
                    let c = Tensor::concat(&[p[0].clone(), p[1].clone()], 1)?;
                    project(&c.narrow(1, 1, a + b - 1).or_else(|_| c.narrow(1, 0, 1))?, 19)
                }),
            )
        }),
        ("gather_rows", |r| {
            let (n, m) = (1 + r.below(4), 1 + r.below(4));
            let idx: Vec<usize> = (0..n).map(|_| r.below(m)).collect();
            (vec![randn(&[n, m], r)], Box::new(move |p| project(&p[0].gather_rows(&idx)?, 20)))
        }),
        ("neg_scale_square", |r| {
            let s = [1 + r.below(4), 1 + r.below(3)];
            (vec![randn(&s, r)], Box::new(|p| project(&p[0].neg().scale(0.7).square(), 21)))
        }),
        ("sum_axis", |r| {
            let s = [1 + r.below(3), 1 + r.below(4), 1 + r.below(3)];
            let axis = r.below(3) as isize - 3;
            (vec![randn(&s, r)], Box::new(move |p| project(&p[0].sum_axis(axis, true)?, 22)))
        }),
        ("stack_transpose", |r| {
            let s = [1 + r.below(3), 1 + r.below(3)];
            (
                vec![randn(&s, r), randn(&s, r)],
                Box::new(|p| project(&Tensor::stack(&[p[0].t()?, p[1].t()?])?, 23)),
            )
        }),
    ]
}

fn composite_cases(seed: u64) -> Result<Vec<(&'static str, &'static str, GradCheckReport)>> {
    let mut rng = Rng::new(0xD1A6 + seed);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let block = ConvBlock::new(&mut store, "blk", 2, 3, 4, &mut rng);
    let x = randn(&[2, 2, 10], &mut rng);
    let r = module_gradcheck(
        &store,
        &[x],
        |s, p| project(&block.forward(&mut Ctx::train(s, Rng::new(0)), &p[0])?, 31),
        EPS_COMPOSITE,
    )?;
    out.push(("encoder_block", "block", r));

    let mut store = ParamStore::new();
    let att = MultiHeadAttention::new(&mut store, "att", 4, 2, &mut rng)?;
    let x = randn(&[2, 3, 4], &mut rng);
    let r = module_gradcheck(&store, &[x], |s, p| project(&att.forward(&Ctx::eval(s), &p[0])?, 32), EPS_COMPOSITE)?;
    out.push(("multi_head_attention", "block", r));

    let mut store = ParamStore::new();
    let layer = TransformerLayer::new(&mut store, "tr", 4, 2, 8, 0.2, &mut rng)?;
    let x = randn(&[2, 3, 4], &mut rng);
    // Training mode with a fixed stream: the dropout masks are identical on
    // every evaluation.
    let r = module_gradcheck(
        &store,
        &[x],
        |s, p| project(&layer.forward(&mut Ctx::train(s, Rng::new(5)), &p[0])?, 33),
        EPS_COMPOSITE,
    )?;
    out.push(("transformer_layer", "block", r));

    let mut store = ParamStore::new();
    let head = ProjectionHead::new(&mut store, "proj", 5, 3, 3, &mut rng);
    let x = randn(&[4, 5], &mut rng);
    let r = module_gradcheck(&store, &[x], |s, p| project(&head.forward(&Ctx::eval(s), &p[0])?, 34), EPS_COMPOSITE)?;
    out.push(("projection_head", "block", r));

    let (b, k, d) = (2 + rng.below(3), 1 + rng.below(3), 1 + rng.below(5));
    let r = finite_diff_check(
        |p| future_infonce(&p[0], &p[1]),
        &[randn(&[b, k, d], &mut rng), randn(&[b, k, d], &mut rng)],
        EPS_PRIMITIVE,
    )?;
    out.push(("temporal_contrast_loss", "loss", r));

    let (n, h) = (1 + rng.below(3), 2 + rng.below(5));
    let mode = if seed.is_multiple_of(2) { AnchorMode::Symmetric2N } else { AnchorMode::PaperN };
    let r = finite_diff_check(
        |p| contextual_contrast_loss(&p[0], 0.2, mode),
        &[randn(&[2 * n, h], &mut rng)],
        EPS_PRIMITIVE,
    )?;
    out.push(("contextual_contrast_loss", "loss", r));

    let (n, c) = (1 + rng.below(4), 2 + rng.below(3));
    let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
    let r = finite_diff_check(|p| cross_entropy(&p[0], &labels), &[randn(&[n, c], &mut rng)], EPS_PRIMITIVE)?;
    out.push(("cross_entropy", "loss", r));

    // Weighted objective over contexts and future latents, through the
    // prediction heads and the projection head.
    let (b, k, d, h) = (2 + rng.below(3), 1 + rng.below(3), 1 + rng.below(4), 2 + rng.below(4));
    let mut store = ParamStore::new();
    let heads = PredictionHeads::new(&mut store, k, h, d, &mut rng);
    let proj = ProjectionHead::new(&mut store, "proj", h, 3, 3, &mut rng);
    let inputs = [
        randn(&[b, h], &mut rng),
        randn(&[b, h], &mut rng),
        randn(&[b, k, d], &mut rng),
        randn(&[b, k, d], &mut rng),
    ];
    let r = module_gradcheck(
        &store,
        &inputs,
        |s, p| {
            let ctx = Ctx::eval(s);
            let views = TemporalBatchViews {
                c_strong: p[0].clone(),
                c_weak: p[1].clone(),
                z_strong: p[2].clone(),
                z_weak: p[3].clone(),
                heads: &heads,
            };
            let (l_s, l_w) = temporal_contrast_loss(&ctx, &views, true)?;
            let z = proj.forward(&ctx, &Tensor::concat(&[p[0].clone(), p[1].clone()], 0)?)?;
            let l_cc = contextual_contrast_loss(&z, 0.2, AnchorMode::Symmetric2N)?;
            total_loss(&l_s, &l_w, Some(&l_cc), 1.0, 0.7)
        },
        EPS_COMPOSITE,
    )?;
    out.push(("total_objective", "loss", r));
    Ok(out)
}

/// Checks `instances` random draws of every primitive and a few instances
/// of every composite, returning one row per name.
pub fn gradient_suite(instances: u64) -> Result<Vec<GradRow>> {
    let mut rows = Vec::new();
    for (name, build) in primitive_cases() {
        let mut reports = Vec::new();
        for seed in 0..instances {
            let mut rng = Rng::new(1000 + seed);
            let (params, f) = build(&mut rng);
            reports.push(finite_diff_check(|p| f(p), &params, EPS_PRIMITIVE)?);
        }
        rows.push(fold(name, "primitive", &reports));
    }
    let composite_runs = instances.clamp(1, 10);
    let mut grouped: Vec<(&'static str, &'static str, Vec<GradCheckReport>)> = Vec::new();
    for seed in 0..composite_runs {
        for (name, group, r) in composite_cases(seed)? {
            match grouped.iter_mut().find(|(n, _, _)| *n == name) {
                Some(entry) => entry.2.push(r),
                None => grouped.push((name, group, vec![r])),
            }
        }
    }
    rows.extend(grouped.iter().map(|(n, g, r)| fold(n, g, r)));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let rows = gradient_suite(3).unwrap();
        assert!(rows.len() > 25);
        for r in &rows {
            assert!(r.passed(), "{r:?}");
            assert!(r.entries > 0);
        }
        for name in ["encoder_block", "multi_head_attention", "transformer_layer", "projection_head", "total_objective"] {
            assert!(rows.iter().any(|r| r.name == name), "{name}");
        }
    }
}
