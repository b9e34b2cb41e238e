use super::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / (|numeric| + 1e-12)` over every scalar entry.
    pub max_rel_error: f64,
    /// `(parameter index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub entries: usize,
}

/// Checks the gradients of the scalar `f` at `params` against central differences.
///
/// `f` must be deterministic. Each parameter is handed to `f` as a fresh leaf;
/// gradients come from one backward sweep.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = params.iter().map(Tensor::requiring_grad).collect();
    let loss = f(&leaves)?;
    ensure_finite(loss.item())?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();
    compare_with_central_differences(f, params, &analytic, eps)
}

/// Central-difference comparison against caller-supplied analytic gradients.
///
/// Uses the five-point stencil `(8(f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`,
/// whose truncation error is fourth order in `h`.
pub fn compare_with_central_differences<F>(
    f: F,
    params: &[Tensor],
    analytic: &[Vec<f64>],
    eps: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if !(eps > 0.0) {
        return Err(Error::Param(format!("finite-difference step must be > 0, got {eps}")));
    }
    let base: Vec<Tensor> = params.iter().map(Tensor::detach).collect();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), entries: 0 };
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = p.to_vec();
                data[j] += delta;
                let mut args = base.clone();
                args[pi] = Tensor::from_vec(data, p.shape())?;
                let v = f(&args)?.item();
                ensure_finite(v)?;
                Ok(v)
            };
            let numeric = (8.0 * (eval(eps)? - eval(-eps)?) - (eval(2.0 * eps)? - eval(-2.0 * eps)?)) / (12.0 * eps);
            let err = (analytic[pi][j] - numeric).abs() / (numeric.abs() + 1e-12);
            if err > report.max_rel_error || report.entries == 0 {
                report.max_rel_error = err;
                report.worst = (pi, j);
            }
            report.entries += 1;
        }
    }
    Ok(report)
}

fn ensure_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("objective evaluated to {v}")))
    }
}
