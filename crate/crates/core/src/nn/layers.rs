use super::{uniform_tensor, Ctx, ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Affine map `y = x Wᵀ + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    /// Weight and bias drawn from `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = uniform_tensor(&[out_features, in_features], bound, rng);
        let b = uniform_tensor(&[out_features], bound, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Trainable),
            bias: Some(store.add(format!("{name}.bias"), b, ParamKind::Trainable)),
            in_features,
            out_features,
        }
    }

    pub fn without_bias(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = uniform_tensor(&[out_features, in_features], bound, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Trainable),
            bias: None,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let last = x.shape().last().copied().unwrap_or(0);
        if last != self.in_features {
            return Err(Error::Shape(format!(
                "linear layer expects trailing dimension {}, got shape {:?}",
                self.in_features,
                x.shape()
            )));
        }
        let y = x.matmul(&ctx.param(self.weight).t()?)?;
        match self.bias {
            Some(b) => y.add(&ctx.param(b)),
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[width], 1.0), ParamKind::Trainable),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[width]), ParamKind::Trainable),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&ctx.param(self.gamma), &ctx.param(self.beta), self.eps)
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - p)`; identity outside training.
pub fn dropout(x: &Tensor, p: f64, train: bool, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Param(format!("dropout rate must lie in [0, 1), got {p}")));
    }
    if !train || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.uniform() < p { 0.0 } else { keep })
        .collect();
    x.mul(&Tensor::from_vec(mask, x.shape())?)
}

#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param(format!("dropout rate must lie in [0, 1), got {p}")));
        }
        Ok(Self { p })
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        if !ctx.is_train() || self.p == 0.0 {
            return Ok(x.clone());
        }
        let mut rng = ctx.next_rng();
        dropout(x, self.p, true, &mut rng)
    }
}

/// Two-layer non-linear head mapping contexts into the contrastive space.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub first: Linear,
    pub second: Linear,
}

impl ProjectionHead {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            first: Linear::new(store, &format!("{name}.0"), input, hidden, rng),
            second: Linear::new(store, &format!("{name}.1"), hidden, output, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.second.out_features
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let h = self.first.forward(ctx, x)?.relu();
        self.second.forward(ctx, &h)
    }
}
