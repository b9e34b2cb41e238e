use crate::error::{Error, Result};
use crate::nn::{Ctx, Linear, ParamId, ParamKind, ParamStore, TransformerLayer};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Transformer summarizer: projects latents to width `h`, prepends a learned
/// context token and returns the token's final state.
#[derive(Clone, Debug)]
pub struct ArModel {
    pub projection: Linear,
    pub token: ParamId,
    pub positions: Option<ParamId>,
    pub layers: Vec<TransformerLayer>,
    pub hidden: usize,
}

impl ArModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        latent_dim: usize,
        hidden: usize,
        layers: usize,
        heads: usize,
        dropout: f64,
        max_steps: Option<usize>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let projection = Linear::new(store, "ar.proj", latent_dim, hidden, rng);
        let token_init = (0..hidden).map(|_| rng.normal(0.0, 0.02)).collect();
        let token = store.add("ar.token", Tensor::from_vec(token_init, &[hidden])?, ParamKind::Trainable);
        let positions = max_steps.map(|n| {
            let init = (0..(n + 1) * hidden).map(|_| rng.normal(0.0, 0.02)).collect();
            let t = Tensor::from_vec(init, &[n + 1, hidden]).expect("shape matches");
            store.add("ar.pos", t, ParamKind::Trainable)
        });
        let layers = (0..layers)
            .map(|i| TransformerLayer::new(store, &format!("ar.t.{i}"), hidden, heads, 2 * hidden, dropout, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { projection, token, positions, layers, hidden })
    }

    /// `[B, t, d] -> [B, h]`, using only the given prefix.
    pub fn summarize(&self, ctx: &mut Ctx, prefix: &Tensor) -> Result<Tensor> {
        let s = prefix.shape();
        if s.len() != 3 {
            return Err(Error::Shape(format!("context prefix must be [B, t, d], got {s:?}")));
        }
        let (b, t) = (s[0], s[1]);
        let z = self.projection.forward(ctx, prefix)?;
        let token = ctx.param(self.token).reshape(&[1, 1, self.hidden])?.broadcast_to(&[b, 1, self.hidden])?;
        let mut psi = Tensor::concat(&[token, z], 1)?;
        if let Some(pos) = self.positions {
            let table = ctx.param(pos);
            if t + 1 > table.shape()[0] {
                return Err(Error::Shape(format!(
                    "prefix of {t} steps exceeds the positional table ({})",
                    table.shape()[0] - 1
                )));
            }
            psi = psi.add(&table.narrow(0, 0, t + 1)?.reshape(&[1, t + 1, self.hidden])?)?;
        }
        for layer in &self.layers {
            psi = layer.forward(ctx, &psi)?;
        }
        psi.narrow(1, 0, 1)?.reshape(&[b, self.hidden])
    }
}

/// One independent linear map `h -> d` per predicted step.
#[derive(Clone, Debug)]
pub struct PredictionHeads {
    pub heads: Vec<Linear>,
}

impl PredictionHeads {
    pub fn new(store: &mut ParamStore, k: usize, hidden: usize, latent_dim: usize, rng: &mut Rng) -> Self {
        let heads = (0..k).map(|i| Linear::new(store, &format!("heads.{i}"), hidden, latent_dim, rng)).collect();
        Self { heads }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Prediction of `z_{t+k}` from `c_t`, for `k` in `1..=K`.
    pub fn predict(&self, ctx: &Ctx, c: &Tensor, k: usize) -> Result<Tensor> {
        if k == 0 || k > self.heads.len() {
            return Err(Error::Index { index: k, len: self.heads.len() });
        }
        self.heads[k - 1].forward(ctx, c)
    }

    /// All steps at once: `[B, h] -> [B, K, d]`.
    pub fn predict_all(&self, ctx: &Ctx, c: &Tensor) -> Result<Tensor> {
        let preds = self.heads.iter().map(|h| h.forward(ctx, c)).collect::<Result<Vec<_>>>()?;
        Tensor::stack(&preds)?.permute(&[1, 0, 2])
    }
}
