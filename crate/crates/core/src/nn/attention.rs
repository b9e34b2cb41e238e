use super::{Ctx, Linear, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Unmasked scaled dot-product self-attention split across `heads`.
///
/// Query, key and value projections carry no bias; a key bias would shift
/// every score in a row equally and never receive gradient.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub width: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Param(format!("{heads} heads do not divide width {width}")));
        }
        Ok(Self {
            heads,
            width,
            query: Linear::without_bias(store, &format!("{name}.query"), width, width, rng),
            key: Linear::without_bias(store, &format!("{name}.key"), width, width, rng),
            value: Linear::without_bias(store, &format!("{name}.value"), width, width, rng),
            output: Linear::new(store, &format!("{name}.output"), width, width, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn forward(&self, ctx: &Ctx, seq: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_weights(ctx, seq)?.0)
    }

    /// Output `[B, S, h]` and attention weights `[B * heads, S, S]`.
    pub fn forward_with_weights(&self, ctx: &Ctx, seq: &Tensor) -> Result<(Tensor, Tensor)> {
        let s = seq.shape();
        if s.len() != 3 || s[2] != self.width {
            return Err(Error::Shape(format!(
                "attention expects [B, S, {}], got {:?}",
                self.width, s
            )));
        }
        let (b, len, hd) = (s[0], s[1], self.head_dim());
        let split = |t: Tensor| -> Result<Tensor> {
            t.reshape(&[b, len, self.heads, hd])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[b * self.heads, len, hd])
        };
        let q = split(self.query.forward(ctx, seq)?)?;
        let k = split(self.key.forward(ctx, seq)?)?;
        let v = split(self.value.forward(ctx, seq)?)?;
        let scores = q.matmul(&k.t()?)?.scale(1.0 / (hd as f64).sqrt());
        let weights = scores.softmax(-1)?;
        let mixed = weights
            .matmul(&v)?
            .reshape(&[b, self.heads, len, hd])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, len, self.width])?;
        Ok((self.output.forward(ctx, &mixed)?, weights))
    }
}
