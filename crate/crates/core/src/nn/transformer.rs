use super::{Ctx, Dropout, LayerNorm, Linear, MultiHeadAttention, ParamStore};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Pre-norm Transformer block:
/// `ψ̃ = MHA(Norm(ψ)) + ψ`, then `ψ' = MLP(Norm(ψ̃)) + ψ̃`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub attn_norm: LayerNorm,
    pub attention: MultiHeadAttention,
    pub mlp_norm: LayerNorm,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
    pub dropout: Dropout,
}

impl TransformerLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        mlp_width: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), width),
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), width, heads, rng)?,
            mlp_norm: LayerNorm::new(store, &format!("{name}.mlp_norm"), width),
            mlp_in: Linear::new(store, &format!("{name}.mlp.0"), width, mlp_width, rng),
            mlp_out: Linear::new(store, &format!("{name}.mlp.1"), mlp_width, width, rng),
            dropout: Dropout::new(dropout)?,
        })
    }

    pub fn attention_sublayer(&self, ctx: &Ctx, psi: &Tensor) -> Result<Tensor> {
        let normed = self.attn_norm.forward(ctx, psi)?;
        self.attention.forward(ctx, &normed)?.add(psi)
    }

    pub fn mlp_sublayer(&self, ctx: &mut Ctx, psi: &Tensor) -> Result<Tensor> {
        let normed = self.mlp_norm.forward(ctx, psi)?;
        let hidden = self.mlp_in.forward(ctx, &normed)?.relu();
        let hidden = self.dropout.forward(ctx, &hidden)?;
        self.mlp_out.forward(ctx, &hidden)?.add(psi)
    }

    pub fn forward(&self, ctx: &mut Ctx, psi: &Tensor) -> Result<Tensor> {
        let mid = self.attention_sublayer(ctx, psi)?;
        self.mlp_sublayer(ctx, &mid)
    }
}
