use crate::error::{Error, Result};
use crate::nn::{uniform_tensor, Ctx, Dropout, ParamId, ParamKind, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Conv (length-preserving, no bias) -> batch norm -> ReLU -> max-pool(2).
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub kernel: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub kernel_size: usize,
    pub momentum: f64,
    pub eps: f64,
}

pub const POOL: usize = 2;

impl ConvBlock {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / ((cin * k) as f64).sqrt();
        Self {
            kernel: store.add(format!("{name}.conv.weight"), uniform_tensor(&[cout, cin, k], bound, rng), ParamKind::Trainable),
            gamma: store.add(format!("{name}.bn.weight"), Tensor::full(&[cout], 1.0), ParamKind::Trainable),
            beta: store.add(format!("{name}.bn.bias"), Tensor::zeros(&[cout]), ParamKind::Trainable),
            running_mean: store.add(format!("{name}.bn.running_mean"), Tensor::zeros(&[cout]), ParamKind::Buffer),
            running_var: store.add(format!("{name}.bn.running_var"), Tensor::full(&[cout], 1.0), ParamKind::Buffer),
            kernel_size: k,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// `[B, C_in, L] -> [B, C_out, floor(L / 2)]`.
    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        let k = self.kernel_size;
        let y = x.conv1d_padded(&ctx.param(self.kernel), 1, (k - 1) / 2, k / 2)?;
        let (gamma, beta) = (ctx.param(self.gamma), ctx.param(self.beta));
        let y = if ctx.is_train() {
            let (y, stats) = y.batch_norm(&gamma, &beta, None, self.eps)?;
            let stats = stats.expect("batch statistics in training mode");
            let m = self.momentum;
            let unbias = if stats.count > 1 { stats.count as f64 / (stats.count - 1) as f64 } else { 1.0 };
            let rm = ctx.buffer(self.running_mean);
            let rv = ctx.buffer(self.running_var);
            let rm: Vec<f64> = rm.iter().zip(&stats.mean).map(|(r, b)| (1.0 - m) * r + m * b).collect();
            let rv: Vec<f64> = rv.iter().zip(&stats.var).map(|(r, b)| (1.0 - m) * r + m * b * unbias).collect();
            ctx.push_update(self.running_mean, rm);
            ctx.push_update(self.running_var, rv);
            y
        } else {
            let (rm, rv) = (ctx.buffer(self.running_mean), ctx.buffer(self.running_var));
            y.batch_norm(&gamma, &beta, Some((&rm, &rv)), self.eps)?.0
        };
        y.relu().max_pool1d(POOL, POOL)
    }
}

/// Three convolutional blocks mapping `[B, C, L]` to latents `[B, T, d]`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: Vec<ConvBlock>,
    pub dropout: Dropout,
    pub in_channels: usize,
    pub output_dim: usize,
}

impl Encoder {
    pub fn new(
        store: &mut ParamStore,
        in_channels: usize,
        widths: [usize; 3],
        kernel_size: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if kernel_size == 0 {
            return Err(Error::Config("encoder kernel size must be positive".into()));
        }
        let mut blocks = Vec::with_capacity(3);
        let mut cin = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            blocks.push(ConvBlock::new(store, &format!("enc.{i}"), cin, w, kernel_size, rng));
            cin = w;
        }
        Ok(Self { blocks, dropout: Dropout::new(dropout)?, in_channels, output_dim: widths[2] })
    }

    /// Latent length for an input of length `l`, or `None` if pooling runs out.
    pub fn latent_steps(l: usize) -> Option<usize> {
        let mut t = l;
        for _ in 0..3 {
            if t < POOL {
                return None;
            }
            t /= POOL;
        }
        Some(t)
    }

    pub fn forward(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "encoder expects [B, {}, L], got {:?}",
                self.in_channels, s
            )));
        }
        if Self::latent_steps(s[2]).is_none() {
            return Err(Error::Shape(format!("input length {} too short for three pooling stages", s[2])));
        }
        let mut h = self.blocks[0].forward(ctx, x)?;
        h = self.dropout.forward(ctx, &h)?;
        for block in &self.blocks[1..] {
            h = block.forward(ctx, &h)?;
        }
        h.permute(&[0, 2, 1])
    }
}
