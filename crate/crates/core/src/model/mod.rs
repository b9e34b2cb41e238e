//! The TS-TCC network: convolutional encoder, Transformer summarizer,
//! per-step prediction heads and the projection head for contextual
//! contrasting.

mod ar;
mod checkpoint;
mod encoder;

pub use ar::{ArModel, PredictionHeads};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{ConvBlock, Encoder, POOL};

use crate::config::ConfigDoc;
use crate::error::{Error, Result};
use crate::nn::{Ctx, ParamStore, ProjectionHead};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub input_length: usize,
    pub conv_widths: [usize; 2],
    /// Latent width `d`.
    pub latent_dim: usize,
    pub kernel_size: usize,
    pub encoder_dropout: f64,
    /// Transformer width `h`.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub k_ratio: f64,
    pub random_t: bool,
    pub positional: bool,
    pub proj_hidden: usize,
    pub proj_out: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_length: 128,
            conv_widths: [32, 64],
            latent_dim: 128,
            kernel_size: 8,
            encoder_dropout: 0.35,
            hidden: 100,
            layers: 4,
            heads: 4,
            dropout: 0.1,
            k_ratio: 0.4,
            random_t: false,
            positional: false,
            proj_hidden: 50,
            proj_out: 50,
        }
    }
}

const MODEL_KEYS: &[&str] = &[
    "in_channels",
    "input_length",
    "conv_widths",
    "latent_dim",
    "kernel_size",
    "encoder_dropout",
    "hidden",
    "layers",
    "heads",
    "dropout",
    "k_ratio",
    "random_t",
    "positional",
    "proj_hidden",
    "proj_out",
];

impl ModelConfig {
    /// Latent steps `T` produced by the encoder.
    pub fn latent_steps(&self) -> Option<usize> {
        Encoder::latent_steps(self.input_length)
    }

    /// Number of predicted steps `K = floor(k_ratio * T)`.
    pub fn horizon(&self) -> Option<usize> {
        self.latent_steps().map(|t| (self.k_ratio * t as f64).floor() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let positive = [
            ("in_channels", self.in_channels),
            ("conv_widths[0]", self.conv_widths[0]),
            ("conv_widths[1]", self.conv_widths[1]),
            ("latent_dim", self.latent_dim),
            ("kernel_size", self.kernel_size),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("proj_hidden", self.proj_hidden),
            ("proj_out", self.proj_out),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("model.{name} must be positive"));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("model.heads ({}) must divide model.hidden ({})", self.heads, self.hidden));
        }
        for (name, p) in [("dropout", self.dropout), ("encoder_dropout", self.encoder_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("model.{name} must lie in [0, 1), got {p}"));
            }
        }
        let Some(t) = self.latent_steps() else {
            return bad(format!("input length {} too short for the encoder", self.input_length));
        };
        if !(self.k_ratio > 0.0 && self.k_ratio < 1.0) {
            return bad(format!("model.k_ratio must lie in (0, 1), got {}", self.k_ratio));
        }
        let k = self.horizon().unwrap_or(0);
        if k == 0 || k >= t {
            return bad(format!(
                "k_ratio {} gives {k} predicted steps for {t} latent steps; need 1..{t}",
                self.k_ratio
            ));
        }
        Ok(())
    }

    pub fn write(&self, doc: &mut ConfigDoc) {
        let s = "model";
        doc.set(s, "in_channels", self.in_channels);
        doc.set(s, "input_length", self.input_length);
        doc.set(s, "conv_widths", format!("{},{}", self.conv_widths[0], self.conv_widths[1]));
        doc.set(s, "latent_dim", self.latent_dim);
        doc.set(s, "kernel_size", self.kernel_size);
        doc.set(s, "encoder_dropout", self.encoder_dropout);
        doc.set(s, "hidden", self.hidden);
        doc.set(s, "layers", self.layers);
        doc.set(s, "heads", self.heads);
        doc.set(s, "dropout", self.dropout);
        doc.set(s, "k_ratio", self.k_ratio);
        doc.set(s, "random_t", self.random_t);
        doc.set(s, "positional", self.positional);
        doc.set(s, "proj_hidden", self.proj_hidden);
        doc.set(s, "proj_out", self.proj_out);
    }

    /// Starts from defaults and applies whatever keys the document sets.
    pub fn read(doc: &ConfigDoc) -> Result<Self> {
        let s = "model";
        doc.check_known(s, MODEL_KEYS)?;
        let mut c = Self::default();
        doc.read_into(s, "in_channels", &mut c.in_channels)?;
        doc.read_into(s, "input_length", &mut c.input_length)?;
        if let Some(w) = doc.get(s, "conv_widths") {
            let parts: Vec<_> = w.split(',').map(|p| p.trim().parse::<usize>()).collect();
            match parts.as_slice() {
                [Ok(a), Ok(b)] => c.conv_widths = [*a, *b],
                _ => return Err(Error::Config(format!("model.conv_widths = `{w}` is not two integers"))),
            }
        }
        doc.read_into(s, "latent_dim", &mut c.latent_dim)?;
        doc.read_into(s, "kernel_size", &mut c.kernel_size)?;
        doc.read_into(s, "encoder_dropout", &mut c.encoder_dropout)?;
        doc.read_into(s, "hidden", &mut c.hidden)?;
        doc.read_into(s, "layers", &mut c.layers)?;
        doc.read_into(s, "heads", &mut c.heads)?;
        doc.read_into(s, "dropout", &mut c.dropout)?;
        doc.read_into(s, "k_ratio", &mut c.k_ratio)?;
        doc.read_into(s, "random_t", &mut c.random_t)?;
        doc.read_into(s, "positional", &mut c.positional)?;
        doc.read_into(s, "proj_hidden", &mut c.proj_hidden)?;
        doc.read_into(s, "proj_out", &mut c.proj_out)?;
        Ok(c)
    }
}

#[derive(Clone, Debug)]
pub struct TsTcc {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub ar: ArModel,
    pub heads: PredictionHeads,
    pub projection: ProjectionHead,
}

impl TsTcc {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed).split(0x6d6f64656c);
        let mut store = ParamStore::new();
        let c = &config;
        let widths = [c.conv_widths[0], c.conv_widths[1], c.latent_dim];
        let encoder = Encoder::new(&mut store, c.in_channels, widths, c.kernel_size, c.encoder_dropout, &mut rng)?;
        let t = c.latent_steps().expect("validated");
        let k = c.horizon().expect("validated");
        let ar = ArModel::new(
            &mut store,
            c.latent_dim,
            c.hidden,
            c.layers,
            c.heads,
            c.dropout,
            c.positional.then_some(t),
            &mut rng,
        )?;
        let heads = PredictionHeads::new(&mut store, k, c.hidden, c.latent_dim, &mut rng);
        let projection = ProjectionHead::new(&mut store, "proj", c.hidden, c.proj_hidden, c.proj_out, &mut rng);
        Ok(Self { config, store, encoder, ar, heads, projection })
    }

    pub fn latent_steps(&self) -> usize {
        self.config.latent_steps().expect("validated at construction")
    }

    pub fn horizon(&self) -> usize {
        self.heads.len()
    }

    /// Anchor step `t`: fixed at `T - K`, or uniform over `1..=T-K` when
    /// `random_t` is set and an rng is supplied.
    pub fn anchor(&self, rng: Option<&mut Rng>) -> usize {
        let last = self.latent_steps() - self.horizon();
        match rng {
            Some(r) if self.config.random_t => 1 + r.below(last),
            _ => last,
        }
    }

    /// `[B, C, L] -> [B, T, d]`.
    pub fn encode(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        self.encoder.forward(ctx, x)
    }

    /// `c_t` from `z_{1..t}`.
    pub fn context(&self, ctx: &mut Ctx, z: &Tensor, t: usize) -> Result<Tensor> {
        if t == 0 || t > z.shape()[1] {
            return Err(Error::Index { index: t, len: z.shape()[1] });
        }
        self.ar.summarize(ctx, &z.narrow(1, 0, t)?)
    }

    /// `z_{t+1..t+K}` as `[B, K, d]`.
    pub fn future(&self, z: &Tensor, t: usize) -> Result<Tensor> {
        z.narrow(1, t, self.horizon())
    }

    /// Mean over the latent time axis, `[B, T, d] -> [B, d]`.
    pub fn pooled_features(&self, ctx: &mut Ctx, x: &Tensor) -> Result<Tensor> {
        self.encode(ctx, x)?.mean_axis(1, false)
    }

    pub fn to_checkpoint(&self, config_text: String) -> Checkpoint {
        Checkpoint::from_store(config_text, &self.store)
    }

    /// Rebuilds the network described by the checkpoint's `[model]` section
    /// and loads its parameters.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::read(&ConfigDoc::parse(&ckpt.config_text)?)?;
        let mut model = Self::new(config, 0)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }
}
