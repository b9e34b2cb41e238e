use std::fmt;
use std::str::FromStr;

use crate::augment::AugmentParams;
use crate::config::ConfigDoc;
use crate::error::{Error, Result};
use crate::losses::AnchorMode;
use crate::model::ModelConfig;

/// Which augmentation families produce the two views.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AugMode {
    /// First view strong, second view weak.
    #[default]
    Both,
    /// Two independent weak draws.
    WeakOnly,
    /// Two independent strong draws.
    StrongOnly,
}

impl fmt::Display for AugMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugMode::Both => "both",
            AugMode::WeakOnly => "weak_only",
            AugMode::StrongOnly => "strong_only",
        })
    }
}

impl FromStr for AugMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(AugMode::Both),
            "weak_only" => Ok(AugMode::WeakOnly),
            "strong_only" => Ok(AugMode::StrongOnly),
            _ => Err(Error::Config(format!("unknown aug_mode `{s}` (both | weak_only | strong_only)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 3e-4, weight_decay: 3e-4, beta1: 0.9, beta2: 0.99, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub augment: AugmentParams,
    pub optim: AdamParams,
    pub epochs: usize,
    pub batch_size: usize,
    /// Batch size for training on few labels.
    pub finetune_batch_size: usize,
    /// Epochs for the linear classifier on frozen features.
    pub eval_epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub anchor_mode: AnchorMode,
    pub cross_view: bool,
    pub use_cc: bool,
    pub aug_mode: AugMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            augment: AugmentParams::default(),
            optim: AdamParams::default(),
            epochs: 40,
            batch_size: 128,
            finetune_batch_size: 32,
            eval_epochs: 40,
            lambda1: 1.0,
            lambda2: 0.7,
            tau: 0.2,
            anchor_mode: AnchorMode::Symmetric2N,
            cross_view: true,
            use_cc: true,
            aug_mode: AugMode::Both,
            seed: 0,
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "finetune_batch_size",
    "eval_epochs",
    "cross_view",
    "use_cc",
    "aug_mode",
    "seed",
];
const OPTIM_KEYS: &[&str] = &["lr", "weight_decay", "beta1", "beta2", "eps"];
const LOSS_KEYS: &[&str] = &["lambda1", "lambda2", "tau", "anchor_mode"];
const AUGMENT_KEYS: &[&str] = &["max_segments", "jitter_sigma_weak", "jitter_sigma_strong", "scale_mean", "scale_sigma"];
const SECTIONS: &[&str] = &["model", "augment", "optim", "loss", "train"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate()?;
        self.augment.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.augment.max_segments > self.model.input_length {
            return bad(format!(
                "augment.max_segments ({}) exceeds the series length ({})",
                self.augment.max_segments, self.model.input_length
            ));
        }
        for (name, v) in [
            ("train.epochs", self.epochs),
            ("train.batch_size", self.batch_size),
            ("train.finetune_batch_size", self.finetune_batch_size),
            ("train.eval_epochs", self.eval_epochs),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return bad(format!("optim.lr must be positive, got {}", o.lr));
        }
        if !(o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return bad(format!("optim.weight_decay must be non-negative, got {}", o.weight_decay));
        }
        for (name, b) in [("optim.beta1", o.beta1), ("optim.beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(o.eps > 0.0) {
            return bad(format!("optim.eps must be positive, got {}", o.eps));
        }
        for (name, l) in [("loss.lambda1", self.lambda1), ("loss.lambda2", self.lambda2)] {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {l}"));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("loss.tau must be positive, got {}", self.tau));
        }
        Ok(())
    }

    pub fn to_doc(&self) -> ConfigDoc {
        let mut doc = ConfigDoc::new();
        self.model.write(&mut doc);
        let a = &self.augment;
        doc.set("augment", "max_segments", a.max_segments);
        doc.set("augment", "jitter_sigma_weak", a.jitter_sigma_weak);
        doc.set("augment", "jitter_sigma_strong", a.jitter_sigma_strong);
        doc.set("augment", "scale_mean", a.scale_mean);
        doc.set("augment", "scale_sigma", a.scale_sigma);
        let o = &self.optim;
        doc.set("optim", "lr", o.lr);
        doc.set("optim", "weight_decay", o.weight_decay);
        doc.set("optim", "beta1", o.beta1);
        doc.set("optim", "beta2", o.beta2);
        doc.set("optim", "eps", o.eps);
        doc.set("loss", "lambda1", self.lambda1);
        doc.set("loss", "lambda2", self.lambda2);
        doc.set("loss", "tau", self.tau);
        doc.set("loss", "anchor_mode", self.anchor_mode);
        doc.set("train", "epochs", self.epochs);
        doc.set("train", "batch_size", self.batch_size);
        doc.set("train", "finetune_batch_size", self.finetune_batch_size);
        doc.set("train", "eval_epochs", self.eval_epochs);
        doc.set("train", "cross_view", self.cross_view);
        doc.set("train", "use_cc", self.use_cc);
        doc.set("train", "aug_mode", self.aug_mode);
        doc.set("train", "seed", self.seed);
        doc
    }

    pub fn to_text(&self) -> String {
        self.to_doc().to_text()
    }

    /// Defaults overridden by every key present in `doc`; unknown sections or
    /// keys are errors. The result is validated.
    pub fn from_doc(doc: &ConfigDoc) -> Result<Self> {
        for (s, k) in doc.keys() {
            if !SECTIONS.contains(&s) {
                return Err(Error::Config(format!("unknown section [{s}] (key {k})")));
            }
        }
        doc.check_known("train", TRAIN_KEYS)?;
        doc.check_known("optim", OPTIM_KEYS)?;
        doc.check_known("loss", LOSS_KEYS)?;
        doc.check_known("augment", AUGMENT_KEYS)?;
        let mut c = TrainConfig { model: ModelConfig::read(doc)?, ..TrainConfig::default() };
        let a = &mut c.augment;
        doc.read_into("augment", "max_segments", &mut a.max_segments)?;
        doc.read_into("augment", "jitter_sigma_weak", &mut a.jitter_sigma_weak)?;
        doc.read_into("augment", "jitter_sigma_strong", &mut a.jitter_sigma_strong)?;
        doc.read_into("augment", "scale_mean", &mut a.scale_mean)?;
        doc.read_into("augment", "scale_sigma", &mut a.scale_sigma)?;
        let o = &mut c.optim;
        doc.read_into("optim", "lr", &mut o.lr)?;
        doc.read_into("optim", "weight_decay", &mut o.weight_decay)?;
        doc.read_into("optim", "beta1", &mut o.beta1)?;
        doc.read_into("optim", "beta2", &mut o.beta2)?;
        doc.read_into("optim", "eps", &mut o.eps)?;
        doc.read_into("loss", "lambda1", &mut c.lambda1)?;
        doc.read_into("loss", "lambda2", &mut c.lambda2)?;
        doc.read_into("loss", "tau", &mut c.tau)?;
        doc.read_into("loss", "anchor_mode", &mut c.anchor_mode)?;
        doc.read_into("train", "epochs", &mut c.epochs)?;
        doc.read_into("train", "batch_size", &mut c.batch_size)?;
        doc.read_into("train", "finetune_batch_size", &mut c.finetune_batch_size)?;
        doc.read_into("train", "eval_epochs", &mut c.eval_epochs)?;
        doc.read_into("train", "cross_view", &mut c.cross_view)?;
        doc.read_into("train", "use_cc", &mut c.use_cc)?;
        doc.read_into("train", "aug_mode", &mut c.aug_mode)?;
        doc.read_into("train", "seed", &mut c.seed)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_doc(&ConfigDoc::parse(text)?)
    }

    /// Applies `section.key=value` overrides on top of this config.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = self.to_doc();
        for o in overrides {
            doc.apply_override(o.as_ref())?;
        }
        Self::from_doc(&doc)
    }
}

/// Names of the ablation variants, in reporting order.
pub const ABLATION_NAMES: [&str; 5] = [
    "TC only",
    "TC + X-Aug",
    "TS-TCC (TC + X-Aug + CC)",
    "TS-TCC (Weak only)",
    "TS-TCC (Strong only)",
];

/// `base` modified for each ablation variant: same-view prediction without
/// the contextual term, cross-view without it, the full objective, and the
/// full objective with both views drawn from one augmentation family.
pub fn ablation_variants(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let full = TrainConfig { use_cc: true, cross_view: true, aug_mode: AugMode::Both, ..base.clone() };
    let cfgs = [
        TrainConfig { use_cc: false, cross_view: false, ..full.clone() },
        TrainConfig { use_cc: false, ..full.clone() },
        full.clone(),
        TrainConfig { aug_mode: AugMode::WeakOnly, ..full.clone() },
        TrainConfig { aug_mode: AugMode::StrongOnly, ..full },
    ];
    ABLATION_NAMES.into_iter().zip(cfgs).collect()
}
