use super::{Adam, AugMode, TrainConfig};
use crate::augment::{strong_augment, weak_augment};
use crate::data::{Dataset, TimeSeriesBatch};
use crate::error::{Error, Result};
use crate::losses::{
    contextual_contrast_loss, temporal_contrast_loss, total_loss, AnchorMode, LossBreakdown, TemporalBatchViews,
};
use crate::model::TsTcc;
use crate::nn::Ctx;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Weights and switches of the self-supervised objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub anchor_mode: AnchorMode,
    pub cross_view: bool,
    pub use_cc: bool,
}

impl From<&TrainConfig> for ObjectiveSpec {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lambda1: c.lambda1,
            lambda2: c.lambda2,
            tau: c.tau,
            anchor_mode: c.anchor_mode,
            cross_view: c.cross_view,
            use_cc: c.use_cc,
        }
    }
}

/// Full objective on one pair of augmented batches `[B, C, L]`, anchored at `t`.
/// The first view fills the strong slot, the second the weak slot.
pub fn pretrain_objective(
    model: &TsTcc,
    ctx: &mut Ctx,
    x_strong: &Tensor,
    x_weak: &Tensor,
    t: usize,
    spec: &ObjectiveSpec,
) -> Result<(Tensor, LossBreakdown)> {
    let z_s = model.encode(ctx, x_strong)?;
    let z_w = model.encode(ctx, x_weak)?;
    let c_s = model.context(ctx, &z_s, t)?;
    let c_w = model.context(ctx, &z_w, t)?;
    let views = TemporalBatchViews {
        z_strong: model.future(&z_s, t)?,
        z_weak: model.future(&z_w, t)?,
        c_strong: c_s.clone(),
        c_weak: c_w.clone(),
        heads: &model.heads,
    };
    let (l_s, l_w) = temporal_contrast_loss(ctx, &views, spec.cross_view)?;
    let l_cc = if spec.use_cc {
        let p = model.projection.forward(ctx, &Tensor::concat(&[c_s, c_w], 0)?)?;
        Some(contextual_contrast_loss(&p, spec.tau, spec.anchor_mode)?)
    } else {
        None
    };
    let total = total_loss(&l_s, &l_w, l_cc.as_ref(), spec.lambda1, spec.lambda2)?;
    let breakdown =
        LossBreakdown::new(l_s.item(), l_w.item(), l_cc.as_ref().map_or(0.0, |t| t.item()), spec.lambda1, spec.lambda2);
    Ok((total, breakdown))
}

/// Batch-size weighted means of the loss terms over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_tc_s: f64,
    pub l_tc_w: f64,
    pub l_cc: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub model: TsTcc,
    pub log: Vec<EpochLog>,
    pub warnings: Vec<String>,
}

/// The two views of a batch according to `mode`.
pub fn make_views(
    batch: &TimeSeriesBatch,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<(TimeSeriesBatch, TimeSeriesBatch)> {
    let (r1, r2) = (rng.split(1), rng.split(2));
    let p = &cfg.augment;
    Ok(match cfg.aug_mode {
        AugMode::Both => (strong_augment(batch, p, &r1)?, weak_augment(batch, p, &r2)?),
        AugMode::WeakOnly => (weak_augment(batch, p, &r1)?, weak_augment(batch, p, &r2)?),
        AugMode::StrongOnly => (strong_augment(batch, p, &r1)?, strong_augment(batch, p, &r2)?),
    })
}

pub(crate) fn check_data(model: &TsTcc, data: &Dataset) -> Result<()> {
    let m = &model.config;
    if data.channels != m.in_channels || data.length != m.input_length {
        return Err(Error::Shape(format!(
            "model expects [{}, {}] series, dataset {} has [{}, {}]",
            m.in_channels, m.input_length, data.name, data.channels, data.length
        )));
    }
    Ok(())
}

/// Self-supervised training from a fresh model seeded by `cfg.seed`.
pub fn pretrain(cfg: &TrainConfig, data: &Dataset) -> Result<PretrainOutcome> {
    pretrain_with(cfg, data, &mut |_| {})
}

/// [`pretrain`] reporting each finished epoch to `observer`.
pub fn pretrain_with(
    cfg: &TrainConfig,
    data: &Dataset,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let mut model = TsTcc::new(cfg.model.clone(), cfg.seed)?;
    check_data(&model, data)?;
    if data.len() < 2 {
        return Err(Error::Param(format!("pretraining needs at least 2 samples, got {}", data.len())));
    }
    let mut warnings = Vec::new();
    let last = data.len() % cfg.batch_size;
    if cfg.use_cc && (cfg.batch_size < 2 || last == 1) {
        warnings.push(
            "a batch of one sample has no negatives; its contrastive terms are constant".to_string(),
        );
    }
    let spec = ObjectiveSpec::from(cfg);
    let mut adam = Adam::new(cfg.optim);
    let root = Rng::new(cfg.seed).split(0x7072_6574);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let erng = root.split(epoch as u64);
        let order = erng.split(0).permutation(data.len());
        let mut sums = [0.0; 4];
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let brng = erng.split(1 + bi as u64);
            let batch = data.batch(chunk);
            let (v1, v2) = make_views(&batch, cfg, &brng.split(0))?;
            let mut anchor_rng = brng.split(3);
            let t = model.anchor(Some(&mut anchor_rng));
            let mut ctx = Ctx::train(&model.store, brng.split(4));
            let (loss, parts) = pretrain_objective(&model, &mut ctx, &v1.to_tensor()?, &v2.to_tensor()?, t, &spec)?;
            if !parts.total.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, batch {bi}")));
            }
            loss.backward()?;
            let updates = ctx.into_updates();
            drop(loss);
            adam.step(&mut model.store)?;
            model.store.apply_updates(updates)?;
            let w = chunk.len() as f64;
            sums[0] += w * parts.l_tc_s;
            sums[1] += w * parts.l_tc_w;
            sums[2] += w * parts.l_cc;
            sums[3] += w * parts.total;
        }
        let n = data.len() as f64;
        let entry = EpochLog {
            epoch: epoch + 1,
            l_tc_s: sums[0] / n,
            l_tc_w: sums[1] / n,
            l_cc: sums[2] / n,
            total: sums[3] / n,
        };
        observer(&entry);
        log.push(entry);
    }
    Ok(PretrainOutcome { model, log, warnings })
}
