use super::pretrain::check_data;
use super::{argmax_rows, compute_metrics, pretrain, Adam, MetricsReport, TrainConfig};
use crate::data::{label_subsample, Dataset};
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::model::TsTcc;
use crate::nn::{Ctx, Linear, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Batch size used for inference passes.
const INFER_BATCH: usize = 256;

/// Linear classifier over mean-pooled latents, in its own store.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub store: ParamStore,
    pub layer: Linear,
    pub classes: usize,
}

impl Classifier {
    pub fn new(features: usize, classes: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed).split(0x636c66);
        let layer = Linear::new(&mut store, "clf", features, classes, &mut rng);
        Self { store, layer, classes }
    }
}

/// Mean-pooled encoder features `[N, d]` (row-major), eval mode, no gradients.
pub fn extract_features(model: &TsTcc, data: &Dataset) -> Result<Vec<f64>> {
    check_data(model, data)?;
    let mut out = Vec::with_capacity(data.len() * model.config.latent_dim);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(INFER_BATCH) {
        let mut ctx = Ctx::frozen(&model.store);
        let f = model.pooled_features(&mut ctx, &data.batch(chunk).to_tensor()?)?;
        out.extend_from_slice(f.data());
    }
    Ok(out)
}

fn check_classes(train: &Dataset, test: &Dataset) -> Result<usize> {
    if train.classes != test.classes {
        return Err(Error::Shape(format!("train has {} classes, test has {}", train.classes, test.classes)));
    }
    Ok(train.classes)
}

/// Outcome of a supervised protocol on the test set.
#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    /// Mean training cross-entropy per epoch.
    pub loss_log: Vec<f64>,
}

/// Trains a linear classifier on frozen features of `train` and scores `test`.
/// The model is only read.
pub fn linear_evaluate(model: &TsTcc, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<EvalOutcome> {
    let classes = check_classes(train, test)?;
    let d = model.config.latent_dim;
    let feats = extract_features(model, train)?;
    let test_feats = extract_features(model, test)?;
    let mut clf = Classifier::new(d, classes, cfg.seed);
    let mut adam = Adam::new(cfg.optim);
    let root = Rng::new(cfg.seed).split(0x6c696e);
    let mut loss_log = Vec::with_capacity(cfg.eval_epochs);
    for epoch in 0..cfg.eval_epochs {
        let order = root.split(epoch as u64).permutation(train.len());
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut x = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                x.extend_from_slice(&feats[i * d..(i + 1) * d]);
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let x = Tensor::from_vec(x, &[chunk.len(), d])?;
            let ctx = Ctx::train(&clf.store, Rng::new(0));
            let loss = cross_entropy(&clf.layer.forward(&ctx, &x)?, &labels)?;
            sum += loss.item() * chunk.len() as f64;
            loss.backward()?;
            drop(ctx);
            adam.step(&mut clf.store)?;
        }
        loss_log.push(sum / train.len() as f64);
    }
    let ctx = Ctx::frozen(&clf.store);
    let logits = clf.layer.forward(&ctx, &Tensor::from_vec(test_feats, &[test.len(), d])?)?;
    let report = compute_metrics(&argmax_rows(logits.data(), classes), &test.labels, classes)?.with_seed(cfg.seed);
    Ok(EvalOutcome { report, loss_log })
}

/// Predictions of encoder + classifier on `data` in eval mode.
pub fn predict(model: &TsTcc, clf: &Classifier, data: &Dataset) -> Result<Vec<usize>> {
    let feats = extract_features(model, data)?;
    let ctx = Ctx::frozen(&clf.store);
    let x = Tensor::from_vec(feats, &[data.len(), model.config.latent_dim])?;
    Ok(argmax_rows(clf.layer.forward(&ctx, &x)?.data(), clf.classes))
}

/// Result of end-to-end supervised training.
#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: TsTcc,
    pub classifier: Classifier,
    pub report: MetricsReport,
    pub loss_log: Vec<f64>,
}

/// Trains encoder and a fresh linear classifier end to end with
/// cross-entropy on `train` (batch `cfg.finetune_batch_size`,
/// `cfg.epochs` epochs), then scores `test`.
pub fn finetune(mut model: TsTcc, train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<FinetuneOutcome> {
    let classes = check_classes(train, test)?;
    check_data(&model, train)?;
    if train.len() < 2 {
        return Err(Error::Param(format!("supervised training needs at least 2 labeled samples, got {}", train.len())));
    }
    let mut clf = Classifier::new(model.config.latent_dim, classes, cfg.seed);
    let mut adam_model = Adam::new(cfg.optim);
    let mut adam_clf = Adam::new(cfg.optim);
    let root = Rng::new(cfg.seed).split(0x66696e65);
    let mut loss_log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let erng = root.split(epoch as u64);
        let order = erng.split(0).permutation(train.len());
        let mut sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.finetune_batch_size).enumerate() {
            let batch = train.batch(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let mut ctx = Ctx::train(&model.store, erng.split(1 + bi as u64));
            let clf_ctx = Ctx::train(&clf.store, Rng::new(0));
            let feats = model.pooled_features(&mut ctx, &batch.to_tensor()?)?;
            let loss = cross_entropy(&clf.layer.forward(&clf_ctx, &feats)?, &labels)?;
            if !loss.item().is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, batch {bi}")));
            }
            sum += loss.item() * chunk.len() as f64;
            loss.backward()?;
            let updates = ctx.into_updates();
            drop(clf_ctx);
            drop(loss);
            adam_model.step(&mut model.store)?;
            adam_clf.step(&mut clf.store)?;
            model.store.apply_updates(updates)?;
        }
        loss_log.push(sum / train.len() as f64);
    }
    let report = compute_metrics(&predict(&model, &clf, test)?, &test.labels, classes)?.with_seed(cfg.seed);
    Ok(FinetuneOutcome { model, classifier: clf, report, loss_log })
}

/// Supervised training of a freshly initialized network.
pub fn supervised_from_scratch(train: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<FinetuneOutcome> {
    finetune(TsTcc::new(cfg.model.clone(), cfg.seed)?, train, test, cfg)
}

/// Fine-tunes `model` on a `fraction` of the labels of `train`.
pub fn finetune_semi_supervised(
    model: TsTcc,
    train: &Dataset,
    test: &Dataset,
    fraction: f64,
    stratified: bool,
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    let labeled = label_subsample(train, fraction, stratified, cfg.seed)?;
    if labeled.len() < 2 {
        return Err(Error::Param(format!(
            "label fraction {fraction} of {} samples leaves {} labeled",
            train.len(),
            labeled.len()
        )));
    }
    finetune(model, &labeled, test, cfg)
}

/// Scheme A trains supervised on the source; scheme B pretrains on the
/// source, then fine-tunes on the source labels. Both score the target.
#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub supervised: MetricsReport,
    pub tstcc: MetricsReport,
}

pub fn transfer_experiment(
    source_train: &Dataset,
    target_test: &Dataset,
    cfg: &TrainConfig,
) -> Result<TransferOutcome> {
    let (s, t) = (source_train, target_test);
    if s.channels != t.channels || s.length != t.length || s.classes != t.classes {
        return Err(Error::Shape(format!(
            "source [{}, {}] with {} classes does not match target [{}, {}] with {} classes",
            s.channels, s.length, s.classes, t.channels, t.length, t.classes
        )));
    }
    let supervised = supervised_from_scratch(s, t, cfg)?.report;
    let pre = pretrain(cfg, s)?;
    let tstcc = finetune(pre.model, s, t, cfg)?.report;
    Ok(TransferOutcome { supervised, tstcc })
}

/// Ordered `(source, target)` pairs over `domains` minus self-pairs, taking
/// the first `limit`.
pub fn transfer_scenarios(domains: &[&str], limit: usize) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for a in domains {
        for b in domains {
            if a != b {
                out.push((a.to_string(), b.to_string()));
            }
        }
    }
    out.truncate(limit);
    out
}
