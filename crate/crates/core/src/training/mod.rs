//! Optimizer, self-supervised pretraining and the supervised evaluation
//! protocols built on top of it.

mod adam;
mod config;
mod metrics;
mod pretrain;
mod supervised;

pub use adam::Adam;
pub use config::{ablation_variants, AdamParams, AugMode, TrainConfig, ABLATION_NAMES};
pub use metrics::{argmax_rows, compute_metrics, MetricsReport};
pub use pretrain::{make_views, pretrain, pretrain_objective, pretrain_with, EpochLog, ObjectiveSpec, PretrainOutcome};
pub use supervised::{
    extract_features, finetune, finetune_semi_supervised, linear_evaluate, predict, supervised_from_scratch,
    transfer_experiment, transfer_scenarios, Classifier, EvalOutcome, FinetuneOutcome, TransferOutcome,
};

#[cfg(test)]
mod tests;
