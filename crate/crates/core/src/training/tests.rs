use super::*;
use crate::data::{synth_generate, Dataset, SynthSpec};
use crate::error::Error;
use crate::model::{ModelConfig, TsTcc};
use crate::rng::Rng;

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            in_channels: 3,
            input_length: 32,
            conv_widths: [4, 6],
            latent_dim: 8,
            hidden: 8,
            layers: 1,
            heads: 2,
            proj_hidden: 4,
            proj_out: 4,
            ..ModelConfig::default()
        },
        epochs: 2,
        eval_epochs: 5,
        batch_size: 16,
        finetune_batch_size: 8,
        optim: AdamParams { lr: 3e-3, ..AdamParams::default() },
        ..TrainConfig::default()
    }
}

fn tiny_data(samples: usize, seed: u64) -> Dataset {
    synth_generate(&SynthSpec { samples, length: 32, noise: 0.3, seed, ..SynthSpec::default() }).unwrap()
}

#[test]
fn default_config_text_carries_published_values() {
    let text = TrainConfig::default().to_text();
    for line in [
        "lr = 0.0003",
        "weight_decay = 0.0003",
        "beta1 = 0.9",
        "beta2 = 0.99",
        "tau = 0.2",
        "lambda1 = 1",
        "lambda2 = 0.7",
        "layers = 4",
        "heads = 4",
        "dropout = 0.1",
        "epochs = 40",
        "batch_size = 128",
        "k_ratio = 0.4",
        "hidden = 100",
    ] {
        assert!(text.lines().any(|l| l.trim() == line), "missing `{line}` in\n{text}");
    }
}

#[test]
fn config_round_trip_and_overrides() {
    let mut c = TrainConfig {
        aug_mode: AugMode::StrongOnly,
        anchor_mode: crate::losses::AnchorMode::PaperN,
        lambda2: 1000.0,
        seed: 99,
        ..TrainConfig::default()
    };
    c.model.random_t = true;
    assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    let o = c.with_overrides(&["loss.lambda1=0.001", "train.use_cc=false"]).unwrap();
    assert_eq!(o.lambda1, 0.001);
    assert!(!o.use_cc);
    assert!(matches!(c.with_overrides(&["train.bogus=1"]), Err(Error::Config(_))));
    assert!(matches!(c.with_overrides(&["optim.lr=-1"]), Err(Error::Config(_))));
    assert!(matches!(c.with_overrides(&["train.aug_mode=sideways"]), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_text("[nowhere]\na = 1\n"), Err(Error::Config(_))));
}

#[test]
fn partial_config_keeps_defaults() {
    let c = TrainConfig::from_text("[train]\nepochs = 3\n").unwrap();
    assert_eq!(c.epochs, 3);
    assert_eq!(c.batch_size, 128);
    assert_eq!(c.model, ModelConfig::default());
}

#[test]
fn pretraining_is_deterministic() {
    let cfg = tiny_cfg();
    let data = tiny_data(40, 1);
    let a = pretrain(&cfg, &data).unwrap();
    let b = pretrain(&cfg, &data).unwrap();
    assert_eq!(a.log, b.log);
    for (x, y) in a.model.store.entries().iter().zip(b.model.store.entries()) {
        assert_eq!(x.value.to_vec(), y.value.to_vec(), "{}", x.name);
    }
    let c = pretrain(&TrainConfig { seed: 1, ..cfg }, &data).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn log_is_consistent_with_weights() {
    let cfg = tiny_cfg();
    let out = pretrain(&cfg, &tiny_data(40, 2)).unwrap();
    assert_eq!(out.log.len(), 2);
    for e in &out.log {
        let expect = cfg.lambda1 * (e.l_tc_s + e.l_tc_w) + cfg.lambda2 * e.l_cc;
        assert!((e.total - expect).abs() < 1e-9);
        assert!(e.l_cc > 0.0);
    }
}

#[test]
fn disabled_contextual_term_logs_zero() {
    let cfg = TrainConfig { use_cc: false, ..tiny_cfg() };
    let out = pretrain(&cfg, &tiny_data(40, 3)).unwrap();
    for e in &out.log {
        assert_eq!(e.l_cc, 0.0);
        assert!((e.total - (e.l_tc_s + e.l_tc_w)).abs() < 1e-12);
    }
}

#[test]
fn pretraining_reduces_the_objective() {
    let cfg = TrainConfig { epochs: 12, ..tiny_cfg() };
    let out = pretrain(&cfg, &tiny_data(64, 4)).unwrap();
    let first = out.log.first().unwrap().total;
    let last = out.log.last().unwrap().total;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn singleton_batch_warns() {
    let cfg = TrainConfig { epochs: 1, ..tiny_cfg() };
    let out = pretrain(&cfg, &tiny_data(17, 5)).unwrap();
    assert_eq!(out.warnings.len(), 1);
    assert!(pretrain(&cfg, &tiny_data(16, 5)).unwrap().warnings.is_empty());
}

#[test]
fn rejects_mismatched_data() {
    let cfg = tiny_cfg();
    let data = synth_generate(&SynthSpec { samples: 20, length: 64, ..SynthSpec::default() }).unwrap();
    assert!(matches!(pretrain(&cfg, &data), Err(Error::Shape(_))));
}

#[test]
fn view_modes() {
    let cfg = tiny_cfg();
    let batch = tiny_data(4, 6).batch(&[0, 1, 2, 3]);
    let rng = Rng::new(3);
    for mode in [AugMode::Both, AugMode::WeakOnly, AugMode::StrongOnly] {
        let c = TrainConfig { aug_mode: mode, ..cfg.clone() };
        let (a, b) = make_views(&batch, &c, &rng).unwrap();
        assert_ne!(a.values, b.values);
        let (a2, _) = make_views(&batch, &c, &rng).unwrap();
        assert_eq!(a.values, a2.values);
    }
}

#[test]
fn linear_evaluation_leaves_encoder_untouched() {
    let cfg = tiny_cfg();
    let train = tiny_data(60, 7);
    let test = tiny_data(30, 8);
    let model = TsTcc::new(cfg.model.clone(), 0).unwrap();
    let before: Vec<Vec<f64>> = model.store.entries().iter().map(|e| e.value.to_vec()).collect();
    let out = linear_evaluate(&model, &train, &test, &cfg).unwrap();
    let after: Vec<Vec<f64>> = model.store.entries().iter().map(|e| e.value.to_vec()).collect();
    assert_eq!(before, after);
    assert_eq!(out.loss_log.len(), cfg.eval_epochs);
    assert!(out.loss_log.last().unwrap() < out.loss_log.first().unwrap());
}

/// Labels spread evenly within every true class, so they carry no
/// information about the input.
fn uninformative_labels(ds: &Dataset, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let mut labels = vec![0; ds.len()];
    for c in 0..ds.classes {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        rng.shuffle(&mut members);
        for (j, &i) in members.iter().enumerate() {
            labels[i] = j % ds.classes;
        }
    }
    ds.with_labels(labels).unwrap()
}

#[test]
fn permuted_labels_give_chance_accuracy() {
    let cfg = TrainConfig { eval_epochs: 20, ..tiny_cfg() };
    let train = uninformative_labels(&tiny_data(600, 9), 77);
    let test = uninformative_labels(&tiny_data(1500, 10), 78);
    let model = TsTcc::new(cfg.model.clone(), 0).unwrap();
    let acc = linear_evaluate(&model, &train, &test, &cfg).unwrap().report.accuracy;
    assert!((acc - 1.0 / 3.0).abs() < 0.05, "accuracy {acc}");
}

#[test]
fn finetuning_learns_the_task() {
    let cfg = TrainConfig { epochs: 15, ..tiny_cfg() };
    let train = tiny_data(150, 11);
    let test = tiny_data(150, 12);
    let out = supervised_from_scratch(&train, &test, &cfg).unwrap();
    assert!(out.report.accuracy > 0.6, "accuracy {}", out.report.accuracy);
    assert!(out.loss_log.last().unwrap() < out.loss_log.first().unwrap());
}

#[test]
fn semi_supervised_rejects_tiny_subsets() {
    let cfg = tiny_cfg();
    let train = tiny_data(20, 13);
    let model = TsTcc::new(cfg.model.clone(), 0).unwrap();
    let r = finetune_semi_supervised(model.clone(), &train, &train, 0.01, false, &cfg);
    assert!(matches!(r, Err(Error::Param(_))));
    assert!(finetune_semi_supervised(model, &train, &train, 1.5, false, &cfg).is_err());
}

#[test]
fn transfer_onto_the_source_matches_direct_training() {
    let cfg = TrainConfig { epochs: 1, ..tiny_cfg() };
    let train = tiny_data(24, 14);
    let test = tiny_data(24, 15);
    let t = transfer_experiment(&train, &test, &cfg).unwrap();
    let direct = supervised_from_scratch(&train, &test, &cfg).unwrap().report;
    assert_eq!(t.supervised, direct);
    let pre = pretrain(&cfg, &train).unwrap();
    assert_eq!(t.tstcc, finetune(pre.model, &train, &test, &cfg).unwrap().report);
}

#[test]
fn scenario_grid() {
    let s = transfer_scenarios(&["a", "b", "c", "d"], 12);
    assert_eq!(s.len(), 12);
    assert!(s.iter().all(|(x, y)| x != y));
    assert_eq!(transfer_scenarios(&["a", "b", "c", "d"], 5).len(), 5);
}

#[test]
fn ablation_grid() {
    let v = ablation_variants(&TrainConfig { use_cc: false, ..tiny_cfg() });
    assert_eq!(v.len(), 5);
    assert_eq!(v[2].0, "TS-TCC (TC + X-Aug + CC)");
    assert!(!v[0].1.use_cc && !v[0].1.cross_view);
    assert!(!v[1].1.use_cc && v[1].1.cross_view);
    assert!(v[2].1.use_cc && v[2].1.cross_view);
    assert_eq!(v[3].1.aug_mode, AugMode::WeakOnly);
    assert_eq!(v[4].1.aug_mode, AugMode::StrongOnly);
}

#[test]
fn full_fraction_matches_plain_finetuning() {
    let cfg = TrainConfig { epochs: 1, ..tiny_cfg() };
    let train = tiny_data(24, 16);
    let model = TsTcc::new(cfg.model.clone(), 0).unwrap();
    let a = finetune_semi_supervised(model.clone(), &train, &train, 1.0, false, &cfg).unwrap().report;
    let b = finetune(model, &train, &train, &cfg).unwrap().report;
    assert_eq!(a, b);
}
