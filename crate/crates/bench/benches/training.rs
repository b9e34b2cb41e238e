use criterion::{criterion_group, criterion_main, Criterion};
use tstcc_core::data::{synth_generate, SynthSpec};
use tstcc_core::training::{pretrain, TrainConfig};

fn pretrain_epoch(c: &mut Criterion) {
    let data = synth_generate(&SynthSpec { samples: 256, ..SynthSpec::default() }).unwrap();
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let mut g = c.benchmark_group("pretrain");
    g.sample_size(10);
    g.bench_function("one epoch, 256 samples, default model", |b| b.iter(|| pretrain(&cfg, &data).unwrap()));
    g.finish();
}

criterion_group!(benches, pretrain_epoch);
criterion_main!(benches);
