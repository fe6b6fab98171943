//! Sequential versus data-parallel batch evaluation and training steps.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tnet_core::data::{generate, SynthSpec};
use tnet_core::eval::predict_all;
use tnet_core::nn::{Model, ModelSpec};
use tnet_core::parallel::Execution;
use tnet_core::training::{AdamConfig, LossWeights, TrainConfig, Trainer};
use tnet_core::traversal::TraversalConfig;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn predict(c: &mut Criterion) {
    let data = generate(&SynthSpec::default(), 32).unwrap();
    let images = data.inputs();
    let model = Model::new(ModelSpec::tiny(4), 0).unwrap();
    let mut group = c.benchmark_group("predict_all_32");
    for locations in [1, 3] {
        let cfg = TraversalConfig::synthetic(locations);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, locations), &cfg, |b, cfg| {
                b.iter(|| predict_all(&model, cfg, &images, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let data = generate(&SynthSpec::default(), 16).unwrap();
    let images = data.inputs();
    let labels = data.labels();
    let mut group = c.benchmark_group("train_step_16");
    group.sample_size(20);
    for (name, exec) in MODES {
        let config = TrainConfig {
            weights: LossWeights::per_feature(0.3),
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            execution: exec,
            ..TrainConfig::default()
        };
        let model = Model::new(ModelSpec::tiny(4), 0).unwrap();
        let mut trainer = Trainer::new(model, TraversalConfig::synthetic(1), config).unwrap();
        group.bench_function(name, |b| b.iter(|| trainer.train_step(&images, &labels).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, predict, train_step);
criterion_main!(benches);
