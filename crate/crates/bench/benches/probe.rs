use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use xneutr_bench::synthetic_pos_features;
use xneutr_core::{init_probe, predict, train, Split, TrainConfig};

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("probe_forward");
    for dim in [64, 768] {
        let features = synthetic_pos_features(17, dim, 120, Split::Test, 1);
        let model = init_probe(dim, dim, 17, 1);
        group.throughput(Throughput::Elements(features.len() as u64));
        group.bench_function(format!("d{dim}"), |b| {
            b.iter(|| predict(&model, black_box(&features)).unwrap())
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let train_fs = synthetic_pos_features(17, 64, 200, Split::Train, 2);
    let val_fs = synthetic_pos_features(17, 64, 40, Split::Validation, 2);
    // one epoch with no patience to spend
    let cfg = TrainConfig {
        max_epochs: 1,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("probe_train");
    group.sample_size(10);
    group.throughput(Throughput::Elements(train_fs.len() as u64));
    group.bench_function("epoch_d64", |b| {
        b.iter_batched(
            || init_probe(64, 64, 17, 2),
            |model| train(model, &train_fs, &val_fs, &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, forward, training);
criterion_main!(benches);
