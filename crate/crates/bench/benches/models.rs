use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smartjourney_core::dataset::{synth_series, DatasetConfig, PreparedDataset, SynthParams};
use smartjourney_core::gbdt::{build_tree, BoostingConfig, TabularData};
use smartjourney_core::lstm::LstmNetwork;
use smartjourney_core::neural::Network;
use smartjourney_core::training::{forecast, train_model, ModelType, TrainConfig};
use smartjourney_core::transformer::TransformerNetwork;

fn dataset(days: usize) -> PreparedDataset {
    let rows = synth_series(7, days, 900.0, &SynthParams::default());
    PreparedDataset::build(&rows, "TUZLA", &DatasetConfig::default()).expect("dataset")
}

fn neural(c: &mut Criterion) {
    let ds = dataset(30);
    let batch: Vec<_> = ds.train()[..32].iter().map(|s| &s.inputs).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let lstm = LstmNetwork::new(6, &mut rng);
    let transformer = TransformerNetwork::new(6, true, &mut rng);
    let ones = vec![1.0; batch.len()];

    c.bench_function("lstm forward b32", |b| b.iter(|| lstm.forward_batch(black_box(&batch)).unwrap()));
    c.bench_function("lstm forward+backward b32", |b| {
        b.iter(|| {
            let (_, cache) = lstm.forward_batch(&batch).unwrap();
            lstm.backward_batch(&cache, &ones)
        })
    });
    c.bench_function("transformer forward b32", |b| {
        b.iter(|| transformer.forward_batch(black_box(&batch)).unwrap())
    });
    c.bench_function("transformer forward+backward b32", |b| {
        b.iter(|| {
            let (_, cache) = transformer.forward_batch(&batch).unwrap();
            transformer.backward_batch(&cache, &ones)
        })
    });
    c.bench_function("lstm predict single window", |b| b.iter(|| lstm.predict(black_box(batch[0])).unwrap()));
}

fn trees(c: &mut Criterion) {
    let ds = dataset(60);
    let data = TabularData::from_samples(ds.train()).unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let mean = data.targets().iter().sum::<f64>() / data.len() as f64;
    let g: Vec<f64> = data.targets().iter().map(|y| mean - y).collect();
    let h = vec![1.0; data.len()];
    let cfg = BoostingConfig::default();
    c.bench_function("gbdt build_tree depth 5", |b| {
        b.iter(|| build_tree(black_box(&data), &rows, &g, &h, &cfg).unwrap())
    });
}

fn forecasting(c: &mut Criterion) {
    let rows = synth_series(7, 40, 900.0, &SynthParams::default());
    let ds = PreparedDataset::build(&rows, "TUZLA", &DatasetConfig::default()).unwrap();
    let mut config = TrainConfig::new(ModelType::Gbdt, "TUZLA");
    config.set_iterations(50);
    let artifact = train_model(&ds, &config).unwrap();
    let history = &rows[rows.len() - 24..];
    c.bench_function("gbdt forecast 48h", |b| {
        b.iter_batched(|| history.to_vec(), |h| forecast(&artifact, &h, 48).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = neural, trees, forecasting
}
criterion_main!(benches);
