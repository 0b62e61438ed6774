use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use mrinn_core::baselines::{MlpConfig, MlpModel};
use mrinn_core::dataset::{generate_synthetic, make_folds, make_windows, FoldSpec, SynthParams, WindowSplit};
use mrinn_core::model::QuantileModel;
use mrinn_core::mrinn::{MrinnConfig, MrinnModel};
use mrinn_core::scaling::{UnitAssignment, UnitScalers};
use mrinn_core::training::batch_gradient;
use mrinn_core::{imbalance_price, PricingConstants};

fn fixture(lookback: u32) -> (WindowSplit, UnitScalers) {
    let frame = generate_synthetic(30, 1, &SynthParams::default()).unwrap();
    let fold = make_folds(&frame, &FoldSpec::proportional(&frame).unwrap()).unwrap().remove(0);
    let split = fold.windows(&make_windows(&frame, lookback, 15).unwrap());
    let scalers = UnitScalers::fit(UnitAssignment::default(), &fold.train_frame(&frame)).unwrap();
    (split, scalers)
}

fn pricing(c: &mut Criterion) {
    let frame = generate_synthetic(30, 7, &SynthParams::default()).unwrap();
    let constants = PricingConstants::default();
    let mut g = c.benchmark_group("pricing");
    g.throughput(Throughput::Elements(frame.len() as u64));
    g.bench_function("imbalance_price/30d", |b| {
        b.iter(|| {
            frame
                .snapshots()
                .iter()
                .map(|s| imbalance_price(black_box(s), &constants).p_final)
                .sum::<f64>()
        })
    });
    g.finish();
}

fn models(lookback: u32) -> (WindowSplit, MrinnModel, MlpModel) {
    let (split, scalers) = fixture(lookback);
    let mrinn = MrinnModel::new(
        MrinnConfig {
            lookback,
            ..MrinnConfig::default()
        },
        scalers.clone(),
        PricingConstants::default(),
    )
    .unwrap();
    let mlp = MlpModel::new(
        MlpConfig {
            lookback,
            ..MlpConfig::default()
        },
        scalers,
    )
    .unwrap();
    (split, mrinn, mlp)
}

fn forecaster(c: &mut Criterion) {
    let fixtures: Vec<_> = [0, 60].into_iter().map(|n| (n, models(n))).collect();

    let mut g = c.benchmark_group("predict");
    for (n, (split, mrinn, mlp)) in &fixtures {
        let w = split.train.get(0);
        g.bench_function(format!("mrinn/N{n}"), |b| b.iter(|| mrinn.predict(black_box(&w)).unwrap()));
        g.bench_function(format!("mlp/N{n}"), |b| b.iter(|| mlp.predict(black_box(&w)).unwrap()));
    }
    g.finish();

    let mut g = c.benchmark_group("batch_gradient");
    for (n, (split, mrinn, _)) in &fixtures {
        let batch: Vec<usize> = (0..1024.min(split.train.len())).collect();
        g.throughput(Throughput::Elements(batch.len() as u64));
        g.bench_function(format!("mrinn/N{n}"), |b| {
            b.iter_batched(|| batch.clone(), |idx| batch_gradient(mrinn, &split.train, &idx).unwrap(), BatchSize::SmallInput)
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = pricing, forecaster
}
criterion_main!(benches);
