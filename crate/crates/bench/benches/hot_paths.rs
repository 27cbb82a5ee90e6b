use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use retroforecast::arrow::{arrow_verdict, knn_kl, ArrowConfig};
use retroforecast::mapinfer::{map_optimize, MapConfig};
use retroforecast::models::{Architecture, FlowPrior, ForwardMlp, InverseCvae};
use retroforecast::procgen::Case;
use retroforecast_bench::{normal, windows};

fn knn(c: &mut Criterion) {
    let x = normal(2000, 4, 1);
    let y = normal(2000, 4, 2);
    c.bench_function("knn_kl 2000x4 k=5", |b| b.iter(|| knn_kl(black_box(&x), black_box(&y), 5).unwrap()));
}

fn arrow(c: &mut Criterion) {
    let series = Case::A.generate(4000, 7).unwrap();
    let cfg = ArrowConfig {
        n_perm: 20,
        ..ArrowConfig::default()
    };
    let mut g = c.benchmark_group("arrow");
    g.sample_size(10);
    g.bench_function("verdict T=4000 n_perm=20", |b| {
        b.iter(|| arrow_verdict("A", black_box(&series.values), &cfg).unwrap())
    });
    g.finish();
}

fn mlp(c: &mut Criterion) {
    let w = windows();
    let model = ForwardMlp::new(w.past_len, w.horizon, &Architecture::default(), 3).unwrap();
    let x = normal(256, w.past_len, 4);
    c.bench_function("mlp predict 256 windows", |b| b.iter(|| model.predict(black_box(&x)).unwrap()));
}

fn map(c: &mut Criterion) {
    let w = windows();
    let arch = Architecture::default();
    let decoder = InverseCvae::new(w.past_len, w.horizon, &arch, 5).unwrap();
    let prior = FlowPrior::new(w.horizon, &arch, 6).unwrap();
    let x = normal(16, w.past_len, 7);
    let fic = Array2::zeros((16, w.horizon));
    let keys: Vec<usize> = (0..16).collect();
    let cfg = MapConfig {
        restarts: 2,
        steps: 20,
        ..MapConfig::default()
    };
    let mut g = c.benchmark_group("map");
    g.sample_size(10);
    g.bench_function("16 windows x 2 restarts x 20 steps", |b| {
        b.iter(|| map_optimize(&decoder, &prior, black_box(&x), &fic, &keys, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, knn, arrow, mlp, map);
criterion_main!(benches);
