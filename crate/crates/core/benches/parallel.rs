//! Single-thread versus default rayon pool on the data-parallel kernels.
//! Build with `--no-default-features` for the purely sequential fallback.

use caflow::caflow::{CaflowModel, ModelConfig};
use caflow::data::{synthetic_dataset, Task};
use caflow::layers::InitMode;
use caflow::tensor::conv2d_forward;
use caflow::toy::ToyFlow;
use caflow::train::eval::log_likelihoods;
use caflow::{Rng, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::current_num_threads();
    let mut sizes = vec![1];
    if default > 1 {
        sizes.push(default);
    }
    sizes
        .into_iter()
        .map(|n| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool");
            (format!("{n}-threads"), pool)
        })
        .collect()
}

fn conv(c: &mut Criterion) {
    let mut rng = Rng::new(0);
    let x = Tensor::<f32>::from_fn([16, 32, 16, 16], |_| rng.normal() as f32);
    let w = Tensor::<f32>::from_fn([32, 32, 3, 3], |_| 0.1 * rng.normal() as f32);
    let mut group = c.benchmark_group("conv2d_forward");
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| conv2d_forward(&x, &w, None).unwrap()))
        });
    }
    group.finish();
}

fn likelihood(c: &mut Criterion) {
    let cfg = ModelConfig {
        size: 8,
        n_scales: 2,
        r_steps: 2,
        t_steps: 2,
        cond_steps: 2,
        hidden: 16,
        cond_hidden: 16,
        dequant_steps: 1,
        ..ModelConfig::default()
    };
    let (model, store) = CaflowModel::build::<f32>(&cfg, 0, InitMode::Standard).unwrap();
    let [set, _, _] = synthetic_dataset(Task::Colorize, [32, 1, 1], 8, 3, 0).unwrap();
    let (w, y) = set.batch::<f32>(&(0..32).collect::<Vec<_>>()).unwrap();
    let mut group = c.benchmark_group("conditional_log_likelihood");
    group.sample_size(20);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| log_likelihoods(&model, &store, &w, &y).unwrap()))
        });
    }
    group.finish();
}

fn toy_integral(c: &mut Criterion) {
    let (flow, store) = ToyFlow::build::<f32>(4, 16, 0).unwrap();
    let mut group = c.benchmark_group("toy_density_integral");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| flow.integrate(&store, 4.0, 100).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, conv, likelihood, toy_integral);
criterion_main!(benches);
