use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mnpca::baselines::fit_k2dpca;
use mnpca::eval::{generate_checkerboard, run_experiment, ExperimentConfig, Method};
use mnpca::mnpca::{fit, FitOptions};
use mnpca::svd_features::{build_feature_set, FeatureConfig};
use mnpca::{BaseKernel, Execution, KernelSpec, Parity};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn features_and_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("mnpca_fit");
    group.sample_size(10);
    let k = KernelSpec::gaussian(0.1, Parity::Odd).unwrap();
    for n in [100, 200] {
        let sample = generate_checkerboard(n, 0.125, 1).unwrap().sample;
        for (name, exec) in MODES {
            let config = FeatureConfig::default();
            group.bench_with_input(BenchmarkId::new(format!("features/{name}"), n), &sample, |b, s| {
                b.iter(|| build_feature_set(black_box(s), k, k, config, exec).unwrap())
            });
            let opts = FitOptions { dims: Some((2, 2)), execution: exec, ..FitOptions::default() };
            group.bench_with_input(BenchmarkId::new(format!("fit/{name}"), n), &sample, |b, s| {
                b.iter(|| fit(black_box(s), k, k, &opts).unwrap())
            });
            group.bench_with_input(BenchmarkId::new(format!("transform/{name}"), n), &sample, |b, s| {
                let model = fit(s, k, k, &opts).unwrap();
                b.iter(|| model.transform_sample(black_box(s), exec).unwrap())
            });
        }
    }
    group.finish();
}

fn kernel_gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("k2dpca_fit");
    group.sample_size(10);
    let sample = generate_checkerboard(30, 0.125, 2).unwrap().sample;
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| fit_k2dpca(black_box(&sample), BaseKernel::Gaussian { sigma2: 4.0 }, 2, 2, exec).unwrap())
        });
    }
    group.finish();
}

fn experiment(c: &mut Criterion) {
    let mut group = c.benchmark_group("experiment");
    group.sample_size(10);
    let config = ExperimentConfig {
        n_train: 50,
        n_test: 20,
        replicates: 8,
        methods: vec![Method::MnpcaOdd, Method::MnpcaEven, Method::TwoD2Pca],
        sigma_grid: vec![-6.0, -4.0, -2.0],
        ..ExperimentConfig::default()
    };
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| run_experiment(black_box(&config), exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, features_and_fit, kernel_gram, experiment);
criterion_main!(benches);
