use std::hint::black_box;

use bayesflow::compare::{loo, pointwise_loglik, psis_smooth};
use bayesflow::model::log_posterior_and_grad;
use bayesflow::sampler::{fit, nuts_sample, Posterior, SamplerConfig};
use bayesflow::stats::stream_rng;
use bayesflow::synthetic::{generate, SyntheticConfig};
use bayesflow::{Dataset, ModelSpec, Observations, Variant};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

fn dataset() -> Dataset {
    generate(&SyntheticConfig::default()).expect("synthetic data")
}

fn gradient(c: &mut Criterion) {
    let ds = dataset();
    let mut group = c.benchmark_group("log_posterior_and_grad");
    for variant in [Variant::M1, Variant::M2, Variant::M3] {
        let spec = ModelSpec::for_dataset(variant, &ds);
        let u = vec![0.1; spec.dim()];
        group.bench_function(variant.name(), |b| {
            b.iter(|| {
                log_posterior_and_grad(&spec, black_box(&u), Observations::from(&ds)).unwrap()
            })
        });
    }
    group.finish();
}

fn nuts_transitions(c: &mut Criterion) {
    let ds = dataset();
    let spec = ModelSpec::for_dataset(Variant::M3, &ds);
    let target = Posterior::new(&spec, Observations::from(&ds)).unwrap();
    let config = SamplerConfig {
        n_chains: 1,
        n_warmup: 0,
        n_draws: 20,
        fixed_step_size: Some(0.05),
        max_tree_depth: 6,
        ..SamplerConfig::default()
    };
    c.bench_function("nuts_20_transitions_m3", |b| {
        b.iter(|| nuts_sample(black_box(&config), &target).unwrap())
    });
}

fn psis(c: &mut Criterion) {
    let ratios = exponential_log_ratios(4000);
    c.bench_function("psis_smooth_4000", |b| {
        b.iter(|| psis_smooth(black_box(&ratios)))
    });

    let ds = dataset();
    let spec = ModelSpec::for_dataset(Variant::M1, &ds);
    let config = SamplerConfig {
        n_warmup: 300,
        n_draws: 250,
        ..SamplerConfig::default()
    };
    let draws = fit(&config, &spec, Observations::from(&ds)).unwrap();
    let ll = pointwise_loglik(&draws, Observations::from(&ds)).unwrap();
    c.bench_function("loo_1000x150", |b| b.iter(|| loo(black_box(&ll)).unwrap()));
}

/// Log ratios whose importance weights have a Pareto-like tail.
fn exponential_log_ratios(n: usize) -> Vec<f64> {
    let mut rng = stream_rng(3, 0);
    (0..n)
        .map(|_| -rng.random_range(1e-12..1.0f64).ln() * 0.7)
        .collect()
}

criterion_group!(benches, gradient, nuts_transitions, psis);
criterion_main!(benches);
