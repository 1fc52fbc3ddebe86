use std::hint::black_box;

use ambsec_bench::{detector_fixture, link_fixture, SEED};
use ambsec_core::features::{sample_covariance, FeatureReference};
use ambsec_core::mlk::{mlk_decide, mlk_statistic};
use ambsec_core::nn::backward;
use ambsec_core::rate::{estimate_max_rate, posterior_mu0, RateConfig};
use ambsec_core::security::{binomial, guess_success_prob};
use ambsec_core::Prng;
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn linear_algebra(c: &mut Criterion) {
    let fx = link_fixture(10, 50);
    let r1 = fx.cov.r1().matrix().clone();
    c.bench_function("inverse_lu_m10", |b| b.iter(|| black_box(&r1).inverse().unwrap()));
    c.bench_function("cholesky_m10", |b| b.iter(|| black_box(&r1).cholesky().unwrap()));
    c.bench_function("sample_covariance_m10_n50", |b| b.iter(|| sample_covariance(black_box(&fx.blocks[1]))));
}

fn detection(c: &mut Criterion) {
    let fx = link_fixture(10, 50);
    c.bench_function("mlk_statistic_m10_n50", |b| b.iter(|| mlk_statistic(black_box(&fx.blocks[1]), &fx.cov)));
    c.bench_function("mlk_decide_m10_n50", |b| b.iter(|| mlk_decide(black_box(&fx.blocks[0]), &fx.cov)));

    let reference = FeatureReference::new(fx.cov.r0().matrix(), fx.cov.r1().matrix()).unwrap();
    let s = sample_covariance(&fx.blocks[1]);
    c.bench_function("features_m10", |b| b.iter(|| reference.features(black_box(&s))));
}

fn network(c: &mut Criterion) {
    let (model, data) = detector_fixture(10, 100);
    let one = data.get(0).0.to_vec();
    c.bench_function("mlp_forward_single_m10", |b| b.iter(|| model.forward(black_box(&one))));
    let mut group = c.benchmark_group("mlp_batch_100_m10");
    group.sample_size(20);
    group.bench_function("forward", |b| b.iter(|| model.forward_batch(black_box(data.features()))));
    group.bench_function("backward", |b| b.iter(|| backward(&model, black_box(data.features()), data.labels()).unwrap()));
    group.finish();
}

fn rate(c: &mut Criterion) {
    let fx = link_fixture(3, 50);
    let v = fx.blocks[1].column(0);
    c.bench_function("posterior_mu0_m3", |b| b.iter(|| posterior_mu0(black_box(v.as_slice()), &fx.cov, 0.5).unwrap()));
    let cfg = RateConfig { theta0: 0.5, params: fx.params, trials_signal: 100, trials_channel: 10 };
    c.bench_function("rate_estimate_1000_samples_m3", |b| {
        b.iter_batched(|| Prng::new(SEED, 1), |rng| estimate_max_rate(&cfg, &rng).unwrap(), BatchSize::SmallInput)
    });
}

fn security(c: &mut Criterion) {
    c.bench_function("binomial_1000_500", |b| b.iter(|| binomial(black_box(1000), black_box(500))));
    c.bench_function("success_prob_100_50", |b| b.iter(|| guess_success_prob(black_box(100), black_box(50)).unwrap()));
}

criterion_group!(benches, linear_algebra, detection, network, rate, security);
criterion_main!(benches);
