use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use selbayes::posterior::run_sampler;
use selbayes::selprob::mc_selection_probability;
use selbayes::{Formulation, SamplerConfig};
use selbayes_bench::lasso_instance;

fn normalizer(c: &mut Criterion) {
    let mut group = c.benchmark_group("normalizer");
    for formulation in [Formulation::PrimalFull, Formulation::PrimalReduced, Formulation::Dual, Formulation::ChernoffDual] {
        for &(n, p) in &[(50, 10), (100, 50)] {
            let inst = lasso_instance(n, p, formulation, 7);
            let id = BenchmarkId::new(formulation.name(), format!("n{n}_p{p}"));
            group.bench_with_input(id, &inst, |b, inst| b.iter(|| inst.posterior.normalizer().solve(&inst.beta).unwrap()));
        }
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let inst = lasso_instance(100, 50, Formulation::Dual, 7);
    c.bench_function("posterior_gradient/dual_n100_p50", |b| b.iter(|| inst.posterior.gradient(&inst.beta).unwrap()));
}

fn oracle(c: &mut Criterion) {
    let inst = lasso_instance(10, 5, Formulation::PrimalFull, 3);
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    group.bench_function("n10_p5_2e5", |b| b.iter(|| mc_selection_probability(inst.posterior.normalizer(), &inst.beta, 200_000, 1).unwrap()));
    group.finish();
}

fn sampler(c: &mut Criterion) {
    let inst = lasso_instance(100, 50, Formulation::Dual, 7);
    let config = SamplerConfig { iterations: 500, burn_in: 100, seed: 1, ..SamplerConfig::default() };
    let mut group = c.benchmark_group("sampler");
    group.sample_size(10);
    group.bench_function("langevin_500/dual_n100_p50", |b| b.iter(|| run_sampler(&inst.posterior, &inst.beta, &config).unwrap()));
    group.finish();
}

criterion_group!(benches, normalizer, gradient, oracle, sampler);
criterion_main!(benches);
