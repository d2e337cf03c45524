use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::linalg::{least_squares, select_columns};
use crate::model::{standard_normal_vector, GenerativeModel, LinearMean, Randomizer};
use crate::queries::{lasso_query, InversionMap, SelectionRegion};
use crate::selprob::{Formulation, Stage};
use crate::SpdMatrix;

fn untruncated(s: DVector<f64>, prior: Prior) -> PseudoPosterior {
    let k = s.len();
    let model = GenerativeModel::new(Arc::new(LinearMean::identity(k)), SpdMatrix::isotropic(k, 1.0).unwrap()).unwrap();
    let map = InversionMap::identity_order(DMatrix::zeros(1, k), DMatrix::identity(1, 1), DVector::zeros(1), 1).unwrap();
    let problem = NormalizerProblem::single(
        model,
        Randomizer::isotropic(1, 1.0).unwrap(),
        map,
        SelectionRegion::unconstrained(1),
        DVector::zeros(1),
        Formulation::PrimalFull,
    )
    .unwrap();
    PseudoPosterior::new(prior, problem, s).unwrap()
}

/// Randomized Lasso on `X`, with the selected model `y ~ N(X_E β_E, I)`.
fn lasso_posterior(seed: u64, n: usize, p: usize, signal: f64, lambda: f64, formulation: Formulation, prior: Prior) -> Option<(PseudoPosterior, DVector<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    for mut c in x.column_iter_mut() {
        let nrm = c.norm();
        c /= nrm;
    }
    let beta = DVector::from_fn(p, |j, _| if j < 2 { signal } else { 0.0 });
    let y = &x * &beta + standard_normal_vector(n, &mut rng);
    let omega = standard_normal_vector(p, &mut rng);
    let q = lasso_query(&y, &x, lambda, 1.0 / (n as f64).sqrt(), &omega).unwrap();
    if q.outcome.active.is_empty() {
        return None;
    }
    let xe = select_columns(&x, &q.outcome.active);
    let (ols, _) = least_squares(&xe, &y).unwrap();
    let model = GenerativeModel::linear_isotropic(xe, 1.0).unwrap();
    let stage = Stage::from_query(&q, &Randomizer::isotropic(p, 1.0).unwrap()).unwrap();
    let problem = NormalizerProblem::new(model, vec![stage], formulation).unwrap();
    Some((PseudoPosterior::new(prior, problem, y).unwrap(), ols, q.outcome.signs.clone()))
}

#[test]
fn langevin_step_arithmetic() {
    let b = langevin_step(&DVector::from_vec(vec![0.0]), &DVector::from_vec(vec![2.0]), 0.01, &DVector::from_vec(vec![1.0]));
    assert!((b[0] - (0.02 + 0.02f64.sqrt())).abs() < 1e-15);
    assert!((b[0] - 0.161421).abs() < 1e-6);
    let x = DVector::from_vec(vec![1.5, -2.0]);
    let z = DVector::zeros(2);
    assert_eq!(langevin_step(&x, &z, 0.3, &z), x);
    let g = DVector::from_vec(vec![0.7, -1.1]);
    let eta = 1e-7;
    let moved = langevin_step(&x, &g, eta, &z) - &x;
    assert!((moved - &g * eta).amax() < 1e-15);
}

#[test]
fn untruncated_gradient_is_the_score() {
    let s = DVector::from_vec(vec![0.5, -1.0, 2.0]);
    let pp = untruncated(s.clone(), Prior::Flat);
    let beta = DVector::from_vec(vec![0.1, 0.2, 0.3]);
    let g = pp.gradient(&beta).unwrap();
    assert!((g - (&s - &beta)).amax() < 1e-12);
    let map = pp.selective_map(&DVector::zeros(3), 1e-10).unwrap();
    assert!((map - &s).amax() < 1e-9);
}

fn finite_difference_check(pp: &PseudoPosterior, beta: &DVector<f64>) -> f64 {
    let g = pp.gradient(beta).unwrap();
    let mut worst = 0.0f64;
    for i in 0..beta.len() {
        let h = 1e-5 * (1.0 + beta[i].abs());
        let mut a = beta.clone();
        let mut b = beta.clone();
        a[i] += h;
        b[i] -= h;
        let fd = (pp.log_density(&a).unwrap() - pp.log_density(&b).unwrap()) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / (1.0 + g[i].abs()));
    }
    worst
}

#[test]
fn gradient_matches_finite_differences() {
    let forms = [Formulation::PrimalFull, Formulation::PrimalReduced, Formulation::Dual];
    let priors = [Prior::Flat, Prior::gaussian(0.0, 2.0).unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (fi, f) in forms.iter().enumerate() {
        for (pi, prior) in priors.iter().enumerate() {
            let (pp, ols, _) = lasso_posterior(10 + fi as u64 * 3 + pi as u64, 20, 6, 3.0, 1.5, *f, prior.clone()).unwrap();
            for _ in 0..5 {
                let beta = &ols + standard_normal_vector(ols.len(), &mut rng) * 0.5;
                let err = finite_difference_check(&pp, &beta);
                assert!(err <= 1e-4, "{f}, prior {pi}: {err}");
            }
        }
    }
}

#[test]
fn selective_mle_solves_estimating_equation() {
    for seed in 0..5 {
        let Some((pp, ols, _)) = lasso_posterior(seed, 30, 8, 2.0, 1.5, Formulation::Dual, Prior::Flat) else { continue };
        let mle = pp.selective_map(&ols, 1e-8).unwrap();
        let solve = pp.normalizer().solve(&mle).unwrap();
        let model = pp.normalizer().model();
        let resid = model.jacobian(&mle).transpose() * model.covariance().solve(&(&solve.optimal_s - pp.observed()));
        assert!(resid.amax() <= 1e-6, "seed {seed}: {}", resid.amax());
        assert!(pp.gradient(&mle).unwrap().amax() <= 1e-6);
    }
}

#[test]
fn gaussian_prior_path_moves_map_toward_prior_mean() {
    let (pp, ols, _) = lasso_posterior(3, 30, 8, 2.0, 1.5, Formulation::Dual, Prior::Flat).unwrap();
    let problem = pp.normalizer().clone();
    let s = pp.observed().clone();
    let mut last_norm = f64::INFINITY;
    let mut last: Option<DVector<f64>> = None;
    for scale in [10.0, 3.0, 1.0, 0.3, 0.1] {
        let pp = PseudoPosterior::new(Prior::gaussian(0.0, scale).unwrap(), problem.clone(), s.clone()).unwrap();
        let m = pp.selective_map(&ols, 1e-8).unwrap();
        let nrm = m.norm();
        assert!(nrm < last_norm, "scale {scale}: {nrm} ≥ {last_norm}");
        if let Some(prev) = &last {
            assert!((&m - prev).norm() < 2.0 * prev.norm() + 1.0);
        }
        last_norm = nrm;
        last = Some(m);
    }
}

#[test]
fn untruncated_chain_matches_exact_posterior() {
    let s = DVector::from_vec(vec![0.7]);
    let pp = untruncated(s.clone(), Prior::Flat);
    let cfg = SamplerConfig { iterations: 22_000, burn_in: 2_000, seed: 3, ..SamplerConfig::default() };
    let chain = run_sampler(&pp, &DVector::zeros(1), &cfg).unwrap();
    let kept = chain.kept();
    assert_eq!(kept.nrows(), 20_000);
    let summ = chain_summaries(&chain, 0.9).unwrap();
    let xs: Vec<f64> = kept.column(0).iter().copied().collect();
    let mean = summ[0].mean;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    assert!((mean - s[0]).abs() <= 3.0 * var.sqrt() / summ[0].ess.sqrt(), "mean {mean}, ess {}", summ[0].ess);
    assert!((var - 1.0).abs() <= 0.15, "variance {var}");
    let again = run_sampler(&pp, &DVector::zeros(1), &cfg).unwrap();
    assert_eq!(chain.draws, again.draws);
}

#[test]
fn mala_chain_matches_exact_posterior() {
    let s = DVector::from_vec(vec![-0.4, 1.2]);
    let pp = untruncated(s.clone(), Prior::Flat);
    let cfg = SamplerConfig { iterations: 12_000, burn_in: 2_000, step_size: Some(0.5), seed: 8, mala: true, ..SamplerConfig::default() };
    let chain = run_sampler(&pp, &DVector::zeros(2), &cfg).unwrap();
    assert!(chain.acceptance_rate() > 0.5 && chain.acceptance_rate() < 1.0);
    for (j, c) in chain_summaries(&chain, 0.9).unwrap().iter().enumerate() {
        assert!((c.mean - s[j]).abs() <= 3.0 / c.ess.sqrt());
    }
}

#[test]
fn untruncated_credible_intervals_cover() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let reps = 200;
    let mut covered = 0;
    for r in 0..reps {
        let truth: f64 = rng.random_range(-2.0..2.0);
        let s = DVector::from_vec(vec![truth + rng.sample::<f64, _>(rand_distr::StandardNormal)]);
        let pp = untruncated(s, Prior::Flat);
        let cfg = SamplerConfig { iterations: 3_500, burn_in: 500, seed: r, ..SamplerConfig::default() };
        let chain = run_sampler(&pp, &DVector::zeros(1), &cfg).unwrap();
        let c = &chain_summaries(&chain, 0.9).unwrap()[0];
        if c.lower <= truth && truth <= c.upper {
            covered += 1;
        }
    }
    let rate = covered as f64 / reps as f64;
    assert!((rate - 0.9).abs() <= 0.05, "coverage {rate}");
}

#[test]
fn summaries_of_simple_chains() {
    let constant = DMatrix::from_element(50, 2, 1.25);
    for c in summarize_draws(&constant, 0.9).unwrap() {
        assert_eq!((c.mean, c.lower, c.upper), (1.25, 1.25, 1.25));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let iid = DMatrix::from_fn(10_000, 1, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let c = &summarize_draws(&iid, 0.9).unwrap()[0];
    assert!((c.lower + 1.645).abs() < 0.05 && (c.upper - 1.645).abs() < 0.05);
    assert_eq!(c.mean, iid.column(0).iter().sum::<f64>() / 10_000.0);
    assert!(c.ess > 8_000.0);
    assert!(summarize_draws(&DMatrix::zeros(0, 1), 0.9).is_err());
    assert!(summarize_draws(&iid, 1.0).is_err());
    assert_eq!(quantile_type7(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
}

#[test]
fn invalid_sampler_settings_are_rejected() {
    let pp = untruncated(DVector::from_vec(vec![0.0]), Prior::Flat);
    let bad = SamplerConfig { iterations: 10, burn_in: 10, ..SamplerConfig::default() };
    assert!(run_sampler(&pp, &DVector::zeros(1), &bad).is_err());
    let neg = SamplerConfig { iterations: 10, burn_in: 1, step_size: Some(-1.0), ..SamplerConfig::default() };
    assert!(run_sampler(&pp, &DVector::zeros(1), &neg).is_err());
}

#[test]
fn selective_map_shrinks_against_selected_sign() {
    let mut agree = 0;
    let mut total = 0;
    let mut seed = 0;
    while total < 50 {
        seed += 1;
        let Some((pp, ols, signs)) = lasso_posterior(1000 + seed, 40, 10, 0.0, 1.0, Formulation::Dual, Prior::Flat) else { continue };
        let Some(j) = signs.iter().position(|&z| z > 0.0) else { continue };
        let map = pp.selective_map(&ols, 1e-6).unwrap();
        total += 1;
        if map[j] < ols[j] {
            agree += 1;
        }
    }
    assert!(agree as f64 >= 0.9 * total as f64, "{agree}/{total}");
}

#[test]
fn formulations_give_matching_posterior_means() {
    let (pp_red, ols, _) = lasso_posterior(21, 30, 6, 3.0, 1.5, Formulation::PrimalReduced, Prior::Flat).unwrap();
    let pp_dual = PseudoPosterior::new(Prior::Flat, pp_red.normalizer().with_formulation(Formulation::Dual).unwrap(), pp_red.observed().clone()).unwrap();
    let cfg = SamplerConfig { iterations: 9_000, burn_in: 1_000, seed: 4, ..SamplerConfig::default() };
    let a = chain_summaries(&run_sampler(&pp_red, &ols, &cfg).unwrap(), 0.9).unwrap();
    let b = chain_summaries(&run_sampler(&pp_dual, &ols, &SamplerConfig { seed: 5, ..cfg.clone() }).unwrap(), 0.9).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let sd = (x.upper - x.lower) / (2.0 * 1.645);
        let se = (sd * sd / x.ess + sd * sd / y.ess).sqrt();
        assert!((x.mean - y.mean).abs() <= 3.0 * se, "{} vs {} (se {se})", x.mean, y.mean);
    }
}
