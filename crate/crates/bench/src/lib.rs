//! Instance builders shared by the benchmarks.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selbayes::harness::normalized_design;
use selbayes::linalg::{select_columns, SpdMatrix};
use selbayes::model::standard_normal_vector;
use selbayes::queries::lasso_query;
use selbayes::{Formulation, GenerativeModel, LinearMean, NormalizerProblem, Prior, PseudoPosterior, Randomizer, Stage};

/// A randomized Lasso selection on a sparse signal, with the selected-model
/// pseudo-posterior and a starting point inside the posterior bulk.
pub struct LassoInstance {
    pub posterior: PseudoPosterior,
    pub beta: DVector<f64>,
    pub active: usize,
}

pub fn lasso_instance(n: usize, p: usize, formulation: Formulation, seed: u64) -> LassoInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normalized_design(n, p, &mut rng);
    let mut beta = DVector::zeros(p);
    beta[0] = 6.0;
    beta[1] = -6.0;
    let y: DVector<f64> = &x * &beta + standard_normal_vector(n, &mut rng);
    let g = Randomizer::isotropic(p, 1.0).unwrap();
    let omega = g.sample(&mut rng);
    let q = lasso_query(&y, &x, 1.5, 1.0 / (n as f64).sqrt(), &omega).unwrap();
    let stage = Stage::from_query(&q, &g).unwrap();
    let e = q.outcome.active.len();
    let xe: DMatrix<f64> = select_columns(&x, &q.outcome.active);
    let model = GenerativeModel::new(Arc::new(LinearMean::new(xe.clone())), SpdMatrix::isotropic(n, 1.0).unwrap()).unwrap();
    let problem = NormalizerProblem::new(model, vec![stage], formulation).unwrap();
    let start = xe.clone().pseudo_inverse(1e-12).unwrap() * &y;
    LassoInstance { posterior: PseudoPosterior::new(Prior::Flat, problem, y).unwrap(), beta: start, active: e }
}
