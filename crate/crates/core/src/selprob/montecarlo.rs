use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::NormalizerProblem;
use crate::error::{Error, Result};
use crate::model::standard_normal_vector;

/// Largest `d + Σ p_k` accepted by the Monte Carlo oracle.
pub const MC_MAX_DIM: usize = 30;

const CHUNK: usize = 1 << 15;

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloEstimate {
    pub probability: f64,
    pub log_probability: f64,
    /// Delta-method standard error of `log_probability`.
    pub std_error: f64,
    pub hits: u64,
    pub draws: u64,
    /// No draw hit the event; `log_probability` is then the 95% upper
    /// confidence limit `log(3/draws)`.
    pub upper_bound_only: bool,
}

impl MonteCarloEstimate {
    fn from_counts(hits: u64, draws: u64) -> Self {
        let n = draws as f64;
        if hits == 0 {
            return Self { probability: 0.0, log_probability: (3.0 / n).ln(), std_error: f64::INFINITY, hits, draws, upper_bound_only: true };
        }
        let p = hits as f64 / n;
        let se = (p * (1.0 - p) / n).sqrt();
        Self { probability: p, log_probability: p.ln(), std_error: se / p, hits, draws, upper_bound_only: false }
    }
}

struct StageSampler {
    d: DMatrix<f64>,
    q: DVector<f64>,
    p_inv: DMatrix<f64>,
    chol: DMatrix<f64>,
}

/// Fraction of joint draws `S ~ N(μ(β), Σ_f)`, `Ω_k ~ N(0, Σ_{g,k})` whose
/// inverted optimization variables land in every stage's region.
///
/// Draws are split into fixed chunks with one counter-based stream each, so
/// the estimate depends only on `seed` and `draws`.
pub fn mc_selection_probability(problem: &NormalizerProblem, beta: &DVector<f64>, draws: u64, seed: u64) -> Result<MonteCarloEstimate> {
    let total: usize = problem.model().data_dim() + problem.stages().iter().map(|st| st.dim()).sum::<usize>();
    if total > MC_MAX_DIM {
        return Err(Error::InvalidArgument(format!("Monte Carlo oracle limited to d + p ≤ {MC_MAX_DIM}, got {total}")));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument("at least one draw is required".into()));
    }
    let mu = problem.model().mean(beta);
    let lf = problem.model().covariance().lower().clone();
    let samplers = problem
        .stages()
        .iter()
        .map(|st| {
            let p_inv = st.map.p.clone().try_inverse().ok_or(Error::RankDeficient { columns: vec![] })?;
            Ok(StageSampler { d: st.map.d.clone(), q: st.map.q.clone(), p_inv, chol: st.randomizer.covariance().lower().clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let chunks = draws.div_ceil(CHUNK as u64);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let n = (draws - c * CHUNK as u64).min(CHUNK as u64);
            let mut count = 0u64;
            for _ in 0..n {
                let s = &mu + &lf * standard_normal_vector(mu.len(), &mut rng);
                let mut hit = true;
                for (st, sm) in problem.stages().iter().zip(&samplers) {
                    let omega = &sm.chol * standard_normal_vector(sm.q.len(), &mut rng);
                    if !hit {
                        continue;
                    }
                    let o = &sm.p_inv * (omega - &sm.d * &s - &sm.q);
                    hit = st.region.contains(&o);
                }
                count += hit as u64;
            }
            count
        })
        .sum();
    Ok(MonteCarloEstimate::from_counts(hits, draws))
}
