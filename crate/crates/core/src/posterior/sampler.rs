use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PosteriorEval, PseudoPosterior};
use crate::error::{Error, Result};
use crate::model::standard_normal_vector;

/// Fraction of divergent steps beyond which a chain is abandoned.
const MAX_DIVERGENT_FRACTION: f64 = 0.2;
const MAX_HALVINGS: usize = 30;
const PROBES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Total iterations, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    /// Step size; when absent, `step_scale / L̂` with `L̂` a probe estimate
    /// of the gradient Lipschitz constant.
    pub step_size: Option<f64>,
    pub step_scale: f64,
    pub seed: u64,
    /// Metropolis-adjusted proposals.
    pub mala: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { iterations: 25_000, burn_in: 5_000, step_size: None, step_scale: 0.1, seed: 0, mala: false }
    }
}

#[derive(Clone, Debug)]
pub struct ChainResult {
    /// One row per iteration, burn-in included.
    pub draws: DMatrix<f64>,
    pub burn_in: usize,
    pub step_size: f64,
    pub seed: u64,
    pub gradient_norms: Vec<f64>,
    /// Steps that needed a reduced step size or were rejected outright.
    pub divergent: Vec<bool>,
    /// Metropolis acceptances; equals the iteration count for plain Langevin.
    pub accepted: usize,
}

impl ChainResult {
    pub fn kept(&self) -> DMatrix<f64> {
        self.draws.rows(self.burn_in, self.draws.nrows() - self.burn_in).into_owned()
    }

    pub fn divergent_count(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.draws.nrows().max(1) as f64
    }

    pub fn mean(&self) -> DVector<f64> {
        super::summary::column_means(&self.kept())
    }
}

/// `β + η·∇ + √(2η)·ξ`.
pub fn langevin_step(beta: &DVector<f64>, grad: &DVector<f64>, eta: f64, noise: &DVector<f64>) -> DVector<f64> {
    beta + grad * eta + noise * (2.0 * eta).sqrt()
}

/// Crude Lipschitz estimate of the gradient from random probes around `x`.
fn lipschitz_estimate(pp: &PseudoPosterior, x: &DVector<f64>, at: &PosteriorEval, rng: &mut ChaCha8Rng) -> f64 {
    let mut best = 0.0f64;
    for _ in 0..PROBES {
        let delta = standard_normal_vector(x.len(), rng) * 0.1;
        if let Ok(ev) = pp.evaluate(&(x + &delta), at.solve.as_ref()) {
            let l = (&ev.gradient - &at.gradient).norm() / delta.norm();
            if l.is_finite() {
                best = best.max(l);
            }
        }
    }
    if best > 0.0 {
        best
    } else {
        1.0
    }
}

fn log_proposal(to: &DVector<f64>, from: &DVector<f64>, grad_from: &DVector<f64>, eta: f64) -> f64 {
    -(to - from - grad_from * eta).norm_squared() / (4.0 * eta)
}

/// Runs one Langevin chain on the pseudo posterior from `init`.
///
/// Each step solves the normalizer at the proposal, warm-started from the
/// previous optimizer. A proposal whose evaluation fails is retried with a
/// halved step and the same noise.
pub fn run_sampler(pp: &PseudoPosterior, init: &DVector<f64>, config: &SamplerConfig) -> Result<ChainResult> {
    if config.iterations <= config.burn_in {
        return Err(Error::InvalidArgument(format!(
            "iterations ({}) must exceed burn-in ({})",
            config.iterations, config.burn_in
        )));
    }
    if init.len() != pp.dim() {
        return Err(Error::Dimension { context: "sampler start", expected: pp.dim(), found: init.len() });
    }
    if let Some(eta) = config.step_size {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut beta = init.clone();
    let mut current = pp.evaluate(&beta, None)?;
    let eta = match config.step_size {
        Some(eta) => eta,
        None => config.step_scale / lipschitz_estimate(pp, &beta, &current, &mut rng),
    };
    let k = beta.len();
    let mut draws = DMatrix::zeros(config.iterations, k);
    let mut gradient_norms = Vec::with_capacity(config.iterations);
    let mut divergent = Vec::with_capacity(config.iterations);
    let mut n_divergent = 0usize;
    let mut accepted = 0usize;
    let budget = (MAX_DIVERGENT_FRACTION * config.iterations as f64).floor() as usize;

    for it in 0..config.iterations {
        let noise = standard_normal_vector(k, &mut rng);
        let u: f64 = rng.random();
        let mut step = eta;
        let mut proposal = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = langevin_step(&beta, &current.gradient, step, &noise);
            if let Ok(ev) = pp.evaluate(&cand, current.solve.as_ref()) {
                proposal = Some((cand, ev));
                break;
            }
            step *= 0.5;
        }
        let diverged = step < eta || proposal.is_none();
        if diverged {
            n_divergent += 1;
            log::debug!("step {it}: divergent proposal, step size reduced to {step:e}");
            if n_divergent > budget {
                return Err(Error::Divergence { divergent: n_divergent, iterations: it + 1 });
            }
        }
        if let Some((cand, ev)) = proposal {
            let accept = if config.mala {
                let log_ratio = ev.log_density - current.log_density + log_proposal(&beta, &cand, &ev.gradient, step)
                    - log_proposal(&cand, &beta, &current.gradient, step);
                u.ln() < log_ratio
            } else {
                true
            };
            if accept {
                beta = cand;
                current = ev;
                accepted += 1;
            }
        }
        draws.row_mut(it).copy_from(&beta.transpose());
        gradient_norms.push(current.gradient.norm());
        divergent.push(diverged);
    }
    Ok(ChainResult { draws, burn_in: config.burn_in, step_size: eta, seed: config.seed, gradient_norms, divergent, accepted })
}
