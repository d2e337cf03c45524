//! Pseudo selective posterior and its samplers.
//!
//! With the normalizer value `v(β) ≈ log P(selection | β)` the target is
//! `log π(β) + log f(s|β) − v(β)`, whose gradient needs only the normalizer
//! optimizer: `∇log π(β) + Jᵀ Σ_f⁻¹ (s − s*(β))`.

mod sampler;
mod summary;

pub use sampler::{langevin_step, run_sampler, ChainResult, SamplerConfig};
pub use summary::{chain_summaries, effective_sample_size, quantile_type7, summarize_draws, CoordinateSummary};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::Prior;
use crate::optim::{minimize_bfgs, BfgsOptions};
use crate::selprob::{NormalizerProblem, SolveResult};

#[derive(Clone, Debug)]
pub struct PseudoPosterior {
    prior: Prior,
    normalizer: NormalizerProblem,
    observed_s: DVector<f64>,
    /// Whether the selection term is included; disabling it gives the naive
    /// posterior that ignores selection.
    adjusted: bool,
}

/// Log density and gradient at one point, with the normalizer solve that
/// produced them.
#[derive(Clone, Debug)]
pub struct PosteriorEval {
    pub log_density: f64,
    pub gradient: DVector<f64>,
    pub solve: Option<SolveResult>,
}

impl PseudoPosterior {
    pub fn new(prior: Prior, normalizer: NormalizerProblem, observed_s: DVector<f64>) -> Result<Self> {
        let d = normalizer.model().data_dim();
        if observed_s.len() != d {
            return Err(Error::Dimension { context: "observed data", expected: d, found: observed_s.len() });
        }
        Ok(Self { prior, normalizer, observed_s, adjusted: true })
    }

    /// The same target without the selection correction.
    pub fn unadjusted(mut self) -> Self {
        self.adjusted = false;
        self
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn normalizer(&self) -> &NormalizerProblem {
        &self.normalizer
    }

    pub fn observed(&self) -> &DVector<f64> {
        &self.observed_s
    }

    pub fn dim(&self) -> usize {
        self.normalizer.model().param_dim()
    }

    /// Evaluates the log pseudo posterior and its gradient, warm-starting
    /// the normalizer from `warm`.
    pub fn evaluate(&self, beta: &DVector<f64>, warm: Option<&SolveResult>) -> Result<PosteriorEval> {
        let model = self.normalizer.model();
        let mut log_density = self.prior.log_density(beta) + model.log_density(&self.observed_s, beta);
        if !self.adjusted {
            let gradient = self.prior.gradient(beta) + model.score(&self.observed_s, beta);
            return Ok(PosteriorEval { log_density, gradient, solve: None });
        }
        let solve = self.normalizer.solve_warm(beta, warm)?;
        log_density -= solve.value;
        let r = &self.observed_s - &solve.optimal_s;
        let gradient = self.prior.gradient(beta) + model.jacobian(beta).transpose() * model.covariance().solve(&r);
        if !log_density.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonConvergence { message: "non-finite posterior evaluation".into(), iterations: solve.iterations, residual: f64::NAN });
        }
        Ok(PosteriorEval { log_density, gradient, solve: Some(solve) })
    }

    pub fn log_density(&self, beta: &DVector<f64>) -> Result<f64> {
        Ok(self.evaluate(beta, None)?.log_density)
    }

    pub fn gradient(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.evaluate(beta, None)?.gradient)
    }

    /// Maximizer of the pseudo posterior; with a flat prior this is the
    /// approximate selective MLE solving `∇Γ(β) = s`.
    pub fn selective_map(&self, init: &DVector<f64>, tolerance: f64) -> Result<DVector<f64>> {
        if init.len() != self.dim() {
            return Err(Error::Dimension { context: "MAP start", expected: self.dim(), found: init.len() });
        }
        let mut warm: Option<SolveResult> = None;
        let opts = BfgsOptions { tolerance, ..BfgsOptions::default() };
        let m = minimize_bfgs(
            |b| {
                let ev = self.evaluate(b, warm.as_ref())?;
                if ev.solve.is_some() {
                    warm = ev.solve;
                }
                Ok((-ev.log_density, -ev.gradient))
            },
            init.clone(),
            opts,
        )?;
        Ok(m.x)
    }
}

/// Convenience wrapper over [`PseudoPosterior::gradient`].
pub fn log_pseudo_posterior_grad(pp: &PseudoPosterior, beta: &DVector<f64>) -> Result<DVector<f64>> {
    pp.gradient(beta)
}

/// Convenience wrapper over [`PseudoPosterior::selective_map`].
pub fn selective_map(pp: &PseudoPosterior, init: &DVector<f64>, tolerance: f64) -> Result<DVector<f64>> {
    pp.selective_map(init, tolerance)
}

#[cfg(test)]
mod tests;
