use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, FormulationChoice, ModelSpec, QuerySpec};
use super::metrics::{aggregate, MethodMetrics};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, select_columns};
use crate::model::{sample_laplace_mixture, standard_normal_vector, GenerativeModel, LinearMean, Prior, Randomizer};
use crate::normal::quantile;
use crate::posterior::{chain_summaries, run_sampler, PseudoPosterior};
use crate::queries::{
    carved_lasso_query, forward_stepwise_query, lasso_query, marginal_screening_query, theoretical_lambda, CarvingOptions,
};
use crate::selprob::{Formulation, NormalizerProblem, Stage};

/// Stream index reserved for the fixed design.
const DESIGN_STREAM: u64 = u64::MAX;
const LAMBDA_DRAWS: usize = 2000;

/// Per-trial inference for one method.
#[derive(Clone, Debug, Serialize)]
pub struct MethodTrial {
    pub covered: usize,
    pub squared_error: f64,
    pub total_length: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Used,
    SkippedEmpty,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub status: TrialStatus,
    pub selected: Vec<usize>,
    pub adjusted: Option<MethodTrial>,
    pub unadjusted: Option<MethodTrial>,
    pub formulation: Option<Formulation>,
    pub step_size: Option<f64>,
    pub divergent_steps: usize,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsTable {
    pub experiment: String,
    pub trials: usize,
    pub used: usize,
    pub skipped: usize,
    pub failed: usize,
    pub adjusted: MethodMetrics,
    pub unadjusted: MethodMetrics,
}

impl MetricsTable {
    /// Plain-text rendering of the table.
    pub fn render(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut out = format!(
            "{}: {} trials ({} used, {} skipped, {} failed)\n{:<12} {:>10} {:>10} {:>10}\n",
            self.experiment, self.trials, self.used, self.skipped, self.failed, "method", "coverage", "risk", "length"
        );
        for (name, m) in [("adjusted", &self.adjusted), ("unadjusted", &self.unadjusted)] {
            out.push_str(&format!("{:<12} {:>10} {:>10} {:>10}\n", name, f(m.coverage), f(m.risk), f(m.mean_length)));
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub table: MetricsTable,
    pub records: Vec<TrialRecord>,
}

/// Population least-squares target `(X_EᵀX_E)⁻¹ X_Eᵀ X* β*`.
pub fn target_ols(x_e: &DMatrix<f64>, x_star: &DMatrix<f64>, beta: &DVector<f64>) -> Result<DVector<f64>> {
    if x_star.ncols() != beta.len() || x_star.nrows() != x_e.nrows() {
        return Err(Error::Dimension { context: "target design", expected: x_e.nrows(), found: x_star.nrows() });
    }
    Ok(least_squares(x_e, &(x_star * beta))?.0)
}

/// Gaussian design with unit-norm columns.
pub fn normalized_design<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        let c = standard_normal_vector(n, rng);
        x.set_column(j, &(&c / c.norm()));
    }
    x
}

fn draw_beta<R: Rng + ?Sized>(model: &ModelSpec, p: usize, rng: &mut R) -> DVector<f64> {
    match *model {
        ModelSpec::Null => DVector::zeros(p),
        ModelSpec::LaplaceMixture { w, b1, b2 } => DVector::from_iterator(p, (0..p).map(|_| sample_laplace_mixture(w, b1, b2, rng))),
        ModelSpec::Sparse { support, amplitude } => {
            let mut beta = DVector::zeros(p);
            for j in rand::seq::index::sample(rng, p, support) {
                beta[j] = if rng.random::<bool>() { amplitude } else { -amplitude };
            }
            beta
        }
    }
}

/// Normalizer problem, observed data and the selected columns of one trial.
struct Selection {
    problem: NormalizerProblem,
    data: DVector<f64>,
    selected: Vec<usize>,
}

fn formulation_for(choice: FormulationChoice, stages: &[Stage], model: &GenerativeModel, fallback: Formulation) -> Formulation {
    let explicit = match choice {
        FormulationChoice::Auto => None,
        FormulationChoice::PrimalFull => Some(Formulation::PrimalFull),
        FormulationChoice::PrimalReduced => Some(Formulation::PrimalReduced),
        FormulationChoice::Dual => Some(Formulation::Dual),
        FormulationChoice::ChernoffDual => Some(Formulation::ChernoffDual),
    };
    if let Some(f) = explicit {
        return f;
    }
    let total: usize = stages.iter().map(|s| s.dim()).sum();
    let dual_ok = stages.iter().all(|s| !s.region.is_data_dependent());
    if dual_ok && total <= model.data_dim() {
        Formulation::Dual
    } else {
        fallback
    }
}

fn build_problem(cfg: &ExperimentConfig, model: GenerativeModel, stages: Vec<Stage>, data: DVector<f64>, selected: Vec<usize>) -> Result<Selection> {
    let diagonal = stages.iter().all(|s| s.randomizer.is_coordinate_independent() && s.map.has_canonical_structure(1e-12));
    let fallback = if diagonal { Formulation::PrimalReduced } else { Formulation::PrimalFull };
    let f = formulation_for(cfg.formulation, &stages, &model, fallback);
    Ok(Selection { problem: NormalizerProblem::new(model, stages, f)?, data, selected })
}

fn inference_sigma(cfg: &ExperimentConfig, x_e: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let (n, e) = x_e.shape();
    if !cfg.estimate_sigma {
        return Ok(cfg.sigma);
    }
    if n <= e + 1 {
        return Ok(1.0);
    }
    let (b, _) = least_squares(x_e, y)?;
    Ok(((y - x_e * b).norm_squared() / (n - e) as f64).sqrt())
}

fn lambda_or_default(lambda: Option<f64>, x: &DMatrix<f64>, sigma: f64, seed: u64) -> Result<f64> {
    match lambda {
        Some(l) => Ok(l),
        None => theoretical_lambda(x, sigma, LAMBDA_DRAWS, seed),
    }
}

/// Runs the configured query; `None` when nothing is selected.
fn select<R: Rng + ?Sized>(cfg: &ExperimentConfig, x: &DMatrix<f64>, y: &DVector<f64>, lambda_fixed: Option<f64>, rng: &mut R) -> Result<Option<Selection>> {
    let (n, p) = x.shape();
    let sigma = cfg.sigma;
    let tau = cfg.tau * sigma;
    let default_eps = 1.0 / (n as f64).sqrt();
    let lambda_seed = rng.next_u64();
    match &cfg.query {
        QuerySpec::LassoFixed { lambda, epsilon } | QuerySpec::LassoRandom { lambda, epsilon } => {
            let lam = match lambda_fixed {
                Some(l) => l,
                None => lambda_or_default(*lambda, x, sigma, lambda_seed)?,
            };
            let omega = standard_normal_vector(p, rng) * tau;
            let q = lasso_query(y, x, lam, epsilon.unwrap_or(default_eps), &omega)?;
            if q.outcome.is_empty() {
                return Ok(None);
            }
            let selected = q.outcome.active.clone();
            let x_e = select_columns(x, &selected);
            let model = GenerativeModel::linear_isotropic(x_e.clone(), inference_sigma(cfg, &x_e, y)?)?;
            let stage = Stage::from_query(&q, &Randomizer::isotropic(p, tau)?)?;
            Ok(Some(build_problem(cfg, model, vec![stage], y.clone(), selected)?))
        }
        QuerySpec::CarvedLasso { fraction, lambda, epsilon, bootstrap } => {
            let lam = lambda_or_default(*lambda, x, sigma, lambda_seed)?;
            let opts = CarvingOptions { lambda: lam, epsilon: epsilon.unwrap_or(default_eps), fraction: *fraction, bootstrap: *bootstrap };
            let cq = carved_lasso_query(y, x, opts, rng)?;
            if cq.query.outcome.is_empty() {
                return Ok(None);
            }
            let e = cq.query.outcome.active.len();
            let selected = cq.query.outcome.active.clone();
            let mut mean = DMatrix::zeros(p, e);
            for i in 0..e {
                mean[(i, i)] = 1.0;
            }
            let model = GenerativeModel::new(Arc::new(LinearMean::new(mean)), cq.sigma_f.clone())?;
            let q = cq.query;
            let stage = Stage::new(q.map, q.region, Randomizer::from_covariance(cq.sigma_g), q.realized_o)?;
            Ok(Some(build_problem(cfg, model, vec![stage], cq.data, selected)?))
        }
        QuerySpec::Fs { steps } => {
            let omegas: Vec<DVector<f64>> = (0..*steps).map(|k| standard_normal_vector(p - k, rng) * tau).collect();
            let queries = forward_stepwise_query(y, x, *steps, &omegas)?;
            let selected: Vec<usize> = queries.iter().map(|q| q.outcome.active[0]).collect();
            let stages = queries
                .iter()
                .map(|q| Stage::from_query(q, &Randomizer::isotropic(q.map.opt_dim(), tau)?))
                .collect::<Result<Vec<_>>>()?;
            let x_e = select_columns(x, &selected);
            let model = GenerativeModel::linear_isotropic(x_e.clone(), inference_sigma(cfg, &x_e, y)?)?;
            Ok(Some(build_problem(cfg, model, stages, y.clone(), selected)?))
        }
        QuerySpec::MsLasso { alpha, lambda, epsilon, screening } => {
            let mut stages = Vec::new();
            let survivors: Vec<usize> = if *screening {
                let w1 = standard_normal_vector(p, rng) * tau;
                let scr = marginal_screening_query(y, x, &vec![*alpha; p], sigma, &w1)?;
                if scr.outcome.is_empty() {
                    return Ok(None);
                }
                let keep = scr.outcome.active.clone();
                stages.push(Stage::from_query(&scr, &Randomizer::isotropic(p, tau)?)?);
                keep
            } else {
                (0..p).collect()
            };
            let x1 = select_columns(x, &survivors);
            let lam = match (lambda, lambda_fixed) {
                (Some(l), _) => *l,
                (None, Some(l)) => l,
                (None, None) => theoretical_lambda(&x1, sigma, LAMBDA_DRAWS, lambda_seed)?,
            };
            let w2 = standard_normal_vector(survivors.len(), rng) * tau;
            let q = lasso_query(y, &x1, lam, epsilon.unwrap_or(default_eps), &w2)?;
            if q.outcome.is_empty() {
                return Ok(None);
            }
            let selected: Vec<usize> = q.outcome.active.iter().map(|&j| survivors[j]).collect();
            stages.push(Stage::from_query(&q, &Randomizer::isotropic(survivors.len(), tau)?)?);
            let x_e = select_columns(x, &selected);
            let model = GenerativeModel::linear_isotropic(x_e.clone(), inference_sigma(cfg, &x_e, y)?)?;
            Ok(Some(build_problem(cfg, model, stages, y.clone(), selected)?))
        }
    }
}

fn interval_record(means: &[f64], lower: &[f64], upper: &[f64], target: &DVector<f64>) -> MethodTrial {
    let mut covered = 0;
    let mut squared_error = 0.0;
    let mut total_length = 0.0;
    for j in 0..target.len() {
        if lower[j] <= target[j] && target[j] <= upper[j] {
            covered += 1;
        }
        squared_error += (means[j] - target[j]).powi(2);
        total_length += upper[j] - lower[j];
    }
    MethodTrial { covered, squared_error, total_length }
}

/// Closed-form flat-prior posterior `N(β̂_OLS, σ²(X_EᵀX_E)⁻¹)` ignoring
/// selection.
fn unadjusted_inference(x_e: &DMatrix<f64>, y: &DVector<f64>, sigma: f64, level: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (b, cov) = least_squares(x_e, y)?;
    let zq = quantile(0.5 + level / 2.0);
    let half: Vec<f64> = (0..b.len()).map(|j| zq * sigma * cov[(j, j)].sqrt()).collect();
    let means: Vec<f64> = b.iter().copied().collect();
    let lower = means.iter().zip(&half).map(|(m, h)| m - h).collect();
    let upper = means.iter().zip(&half).map(|(m, h)| m + h).collect();
    Ok((means, lower, upper))
}

struct TrialContext<'a> {
    cfg: &'a ExperimentConfig,
    fixed_x: Option<&'a DMatrix<f64>>,
    lambda_fixed: Option<f64>,
}

fn run_trial(ctx: &TrialContext<'_>, trial: usize) -> TrialRecord {
    let cfg = ctx.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(trial as u64);
    let mut record = TrialRecord {
        trial,
        status: TrialStatus::Failed,
        selected: Vec::new(),
        adjusted: None,
        unadjusted: None,
        formulation: None,
        step_size: None,
        divergent_steps: 0,
        message: String::new(),
    };
    let owned_x;
    let x = match ctx.fixed_x {
        Some(x) => x,
        None => {
            owned_x = normalized_design(cfg.n, cfg.p, &mut rng);
            &owned_x
        }
    };
    let beta = draw_beta(&cfg.model, cfg.p, &mut rng);
    let y = x * &beta + standard_normal_vector(cfg.n, &mut rng) * cfg.sigma;
    let chain_seed = rng.next_u64();
    let outcome = (|| -> Result<Option<(Selection, MethodTrial, MethodTrial, f64, usize)>> {
        let Some(sel) = select(cfg, x, &y, ctx.lambda_fixed, &mut rng)? else { return Ok(None) };
        let x_e = select_columns(x, &sel.selected);
        let target = target_ols(&x_e, x, &beta)?;
        let sigma = inference_sigma(cfg, &x_e, &y)?;
        let (um, ul, uu) = unadjusted_inference(&x_e, &y, sigma, cfg.level)?;
        let unadjusted = interval_record(&um, &ul, &uu, &target);
        let pp = PseudoPosterior::new(Prior::Flat, sel.problem.clone(), sel.data.clone())?;
        let init = DVector::from_vec(um.clone());
        let chain = run_sampler(&pp, &init, &cfg.sampler.config(chain_seed))?;
        let summ = chain_summaries(&chain, cfg.level)?;
        let means: Vec<f64> = summ.iter().map(|s| s.mean).collect();
        let lower: Vec<f64> = summ.iter().map(|s| s.lower).collect();
        let upper: Vec<f64> = summ.iter().map(|s| s.upper).collect();
        let adjusted = interval_record(&means, &lower, &upper, &target);
        Ok(Some((sel, adjusted, unadjusted, chain.step_size, chain.divergent_count())))
    })();
    match outcome {
        Ok(None) => record.status = TrialStatus::SkippedEmpty,
        Ok(Some((sel, adjusted, unadjusted, eta, div))) => {
            record.status = TrialStatus::Used;
            record.formulation = Some(sel.problem.formulation());
            record.selected = sel.selected;
            record.adjusted = Some(adjusted);
            record.unadjusted = Some(unadjusted);
            record.step_size = Some(eta);
            record.divergent_steps = div;
        }
        Err(e) => {
            log::warn!("trial {trial} failed: {e}");
            record.message = e.to_string();
        }
    }
    record
}

/// Runs every trial of the experiment and aggregates adjusted and
/// unadjusted metrics. Trials run in parallel; results depend only on the
/// configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let fixed_x = if cfg.query.random_design() {
        None
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(DESIGN_STREAM);
        Some(normalized_design(cfg.n, cfg.p, &mut rng))
    };
    let lambda_fixed = match (&cfg.query, &fixed_x) {
        (QuerySpec::LassoFixed { lambda, .. }, Some(x)) => Some(lambda_or_default(*lambda, x, cfg.sigma, cfg.seed)?),
        (QuerySpec::MsLasso { lambda: None, screening: false, .. }, Some(x)) => Some(theoretical_lambda(x, cfg.sigma, LAMBDA_DRAWS, cfg.seed)?),
        _ => None,
    };
    let ctx = TrialContext { cfg, fixed_x: fixed_x.as_ref(), lambda_fixed };
    let records: Vec<TrialRecord> = (0..cfg.trials).into_par_iter().map(|t| run_trial(&ctx, t)).collect();
    let table = aggregate(cfg, &records);
    if table.trials > 0 && 2 * table.skipped > table.trials {
        log::warn!("{}: {} of {} trials selected nothing", cfg.name, table.skipped, table.trials);
    }
    Ok(ExperimentReport { table, records })
}

/// Screening followed by the Lasso; the configuration must use the
/// `ms_lasso` query.
pub fn run_two_stage_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    if !matches!(cfg.query, QuerySpec::MsLasso { .. }) {
        return Err(Error::InvalidArgument(format!("two-stage experiments need the ms_lasso query, got {}", cfg.query.name())));
    }
    run_experiment(cfg)
}
