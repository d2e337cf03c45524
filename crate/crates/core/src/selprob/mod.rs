//! Convex approximations to the log selection probability.
//!
//! For a data law `S ~ N(μ(β), Σ_f)`, randomization `Ω ~ N(0, Σ_g)` and a
//! selection event `{o(S, Ω) ∈ R}`, the log probability is approximated by
//!
//! ```text
//! −inf_{s,o} { Λ*_f(s) + Λ*_g(Ds + Po + q) + b(o) }
//! ```
//!
//! with `b` a barrier for `R`, by the same program with the inactive block
//! integrated out exactly, or by the Fenchel dual
//! `inf_u { Λ_f(Dᵀu) + Λ_g(−u) + b*(Pᵀu) + uᵀq }`. Several independent
//! queries on the same data add one term per stage.

mod dual;
mod montecarlo;
mod primal;
mod volume;

pub use montecarlo::{mc_selection_probability, MonteCarloEstimate};
pub use volume::log_inactive_volume;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GenerativeModel, Randomizer};
use crate::optim::NewtonOptions;
use crate::queries::{Constraint, InversionMap, QueryResult, SelectionRegion};

/// Which approximating program to solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    PrimalFull,
    #[serde(alias = "multistage")]
    PrimalReduced,
    Dual,
    ChernoffDual,
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::PrimalFull => "primal_full",
            Formulation::PrimalReduced => "primal_reduced",
            Formulation::Dual => "dual",
            Formulation::ChernoffDual => "chernoff_dual",
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primal_full" => Ok(Formulation::PrimalFull),
            "primal_reduced" | "multistage" => Ok(Formulation::PrimalReduced),
            "dual" => Ok(Formulation::Dual),
            "chernoff_dual" => Ok(Formulation::ChernoffDual),
            other => Err(Error::Parse(format!("unknown formulation `{other}`"))),
        }
    }
}

/// One randomized query acting on the shared data vector.
#[derive(Clone, Debug)]
pub struct Stage {
    pub map: InversionMap,
    pub region: SelectionRegion,
    pub randomizer: Randomizer,
    /// Realized optimization variables, used as the starting point.
    pub realized_o: DVector<f64>,
}

impl Stage {
    pub fn new(map: InversionMap, region: SelectionRegion, randomizer: Randomizer, realized_o: DVector<f64>) -> Result<Self> {
        let p = map.opt_dim();
        for (context, found) in [("stage region", region.len()), ("stage randomizer", randomizer.dim()), ("stage realized o", realized_o.len())] {
            if found != p {
                return Err(Error::Dimension { context, expected: p, found });
            }
        }
        region.validate(map.n_active)?;
        Ok(Self { map, region, randomizer, realized_o })
    }

    /// Stage from a query, with the randomizer given in original coordinate
    /// order.
    pub fn from_query(query: &QueryResult, randomizer: &Randomizer) -> Result<Self> {
        let g = randomizer.permuted(&query.map.coords)?;
        Self::new(query.map.clone(), query.region.clone(), g, query.realized_o.clone())
    }

    pub fn n_active(&self) -> usize {
        self.map.n_active
    }

    pub fn dim(&self) -> usize {
        self.map.opt_dim()
    }
}

/// Outcome of one normalizer solve.
#[derive(Clone, Debug)]
pub struct SolveResult {
    /// Approximation to `log P(selection | β)`.
    pub value: f64,
    pub optimal_s: DVector<f64>,
    /// Stacked optimization variables for primal formulations.
    pub optimal_o: Option<DVector<f64>>,
    /// Stacked multipliers for dual formulations.
    pub optimal_u: Option<DVector<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub formulation: Formulation,
    /// Raw optimizer, reusable as a warm start.
    pub(crate) raw: DVector<f64>,
}

/// The normalizer approximation for a fixed selection event.
#[derive(Debug)]
pub struct NormalizerProblem {
    model: GenerativeModel,
    stages: Vec<Stage>,
    formulation: Formulation,
    options: NewtonOptions,
    full_cache: OnceLock<primal::FullCache>,
    reduced_cache: OnceLock<primal::ReducedCache>,
    dual_cache: OnceLock<dual::DualCache>,
}

impl Clone for NormalizerProblem {
    fn clone(&self) -> Self {
        Self {
            model: self.model.clone(),
            stages: self.stages.clone(),
            formulation: self.formulation,
            options: self.options,
            full_cache: self.full_cache.clone(),
            reduced_cache: self.reduced_cache.clone(),
            dual_cache: self.dual_cache.clone(),
        }
    }
}

impl NormalizerProblem {
    pub fn new(model: GenerativeModel, stages: Vec<Stage>, formulation: Formulation) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::InvalidArgument("a normalizer problem needs at least one stage".into()));
        }
        for st in &stages {
            if st.map.data_dim() != model.data_dim() {
                return Err(Error::Dimension { context: "map D columns", expected: model.data_dim(), found: st.map.data_dim() });
            }
        }
        let problem = Self {
            model,
            stages,
            formulation,
            options: NewtonOptions::default(),
            full_cache: OnceLock::new(),
            reduced_cache: OnceLock::new(),
            dual_cache: OnceLock::new(),
        };
        problem.check_formulation(formulation)?;
        Ok(problem)
    }

    pub fn single(
        model: GenerativeModel,
        randomizer: Randomizer,
        map: InversionMap,
        region: SelectionRegion,
        realized_o: DVector<f64>,
        formulation: Formulation,
    ) -> Result<Self> {
        Self::new(model, vec![Stage::new(map, region, randomizer, realized_o)?], formulation)
    }

    /// Same problem under another formulation, keeping computed caches.
    pub fn with_formulation(&self, formulation: Formulation) -> Result<Self> {
        self.check_formulation(formulation)?;
        let mut p = self.clone();
        p.formulation = formulation;
        Ok(p)
    }

    pub fn with_options(mut self, options: NewtonOptions) -> Self {
        self.options = options;
        self
    }

    pub fn model(&self) -> &GenerativeModel {
        &self.model
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn formulation(&self) -> Formulation {
        self.formulation
    }

    pub fn options(&self) -> NewtonOptions {
        self.options
    }

    /// Whether the formulation can be solved for this problem.
    pub fn supports(&self, formulation: Formulation) -> bool {
        self.check_formulation(formulation).is_ok()
    }

    fn check_formulation(&self, formulation: Formulation) -> Result<()> {
        match formulation {
            Formulation::PrimalFull => Ok(()),
            Formulation::PrimalReduced => {
                for (k, st) in self.stages.iter().enumerate() {
                    if !st.randomizer.is_coordinate_independent() {
                        return Err(Error::Unsupported(format!(
                            "stage {k}: the reduced primal needs a coordinate-independent randomizer"
                        )));
                    }
                    if !st.map.has_canonical_structure(1e-12) {
                        return Err(Error::Unsupported(format!(
                            "stage {k}: the reduced primal needs P_(E,-E) = 0 and P_(-E,-E) = I"
                        )));
                    }
                }
                Ok(())
            }
            Formulation::Dual | Formulation::ChernoffDual => {
                for (k, st) in self.stages.iter().enumerate() {
                    for (j, c) in st.region.constraints.iter().enumerate() {
                        match c {
                            Constraint::Cone { .. } => {
                                return Err(Error::Unsupported(format!(
                                    "stage {k}: dual formulations need fixed inactive bounds, coordinate {j} is data dependent"
                                )));
                            }
                            Constraint::Free => {
                                let col = st.map.p.column(j);
                                let unit = col.iter().enumerate().all(|(i, &v)| v == if i == j { 1.0 } else { 0.0 });
                                if !unit {
                                    return Err(Error::Unsupported(format!(
                                        "stage {k}: unconstrained coordinate {j} needs a unit column in P"
                                    )));
                                }
                            }
                            _ => {}
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn solve(&self, beta: &DVector<f64>) -> Result<SolveResult> {
        self.solve_warm(beta, None)
    }

    /// Solves at `β`, starting from a previous optimizer when it is
    /// compatible.
    pub fn solve_warm(&self, beta: &DVector<f64>, warm: Option<&SolveResult>) -> Result<SolveResult> {
        if beta.len() != self.model.param_dim() {
            return Err(Error::Dimension { context: "β", expected: self.model.param_dim(), found: beta.len() });
        }
        let warm = warm.filter(|w| w.formulation == self.formulation).map(|w| &w.raw);
        match self.formulation {
            Formulation::PrimalFull => primal::solve_full(self, beta, warm),
            Formulation::PrimalReduced => primal::solve_reduced(self, beta, warm),
            Formulation::Dual => dual::solve_dual(self, beta, warm),
            Formulation::ChernoffDual => dual::solve_chernoff(self, beta, warm),
        }
    }

    pub(crate) fn full_cache(&self) -> &primal::FullCache {
        self.full_cache.get_or_init(|| primal::FullCache::new(self))
    }

    pub(crate) fn reduced_cache(&self) -> &primal::ReducedCache {
        self.reduced_cache.get_or_init(|| primal::ReducedCache::new(self))
    }

    pub(crate) fn dual_cache(&self) -> &dual::DualCache {
        self.dual_cache.get_or_init(|| dual::DualCache::new(self))
    }
}

/// Moves `o` into the interior of the region, leaving interior points
/// untouched.
pub(crate) fn interior_start(region: &SelectionRegion, o: &DVector<f64>) -> DVector<f64> {
    let mut x = o.clone();
    for (j, c) in region.constraints.iter().enumerate() {
        match *c {
            Constraint::Sign { z } => {
                if !(z * x[j] > 0.0) {
                    x[j] = z;
                }
            }
            Constraint::Cube { bound } => {
                if !(x[j].abs() < bound) {
                    x[j] = 0.5 * bound * x[j].signum();
                }
            }
            _ => {}
        }
    }
    for (j, c) in region.constraints.iter().enumerate() {
        if let Constraint::Cone { .. } = c {
            let b = region.bound(j, &x).unwrap_or(1.0);
            if !(x[j].abs() < b) {
                x[j] = 0.5 * b * x[j].signum();
            }
        }
    }
    x
}
