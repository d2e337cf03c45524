//! Approximate Bayesian inference after randomized convex selection queries.
//!
//! The selective posterior of a target `β` after a randomized query is
//! `π(β) f(s|β) / P(selection | β)`. The denominator is replaced by the value
//! of a convex program, either a barrier-smoothed Chernoff bound or its dual,
//! and the resulting pseudo posterior is sampled with Langevin dynamics.

pub mod barriers;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod optim;
pub mod posterior;
pub mod queries;
pub mod selprob;

pub use error::{Error, Result};
pub use linalg::SpdMatrix;
pub use model::{GenerativeModel, LinearMean, MeanMap, Prior, Randomizer};
pub use queries::{Constraint, InversionMap, QueryResult, SelectionOutcome, SelectionRegion};
pub use selprob::{Formulation, NormalizerProblem, SolveResult, Stage};
pub use posterior::{ChainResult, PseudoPosterior, SamplerConfig};
