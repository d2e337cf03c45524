//! Randomized selection queries and the inversion maps characterizing them.
//!
//! A query observes data `s`, a randomization `ω` and returns a selection
//! outcome. Its KKT conditions give `ω = Ds + Po + q` for optimization
//! variables `o` restricted to a selection region. Rows are stored in
//! canonical order: active coordinates first, then inactive, with `coords`
//! recording the original randomization coordinate of each row.

mod carving;
mod lasso;
mod screening;
mod stepwise;

pub use carving::{carved_lasso_query, CarvedQuery, CarvingOptions};
pub use lasso::{
    lasso_inversion_map, lasso_query, solve_randomized_lasso, theoretical_lambda, LassoOptions,
};
pub use screening::marginal_screening_query;
pub use stepwise::forward_stepwise_query;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barriers::{edge, BarrierSpec, CubeKind};
use crate::error::{Error, Result};

/// Active set, signs and optimization variables of a solved query.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionOutcome {
    /// Selected coordinates, ascending.
    pub active: Vec<usize>,
    /// `±1` per active coordinate.
    pub signs: Vec<f64>,
    pub active_solution: DVector<f64>,
    /// Remaining coordinates, ascending.
    pub inactive: Vec<usize>,
    /// Subgradient of the penalty on the inactive block, scaled by the
    /// penalty level.
    pub inactive_subgradient: DVector<f64>,
}

impl SelectionOutcome {
    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn record(&self, lambda: f64, epsilon: f64, tau: f64) -> OutcomeRecord {
        OutcomeRecord {
            active_set: self.active.clone(),
            signs: self.signs.iter().map(|&z| z as i8).collect(),
            beta_hat: self.active_solution.iter().copied().collect(),
            lambda,
            epsilon,
            tau,
        }
    }
}

/// Serialized form of a selection outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    #[serde(rename = "E")]
    pub active_set: Vec<usize>,
    #[serde(rename = "z_E")]
    pub signs: Vec<i8>,
    #[serde(rename = "beta_hat_E")]
    pub beta_hat: Vec<f64>,
    pub lambda: f64,
    pub epsilon: f64,
    pub tau: f64,
}

/// Affine change of variables `ω = Ds + Po + q` in canonical row order.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionMap {
    pub d: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub n_active: usize,
    pub coords: Vec<usize>,
}

impl InversionMap {
    pub fn new(d: DMatrix<f64>, p: DMatrix<f64>, q: DVector<f64>, n_active: usize, coords: Vec<usize>) -> Result<Self> {
        let rows = d.nrows();
        if p.nrows() != rows || p.ncols() != rows {
            return Err(Error::Dimension { context: "map P", expected: rows, found: p.nrows() });
        }
        if q.len() != rows {
            return Err(Error::Dimension { context: "map q", expected: rows, found: q.len() });
        }
        if coords.len() != rows || n_active > rows {
            return Err(Error::Dimension { context: "map coordinates", expected: rows, found: coords.len() });
        }
        Ok(Self { d, p, q, n_active, coords })
    }

    /// Map with rows already in their natural order.
    pub fn identity_order(d: DMatrix<f64>, p: DMatrix<f64>, q: DVector<f64>, n_active: usize) -> Result<Self> {
        let rows = d.nrows();
        Self::new(d, p, q, n_active, (0..rows).collect())
    }

    pub fn data_dim(&self) -> usize {
        self.d.ncols()
    }

    pub fn opt_dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_inactive(&self) -> usize {
        self.opt_dim() - self.n_active
    }

    pub fn apply(&self, s: &DVector<f64>, o: &DVector<f64>) -> DVector<f64> {
        &self.d * s + &self.p * o + &self.q
    }

    /// Reorders an original-order randomization vector into canonical order.
    pub fn to_canonical(&self, omega: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.coords.len(), self.coords.iter().map(|&c| omega[c]))
    }

    pub fn from_canonical(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (i, &c) in self.coords.iter().enumerate() {
            out[c] = v[i];
        }
        out
    }

    /// `‖Ds + Po + q − ω‖_∞` for an original-order `ω`.
    pub fn reconstruction_error(&self, s: &DVector<f64>, o: &DVector<f64>, omega: &DVector<f64>) -> f64 {
        (self.apply(s, o) - self.to_canonical(omega)).amax()
    }

    /// `o = P⁻¹(ω − Ds − q)` for a canonical-order `ω`.
    pub fn invert(&self, s: &DVector<f64>, omega: &DVector<f64>) -> Result<DVector<f64>> {
        let rhs = omega - &self.d * s - &self.q;
        self.p
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidArgument("map P is singular".into()))
    }

    /// `log |det P|`.
    pub fn log_abs_det_jacobian(&self) -> f64 {
        self.p.clone().lu().determinant().abs().ln()
    }

    /// Whether `P_{E,−E} = 0` and `P_{−E,−E} = I`, the structure that lets the
    /// inactive block be marginalized in closed form.
    pub fn has_canonical_structure(&self, tol: f64) -> bool {
        let e = self.n_active;
        let p = self.opt_dim();
        for i in 0..p {
            for j in e..p {
                let target = if i == j { 1.0 } else { 0.0 };
                if (self.p[(i, j)] - target).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

/// Constraint on one canonical coordinate of `o`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// `z·o > 0`.
    Sign { z: f64 },
    /// `|o| < bound`.
    Cube { bound: f64 },
    /// `|o| < z_a·o_a`, with `a` a sign-constrained coordinate. The bound
    /// depends on the optimization variables.
    Cone { anchor: usize },
    /// No constraint.
    Free,
}

/// Separable selection region over canonical coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRegion {
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub cube_kind: CubeKind,
}

/// Barrier value with gradient and Hessian over all coordinates.
#[derive(Clone, Debug)]
pub struct BarrierEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl SelectionRegion {
    pub fn new(constraints: Vec<Constraint>) -> Self {
        Self { constraints, cube_kind: CubeKind::Reciprocal }
    }

    /// Region with sign constraints `z` followed by cubes of the given radii.
    pub fn sign_and_cube(signs: &[f64], bounds: &[f64]) -> Self {
        let mut c: Vec<Constraint> = signs.iter().map(|&z| Constraint::Sign { z }).collect();
        c.extend(bounds.iter().map(|&b| Constraint::Cube { bound: b }));
        Self::new(c)
    }

    pub fn unconstrained(p: usize) -> Self {
        Self::new(vec![Constraint::Free; p])
    }

    pub fn with_cube_kind(mut self, kind: CubeKind) -> Self {
        self.cube_kind = kind;
        self
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn is_data_dependent(&self) -> bool {
        self.constraints.iter().any(|c| matches!(c, Constraint::Cone { .. }))
    }

    pub fn validate(&self, n_active: usize) -> Result<()> {
        for (j, c) in self.constraints.iter().enumerate() {
            match *c {
                Constraint::Sign { z } if z != 1.0 && z != -1.0 => {
                    return Err(Error::InvalidArgument(format!("sign at {j} must be ±1, got {z}")));
                }
                Constraint::Cube { bound } if !(bound > 0.0) => {
                    return Err(Error::InvalidArgument(format!("cube bound at {j} must be positive, got {bound}")));
                }
                Constraint::Cone { anchor } => {
                    if anchor >= n_active || !matches!(self.constraints.get(anchor), Some(Constraint::Sign { .. })) {
                        return Err(Error::InvalidArgument(format!(
                            "cone at {j} must be anchored on an active sign constraint"
                        )));
                    }
                    if j < n_active {
                        return Err(Error::InvalidArgument("cone constraints must be inactive".into()));
                    }
                }
                Constraint::Sign { .. } if j >= n_active => {
                    return Err(Error::InvalidArgument("sign constraints must be active".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn anchor_sign(&self, anchor: usize) -> f64 {
        match self.constraints[anchor] {
            Constraint::Sign { z } => z,
            _ => 1.0,
        }
    }

    /// Upper bound on `|o_j|` for an inactive coordinate, if any.
    pub fn bound(&self, j: usize, o: &DVector<f64>) -> Option<f64> {
        match self.constraints[j] {
            Constraint::Cube { bound } => Some(bound),
            Constraint::Cone { anchor } => Some(self.anchor_sign(anchor) * o[anchor]),
            _ => None,
        }
    }

    /// Exact membership: strict signs, cube bounds with `slack`.
    pub fn contains_with_slack(&self, o: &DVector<f64>, slack: f64) -> bool {
        self.constraints.iter().enumerate().all(|(j, c)| match *c {
            Constraint::Sign { z } => z * o[j] > 0.0,
            Constraint::Cube { bound } => o[j].abs() <= bound + slack,
            Constraint::Cone { anchor } => o[j].abs() <= self.anchor_sign(anchor) * o[anchor] + slack,
            Constraint::Free => true,
        })
    }

    pub fn contains(&self, o: &DVector<f64>) -> bool {
        self.contains_with_slack(o, 0.0)
    }

    /// Strict interior, where every barrier is finite.
    pub fn in_interior(&self, o: &DVector<f64>) -> bool {
        self.constraints.iter().enumerate().all(|(j, c)| match *c {
            Constraint::Sign { z } => z * o[j] > 0.0,
            Constraint::Cube { bound } => o[j].abs() < bound,
            Constraint::Cone { anchor } => o[j].abs() < self.anchor_sign(anchor) * o[anchor],
            Constraint::Free => true,
        })
    }

    /// Scalar barrier for a coordinate with a fixed constraint.
    pub fn barrier_spec(&self, j: usize) -> Option<BarrierSpec> {
        match self.constraints[j] {
            Constraint::Sign { z } => Some(BarrierSpec::Sign { z }),
            Constraint::Cube { bound } => Some(BarrierSpec::cube(bound, self.cube_kind)),
            _ => None,
        }
    }

    /// Barrier value only, `+∞` outside the interior.
    pub fn barrier_value(&self, o: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for (j, c) in self.constraints.iter().enumerate() {
            let v = match *c {
                Constraint::Sign { z } => edge(z * o[j], CubeKind::Reciprocal).0,
                Constraint::Cube { bound } => {
                    edge(bound - o[j], self.cube_kind).0 + edge(bound + o[j], self.cube_kind).0
                }
                Constraint::Cone { anchor } => {
                    let c = self.anchor_sign(anchor) * o[anchor];
                    edge(c - o[j], self.cube_kind).0 + edge(c + o[j], self.cube_kind).0
                }
                Constraint::Free => 0.0,
            };
            if v == f64::INFINITY {
                return f64::INFINITY;
            }
            total += v;
        }
        total
    }

    /// Barrier with derivatives, or `None` outside the interior.
    pub fn barrier(&self, o: &DVector<f64>) -> Option<BarrierEval> {
        let p = self.len();
        let mut value = 0.0;
        let mut gradient = DVector::zeros(p);
        let mut hessian = DMatrix::zeros(p, p);
        for (j, c) in self.constraints.iter().enumerate() {
            match *c {
                Constraint::Sign { z } => {
                    let (v, d, dd) = edge(z * o[j], CubeKind::Reciprocal);
                    if v.is_infinite() {
                        return None;
                    }
                    value += v;
                    gradient[j] += z * d;
                    hessian[(j, j)] += dd;
                }
                Constraint::Cube { bound } => {
                    let (a, da, dda) = edge(bound - o[j], self.cube_kind);
                    let (b, db, ddb) = edge(bound + o[j], self.cube_kind);
                    if a.is_infinite() || b.is_infinite() {
                        return None;
                    }
                    value += a + b;
                    gradient[j] += db - da;
                    hessian[(j, j)] += dda + ddb;
                }
                Constraint::Cone { anchor } => {
                    let za = self.anchor_sign(anchor);
                    let c = za * o[anchor];
                    let (a, da, dda) = edge(c - o[j], self.cube_kind);
                    let (b, db, ddb) = edge(c + o[j], self.cube_kind);
                    if a.is_infinite() || b.is_infinite() {
                        return None;
                    }
                    value += a + b;
                    gradient[j] += db - da;
                    gradient[anchor] += za * (da + db);
                    hessian[(j, j)] += dda + ddb;
                    hessian[(anchor, anchor)] += dda + ddb;
                    let cross = za * (ddb - dda);
                    hessian[(j, anchor)] += cross;
                    hessian[(anchor, j)] += cross;
                }
                Constraint::Free => {}
            }
        }
        Some(BarrierEval { value, gradient, hessian })
    }
}

/// Everything a query produces for downstream inference.
#[derive(Clone, Debug)]
pub struct QueryResult {
    pub outcome: SelectionOutcome,
    pub map: InversionMap,
    pub region: SelectionRegion,
    /// Realized optimization variables in canonical order.
    pub realized_o: DVector<f64>,
}
