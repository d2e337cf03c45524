use nalgebra::{DMatrix, DVector};

use super::{interior_start, Formulation, NormalizerProblem, SolveResult};
use crate::barriers::BarrierSpec;
use crate::error::{Error, Result};
use crate::linalg::{select_entries, select_rows};
use crate::optim::{minimize_newton, TwiceDifferentiable};

/// Stacked dual data over all stages, restricted to constrained
/// coordinates. Unconstrained coordinates force their multiplier to zero.
#[derive(Clone, Debug)]
pub(crate) struct DualCache {
    /// Stacked `D`, all coordinates.
    d_full: DMatrix<f64>,
    /// Stacked `q`, all coordinates.
    q_full: DVector<f64>,
    /// Block-diagonal `P`, all coordinates.
    p_full: DMatrix<f64>,
    /// Block-diagonal `Σ_g`, all coordinates.
    g_full: DMatrix<f64>,
    keep: Vec<usize>,
    free: Vec<usize>,
    d: DMatrix<f64>,
    q: DVector<f64>,
    /// `(DΣ_fDᵀ + Σ_g)` on kept coordinates.
    quad: DMatrix<f64>,
    /// `P` restricted to kept rows and columns.
    p: DMatrix<f64>,
    specs: Vec<BarrierSpec>,
    /// Realized optimization variables on kept coordinates.
    realized: DVector<f64>,
}

impl DualCache {
    pub(crate) fn new(problem: &NormalizerProblem) -> Self {
        let stages = problem.stages();
        let total: usize = stages.iter().map(|st| st.dim()).sum();
        let dd = problem.model().data_dim();
        let mut d_full = DMatrix::zeros(total, dd);
        let mut q_full = DVector::zeros(total);
        let mut p_full = DMatrix::zeros(total, total);
        let mut g_full = DMatrix::zeros(total, total);
        let mut realized_full = DVector::zeros(total);
        let mut keep = Vec::new();
        let mut free = Vec::new();
        let mut specs = Vec::new();
        let mut off = 0;
        for st in stages {
            let m = st.dim();
            d_full.rows_mut(off, m).copy_from(&st.map.d);
            q_full.rows_mut(off, m).copy_from(&st.map.q);
            p_full.view_mut((off, off), (m, m)).copy_from(&st.map.p);
            g_full.view_mut((off, off), (m, m)).copy_from(st.randomizer.covariance().matrix());
            realized_full.rows_mut(off, m).copy_from(&interior_start(&st.region, &st.realized_o));
            for j in 0..m {
                match st.region.barrier_spec(j) {
                    Some(spec) => {
                        keep.push(off + j);
                        specs.push(spec);
                    }
                    None => free.push(off + j),
                }
            }
            off += m;
        }
        let lower = problem.model().covariance().lower();
        let dl = &d_full * lower;
        let full_quad = &dl * dl.transpose() + &g_full;
        let quad = DMatrix::from_fn(keep.len(), keep.len(), |i, j| full_quad[(keep[i], keep[j])]);
        let p = DMatrix::from_fn(keep.len(), keep.len(), |i, j| p_full[(keep[i], keep[j])]);
        Self {
            d: select_rows(&d_full, &keep),
            q: select_entries(&q_full, &keep),
            realized: select_entries(&realized_full, &keep),
            d_full,
            q_full,
            p_full,
            g_full,
            keep,
            free,
            quad,
            p,
            specs,
        }
    }

    fn linear(&self, mu: &DVector<f64>) -> DVector<f64> {
        &self.d * mu + &self.q
    }

    /// Multiplier whose image `Pᵀu` equals the barrier gradient at the
    /// realized point, so that its conjugate maximizer is that point.
    fn initial_point(&self) -> DVector<f64> {
        if self.keep.is_empty() {
            return DVector::zeros(0);
        }
        let v0 = DVector::from_fn(self.keep.len(), |j, _| match self.specs[j] {
            BarrierSpec::Sign { .. } => self.specs[j].gradient(self.realized[j]),
            _ => 0.0,
        });
        let fallback = || {
            DVector::from_fn(self.keep.len(), |j, _| match self.specs[j] {
                BarrierSpec::Sign { z } => -z,
                _ => 0.0,
            })
        };
        match self.p.transpose().lu().solve(&v0) {
            Some(u) if u.iter().all(|x| x.is_finite()) => u,
            _ => fallback(),
        }
    }

    /// Maps a multiplier on kept coordinates to `(s*, o*)` over all
    /// coordinates, given the conjugate maximizers on kept coordinates.
    fn recover(&self, problem: &NormalizerProblem, mu: &DVector<f64>, u: &DVector<f64>, o_keep: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let total = self.q_full.len();
        let mut u_full = DVector::zeros(total);
        for (i, &k) in self.keep.iter().enumerate() {
            u_full[k] = u[i];
        }
        let s = mu + problem.model().covariance().mul_vec(&(self.d_full.transpose() * &u_full));
        let mut o = DVector::zeros(total);
        for (i, &k) in self.keep.iter().enumerate() {
            o[k] = o_keep[i];
        }
        if !self.free.is_empty() {
            let omega = -(&self.g_full * &u_full);
            let resid = omega - &self.d_full * &s - &self.q_full - &self.p_full * &o;
            for &j in &self.free {
                o[j] = resid[j];
            }
        }
        (s, o)
    }
}

struct DualObjective<'a> {
    cache: &'a DualCache,
    linear: DVector<f64>,
}

impl DualObjective<'_> {
    fn smooth(&self, u: &DVector<f64>) -> f64 {
        self.linear.dot(u) + 0.5 * u.dot(&(&self.cache.quad * u))
    }
}

impl TwiceDifferentiable for DualObjective<'_> {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, u: &DVector<f64>) -> f64 {
        let v = self.cache.p.transpose() * u;
        let mut total = self.smooth(u);
        for (spec, &vj) in self.cache.specs.iter().zip(v.iter()) {
            let c = spec.conjugate(vj);
            if c == f64::INFINITY {
                return f64::INFINITY;
            }
            total += c;
        }
        total
    }

    fn evaluate(&self, u: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let v = self.cache.p.transpose() * u;
        let qu = &self.cache.quad * u;
        let mut value = self.linear.dot(u) + 0.5 * u.dot(&qu);
        let n = v.len();
        let mut argmax = DVector::zeros(n);
        let mut curv = DVector::zeros(n);
        for j in 0..n {
            let (c, a, h) = self.cache.specs[j].conjugate_terms(v[j]);
            if !c.is_finite() {
                return None;
            }
            value += c;
            argmax[j] = a;
            curv[j] = h;
        }
        let grad = &self.linear + qu + &self.cache.p * &argmax;
        let mut scaled = self.cache.p.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= curv[j];
        }
        let hess = &self.cache.quad + scaled * self.cache.p.transpose();
        Some((value, grad, hess))
    }
}

fn conjugate_argmax(cache: &DualCache, u: &DVector<f64>) -> DVector<f64> {
    let v = cache.p.transpose() * u;
    DVector::from_fn(v.len(), |j, _| cache.specs[j].conjugate_terms(v[j]).1)
}

fn pick_start<F: TwiceDifferentiable>(obj: &F, cache: &DualCache, warm: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    if let Some(w) = warm.filter(|w| w.len() == obj.dim() && obj.value(w).is_finite()) {
        return Ok(w.clone());
    }
    let u0 = cache.initial_point();
    if obj.value(&u0).is_finite() {
        return Ok(u0);
    }
    Err(Error::Infeasible("no feasible dual starting point".into()))
}

pub(crate) fn solve_dual(problem: &NormalizerProblem, beta: &DVector<f64>, warm: Option<&DVector<f64>>) -> Result<SolveResult> {
    let cache = problem.dual_cache();
    let mu = problem.model().mean(beta);
    let obj = DualObjective { cache, linear: cache.linear(&mu) };
    let u0 = pick_start(&obj, cache, warm)?;
    let m = minimize_newton(&obj, u0, problem.options())?;
    let (s, o) = cache.recover(problem, &mu, &m.x, &conjugate_argmax(cache, &m.x));
    Ok(SolveResult {
        value: m.value,
        optimal_s: s,
        optimal_o: Some(o),
        optimal_u: Some(m.x.clone()),
        iterations: m.iterations,
        converged: m.converged,
        gradient_norm: m.gradient_norm,
        formulation: Formulation::Dual,
        raw: m.x,
    })
}

/// Dual of the indicator problem with `log(−z·v)` and `√(v² + δ²)`
/// smoothing of the support functions.
struct ChernoffObjective<'a> {
    cache: &'a DualCache,
    linear: DVector<f64>,
    smoothing: f64,
}

impl ChernoffObjective<'_> {
    fn term(&self, j: usize, v: f64) -> (f64, f64, f64) {
        let mu = self.smoothing;
        match self.cache.specs[j] {
            BarrierSpec::Sign { z } => {
                let w = -z * v;
                if !(w > 0.0) {
                    return (f64::INFINITY, f64::NAN, f64::NAN);
                }
                (-mu * w.ln(), -mu / v, mu / (v * v))
            }
            BarrierSpec::Cube { lambda } | BarrierSpec::LogCube { lambda } => {
                let r = (v * v + mu * mu).sqrt();
                (lambda * r, lambda * v / r, lambda * mu * mu / (r * r * r))
            }
        }
    }

    /// Unsmoothed objective: support functions of the region.
    fn exact(&self, u: &DVector<f64>) -> f64 {
        let v = self.cache.p.transpose() * u;
        let mut total = self.linear.dot(u) + 0.5 * u.dot(&(&self.cache.quad * u));
        for (j, &vj) in v.iter().enumerate() {
            match self.cache.specs[j] {
                BarrierSpec::Sign { z } => {
                    if z * vj > 0.0 {
                        return f64::INFINITY;
                    }
                }
                BarrierSpec::Cube { lambda } | BarrierSpec::LogCube { lambda } => total += lambda * vj.abs(),
            }
        }
        total
    }

    fn argmax(&self, u: &DVector<f64>) -> DVector<f64> {
        let v = self.cache.p.transpose() * u;
        DVector::from_fn(v.len(), |j, _| self.term(j, v[j]).1)
    }
}

impl TwiceDifferentiable for ChernoffObjective<'_> {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn value(&self, u: &DVector<f64>) -> f64 {
        let v = self.cache.p.transpose() * u;
        let mut total = self.linear.dot(u) + 0.5 * u.dot(&(&self.cache.quad * u));
        for (j, &vj) in v.iter().enumerate() {
            let t = self.term(j, vj).0;
            if t == f64::INFINITY {
                return f64::INFINITY;
            }
            total += t;
        }
        total
    }

    fn evaluate(&self, u: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let v = self.cache.p.transpose() * u;
        let qu = &self.cache.quad * u;
        let mut value = self.linear.dot(u) + 0.5 * u.dot(&qu);
        let n = v.len();
        let mut g = DVector::zeros(n);
        let mut h = DVector::zeros(n);
        for j in 0..n {
            let (t, dt, ddt) = self.term(j, v[j]);
            if !t.is_finite() {
                return None;
            }
            value += t;
            g[j] = dt;
            h[j] = ddt;
        }
        let grad = &self.linear + qu + &self.cache.p * &g;
        let mut scaled = self.cache.p.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= h[j];
        }
        Some((value, grad, &self.cache.quad + scaled * self.cache.p.transpose()))
    }
}

pub(crate) fn solve_chernoff(problem: &NormalizerProblem, beta: &DVector<f64>, warm: Option<&DVector<f64>>) -> Result<SolveResult> {
    let cache = problem.dual_cache();
    let mu = problem.model().mean(beta);
    let mut obj = ChernoffObjective { cache, linear: cache.linear(&mu), smoothing: 1.0 };
    let mut u = pick_start(&obj, cache, warm)?;
    let mut iterations = 0;
    let mut converged = true;
    let mut gradient_norm = 0.0;
    for k in 0..10 {
        obj.smoothing = 10f64.powi(-k);
        match minimize_newton(&obj, u.clone(), problem.options()) {
            Ok(m) => {
                iterations += m.iterations;
                gradient_norm = m.gradient_norm;
                u = m.x;
            }
            Err(Error::NonConvergence { iterations: it, residual, .. }) => {
                iterations += it;
                gradient_norm = residual;
                converged = false;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let exact = obj.exact(&u);
    if !exact.is_finite() {
        return Err(Error::NonConvergence { message: "smoothing path left the dual domain".into(), iterations, residual: gradient_norm });
    }
    let (s, o) = cache.recover(problem, &mu, &u, &obj.argmax(&u));
    Ok(SolveResult {
        value: exact.min(0.0),
        optimal_s: s,
        optimal_o: Some(o),
        optimal_u: Some(u.clone()),
        iterations,
        converged,
        gradient_norm,
        formulation: Formulation::ChernoffDual,
        raw: u,
    })
}
