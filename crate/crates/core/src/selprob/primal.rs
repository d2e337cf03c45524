use nalgebra::{DMatrix, DVector};

use super::{interior_start, Formulation, NormalizerProblem, SolveResult};
use crate::barriers::{edge, CubeKind};
use crate::error::Result;
use crate::normal::interval_log_mass;
use crate::optim::{minimize_newton, TwiceDifferentiable};
use crate::queries::Constraint;

/// Whitened stage matrices for the full primal.
#[derive(Clone, Debug)]
pub(crate) struct FullCache {
    precision_f: DMatrix<f64>,
    stages: Vec<FullStage>,
    gram_ss: DMatrix<f64>,
}

#[derive(Clone, Debug)]
struct FullStage {
    wd: DMatrix<f64>,
    wp: DMatrix<f64>,
    wq: DVector<f64>,
    gram_so: DMatrix<f64>,
    gram_oo: DMatrix<f64>,
}

impl FullCache {
    pub(crate) fn new(problem: &NormalizerProblem) -> Self {
        let model = problem.model();
        let d = model.data_dim();
        let mut gram_ss = DMatrix::zeros(d, d);
        let stages = problem
            .stages()
            .iter()
            .map(|st| {
                let cov = st.randomizer.covariance();
                let wd = cov.whiten_matrix(&st.map.d);
                let wp = cov.whiten_matrix(&st.map.p);
                let wq = cov.whiten(&st.map.q);
                gram_ss += wd.transpose() * &wd;
                let gram_so = wd.transpose() * &wp;
                let gram_oo = wp.transpose() * &wp;
                FullStage { wd, wp, wq, gram_so, gram_oo }
            })
            .collect();
        Self { precision_f: model.covariance().precision(), stages, gram_ss }
    }
}

struct FullObjective<'a> {
    problem: &'a NormalizerProblem,
    cache: &'a FullCache,
    mu: DVector<f64>,
    offsets: Vec<usize>,
    dim: usize,
}

impl FullObjective<'_> {
    fn split<'v>(&self, x: &'v DVector<f64>) -> (nalgebra::DVectorView<'v, f64>, Vec<DVector<f64>>) {
        let d = self.mu.len();
        let s = x.rows(0, d);
        let os = self
            .problem
            .stages()
            .iter()
            .zip(&self.offsets)
            .map(|(st, &off)| x.rows(off, st.dim()).into_owned())
            .collect();
        (s, os)
    }
}

impl TwiceDifferentiable for FullObjective<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let (s, os) = self.split(x);
        let r = s - &self.mu;
        let mut total = 0.5 * r.dot(&(&self.cache.precision_f * &r));
        for ((st, c), o) in self.problem.stages().iter().zip(&self.cache.stages).zip(&os) {
            let b = st.region.barrier_value(o);
            if b == f64::INFINITY {
                return f64::INFINITY;
            }
            let res = &c.wd * s + &c.wp * o + &c.wq;
            total += 0.5 * res.norm_squared() + b;
        }
        total
    }

    fn evaluate(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let d = self.mu.len();
        let (s, os) = self.split(x);
        let r = s - &self.mu;
        let pr = &self.cache.precision_f * &r;
        let mut value = 0.5 * r.dot(&pr);
        let mut grad = DVector::zeros(self.dim);
        let mut hess = DMatrix::zeros(self.dim, self.dim);
        grad.rows_mut(0, d).copy_from(&pr);
        hess.view_mut((0, 0), (d, d)).copy_from(&(&self.cache.precision_f + &self.cache.gram_ss));
        for (((st, c), o), &off) in self.problem.stages().iter().zip(&self.cache.stages).zip(&os).zip(&self.offsets) {
            let b = st.region.barrier(o)?;
            let res = &c.wd * s + &c.wp * o + &c.wq;
            value += 0.5 * res.norm_squared() + b.value;
            let m = st.dim();
            let mut gs = grad.rows_mut(0, d);
            gs += c.wd.transpose() * &res;
            grad.rows_mut(off, m).copy_from(&(c.wp.transpose() * &res + &b.gradient));
            hess.view_mut((0, off), (d, m)).copy_from(&c.gram_so);
            hess.view_mut((off, 0), (m, d)).copy_from(&c.gram_so.transpose());
            hess.view_mut((off, off), (m, m)).copy_from(&(&c.gram_oo + &b.hessian));
        }
        Some((value, grad, hess))
    }
}

fn offsets(problem: &NormalizerProblem, sizes: impl Iterator<Item = usize>) -> (Vec<usize>, usize) {
    let mut off = problem.model().data_dim();
    let mut out = Vec::new();
    for m in sizes {
        out.push(off);
        off += m;
    }
    (out, off)
}

pub(crate) fn solve_full(problem: &NormalizerProblem, beta: &DVector<f64>, warm: Option<&DVector<f64>>) -> Result<SolveResult> {
    let cache = problem.full_cache();
    let mu = problem.model().mean(beta);
    let d = mu.len();
    let (offs, dim) = offsets(problem, problem.stages().iter().map(|st| st.dim()));
    let obj = FullObjective { problem, cache, mu: mu.clone(), offsets: offs.clone(), dim };
    let warm = warm.filter(|w| w.len() == dim && obj.value(w).is_finite()).cloned();
    let x0 = warm.unwrap_or_else(|| {
        let mut x = DVector::zeros(dim);
        x.rows_mut(0, d).copy_from(&mu);
        for (st, &off) in problem.stages().iter().zip(&offs) {
            x.rows_mut(off, st.dim()).copy_from(&interior_start(&st.region, &st.realized_o));
        }
        x
    });
    let m = minimize_newton(&obj, x0, problem.options())?;
    Ok(SolveResult {
        value: -m.value,
        optimal_s: m.x.rows(0, d).into_owned(),
        optimal_o: Some(m.x.rows(d, dim - d).into_owned()),
        optimal_u: None,
        iterations: m.iterations,
        converged: m.converged,
        gradient_norm: m.gradient_norm,
        formulation: Formulation::PrimalFull,
        raw: m.x,
    })
}

/// Inactive bound of the reduced primal.
#[derive(Clone, Copy, Debug)]
enum Bound {
    Fixed(f64),
    Anchored { anchor: usize, z: f64 },
    Unbounded,
}

#[derive(Clone, Debug)]
struct ReducedStage {
    e: usize,
    active_signs: Vec<Option<f64>>,
    wd_e: DMatrix<f64>,
    wp_e: DMatrix<f64>,
    wq_e: DVector<f64>,
    gram_ss: DMatrix<f64>,
    gram_so: DMatrix<f64>,
    gram_oo: DMatrix<f64>,
    /// `[D_{−E}, P_{−E,E}]`, one row per inactive coordinate.
    rows: DMatrix<f64>,
    q_inactive: DVector<f64>,
    tau: Vec<f64>,
    bounds: Vec<Bound>,
    has_anchors: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct ReducedCache {
    precision_f: DMatrix<f64>,
    stages: Vec<ReducedStage>,
}

impl ReducedCache {
    pub(crate) fn new(problem: &NormalizerProblem) -> Self {
        let d = problem.model().data_dim();
        let stages = problem
            .stages()
            .iter()
            .map(|st| {
                let e = st.n_active();
                let p = st.dim();
                let m = p - e;
                let sd: Vec<f64> = (0..p).map(|j| st.randomizer.marginal_sd(j)).collect();
                let wd_e = DMatrix::from_fn(e, d, |i, j| st.map.d[(i, j)] / sd[i]);
                let wp_e = DMatrix::from_fn(e, e, |i, j| st.map.p[(i, j)] / sd[i]);
                let wq_e = DVector::from_fn(e, |i, _| st.map.q[i] / sd[i]);
                let mut rows = DMatrix::zeros(m, d + e);
                rows.view_mut((0, 0), (m, d)).copy_from(&st.map.d.rows(e, m));
                rows.view_mut((0, d), (m, e)).copy_from(&st.map.p.view((e, 0), (m, e)));
                let bounds: Vec<Bound> = (e..p)
                    .map(|j| match st.region.constraints[j] {
                        Constraint::Cube { bound } => Bound::Fixed(bound),
                        Constraint::Cone { anchor } => {
                            let z = match st.region.constraints[anchor] {
                                Constraint::Sign { z } => z,
                                _ => 1.0,
                            };
                            Bound::Anchored { anchor, z }
                        }
                        _ => Bound::Unbounded,
                    })
                    .collect();
                let active_signs = (0..e)
                    .map(|j| match st.region.constraints[j] {
                        Constraint::Sign { z } => Some(z),
                        _ => None,
                    })
                    .collect();
                ReducedStage {
                    e,
                    active_signs,
                    gram_ss: wd_e.transpose() * &wd_e,
                    gram_so: wd_e.transpose() * &wp_e,
                    gram_oo: wp_e.transpose() * &wp_e,
                    wd_e,
                    wp_e,
                    wq_e,
                    rows,
                    q_inactive: st.map.q.rows(e, m).into_owned(),
                    tau: sd[e..].to_vec(),
                    has_anchors: bounds.iter().any(|b| matches!(b, Bound::Anchored { .. })),
                    bounds,
                }
            })
            .collect();
        Self { precision_f: problem.model().covariance().precision(), stages }
    }
}

struct ReducedObjective<'a> {
    cache: &'a ReducedCache,
    mu: DVector<f64>,
    offsets: Vec<usize>,
    dim: usize,
}

/// Per-coordinate derivatives of `−log B_j` in `(α_j, c_j)`.
struct VolumeTerms {
    value: f64,
    g_alpha: DVector<f64>,
    h_alpha: DVector<f64>,
    g_bound: DVector<f64>,
    h_bound: DVector<f64>,
    h_cross: DVector<f64>,
}

fn bound_value(b: Bound, o_e: &DVector<f64>) -> Option<f64> {
    match b {
        Bound::Fixed(c) => Some(c),
        Bound::Anchored { anchor, z } => Some(z * o_e[anchor]),
        Bound::Unbounded => None,
    }
}

fn volume_terms(st: &ReducedStage, alpha: &DVector<f64>, o_e: &DVector<f64>, derivs: bool) -> Option<VolumeTerms> {
    let m = alpha.len();
    let mut t = VolumeTerms {
        value: 0.0,
        g_alpha: DVector::zeros(if derivs { m } else { 0 }),
        h_alpha: DVector::zeros(if derivs { m } else { 0 }),
        g_bound: DVector::zeros(if derivs { m } else { 0 }),
        h_bound: DVector::zeros(if derivs { m } else { 0 }),
        h_cross: DVector::zeros(if derivs { m } else { 0 }),
    };
    for j in 0..m {
        let Some(c) = bound_value(st.bounds[j], o_e) else { continue };
        if !(c > 0.0) {
            return None;
        }
        let tau = st.tau[j];
        let lm = interval_log_mass((alpha[j] - c) / tau, (alpha[j] + c) / tau);
        if !lm.value.is_finite() {
            return None;
        }
        t.value -= lm.value;
        if derivs {
            let t2 = tau * tau;
            t.g_alpha[j] = -(lm.d_lower + lm.d_upper) / tau;
            t.g_bound[j] = -(lm.d_upper - lm.d_lower) / tau;
            t.h_alpha[j] = -(lm.d_lower2 + 2.0 * lm.d_cross + lm.d_upper2) / t2;
            t.h_bound[j] = -(lm.d_lower2 - 2.0 * lm.d_cross + lm.d_upper2) / t2;
            t.h_cross[j] = -(lm.d_upper2 - lm.d_lower2) / t2;
        }
    }
    Some(t)
}

fn sign_terms(signs: &[Option<f64>], o_e: &DVector<f64>) -> Option<(f64, DVector<f64>, DVector<f64>)> {
    let e = o_e.len();
    let mut v = 0.0;
    let mut g = DVector::zeros(e);
    let mut h = DVector::zeros(e);
    for j in 0..e {
        if let Some(z) = signs[j] {
            let (a, da, dda) = edge(z * o_e[j], CubeKind::Reciprocal);
            if a.is_infinite() {
                return None;
            }
            v += a;
            g[j] = z * da;
            h[j] = dda;
        }
    }
    Some((v, g, h))
}

impl ReducedObjective<'_> {
    fn stage_alpha(st: &ReducedStage, s: &nalgebra::DVectorView<f64>, o_e: &DVector<f64>) -> DVector<f64> {
        let d = s.len();
        let m = st.rows.nrows();
        let mut alpha = &st.rows.columns(0, d) * s + &st.q_inactive;
        if st.e > 0 && m > 0 {
            alpha += &st.rows.columns(d, st.e) * o_e;
        }
        alpha
    }
}

impl TwiceDifferentiable for ReducedObjective<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let d = self.mu.len();
        let s = x.rows(0, d);
        let r = s - &self.mu;
        let mut total = 0.5 * r.dot(&(&self.cache.precision_f * &r));
        for (st, &off) in self.cache.stages.iter().zip(&self.offsets) {
            let o_e = x.rows(off, st.e).into_owned();
            let Some((b, _, _)) = sign_terms(&st.active_signs, &o_e) else { return f64::INFINITY };
            let res = &st.wd_e * s + &st.wp_e * &o_e + &st.wq_e;
            let alpha = Self::stage_alpha(st, &s, &o_e);
            let Some(vol) = volume_terms(st, &alpha, &o_e, false) else { return f64::INFINITY };
            total += 0.5 * res.norm_squared() + b + vol.value;
        }
        total
    }

    fn evaluate(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let d = self.mu.len();
        let s = x.rows(0, d);
        let r = s - &self.mu;
        let pr = &self.cache.precision_f * &r;
        let mut value = 0.5 * r.dot(&pr);
        let mut grad = DVector::zeros(self.dim);
        let mut hess = DMatrix::zeros(self.dim, self.dim);
        grad.rows_mut(0, d).copy_from(&pr);
        hess.view_mut((0, 0), (d, d)).copy_from(&self.cache.precision_f);
        for (st, &off) in self.cache.stages.iter().zip(&self.offsets) {
            let e = st.e;
            let o_e = x.rows(off, e).into_owned();
            let (b, bg, bh) = sign_terms(&st.active_signs, &o_e)?;
            let res = &st.wd_e * s + &st.wp_e * &o_e + &st.wq_e;
            let alpha = Self::stage_alpha(st, &s, &o_e);
            let vol = volume_terms(st, &alpha, &o_e, true)?;
            value += 0.5 * res.norm_squared() + b + vol.value;

            // Gaussian active block and sign barriers.
            let mut local_g = DVector::zeros(d + e);
            local_g.rows_mut(0, d).copy_from(&(st.wd_e.transpose() * &res));
            let mut og = st.wp_e.transpose() * &res + bg;
            let mut local_h = DMatrix::zeros(d + e, d + e);
            local_h.view_mut((0, 0), (d, d)).copy_from(&st.gram_ss);
            local_h.view_mut((0, d), (d, e)).copy_from(&st.gram_so);
            local_h.view_mut((d, 0), (e, d)).copy_from(&st.gram_so.transpose());
            let mut oo = st.gram_oo.clone();
            for j in 0..e {
                oo[(j, j)] += bh[j];
            }
            local_h.view_mut((d, d), (e, e)).copy_from(&oo);

            // Inactive volume through α = rows·(s, o_E) + q.
            let m = st.rows.nrows();
            if m > 0 {
                local_g += st.rows.transpose() * &vol.g_alpha;
                let mut scaled = st.rows.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row *= vol.h_alpha[i];
                }
                local_h.gemm_tr(1.0, &st.rows, &scaled, 1.0);
                if st.has_anchors {
                    for j in 0..m {
                        if let Bound::Anchored { anchor, z } = st.bounds[j] {
                            og[anchor] += z * vol.g_bound[j];
                            let a = d + anchor;
                            let hc = z * vol.h_cross[j];
                            for c in 0..d + e {
                                let v = hc * st.rows[(j, c)];
                                local_h[(a, c)] += v;
                                local_h[(c, a)] += v;
                            }
                            local_h[(a, a)] += vol.h_bound[j];
                        }
                    }
                }
            }
            let mut lo = local_g.rows_mut(d, e);
            lo += og;

            let mut gs = grad.rows_mut(0, d);
            gs += local_g.rows(0, d);
            grad.rows_mut(off, e).copy_from(&local_g.rows(d, e));
            let mut hs = hess.view_mut((0, 0), (d, d));
            hs += local_h.view((0, 0), (d, d));
            hess.view_mut((0, off), (d, e)).copy_from(&local_h.view((0, d), (d, e)));
            hess.view_mut((off, 0), (e, d)).copy_from(&local_h.view((d, 0), (e, d)));
            hess.view_mut((off, off), (e, e)).copy_from(&local_h.view((d, d), (e, e)));
        }
        Some((value, grad, hess))
    }
}

pub(crate) fn solve_reduced(problem: &NormalizerProblem, beta: &DVector<f64>, warm: Option<&DVector<f64>>) -> Result<SolveResult> {
    let cache = problem.reduced_cache();
    let mu = problem.model().mean(beta);
    let d = mu.len();
    let (offs, dim) = offsets(problem, problem.stages().iter().map(|st| st.n_active()));
    let obj = ReducedObjective { cache, mu: mu.clone(), offsets: offs.clone(), dim };
    let warm = warm.filter(|w| w.len() == dim && obj.value(w).is_finite()).cloned();
    let x0 = warm.unwrap_or_else(|| {
        let mut x = DVector::zeros(dim);
        x.rows_mut(0, d).copy_from(&mu);
        for (st, &off) in problem.stages().iter().zip(&offs) {
            let o = interior_start(&st.region, &st.realized_o);
            x.rows_mut(off, st.n_active()).copy_from(&o.rows(0, st.n_active()));
        }
        x
    });
    let x0 = if obj.value(&x0).is_finite() { x0 } else { widen_anchors(problem, &offs, x0) };
    let m = minimize_newton(&obj, x0, problem.options())?;
    Ok(SolveResult {
        value: -m.value,
        optimal_s: m.x.rows(0, d).into_owned(),
        optimal_o: Some(m.x.rows(d, dim - d).into_owned()),
        optimal_u: None,
        iterations: m.iterations,
        converged: m.converged,
        gradient_norm: m.gradient_norm,
        formulation: Formulation::PrimalReduced,
        raw: m.x,
    })
}

/// Pushes anchored active coordinates away from zero so that every
/// data-dependent interval has positive width.
fn widen_anchors(problem: &NormalizerProblem, offs: &[usize], mut x: DVector<f64>) -> DVector<f64> {
    for (st, &off) in problem.stages().iter().zip(offs) {
        for j in 0..st.n_active() {
            if let Constraint::Sign { z } = st.region.constraints[j] {
                if z * x[off + j] < 1.0 {
                    x[off + j] = z;
                }
            }
        }
    }
    x
}
