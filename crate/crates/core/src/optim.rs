//! Smooth unconstrained minimization with infeasibility-aware line searches.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::damped_cholesky;

/// Objective with analytic second derivatives. Points outside the domain
/// evaluate to `+∞` or `None`.
pub trait TwiceDifferentiable {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn evaluate(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)>;
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 500, armijo: 1e-4, shrink: 0.5, max_backtracks: 60 }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton iteration with Levenberg regularization and Armijo
/// backtracking; steps landing outside the domain are shortened.
pub fn minimize_newton<F: TwiceDifferentiable + ?Sized>(f: &F, x0: DVector<f64>, opts: NewtonOptions) -> Result<Minimum> {
    let mut x = x0;
    if x.is_empty() {
        let fx = f.value(&x);
        return Ok(Minimum { x, value: fx, gradient: DVector::zeros(0), gradient_norm: 0.0, iterations: 0, converged: true });
    }
    let (mut fx, mut g, mut h) = f
        .evaluate(&x)
        .ok_or_else(|| Error::Infeasible("starting point lies outside the objective domain".into()))?;
    let mut iterations = 0;
    loop {
        let gnorm = g.amax();
        if !gnorm.is_finite() || !fx.is_finite() {
            return Err(Error::NonConvergence { message: "non-finite objective".into(), iterations, residual: gnorm });
        }
        if gnorm <= opts.tolerance {
            return Ok(Minimum { x, value: fx, gradient_norm: gnorm, gradient: g, iterations, converged: true });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence { message: "Newton iteration limit".into(), iterations, residual: gnorm });
        }
        iterations += 1;
        let (ch, _) = damped_cholesky(&h)
            .ok_or_else(|| Error::NonConvergence { message: "Hessian factorization failed".into(), iterations, residual: gnorm })?;
        let mut dir = ch.solve(&(-&g));
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            dir = -&g;
            slope = -g.norm_squared();
        }
        let slack = 1e-13 * (1.0 + fx.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let cand = &x + &dir * t;
            let fc = f.value(&cand);
            if fc.is_finite() && fc <= fx + opts.armijo * t * slope + slack {
                accepted = Some(cand);
                break;
            }
            t *= opts.shrink;
        }
        let Some(cand) = accepted else {
            return Err(Error::NonConvergence { message: "line search failed".into(), iterations, residual: gnorm });
        };
        match f.evaluate(&cand) {
            Some((fc, gc, hc)) => {
                x = cand;
                fx = fc;
                g = gc;
                h = hc;
            }
            None => {
                return Err(Error::NonConvergence { message: "accepted point left the domain".into(), iterations, residual: gnorm });
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BfgsOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub armijo: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iterations: 1000, armijo: 1e-4 }
    }
}

/// BFGS with backtracking. `f` returns value and gradient; evaluation errors
/// are treated as points outside the domain.
pub fn minimize_bfgs<F>(mut f: F, x0: DVector<f64>, opts: BfgsOptions) -> Result<Minimum>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut iterations = 0;
    loop {
        let gnorm = g.amax();
        if gnorm <= opts.tolerance {
            return Ok(Minimum { x, value: fx, gradient_norm: gnorm, gradient: g, iterations, converged: true });
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NonConvergence { message: "BFGS iteration limit".into(), iterations, residual: gnorm });
        }
        iterations += 1;
        let mut dir = -(&hinv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            hinv = DMatrix::identity(n, n);
            dir = -&g;
            slope = -g.norm_squared();
        }
        let slack = 1e-13 * (1.0 + fx.abs());
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand = &x + &dir * t;
            if let Ok((fc, gc)) = f(&cand) {
                if fc.is_finite() && fc <= fx + opts.armijo * t * slope + slack {
                    next = Some((cand, fc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fxn, gn)) = next else {
            return Err(Error::NonConvergence { message: "BFGS line search failed".into(), iterations, residual: gnorm });
        };
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if !scaled {
                hinv *= sy / y.norm_squared();
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        x = xn;
        fx = fxn;
        g = gn;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct LogBarrierQuadratic;

    impl TwiceDifferentiable for LogBarrierQuadratic {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, x: &DVector<f64>) -> f64 {
            if x[0] <= 0.0 {
                return f64::INFINITY;
            }
            0.5 * (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) - x[0].ln()
        }
        fn evaluate(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
            if x[0] <= 0.0 {
                return None;
            }
            let g = DVector::from_vec(vec![x[0] - 3.0 - 1.0 / x[0], 4.0 * (x[1] + 1.0)]);
            let h = DMatrix::from_row_slice(2, 2, &[1.0 + 1.0 / (x[0] * x[0]), 0.0, 0.0, 4.0]);
            Some((self.value(x), g, h))
        }
    }

    #[test]
    fn newton_respects_domain() {
        let m = minimize_newton(&LogBarrierQuadratic, DVector::from_vec(vec![1e-3, 5.0]), NewtonOptions::default()).unwrap();
        let root = (3.0 + 13f64.sqrt()) / 2.0;
        assert!((m.x[0] - root).abs() < 1e-9 && (m.x[1] + 1.0).abs() < 1e-9);
        assert!(minimize_newton(&LogBarrierQuadratic, DVector::from_vec(vec![-1.0, 0.0]), NewtonOptions::default()).is_err());
    }

    #[test]
    fn bfgs_rosenbrock() {
        let f = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]);
            Ok((v, g))
        };
        let m = minimize_bfgs(f, DVector::from_vec(vec![-1.2, 1.0]), BfgsOptions { tolerance: 1e-8, ..Default::default() }).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }
}
