//! Barrier penalties for sign and cube constraints and their conjugates.
//!
//! Every barrier is a sum of edge penalties `e(t)` in the distance `t > 0`
//! to a constraint boundary. Infeasible arguments evaluate to `+∞`.

use serde::{Deserialize, Serialize};

/// Edge penalty used for cube constraints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubeKind {
    /// `log(1 + 1/t)`
    #[default]
    Reciprocal,
    /// `−log t`
    Log,
}

/// Value, first and second derivative of the edge penalty at distance `t`.
#[inline]
pub fn edge(t: f64, kind: CubeKind) -> (f64, f64, f64) {
    if !(t > 0.0) {
        return (f64::INFINITY, f64::NAN, f64::NAN);
    }
    match kind {
        CubeKind::Reciprocal => {
            let tt = t * (t + 1.0);
            ((1.0 / t).ln_1p(), -1.0 / tt, (2.0 * t + 1.0) / (tt * tt))
        }
        CubeKind::Log => (-t.ln(), -1.0 / t, 1.0 / (t * t)),
    }
}

/// `log(1 + 1/(z·o))` on `z·o > 0`.
pub fn sign_barrier(o: f64, z: f64) -> f64 {
    edge(z * o, CubeKind::Reciprocal).0
}

pub fn sign_barrier_grad(o: f64, z: f64) -> f64 {
    z * edge(z * o, CubeKind::Reciprocal).1
}

pub fn sign_barrier_hess(o: f64, z: f64) -> f64 {
    edge(z * o, CubeKind::Reciprocal).2
}

/// Maximizer of `v·o − log(1+1/o)` over `o > 0`, for `v < 0`.
fn sign_root(v: f64) -> f64 {
    let a = -1.0 / v;
    a / (0.5 + (0.25 + a).sqrt())
}

/// Conjugate of the sign barrier, `sup_{z·o>0} v·o − b(o)`.
///
/// Finite on the open half-line `z·v < 0`; `+∞` elsewhere, including the
/// boundary point `v = 0` where the supremum is not attained.
pub fn sign_barrier_conjugate(v: f64, z: f64) -> f64 {
    let w = z * v;
    if !(w < 0.0) {
        return f64::INFINITY;
    }
    let o = sign_root(w);
    w * o - (1.0 / o).ln_1p()
}

/// The maximizing `o*`, equal to the gradient of the conjugate.
pub fn sign_barrier_conjugate_argmax(v: f64, z: f64) -> f64 {
    let w = z * v;
    if !(w < 0.0) {
        return f64::NAN;
    }
    z * sign_root(w)
}

pub fn sign_barrier_conjugate_hess(v: f64, z: f64) -> f64 {
    let w = z * v;
    if !(w < 0.0) {
        return f64::NAN;
    }
    1.0 / edge(sign_root(w), CubeKind::Reciprocal).2
}

/// `log(1+1/(λ−o)) + log(1+1/(λ+o))` on `|o| < λ`.
pub fn cube_barrier(o: f64, lambda: f64) -> f64 {
    cube_terms(o, lambda, CubeKind::Reciprocal).0
}

pub fn cube_barrier_grad(o: f64, lambda: f64) -> f64 {
    cube_terms(o, lambda, CubeKind::Reciprocal).1
}

pub fn cube_barrier_hess(o: f64, lambda: f64) -> f64 {
    cube_terms(o, lambda, CubeKind::Reciprocal).2
}

/// `−log(λ−o) − log(λ+o)` on `|o| < λ`.
pub fn log_cube_barrier(o: f64, lambda: f64) -> f64 {
    cube_terms(o, lambda, CubeKind::Log).0
}

pub fn cube_terms(o: f64, lambda: f64, kind: CubeKind) -> (f64, f64, f64) {
    let (a, da, dda) = edge(lambda - o, kind);
    let (b, db, ddb) = edge(lambda + o, kind);
    if a.is_infinite() || b.is_infinite() {
        return (f64::INFINITY, f64::NAN, f64::NAN);
    }
    (a + b, db - da, dda + ddb)
}

/// Solves `b'(λ − t) = w` for the distance `t ∈ (0, λ]` to the upper edge.
fn cube_root_distance(w: f64, lambda: f64) -> f64 {
    if w == 0.0 {
        return lambda;
    }
    let h = |t: f64| {
        let u = 2.0 * lambda - t;
        1.0 / (t * (t + 1.0)) - 1.0 / (u * (u + 1.0)) - w
    };
    let dh = |t: f64| {
        let u = 2.0 * lambda - t;
        let tt = t * (t + 1.0);
        let uu = u * (u + 1.0);
        -(2.0 * t + 1.0) / (tt * tt) - (2.0 * u + 1.0) / (uu * uu)
    };
    let c = w + 1.0 / (lambda * (lambda + 1.0));
    let mut lo = ((2.0 / c) / (1.0 + (1.0 + 4.0 / c).sqrt())).min(lambda);
    let mut hi = lambda;
    if h(lo) <= 0.0 {
        return lo;
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = h(t);
        if f > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if f == 0.0 || (hi - lo) <= 1e-15 * hi {
            break;
        }
        let step = t - f / dh(t);
        t = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if (t - lo).min(hi - t) <= 1e-16 * hi {
            t = 0.5 * (lo + hi);
        }
    }
    t
}

/// `sup_{|z|<λ} v·z − b(z)` for the reciprocal cube barrier.
///
/// No closed form exists; the stationarity condition is monotone in the
/// edge distance and is solved by safeguarded Newton steps inside a shrinking
/// bracket.
pub fn cube_barrier_conjugate(v: f64, lambda: f64) -> f64 {
    let w = v.abs();
    let t = cube_root_distance(w, lambda);
    w * (lambda - t) - (1.0 / t).ln_1p() - (1.0 / (2.0 * lambda - t)).ln_1p()
}

pub fn cube_barrier_conjugate_argmax(v: f64, lambda: f64) -> f64 {
    let t = cube_root_distance(v.abs(), lambda);
    v.signum() * (lambda - t)
}

pub fn cube_barrier_conjugate_hess(v: f64, lambda: f64) -> f64 {
    let t = cube_root_distance(v.abs(), lambda);
    let (_, _, d1) = edge(t, CubeKind::Reciprocal);
    let (_, _, d2) = edge(2.0 * lambda - t, CubeKind::Reciprocal);
    1.0 / (d1 + d2)
}

fn log_cube_root(v: f64, lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    l2 * v / (1.0 + (1.0 + l2 * v * v).sqrt())
}

/// `sup_{|z|<λ} v·z + log(λ−z) + log(λ+z)`, evaluated at the closed-form
/// root `z* = −1/v + sign(v)·√(1/v² + λ²)`.
pub fn log_cube_barrier_conjugate(v: f64, lambda: f64) -> f64 {
    let z = log_cube_root(v, lambda);
    v * z + ((lambda - z) * (lambda + z)).ln()
}

pub fn log_cube_barrier_conjugate_argmax(v: f64, lambda: f64) -> f64 {
    log_cube_root(v, lambda)
}

pub fn log_cube_barrier_conjugate_hess(v: f64, lambda: f64) -> f64 {
    let z = log_cube_root(v, lambda);
    1.0 / (1.0 / (lambda - z).powi(2) + 1.0 / (lambda + z).powi(2))
}

/// A scalar barrier together with its conjugate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierSpec {
    Sign { z: f64 },
    Cube { lambda: f64 },
    LogCube { lambda: f64 },
}

impl BarrierSpec {
    pub fn cube(lambda: f64, kind: CubeKind) -> Self {
        match kind {
            CubeKind::Reciprocal => BarrierSpec::Cube { lambda },
            CubeKind::Log => BarrierSpec::LogCube { lambda },
        }
    }

    pub fn value(&self, o: f64) -> f64 {
        self.terms(o).0
    }

    pub fn gradient(&self, o: f64) -> f64 {
        self.terms(o).1
    }

    pub fn hessian(&self, o: f64) -> f64 {
        self.terms(o).2
    }

    /// Value, gradient and curvature at `o`.
    pub fn terms(&self, o: f64) -> (f64, f64, f64) {
        match *self {
            BarrierSpec::Sign { z } => {
                let (v, d, dd) = edge(z * o, CubeKind::Reciprocal);
                (v, z * d, dd)
            }
            BarrierSpec::Cube { lambda } => cube_terms(o, lambda, CubeKind::Reciprocal),
            BarrierSpec::LogCube { lambda } => cube_terms(o, lambda, CubeKind::Log),
        }
    }

    pub fn contains(&self, o: f64) -> bool {
        match *self {
            BarrierSpec::Sign { z } => z * o > 0.0,
            BarrierSpec::Cube { lambda } | BarrierSpec::LogCube { lambda } => o.abs() < lambda,
        }
    }

    pub fn conjugate(&self, v: f64) -> f64 {
        match *self {
            BarrierSpec::Sign { z } => sign_barrier_conjugate(v, z),
            BarrierSpec::Cube { lambda } => cube_barrier_conjugate(v, lambda),
            BarrierSpec::LogCube { lambda } => log_cube_barrier_conjugate(v, lambda),
        }
    }

    /// Conjugate value, gradient (the maximizer) and second derivative.
    pub fn conjugate_terms(&self, v: f64) -> (f64, f64, f64) {
        match *self {
            BarrierSpec::Sign { z } => {
                if !(z * v < 0.0) {
                    return (f64::INFINITY, f64::NAN, f64::NAN);
                }
                let o = sign_root(z * v);
                let val = z * v * o - (1.0 / o).ln_1p();
                (val, z * o, 1.0 / edge(o, CubeKind::Reciprocal).2)
            }
            BarrierSpec::Cube { lambda } => {
                let t = cube_root_distance(v.abs(), lambda);
                let u = 2.0 * lambda - t;
                let val = v.abs() * (lambda - t) - (1.0 / t).ln_1p() - (1.0 / u).ln_1p();
                let curv = edge(t, CubeKind::Reciprocal).2 + edge(u, CubeKind::Reciprocal).2;
                (val, v.signum() * (lambda - t), 1.0 / curv)
            }
            BarrierSpec::LogCube { lambda } => {
                let z = log_cube_root(v, lambda);
                let val = v * z + ((lambda - z) * (lambda + z)).ln();
                (val, z, 1.0 / (1.0 / (lambda - z).powi(2) + 1.0 / (lambda + z).powi(2)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Golden-section maximization of a unimodal function on `[a, b]`.
    fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        for _ in 0..300 {
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - g * (b - a);
            d = a + g * (b - a);
        }
        let x = 0.5 * (a + b);
        (x, f(x))
    }

    #[test]
    fn sign_barrier_values() {
        assert_relative_eq!(sign_barrier(1.0, 1.0), 2f64.ln(), epsilon = 1e-15);
        assert!(sign_barrier(-1.0, 1.0).is_infinite());
        assert!(sign_barrier(0.0, 1.0).is_infinite());
        assert_relative_eq!(sign_barrier(-1.0, -1.0), 2f64.ln(), epsilon = 1e-15);
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let v = sign_barrier(2f64.powi(k), 1.0);
            assert!(v < prev && v > 0.0);
            prev = v;
        }
    }

    #[test]
    fn sign_conjugate_examples() {
        assert_relative_eq!(sign_barrier_conjugate_argmax(-1.0, 1.0), 0.618_034, epsilon = 1e-6);
        assert_relative_eq!(sign_barrier_conjugate(-1.0, 1.0), -1.580_458, epsilon = 1e-6);
        assert_relative_eq!(sign_barrier_conjugate_argmax(-4.0, 1.0), 0.207_107, epsilon = 1e-6);
        assert!(sign_barrier_conjugate(1.0, 1.0).is_infinite());
        for v in [-1.0, -4.0] {
            let (_, sup) = golden_max(|o| v * o - sign_barrier(o, 1.0), 1e-9, 50.0);
            assert!((sign_barrier_conjugate(v, 1.0) - sup).abs() <= 1e-8);
        }
        assert_relative_eq!(sign_barrier_conjugate(2.5, -1.0), sign_barrier_conjugate(-2.5, 1.0));
    }

    #[test]
    fn cube_conjugate_examples() {
        assert_relative_eq!(cube_barrier_conjugate(0.0, 1.0), -2.0 * 2f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(cube_barrier_conjugate(3.0, 1.0), cube_barrier_conjugate(-3.0, 1.0));
        let (_, sup) = golden_max(|z| 3.0 * z - cube_barrier(z, 1.0), -1.0 + 1e-12, 1.0 - 1e-12);
        assert!((cube_barrier_conjugate(3.0, 1.0) - sup).abs() <= 1e-8);
    }

    #[test]
    fn log_cube_conjugate_examples() {
        assert_relative_eq!(log_cube_barrier_conjugate_argmax(1.0, 1.0), 2f64.sqrt() - 1.0, epsilon = 1e-15);
        assert_eq!(log_cube_barrier_conjugate(0.0, 1.0), 0.0);
        assert_relative_eq!(log_cube_barrier_conjugate(0.0, 3.0), 2.0 * 3f64.ln(), epsilon = 1e-14);
        let (_, sup) = golden_max(|z| z - log_cube_barrier(z, 1.0), -1.0 + 1e-12, 1.0 - 1e-12);
        assert!((log_cube_barrier_conjugate(1.0, 1.0) - sup).abs() <= 1e-8);
        assert!(log_cube_barrier_conjugate_argmax(1e-12, 1.0).abs() < 1e-11);
    }

    #[test]
    fn cube_conjugate_extreme_arguments() {
        for v in [1e-12, 1e3, 1e8, 1e12] {
            let val = cube_barrier_conjugate(v, 0.7);
            assert!(val.is_finite());
            let z = cube_barrier_conjugate_argmax(v, 0.7);
            assert!(z < 0.7 && z > 0.0);
            let t = cube_root_distance(v, 0.7);
            let u = 1.4 - t;
            let stationarity = 1.0 / (t * (t + 1.0)) - 1.0 / (u * (u + 1.0));
            assert!((stationarity - v).abs() <= 1e-12 * v.max(1.0));
        }
    }

    fn specs() -> impl Strategy<Value = BarrierSpec> {
        prop_oneof![
            prop_oneof![Just(1.0), Just(-1.0)].prop_map(|z| BarrierSpec::Sign { z }),
            (0.05f64..5.0).prop_map(|lambda| BarrierSpec::Cube { lambda }),
            (0.05f64..5.0).prop_map(|lambda| BarrierSpec::LogCube { lambda }),
        ]
    }

    fn interior(spec: &BarrierSpec, u: f64) -> f64 {
        match *spec {
            BarrierSpec::Sign { z } => z * (0.01 + 20.0 * u),
            BarrierSpec::Cube { lambda } | BarrierSpec::LogCube { lambda } => lambda * (2.0 * u - 1.0) * 0.98,
        }
    }

    proptest! {
        #[test]
        fn gradients_match_differences(spec in specs(), u in 0.0f64..1.0) {
            let o = interior(&spec, u);
            let h = 1e-6 * (1.0 + o.abs());
            let (_, g, hh) = spec.terms(o);
            let fd = (spec.value(o + h) - spec.value(o - h)) / (2.0 * h);
            let fdd = (spec.gradient(o + h) - spec.gradient(o - h)) / (2.0 * h);
            prop_assert!((fd - g).abs() <= 1e-5 * (1.0 + fd.abs()));
            prop_assert!((fdd - hh).abs() <= 1e-5 * (1.0 + fdd.abs()));
            if !matches!(spec, BarrierSpec::LogCube { .. }) {
                prop_assert!(spec.value(o) >= 0.0);
            }
        }

        #[test]
        fn fenchel_young_with_equality_at_root(spec in specs(), v in -6.0f64..6.0, u in 0.0f64..1.0) {
            let (val, root, curv) = spec.conjugate_terms(v);
            let probe = interior(&spec, u);
            if val.is_finite() {
                prop_assert!(val >= v * probe - spec.value(probe) - 1e-12);
                prop_assert!((val - (v * root - spec.value(root))).abs() <= 1e-8 * (1.0 + val.abs()));
                let h = 1e-6 * (1.0 + v.abs());
                let fd = (spec.conjugate(v + h) - spec.conjugate(v - h)) / (2.0 * h);
                prop_assert!((fd - root).abs() <= 1e-5 * (1.0 + root.abs()));
                let fdd = (spec.conjugate_terms(v + h).1 - spec.conjugate_terms(v - h).1) / (2.0 * h);
                prop_assert!((fdd - curv).abs() <= 1e-4 * (1.0 + curv.abs()));
            } else {
                let sign_side = matches!(spec, BarrierSpec::Sign { z } if z * v >= 0.0);
                prop_assert!(sign_side);
            }
        }

        #[test]
        fn conjugates_are_midpoint_convex(spec in specs(), a in -6.0f64..6.0, b in -6.0f64..6.0) {
            let (fa, fb, fm) = (spec.conjugate(a), spec.conjugate(b), spec.conjugate(0.5 * (a + b)));
            if fa.is_finite() && fb.is_finite() {
                prop_assert!(fm <= 0.5 * (fa + fb) + 1e-10 * (1.0 + fa.abs() + fb.abs()));
            }
        }

        #[test]
        fn cube_conjugate_below_indicator_conjugate(v in -50.0f64..50.0, lambda in 0.05f64..5.0) {
            prop_assert!(cube_barrier_conjugate(v, lambda) - cube_barrier_conjugate(0.0, lambda) <= lambda * v.abs() + 1e-12);
        }
    }
}
