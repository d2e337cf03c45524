//! Standard normal distribution functions evaluated in log space.

use libm::{erf, erfc};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const ASYMPTOTIC_CUT: f64 = -20.0;

pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

pub fn pdf(x: f64) -> f64 {
    ln_pdf(x).exp()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `log Φ(x)`, accurate far into the lower tail.
pub fn log_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x > 5.0 {
        return (-cdf(-x)).ln_1p();
    }
    if x > ASYMPTOTIC_CUT {
        return cdf(x).ln();
    }
    // Mills ratio series: Φ(x) = φ(x)/|x| · Σ (-1)^k (2k-1)!! / x^{2k}
    let x2 = x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=8 {
        term *= -((2 * k - 1) as f64) / x2;
        sum += term;
    }
    ln_pdf(x) - (-x).ln() + sum.ln()
}

/// `log(Φ(b) − Φ(a))` for `a < b`.
///
/// Uses the reflection `Φ(b) − Φ(a) = Φ(−a) − Φ(−b)` so that both endpoints
/// sit in the lower tail, and `erf` when the interval straddles zero.
pub fn log_diff_cdf(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        return log_diff_cdf(-b, -a);
    }
    if b > 0.0 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let lo = if a == f64::NEG_INFINITY { 1.0 } else { erf(-a * s) };
        let hi = if b == f64::INFINITY { 1.0 } else { erf(b * s) };
        return (0.5 * (lo + hi)).ln();
    }
    let lb = log_cdf(b);
    let la = log_cdf(a);
    if la == f64::NEG_INFINITY {
        return lb;
    }
    lb + (-(la - lb).exp_m1()).ln()
}

/// Log probability of a standard normal interval with its first and second
/// derivatives in the endpoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalLogMass {
    pub value: f64,
    pub d_lower: f64,
    pub d_upper: f64,
    pub d_lower2: f64,
    pub d_upper2: f64,
    pub d_cross: f64,
}

pub fn interval_log_mass(a: f64, b: f64) -> IntervalLogMass {
    let value = log_diff_cdf(a, b);
    let ratio = |x: f64| {
        if x.is_infinite() {
            0.0
        } else {
            (ln_pdf(x) - value).exp()
        }
    };
    let ra = ratio(a);
    let rb = ratio(b);
    let d_lower = -ra;
    let d_upper = rb;
    let xa = if a.is_infinite() { 0.0 } else { a * ra };
    let xb = if b.is_infinite() { 0.0 } else { b * rb };
    IntervalLogMass {
        value,
        d_lower,
        d_upper,
        d_lower2: xa - d_lower * d_lower,
        d_upper2: -xb - d_upper * d_upper,
        d_cross: -d_lower * d_upper,
    }
}

/// Standard normal quantile.
pub fn quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}
