use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct CoordinateSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub ess: f64,
}

/// Linear-interpolation sample quantile (type 7) of sorted data.
pub fn quantile_type7(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Effective sample size from Geyer's initial positive sequence of
/// autocorrelation pair sums.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * c0);
    let mut sum = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = if k == 0 { 1.0 + rho(1) } else { rho(2 * k) + rho(2 * k + 1) };
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    (n as f64 / tau).min(n as f64)
}

/// Posterior mean, equal-tailed `level` credible interval and ESS per column
/// of `draws`.
pub fn summarize_draws(draws: &DMatrix<f64>, level: f64) -> Result<Vec<CoordinateSummary>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("credible level must lie in (0,1), got {level}")));
    }
    if draws.nrows() == 0 {
        return Err(Error::InvalidArgument("no draws after burn-in".into()));
    }
    let n = draws.nrows() as f64;
    Ok(draws
        .column_iter()
        .map(|col| {
            let v: Vec<f64> = col.iter().copied().collect();
            let mean = v.iter().sum::<f64>() / n;
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            CoordinateSummary {
                mean,
                lower: quantile_type7(&sorted, (1.0 - level) / 2.0),
                upper: quantile_type7(&sorted, (1.0 + level) / 2.0),
                ess: effective_sample_size(&v),
            }
        })
        .collect())
}

/// Summaries of the post burn-in part of a chain.
pub fn chain_summaries(chain: &super::ChainResult, level: f64) -> Result<Vec<CoordinateSummary>> {
    summarize_draws(&chain.kept(), level)
}

pub(crate) fn column_means(draws: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(draws.ncols(), draws.column_iter().map(|c| c.mean()))
}
