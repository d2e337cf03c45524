use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use super::lasso::{lasso_inversion_map, lasso_realized_o, solve_randomized_lasso};
use super::{InversionMap, QueryResult, SelectionOutcome};
use crate::error::{Error, Result};
use crate::linalg::{select_columns, select_entries, select_rows, SpdMatrix};

/// Settings for the carved Lasso.
#[derive(Clone, Copy, Debug)]
pub struct CarvingOptions {
    pub lambda: f64,
    pub epsilon: f64,
    /// Fraction `r` of the rows used for selection.
    pub fraction: f64,
    pub bootstrap: usize,
}

/// Carved Lasso query with bootstrap covariances.
#[derive(Clone, Debug)]
pub struct CarvedQuery {
    pub query: QueryResult,
    /// Data vector `(β̄_E, N_{−E})` in canonical order.
    pub data: DVector<f64>,
    pub sigma_f: SpdMatrix,
    pub sigma_g: SpdMatrix,
    /// Implied randomization, original coordinate order.
    pub omega: DVector<f64>,
    pub subsample: Vec<usize>,
    /// Set when a bootstrap covariance needed a ridge to become definite.
    pub ridged: bool,
}

/// Lasso on a random subsample of `⌊rn⌋` rows, with loss scaled by `1/r`.
///
/// The implied randomization is `ω = ∇ℓ(β̂) − (1/r)∇ℓ¹(β̂)` for the squared
/// loss `ℓ`. Inference uses the full-data statistic `s = (β̄_E, N_{−E})` where
/// `β̄_E` is the OLS fit on the selected columns and
/// `N_{−E} = X_{−E}ᵀ(y − X_E β̄_E)`, for which
/// `D = −[[X_EᵀX_E, 0], [X_{−E}ᵀX_E, I]]` while `P` and `q` are those of the
/// randomized Lasso. `Σ_f` and `Σ_g` come from a pairs bootstrap, with a fresh
/// split drawn inside every resample.
pub fn carved_lasso_query<R: Rng + ?Sized>(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    opts: CarvingOptions,
    rng: &mut R,
) -> Result<CarvedQuery> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension { context: "carving response", expected: n, found: y.len() });
    }
    let r = opts.fraction;
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!("carving fraction must lie in (0, 1], got {r}")));
    }
    if opts.bootstrap < 2 {
        return Err(Error::InvalidArgument("bootstrap needs at least two resamples".into()));
    }
    let m = ((r * n as f64).floor() as usize).min(n);
    let mut subsample: Vec<usize> = if m == n { (0..n).collect() } else { sample(rng, n, m).into_vec() };
    subsample.sort_unstable();

    let scale = r.sqrt();
    let x1 = select_rows(x, &subsample) / scale;
    let y1 = select_entries(y, &subsample) / scale;
    let sub = solve_randomized_lasso(&y1, &x1, opts.lambda, opts.epsilon, &DVector::zeros(p))?;
    let e = sub.active.len();
    if m < e + 1 {
        return Err(Error::InvalidArgument(format!("subsample of {m} rows cannot support {e} active columns")));
    }
    let mut beta = DVector::zeros(p);
    for (k, &j) in sub.active.iter().enumerate() {
        beta[j] = sub.active_solution[k];
    }
    let omega = gradient_difference(x, y, &beta, &subsample, r);

    // Subgradient from the full-data stationarity condition.
    let grad = x.transpose() * (y - x * &beta) + &omega - &beta * opts.epsilon;
    let outcome = SelectionOutcome {
        inactive_subgradient: DVector::from_iterator(sub.inactive.len(), sub.inactive.iter().map(|&j| grad[j])),
        ..sub
    };
    let (lasso_map, region) = lasso_inversion_map(&outcome, x, opts.lambda, opts.epsilon)?;
    let coords = lasso_map.coords.clone();

    let xc = select_columns(x, &coords);
    let gram = xc.transpose() * &xc;
    let mut d = DMatrix::zeros(p, p);
    d.view_mut((0, 0), (p, e)).copy_from(&(-gram.columns(0, e)));
    for i in e..p {
        d[(i, i)] = -1.0;
    }
    let data = carved_statistic(&xc, y, e)?;
    let map = InversionMap::new(d, lasso_map.p, lasso_map.q, e, coords.clone())?;
    let realized_o = lasso_realized_o(&outcome);

    let (sigma_f, sigma_g, ridged) = bootstrap_covariances(&xc, y, &beta, &coords, e, r, m, opts.bootstrap, rng)?;
    Ok(CarvedQuery {
        query: QueryResult { outcome, map, region, realized_o },
        data,
        sigma_f,
        sigma_g,
        omega,
        subsample,
        ridged,
    })
}

/// `Σ_i (1 − 1{i ∈ split}/r) ∇ℓ_i(β)` with `∇ℓ_i(β) = −x_i(y_i − x_iᵀβ)`.
fn gradient_difference(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    split: &[usize],
    r: f64,
) -> DVector<f64> {
    let n = x.nrows();
    let resid = y - x * beta;
    let mut w = DVector::from_element(n, 1.0);
    for &i in split {
        w[i] -= 1.0 / r;
    }
    -(x.transpose() * resid.component_mul(&w))
}

/// `(β̄_E, X_{−E}ᵀ(y − X_E β̄_E))` for canonically ordered columns.
fn carved_statistic(xc: &DMatrix<f64>, y: &DVector<f64>, e: usize) -> Result<DVector<f64>> {
    let p = xc.ncols();
    let xe = xc.columns(0, e).into_owned();
    let bbar = if e > 0 {
        let ch = (xe.transpose() * &xe).cholesky().ok_or_else(|| Error::RankDeficient { columns: (0..e).collect() })?;
        ch.solve(&(xe.transpose() * y))
    } else {
        DVector::zeros(0)
    };
    let resid = y - &xe * &bbar;
    let mut s = DVector::zeros(p);
    s.rows_mut(0, e).copy_from(&bbar);
    if p > e {
        s.rows_mut(e, p - e).copy_from(&(xc.columns(e, p - e).transpose() * resid));
    }
    Ok(s)
}

#[allow(clippy::too_many_arguments)]
fn bootstrap_covariances<R: Rng + ?Sized>(
    xc: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    coords: &[usize],
    e: usize,
    r: f64,
    m: usize,
    draws: usize,
    rng: &mut R,
) -> Result<(SpdMatrix, SpdMatrix, bool)> {
    let (n, p) = xc.shape();
    let beta_c = select_entries(beta, coords);
    let mut stats_f = Vec::with_capacity(draws);
    let mut stats_g = Vec::with_capacity(draws);
    for _ in 0..draws {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let xb = select_rows(xc, &rows);
        let yb = select_entries(y, &rows);
        let Ok(s) = carved_statistic(&xb, &yb, e) else { continue };
        let split: Vec<usize> = if m == n { (0..n).collect() } else { sample(rng, n, m).into_vec() };
        stats_f.push(s);
        stats_g.push(gradient_difference(&xb, &yb, &beta_c, &split, r));
    }
    if stats_f.len() < draws / 2 {
        return Err(Error::RankDeficient { columns: (0..e).collect() });
    }
    let (sf, rf) = regularized_covariance(&stats_f, p)?;
    let (sg, rg) = regularized_covariance(&stats_g, p)?;
    Ok((sf, sg, rf || rg))
}

fn sample_covariance(stats: &[DVector<f64>], p: usize) -> DMatrix<f64> {
    let b = stats.len() as f64;
    let mean = stats.iter().fold(DVector::zeros(p), |a, s| a + s) / b;
    let mut cov = DMatrix::zeros(p, p);
    for s in stats {
        let dv = s - &mean;
        cov.ger(1.0, &dv, &dv, 1.0);
    }
    cov / (b - 1.0)
}

/// Sample covariance, ridged by `1e-6·trace/p` when not positive definite.
pub(crate) fn regularized_covariance(stats: &[DVector<f64>], p: usize) -> Result<(SpdMatrix, bool)> {
    let cov = sample_covariance(stats, p);
    let cov = (&cov + cov.transpose()) * 0.5;
    if let Ok(s) = SpdMatrix::new(cov.clone()) {
        return Ok((s, false));
    }
    let ridge = 1e-6 * cov.trace().max(1e-300) / p as f64;
    let mut c = cov;
    for i in 0..p {
        c[(i, i)] += ridge;
    }
    Ok((SpdMatrix::with_context(c, "ridged bootstrap covariance")?, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standard_normal_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn design(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(n, p);
        for j in 0..p {
            let c = standard_normal_vector(n, &mut rng);
            x.set_column(j, &(&c / c.norm()));
        }
        let mut beta = DVector::zeros(p);
        beta[0] = 4.0;
        beta[3] = -3.0;
        let y = &x * beta + standard_normal_vector(n, &mut rng);
        (x, y)
    }

    fn opts(fraction: f64, bootstrap: usize) -> CarvingOptions {
        CarvingOptions { lambda: 1.5, epsilon: 0.1, fraction, bootstrap }
    }

    #[test]
    fn full_split_has_zero_randomization() {
        let (x, y) = design(1, 60, 5);
        let c = carved_lasso_query(&y, &x, opts(1.0, 50), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(c.omega, DVector::zeros(5));
    }

    #[test]
    fn reconstruction_and_region() {
        for seed in 0..10 {
            let (x, y) = design(seed, 80, 6);
            let c = carved_lasso_query(&y, &x, opts(0.5, 100), &mut ChaCha8Rng::seed_from_u64(seed + 100)).unwrap();
            let q = &c.query;
            assert!(q.map.reconstruction_error(&c.data, &q.realized_o, &c.omega) <= 1e-8);
            assert!(q.region.contains_with_slack(&q.realized_o, 1e-8));
            assert!(q.map.has_canonical_structure(0.0));
        }
    }

    #[test]
    fn bootstrap_stability_across_seeds() {
        let (x, y) = design(7, 100, 5);
        let a = carved_lasso_query(&y, &x, opts(0.5, 2000), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ga = a.sigma_g.matrix();
        let reference = {
            let coords = a.query.map.coords.clone();
            let xc = select_columns(&x, &coords);
            let mut beta = DVector::zeros(5);
            for (k, &j) in a.query.outcome.active.iter().enumerate() {
                beta[j] = a.query.outcome.active_solution[k];
            }
            let e = a.query.outcome.active.len();
            bootstrap_covariances(&xc, &y, &beta, &coords, e, 0.5, 50, 2000, &mut ChaCha8Rng::seed_from_u64(99)).unwrap()
        };
        let gb = reference.1.matrix().clone();
        assert!((ga - &gb).norm() / ga.norm() <= 0.10, "relative change {}", (ga - &gb).norm() / ga.norm());
        let fa = a.sigma_f.matrix();
        assert!((fa - reference.0.matrix()).norm() / fa.norm() <= 0.10);
        assert!((ga - ga.transpose()).amax() == 0.0);
        assert!(ga.clone().symmetric_eigenvalues().min() > 0.0);
    }
}
