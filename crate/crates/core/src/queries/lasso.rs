use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Constraint, InversionMap, QueryResult, SelectionOutcome, SelectionRegion};
use crate::error::{Error, Result};
use crate::model::standard_normal_vector;

/// Tolerances for the coordinate descent solver.
#[derive(Clone, Copy, Debug)]
pub struct LassoOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub active_threshold: f64,
    pub kkt_tolerance: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self { tolerance: 1e-10, max_sweeps: 50_000, active_threshold: 1e-9, kkt_tolerance: 1e-6 }
    }
}

fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

/// Minimizes `½‖y − Xβ‖² − ωᵀβ + λ‖β‖₁ + (ε/2)‖β‖²` by cyclic coordinate
/// descent, then re-solves the active block exactly.
pub fn solve_randomized_lasso(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    lambda: f64,
    epsilon: f64,
    omega: &DVector<f64>,
) -> Result<SelectionOutcome> {
    solve_randomized_lasso_with(y, x, lambda, epsilon, omega, LassoOptions::default())
}

pub fn solve_randomized_lasso_with(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    lambda: f64,
    epsilon: f64,
    omega: &DVector<f64>,
    opts: LassoOptions,
) -> Result<SelectionOutcome> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension { context: "lasso response", expected: n, found: y.len() });
    }
    if omega.len() != p {
        return Err(Error::Dimension { context: "lasso randomization", expected: p, found: omega.len() });
    }
    if !(lambda > 0.0) || !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("need λ > 0 and ε ≥ 0, got λ={lambda}, ε={epsilon}")));
    }
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    if let Some(j) = (0..p).find(|&j| col_sq[j] + epsilon <= 0.0) {
        return Err(Error::RankDeficient { columns: vec![j] });
    }

    let mut beta: DVector<f64> = DVector::zeros(p);
    let mut resid = y.clone();
    let mut converged = false;
    let mut sweeps = 0;
    let mut last_change = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            let col = x.column(j);
            let old = beta[j];
            let rho = col.dot(&resid) + col_sq[j] * old + omega[j];
            let new = soft_threshold(rho, lambda) / (col_sq[j] + epsilon);
            let delta = new - old;
            if delta != 0.0 {
                resid.axpy(-delta, &col, 1.0);
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        last_change = max_change;
        if max_change < opts.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            message: "lasso coordinate descent".into(),
            iterations: sweeps,
            residual: last_change,
        });
    }

    let active: Vec<usize> = (0..p).filter(|&j| beta[j].abs() > opts.active_threshold).collect();
    for j in 0..p {
        if beta[j].abs() <= opts.active_threshold {
            beta[j] = 0.0;
        }
    }
    polish_active_block(y, x, lambda, epsilon, omega, &active, &mut beta);

    let grad = x.transpose() * (y - x * &beta) + omega - &beta * epsilon;
    let signs: Vec<f64> = active.iter().map(|&j| beta[j].signum()).collect();
    let inactive: Vec<usize> = (0..p).filter(|j| !active.contains(j)).collect();
    let mut kkt = 0.0f64;
    for (k, &j) in active.iter().enumerate() {
        kkt = kkt.max((grad[j] - lambda * signs[k]).abs());
    }
    for &j in &inactive {
        kkt = kkt.max(grad[j].abs() - lambda);
    }
    if kkt > opts.kkt_tolerance {
        return Err(Error::NonConvergence {
            message: "lasso KKT conditions violated".into(),
            iterations: sweeps,
            residual: kkt,
        });
    }
    Ok(SelectionOutcome {
        active_solution: DVector::from_iterator(active.len(), active.iter().map(|&j| beta[j])),
        inactive_subgradient: DVector::from_iterator(inactive.len(), inactive.iter().map(|&j| grad[j])),
        active,
        signs,
        inactive,
    })
}

/// Replaces the active coefficients by the exact solution of the active
/// stationarity equations when that solution keeps its signs and the
/// inactive subgradient inside the cube.
fn polish_active_block(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    lambda: f64,
    epsilon: f64,
    omega: &DVector<f64>,
    active: &[usize],
    beta: &mut DVector<f64>,
) {
    if active.is_empty() {
        return;
    }
    let xe = crate::linalg::select_columns(x, active);
    let mut gram = xe.transpose() * &xe;
    for i in 0..active.len() {
        gram[(i, i)] += epsilon;
    }
    let rhs = DVector::from_iterator(
        active.len(),
        active.iter().map(|&j| x.column(j).dot(y) + omega[j] - lambda * beta[j].signum()),
    );
    let Some(ch) = gram.cholesky() else { return };
    let sol = ch.solve(&rhs);
    if active.iter().enumerate().any(|(k, &j)| sol[k].signum() != beta[j].signum() || sol[k].abs() <= 1e-9) {
        return;
    }
    let mut cand = DVector::zeros(beta.len());
    for (k, &j) in active.iter().enumerate() {
        cand[j] = sol[k];
    }
    let grad = x.transpose() * (y - x * &cand) + omega - &cand * epsilon;
    let ok = (0..beta.len()).all(|j| active.contains(&j) || grad[j].abs() <= lambda * (1.0 + 1e-12));
    if ok {
        *beta = cand;
    }
}

/// Inversion map and region of the randomized Lasso.
///
/// `D = −Xᵀ`, `P = [[X_EᵀX_E + εI, 0], [X_{−E}ᵀX_E, I]]`, `q = (λz_E, 0)`, all
/// in canonical order; signs on the active block and cubes of radius `λ` on
/// the inactive block.
pub fn lasso_inversion_map(
    outcome: &SelectionOutcome,
    x: &DMatrix<f64>,
    lambda: f64,
    epsilon: f64,
) -> Result<(InversionMap, SelectionRegion)> {
    let p = x.ncols();
    let e = outcome.active.len();
    let coords: Vec<usize> = outcome.active.iter().chain(outcome.inactive.iter()).copied().collect();
    if coords.len() != p {
        return Err(Error::Dimension { context: "lasso outcome", expected: p, found: coords.len() });
    }
    let xc = crate::linalg::select_columns(x, &coords);
    let d = -xc.transpose();
    let xe = xc.columns(0, e);
    let mut pm = DMatrix::zeros(p, p);
    let cross = xc.transpose() * xe;
    pm.view_mut((0, 0), (p, e)).copy_from(&cross);
    for i in 0..e {
        pm[(i, i)] += epsilon;
    }
    for i in e..p {
        pm[(i, i)] = 1.0;
    }
    let mut q = DVector::zeros(p);
    for (k, &z) in outcome.signs.iter().enumerate() {
        q[k] = lambda * z;
    }
    let map = InversionMap::new(d, pm, q, e, coords)?;
    let region = SelectionRegion::sign_and_cube(&outcome.signs, &vec![lambda; p - e]);
    Ok((map, region))
}

pub(crate) fn lasso_realized_o(outcome: &SelectionOutcome) -> DVector<f64> {
    DVector::from_iterator(
        outcome.active.len() + outcome.inactive.len(),
        outcome.active_solution.iter().chain(outcome.inactive_subgradient.iter()).copied(),
    )
}

/// Solves the randomized Lasso and builds its map in one call.
pub fn lasso_query(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    lambda: f64,
    epsilon: f64,
    omega: &DVector<f64>,
) -> Result<QueryResult> {
    let outcome = solve_randomized_lasso(y, x, lambda, epsilon, omega)?;
    let (map, region) = lasso_inversion_map(&outcome, x, lambda, epsilon)?;
    let realized_o = lasso_realized_o(&outcome);
    Ok(QueryResult { outcome, map, region, realized_o })
}

impl SelectionRegion {
    /// Whether every inactive coordinate carries a constraint that is not
    /// data dependent.
    pub fn has_fixed_inactive_bounds(&self, n_active: usize) -> bool {
        self.constraints[n_active..].iter().all(|c| matches!(c, Constraint::Cube { .. } | Constraint::Free))
    }
}

/// Monte Carlo estimate of `σ̂·E‖Xᵀψ‖_∞` with `ψ ~ N(0, I_n)`.
pub fn theoretical_lambda(x: &DMatrix<f64>, sigma: f64, draws: usize, seed: u64) -> Result<f64> {
    if draws < 1000 {
        return Err(Error::InvalidArgument(format!("theoretical λ needs at least 1000 draws, got {draws}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("σ̂ must be positive, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xt = x.transpose();
    let mut total = 0.0;
    for _ in 0..draws {
        let psi = standard_normal_vector(x.nrows(), &mut rng);
        total += (&xt * psi).amax();
    }
    Ok(sigma * total / draws as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn instance(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, p, |_, _| 0.0);
        for j in 0..p {
            let c = standard_normal_vector(n, &mut rng);
            let c = &c / c.norm();
            x.set_column(j, &c);
        }
        let mut beta = DVector::zeros(p);
        beta[0] = 3.0;
        beta[1 % p] = -2.0;
        let y = &x * beta + standard_normal_vector(n, &mut rng);
        let omega = standard_normal_vector(p, &mut rng);
        (x, y, omega)
    }

    #[test]
    fn scalar_soft_threshold() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 3.0);
        let omega = DVector::from_element(1, 0.5);
        let out = solve_randomized_lasso(&y, &x, 1.0, 0.0, &omega).unwrap();
        assert_eq!(out.active, vec![0]);
        assert_eq!(out.signs, vec![1.0]);
        assert_relative_eq!(out.active_solution[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn full_shrinkage() {
        let (x, y, _) = instance(1, 30, 6);
        let xty = x.transpose() * &y;
        let lambda = xty.amax() * 1.01;
        let out = solve_randomized_lasso(&y, &x, lambda, 0.0, &DVector::zeros(6)).unwrap();
        assert!(out.is_empty());
        assert_relative_eq!(out.inactive_subgradient, xty, epsilon = 1e-12);
    }

    #[test]
    fn kkt_and_reconstruction() {
        for seed in 0..100 {
            let (x, y, omega) = instance(seed, 50, 10);
            let q = lasso_query(&y, &x, 1.0, 0.1, &omega).unwrap();
            assert!(q.map.reconstruction_error(&y, &q.realized_o, &omega) <= 1e-8);
            assert!(q.region.contains_with_slack(&q.realized_o, 1e-8));
            assert!(q.outcome.inactive_subgradient.amax() <= 1.0 + 1e-8);
            assert!(q.map.has_canonical_structure(0.0));
            for (k, &z) in q.outcome.signs.iter().enumerate() {
                assert_eq!(q.outcome.active_solution[k].signum(), z);
            }
        }
    }

    #[test]
    fn empty_active_block_map() {
        let (x, y, _) = instance(2, 20, 4);
        let omega = DVector::zeros(4);
        let q = lasso_query(&y, &x, 100.0, 0.0, &omega).unwrap();
        assert!(q.outcome.is_empty());
        assert_eq!(q.map.p, DMatrix::identity(4, 4));
        assert_relative_eq!(q.map.d, -x.transpose());
    }

    #[test]
    fn path_monotone_on_near_orthogonal_design() {
        let (x, y, omega) = instance(4, 200, 8);
        let mut prev = usize::MAX;
        for k in 0..10 {
            let lambda = 0.2 + 0.4 * k as f64;
            let out = solve_randomized_lasso(&y, &x, lambda, 0.1, &omega).unwrap();
            assert!(out.active.len() <= prev, "λ={lambda}: |E| grew");
            prev = out.active.len();
        }
    }

    #[test]
    fn theoretical_lambda_half_normal() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let l = theoretical_lambda(&x, 1.0, 100_000, 3).unwrap();
        assert!((l - (2.0 / std::f64::consts::PI).sqrt()).abs() / 0.7979 <= 0.02);
        let l2 = theoretical_lambda(&x, 2.0, 100_000, 3).unwrap();
        assert_eq!(l2, 2.0 * l);
        assert_eq!(theoretical_lambda(&x, 1.0, 5000, 9).unwrap(), theoretical_lambda(&x, 1.0, 5000, 9).unwrap());
        assert!(theoretical_lambda(&x, 1.0, 999, 9).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn selection_equivariance(seed in 0u64..1000, perm_seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            let (x, y, omega) = instance(seed, 40, 7);
            let mut perm: Vec<usize> = (0..7).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let xp = crate::linalg::select_columns(&x, &perm);
            let wp = crate::linalg::select_entries(&omega, &perm);
            let a = lasso_query(&y, &x, 0.8, 0.1, &omega).unwrap();
            let b = lasso_query(&y, &xp, 0.8, 0.1, &wp).unwrap();
            let mut mapped: Vec<usize> = b.outcome.active.iter().map(|&j| perm[j]).collect();
            mapped.sort();
            prop_assert_eq!(&mapped, &a.outcome.active);
            // maps agree after relabelling both canonical orders
            let la: Vec<usize> = a.map.coords.clone();
            let lb: Vec<usize> = b.map.coords.iter().map(|&j| perm[j]).collect();
            for i in 0..7 {
                let ib = lb.iter().position(|&c| c == la[i]).unwrap();
                prop_assert!((a.map.q[i] - b.map.q[ib]).abs() < 1e-9);
                prop_assert!((a.map.d.row(i) - b.map.d.row(ib)).amax() < 1e-12);
                for k in 0..7 {
                    let kb = lb.iter().position(|&c| c == la[k]).unwrap();
                    prop_assert!((a.map.p[(i, k)] - b.map.p[(ib, kb)]).abs() < 1e-9);
                }
            }
        }
    }
}
