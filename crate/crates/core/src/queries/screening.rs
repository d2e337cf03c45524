use nalgebra::{DMatrix, DVector};

use super::{InversionMap, QueryResult, SelectionOutcome, SelectionRegion};
use crate::error::{Error, Result};
use crate::linalg::select_columns;

/// Randomized marginal screening of `Xᵀy/σ̂ + ω` at thresholds `α`.
///
/// The optimization variables are `o_E = u_E − α_E z_E` and `o_{−E} = u_{−E}`
/// with `u` the randomized statistic; the map is `D = −Xᵀ/σ̂`, `P = I`,
/// `q = (α_E z_E, 0)`.
pub fn marginal_screening_query(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    alpha: &[f64],
    sigma: f64,
    omega: &DVector<f64>,
) -> Result<QueryResult> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension { context: "screening response", expected: n, found: y.len() });
    }
    if alpha.len() != p || omega.len() != p {
        return Err(Error::Dimension { context: "screening thresholds", expected: p, found: alpha.len().min(omega.len()) });
    }
    if alpha.iter().any(|&a| !(a > 0.0)) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument("thresholds and σ̂ must be positive".into()));
    }
    let u = x.transpose() * y / sigma + omega;
    let active: Vec<usize> = (0..p).filter(|&j| u[j].abs() > alpha[j]).collect();
    let inactive: Vec<usize> = (0..p).filter(|&j| u[j].abs() <= alpha[j]).collect();
    let signs: Vec<f64> = active.iter().map(|&j| u[j].signum()).collect();
    let e = active.len();
    let coords: Vec<usize> = active.iter().chain(inactive.iter()).copied().collect();

    let d = -select_columns(x, &coords).transpose() / sigma;
    let mut q = DVector::zeros(p);
    let mut realized_o = DVector::zeros(p);
    for (k, &j) in active.iter().enumerate() {
        q[k] = alpha[j] * signs[k];
        realized_o[k] = u[j] - q[k];
    }
    for (k, &j) in inactive.iter().enumerate() {
        realized_o[e + k] = u[j];
    }
    let bounds: Vec<f64> = inactive.iter().map(|&j| alpha[j]).collect();
    let region = SelectionRegion::sign_and_cube(&signs, &bounds);
    let map = InversionMap::new(d, DMatrix::identity(p, p), q, e, coords)?;
    let outcome = SelectionOutcome {
        active_solution: DVector::from_iterator(e, active.iter().enumerate().map(|(k, &j)| alpha[j] * signs[k])),
        inactive_subgradient: DVector::from_iterator(inactive.len(), inactive.iter().map(|&j| u[j])),
        active,
        signs,
        inactive,
    };
    Ok(QueryResult { outcome, map, region, realized_o })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standard_normal_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn direct_thresholding() {
        let x = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![5.0, 0.1]);
        let q = marginal_screening_query(&y, &x, &[1.0, 1.0], 1.0, &DVector::zeros(2)).unwrap();
        assert_eq!(q.outcome.active, vec![0]);
        let none = marginal_screening_query(&y, &x, &[1e12, 1e12], 1.0, &DVector::zeros(2)).unwrap();
        assert!(none.outcome.is_empty());
    }

    #[test]
    fn reconstruction_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = DMatrix::from_fn(30, 6, |_, _| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
            let y = standard_normal_vector(30, &mut rng) * 3.0;
            let omega = standard_normal_vector(6, &mut rng);
            let q = marginal_screening_query(&y, &x, &[2.0; 6], 1.3, &omega).unwrap();
            assert!(q.map.reconstruction_error(&y, &q.realized_o, &omega) <= 1e-8);
            assert!(q.region.contains_with_slack(&q.realized_o, 1e-8));
        }
    }
}
