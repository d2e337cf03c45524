use nalgebra::{DMatrix, DVector};

use super::{Constraint, InversionMap, QueryResult, SelectionOutcome, SelectionRegion};
use crate::error::{Error, Result};
use crate::linalg::select_columns;

/// Randomized forward stepwise selection for `K` steps.
///
/// Step `k` picks `j_k = argmax_j |X̃_jᵀy + ω_{k,j}|` over the remaining
/// columns `X̃`, which have the previously chosen columns projected out. Ties
/// go to the lowest index. Each step has map `ω_k = −X̃ᵀy + o`, with a sign
/// constraint on the winner and the cone `|o_j| < z_{j_k} o_{j_k}` on the rest.
pub fn forward_stepwise_query(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    steps: usize,
    omegas: &[DVector<f64>],
) -> Result<Vec<QueryResult>> {
    let (n, p) = x.shape();
    if steps == 0 || steps > p {
        return Err(Error::InvalidArgument(format!("step count must lie in 1..={p}, got {steps}")));
    }
    if y.len() != n {
        return Err(Error::Dimension { context: "stepwise response", expected: n, found: y.len() });
    }
    if omegas.len() != steps {
        return Err(Error::Dimension { context: "stepwise randomizations", expected: steps, found: omegas.len() });
    }
    let mut chosen: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(steps);
    for omega in omegas {
        let remaining: Vec<usize> = (0..p).filter(|j| !chosen.contains(j)).collect();
        if omega.len() != remaining.len() {
            return Err(Error::Dimension { context: "stepwise step randomization", expected: remaining.len(), found: omega.len() });
        }
        let xt = projected_columns(x, &chosen, &remaining)?;
        let u = xt.transpose() * y + omega;
        let mut best = 0;
        for i in 1..remaining.len() {
            if u[i].abs() > u[best].abs() {
                best = i;
            }
        }
        let z = if u[best] >= 0.0 { 1.0 } else { -1.0 };
        let winner = remaining[best];
        let mut local: Vec<usize> = vec![best];
        local.extend((0..remaining.len()).filter(|&i| i != best));
        let m = remaining.len();
        let d = -select_columns(&xt, &local).transpose();
        let realized_o = DVector::from_iterator(m, local.iter().map(|&i| u[i]));
        let mut constraints = vec![Constraint::Sign { z }];
        constraints.extend(std::iter::repeat(Constraint::Cone { anchor: 0 }).take(m - 1));
        let region = SelectionRegion::new(constraints);
        let map = InversionMap::new(d, DMatrix::identity(m, m), DVector::zeros(m), 1, local.clone())?;
        let others: Vec<usize> = local[1..].iter().map(|&i| remaining[i]).collect();
        let outcome = SelectionOutcome {
            active: vec![winner],
            signs: vec![z],
            active_solution: DVector::from_element(1, u[best]),
            inactive_subgradient: DVector::from_iterator(m - 1, local[1..].iter().map(|&i| u[i])),
            inactive: others,
        };
        out.push(QueryResult { outcome, map, region, realized_o });
        chosen.push(winner);
    }
    Ok(out)
}

/// `P⊥ X_remaining` with `P⊥` the projection off the chosen columns.
pub(crate) fn projected_columns(x: &DMatrix<f64>, chosen: &[usize], remaining: &[usize]) -> Result<DMatrix<f64>> {
    let xr = select_columns(x, remaining);
    if chosen.is_empty() {
        return Ok(xr);
    }
    let xc = select_columns(x, chosen);
    let qr = xc.qr();
    let r = qr.r();
    if r.diagonal().iter().any(|v| v.abs() <= 1e-12) {
        return Err(Error::RankDeficient { columns: chosen.to_vec() });
    }
    let q = qr.q();
    Ok(&xr - &q * (q.transpose() * &xr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standard_normal_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dominant_column() {
        let x = DMatrix::identity(4, 4);
        let y = x.column(0) * 10.0;
        let res = forward_stepwise_query(&y, &x, 1, &[DVector::zeros(4)]).unwrap();
        assert_eq!(res[0].outcome.active, vec![0]);
        assert_eq!(res[0].outcome.signs, vec![1.0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let x = DMatrix::identity(3, 3);
        let y = DVector::from_vec(vec![1.0, -1.0, 1.0]);
        let res = forward_stepwise_query(&y, &x, 1, &[DVector::zeros(3)]).unwrap();
        assert_eq!(res[0].outcome.active, vec![0]);
    }

    #[test]
    fn two_steps_project_and_reconstruct() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(40, 6, |_, _| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
        let y = standard_normal_vector(40, &mut rng) + x.column(2) * 2.0;
        let omegas = vec![standard_normal_vector(6, &mut rng), standard_normal_vector(5, &mut rng)];
        let res = forward_stepwise_query(&y, &x, 2, &omegas).unwrap();
        let j1 = res[0].outcome.active[0];
        let remaining: Vec<usize> = (0..6).filter(|&j| j != j1).collect();
        let xt = projected_columns(&x, &[j1], &remaining).unwrap();
        assert!((xt.transpose() * x.column(j1)).amax() <= 1e-10);
        for (r, w) in res.iter().zip(&omegas) {
            assert!(r.map.reconstruction_error(&y, &r.realized_o, w) <= 1e-8);
            assert!(r.region.contains(&r.realized_o));
            assert!(r.region.is_data_dependent());
            r.region.validate(1).unwrap();
        }
        assert_ne!(res[1].outcome.active[0], j1);
    }
}
