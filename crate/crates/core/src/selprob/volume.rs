use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::normal::log_diff_cdf;
use crate::queries::{Constraint, InversionMap, SelectionRegion};

/// Log probability that the inactive optimization variables fall inside
/// their bounds given `(s, o_E)`, under an isotropic randomizer of scale `τ`.
///
/// With `α = D_{−E}s + P_{−E,E}o_E + q_{−E}` and bound `c_j` this is
/// `Σ_j log{Φ((α_j + c_j)/τ) − Φ((α_j − c_j)/τ)}`. Unbounded coordinates and
/// an empty inactive block contribute zero.
pub fn log_inactive_volume(o_active: &DVector<f64>, s: &DVector<f64>, map: &InversionMap, region: &SelectionRegion, tau: f64) -> Result<f64> {
    let e = map.n_active;
    if o_active.len() != e {
        return Err(Error::Dimension { context: "active optimization variables", expected: e, found: o_active.len() });
    }
    if s.len() != map.data_dim() {
        return Err(Error::Dimension { context: "data vector", expected: map.data_dim(), found: s.len() });
    }
    if region.len() != map.opt_dim() {
        return Err(Error::Dimension { context: "region", expected: map.opt_dim(), found: region.len() });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("randomizer scale must be positive, got {tau}")));
    }
    let m = map.n_inactive();
    if m == 0 {
        return Ok(0.0);
    }
    let mut alpha = map.d.rows(e, m) * s + map.q.rows(e, m);
    if e > 0 {
        alpha += map.p.view((e, 0), (m, e)) * o_active;
    }
    let mut full = DVector::zeros(map.opt_dim());
    full.rows_mut(0, e).copy_from(o_active);
    let mut total = 0.0;
    for i in 0..m {
        let j = e + i;
        let c = match region.constraints[j] {
            Constraint::Cube { bound } => bound,
            Constraint::Cone { .. } => region.bound(j, &full).unwrap_or(f64::INFINITY),
            Constraint::Free => continue,
            Constraint::Sign { .. } => {
                return Err(Error::InvalidArgument(format!("inactive coordinate {j} carries a sign constraint")));
            }
        };
        if c == f64::INFINITY {
            continue;
        }
        if !(c > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        total += log_diff_cdf((alpha[i] - c) / tau, (alpha[i] + c) / tau);
    }
    Ok(total)
}
