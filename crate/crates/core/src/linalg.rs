//! Dense linear algebra helpers built on nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric positive definite matrix with a cached Cholesky factor.
///
/// Products with the inverse go through triangular substitution. Diagonal
/// matrices are detected and handled elementwise.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
    diagonal: Option<DVector<f64>>,
}

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        Self::with_context(matrix, "covariance")
    }

    pub fn with_context(matrix: DMatrix<f64>, context: &str) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::Dimension {
                context: "square matrix",
                expected: n,
                found: matrix.ncols(),
            });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{context} has non-finite entries")));
        }
        let scale = matrix.amax().max(1.0);
        let mut off_diagonal = false;
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (matrix[(i, j)], matrix[(j, i)]);
                if (a - b).abs() > 1e-10 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "{context} is not symmetric at ({i}, {j})"
                    )));
                }
                if a != 0.0 || b != 0.0 {
                    off_diagonal = true;
                }
            }
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        if !off_diagonal {
            let d = sym.diagonal();
            if d.iter().any(|&v| v <= 0.0) {
                return Err(Error::NotPositiveDefinite {
                    context: context.to_string(),
                    condition: f64::INFINITY,
                });
            }
            let lower = DMatrix::from_diagonal(&d.map(f64::sqrt));
            return Ok(Self { matrix: sym, lower, diagonal: Some(d) });
        }
        match sym.clone().cholesky() {
            Some(ch) => {
                let lower = ch.unpack();
                Ok(Self { matrix: sym, lower, diagonal: None })
            }
            None => Err(Error::NotPositiveDefinite {
                context: context.to_string(),
                condition: condition_estimate(&sym),
            }),
        }
    }

    /// `scale² I`.
    pub fn isotropic(dim: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        Self::new(DMatrix::from_diagonal_element(dim, dim, scale * scale))
    }

    pub fn from_diagonal(d: &DVector<f64>) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(d))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Lower Cholesky factor `L` with `LLᵀ = Σ`.
    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn diagonal(&self) -> Option<&DVector<f64>> {
        self.diagonal.as_ref()
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal.is_some()
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.diagonal {
            Some(d) => v.component_mul(d),
            None => &self.matrix * v,
        }
    }

    /// `L⁻¹ v`.
    pub fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.diagonal {
            Some(d) => v.zip_map(d, |a, b| a / b.sqrt()),
            None => self
                .lower
                .solve_lower_triangular(v)
                .expect("cholesky factor has a positive diagonal"),
        }
    }

    /// `L⁻¹ M`.
    pub fn whiten_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.diagonal {
            Some(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i].sqrt();
                }
                out
            }
            None => self
                .lower
                .solve_lower_triangular(m)
                .expect("cholesky factor has a positive diagonal"),
        }
    }

    /// `Σ⁻¹ v`.
    pub fn solve(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.diagonal {
            Some(d) => v.component_div(d),
            None => {
                let w = self.whiten(v);
                self.lower
                    .tr_solve_lower_triangular(&w)
                    .expect("cholesky factor has a positive diagonal")
            }
        }
    }

    /// `Σ⁻¹ M`.
    pub fn solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.diagonal {
            Some(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row /= d[i];
                }
                out
            }
            None => {
                let w = self.whiten_matrix(m);
                self.lower
                    .tr_solve_lower_triangular(&w)
                    .expect("cholesky factor has a positive diagonal")
            }
        }
    }

    /// `vᵀ Σ⁻¹ v`.
    pub fn inv_quad(&self, v: &DVector<f64>) -> f64 {
        self.whiten(v).norm_squared()
    }

    /// `Σ⁻¹` as a dense matrix.
    pub fn precision(&self) -> DMatrix<f64> {
        self.solve_matrix(&DMatrix::identity(self.dim(), self.dim()))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Crude condition number estimate from the Cholesky diagonal.
    pub fn condition_estimate(&self) -> f64 {
        let d = self.lower.diagonal();
        let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        (hi / lo).powi(2)
    }

    pub fn marginal_sd(&self, j: usize) -> f64 {
        self.matrix[(j, j)].sqrt()
    }
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let hi = eig.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let lo = eig.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Cholesky factorization of a symmetric matrix with Levenberg damping.
///
/// Returns the factor of `H + δI` for the smallest `δ` on a geometric ladder
/// that makes it positive definite, together with `δ`.
pub fn damped_cholesky(h: &DMatrix<f64>) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(ch) = h.clone().cholesky() {
        return Some((ch, 0.0));
    }
    let scale = h.diagonal().amax().max(1e-12);
    let mut delta = 1e-10 * scale;
    for _ in 0..40 {
        let mut m = h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += delta;
        }
        if let Some(ch) = m.cholesky() {
            return Some((ch, delta));
        }
        delta *= 10.0;
    }
    None
}

/// Accumulates `Σ_j w_j a_j a_jᵀ` for matrix columns `a_j`, skipping zeros.
///
/// `support[j]` lists the rows where column `j` of `a` is nonzero.
pub fn add_weighted_gram(
    out: &mut DMatrix<f64>,
    a: &DMatrix<f64>,
    support: &[Vec<usize>],
    weights: &[f64],
    offset: usize,
) {
    for (j, rows) in support.iter().enumerate() {
        let w = weights[j];
        if w == 0.0 {
            continue;
        }
        for &r in rows {
            let arj = a[(r, j)] * w;
            for &c in rows {
                out[(offset + r, offset + c)] += arj * a[(c, j)];
            }
        }
    }
}

/// Row indices of the nonzero entries of each column.
pub fn column_support(a: &DMatrix<f64>) -> Vec<Vec<usize>> {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).filter(|&i| a[(i, j)] != 0.0).collect())
        .collect()
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Dimension {
            context: "row-major matrix",
            expected: ncols,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Columns of `x` selected by `idx`, in that order.
pub fn select_columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), idx.len(), |i, j| x[(i, idx[j])])
}

pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Ordinary least squares coefficients and `(XᵀX)⁻¹`.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let gram = x.transpose() * x;
    let ch = gram.clone().cholesky().ok_or_else(|| Error::RankDeficient {
        columns: (0..x.ncols()).collect(),
    })?;
    let beta = ch.solve(&(x.transpose() * y));
    let inv = ch.inverse();
    Ok((beta, inv))
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd3() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0])
    }

    #[test]
    fn solve_agrees_with_inverse() {
        let m = spd3();
        let s = SpdMatrix::new(m.clone()).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = s.solve(&v);
        assert_relative_eq!(&m * &x, v, epsilon = 1e-12);
        let inv = m.clone().try_inverse().unwrap();
        assert_relative_eq!(s.inv_quad(&v), (v.transpose() * inv * &v)[0], epsilon = 1e-12);
        assert_relative_eq!(s.log_det(), m.determinant().ln(), epsilon = 1e-12);
    }

    #[test]
    fn diagonal_fast_path() {
        let s = SpdMatrix::isotropic(3, 2.0).unwrap();
        assert!(s.is_diagonal());
        let v = DVector::from_vec(vec![4.0, 8.0, -4.0]);
        assert_relative_eq!(s.solve(&v), v.clone() / 4.0);
        assert_relative_eq!(s.whiten(&v), v / 2.0);
    }

    #[test]
    fn rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(m), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn weighted_gram_matches_dense() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 0.0, -1.0, 3.0]);
        let w = [0.5, 2.0];
        let mut out = DMatrix::zeros(3, 3);
        add_weighted_gram(&mut out, &a, &column_support(&a), &w, 0);
        let dense = &a * DMatrix::from_diagonal(&DVector::from_row_slice(&w)) * a.transpose();
        assert_relative_eq!(out, dense, epsilon = 1e-14);
    }
}
