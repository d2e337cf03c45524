//! Gaussian generative models, randomization laws and priors.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;

/// Mean parametrization `β ↦ μ(β)` with its Jacobian.
pub trait MeanMap: Debug + Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn mean(&self, beta: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, beta: &DVector<f64>) -> DMatrix<f64>;

    /// The constant Jacobian when the map is affine.
    fn linear_part(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// `μ(β) = Aβ + c`.
#[derive(Clone, Debug)]
pub struct LinearMean {
    matrix: DMatrix<f64>,
    offset: Option<DVector<f64>>,
}

impl LinearMean {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        Self { matrix, offset: None }
    }

    pub fn with_offset(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != matrix.nrows() {
            return Err(Error::Dimension {
                context: "mean offset",
                expected: matrix.nrows(),
                found: offset.len(),
            });
        }
        Ok(Self { matrix, offset: Some(offset) })
    }

    pub fn identity(k: usize) -> Self {
        Self::new(DMatrix::identity(k, k))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> Option<&DVector<f64>> {
        self.offset.as_ref()
    }
}

impl MeanMap for LinearMean {
    fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn output_dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn mean(&self, beta: &DVector<f64>) -> DVector<f64> {
        let m = &self.matrix * beta;
        match &self.offset {
            Some(c) => m + c,
            None => m,
        }
    }

    fn jacobian(&self, _beta: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }

    fn linear_part(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}

/// Gaussian data law `S ~ N(μ(β), Σ_f)`.
#[derive(Clone, Debug)]
pub struct GenerativeModel {
    mean_map: Arc<dyn MeanMap>,
    covariance: SpdMatrix,
    noise_scale: f64,
}

impl GenerativeModel {
    pub fn new(mean_map: Arc<dyn MeanMap>, covariance: SpdMatrix) -> Result<Self> {
        if covariance.dim() != mean_map.output_dim() {
            return Err(Error::Dimension {
                context: "model covariance",
                expected: mean_map.output_dim(),
                found: covariance.dim(),
            });
        }
        let noise_scale = match covariance.diagonal() {
            Some(d) if d.iter().all(|&v| v == d[0]) => d[0].sqrt(),
            _ => 1.0,
        };
        Ok(Self { mean_map, covariance, noise_scale })
    }

    /// `S = y ~ N(Xβ, σ²I)` with `X` the columns of the working model.
    pub fn linear_isotropic(x: DMatrix<f64>, sigma: f64) -> Result<Self> {
        let n = x.nrows();
        Self::new(Arc::new(LinearMean::new(x)), SpdMatrix::isotropic(n, sigma)?)
    }

    pub fn mean_map(&self) -> &Arc<dyn MeanMap> {
        &self.mean_map
    }

    pub fn covariance(&self) -> &SpdMatrix {
        &self.covariance
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn data_dim(&self) -> usize {
        self.mean_map.output_dim()
    }

    pub fn param_dim(&self) -> usize {
        self.mean_map.input_dim()
    }

    pub fn mean(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.mean_map.mean(beta)
    }

    pub fn jacobian(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        self.mean_map.jacobian(beta)
    }

    /// Gaussian log density of `s`, including the normalizing constant.
    pub fn log_density(&self, s: &DVector<f64>, beta: &DVector<f64>) -> f64 {
        let r = s - self.mean(beta);
        -0.5 * self.covariance.inv_quad(&r)
            - 0.5 * self.covariance.log_det()
            - 0.5 * (self.data_dim() as f64) * (2.0 * std::f64::consts::PI).ln()
    }

    /// `∇_β log f(s|β) = Jᵀ Σ_f⁻¹ (s − μ(β))`.
    pub fn score(&self, s: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        let r = s - self.mean(beta);
        self.jacobian(beta).transpose() * self.covariance.solve(&r)
    }

    /// Largest relative discrepancy between the Jacobian and central
    /// differences of the mean map.
    pub fn jacobian_error(&self, beta: &DVector<f64>) -> f64 {
        let j = self.jacobian(beta);
        let mut worst = 0.0f64;
        for c in 0..beta.len() {
            let h = 1e-6 * (1.0 + beta[c].abs());
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[c] += h;
            dn[c] -= h;
            let fd = (self.mean(&up) - self.mean(&dn)) / (2.0 * h);
            let col = j.column(c);
            let err = (&fd - col).amax() / (1.0 + fd.amax());
            worst = worst.max(err);
        }
        worst
    }

    pub fn sample<R: Rng + ?Sized>(&self, beta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        self.mean(beta) + gaussian_noise(&self.covariance, rng)
    }
}

/// A cumulant generating function with its convex conjugate.
pub trait LogMgf {
    fn dim(&self) -> usize;
    fn log_mgf(&self, t: &DVector<f64>) -> f64;
    fn log_mgf_grad(&self, t: &DVector<f64>) -> DVector<f64>;
    fn conjugate(&self, x: &DVector<f64>) -> f64;
    fn conjugate_grad(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// `N(mean, cov)` viewed through its log-MGF.
#[derive(Clone, Debug)]
pub struct GaussianLaw<'a> {
    pub mean: DVector<f64>,
    pub cov: &'a SpdMatrix,
}

impl LogMgf for GaussianLaw<'_> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_mgf(&self, t: &DVector<f64>) -> f64 {
        self.mean.dot(t) + 0.5 * t.dot(&self.cov.mul_vec(t))
    }

    fn log_mgf_grad(&self, t: &DVector<f64>) -> DVector<f64> {
        &self.mean + self.cov.mul_vec(t)
    }

    fn conjugate(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.cov.inv_quad(&(x - &self.mean))
    }

    fn conjugate_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        self.cov.solve(&(x - &self.mean))
    }
}

fn check_law_dims(t: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<()> {
    if t.len() != mean.len() {
        return Err(Error::Dimension { context: "argument vs mean", expected: mean.len(), found: t.len() });
    }
    if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
        return Err(Error::Dimension { context: "covariance", expected: mean.len(), found: cov.nrows() });
    }
    Ok(())
}

/// `μᵀλ + ½λᵀΣλ`.
pub fn gaussian_log_mgf(lambda: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    check_law_dims(lambda, mean, cov)?;
    let cov = SpdMatrix::new(cov.clone())?;
    Ok(GaussianLaw { mean: mean.clone(), cov: &cov }.log_mgf(lambda))
}

/// `½(x−μ)ᵀΣ⁻¹(x−μ)`.
pub fn gaussian_conjugate(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    check_law_dims(x, mean, cov)?;
    let cov = SpdMatrix::new(cov.clone())?;
    Ok(GaussianLaw { mean: mean.clone(), cov: &cov }.conjugate(x))
}

pub(crate) fn gaussian_noise<R: Rng + ?Sized>(cov: &SpdMatrix, rng: &mut R) -> DVector<f64> {
    let z = standard_normal_vector(cov.dim(), rng);
    match cov.diagonal() {
        Some(d) => z.zip_map(d, |a, b| a * b.sqrt()),
        None => cov.lower() * z,
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// Gaussian randomization `Ω ~ N(0, Σ_g)`.
#[derive(Clone, Debug)]
pub struct Randomizer {
    covariance: SpdMatrix,
    scale: f64,
}

impl Randomizer {
    pub fn isotropic(p: usize, tau: f64) -> Result<Self> {
        Ok(Self { covariance: SpdMatrix::isotropic(p, tau)?, scale: tau })
    }

    pub fn from_covariance(covariance: SpdMatrix) -> Self {
        let p = covariance.dim().max(1);
        let scale = (covariance.matrix().trace() / p as f64).sqrt();
        Self { covariance, scale }
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn covariance(&self) -> &SpdMatrix {
        &self.covariance
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn is_coordinate_independent(&self) -> bool {
        self.covariance.is_diagonal()
    }

    pub fn marginal_sd(&self, j: usize) -> f64 {
        self.covariance.marginal_sd(j)
    }

    /// Restriction to a subset of coordinates, in the given order.
    pub fn permuted(&self, coords: &[usize]) -> Result<Self> {
        let m = self.covariance.matrix();
        let sub = DMatrix::from_fn(coords.len(), coords.len(), |i, j| m[(coords[i], coords[j])]);
        Ok(Self { covariance: SpdMatrix::new(sub)?, scale: self.scale })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        gaussian_noise(&self.covariance, rng)
    }
}

/// Prior on the target parameter, applied independently per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    Flat,
    Gaussian { mean: f64, scale: f64 },
    LaplaceMixture { w: f64, b1: f64, b2: f64 },
}

impl Prior {
    pub fn gaussian(mean: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!("prior scale must be positive, got {scale}")));
        }
        Ok(Prior::Gaussian { mean, scale })
    }

    pub fn laplace_mixture(w: f64, b1: f64, b2: f64) -> Result<Self> {
        if !(w > 0.0 && w < 1.0) {
            return Err(Error::InvalidArgument(format!("mixture weight must lie in (0,1), got {w}")));
        }
        if !(b1 > 0.0 && b2 > 0.0) {
            return Err(Error::InvalidArgument("Laplace scales must be positive".into()));
        }
        Ok(Prior::LaplaceMixture { w, b1, b2 })
    }

    pub fn log_density(&self, beta: &DVector<f64>) -> f64 {
        match *self {
            Prior::Flat => 0.0,
            Prior::Gaussian { mean, scale } => beta
                .iter()
                .map(|&b| -0.5 * ((b - mean) / scale).powi(2) - scale.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
                .sum(),
            Prior::LaplaceMixture { w, b1, b2 } => beta
                .iter()
                .map(|&b| {
                    let l1 = w.ln() - (2.0 * b1).ln() - b.abs() / b1;
                    let l2 = (1.0 - w).ln() - (2.0 * b2).ln() - b.abs() / b2;
                    log_add_exp(l1, l2)
                })
                .sum(),
        }
    }

    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        match *self {
            Prior::Flat => DVector::zeros(beta.len()),
            Prior::Gaussian { mean, scale } => beta.map(|b| -(b - mean) / (scale * scale)),
            Prior::LaplaceMixture { w, b1, b2 } => beta.map(|b| {
                let l1 = w.ln() - (2.0 * b1).ln() - b.abs() / b1;
                let l2 = (1.0 - w).ln() - (2.0 * b2).ln() - b.abs() / b2;
                let m = log_add_exp(l1, l2);
                let r1 = (l1 - m).exp();
                let r2 = (l2 - m).exp();
                -b.signum() * (r1 / b1 + r2 / b2)
            }),
        }
    }

    pub fn is_log_concave(&self) -> bool {
        !matches!(self, Prior::LaplaceMixture { .. })
    }
}

pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// One draw from the two-component Laplace mixture `w·L(b1) + (1−w)·L(b2)`.
pub fn sample_laplace_mixture<R: Rng + ?Sized>(w: f64, b1: f64, b2: f64, rng: &mut R) -> f64 {
    let b = if rng.random::<f64>() < w { b1 } else { b2 };
    let e: f64 = Exp1.sample(rng);
    if rng.random::<bool>() {
        b * e
    } else {
        -b * e
    }
}

/// Draws `β` from the Laplace mixture prior and `y = Xβ + ε`, `ε ~ N(0, I)`.
pub fn sample_model_ii<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    w: f64,
    b1: f64,
    b2: f64,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(w > 0.0 && w <= 1.0) || !(b1 > 0.0 && b2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Laplace mixture needs w in (0,1] and positive scales, got w={w}, b1={b1}, b2={b2}"
        )));
    }
    let beta = DVector::from_iterator(x.ncols(), (0..x.ncols()).map(|_| sample_laplace_mixture(w, b1, b2, rng)));
    let noise = standard_normal_vector(x.nrows(), rng);
    let y = x * &beta + noise;
    Ok((beta, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_spd(k: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::<f64>::from_fn(k, k, |_, _| StandardNormal.sample(r));
        &a * a.transpose() + DMatrix::identity(k, k) * 0.5
    }

    #[test]
    fn log_mgf_trivial_points() {
        let mu = DVector::from_vec(vec![0.3, -1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_eq!(gaussian_log_mgf(&DVector::zeros(2), &mu, &cov).unwrap(), 0.0);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_relative_eq!(
            gaussian_log_mgf(&e1, &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap(),
            0.5
        );
        assert_relative_eq!(gaussian_conjugate(&e1, &DVector::zeros(2), &DMatrix::identity(2, 2)).unwrap(), 0.5);
        assert_eq!(gaussian_conjugate(&mu, &mu, &cov).unwrap(), 0.0);
        assert!(gaussian_log_mgf(&DVector::zeros(3), &mu, &cov).is_err());
    }

    #[test]
    fn log_mgf_matches_monte_carlo() {
        let mut r = rng(11);
        let cov = random_spd(3, &mut r) * 0.1;
        let mu = DVector::from_vec(vec![0.2, -0.1, 0.4]);
        let lam = DVector::from_vec(vec![0.5, -0.3, 0.2]);
        let spd = SpdMatrix::new(cov.clone()).unwrap();
        let n = 1_000_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let z = &mu + gaussian_noise(&spd, &mut r);
            let e = lam.dot(&z).exp();
            sum += e;
            sum2 += e * e;
        }
        let m = sum / n as f64;
        let se = ((sum2 / n as f64 - m * m) / n as f64).sqrt() / m;
        let exact = gaussian_log_mgf(&lam, &mu, &cov).unwrap();
        assert!((m.ln() - exact).abs() <= 3.0 * se, "mc {} exact {} se {}", m.ln(), exact, se);
    }

    #[test]
    fn conjugate_matches_numeric_sup() {
        let mut r = rng(5);
        let cov = random_spd(3, &mut r);
        let spd = SpdMatrix::new(cov.clone()).unwrap();
        let mu = DVector::from_vec(vec![1.0, 0.0, -0.5]);
        let x = DVector::from_vec(vec![0.3, 2.0, 1.0]);
        let law = GaussianLaw { mean: mu.clone(), cov: &spd };
        // gradient ascent on λᵀx − Λ(λ); step below 1/λ_max(Σ)
        let lmax = cov.clone().symmetric_eigenvalues().max();
        let mut lam = DVector::zeros(3);
        for _ in 0..20_000 {
            let g = &x - law.log_mgf_grad(&lam);
            lam += g * (1.0 / lmax);
        }
        let sup = lam.dot(&x) - law.log_mgf(&lam);
        assert!((sup - gaussian_conjugate(&x, &mu, &cov).unwrap()).abs() <= 1e-6);
    }

    #[test]
    fn model_ii_variance_and_determinism() {
        let mut r = rng(3);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_laplace_mixture(0.9, 0.1, 1.0, &mut r)).collect();
        let var = draws.iter().map(|b| b * b).sum::<f64>() / n as f64;
        assert!((var - 0.218).abs() / 0.218 <= 0.05, "var {var}");
        let single: f64 = (0..n).map(|_| sample_laplace_mixture(1.0 - 1e-12, 0.4, 0.4, &mut r).abs()).sum::<f64>() / n as f64;
        assert!((single - 0.4).abs() / 0.4 <= 0.05);

        let x = DMatrix::from_fn(20, 5, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let a = sample_model_ii(&x, 0.9, 0.1, 1.0, &mut rng(9)).unwrap();
        let b = sample_model_ii(&x, 0.9, 0.1, 1.0, &mut rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_model_ii(&x, 1.5, 0.1, 1.0, &mut rng(9)).is_err());
    }

    #[test]
    fn randomizer_covariance() {
        let mut r = rng(21);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = Randomizer::from_covariance(SpdMatrix::new(cov.clone()).unwrap());
        assert!(!g.is_coordinate_independent());
        let n = 10_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let w = g.sample(&mut r);
            acc += &w * w.transpose();
        }
        acc /= n as f64;
        for j in 0..2 {
            assert!((acc[(j, j)] - cov[(j, j)]).abs() / cov[(j, j)] <= 0.1);
        }
        assert!(Randomizer::isotropic(3, 1.0).unwrap().is_coordinate_independent());
    }

    #[test]
    fn linear_mean_jacobian() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.2, 1.0, 0.3, 0.3]);
        let m = GenerativeModel::linear_isotropic(x, 1.5).unwrap();
        assert!(m.jacobian_error(&DVector::from_vec(vec![0.4, -2.0])) < 1e-5);
        assert_relative_eq!(m.noise_scale(), 1.5);
    }

    #[test]
    fn laplace_weight_validation() {
        assert!(Prior::laplace_mixture(1.0, 0.1, 1.0).is_err());
        assert!(Prior::laplace_mixture(0.9, 0.1, 1.0).is_ok());
    }

    proptest! {
        #[test]
        fn fenchel_young(x in prop::collection::vec(-3.0f64..3.0, 3), t in prop::collection::vec(-3.0f64..3.0, 3)) {
            let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.0, -0.2, 0.1, -0.2, 0.7]);
            let spd = SpdMatrix::new(cov).unwrap();
            let law = GaussianLaw { mean: DVector::from_vec(vec![0.1, 0.2, -0.3]), cov: &spd };
            let x = DVector::from_vec(x);
            let t = DVector::from_vec(t);
            prop_assert!(law.conjugate(&x) >= t.dot(&x) - law.log_mgf(&t) - 1e-12);
            let tstar = law.conjugate_grad(&x);
            prop_assert!((law.conjugate(&x) - (tstar.dot(&x) - law.log_mgf(&tstar))).abs() < 1e-9);
        }

        #[test]
        fn prior_gradients_match_differences(b in prop::collection::vec(-4.0f64..4.0, 4)) {
            prop_assume!(b.iter().all(|v| v.abs() > 1e-3));
            let beta = DVector::from_vec(b);
            for prior in [Prior::Flat, Prior::gaussian(0.5, 1.3).unwrap(), Prior::laplace_mixture(0.9, 0.1, 1.0).unwrap()] {
                let g = prior.gradient(&beta);
                for j in 0..beta.len() {
                    let h = 1e-6;
                    let mut up = beta.clone();
                    let mut dn = beta.clone();
                    up[j] += h;
                    dn[j] -= h;
                    let fd = (prior.log_density(&up) - prior.log_density(&dn)) / (2.0 * h);
                    prop_assert!((fd - g[j]).abs() <= 1e-5 * (1.0 + fd.abs()));
                }
            }
        }
    }
}
