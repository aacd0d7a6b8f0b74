//! Full-covariance Gaussian state and Bures-Wasserstein geometry.
//!
//! [`GaussianState`] is the variational distribution `q = N(m, Sigma)`. It is
//! immutable after construction and caches the lower Cholesky factor of the
//! covariance (for sampling and log-densities) along with the precision
//! matrix and log-determinant. [`GaussianState::retract`] is the manifold
//! update used by the optimizer,
//!
//! ```text
//! m'     = m - eta * a
//! Sigma' = (I - eta*S) Sigma (I - eta*S)
//! ```
//!
//! which keeps the covariance symmetric positive definite whenever
//! `||eta*S||_2 < 1`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, LN_2PI};

/// Relative tolerance for the symmetry check at construction.
const SYMMETRY_RTOL: f64 = 1e-12;

/// A non-degenerate Gaussian distribution with full covariance.
#[derive(Debug, Clone)]
pub struct GaussianState {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    logdet: f64,
}

/// A tangent vector `x -> a + S (x - m)` on the Bures-Wasserstein manifold:
/// a translation part `a` and a symmetric linear part `s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangentVector {
    pub a: DVector<f64>,
    pub s: DMatrix<f64>,
}

impl TangentVector {
    pub fn new(a: DVector<f64>, s: DMatrix<f64>) -> Result<Self> {
        if s.nrows() != a.len() || s.ncols() != a.len() {
            return Err(Error::DimensionMismatch { expected: a.len(), got: s.nrows() });
        }
        let scale = s.iter().fold(0.0f64, |acc, &x| acc.max(x.abs())).max(1.0);
        for i in 0..s.nrows() {
            for j in (i + 1)..s.ncols() {
                if (s[(i, j)] - s[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::NotPositiveDefinite(format!(
                        "tangent S is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { a, s })
    }

    pub fn zero(dim: usize) -> Self {
        Self { a: DVector::zeros(dim), s: DMatrix::zeros(dim, dim) }
    }
}

impl GaussianState {
    /// Construct from mean and covariance; validates symmetry and positive
    /// definiteness (via the Cholesky factorization).
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if covariance.nrows() != dim || covariance.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: covariance.nrows() });
        }
        let scale = covariance.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()));
        for i in 0..dim {
            for j in (i + 1)..dim {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > SYMMETRY_RTOL * scale {
                    return Err(Error::NotPositiveDefinite(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let chol = Cholesky::new(covariance.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky failed".into()))?;
        let precision = chol.inverse();
        let l = chol.unpack();
        let logdet = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self { mean, covariance, chol: l, precision, logdet })
    }

    pub fn standard(dim: usize) -> Self {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim)).unwrap()
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::new(DVector::zeros(dim), DMatrix::identity(dim, dim) * variance)
    }

    pub fn diagonal(mean: DVector<f64>, variances: &DVector<f64>) -> Result<Self> {
        let cov = DMatrix::from_diagonal(variances);
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower-triangular Cholesky factor of the covariance.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn logdet_covariance(&self) -> f64 {
        self.logdet
    }

    /// Map standard-normal noise rows through `z = m + L eps`.
    pub fn push_noise(&self, eps: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(eps.ncols(), self.dim());
        let mut out = eps * self.chol.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }

    /// Draw `n` i.i.d. samples, one per row.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> DMatrix<f64> {
        let d = self.dim();
        let eps = DMatrix::from_fn(n, d, |_, _| rng.sample(StandardNormal));
        self.push_noise(&eps)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        let eps = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
        &self.mean + &self.chol * eps
    }

    /// Log density at `z`, computed through the Cholesky factor; no explicit
    /// inverse is formed.
    pub fn log_density(&self, z: &DVector<f64>) -> f64 {
        let diff = z - &self.mean;
        let y = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("cached Cholesky factor has positive diagonal");
        -0.5 * y.norm_squared() - 0.5 * self.logdet - 0.5 * self.dim() as f64 * LN_2PI
    }

    /// `-Sigma^{-1} (z - m)`
    pub fn grad_log_density(&self, z: &DVector<f64>) -> DVector<f64> {
        -(&self.precision * (z - &self.mean))
    }

    /// `-Sigma^{-1}`, constant in `z`.
    pub fn hess_log_density(&self) -> DMatrix<f64> {
        -self.precision.clone()
    }

    /// Step-size clip keeping `I - eta*S` invertible: whenever
    /// `eta * ||S||_2 >= 1`, shrink to `0.9 / ||S||_2`.
    pub fn clip_step(eta: f64, s: &DMatrix<f64>) -> f64 {
        let norm = math::spectral_norm_sym(s);
        if eta * norm >= 1.0 {
            0.9 / norm
        } else {
            eta
        }
    }

    /// Bures-Wasserstein retraction: the caller is responsible for `eta`
    /// small enough (see [`GaussianState::clip_step`]).
    pub fn retract(&self, grad: &TangentVector, eta: f64) -> Result<GaussianState> {
        let d = self.dim();
        if grad.a.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: grad.a.len() });
        }
        let mean = &self.mean - eta * &grad.a;
        let a_mat = DMatrix::<f64>::identity(d, d) - eta * &grad.s;
        let cov = math::symmetrize(&(&a_mat * &self.covariance * &a_mat));
        GaussianState::new(mean, cov).map_err(|_| Error::StepTooLarge { eta })
    }

    /// 2-Wasserstein distance between two Gaussians.
    pub fn bw_distance(&self, other: &GaussianState) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let dm = (&self.mean - &other.mean).norm_squared();
        let s2_half = math::sqrtm_psd(&other.covariance);
        let inner = math::symmetrize(&(&s2_half * &self.covariance * &s2_half));
        let cross = math::sqrtm_psd(&inner);
        let tr = self.covariance.trace() + other.covariance.trace() - 2.0 * cross.trace();
        Ok((dm + tr.max(0.0)).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::substream;
    use approx::assert_relative_eq;

    fn toy_state() -> GaussianState {
        GaussianState::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn rejects_asymmetric_covariance() {
        let r = GaussianState::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]),
        );
        assert!(r.is_err());
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let r = GaussianState::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        );
        assert!(matches!(r, Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn chol_reconstructs_covariance() {
        let s = toy_state();
        let rec = s.chol() * s.chol().transpose();
        let err = (&rec - s.covariance()).norm();
        assert!(err <= 1e-10 * s.covariance().norm());
        for i in 0..2 {
            assert!(s.chol()[(i, i)] > 0.0);
        }
    }

    #[test]
    fn log_density_standard_normal_at_zero() {
        let s = GaussianState::standard(1);
        assert_relative_eq!(
            s.log_density(&DVector::from_vec(vec![0.0])),
            -0.918_938_533_204_672_7,
            max_relative = 1e-14
        );
    }

    #[test]
    fn log_density_at_mean_drops_quadratic() {
        let s = toy_state();
        let expected = -0.5 * s.logdet_covariance() - (2.0 / 2.0) * LN_2PI;
        assert_relative_eq!(s.log_density(s.mean()), expected, max_relative = 1e-13);
    }

    #[test]
    fn log_density_diagonal_hand_value() {
        // N(0, diag(4,1)) at (2, 0): -1/2 - (1/2) ln 4 - ln 2pi
        let s = GaussianState::diagonal(DVector::zeros(2), &DVector::from_vec(vec![4.0, 1.0]))
            .unwrap();
        let expected = -0.5 - 0.5 * 4.0f64.ln() - LN_2PI;
        assert_relative_eq!(
            s.log_density(&DVector::from_vec(vec![2.0, 0.0])),
            expected,
            max_relative = 1e-13
        );
    }

    #[test]
    fn grad_log_density_matches_closed_forms() {
        let s = toy_state();
        assert!(s.grad_log_density(s.mean()).norm() == 0.0);

        let iso = GaussianState::standard(3);
        let ones = DVector::from_element(3, 1.0);
        assert_relative_eq!((iso.grad_log_density(&ones) + ones).norm(), 0.0, epsilon = 1e-14);

        let diag =
            GaussianState::diagonal(DVector::zeros(2), &DVector::from_vec(vec![4.0, 1.0])).unwrap();
        let g = diag.grad_log_density(&DVector::from_vec(vec![2.0, 2.0]));
        assert_relative_eq!(g[0], -0.5, max_relative = 1e-13);
        assert_relative_eq!(g[1], -2.0, max_relative = 1e-13);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let s = toy_state();
        let z = DVector::from_vec(vec![0.4, -1.1]);
        let g = s.grad_log_density(&z);
        let h = 1e-6;
        for i in 0..2 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (s.log_density(&zp) - s.log_density(&zm)) / (2.0 * h);
            assert_relative_eq!(g[i], fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn sampling_mean_and_variance() {
        let mut rng = substream(7, &[0]);
        let s = GaussianState::diagonal(DVector::zeros(2), &DVector::from_vec(vec![100.0, 1.0]))
            .unwrap();
        let n = 100_000;
        let x = s.sample(&mut rng, n);
        for (j, want) in [100.0f64, 1.0].into_iter().enumerate() {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            let (m, sd) = crate::math::mean_and_sd(&col);
            assert!(m.abs() < 0.02 * want.sqrt() * 3.3, "mean off: {m}");
            assert!((sd * sd - want).abs() < 0.03 * want, "var off: {}", sd * sd);
        }
    }

    #[test]
    fn zero_noise_returns_mean() {
        let s = toy_state();
        let eps = DMatrix::zeros(3, 2);
        let z = s.push_noise(&eps);
        for r in 0..3 {
            assert_eq!(z[(r, 0)].to_bits(), s.mean()[0].to_bits());
            assert_eq!(z[(r, 1)].to_bits(), s.mean()[1].to_bits());
        }
    }

    #[test]
    fn sampling_is_deterministic_under_fixed_stream() {
        let s = toy_state();
        let a = s.sample(&mut substream(3, &[1]), 50);
        let b = s.sample(&mut substream(3, &[1]), 50);
        assert_eq!(a, b);
    }

    #[test]
    fn retract_zero_step_is_identity_bitwise() {
        let s = toy_state();
        let grad = TangentVector::new(
            DVector::from_vec(vec![0.7, -0.2]),
            DMatrix::from_row_slice(2, 2, &[0.1, 0.05, 0.05, -0.2]),
        )
        .unwrap();
        let s2 = s.retract(&grad, 0.0).unwrap();
        assert_eq!(s2.mean()[0].to_bits(), s.mean()[0].to_bits());
        assert_eq!(s2.covariance()[(0, 1)].to_bits(), s.covariance()[(0, 1)].to_bits());
    }

    #[test]
    fn retract_pure_translation() {
        let s = toy_state();
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let grad = TangentVector::new(v.clone(), DMatrix::zeros(2, 2)).unwrap();
        let s2 = s.retract(&grad, 0.25).unwrap();
        assert_relative_eq!((s2.mean() - (s.mean() - 0.25 * v)).norm(), 0.0, epsilon = 1e-14);
        assert_relative_eq!((s2.covariance() - s.covariance()).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn retract_isotropic_shrink() {
        // Sigma = I, S = I, eta = 0.5 -> Sigma' = 0.25 I
        let s = GaussianState::standard(2);
        let grad = TangentVector::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let s2 = s.retract(&grad, 0.5).unwrap();
        assert_relative_eq!(s2.covariance()[(0, 0)], 0.25, max_relative = 1e-14);
        assert_relative_eq!(s2.covariance()[(1, 1)], 0.25, max_relative = 1e-14);
    }

    #[test]
    fn retract_first_order_matches_curve() {
        // (Sigma_eta - Sigma)/eta -> -(S Sigma + Sigma S) as eta -> 0
        let s = toy_state();
        let sm = DMatrix::from_row_slice(2, 2, &[0.2, -0.1, -0.1, 0.3]);
        let grad = TangentVector::new(DVector::zeros(2), sm.clone()).unwrap();
        let eta = 1e-6;
        let s2 = s.retract(&grad, eta).unwrap();
        let fd = (s2.covariance() - s.covariance()) / eta;
        let expected = -(&sm * s.covariance() + s.covariance() * &sm);
        assert!((fd - expected).norm() < 1e-5);
    }

    #[test]
    fn retract_too_large_step_errors() {
        let s = GaussianState::standard(2);
        let grad = TangentVector::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        assert!(matches!(s.retract(&grad, 1.0), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn clip_step_bounds_spectral_radius() {
        let sm = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, -1.0]);
        let eta = GaussianState::clip_step(0.5, &sm);
        assert_relative_eq!(eta, 0.9 / 4.0, max_relative = 1e-12);
        assert_relative_eq!(GaussianState::clip_step(0.1, &sm), 0.1, max_relative = 1e-15);
    }

    #[test]
    fn bw_distance_cases() {
        let s = toy_state();
        assert_relative_eq!(s.bw_distance(&s).unwrap(), 0.0, epsilon = 1e-7);

        let a = GaussianState::standard(2);
        let b = GaussianState::new(DVector::from_vec(vec![3.0, 4.0]), DMatrix::identity(2, 2))
            .unwrap();
        assert_relative_eq!(a.bw_distance(&b).unwrap(), 5.0, max_relative = 1e-10);

        // dim 1: |sigma1 - sigma2|
        let c = GaussianState::isotropic(1, 1.0).unwrap();
        let d = GaussianState::isotropic(1, 4.0).unwrap();
        assert_relative_eq!(c.bw_distance(&d).unwrap(), 1.0, max_relative = 1e-10);
    }

    #[test]
    fn log_density_integrates_to_one_self_sampling() {
        // E_q[exp(log q)/q] = 1 trivially; the informative check: importance
        // weights of q against a wider Gaussian integrate to 1.
        let q = toy_state();
        let wide = GaussianState::new(q.mean().clone(), q.covariance() * 2.5).unwrap();
        let mut rng = substream(11, &[4]);
        let n = 200_000;
        let x = wide.sample(&mut rng, n);
        let mut ws = Vec::with_capacity(n);
        for r in 0..n {
            let z = DVector::from_iterator(2, x.row(r).iter().copied());
            ws.push((q.log_density(&z) - wide.log_density(&z)).exp());
        }
        let (m, sd) = crate::math::mean_and_sd(&ws);
        let se = sd / (n as f64).sqrt();
        assert!((m - 1.0).abs() <= 3.0 * se, "mean {m}, se {se}");
    }
}
