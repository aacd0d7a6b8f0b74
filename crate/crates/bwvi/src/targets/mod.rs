//! Unnormalized target log-densities `log p(x, z)` with analytic gradients
//! and (where available) Hessians.
//!
//! Every target exposes only its *unnormalized* log-density to the
//! inference machinery. Targets whose normalizer happens to be known
//! (Gaussians, mixtures of Gaussians, the banana warp) report it behind
//! [`TargetModel::log_normalizer`] so tests can check bound gaps; the
//! algorithms never read it.

mod dataset;

pub use dataset::{load_dataset, standardize, DatasetConfig, Pca};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianState;
use crate::math::{log_sigmoid, logsumexp, sigmoid};

/// An unnormalized target density over `R^dim`.
pub trait TargetModel: Send + Sync {
    fn dim(&self) -> usize;

    /// `log p(x, z)` up to an additive constant.
    fn log_unnorm(&self, z: &DVector<f64>) -> f64;

    fn grad_log_unnorm(&self, z: &DVector<f64>) -> DVector<f64>;

    fn has_hessian(&self) -> bool {
        false
    }

    fn hess_log_unnorm(&self, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    fn has_log_normalizer(&self) -> bool {
        false
    }

    /// `log Z` such that `p(z) = exp(log_unnorm(z) - log Z)` is normalized.
    fn log_normalizer(&self) -> Option<f64> {
        None
    }
}

/// A Gaussian target, optionally scaled by a known constant: the density is
/// `exp(log_scale) * N(z; m, Sigma)`. Useful both as a benchmark with a known
/// optimum and for the constant-weight edge cases (`target = c * q`).
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    state: GaussianState,
    log_scale: f64,
}

impl GaussianTarget {
    pub fn new(state: GaussianState) -> Self {
        Self { state, log_scale: 0.0 }
    }

    /// `c * N(m, Sigma)` with `c = exp(log_scale)`.
    pub fn scaled(state: GaussianState, log_scale: f64) -> Self {
        Self { state, log_scale }
    }

    pub fn state(&self) -> &GaussianState {
        &self.state
    }
}

impl TargetModel for GaussianTarget {
    fn dim(&self) -> usize {
        self.state.dim()
    }

    fn log_unnorm(&self, z: &DVector<f64>) -> f64 {
        self.state.log_density(z) + self.log_scale
    }

    fn grad_log_unnorm(&self, z: &DVector<f64>) -> DVector<f64> {
        self.state.grad_log_density(z)
    }

    fn has_hessian(&self) -> bool {
        true
    }

    fn hess_log_unnorm(&self, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.state.hess_log_density())
    }

    fn has_log_normalizer(&self) -> bool {
        true
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(self.log_scale)
    }
}

/// One component of a Gaussian mixture.
#[derive(Debug, Clone)]
struct MixtureComponent {
    log_weight: f64,
    state: GaussianState,
}

/// Equally- or unequally-weighted Gaussian mixture; the multimodal "eggbox"
/// benchmark is the symmetric four-component instance.
#[derive(Debug, Clone)]
pub struct EggboxGmm {
    components: Vec<MixtureComponent>,
    dim: usize,
}

impl EggboxGmm {
    pub fn new(parts: Vec<(f64, DVector<f64>, DMatrix<f64>)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::ConfigError("mixture needs at least one component".into()));
        }
        let dim = parts[0].1.len();
        let total: f64 = parts.iter().map(|(w, _, _)| *w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::ConfigError(format!("mixture weights sum to {total}, not 1")));
        }
        let mut components = Vec::with_capacity(parts.len());
        for (w, mu, cov) in parts {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::ConfigError(format!("weight {w} outside (0, 1]")));
            }
            if mu.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: mu.len() });
            }
            components.push(MixtureComponent { log_weight: w.ln(), state: GaussianState::new(mu, cov)? });
        }
        Ok(Self { components, dim })
    }

    /// The standard benchmark: four equally-weighted unit-covariance
    /// components at `(+-spread, +-spread)` in 2-D.
    pub fn symmetric_four(spread: f64) -> Self {
        let mut parts = Vec::new();
        for sx in [1.0, -1.0] {
            for sy in [1.0, -1.0] {
                parts.push((
                    0.25,
                    DVector::from_vec(vec![sx * spread, sy * spread]),
                    DMatrix::identity(2, 2),
                ));
            }
        }
        Self::new(parts).unwrap()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Per-component posterior responsibilities and their common logsumexp.
    fn responsibilities(&self, z: &DVector<f64>) -> (Vec<f64>, f64) {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.log_weight + c.state.log_density(z))
            .collect();
        let lse = logsumexp(&logs);
        let resp = logs.iter().map(|l| (l - lse).exp()).collect();
        (resp, lse)
    }

    /// Exact mean and covariance of the mixture.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let mut mean = DVector::zeros(d);
        for c in &self.components {
            mean += c.log_weight.exp() * c.state.mean();
        }
        let mut cov = DMatrix::zeros(d, d);
        for c in &self.components {
            let w = c.log_weight.exp();
            let dm = c.state.mean() - &mean;
            cov += w * (c.state.covariance() + dm.clone() * dm.transpose());
        }
        (mean, cov)
    }
}

impl TargetModel for EggboxGmm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_unnorm(&self, z: &DVector<f64>) -> f64 {
        let logs: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.log_weight + c.state.log_density(z))
            .collect();
        logsumexp(&logs)
    }

    fn grad_log_unnorm(&self, z: &DVector<f64>) -> DVector<f64> {
        let (resp, _) = self.responsibilities(z);
        let mut g = DVector::zeros(self.dim);
        for (r, c) in resp.iter().zip(&self.components) {
            g += *r * c.state.grad_log_density(z);
        }
        g
    }

    fn has_hessian(&self) -> bool {
        true
    }

    /// Mixture Hessian via responsibilities:
    /// `H = sum_k r_k (H_k + g_k g_k^T) - g g^T`.
    fn hess_log_unnorm(&self, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (resp, _) = self.responsibilities(z);
        let mut h = DMatrix::zeros(self.dim, self.dim);
        let mut g = DVector::zeros(self.dim);
        for (r, c) in resp.iter().zip(&self.components) {
            let gk = c.state.grad_log_density(z);
            h += *r * (c.state.hess_log_density() + &gk * gk.transpose());
            g += *r * gk;
        }
        h -= &g * g.transpose();
        Some(h)
    }

    fn has_log_normalizer(&self) -> bool {
        true
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// The banana-shaped warp of a Gaussian: density `base(phi(z))` with
/// `phi(z) = (z1, z2 + b z1^2 - 100 b, z3, ...)`. The warp is
/// volume-preserving, so no Jacobian correction appears and the density
/// stays normalized.
#[derive(Debug, Clone)]
pub struct BananaTarget {
    base: GaussianState,
    curvature: f64,
}

impl BananaTarget {
    /// Standard construction: base covariance `diag(100, 1, ..., 1)`.
    pub fn new(dim: usize, curvature: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: dim });
        }
        let mut vars = DVector::from_element(dim, 1.0);
        vars[0] = 100.0;
        let base = GaussianState::diagonal(DVector::zeros(dim), &vars)?;
        Ok(Self { base, curvature })
    }

    pub fn with_base(base: GaussianState, curvature: f64) -> Self {
        Self { base, curvature }
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    fn warp(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut y = z.clone();
        y[1] = z[1] + self.curvature * z[0] * z[0] - 100.0 * self.curvature;
        y
    }
}

impl TargetModel for BananaTarget {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn log_unnorm(&self, z: &DVector<f64>) -> f64 {
        self.base.log_density(&self.warp(z))
    }

    fn grad_log_unnorm(&self, z: &DVector<f64>) -> DVector<f64> {
        // J_phi^T grad: J is the identity except J[1][0] = 2 b z1.
        let g = self.base.grad_log_density(&self.warp(z));
        let mut out = g.clone();
        out[0] = g[0] + 2.0 * self.curvature * z[0] * g[1];
        out
    }

    fn has_hessian(&self) -> bool {
        true
    }

    fn hess_log_unnorm(&self, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        let d = self.dim();
        let y = self.warp(z);
        let g = self.base.grad_log_density(&y);
        let hb = self.base.hess_log_density();
        let mut j = DMatrix::identity(d, d);
        j[(1, 0)] = 2.0 * self.curvature * z[0];
        let mut h = j.transpose() * hb * &j;
        // curvature term from d^2 phi_2 / d z1^2 = 2b
        h[(0, 0)] += 2.0 * self.curvature * g[1];
        Some(h)
    }

    fn has_log_normalizer(&self) -> bool {
        true
    }

    fn log_normalizer(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Bayesian logistic regression posterior with an isotropic Gaussian prior
/// `theta ~ N(0, prior_var * I)`.
#[derive(Debug, Clone)]
pub struct LogisticPosterior {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    prior_var: f64,
}

impl LogisticPosterior {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>, prior_var: f64) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::ParseError("labels must be 0 or 1".into()));
        }
        if prior_var <= 0.0 {
            return Err(Error::ConfigError("prior variance must be positive".into()));
        }
        Ok(Self { features, labels, prior_var })
    }

    pub fn n_observations(&self) -> usize {
        self.features.nrows()
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    /// Posterior mode by Newton's method; the log-posterior is strictly
    /// concave, so this converges from any start.
    pub fn newton_mode(&self, max_iters: usize) -> DVector<f64> {
        let d = self.dim();
        let mut theta = DVector::zeros(d);
        for _ in 0..max_iters {
            let g = self.grad_log_unnorm(&theta);
            let h = self.hess_log_unnorm(&theta).unwrap();
            let step = h.lu().solve(&g).expect("negative definite Hessian");
            theta -= &step;
            if step.norm() < 1e-12 {
                break;
            }
        }
        theta
    }
}

impl TargetModel for LogisticPosterior {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn log_unnorm(&self, theta: &DVector<f64>) -> f64 {
        assert_eq!(theta.len(), self.dim(), "coefficient dimension mismatch");
        let u = &self.features * theta;
        let mut ll = 0.0;
        for (ui, yi) in u.iter().zip(self.labels.iter()) {
            // y log sigma(u) + (1-y) log sigma(-u), branch-split for stability
            ll += yi * log_sigmoid(*ui) + (1.0 - yi) * log_sigmoid(-ui);
        }
        ll - theta.norm_squared() / (2.0 * self.prior_var)
    }

    fn grad_log_unnorm(&self, theta: &DVector<f64>) -> DVector<f64> {
        let u = &self.features * theta;
        let resid = DVector::from_iterator(
            u.len(),
            u.iter().zip(self.labels.iter()).map(|(ui, yi)| yi - sigmoid(*ui)),
        );
        self.features.transpose() * resid - theta / self.prior_var
    }

    fn has_hessian(&self) -> bool {
        true
    }

    fn hess_log_unnorm(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let d = self.dim();
        let u = &self.features * theta;
        let mut weighted = self.features.clone();
        for (i, ui) in u.iter().enumerate() {
            let s = sigmoid(*ui);
            let w = s * (1.0 - s);
            weighted.row_mut(i).scale_mut(w);
        }
        let mut h = -(self.features.transpose() * weighted);
        for i in 0..d {
            h[(i, i)] -= 1.0 / self.prior_var;
        }
        Some(crate::math::symmetrize(&h))
    }
}

/// Synthetic logistic-regression posterior: i.i.d. standard-normal features,
/// Bernoulli labels through the true coefficients, prior variance 10.
pub fn synth_logistic<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    rng: &mut R,
    true_theta: &DVector<f64>,
) -> LogisticPosterior {
    use rand_distr::StandardNormal;
    assert!(n >= 1 && d >= 1);
    assert_eq!(true_theta.len(), d);
    let features = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut labels = DVector::zeros(n);
    for i in 0..n {
        let p = sigmoid(features.row(i).transpose().dot(true_theta));
        labels[i] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
    }
    LogisticPosterior::new(features, labels, 10.0).unwrap()
}
