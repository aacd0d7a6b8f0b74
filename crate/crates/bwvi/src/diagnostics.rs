//! Quantitative evaluation of fitted approximations: SNR sweeps over K,
//! importance-sampling quality (ESS, Monte Carlo ELBO, self-normalized
//! moments), moment errors against analytic references, and a random-walk
//! Metropolis chain as an independent posterior reference.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianState;
use crate::gradients::{snr_from_replicates, snr_replicates, SnrEstimator};
use crate::math::{logsumexp, mean_and_sd, ols_slope};
use crate::targets::TargetModel;

/// SNR-versus-K study with fitted log-log slopes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnrReport {
    pub ks: Vec<usize>,
    /// `snr[i][c]`: SNR at `ks[i]`, coordinate `c`.
    pub snr: Vec<Vec<f64>>,
    /// Least-squares slope of log SNR on log K, per coordinate.
    pub slopes: Vec<f64>,
    pub slope_se: Vec<f64>,
    /// A coordinate is excluded when its estimator mean is statistically
    /// indistinguishable from zero (|mean| < 3 sd/sqrt(reps)) at every K;
    /// its SNR is then a ratio of noise terms and the fitted slope is
    /// reported but should not be interpreted.
    pub excluded: Vec<bool>,
    pub estimator: SnrEstimator,
    pub m: usize,
    pub reps: usize,
}

/// Least-squares fit of `log snr` on `log k`, per coordinate. Returns
/// (slopes, standard errors).
pub fn fit_loglog(ks: &[usize], snr: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if ks.len() != snr.len() || ks.len() < 2 {
        return Err(Error::ConfigError("need at least two K values".into()));
    }
    let dim = snr[0].len();
    let x: Vec<f64> = ks.iter().map(|k| (*k as f64).ln()).collect();
    let mut slopes = Vec::with_capacity(dim);
    let mut ses = Vec::with_capacity(dim);
    for c in 0..dim {
        let y: Vec<f64> = snr.iter().map(|row| row[c].ln()).collect();
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateVariance { coord: c });
        }
        let (slope, intercept) = ols_slope(&x, &y);
        let n = x.len() as f64;
        let ssr: f64 = x
            .iter()
            .zip(&y)
            .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
            .sum();
        let mx = x.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
        let se = if n > 2.0 { (ssr / (n - 2.0) / sxx).sqrt() } else { 0.0 };
        slopes.push(slope);
        ses.push(se);
    }
    Ok((slopes, ses))
}

/// Sweep the SNR of a gradient estimator over a grid of K values. Each K
/// draws `reps` independent realizations of the M-replicate estimator at
/// `z` (the strictly increasing `ks` each at least 2).
pub fn snr_sweep_with<R: Rng + ?Sized>(
    estimator: SnrEstimator,
    target: &dyn TargetModel,
    q: &GaussianState,
    z: &DVector<f64>,
    ks: &[usize],
    m: usize,
    reps: usize,
    rng: &mut R,
) -> Result<SnrReport> {
    if ks.windows(2).any(|w| w[0] >= w[1]) || ks.iter().any(|k| *k < 2) {
        return Err(Error::ConfigError("ks must be strictly increasing, each >= 2".into()));
    }
    let dim = q.dim();
    let mut snr_rows = Vec::with_capacity(ks.len());
    // significant[c]: some K showed a nonzero estimator mean
    let mut significant = vec![false; dim];
    for &k in ks {
        let sample = snr_replicates(estimator, target, q, z, k, m, reps, rng)?;
        for c in 0..dim {
            let vals: Vec<f64> = sample.replicates.column(c).iter().copied().collect();
            let (mean, sd) = mean_and_sd(&vals);
            if mean.abs() >= 3.0 * sd / (reps as f64).sqrt() {
                significant[c] = true;
            }
        }
        let snr = snr_from_replicates(&sample)?;
        snr_rows.push(snr.iter().copied().collect::<Vec<f64>>());
    }
    let (slopes, slope_se) = fit_loglog(ks, &snr_rows)?;
    Ok(SnrReport {
        ks: ks.to_vec(),
        snr: snr_rows,
        slopes,
        slope_se,
        excluded: significant.iter().map(|s| !s).collect(),
        estimator,
        m,
        reps,
    })
}

/// The default sweep: Wasserstein IW-ELBO gradient with M = 1 inner
/// replicates, so the K-scaling is isolated from the sqrt(M) factor.
pub fn snr_sweep<R: Rng + ?Sized>(
    target: &dyn TargetModel,
    q: &GaussianState,
    z: &DVector<f64>,
    ks: &[usize],
    reps: usize,
    rng: &mut R,
) -> Result<SnrReport> {
    snr_sweep_with(SnrEstimator::WassersteinIwElbo, target, q, z, ks, 1, reps, rng)
}

/// Effective sample size `(sum w)^2 / sum w^2` from log-weights,
/// max-shifted before exponentiation.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    if log_weights.is_empty() {
        return Err(Error::ConfigError("empty weight vector".into()));
    }
    for &lw in log_weights {
        if !lw.is_finite() {
            return Err(Error::NonFiniteWeight(lw));
        }
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for lw in log_weights {
        let w = (lw - max).exp();
        sum += w;
        sum_sq += w * w;
    }
    Ok(sum * sum / sum_sq)
}

/// Importance-sampling diagnostics of `q` against the target, from one set
/// of `m` draws: ESS, the Monte Carlo ELBO, and self-normalized moment
/// estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsDiagnostics {
    pub ess: f64,
    pub elbo_hat: f64,
    pub is_mean: DVector<f64>,
    pub is_cov: DMatrix<f64>,
    pub m: usize,
}

pub fn is_diagnostics<R: Rng + ?Sized>(
    target: &dyn TargetModel,
    q: &GaussianState,
    m: usize,
    rng: &mut R,
) -> Result<IsDiagnostics> {
    if m < 2 {
        return Err(Error::ConfigError("need at least 2 samples".into()));
    }
    let d = q.dim();
    let samples = q.sample(rng, m);
    let mut log_w = Vec::with_capacity(m);
    for r in 0..m {
        let z = samples.row(r).transpose();
        let lw = target.log_unnorm(&z) - q.log_density(&z);
        if lw.is_nan() {
            return Err(Error::NonFiniteWeight(lw));
        }
        log_w.push(lw);
    }
    let elbo_hat = log_w.iter().sum::<f64>() / m as f64;
    let ess_value = ess(&log_w)?;

    let lse = logsumexp(&log_w);
    let w_norm: Vec<f64> = log_w.iter().map(|lw| (lw - lse).exp()).collect();
    let mut mean = DVector::zeros(d);
    for r in 0..m {
        mean += w_norm[r] * samples.row(r).transpose();
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in 0..m {
        let dm = samples.row(r).transpose() - &mean;
        cov += w_norm[r] * (&dm * dm.transpose());
    }
    Ok(IsDiagnostics { ess: ess_value, elbo_hat, is_mean: mean, is_cov: cov, m })
}

/// Monte Carlo ELBO alone.
pub fn elbo_hat<R: Rng + ?Sized>(
    target: &dyn TargetModel,
    q: &GaussianState,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(is_diagnostics(target, q, m, rng)?.elbo_hat)
}

/// Self-normalized importance-sampling moments alone.
pub fn is_moments<R: Rng + ?Sized>(
    target: &dyn TargetModel,
    q: &GaussianState,
    m: usize,
    rng: &mut R,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = is_diagnostics(target, q, m, rng)?;
    Ok((d.is_mean, d.is_cov))
}

/// Mean squared entrywise errors of estimated moments against a reference.
pub fn moment_mse(
    est_mean: &DVector<f64>,
    est_cov: &DMatrix<f64>,
    ref_mean: &DVector<f64>,
    ref_cov: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    if est_mean.len() != ref_mean.len() || est_cov.shape() != ref_cov.shape() {
        return Err(Error::DimensionMismatch { expected: ref_mean.len(), got: est_mean.len() });
    }
    let d = est_mean.len() as f64;
    let mse_mean = (est_mean - ref_mean).norm_squared() / d;
    let mse_cov = (est_cov - ref_cov).norm_squared() / (d * d);
    Ok((mse_mean, mse_cov))
}

/// Random-walk Metropolis with isotropic Gaussian proposals. Returns the
/// chain (one state per row, `steps` rows) and the acceptance rate.
pub fn rwm_chain<R: Rng + ?Sized>(
    target: &dyn TargetModel,
    init: &DVector<f64>,
    steps: usize,
    proposal_sd: f64,
    rng: &mut R,
) -> (DMatrix<f64>, f64) {
    assert!(steps >= 1 && proposal_sd > 0.0);
    let d = init.len();
    let mut chain = DMatrix::zeros(steps, d);
    let mut z = init.clone();
    let mut lp = target.log_unnorm(&z);
    let mut accepted = 0usize;
    for t in 0..steps {
        let prop = &z + proposal_sd * DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let lp_prop = target.log_unnorm(&prop);
        let log_u: f64 = rng.random::<f64>().ln();
        if log_u < lp_prop - lp {
            z = prop;
            lp = lp_prop;
            accepted += 1;
        }
        chain.row_mut(t).copy_from(&z.transpose());
    }
    (chain, accepted as f64 / steps as f64)
}

/// Pilot tuning for the proposal scale, targeting 25-40% acceptance.
pub fn tune_proposal_sd<R: Rng + ?Sized>(
    target: &dyn TargetModel,
    init: &DVector<f64>,
    rng: &mut R,
) -> f64 {
    let mut sd = 1.0;
    for _ in 0..20 {
        let (_, acc) = rwm_chain(target, init, 300, sd, rng);
        if acc > 0.40 {
            sd *= 1.6;
        } else if acc < 0.25 {
            sd /= 1.6;
        } else {
            break;
        }
    }
    sd
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::substream;
    use crate::targets::{EggboxGmm, GaussianTarget};
    use approx::assert_relative_eq;

    #[test]
    fn ess_uniform_weights_is_m() {
        let lw = vec![-3.7; 250];
        assert_relative_eq!(ess(&lw).unwrap(), 250.0, max_relative = 1e-12);
    }

    #[test]
    fn ess_single_dominating_weight() {
        let mut lw = vec![0.0; 100];
        lw[17] = 1000.0;
        let e = ess(&lw).unwrap();
        assert!((e - 1.0).abs() < 1e-6, "ess {e}");
    }

    #[test]
    fn ess_hand_value() {
        // weights {1, 2}: (1+2)^2 / (1+4) = 9/5
        let lw = vec![0.0, 2.0f64.ln()];
        assert_relative_eq!(ess(&lw).unwrap(), 1.8, max_relative = 1e-12);
    }

    #[test]
    fn ess_bounds_and_shift_invariance() {
        let mut rng = substream(3, &[0]);
        for _ in 0..50 {
            let n = 2 + (rng.random::<u64>() % 64) as usize;
            let lw: Vec<f64> =
                (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 5.0).collect();
            let e = ess(&lw).unwrap();
            assert!(e >= 1.0 - 1e-12 && e <= n as f64 + 1e-9);
            let shifted: Vec<f64> = lw.iter().map(|v| v + 123.456).collect();
            assert_relative_eq!(ess(&shifted).unwrap(), e, max_relative = 1e-9);
        }
    }

    #[test]
    fn constant_weight_diagnostics() {
        let q = GaussianState::isotropic(2, 2.0).unwrap();
        let t = GaussianTarget::scaled(q.clone(), 0.5);
        let mut rng = substream(5, &[0]);
        let d = is_diagnostics(&t, &q, 5000, &mut rng).unwrap();
        assert_relative_eq!(d.elbo_hat, 0.5, max_relative = 1e-12);
        assert_relative_eq!(d.ess, 5000.0, max_relative = 1e-9);
        // moments equal plain sample moments of q: close to (mean, cov)
        assert!((d.is_mean - q.mean()).norm() < 0.1);
        assert!((d.is_cov - q.covariance()).norm() < 0.2);
    }

    #[test]
    fn is_mean_matches_mixture_moments() {
        let egg = EggboxGmm::symmetric_four(4.0);
        let q = GaussianState::isotropic(2, 25.0).unwrap();
        let mut rng = substream(7, &[0]);
        let d = is_diagnostics(&egg, &q, 1_000_000, &mut rng).unwrap();
        let (mean, cov) = egg.moments();
        // rough standard error for a self-normalized estimate with this ESS
        let se = (cov[(0, 0)] / d.ess).sqrt();
        for i in 0..2 {
            assert!(
                (d.is_mean[i] - mean[i]).abs() <= 3.0 * se,
                "coord {i}: {} vs {} (se {se})",
                d.is_mean[i],
                mean[i]
            );
        }
    }

    #[test]
    fn is_moments_invariant_to_target_scale() {
        let egg = EggboxGmm::symmetric_four(3.0);
        struct Scaled<'a>(&'a EggboxGmm, f64);
        impl TargetModel for Scaled<'_> {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn log_unnorm(&self, z: &DVector<f64>) -> f64 {
                self.0.log_unnorm(z) + self.1
            }
            fn grad_log_unnorm(&self, z: &DVector<f64>) -> DVector<f64> {
                self.0.grad_log_unnorm(z)
            }
        }
        let q = GaussianState::isotropic(2, 16.0).unwrap();
        let a = is_moments(&egg, &q, 20_000, &mut substream(9, &[1])).unwrap();
        let b = is_moments(&Scaled(&egg, 7.3), &q, 20_000, &mut substream(9, &[1])).unwrap();
        assert!((a.0 - b.0).norm() < 1e-10);
        assert!((a.1 - b.1).norm() < 1e-9);
    }

    #[test]
    fn elbo_hat_below_log_normalizer() {
        let t = GaussianTarget::new(GaussianState::standard(2));
        let q = GaussianState::isotropic(2, 3.0).unwrap();
        let mut rng = substream(11, &[0]);
        let m = 20_000;
        let samples: Vec<f64> = {
            let d = is_diagnostics(&t, &q, m, &mut rng).unwrap();
            vec![d.elbo_hat]
        };
        // Jensen: elbo_hat estimates ELBO(q) <= log Z = 0
        assert!(samples[0] < 0.0);
    }

    #[test]
    fn moment_mse_basic() {
        let m0 = DVector::from_vec(vec![1.0, 2.0]);
        let c0 = DMatrix::identity(2, 2);
        let (a, b) = moment_mse(&m0, &c0, &m0, &c0).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(b, 0.0);
        let m1 = DVector::from_vec(vec![2.0, 3.0]);
        let (a, _) = moment_mse(&m1, &c0, &m0, &c0).unwrap();
        assert_relative_eq!(a, 1.0, max_relative = 1e-14);
        assert!(moment_mse(&m0, &c0, &DVector::zeros(3), &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn slope_fit_exact_power_laws() {
        let ks = vec![10usize, 31, 100, 316, 1000];
        let sqrt_law: Vec<Vec<f64>> = ks.iter().map(|k| vec![(*k as f64).sqrt()]).collect();
        let (slopes, _) = fit_loglog(&ks, &sqrt_law).unwrap();
        assert!((slopes[0] - 0.5).abs() < 1e-6, "slope {}", slopes[0]);
        let flat: Vec<Vec<f64>> = ks.iter().map(|_| vec![2.5]).collect();
        let (slopes, _) = fit_loglog(&ks, &flat).unwrap();
        assert!(slopes[0].abs() < 1e-6);
    }

    #[test]
    fn sweep_input_validation() {
        let t = GaussianTarget::new(GaussianState::standard(2));
        let q = GaussianState::standard(2);
        let z = DVector::from_vec(vec![1.0, 1.0]);
        let mut rng = substream(1, &[0]);
        assert!(snr_sweep(&t, &q, &z, &[4, 4], 10, &mut rng).is_err());
        assert!(snr_sweep(&t, &q, &z, &[1, 4], 10, &mut rng).is_err());
    }

    #[test]
    fn rwm_recovers_standard_normal() {
        let t = GaussianTarget::new(GaussianState::standard(1));
        let mut rng = substream(13, &[0]);
        let init = DVector::zeros(1);
        let sd = tune_proposal_sd(&t, &init, &mut rng);
        let (chain, acc) = rwm_chain(&t, &init, 200_000, sd, &mut rng);
        assert!(acc > 0.2 && acc < 0.6, "acceptance {acc}");
        let xs: Vec<f64> = chain.column(0).iter().copied().collect();
        let (mean, sdev) = mean_and_sd(&xs);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((sdev * sdev - 1.0).abs() < 0.1, "var {}", sdev * sdev);
    }

    #[test]
    fn rwm_tiny_proposals_accept_everything() {
        let t = GaussianTarget::new(GaussianState::standard(2));
        let mut rng = substream(15, &[0]);
        let (_, acc) = rwm_chain(&t, &DVector::zeros(2), 2000, 1e-8, &mut rng);
        assert!(acc > 0.99, "acceptance {acc}");
    }

    #[test]
    fn rwm_is_seed_deterministic() {
        let t = GaussianTarget::new(GaussianState::standard(2));
        let (a, _) = rwm_chain(&t, &DVector::zeros(2), 500, 1.0, &mut substream(17, &[0]));
        let (b, _) = rwm_chain(&t, &DVector::zeros(2), 500, 1.0, &mut substream(17, &[0]));
        assert_eq!(a, b);
    }
}
