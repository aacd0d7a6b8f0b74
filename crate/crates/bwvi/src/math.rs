//! Small numeric helpers shared across modules.

use nalgebra::{DMatrix, DVector};

pub const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// Numerically stable log(sum(exp(x))).
///
/// The shifted exponentials are summed in sorted order, so the result is
/// invariant to permutations of the input (bit for bit), which the weight
/// machinery relies on.
pub fn logsumexp(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // all -inf, or a NaN slipped through
        return max;
    }
    let mut shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    shifted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let sum: f64 = shifted.iter().sum();
    max + sum.ln()
}

/// log((1/n) * sum(exp(x))), grouped so that constant inputs come back exactly.
pub fn logmeanexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mut shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    shifted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let sum: f64 = shifted.iter().sum();
    max + (sum.ln() - (values.len() as f64).ln())
}

/// Mean and sample standard deviation (n-1 denominator; 0 for n < 2).
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// (A + A^T) / 2
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    let n = a.nrows();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)]);
        }
    }
    out
}

/// Spectral norm of a symmetric matrix (largest |eigenvalue|).
pub fn spectral_norm_sym(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &l| acc.max(l.abs()))
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues slightly
/// below zero from roundoff are clamped to zero.
pub fn sqrtm_psd(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Ordinary least squares slope (and intercept) of y on x.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Stable log(sigmoid(u)).
pub fn log_sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        -(-u).exp().ln_1p()
    } else {
        u - u.exp().ln_1p()
    }
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// softplus and its inverse, used for positivity bijections.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Maximum absolute entry of a vector.
pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn logsumexp_handles_huge_spread() {
        let v = vec![-1.0e4, 0.0, 1.0e4];
        let r = logsumexp(&v);
        assert!(r.is_finite());
        assert_relative_eq!(r, 1.0e4, max_relative = 1e-12);
    }

    #[test]
    fn logsumexp_permutation_invariant_bitwise() {
        let v = vec![0.3, -2.0, 1.7, 0.3, -50.0];
        let mut w = v.clone();
        w.reverse();
        assert_eq!(logsumexp(&v).to_bits(), logsumexp(&w).to_bits());
    }

    #[test]
    fn logmeanexp_constant_input_exact() {
        let c = -1.234_567_890_123;
        for k in [1usize, 2, 7, 64] {
            let v = vec![c; k];
            assert_eq!(logmeanexp(&v).to_bits(), c.to_bits());
        }
    }

    #[test]
    fn log_sigmoid_no_overflow() {
        assert!(log_sigmoid(-1.0e4).is_finite() || log_sigmoid(-1.0e4) == -1.0e4);
        assert_relative_eq!(log_sigmoid(1.0e4), 0.0, epsilon = 1e-12);
        assert_relative_eq!(log_sigmoid(0.0), -(2.0f64.ln()), max_relative = 1e-15);
    }

    #[test]
    fn softplus_roundtrip() {
        for y in [1e-6, 0.1, 1.0, 5.0, 40.0] {
            assert_relative_eq!(softplus(softplus_inv(y)), y, max_relative = 1e-10);
        }
    }

    #[test]
    fn ols_exact_on_line() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (slope, intercept) = ols_slope(&x, &y);
        assert_relative_eq!(slope, 2.5, max_relative = 1e-14);
        assert_relative_eq!(intercept, -1.0, max_relative = 1e-12);
    }
}
