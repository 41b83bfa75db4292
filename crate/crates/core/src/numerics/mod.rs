//! Special functions and positive-definite matrix algebra.

mod linalg;
mod special;

pub use linalg::{cholesky, cholesky_with_jitter, log_det, mahalanobis_sq, CholeskyFactor, PsdMatrix};
pub use special::{digamma, log_gamma, multivariate_log_gamma};

pub(crate) use special::{digamma_unchecked, log_gamma_unchecked, multivariate_digamma};

/// ln Σ exp(v_i), with the maximum subtracted first. Returns −∞ for an
/// empty slice or when every entry is −∞.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
