//! Random-effects eigenvector spatial filtering with spatially varying
//! coefficients.
//!
//! Each varying coefficient is `beta_k * 1 + E * gamma_k` with
//! `gamma_k ~ N(0, sigma_k^2 * Lambda(alpha_k))`. The variance ratio
//! `tau_k = sigma_k^2 / sigma^2` and smoothness `alpha_k` are estimated by
//! maximizing the restricted log-likelihood, which only involves matrices of
//! size `K + L * K`.

mod fit;
mod mixed;

pub use fit::{
    evaluate_fixed, fit_reesf_svc, svc_inference, ReesfSpec, ReesfSvcFit, SvcInference,
    ALPHA_MAX, LOG_TAU_FLOOR,
};
pub use mixed::{
    design_expansion, restricted_loglik, solve_mixed, ExpandedDesign, MixedProblem,
    MixedSolution,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the smoothness parameters are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// All `(tau_k, alpha_k)` jointly.
    Full,
    /// `tau_k` with every `alpha_k = 1`, then `alpha_k` with `tau_k` held.
    A1,
    /// One `alpha` shared by all coefficients.
    A2,
}

/// Variance ratio and smoothness of one varying coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefSmooth {
    pub tau: f64,
    pub alpha: f64,
}

/// `Theta`: one entry per design column, `None` for constant coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothParams {
    pub coefs: Vec<Option<CoefSmooth>>,
    pub mode: FitMode,
}

impl SmoothParams {
    pub fn validate(&self) -> Result<()> {
        for c in self.coefs.iter().flatten() {
            if !(c.tau >= 0.0 && c.tau.is_finite()) {
                return Err(Error::InvalidInput(format!("variance ratio must be >= 0, got {}", c.tau)));
            }
            if !(c.alpha >= 0.0 && c.alpha.is_finite()) {
                return Err(Error::InvalidSmoothness(c.alpha));
            }
        }
        Ok(())
    }

    pub fn n_varying(&self) -> usize {
        self.coefs.iter().filter(|c| c.is_some()).count()
    }
}

/// `lambda_l(alpha) = (sum lambda / sum lambda^alpha) * lambda_l^alpha`.
///
/// Powers are taken of `lambda_l / lambda_1` so large `alpha` does not
/// overflow; the ratio cancels in the normalization.
pub fn lambda_weights(lambda: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidSmoothness(alpha));
    }
    if lambda.is_empty() || lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput("eigenvalues must be positive".into()));
    }
    let total: f64 = lambda.iter().sum();
    let top = lambda.iter().cloned().fold(f64::MIN, f64::max);
    let powered: Vec<f64> = lambda.iter().map(|l| (l / top).powf(alpha)).collect();
    let norm: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|p| total * p / norm).collect())
}
