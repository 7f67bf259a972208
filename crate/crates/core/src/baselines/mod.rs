//! Expectation-maximisation reference fits: diagonal Gaussian mixtures and Poisson HMMs.

mod gmm;
mod hmm;

use serde::{Deserialize, Serialize};

pub use gmm::{em_gmm, gmm_log_likelihood, kmeans_plus_plus, GmmClamps, GmmFit, GmmInit, GmmParams};
pub use hmm::{em_poisson_hmm, forward_backward, quantile_rates, HmmFit, HmmParams, Posteriors};

/// Stopping rule shared by the EM routines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood change falls below this.
    pub tol: f64,
    /// Floor applied to fitted variances and rates.
    pub floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-8,
            floor: 1e-6,
        }
    }
}

fn converged(prev: f64, next: f64, tol: f64) -> bool {
    (next - prev).abs() <= tol * prev.abs().max(1e-300)
}
