//! Warp-coefficient transition kernels and the single-chain sweep.

mod chain;
mod hmc;
mod zpcn;

pub use chain::{run_chain, Acceptance, ChainConfig, ChainSamples, Counter, TunedSteps, WarpSampler};
pub use hmc::{
    flow_xi1, flow_xi2, Anchored, inf_hmc_update, leapfrog, HmcConfig, HmcContext, Preconditioner, UpdateOutcome,
};
pub use zpcn::{zpcn_update, ZMixture};

use crate::error::{Error, Result};
use crate::model::Potential;

/// `Φ(c) = ½ Σ p_k (c_k − m_k)²`, a diagonal Gaussian likelihood in
/// coefficient space. With the prior `N(0, diag(λ²))` the posterior is
/// Gaussian with precision `1/λ_k² + p_k`, which makes it a convenient
/// target for checking samplers.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPotential {
    mean: Vec<f64>,
    precision: Vec<f64>,
}

impl GaussianPotential {
    pub fn new(mean: Vec<f64>, precision: Vec<f64>) -> Result<Self> {
        if mean.len() != precision.len() || precision.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("Gaussian potential needs matching lengths and nonnegative precisions"));
        }
        Ok(Self { mean, precision })
    }

    /// No data term: `Φ ≡ 0`.
    pub fn flat(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], precision: vec![0.0; dim] }
    }

    /// Posterior mean and variance of coefficient `k` under prior variance `prior_var`.
    pub fn posterior(&self, k: usize, prior_var: f64) -> (f64, f64) {
        let var = 1.0 / (1.0 / prior_var + self.precision[k]);
        (var * self.precision[k] * self.mean[k], var)
    }
}

impl Potential for GaussianPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn value(&self, c: &[f64]) -> Result<f64> {
        Ok(0.5 * c.iter().zip(&self.mean).zip(&self.precision).map(|((x, m), p)| p * (x - m) * (x - m)).sum::<f64>())
    }

    fn value_and_gradient(&self, c: &[f64]) -> Result<(f64, Vec<f64>)> {
        let grad = c.iter().zip(&self.mean).zip(&self.precision).map(|((x, m), p)| p * (x - m)).collect();
        Ok((self.value(c)?, grad))
    }
}
