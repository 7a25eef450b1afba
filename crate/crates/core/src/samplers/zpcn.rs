//! Z-mixture preconditioned Crank-Nicolson kernel.

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::hmc::UpdateOutcome;
use crate::error::{Error, Result};
use crate::model::{metropolis_accept, Potential};

/// Mixture over pCN step parameters `β_z ∈ [0,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZMixture {
    pub betas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Default for ZMixture {
    fn default() -> Self {
        Self { betas: vec![0.01, 0.05, 0.2, 0.5], weights: vec![0.25; 4] }
    }
}

impl ZMixture {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.betas.len() != self.weights.len() {
            return Err(Error::Config("z-mixture needs matching, nonempty betas and weights".into()));
        }
        if self.betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::Config("z-mixture betas must lie in [0,1]".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("z-mixture weights must be nonnegative with positive sum".into()));
        }
        Ok(())
    }
}

/// One pCN transition: `c′ = √(1−β²)c + βξ`, `ξ ~ N(0,C)`, accepted with
/// `min(1, exp(Φ(c) − Φ(c′)))`. Proposals outside the injectivity region
/// are rejected.
pub fn zpcn_update<P: Potential + ?Sized, R: Rng + ?Sized>(
    c: &mut Vec<f64>,
    potential: &P,
    prior_var: &[f64],
    mixture: &ZMixture,
    rng: &mut R,
) -> Result<UpdateOutcome> {
    let pick = WeightedIndex::new(&mixture.weights)
        .map_err(|e| Error::Config(format!("z-mixture weights: {e}")))?
        .sample(rng);
    let beta = mixture.betas[pick];
    let keep = (1.0 - beta * beta).sqrt();
    let proposal: Vec<f64> = c
        .iter()
        .zip(prior_var)
        .map(|(ci, l)| keep * ci + beta * l.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let phi0 = potential.value(c)?;
    let phi1 = match potential.value(&proposal) {
        Ok(p) => p,
        Err(Error::OutOfInjectivity { .. }) => {
            let _: f64 = rng.random();
            return Ok(UpdateOutcome { accepted: false, delta_h: f64::INFINITY });
        }
        Err(e) => return Err(e),
    };
    let accepted = metropolis_accept(phi0 - phi1, rng);
    if accepted {
        *c = proposal;
    }
    Ok(UpdateOutcome { accepted, delta_h: phi1 - phi0 })
}
