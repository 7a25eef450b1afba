//! Conditional updates of the non-warp parameters.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::gp::GpFactor;
use super::potential::RegistrationPotential;
use crate::basis::{Basis, TangentCoeffs};
use crate::error::{Error, Result};
use crate::fdcore::{to_srvf, OnGrid, SampledFunction, Srvf};

/// Which of the two curves an update refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Curve {
    First,
    Second,
}

/// Inverse-gamma shape/scale pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvGamma {
    pub a: f64,
    pub b: f64,
}

impl InvGamma {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Config(format!("inverse-gamma parameters must be positive, got ({a}, {b})")));
        }
        Ok(Self { a, b })
    }

    /// Conjugate update after `n` Gaussian observations with sum of squares `ss`.
    pub fn posterior(self, n: usize, ss: f64) -> Self {
        Self { a: self.a + 0.5 * n as f64, b: self.b + 0.5 * ss }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        let g: f64 = Gamma::new(self.a, 1.0).expect("validated shape").sample(rng);
        self.b / g
    }
}

/// Hyperpriors of the hierarchical model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Level-2 variance `σ²`.
    pub sigma2: InvGamma,
    pub obs_a: f64,
    /// Observation-variance scale; `None` uses `0.02·var(y_k)`.
    pub obs_b: Option<f64>,
    /// SE kernel scales `s_k²`.
    pub kernel_scale: InvGamma,
    pub length_lo: f64,
    pub length_hi: f64,
    pub sigma_g: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            sigma2: InvGamma { a: 1.0, b: 0.01 },
            obs_a: 3.0,
            obs_b: None,
            kernel_scale: InvGamma { a: 2.0, b: 1.0 },
            length_lo: 0.01,
            length_hi: 1.0,
            sigma_g: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        InvGamma::new(self.sigma2.a, self.sigma2.b)?;
        InvGamma::new(self.kernel_scale.a, self.kernel_scale.b)?;
        InvGamma::new(self.obs_a, self.obs_b.unwrap_or(1.0))?;
        if !(self.length_lo > 0.0 && self.length_lo < self.length_hi && self.length_hi.is_finite()) {
            return Err(Error::Config(format!(
                "length-scale bounds must satisfy 0 < lo < hi, got ({}, {})",
                self.length_lo, self.length_hi
            )));
        }
        if !(self.sigma_g > 0.0 && self.sigma_g.is_finite()) {
            return Err(Error::Config(format!("sigma_g must be positive, got {}", self.sigma_g)));
        }
        Ok(())
    }

    /// Observation-variance prior for data `y`.
    pub fn obs_prior(&self, y: &[f64]) -> InvGamma {
        let b = self.obs_b.unwrap_or_else(|| {
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            (0.02 * var).max(1e-12)
        });
        InvGamma { a: self.obs_a, b }
    }
}

/// Full state of one chain.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub c: TangentCoeffs,
    pub f1: SampledFunction,
    pub f2: SampledFunction,
    pub sigma2: f64,
    pub sigma1_2: f64,
    pub sigma2_2: f64,
    pub s1_2: f64,
    pub s2_2: f64,
    pub l1: f64,
    pub l2: f64,
}

impl ModelState {
    pub fn f(&self, k: Curve) -> &SampledFunction {
        match k {
            Curve::First => &self.f1,
            Curve::Second => &self.f2,
        }
    }

    pub fn obs_variance(&self, k: Curve) -> f64 {
        match k {
            Curve::First => self.sigma1_2,
            Curve::Second => self.sigma2_2,
        }
    }

    pub fn kernel_scale(&self, k: Curve) -> f64 {
        match k {
            Curve::First => self.s1_2,
            Curve::Second => self.s2_2,
        }
    }

    pub fn length_scale(&self, k: Curve) -> f64 {
        match k {
            Curve::First => self.l1,
            Curve::Second => self.l2,
        }
    }

    fn set_f(&mut self, k: Curve, f: SampledFunction) {
        match k {
            Curve::First => self.f1 = f,
            Curve::Second => self.f2 = f,
        }
    }

    fn set_length_scale(&mut self, k: Curve, l: f64) {
        match k {
            Curve::First => self.l1 = l,
            Curve::Second => self.l2 = l,
        }
    }
}

fn residual_ss(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `log N(y; f, σ²I)`.
pub fn loglik_level1(y: &SampledFunction, f: &SampledFunction, sig2: f64) -> Result<f64> {
    y.grid().check_same(f.grid())?;
    let n = y.values().len() as f64;
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI * sig2).ln() - 0.5 * residual_ss(y.values(), f.values()) / sig2)
}

/// Draw `σ_k²` from its inverse-gamma full conditional.
pub fn gibbs_obs_variance<R: Rng + ?Sized>(
    y: &SampledFunction,
    f: &SampledFunction,
    prior: InvGamma,
    rng: &mut R,
) -> Result<f64> {
    y.grid().check_same(f.grid())?;
    Ok(prior.posterior(y.values().len(), residual_ss(y.values(), f.values())).sample(rng))
}

/// Metropolis accept step for a log acceptance ratio.
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio >= 0.0 {
        return true;
    }
    if log_ratio.is_nan() {
        return false;
    }
    rng.random::<f64>().ln() < log_ratio
}

/// Unnormalized log full conditional of `f_k`.
fn f_log_target(
    k: Curve,
    f: &SampledFunction,
    y: &SampledFunction,
    q_other: &Srvf,
    state: &ModelState,
    gp: &GpFactor,
    basis: &Basis,
) -> Result<f64> {
    let q = to_srvf(f)?;
    let (q1, q2) = match k {
        Curve::First => (&q, q_other),
        Curve::Second => (q_other, &q),
    };
    let pot = RegistrationPotential::new(basis, q1, q2, state.sigma2)?;
    let misfit = pot.squared_misfit(&state.c.v)?;
    Ok(loglik_level1(y, f, state.obs_variance(k))? - 0.5 * misfit / state.sigma2
        + gp.log_density(f.values(), state.kernel_scale(k)))
}

/// Random-walk MH update of `f_k` with proposal covariance
/// `scale²·R̃(l_k)`; `gp` must factor `R̃(l_k)`.
pub fn mh_update_f<R: Rng + ?Sized>(
    k: Curve,
    state: &mut ModelState,
    y: &SampledFunction,
    q_other: &Srvf,
    gp: &GpFactor,
    scale: f64,
    rng: &mut R,
) -> Result<bool> {
    let f = state.f(k).clone();
    let z: Vec<f64> = (0..f.values().len()).map(|_| rng.sample(StandardNormal)).collect();
    let step = gp.correlate(&z);
    let proposal: Vec<f64> = f.values().iter().zip(&step).map(|(a, b)| a + scale * b).collect();
    let proposal = SampledFunction::new(f.grid().clone(), proposal)?;
    let basis = state.c.basis.clone();
    let old = f_log_target(k, &f, y, q_other, state, gp, &basis)?;
    let new = f_log_target(k, &proposal, y, q_other, state, gp, &basis)?;
    let accept = metropolis_accept(new - old, rng);
    if accept {
        state.set_f(k, proposal);
    }
    Ok(accept)
}

/// Gaussian random-walk MH update of `l_k` under a uniform prior, targeting
/// `N(f_k; 0, s_k²R̃(l_k))`. On acceptance `gp` is replaced by the factor
/// for the new length scale.
pub fn mh_update_lengthscale<R: Rng + ?Sized>(
    k: Curve,
    state: &mut ModelState,
    gp: &mut GpFactor,
    bounds: (f64, f64),
    sd: f64,
    rng: &mut R,
) -> Result<bool> {
    let l = state.length_scale(k);
    let eps: f64 = rng.sample(StandardNormal);
    let proposal = l + sd * eps;
    if proposal <= bounds.0 || proposal >= bounds.1 {
        return Ok(false);
    }
    if proposal == l {
        return Ok(true);
    }
    let f = state.f(k).values();
    let s2 = state.kernel_scale(k);
    let grid = state.f(k).grid().clone();
    let candidate = GpFactor::new(&grid, proposal)?;
    let accept = metropolis_accept(candidate.log_density(f, s2) - gp.log_density(f, s2), rng);
    if accept {
        state.set_length_scale(k, proposal);
        *gp = candidate;
    }
    Ok(accept)
}
