//! Infinite-dimensional HMC on the tangent-space coefficients.
//!
//! The Hamiltonian is `H(g,v) = Φ(g) + ½⟨g,C⁻¹g⟩ + ½⟨v,K⁻¹v⟩` with
//! `v ~ N(0,K)`, where `K = C` or, with a Gauss-Newton preconditioner,
//! `K⁻¹ = C⁻¹ + βH`. Each leapfrog step kicks the velocity with the natural
//! gradient `η`, rotates `(g,v)` exactly, then kicks again.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::geom::INJECTIVITY_LIMIT;
use crate::model::{metropolis_accept, natural_gradient_from, Potential};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmcConfig {
    /// Leapfrog time step.
    pub h: f64,
    /// Total integration time; the step count is `⌊T/h⌋`.
    #[serde(rename = "T")]
    pub t_total: f64,
    /// Weight of the Gauss-Newton term in the preconditioner.
    pub beta: f64,
    /// Scale `ε` of the auxiliary anchor `a ~ N(g, ε²C)` at which the
    /// Gauss-Newton Hessian is taken (only used when `beta > 0`).
    pub anchor_scale: f64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self { h: 0.3, t_total: 1.0, beta: 1.0, anchor_scale: 0.5 }
    }
}

impl HmcConfig {
    pub fn new(h: f64, t_total: f64, beta: f64) -> Result<Self> {
        let cfg = Self { h, t_total, beta, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite() && self.t_total.is_finite()) {
            return Err(Error::Config(format!("HMC step must be positive, got h={}", self.h)));
        }
        if self.h > self.t_total * (1.0 + 1e-12) {
            return Err(Error::Config(format!("HMC step h={} exceeds T={}", self.h, self.t_total)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be nonnegative, got {}", self.beta)));
        }
        if !(self.anchor_scale > 0.0 && self.anchor_scale.is_finite()) {
            return Err(Error::Config(format!("anchor_scale must be positive, got {}", self.anchor_scale)));
        }
        Ok(())
    }

    /// Number of leapfrog steps `I = ⌊T/h⌋` (with a guard against roundoff).
    pub fn steps(&self) -> usize {
        ((self.t_total / self.h) + 1e-9).floor().max(1.0) as usize
    }
}

/// Fixed Gauss-Newton preconditioner: reference measure `N(0,K)` with
/// `K⁻¹ = C⁻¹ + βH` for a frozen Hessian `H`. Holding `H` fixed over a
/// trajectory keeps the integrator reversible and volume preserving.
#[derive(Clone, Debug)]
pub struct Preconditioner {
    beta: f64,
    hessian: DMatrix<f64>,
    /// Lower Cholesky factor `L` of `K⁻¹ = LLᵀ`.
    chol: Cholesky<f64, Dyn>,
}

impl Preconditioner {
    pub fn new(prior_var: &[f64], hessian: DMatrix<f64>, beta: f64) -> Result<Self> {
        let m = prior_var.len();
        if hessian.nrows() != m || hessian.ncols() != m {
            return Err(Error::invalid(format!("preconditioner needs a {m}x{m} Hessian")));
        }
        let mut k_inv = &hessian * beta;
        for (i, l) in prior_var.iter().enumerate() {
            k_inv[(i, i)] += 1.0 / l;
        }
        let chol = Cholesky::new(k_inv)
            .ok_or_else(|| Error::Numerical("preconditioner is not positive definite".into()))?;
        Ok(Self { beta, hessian, chol })
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// `η = −K[∇Φ − βHg]`.
    fn eta(&self, grad: &[f64], g: &[f64]) -> Vec<f64> {
        let hg = &self.hessian * DVector::from_column_slice(g);
        let rhs = DVector::from_iterator(g.len(), grad.iter().zip(hg.iter()).map(|(d, h)| d - self.beta * h));
        self.chol.solve(&rhs).iter().map(|x| -x).collect()
    }

    /// `L⁻ᵀz`, a draw from `N(0,K)` for standard normal `z`.
    fn velocity(&self, z: Vec<f64>) -> Vec<f64> {
        let mut x = DVector::from_vec(z);
        self.chol.l_dirty().tr_solve_lower_triangular_mut(&mut x);
        x.iter().copied().collect()
    }

    /// `⟨v, K⁻¹v⟩`.
    fn velocity_quad(&self, v: &[f64]) -> f64 {
        (self.chol.l().transpose() * DVector::from_column_slice(v)).norm_squared()
    }
}

/// `Φ(g) + ‖g − a‖²_{C⁻¹}/(2ε²)`, the potential of `g` given an auxiliary
/// anchor `a ~ N(g, ε²C)`. The anchor is redrawn before every update, so
/// the `g`-marginal is unchanged while a preconditioner built at `a`
/// follows the chain without depending on the current `g`.
pub struct Anchored<'a, P: Potential + ?Sized> {
    pub inner: &'a P,
    pub anchor: Vec<f64>,
    pub prior_var: &'a [f64],
    pub scale: f64,
}

impl<'a, P: Potential + ?Sized> Anchored<'a, P> {
    /// Draw the anchor around `g`.
    pub fn draw<R: Rng + ?Sized>(inner: &'a P, g: &[f64], prior_var: &'a [f64], scale: f64, rng: &mut R) -> Self {
        let anchor = g
            .iter()
            .zip(prior_var)
            .map(|(x, l)| x + scale * l.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { inner, anchor, prior_var, scale }
    }

    /// Point where the preconditioner's Hessian is taken: the anchor, pulled
    /// radially inside the injectivity region when it lies outside.
    pub fn reference(&self) -> Vec<f64> {
        let norm = self.anchor.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cap = 0.95 * INJECTIVITY_LIMIT;
        if norm < cap {
            self.anchor.clone()
        } else {
            self.anchor.iter().map(|x| x * cap / norm).collect()
        }
    }

    fn weight(&self, k: usize) -> f64 {
        1.0 / (self.scale * self.scale * self.prior_var[k])
    }

    fn tether(&self, c: &[f64]) -> f64 {
        (0..c.len()).map(|k| 0.5 * self.weight(k) * (c[k] - self.anchor[k]).powi(2)).sum()
    }
}

impl<P: Potential + ?Sized> Potential for Anchored<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, c: &[f64]) -> Result<f64> {
        Ok(self.inner.value(c)? + self.tether(c))
    }

    fn value_and_gradient(&self, c: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, mut g) = self.inner.value_and_gradient(c)?;
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += self.weight(k) * (c[k] - self.anchor[k]);
        }
        Ok((v + self.tether(c), g))
    }

    fn gnh(&self, c: &[f64]) -> Result<Option<DMatrix<f64>>> {
        Ok(self.inner.gnh(c)?.map(|mut h| {
            for k in 0..h.nrows() {
                h[(k, k)] += self.weight(k);
            }
            h
        }))
    }
}

/// Potential plus the prior spectrum and optional preconditioner.
pub struct HmcContext<'a, P: Potential + ?Sized> {
    pub potential: &'a P,
    /// Prior variances `λ_k²`, the diagonal of `C`.
    pub prior_var: &'a [f64],
    /// `None` is plain preconditioning by `C` (`β = 0`).
    pub precond: Option<&'a Preconditioner>,
}

impl<P: Potential + ?Sized> HmcContext<'_, P> {
    /// `Φ(g)` and `η(g)`.
    pub fn eta(&self, g: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (value, grad) = self.potential.value_and_gradient(g)?;
        let eta = match self.precond {
            Some(p) => p.eta(&grad, g),
            None => natural_gradient_from(&grad, None, g, self.prior_var, 0.0)?,
        };
        Ok((value, eta))
    }

    /// `H(g,v) = Φ(g) + ½⟨g,C⁻¹g⟩ + ½⟨v,K⁻¹v⟩` given `Φ(g)` (`K = C` without a preconditioner).
    pub fn hamiltonian(&self, phi: f64, g: &[f64], v: &[f64]) -> f64 {
        let quad = |x: &[f64]| x.iter().zip(self.prior_var).map(|(a, l)| a * a / l).sum::<f64>();
        let vq = match self.precond {
            Some(p) => p.velocity_quad(v),
            None => quad(v),
        };
        phi + 0.5 * quad(g) + 0.5 * vq
    }

    fn draw_velocity<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.prior_var.len()).map(|_| rng.sample(StandardNormal)).collect();
        match self.precond {
            Some(p) => p.velocity(z),
            None => z.iter().zip(self.prior_var).map(|(z, l)| l.sqrt() * z).collect(),
        }
    }
}

/// `Ξ₁ᵗ`: `v ← v + (t/2)·η(g)`.
pub fn flow_xi1<P: Potential + ?Sized>(g: &[f64], v: &mut [f64], t: f64, ctx: &HmcContext<'_, P>) -> Result<()> {
    let (_, eta) = ctx.eta(g)?;
    kick(v, t, &eta);
    Ok(())
}

#[inline]
fn kick(v: &mut [f64], t: f64, eta: &[f64]) {
    for (vi, e) in v.iter_mut().zip(eta) {
        *vi += 0.5 * t * e;
    }
}

/// `Ξ₂ᵗ`: exact rotation `(g cos t + v sin t, −g sin t + v cos t)`.
pub fn flow_xi2(g: &mut [f64], v: &mut [f64], t: f64) {
    let (s, c) = t.sin_cos();
    for (gi, vi) in g.iter_mut().zip(v.iter_mut()) {
        let (a, b) = (*gi, *vi);
        *gi = a * c + b * s;
        *vi = -a * s + b * c;
    }
}

/// `⌊T/h⌋` steps of `Ξ₁ʰ ∘ Ξ₂ʰ ∘ Ξ₁ʰ`, i.e. half-kicks of `(h/2)·η`
/// around an exact rotation. Returns `Φ` at the final position.
pub fn leapfrog<P: Potential + ?Sized>(
    g: &mut [f64],
    v: &mut [f64],
    cfg: &HmcConfig,
    ctx: &HmcContext<'_, P>,
) -> Result<f64> {
    let (_, mut eta) = ctx.eta(g)?;
    let mut phi = f64::NAN;
    for _ in 0..cfg.steps() {
        kick(v, cfg.h, &eta);
        flow_xi2(g, v, cfg.h);
        let (p, e) = ctx.eta(g)?;
        phi = p;
        eta = e;
        kick(v, cfg.h, &eta);
    }
    Ok(phi)
}

/// Outcome of one warp update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateOutcome {
    pub accepted: bool,
    /// `H(proposal) − H(current)`; `+∞` when the trajectory left the
    /// injectivity region.
    pub delta_h: f64,
}

/// One ∞-HMC transition. Trajectories that leave the injectivity region of
/// the exponential map are rejected.
pub fn inf_hmc_update<P: Potential + ?Sized, R: Rng + ?Sized>(
    c: &mut Vec<f64>,
    ctx: &HmcContext<'_, P>,
    cfg: &HmcConfig,
    rng: &mut R,
) -> Result<UpdateOutcome> {
    let mut v = ctx.draw_velocity(rng);
    let phi0 = ctx.potential.value(c)?;
    let h0 = ctx.hamiltonian(phi0, c, &v);
    let mut g = c.clone();
    let phi1 = match leapfrog(&mut g, &mut v, cfg, ctx) {
        Ok(p) => p,
        Err(Error::OutOfInjectivity { .. }) => {
            // Consume the uniform the accept step would have used.
            let _: f64 = rng.random();
            return Ok(UpdateOutcome { accepted: false, delta_h: f64::INFINITY });
        }
        Err(e) => return Err(e),
    };
    let delta_h = ctx.hamiltonian(phi1, &g, &v) - h0;
    let accepted = metropolis_accept(-delta_h, rng);
    if accepted {
        *c = g;
    }
    Ok(UpdateOutcome { accepted, delta_h })
}
