//! Metropolis-within-Gibbs driver for a single chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::hmc::{inf_hmc_update, Anchored, HmcConfig, HmcContext, Preconditioner};
use super::zpcn::{zpcn_update, ZMixture};
use crate::basis::{eval_basis, prior_spectrum, BasisDescriptor, BasisFamily, TangentCoeffs};
use crate::error::{Error, Result};
use crate::fdcore::{to_srvf, Grid, OnGrid, SampledFunction};
use crate::geom::Warping;
use crate::model::{
    gibbs_obs_variance, gp_smooth, mh_update_f, mh_update_lengthscale, Curve, GpFactor, InvGamma, ModelState,
    Potential, PriorConfig, RegistrationPotential,
};

/// Kernel used for the warp coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpSampler {
    Hmc,
    Zpcn,
}

impl std::str::FromStr for WarpSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hmc" => Ok(Self::Hmc),
            "zpcn" | "pcn" => Ok(Self::Zpcn),
            other => Err(Error::Config(format!("unknown sampler '{other}' (expected hmc or zpcn)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub family: BasisFamily,
    pub n_v: usize,
    pub priors: PriorConfig,
    pub hmc: HmcConfig,
    pub sampler: WarpSampler,
    pub zpcn: ZMixture,
    /// Scale `ρ` of the `f_k` proposal covariance `ρ²·R̃(l_k)`.
    pub f_proposal_scale: f64,
    /// Standard deviation of the length-scale random walk.
    pub length_proposal_sd: f64,
    /// Adapt `h`, the `f_k` proposal scales and the length-scale step sizes
    /// towards `target_accept` during burn-in; they are frozen afterwards.
    pub adapt: bool,
    pub target_accept: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 5_000,
            thin: 10,
            seed: 0,
            family: BasisFamily::Fourier,
            n_v: 10,
            priors: PriorConfig::default(),
            hmc: HmcConfig::default(),
            sampler: WarpSampler::Hmc,
            zpcn: ZMixture::default(),
            f_proposal_scale: 0.01,
            length_proposal_sd: 0.01,
            adapt: true,
            target_accept: 0.3,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "need burn_in < iterations, got {} and {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.f_proposal_scale >= 0.0 && self.f_proposal_scale.is_finite()) {
            return Err(Error::Config("f_proposal_scale must be nonnegative".into()));
        }
        if !(self.length_proposal_sd >= 0.0 && self.length_proposal_sd.is_finite()) {
            return Err(Error::Config("length_proposal_sd must be nonnegative".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target_accept must lie in (0,1), got {}", self.target_accept)));
        }
        self.priors.validate()?;
        self.hmc.validate()?;
        self.zpcn.validate()
    }

    /// Retained draws per chain.
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counter {
    pub accepted: u64,
    pub proposed: u64,
}

impl Counter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Acceptance counters per MH update type, over post-burn-in iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acceptance {
    pub warp: Counter,
    pub f1: Counter,
    pub f2: Counter,
    pub l1: Counter,
    pub l2: Counter,
}

/// Step sizes in use after burn-in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TunedSteps {
    pub h: f64,
    pub leapfrog_steps: usize,
    pub f_proposal_scale: [f64; 2],
    pub length_proposal_sd: [f64; 2],
}

/// Retained draws of one chain. Row `i` of every field is the same draw.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainSamples {
    pub seed: u64,
    pub grid: Grid,
    pub coeffs: Vec<Vec<f64>>,
    pub gammas: Vec<Vec<f64>>,
    pub f1: Vec<Vec<f64>>,
    pub f2: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    pub sigma1_2: Vec<f64>,
    pub sigma2_2: Vec<f64>,
    pub s1_2: Vec<f64>,
    pub s2_2: Vec<f64>,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub acceptance: Acceptance,
    pub tuned: TunedSteps,
    /// Set when the chain stopped early; the draws above are then partial.
    pub failure: Option<String>,
}

impl ChainSamples {
    pub(crate) fn empty(seed: u64, grid: &Grid) -> Self {
        Self {
            seed,
            grid: grid.clone(),
            coeffs: Vec::new(),
            gammas: Vec::new(),
            f1: Vec::new(),
            f2: Vec::new(),
            sigma2: Vec::new(),
            sigma1_2: Vec::new(),
            sigma2_2: Vec::new(),
            s1_2: Vec::new(),
            s2_2: Vec::new(),
            l1: Vec::new(),
            l2: Vec::new(),
            acceptance: Acceptance::default(),
            tuned: TunedSteps::default(),
            failure: None,
        }
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    pub fn warp(&self, i: usize) -> Warping {
        Warping::repaired(&self.grid, self.gammas[i].clone())
    }

    fn push(&mut self, s: &ModelState, gamma: Vec<f64>) {
        self.coeffs.push(s.c.v.clone());
        self.gammas.push(gamma);
        self.f1.push(s.f1.values().to_vec());
        self.f2.push(s.f2.values().to_vec());
        self.sigma2.push(s.sigma2);
        self.sigma1_2.push(s.sigma1_2);
        self.sigma2_2.push(s.sigma2_2);
        self.s1_2.push(s.s1_2);
        self.s2_2.push(s.s2_2);
        self.l1.push(s.l1);
        self.l2.push(s.l2);
    }
}

const INIT_TRIES: usize = 1000;

/// Standard-normal Karhunen-Loève variates `z`, giving `c_k = λ_k z_k`,
/// redrawn until `‖g‖ < π/2` (rescaled onto that radius as a last resort).
fn init_coeffs<R: Rng + ?Sized>(prior_var: &[f64], rng: &mut R) -> Vec<f64> {
    let radius = std::f64::consts::FRAC_PI_2;
    let mut v: Vec<f64> = Vec::new();
    for _ in 0..INIT_TRIES {
        v = prior_var.iter().map(|l| l.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
        if v.iter().map(|x| x * x).sum::<f64>().sqrt() < radius {
            return v;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x * 0.99 * radius / norm).collect()
}

fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Robbins-Monro adaptation of a log step size towards a target rate.
#[derive(Clone, Copy, Debug)]
struct Adaptive {
    log_scale: f64,
    n: u64,
}

impl Adaptive {
    fn new(scale: f64) -> Self {
        Self { log_scale: scale.max(1e-12).ln(), n: 0 }
    }

    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    fn update(&mut self, accepted: bool, target: f64) {
        self.n += 1;
        let gain = 1.0 / (self.n as f64 + 10.0).powf(0.6);
        self.log_scale += gain * (f64::from(u8::from(accepted)) - target);
    }
}

/// Current step sizes: `[h, ρ₁, ρ₂, sd₁, sd₂]`.
struct Steps {
    scales: [Adaptive; 5],
    leapfrog_steps: usize,
}

impl Steps {
    fn new(cfg: &ChainConfig) -> Self {
        let (rho, sd) = (cfg.f_proposal_scale, cfg.length_proposal_sd);
        Self {
            scales: [cfg.hmc.h, rho, rho, sd, sd].map(Adaptive::new),
            leapfrog_steps: cfg.hmc.steps(),
        }
    }

    fn hmc(&self, base: &HmcConfig) -> HmcConfig {
        let h = self.scales[0].scale();
        // Nudge T so that ⌊T/h⌋ stays at the configured step count.
        HmcConfig { h, t_total: h * (self.leapfrog_steps as f64 + 0.5), ..*base }
    }
}

struct Sweep<'a> {
    cfg: &'a ChainConfig,
    y1: &'a SampledFunction,
    y2: &'a SampledFunction,
    prior_var: Vec<f64>,
    obs_prior: [InvGamma; 2],
    gp1: GpFactor,
    gp2: GpFactor,
    steps: Steps,
}

impl Sweep<'_> {
    fn tuned(&self) -> TunedSteps {
        let cfg = self.cfg;
        if !cfg.adapt {
            return TunedSteps {
                h: cfg.hmc.h,
                leapfrog_steps: cfg.hmc.steps(),
                f_proposal_scale: [cfg.f_proposal_scale; 2],
                length_proposal_sd: [cfg.length_proposal_sd; 2],
            };
        }
        let sc = |i: usize| self.steps.scales[i].scale();
        TunedSteps {
            h: sc(0),
            leapfrog_steps: self.steps.leapfrog_steps,
            f_proposal_scale: [sc(1), sc(2)],
            length_proposal_sd: [sc(3), sc(4)],
        }
    }

    fn step(
        &mut self,
        it: usize,
        s: &mut ModelState,
        acc: &mut Acceptance,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let cfg = self.cfg;
        let n = s.f1.values().len();
        let adapting = cfg.adapt && it < cfg.burn_in;
        let counting = it >= cfg.burn_in;
        let target = cfg.target_accept;
        let hmc = if cfg.adapt { self.steps.hmc(&cfg.hmc) } else { cfg.hmc };
        let scale = |i: usize| if cfg.adapt { self.steps.scales[i].scale() } else if i < 3 { cfg.f_proposal_scale } else { cfg.length_proposal_sd };
        let (rho1, rho2, sd1, sd2) = (scale(1), scale(2), scale(3), scale(4));
        let record = |steps: &mut Steps, counter: &mut Counter, i: usize, accepted: bool| {
            if counting {
                counter.record(accepted);
            }
            if adapting {
                steps.scales[i].update(accepted, target);
            }
        };
        let basis = s.c.basis.clone();

        // (1) warp coefficients
        let q1 = to_srvf(&s.f1)?;
        let q2 = to_srvf(&s.f2)?;
        let pot = RegistrationPotential::new(&basis, &q1, &q2, s.sigma2)?;
        let outcome = match cfg.sampler {
            WarpSampler::Hmc if cfg.hmc.beta > 0.0 => {
                let anchored = Anchored::draw(&pot, &s.c.v, &self.prior_var, cfg.hmc.anchor_scale, rng);
                let hess = anchored.gnh(&anchored.reference())?.expect("registration potential has a Gauss-Newton Hessian");
                let precond = Preconditioner::new(&self.prior_var, hess, cfg.hmc.beta)?;
                let ctx = HmcContext { potential: &anchored, prior_var: &self.prior_var, precond: Some(&precond) };
                inf_hmc_update(&mut s.c.v, &ctx, &hmc, rng)?
            }
            WarpSampler::Hmc => {
                let ctx = HmcContext { potential: &pot, prior_var: &self.prior_var, precond: None };
                inf_hmc_update(&mut s.c.v, &ctx, &hmc, rng)?
            }
            WarpSampler::Zpcn => zpcn_update(&mut s.c.v, &pot, &self.prior_var, &cfg.zpcn, rng)?,
        };
        // The pCN mixture is not adapted.
        if cfg.sampler == WarpSampler::Hmc {
            record(&mut self.steps, &mut acc.warp, 0, outcome.accepted);
        } else if counting {
            acc.warp.record(outcome.accepted);
        }

        // (2) latent functions
        let ok = mh_update_f(Curve::First, s, self.y1, &q2, &self.gp1, rho1, rng)?;
        record(&mut self.steps, &mut acc.f1, 1, ok);
        let q1 = to_srvf(&s.f1)?;
        let ok = mh_update_f(Curve::Second, s, self.y2, &q1, &self.gp2, rho2, rng)?;
        record(&mut self.steps, &mut acc.f2, 2, ok);
        let q2 = to_srvf(&s.f2)?;

        // (3) variances
        let pot = RegistrationPotential::new(&basis, &q1, &q2, s.sigma2)?;
        let misfit = pot.squared_misfit(&s.c.v)?;
        s.sigma2 = cfg.priors.sigma2.posterior(n, misfit).sample(rng);
        s.sigma1_2 = gibbs_obs_variance(self.y1, &s.f1, self.obs_prior[0], rng)?;
        s.sigma2_2 = gibbs_obs_variance(self.y2, &s.f2, self.obs_prior[1], rng)?;
        s.s1_2 = cfg.priors.kernel_scale.posterior(n, self.gp1.quad(s.f1.values())).sample(rng);
        s.s2_2 = cfg.priors.kernel_scale.posterior(n, self.gp2.quad(s.f2.values())).sample(rng);

        // (4) length scales
        let bounds = (cfg.priors.length_lo, cfg.priors.length_hi);
        let ok = mh_update_lengthscale(Curve::First, s, &mut self.gp1, bounds, sd1, rng)?;
        record(&mut self.steps, &mut acc.l1, 3, ok);
        let ok = mh_update_lengthscale(Curve::Second, s, &mut self.gp2, bounds, sd2, rng)?;
        record(&mut self.steps, &mut acc.l2, 4, ok);

        // The warp only changes in (1), but the potential is rebuilt with the
        // current q's; γ depends on c alone.
        pot.gamma(&s.c.v)
    }
}

/// Initial state: random coefficients, GP-smoothed latent functions and
/// plug-in variances.
fn initial_state(
    y1: &SampledFunction,
    y2: &SampledFunction,
    cfg: &ChainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ModelState> {
    let grid = y1.grid();
    let basis = eval_basis(&BasisDescriptor::new(cfg.family, cfg.n_v, grid.clone())?)?;
    let spectrum = prior_spectrum(cfg.priors.sigma_g, basis.descriptor())?;
    let c = TangentCoeffs::new(basis.clone(), init_coeffs(&spectrum.variances(), rng))?;
    let (lo, hi) = (cfg.priors.length_lo, cfg.priors.length_hi);
    let clamp_l = |l: f64| l.clamp(lo + 1e-3 * (hi - lo), hi - 1e-3 * (hi - lo));
    let fit1 = gp_smooth(grid, y1.values())?;
    let fit2 = gp_smooth(grid, y2.values())?;
    let resid = |y: &SampledFunction, f: &[f64]| {
        let r: Vec<f64> = y.values().iter().zip(f).map(|(a, b)| a - b).collect();
        sample_variance(&r).max(1e-10)
    };
    let sigma1_2 = resid(y1, &fit1.values);
    let sigma2_2 = resid(y2, &fit2.values);
    let f1 = SampledFunction::new(grid.clone(), fit1.values)?;
    let f2 = SampledFunction::new(grid.clone(), fit2.values)?;
    let pot = RegistrationPotential::new(&basis, &to_srvf(&f1)?, &to_srvf(&f2)?, 1.0)?;
    let misfit = pot.squared_misfit(&c.v)?;
    let n = grid.len() as f64;
    Ok(ModelState {
        c,
        sigma2: (misfit / n).max(1e-6),
        sigma1_2,
        sigma2_2,
        s1_2: sample_variance(f1.values()).max(1e-6),
        s2_2: sample_variance(f2.values()).max(1e-6),
        l1: clamp_l(fit1.l),
        l2: clamp_l(fit2.l),
        f1,
        f2,
    })
}

/// Run one chain from `cfg.seed`. Errors after initialization stop the
/// chain and are reported in `failure` alongside the draws retained so far.
pub fn run_chain(y1: &SampledFunction, y2: &SampledFunction, cfg: &ChainConfig) -> Result<ChainSamples> {
    cfg.validate()?;
    y1.grid().check_same(y2.grid())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = ChainSamples::empty(cfg.seed, y1.grid());
    let mut state = match initial_state(y1, y2, cfg, &mut rng) {
        Ok(s) => s,
        Err(e) => {
            out.failure = Some(format!("initialization: {e}"));
            return Ok(out);
        }
    };
    let spectrum = prior_spectrum(cfg.priors.sigma_g, state.c.basis.descriptor())?;
    let mut sweep = Sweep {
        cfg,
        y1,
        y2,
        prior_var: spectrum.variances(),
        obs_prior: [cfg.priors.obs_prior(y1.values()), cfg.priors.obs_prior(y2.values())],
        gp1: GpFactor::new(y1.grid(), state.l1)?,
        gp2: GpFactor::new(y1.grid(), state.l2)?,
        steps: Steps::new(cfg),
    };
    let mut acc = Acceptance::default();
    for it in 0..cfg.iterations {
        match sweep.step(it, &mut state, &mut acc, &mut rng) {
            Ok(gamma) => {
                if it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0 {
                    out.push(&state, gamma);
                }
            }
            Err(e) => {
                log::warn!("chain {} stopped at iteration {it}: {e}", cfg.seed);
                out.failure = Some(format!("iteration {it}: {e}"));
                break;
            }
        }
    }
    out.acceptance = acc;
    out.tuned = sweep.tuned();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(noise: f64, seed: u64) -> (SampledFunction, SampledFunction) {
        let g = Grid::uniform(101).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bump = |t: f64| (-(t - 0.5) * (t - 0.5) / (2.0 * 0.07 * 0.07)).exp();
        let mut draw = |t: f64| bump(t) + noise * rng.sample::<f64, _>(StandardNormal);
        let y1 = SampledFunction::new(g.clone(), g.points().iter().map(|&t| draw(t)).collect()).unwrap();
        let y2 = SampledFunction::new(g.clone(), g.points().iter().map(|&t| draw(t)).collect()).unwrap();
        (y1, y2)
    }

    fn short(seed: u64) -> ChainConfig {
        ChainConfig { iterations: 300, burn_in: 100, thin: 7, seed, ..ChainConfig::default() }
    }

    #[test]
    fn retained_count_and_determinism() {
        let (y1, y2) = pair(0.03, 1);
        let cfg = short(5);
        let a = run_chain(&y1, &y2, &cfg).unwrap();
        assert_eq!(a.failure, None);
        assert_eq!(a.len(), (300 - 100) / 7);
        assert_eq!(a.len(), cfg.retained());
        let b = run_chain(&y1, &y2, &cfg).unwrap();
        assert_eq!(a, b);
        let c = run_chain(&y1, &y2, &short(6)).unwrap();
        assert_ne!(a.coeffs, c.coeffs);
    }

    #[test]
    fn retained_warps_are_valid() {
        let (y1, y2) = pair(0.03, 2);
        let cfg = ChainConfig { sampler: WarpSampler::Zpcn, ..short(3) };
        let s = run_chain(&y1, &y2, &cfg).unwrap();
        for i in 0..s.len() {
            Warping::new(s.grid.clone(), s.gammas[i].clone()).unwrap();
        }
        assert!(s.sigma2.iter().chain(&s.sigma1_2).chain(&s.s2_2).all(|v| *v > 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(ChainConfig { burn_in: 20_000, ..ChainConfig::default() }.validate().is_err());
        assert!(ChainConfig { thin: 0, ..ChainConfig::default() }.validate().is_err());
        assert!(ChainConfig::default().validate().is_ok());
    }

    #[test]
    fn init_coeffs_stay_injective() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for var in [vec![1.0; 2], vec![1.0; 10], vec![25.0; 40]] {
            let v = init_coeffs(&var, &mut rng);
            assert!(v.iter().map(|x| x * x).sum::<f64>().sqrt() < std::f64::consts::FRAC_PI_2);
        }
    }
}
