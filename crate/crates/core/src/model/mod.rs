//! Hierarchical registration model: Level-1 observation likelihoods,
//! the Level-2 SRVF registration potential, GP priors and conditional updates.

mod gp;
mod potential;
mod updates;

pub use gp::{gp_regression, gp_smooth, se_kernel, GpFactor, SmoothFit, JITTER};
pub use potential::{
    gnh, grad_phi, natural_gradient, natural_gradient_from, phi, Potential, RegistrationPotential,
};
pub use updates::{
    gibbs_obs_variance, loglik_level1, metropolis_accept, mh_update_f, mh_update_lengthscale, Curve,
    InvGamma, ModelState, PriorConfig,
};
