//! Bayesian pairwise registration of noisy 1-D functions.
//!
//! Functions are compared in square-root velocity (SRVF) form, warps are
//! parameterized through the tangent space of the unit sphere at the
//! identity, and the warp posterior is sampled with an infinite-dimensional
//! HMC kernel inside a Metropolis-within-Gibbs sweep. A lattice dynamic
//! program provides the classical point estimate for comparison.

pub mod basis;
pub mod cli;
pub mod diagnostics;
pub mod dpalign;
pub mod error;
pub mod fdcore;
pub mod geom;
pub mod io;
pub mod model;
pub mod multichain;
pub mod samplers;

pub use error::{Error, Result};
