//! Flat run configuration.
//!
//! Layers are applied in the order defaults, command-line flags, config
//! file, environment; each layer only touches the keys it names.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::LoadOptions;
use crate::basis::BasisFamily;
use crate::dpalign::{DpConfig, DEFAULT_SLOPES};
use crate::error::{Error, Result};
use crate::geom::{CenterStat, DEFAULT_TAU_CLUSTER};
use crate::model::{InvGamma, PriorConfig};
use crate::multichain::PoolConfig;
use crate::samplers::{ChainConfig, HmcConfig, WarpSampler, ZMixture};

pub const ENV_OUTDIR: &str = "WARPBAYES_OUTDIR";
pub const ENV_THREADS: &str = "WARPBAYES_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    /// Second file of the two-file `t,y` form.
    pub input2: Option<PathBuf>,
    pub outdir: PathBuf,
    /// Worker threads for the chains; `None` lets the pool decide.
    pub threads: Option<usize>,
    /// Working grid size; `None` keeps the input length.
    pub n: Option<usize>,
    pub subsample: f64,

    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub family: BasisFamily,
    pub n_v: usize,
    pub sampler: WarpSampler,
    pub h: f64,
    #[serde(rename = "T")]
    pub t_total: f64,
    pub beta: f64,
    pub anchor_scale: f64,
    pub f_proposal_scale: f64,
    pub length_proposal_sd: f64,
    pub adapt: bool,
    pub target_accept: f64,
    pub zpcn_betas: Vec<f64>,
    pub zpcn_weights: Vec<f64>,

    pub sigma2_a: f64,
    pub sigma2_b: f64,
    pub obs_a: f64,
    pub obs_b: Option<f64>,
    pub kernel_scale_a: f64,
    pub kernel_scale_b: f64,
    pub length_lo: f64,
    pub length_hi: f64,
    pub sigma_g: f64,

    pub chains: usize,
    pub k_max: usize,
    pub tau: f64,
    pub stat: CenterStat,
    pub cluster_subsample: usize,

    pub dp_m: Option<usize>,
    pub dp_slopes: Vec<(usize, usize)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let chain = ChainConfig::default();
        let pool = PoolConfig::default();
        let p = PriorConfig::default();
        Self {
            input: None,
            input2: None,
            outdir: PathBuf::from("out"),
            threads: None,
            n: None,
            subsample: 1.0,
            seed: chain.seed,
            iterations: chain.iterations,
            burn_in: chain.burn_in,
            thin: chain.thin,
            family: chain.family,
            n_v: chain.n_v,
            sampler: chain.sampler,
            h: chain.hmc.h,
            t_total: chain.hmc.t_total,
            beta: chain.hmc.beta,
            anchor_scale: chain.hmc.anchor_scale,
            f_proposal_scale: chain.f_proposal_scale,
            length_proposal_sd: chain.length_proposal_sd,
            adapt: chain.adapt,
            target_accept: chain.target_accept,
            zpcn_betas: chain.zpcn.betas,
            zpcn_weights: chain.zpcn.weights,
            sigma2_a: p.sigma2.a,
            sigma2_b: p.sigma2.b,
            obs_a: p.obs_a,
            obs_b: p.obs_b,
            kernel_scale_a: p.kernel_scale.a,
            kernel_scale_b: p.kernel_scale.b,
            length_lo: p.length_lo,
            length_hi: p.length_hi,
            sigma_g: p.sigma_g,
            chains: pool.chains,
            k_max: pool.k_max,
            tau: DEFAULT_TAU_CLUSTER,
            stat: pool.stat,
            cluster_subsample: pool.cluster_subsample,
            dp_m: None,
            dp_slopes: DEFAULT_SLOPES.to_vec(),
        }
    }
}

impl RunConfig {
    /// Overlay the keys present in a TOML document. Unknown keys and type
    /// mismatches are config errors.
    pub fn merge_toml(&mut self, text: &str) -> Result<()> {
        let overlay: toml::Table = text.parse().map_err(|e| Error::Config(format!("config file: {e}")))?;
        let mut base = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overlay {
            base.insert(k, v);
        }
        *self = base.try_into().map_err(|e: toml::de::Error| Error::Config(format!("config file: {e}")))?;
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.merge_toml(&text)
    }

    /// Apply the output-directory and thread-count environment overrides.
    pub fn merge_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(dir) = get(ENV_OUTDIR) {
            self.outdir = PathBuf::from(dir);
        }
        if let Some(t) = get(ENV_THREADS) {
            let t = t.trim().parse().map_err(|_| Error::Config(format!("{ENV_THREADS}: not a count: {t:?}")))?;
            self.threads = Some(t);
        }
        Ok(())
    }

    pub fn chain_config(&self) -> ChainConfig {
        ChainConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            family: self.family,
            n_v: self.n_v,
            priors: PriorConfig {
                sigma2: InvGamma { a: self.sigma2_a, b: self.sigma2_b },
                obs_a: self.obs_a,
                obs_b: self.obs_b,
                kernel_scale: InvGamma { a: self.kernel_scale_a, b: self.kernel_scale_b },
                length_lo: self.length_lo,
                length_hi: self.length_hi,
                sigma_g: self.sigma_g,
            },
            hmc: HmcConfig { h: self.h, t_total: self.t_total, beta: self.beta, anchor_scale: self.anchor_scale },
            sampler: self.sampler,
            zpcn: ZMixture { betas: self.zpcn_betas.clone(), weights: self.zpcn_weights.clone() },
            f_proposal_scale: self.f_proposal_scale,
            length_proposal_sd: self.length_proposal_sd,
            adapt: self.adapt,
            target_accept: self.target_accept,
        }
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig {
            chains: self.chains,
            k_max: self.k_max,
            tau: self.tau,
            stat: self.stat,
            cluster_subsample: self.cluster_subsample,
        }
    }

    pub fn dp_config(&self) -> DpConfig {
        DpConfig { m: self.dp_m, slopes: self.dp_slopes.clone() }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions { n: self.n, subsample: self.subsample }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outdir.as_os_str().is_empty() {
            return Err(Error::Config("outdir must be nonempty".into()));
        }
        if self.input.as_ref().is_some_and(|p| p.as_os_str().is_empty())
            || self.input2.as_ref().is_some_and(|p| p.as_os_str().is_empty())
        {
            return Err(Error::Config("input paths must be nonempty".into()));
        }
        if self.input2.is_some() && self.input.is_none() {
            return Err(Error::Config("input2 given without input".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.load_options().validate()?;
        self.chain_config().validate()?;
        self.pool_config().validate()?;
        self.dp_config().validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}
