//! Parallel chains, pooling and per-mode summaries of the warp posterior.
//!
//! Chains run independently and are pooled in seed order, so the pooled
//! set, the clusters and their summaries do not depend on scheduling or on
//! the order chains are handed in.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdcore::{l2_dist, to_srvf, warp_srvf, Grid, OnGrid, SampledFunction};
use crate::geom::{
    cluster_distance_matrix, gamma_to_psi, geodesic_dist, karcher_center, pairwise_distances, psi_to_gamma,
    CenterStat, Psi, Warping, DEFAULT_TAU_CLUSTER,
};
use crate::samplers::{run_chain, ChainConfig, ChainSamples};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    /// Number of chains `K`, seeded `seed, seed+1, …, seed+K−1`.
    pub chains: usize,
    pub k_max: usize,
    /// Complete-linkage merge threshold in radians.
    pub tau: f64,
    pub stat: CenterStat,
    /// At most this many pooled draws enter the O(n²) clustering; the rest
    /// join the cluster with the nearest center.
    pub cluster_subsample: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self { chains: 8, k_max: 5, tau: DEFAULT_TAU_CLUSTER, stat: CenterStat::Median, cluster_subsample: 2000 }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("need at least one chain".into()));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be nonnegative, got {}", self.tau)));
        }
        if self.cluster_subsample < 2 {
            return Err(Error::Config("cluster_subsample must be at least 2".into()));
        }
        Ok(())
    }
}

/// One posterior mode of the warp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub center: Vec<f64>,
    /// Pointwise 2.5% and 97.5% quantiles of member warps, widened where
    /// needed so that `lower ≤ center ≤ upper`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `‖q₁ − (q₂, γ_center)‖²`.
    pub amplitude_distance: f64,
    pub count: usize,
}

impl ModeSummary {
    pub fn center_warp(&self, grid: &Grid) -> Result<Warping> {
        Warping::new(grid.clone(), self.center.clone())
    }

    /// Fraction of grid points where `gamma` lies inside the band.
    pub fn coverage(&self, gamma: &[f64]) -> f64 {
        let inside = gamma
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .filter(|(g, (lo, hi))| **lo <= **g && **g <= **hi)
            .count();
        inside as f64 / gamma.len().max(1) as f64
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let x = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (x - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise quantiles across rows of equal length.
pub(crate) fn pointwise_quantiles(rows: &[&[f64]], probs: &[f64]) -> Vec<Vec<f64>> {
    let n = rows.first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; n]; probs.len()];
    let mut col = Vec::with_capacity(rows.len());
    for i in 0..n {
        col.clear();
        col.extend(rows.iter().map(|r| r[i]));
        col.sort_by(f64::total_cmp);
        for (o, &p) in out.iter_mut().zip(probs) {
            o[i] = quantile_sorted(&col, p);
        }
    }
    out
}

/// Karcher center of a cluster, its pointwise 95% band and the amplitude
/// distance of the center between `f1` and `f2`.
pub fn summarize_mode(
    members: &[Psi],
    stat: CenterStat,
    f1: &SampledFunction,
    f2: &SampledFunction,
) -> Result<ModeSummary> {
    let first = members.first().ok_or_else(|| Error::invalid("cannot summarize an empty cluster"))?;
    let grid = first.grid().clone();
    let center = psi_to_gamma(&karcher_center(members, stat)?.center);
    let gammas: Vec<Warping> = members.iter().map(psi_to_gamma).collect();
    let rows: Vec<&[f64]> = gammas.iter().map(|g| g.values()).collect();
    let mut q = pointwise_quantiles(&rows, &[0.025, 0.975]);
    let mut upper = q.pop().expect("two quantiles");
    let mut lower = q.pop().expect("two quantiles");
    let c = center.values();
    for i in 0..c.len() {
        lower[i] = lower[i].min(c[i]);
        upper[i] = upper[i].max(c[i]);
    }
    let last = c.len() - 1;
    lower[0] = 0.0;
    upper[0] = 0.0;
    lower[last] = 1.0;
    upper[last] = 1.0;
    let q1 = to_srvf(f1)?;
    let q2 = to_srvf(f2)?;
    let d = l2_dist(&q1, &warp_srvf(&q2, &center)?)?;
    grid.check_same(f1.grid())?;
    Ok(ModeSummary {
        center: center.into_values(),
        lower,
        upper,
        amplitude_distance: d * d,
        count: members.len(),
    })
}

/// Index of the mode with the smallest amplitude distance; ties go to the
/// larger cluster, then to the lower index.
pub fn select_best_mode(summaries: &[ModeSummary]) -> Result<usize> {
    summaries
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            a.amplitude_distance
                .total_cmp(&b.amplitude_distance)
                .then(b.count.cmp(&a.count))
                .then(i.cmp(j))
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::invalid("no modes to choose from"))
}

/// Pooled draws of all chains with cluster labels and per-mode summaries.
#[derive(Clone, Debug)]
pub struct PooledPosterior {
    /// Chains in seed order; failed chains keep their partial draws.
    pub chains: Vec<ChainSamples>,
    /// `(chain, draw)` of every pooled sample, in pooling order.
    pub index: Vec<(usize, usize)>,
    pub psis: Vec<Psi>,
    pub labels: Vec<usize>,
    pub modes: Vec<ModeSummary>,
    pub best: usize,
}

impl PooledPosterior {
    pub fn len(&self) -> usize {
        self.psis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psis.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        &self.chains[0].grid
    }

    pub fn gamma(&self, k: usize) -> &[f64] {
        let (c, i) = self.index[k];
        &self.chains[c].gammas[i]
    }

    pub fn f1(&self, k: usize) -> &[f64] {
        let (c, i) = self.index[k];
        &self.chains[c].f1[i]
    }

    pub fn f2(&self, k: usize) -> &[f64] {
        let (c, i) = self.index[k];
        &self.chains[c].f2[i]
    }

    pub fn members(&self, label: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().enumerate().filter(move |(_, l)| **l == label).map(|(k, _)| k)
    }

    /// Pointwise median of `f1` (`curve = 0`) or `f2` over the given draws.
    pub fn median_f(&self, curve: usize, draws: &[usize]) -> Result<SampledFunction> {
        let rows: Vec<&[f64]> =
            draws.iter().map(|&k| if curve == 0 { self.f1(k) } else { self.f2(k) }).collect();
        if rows.is_empty() {
            return Err(Error::invalid("median of no draws"));
        }
        let med = pointwise_quantiles(&rows, &[0.5]).pop().expect("one quantile");
        SampledFunction::new(self.grid().clone(), med)
    }

    /// Chain seeds that stopped early, with their failure messages.
    pub fn failures(&self) -> Vec<(u64, String)> {
        self.chains.iter().filter_map(|c| c.failure.clone().map(|f| (c.seed, f))).collect()
    }
}

/// Evenly spaced indices `⌊i·n/m⌋`, `i < m`.
fn decimate(n: usize, m: usize) -> Vec<usize> {
    if n <= m {
        return (0..n).collect();
    }
    (0..m).map(|i| i * n / m).collect()
}

/// Cluster the pooled draws: complete linkage on a deterministic subsample,
/// then nearest normalized-average center for the remaining draws. Labels
/// are renumbered by decreasing cluster size.
fn cluster(psis: &[Psi], cfg: &PoolConfig) -> Result<Vec<usize>> {
    let sub = decimate(psis.len(), cfg.cluster_subsample);
    let picked: Vec<Psi> = sub.iter().map(|&i| psis[i].clone()).collect();
    let d = pairwise_distances(&picked)?;
    let sub_labels = cluster_distance_matrix(d, picked.len(), cfg.k_max, cfg.tau);
    let k = sub_labels.iter().max().map_or(0, |m| m + 1);
    let mut labels = vec![usize::MAX; psis.len()];
    for (&i, &l) in sub.iter().zip(&sub_labels) {
        labels[i] = l;
    }
    if sub.len() < psis.len() {
        let grid = psis[0].grid().clone();
        let n = grid.len();
        let mut sums = vec![vec![0.0; n]; k];
        for (p, &l) in picked.iter().zip(&sub_labels) {
            sums[l].iter_mut().zip(p.values()).for_each(|(s, v)| *s += v);
        }
        let centers: Vec<Psi> = sums
            .into_iter()
            .map(|s| {
                let norm = crate::fdcore::l2_norm(&grid, &s);
                Psi::new(grid.clone(), s.into_iter().map(|v| v / norm).collect())
            })
            .collect::<Result<_>>()?;
        for (i, label) in labels.iter_mut().enumerate() {
            if *label != usize::MAX {
                continue;
            }
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = geodesic_dist(&psis[i], c)?;
                if d < best.1 {
                    best = (j, d);
                }
            }
            *label = best.0;
        }
    }
    let mut counts: Vec<(usize, usize)> = (0..k).map(|l| (l, labels.iter().filter(|x| **x == l).count())).collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut rename = vec![0; k];
    for (new, (old, _)) in counts.iter().enumerate() {
        rename[*old] = new;
    }
    Ok(labels.into_iter().map(|l| rename[l]).collect())
}

/// Pool finished chains, cluster the warps and summarize every mode.
///
/// Each mode's amplitude distance uses the pointwise posterior medians of
/// `f1` and `f2` over that mode's members.
pub fn pool(mut chains: Vec<ChainSamples>, cfg: &PoolConfig) -> Result<PooledPosterior> {
    cfg.validate()?;
    chains.sort_by_key(|c| c.seed);
    for c in &chains {
        if let Some(f) = &c.failure {
            log::warn!("chain {} failed: {f}", c.seed);
        }
    }
    if chains.iter().all(|c| c.is_empty()) {
        let why: Vec<String> =
            chains.iter().map(|c| format!("seed {}: {}", c.seed, c.failure.as_deref().unwrap_or("no draws"))).collect();
        return Err(Error::Run(format!("no chain produced draws ({})", why.join("; "))));
    }
    let grid = chains.iter().find(|c| !c.is_empty()).expect("checked above").grid.clone();
    let index: Vec<(usize, usize)> =
        chains.iter().enumerate().flat_map(|(c, s)| (0..s.len()).map(move |i| (c, i))).collect();
    let psis: Vec<Psi> = index.iter().map(|&(c, i)| gamma_to_psi(&chains[c].warp(i))).collect();
    let labels = cluster(&psis, cfg)?;
    let mut post = PooledPosterior { chains, index, psis, labels, modes: Vec::new(), best: 0 };
    let k = post.labels.iter().max().map_or(0, |m| m + 1);
    let mut modes = Vec::with_capacity(k);
    for l in 0..k {
        let members: Vec<usize> = post.members(l).collect();
        let psis: Vec<Psi> = members.iter().map(|&m| post.psis[m].clone()).collect();
        let f1 = post.median_f(0, &members)?;
        let f2 = post.median_f(1, &members)?;
        grid.check_same(f1.grid())?;
        modes.push(summarize_mode(&psis, cfg.stat, &f1, &f2)?);
    }
    post.best = select_best_mode(&modes)?;
    post.modes = modes;
    Ok(post)
}

/// Run `K` chains concurrently from seeds `cfg.seed + k` and pool them.
/// Failed chains are reported; the run fails only if every chain did.
pub fn run_parallel(
    y1: &SampledFunction,
    y2: &SampledFunction,
    cfg: &ChainConfig,
    pool_cfg: &PoolConfig,
) -> Result<PooledPosterior> {
    cfg.validate()?;
    pool_cfg.validate()?;
    let chains: Vec<ChainSamples> = (0..pool_cfg.chains as u64)
        .into_par_iter()
        .map(|k| {
            let c = ChainConfig { seed: cfg.seed.wrapping_add(k), ..cfg.clone() };
            run_chain(y1, y2, &c)
        })
        .collect::<Result<_>>()?;
    pool(chains, pool_cfg)
}
