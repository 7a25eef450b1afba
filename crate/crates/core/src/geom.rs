//! Geometry of the warping group.
//!
//! A warp `γ` maps to `ψ = √γ̇` on the unit Hilbert sphere, and the sphere is
//! linearized at the identity `ψ ≡ 1` by the exponential map. Everything here
//! uses the trapezoid inner product from [`crate::fdcore`], so the
//! discrete maps are exact inverses of each other up to roundoff.

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fdcore::{cumtrapz, diff_values, inner, l2_norm, trapz, Grid, OnGrid};

/// Tangent vectors with norm at or above this are rejected by the
/// exponential map (the map stops being one-to-one at π).
pub const INJECTIVITY_LIMIT: f64 = std::f64::consts::PI - 1e-6;
const MONOTONE_TOL: f64 = 1e-12;
const NORM_TOL: f64 = 1e-8;
const TANGENT_TOL: f64 = 1e-8;
const TINY: f64 = 1e-12;

/// Boundary-preserving, nondecreasing map of [0,1] onto itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Warping {
    grid: Grid,
    values: Vec<f64>,
}

impl Warping {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("warping length does not match grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("warping has non-finite values"));
        }
        if values[0] != 0.0 || values[values.len() - 1] != 1.0 {
            return Err(Error::invalid("warping must satisfy γ(0)=0 and γ(1)=1"));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] < w[0] - MONOTONE_TOL) {
            return Err(Error::invalid(format!("warping decreases at index {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut values: Vec<f64> = grid.points().iter().map(|&t| f(t)).collect();
        let n = values.len();
        // Snap endpoints that are off only by roundoff.
        if values[0].abs() < 1e-12 {
            values[0] = 0.0;
        }
        if (values[n - 1] - 1.0).abs() < 1e-12 {
            values[n - 1] = 1.0;
        }
        Self::new(grid.clone(), values)
    }

    pub fn identity(grid: &Grid) -> Self {
        Self { grid: grid.clone(), values: grid.points().to_vec() }
    }

    /// Builds a warp from approximately valid values: clamps into [0,1],
    /// pins the endpoints and removes downward roundoff.
    pub(crate) fn repaired(grid: &Grid, mut values: Vec<f64>) -> Self {
        let n = values.len();
        values[0] = 0.0;
        values[n - 1] = 1.0;
        let mut run = 0.0_f64;
        for v in values.iter_mut() {
            run = run.max(v.clamp(0.0, 1.0));
            *v = run;
        }
        values[n - 1] = 1.0;
        Self { grid: grid.clone(), values }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl OnGrid for Warping {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Point on the unit sphere of L²[0,1]; warps land in the positive orthant.
#[derive(Clone, Debug, PartialEq)]
pub struct Psi {
    grid: Grid,
    values: Vec<f64>,
}

impl Psi {
    /// Validating constructor for square-root densities: unit norm and
    /// nonnegative values.
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("psi values do not match grid"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("psi must be nonnegative"));
        }
        let norm = l2_norm(&grid, &values);
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::invalid(format!("psi must have unit norm, got {norm}")));
        }
        Ok(Self { grid, values })
    }

    pub fn one(grid: &Grid) -> Self {
        Self { grid: grid.clone(), values: vec![1.0; grid.len()] }
    }

    fn normalized(grid: &Grid, mut values: Vec<f64>) -> Self {
        let norm = l2_norm(grid, &values);
        values.iter_mut().for_each(|v| *v /= norm);
        Self { grid: grid.clone(), values }
    }
}

impl OnGrid for Psi {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Element of the tangent space at `ψ ≡ 1`: zero-mean L² function.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl TangentFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tangent values do not match grid"));
        }
        let mean = trapz(&grid, &values);
        if mean.abs() > TANGENT_TOL {
            return Err(Error::invalid(format!("tangent function has nonzero mean {mean:e}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zero(grid: &Grid) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> Self {
        Self { grid: grid.clone(), values }
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.grid, &self.values)
    }
}

impl OnGrid for TangentFunction {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

pub fn gamma_to_psi(gamma: &Warping) -> Psi {
    let slope = diff_values(&gamma.grid, &gamma.values);
    let raw = slope.into_iter().map(|s| s.max(0.0).sqrt()).collect();
    Psi::normalized(&gamma.grid, raw)
}

/// `γ(t) = ∫₀ᵗ ψ²`, rescaled so that `γ(1) = 1`.
pub fn psi_to_gamma(psi: &Psi) -> Warping {
    let sq: Vec<f64> = psi.values.iter().map(|v| v * v).collect();
    let mut gamma = cumtrapz(&psi.grid, &sq);
    let total = gamma[gamma.len() - 1];
    gamma.iter_mut().for_each(|v| *v /= total);
    Warping::repaired(&psi.grid, gamma)
}

/// Inverse warp `γ⁻¹` by linear interpolation of the swapped graph.
pub fn invert_warping(gamma: &Warping) -> Warping {
    let t = gamma.grid.points();
    let g = &gamma.values;
    let mut out = Vec::with_capacity(t.len());
    let mut j = 0;
    for &s in t {
        while j + 2 < g.len() && g[j + 1] < s {
            j += 1;
        }
        let (g0, g1) = (g[j], g[j + 1]);
        let v = if g1 > g0 { t[j] + (s - g0) / (g1 - g0) * (t[j + 1] - t[j]) } else { t[j] };
        out.push(v);
    }
    Warping::repaired(&gamma.grid, out)
}

fn exp_at(grid: &Grid, base: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(grid, v);
    if norm >= INJECTIVITY_LIMIT {
        return Err(Error::OutOfInjectivity { norm, limit: INJECTIVITY_LIMIT });
    }
    if norm < TINY {
        return Ok(base.to_vec());
    }
    let (s, c) = norm.sin_cos();
    let mut out: Vec<f64> = base.iter().zip(v).map(|(b, x)| c * b + s * x / norm).collect();
    let n2 = l2_norm(grid, &out);
    out.iter_mut().for_each(|x| *x /= n2);
    Ok(out)
}

fn log_at(grid: &Grid, base: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let cos_theta = inner(grid, base, x).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    if theta >= INJECTIVITY_LIMIT {
        return Err(Error::OutOfInjectivity { norm: theta, limit: INJECTIVITY_LIMIT });
    }
    if theta < TINY {
        return Ok(vec![0.0; x.len()]);
    }
    let scale = theta / theta.sin();
    Ok(x.iter().zip(base).map(|(xi, bi)| scale * (xi - cos_theta * bi)).collect())
}

/// Exponential map at the identity: `cos‖g‖ + sin‖g‖·g/‖g‖`.
pub fn exp_map(g: &TangentFunction) -> Result<Psi> {
    let one = vec![1.0; g.grid.len()];
    let values = exp_at(&g.grid, &one, &g.values)?;
    Ok(Psi { grid: g.grid.clone(), values })
}

/// Inverse exponential map at the identity.
pub fn inv_exp_map(psi: &Psi) -> Result<TangentFunction> {
    let one = vec![1.0; psi.grid.len()];
    let values = log_at(&psi.grid, &one, &psi.values)?;
    Ok(TangentFunction { grid: psi.grid.clone(), values })
}

/// Arc length between two sphere points, in [0, π].
pub fn geodesic_dist(a: &Psi, b: &Psi) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(inner(&a.grid, &a.values, &b.values).clamp(-1.0, 1.0).acos())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterStat {
    Mean,
    Median,
}

impl std::str::FromStr for CenterStat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(CenterStat::Mean),
            "median" => Ok(CenterStat::Median),
            other => Err(Error::Config(format!("unknown center statistic {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct KarcherResult {
    pub center: Psi,
    pub converged: bool,
    pub iterations: usize,
}

const KARCHER_STEP: f64 = 0.5;
const KARCHER_TOL: f64 = 1e-6;
const KARCHER_MAX_ITER: usize = 100;

fn karcher_cost(grid: &Grid, mu: &[f64], samples: &[Psi], stat: CenterStat) -> f64 {
    samples
        .iter()
        .map(|s| {
            let d = inner(grid, mu, &s.values).clamp(-1.0, 1.0).acos();
            match stat {
                CenterStat::Mean => d * d,
                CenterStat::Median => d,
            }
        })
        .sum()
}

/// Intrinsic mean (or median) on the sphere by Riemannian gradient descent,
/// started from the normalized chordal average.
pub fn karcher_center(samples: &[Psi], stat: CenterStat) -> Result<KarcherResult> {
    let first = samples.first().ok_or_else(|| Error::invalid("karcher center of empty set"))?;
    let grid = first.grid.clone();
    for s in samples {
        grid.check_same(&s.grid)?;
    }
    let n = grid.len();
    let mut sum = vec![0.0; n];
    for s in samples {
        sum.iter_mut().zip(&s.values).for_each(|(a, b)| *a += b);
    }
    let norm = l2_norm(&grid, &sum);
    let mut mu = if norm > TINY {
        sum.into_iter().map(|v| v / norm).collect()
    } else {
        first.values.clone()
    };
    let spread = samples
        .iter()
        .map(|s| inner(&grid, &mu, &s.values).clamp(-1.0, 1.0).acos())
        .fold(0.0, f64::max);
    if spread >= std::f64::consts::FRAC_PI_2 {
        warn!("karcher_center: samples spread {spread:.3} rad from their chordal average");
    }

    let mut cost = karcher_cost(&grid, &mu, samples, stat);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < KARCHER_MAX_ITER {
        iterations += 1;
        let mut update = vec![0.0; n];
        let mut weight = 0.0;
        for s in samples {
            let v = log_at(&grid, &mu, &s.values)?;
            let w = match stat {
                CenterStat::Mean => 1.0,
                CenterStat::Median => {
                    let d = l2_norm(&grid, &v);
                    if d < TINY {
                        continue;
                    }
                    1.0 / d
                }
            };
            weight += w;
            update.iter_mut().zip(&v).for_each(|(u, x)| *u += w * x);
        }
        if weight == 0.0 {
            converged = true;
            break;
        }
        update.iter_mut().for_each(|u| *u /= weight);
        if l2_norm(&grid, &update) < KARCHER_TOL {
            converged = true;
            break;
        }
        let mut step = KARCHER_STEP;
        let mut moved = false;
        for _ in 0..30 {
            let scaled: Vec<f64> = update.iter().map(|u| step * u).collect();
            let cand = exp_at(&grid, &mu, &scaled)?;
            let cand_cost = karcher_cost(&grid, &cand, samples, stat);
            if cand_cost < cost {
                mu = cand;
                cost = cand_cost;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            // No descent possible at machine precision: treat as a stationary point.
            converged = true;
            break;
        }
    }
    Ok(KarcherResult { center: Psi { grid, values: mu }, converged, iterations })
}

/// Dense symmetric matrix of pairwise geodesic distances (row-major).
pub fn pairwise_distances(samples: &[Psi]) -> Result<Vec<f64>> {
    let n = samples.len();
    if let Some(first) = samples.first() {
        for s in samples {
            first.grid.check_same(&s.grid)?;
        }
    }
    let weights = samples.first().map(|s| s.grid.trapz_weights()).unwrap_or_default();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = &samples[i].values;
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let b = &samples[j].values;
                    let ip: f64 = weights.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum();
                    ip.clamp(-1.0, 1.0).acos()
                })
                .collect()
        })
        .collect();
    let mut d = rows.concat();
    // Exact symmetry regardless of summation order.
    for i in 0..n {
        for j in i + 1..n {
            let v = d[i * n + j];
            d[j * n + i] = v;
        }
    }
    Ok(d)
}

/// Default merge threshold for [`cluster_modes`], in radians.
pub const DEFAULT_TAU_CLUSTER: f64 = 0.15;

/// Complete-linkage hierarchical clustering of sphere points.
///
/// Picks the largest cluster count `k ≤ k_max` whose smallest between-cluster
/// linkage exceeds `tau`. Labels are contiguous and numbered in order of first
/// appearance.
pub fn cluster_modes(samples: &[Psi], k_max: usize, tau: f64) -> Result<Vec<usize>> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot cluster an empty sample set"));
    }
    let d = pairwise_distances(samples)?;
    Ok(cluster_distance_matrix(d, samples.len(), k_max, tau))
}

/// Same as [`cluster_modes`] on a precomputed row-major distance matrix.
pub fn cluster_distance_matrix(mut d: Vec<f64>, n: usize, k_max: usize, tau: f64) -> Vec<usize> {
    let k_max = k_max.max(1);
    if n == 1 {
        return vec![0];
    }
    // Nearest-neighbour chain: O(n²) for complete linkage.
    let mut active = vec![true; n];
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut merges: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("active cluster"));
        }
        loop {
            let a = *chain.last().unwrap();
            let prev = if chain.len() >= 2 { Some(chain[chain.len() - 2]) } else { None };
            let (mut best, mut best_d) = match prev {
                Some(p) => (p, d[a * n + p]),
                None => (usize::MAX, f64::INFINITY),
            };
            for j in 0..n {
                if j != a && active[j] && d[a * n + j] < best_d {
                    best = j;
                    best_d = d[a * n + j];
                }
            }
            if Some(best) == prev {
                break;
            }
            chain.push(best);
        }
        let b = chain.pop().unwrap();
        let a = chain.pop().unwrap();
        let (keep, drop) = (a.min(b), a.max(b));
        merges.push((keep, drop, d[a * n + b]));
        for k in 0..n {
            if active[k] && k != keep && k != drop {
                let v = d[keep * n + k].max(d[drop * n + k]);
                d[keep * n + k] = v;
                d[k * n + keep] = v;
            }
        }
        active[drop] = false;
        remaining -= 1;
    }
    merges.sort_by(|x, y| x.2.total_cmp(&y.2));

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut clusters = n;
    for &(a, b, h) in &merges {
        if clusters <= k_max && h > tau {
            break;
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
            clusters -= 1;
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut root_label = std::collections::HashMap::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        let next = root_label.len();
        labels[i] = *root_label.entry(r).or_insert(next);
    }
    labels
}
