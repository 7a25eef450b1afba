//! Dynamic-programming alignment over monotone lattice paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdcore::{interp_linear, Grid, OnGrid, Srvf};
use crate::geom::Warping;

/// Largest lattice the exhaustive enumerator accepts.
pub const EXHAUSTIVE_MAX: usize = 8;

/// Seven-neighbour stencil of lattice steps `(Δt, Δγ)`.
pub const SEVEN_NEIGHBOUR_SLOPES: [(usize, usize); 7] = [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (2, 3), (3, 2)];

/// Default steps: every coprime `(Δt, Δγ)` with entries up to 6. The finer
/// slope set keeps `√γ̇` from being quantized too coarsely on fine lattices.
pub const DEFAULT_SLOPES: [(usize, usize); 23] = [
    (1, 1),
    (1, 2),
    (2, 1),
    (1, 3),
    (3, 1),
    (2, 3),
    (3, 2),
    (1, 4),
    (4, 1),
    (3, 4),
    (4, 3),
    (1, 5),
    (5, 1),
    (2, 5),
    (5, 2),
    (3, 5),
    (5, 3),
    (4, 5),
    (5, 4),
    (1, 6),
    (6, 1),
    (5, 6),
    (6, 5),
];

/// 10-point Gauss-Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 10] = [
    -0.973_906_528_517_171_7,
    -0.865_063_366_688_984_5,
    -0.679_409_568_299_024_4,
    -0.433_395_394_129_247_2,
    -0.148_874_338_981_631_2,
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 10] = [
    0.066_671_344_308_688_1,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_0,
    0.269_266_719_309_996_4,
    0.295_524_224_714_752_9,
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982_0,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Lattice points per axis; `None` uses the working grid size.
    pub m: Option<usize>,
    pub slopes: Vec<(usize, usize)>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { m: None, slopes: DEFAULT_SLOPES.to_vec() }
    }
}

impl DpConfig {
    pub fn with_m(m: usize) -> Self {
        Self { m: Some(m), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m.is_some_and(|m| m < 2) {
            return Err(Error::Config("DP lattice needs at least 2 points per axis".into()));
        }
        if self.slopes.is_empty() || self.slopes.iter().any(|&(a, b)| a == 0 || b == 0) {
            return Err(Error::Config("DP slopes must be nonempty with positive steps".into()));
        }
        Ok(())
    }
}

/// Optimal lattice path and its objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct DpSolution {
    pub warp: Warping,
    /// Lattice nodes `(t, γ(t))` of the optimal path.
    pub path: Vec<(f64, f64)>,
    pub cost: f64,
}

struct SegmentCost<'a> {
    grid: &'a Grid,
    q1: &'a [f64],
    q2: &'a [f64],
    nodes: Vec<f64>,
}

impl SegmentCost<'_> {
    /// `∫ₐᵇ (q₁(t) − q₂(γ(t))·√γ̇)² dt` along a straight segment. The
    /// segment is split wherever `t` or `γ(t)` crosses a grid node, so each
    /// piece integrates a polynomial and the quadrature is exact for the
    /// linearly interpolated SRVFs.
    fn cost(&self, (i0, j0): (usize, usize), (i1, j1): (usize, usize)) -> f64 {
        let (a, b) = (self.nodes[i0], self.nodes[i1]);
        let (c, d) = (self.nodes[j0], self.nodes[j1]);
        let slope = (d - c) / (b - a);
        let root = slope.sqrt();
        let pts = self.grid.points();
        let inside = |lo: f64, hi: f64| {
            let first = pts.partition_point(|&x| x <= lo);
            let last = pts.partition_point(|&x| x < hi);
            &pts[first..last.max(first)]
        };
        let mut cuts: Vec<f64> = Vec::with_capacity(8);
        cuts.push(a);
        cuts.extend_from_slice(inside(a, b));
        cuts.extend(inside(c, d).iter().map(|&u| a + (u - c) / slope));
        cuts.push(b);
        cuts.sort_by(f64::total_cmp);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            if hi <= lo {
                continue;
            }
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            let mut piece = 0.0;
            for (x, wt) in GL_NODES.iter().zip(&GL_WEIGHTS) {
                let t = mid + half * x;
                let gamma = (c + slope * (t - a)).clamp(0.0, 1.0);
                let r = interp_linear(self.grid, self.q1, t) - interp_linear(self.grid, self.q2, gamma) * root;
                piece += wt * r * r;
            }
            total += piece * half;
        }
        total
    }
}

fn setup<'a>(q1: &'a Srvf, q2: &'a Srvf, m: usize) -> Result<SegmentCost<'a>> {
    q1.grid().check_same(q2.grid())?;
    let nodes = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    Ok(SegmentCost { grid: q1.grid(), q1: q1.values(), q2: q2.values(), nodes })
}

fn to_solution(grid: &Grid, nodes: &[f64], path: &[(usize, usize)], cost: f64) -> DpSolution {
    let pts: Vec<(f64, f64)> = path.iter().map(|&(i, j)| (nodes[i], nodes[j])).collect();
    let mut k = 0;
    let values = grid
        .points()
        .iter()
        .map(|&t| {
            while k + 2 < pts.len() && pts[k + 1].0 < t {
                k += 1;
            }
            let ((t0, g0), (t1, g1)) = (pts[k], pts[k + 1]);
            let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            g0 + s * (g1 - g0)
        })
        .collect();
    DpSolution { warp: Warping::repaired(grid, values), path: pts, cost }
}

/// Minimize `‖q₁ − (q₂,γ)‖²` over monotone piecewise-linear lattice paths
/// from (0,0) to (1,1).
pub fn dp_align(q1: &Srvf, q2: &Srvf, cfg: &DpConfig) -> Result<DpSolution> {
    cfg.validate()?;
    let m = cfg.m.unwrap_or(q1.grid().len());
    let seg = setup(q1, q2, m)?;
    let mut energy = vec![f64::INFINITY; m * m];
    let mut parent = vec![usize::MAX; m * m];
    energy[0] = 0.0;
    for i in 1..m {
        for j in 1..m {
            let mut best = f64::INFINITY;
            let mut arg = usize::MAX;
            for &(di, dj) in &cfg.slopes {
                if di > i || dj > j {
                    continue;
                }
                let prev = (i - di) * m + (j - dj);
                if !energy[prev].is_finite() {
                    continue;
                }
                let e = energy[prev] + seg.cost((i - di, j - dj), (i, j));
                if e < best {
                    best = e;
                    arg = prev;
                }
            }
            energy[i * m + j] = best;
            parent[i * m + j] = arg;
        }
    }
    let end = m * m - 1;
    if !energy[end].is_finite() {
        return Err(Error::Numerical("no admissible lattice path with the given slopes".into()));
    }
    let mut path = vec![(m - 1, m - 1)];
    let mut at = end;
    while at != 0 {
        at = parent[at];
        path.push((at / m, at % m));
    }
    path.reverse();
    Ok(to_solution(q1.grid(), &seg.nodes, &path, energy[end]))
}

/// Enumerate every admissible lattice path and return the global optimum.
/// Only for small lattices (`m ≤ EXHAUSTIVE_MAX`).
pub fn exhaustive_align(q1: &Srvf, q2: &Srvf, m: usize, slopes: &[(usize, usize)]) -> Result<DpSolution> {
    if !(2..=EXHAUSTIVE_MAX).contains(&m) {
        return Err(Error::invalid(format!("exhaustive search needs 2 <= M <= {EXHAUSTIVE_MAX}, got {m}")));
    }
    DpConfig { m: Some(m), slopes: slopes.to_vec() }.validate()?;
    let seg = setup(q1, q2, m)?;
    let mut best = (f64::INFINITY, Vec::new());
    let mut path = vec![(0, 0)];
    fn walk(
        seg: &SegmentCost<'_>,
        slopes: &[(usize, usize)],
        m: usize,
        path: &mut Vec<(usize, usize)>,
        acc: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        let (i, j) = *path.last().expect("path starts at the origin");
        if (i, j) == (m - 1, m - 1) {
            if acc < best.0 {
                *best = (acc, path.clone());
            }
            return;
        }
        for &(di, dj) in slopes {
            let next = (i + di, j + dj);
            if next.0 < m && next.1 < m {
                let c = acc + seg.cost((i, j), next);
                path.push(next);
                walk(seg, slopes, m, path, c, best);
                path.pop();
            }
        }
    }
    walk(&seg, slopes, m, &mut path, 0.0, &mut best);
    if !best.0.is_finite() {
        return Err(Error::Numerical("no admissible lattice path with the given slopes".into()));
    }
    Ok(to_solution(q1.grid(), &seg.nodes, &best.1, best.0))
}
