//! Replicated SSE comparison of the Bayesian median warp against DP on the
//! simulated pair.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{simulate_pair, smooth_for_dp, SimSpec};
use super::report::dp_warp;
use crate::error::Result;
use crate::fdcore::{sse, OnGrid};
use crate::geom::Warping;
use crate::multichain::run_parallel;

/// SSE of each method against the nearest noise-free optimal warp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SseRow {
    /// Best over the posterior modes' center warps.
    pub bayes: f64,
    pub dp_raw: f64,
    pub dp_smooth: f64,
    pub modes: usize,
}

/// `t ↦ 1 − γ(1−t)`, the warp that aligns the time-reversed pair.
pub fn mirror(gamma: &Warping) -> Result<Warping> {
    let v = gamma.values();
    let n = v.len();
    Warping::new(gamma.grid().clone(), (0..n).map(|i| 1.0 - v[n - 1 - i]).collect())
}

/// Optimal warps of the noise-free pair: the DP solution and its mirror
/// image. With both curves symmetric about 1/2 the two align equally well,
/// so either is a correct answer.
pub fn reference_warps(spec: &SimSpec, cfg: &RunConfig) -> Result<[Warping; 2]> {
    let quiet = SimSpec { noise1: 0.0, noise2: 0.0, ..spec.clone() };
    let s = simulate_pair(&quiet, 0)?;
    let g = dp_warp(&s.f1, &s.f2, &cfg.dp_config())?;
    let m = mirror(&g)?;
    Ok([g, m])
}

fn nearest(gamma: &Warping, refs: &[Warping]) -> Result<f64> {
    refs.iter().map(|r| sse(gamma, r)).try_fold(f64::INFINITY, |acc, s| Ok(acc.min(s?)))
}

/// One replicate: simulate from `sim_seed`, run the chains from
/// `cfg.seed`, and score every method against `refs`.
pub fn replicate(spec: &SimSpec, cfg: &RunConfig, sim_seed: u64, refs: &[Warping]) -> Result<SseRow> {
    let s = simulate_pair(spec, sim_seed)?;
    let post = run_parallel(&s.y1, &s.y2, &cfg.chain_config(), &cfg.pool_config())?;
    let grid = post.grid();
    let bayes = post
        .modes
        .iter()
        .map(|m| nearest(&m.center_warp(grid)?, refs))
        .try_fold(f64::INFINITY, |acc, s: Result<f64>| Ok::<_, crate::Error>(acc.min(s?)))?;
    let raw = dp_warp(&s.y1, &s.y2, &cfg.dp_config())?;
    let smooth = dp_warp(&smooth_for_dp(&s.y1)?, &smooth_for_dp(&s.y2)?, &cfg.dp_config())?;
    Ok(SseRow { bayes, dp_raw: nearest(&raw, refs)?, dp_smooth: nearest(&smooth, refs)?, modes: post.modes.len() })
}

/// `R` replicates; replicate `r` simulates from `cfg.seed + r` and seeds
/// its chains from `cfg.seed + 1000·(r+1)`.
pub fn replicate_study(spec: &SimSpec, cfg: &RunConfig, replicates: usize) -> Result<Vec<SseRow>> {
    let refs = reference_warps(spec, cfg)?;
    (0..replicates as u64)
        .map(|r| {
            let run = RunConfig { seed: cfg.seed.wrapping_add(1000 * (r + 1)), ..cfg.clone() };
            let row = replicate(spec, &run, cfg.seed.wrapping_add(r), &refs)?;
            log::info!("replicate {r}: {row:?}");
            Ok(row)
        })
        .collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcore::{l2_dist, to_srvf, warp_srvf, Grid};

    #[test]
    fn mirror_is_an_involution() {
        let g = Grid::uniform(41).unwrap();
        let w = Warping::from_fn(&g, |t| t * t).unwrap();
        let m = mirror(&w).unwrap();
        assert!((m.values()[20] - 0.75).abs() < 1e-12);
        for (a, b) in mirror(&m).unwrap().values().iter().zip(w.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn mirrored_reference_aligns_as_well() {
        let cfg = RunConfig::default();
        let spec = SimSpec::default();
        let [a, b] = reference_warps(&spec, &cfg).unwrap();
        let s = simulate_pair(&SimSpec { noise1: 0.0, noise2: 0.0, ..spec }, 0).unwrap();
        let (q1, q2) = (to_srvf(&s.f1).unwrap(), to_srvf(&s.f2).unwrap());
        let da = l2_dist(&q1, &warp_srvf(&q2, &a).unwrap()).unwrap();
        let db = l2_dist(&q1, &warp_srvf(&q2, &b).unwrap()).unwrap();
        assert!((da - db).abs() < 1e-9 * (1.0 + da), "{da} {db}");
        // One bump cannot become two, so only part of the distance goes.
        assert!(da < 0.6 * l2_dist(&q1, &q2).unwrap());
        // The optima are distinct: the bump of f2 matches either peak of f1.
        assert!(sse(&a, &b).unwrap() > 0.1, "{}", sse(&a, &b).unwrap());
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
