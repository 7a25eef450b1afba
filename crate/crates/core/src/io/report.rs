//! Run summaries and the plot-ready files written next to them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::data::{csv_io, fmt, smooth_for_dp};
use crate::diagnostics::{chain_diagnostics, effective_sample_size, trace_names, traces, ChainDiagnostics};
use crate::dpalign::{dp_align, DpConfig};
use crate::error::{Error, Result};
use crate::fdcore::{sse, to_srvf, warp_function, Grid, OnGrid, SampledFunction};
use crate::geom::Warping;
use crate::multichain::{pointwise_quantiles, PooledPosterior};
use crate::samplers::TunedSteps;

/// One mode with its comparison to the DP baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub count: usize,
    pub amplitude_distance: f64,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Point-wise SSE between the center and the DP warp on raw data.
    pub sse_vs_dp: f64,
    /// Same against DP on GP-smoothed data.
    pub sse_vs_dp_smooth: f64,
    /// Fraction of grid points where the raw-data DP warp lies in the band.
    pub dp_coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    #[serde(flatten)]
    pub diagnostics: ChainDiagnostics,
    pub tuned: TunedSteps,
    pub failure: Option<String>,
}

/// Everything needed to reproduce and audit a run. Wall-clock timings are
/// kept apart so that reruns compare byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub grid: Vec<f64>,
    pub pooled_draws: usize,
    pub best_mode: usize,
    pub modes: Vec<ModeReport>,
    pub dp_warp: Vec<f64>,
    pub dp_smooth_warp: Vec<f64>,
    pub chains: Vec<ChainReport>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_s: f64,
    pub sampling_s: f64,
    pub dp_s: f64,
    pub report_s: f64,
}

/// DP warp aligning `y2` to `y1`.
pub fn dp_warp(y1: &SampledFunction, y2: &SampledFunction, cfg: &DpConfig) -> Result<Warping> {
    Ok(dp_align(&to_srvf(y1)?, &to_srvf(y2)?, cfg)?.warp)
}

/// Summarize a pooled posterior against DP on the raw and smoothed data.
pub fn build_report(
    cfg: &RunConfig,
    post: &PooledPosterior,
    y1: &SampledFunction,
    y2: &SampledFunction,
) -> Result<RunReport> {
    if post.modes.is_empty() {
        return Err(Error::Run("posterior has no modes".into()));
    }
    let grid = post.grid();
    let dp = dp_warp(y1, y2, &cfg.dp_config())?;
    let dps = dp_warp(&smooth_for_dp(y1)?, &smooth_for_dp(y2)?, &cfg.dp_config())?;
    let modes = post
        .modes
        .iter()
        .map(|m| {
            let c = m.center_warp(grid)?;
            Ok(ModeReport {
                count: m.count,
                amplitude_distance: m.amplitude_distance,
                center: m.center.clone(),
                lower: m.lower.clone(),
                upper: m.upper.clone(),
                sse_vs_dp: sse(&c, &dp)?,
                sse_vs_dp_smooth: sse(&c, &dps)?,
                dp_coverage: m.coverage(dp.values()),
            })
        })
        .collect::<Result<_>>()?;
    let chains = post
        .chains
        .iter()
        .map(|c| ChainReport { diagnostics: chain_diagnostics(c), tuned: c.tuned, failure: c.failure.clone() })
        .collect();
    Ok(RunReport {
        config: cfg.clone(),
        seeds: post.chains.iter().map(|c| c.seed).collect(),
        grid: grid.points().to_vec(),
        pooled_draws: post.len(),
        best_mode: post.best,
        modes,
        dp_warp: dp.into_values(),
        dp_smooth_warp: dps.into_values(),
        chains,
    })
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(dir.join(name)).map_err(csv_io)
}

fn row(w: &mut csv::Writer<fs::File>, fields: impl IntoIterator<Item = String>) -> Result<()> {
    w.write_record(fields.into_iter().collect::<Vec<_>>()).map_err(csv_io)
}

/// Pointwise median and 95% band of a curve over all pooled draws.
fn write_band(dir: &Path, name: &str, grid: &Grid, rows: &[&[f64]]) -> Result<()> {
    let q = pointwise_quantiles(rows, &[0.5, 0.025, 0.975]);
    let mut w = writer(dir, name)?;
    row(&mut w, ["t", "median", "lower", "upper"].map(String::from))?;
    for (i, t) in grid.points().iter().enumerate() {
        row(&mut w, [fmt(*t), fmt(q[0][i]), fmt(q[1][i]), fmt(q[2][i])])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `summary.json` and the CSV tables. Every warp is checked for
/// boundary values and monotonicity first.
pub fn write_report(report: &RunReport, post: &PooledPosterior, outdir: &Path) -> Result<()> {
    if report.modes.is_empty() || post.modes.is_empty() {
        return Err(Error::Run("report must contain at least one mode".into()));
    }
    let grid = post.grid();
    for k in 0..post.len() {
        Warping::new(grid.clone(), post.gamma(k).to_vec())?;
    }
    for m in &report.modes {
        Warping::new(grid.clone(), m.center.clone())?;
    }
    fs::create_dir_all(outdir)?;

    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Run(e.to_string()))?;
    fs::write(outdir.join("summary.json"), json + "\n")?;

    let n = grid.len();
    let mut w = writer(outdir, "gamma_samples.csv")?;
    row(&mut w, ["seed", "draw", "label"].map(String::from).into_iter().chain((0..n).map(|i| format!("gamma_{i}"))))?;
    for k in 0..post.len() {
        let (c, i) = post.index[k];
        let head = [post.chains[c].seed.to_string(), i.to_string(), post.labels[k].to_string()];
        row(&mut w, head.into_iter().chain(post.gamma(k).iter().map(|v| fmt(*v))))?;
    }
    w.flush()?;

    let all: Vec<usize> = (0..post.len()).collect();
    write_band(outdir, "f1_posterior.csv", grid, &all.iter().map(|&k| post.f1(k)).collect::<Vec<_>>())?;
    write_band(outdir, "f2_posterior.csv", grid, &all.iter().map(|&k| post.f2(k)).collect::<Vec<_>>())?;

    let best: Vec<usize> = post.members(post.best).collect();
    let f1 = post.median_f(0, &best)?;
    let f2 = post.median_f(1, &best)?;
    let warped = warp_function(&f2, &post.modes[post.best].center_warp(grid)?)?;
    let mut w = writer(outdir, "warped_f2.csv")?;
    row(&mut w, ["t", "f1", "f2", "f2_warped"].map(String::from))?;
    for i in 0..n {
        row(&mut w, [fmt(grid.points()[i]), fmt(f1.values()[i]), fmt(f2.values()[i]), fmt(warped.values()[i])])?;
    }
    w.flush()?;

    let m = post.chains.iter().find_map(|c| c.coeffs.first().map(|v| v.len())).unwrap_or(0);
    let mut w = writer(outdir, "traces.csv")?;
    row(&mut w, ["seed", "draw"].map(String::from).into_iter().chain(trace_names(m)))?;
    for c in &post.chains {
        let cols = traces(c);
        for i in 0..c.len() {
            row(&mut w, [c.seed.to_string(), i.to_string()].into_iter().chain(cols.iter().map(|col| fmt(col[i]))))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock timings go to their own `timings.json`.
pub fn write_timings(outdir: &Path, t: &Timings) -> Result<()> {
    fs::create_dir_all(outdir)?;
    let json = serde_json::to_string_pretty(t).map_err(|e| Error::Run(e.to_string()))?;
    fs::write(outdir.join("timings.json"), json + "\n")?;
    Ok(())
}

/// Per-chain ESS recomputed from a saved `traces.csv`.
pub fn ess_from_traces(path: &Path) -> Result<Vec<(u64, Vec<(String, f64)>)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_io)?;
    let head: Vec<String> = rdr.headers().map_err(csv_io)?.iter().map(String::from).collect();
    if head.len() < 3 || head[0] != "seed" || head[1] != "draw" {
        return Err(Error::Parse { line: 1, msg: "expected a traces header starting with seed,draw".into() });
    }
    let names = &head[2..];
    let mut chains: Vec<(u64, Vec<Vec<f64>>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_io)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| Error::Parse { line, msg };
        if rec.len() != head.len() {
            return Err(bad(format!("expected {} fields, found {}", head.len(), rec.len())));
        }
        let seed: u64 = rec[0].parse().map_err(|_| bad(format!("bad seed {:?}", &rec[0])))?;
        if chains.last().is_none_or(|c| c.0 != seed) {
            chains.push((seed, vec![Vec::new(); names.len()]));
        }
        let cols = &mut chains.last_mut().expect("pushed above").1;
        for (k, f) in rec.iter().skip(2).enumerate() {
            cols[k].push(f.parse().map_err(|_| bad(format!("column {}: not a number: {f:?}", names[k])))?);
        }
    }
    Ok(chains
        .into_iter()
        .map(|(s, cols)| (s, names.iter().cloned().zip(cols.iter().map(|c| effective_sample_size(c))).collect()))
        .collect())
}
