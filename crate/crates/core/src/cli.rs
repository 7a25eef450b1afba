//! Command-line surface. Exit codes: 0 success, 2 configuration or input
//! error (including bad flags), 3 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::basis::BasisFamily;
use crate::error::{Error, Result};
use crate::fdcore::{sse, OnGrid, SampledFunction};
use crate::geom::{CenterStat, Warping};
use crate::io::{self, RunConfig, SimSpec, Timings};
use crate::multichain::run_parallel;
use crate::samplers::WarpSampler;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "warpbayes", version, about = "Bayesian elastic registration of function pairs")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a simulated two-peak/one-peak pair as `t,y1,y2`.
    Simulate(SimulateArgs),
    /// Full pipeline: chains, pooling, clustering, DP comparison, report.
    AlignBayes(RunArgs),
    /// DP baseline only.
    AlignDp(DpArgs),
    /// Repeat the simulated SSE comparison and print a Bayes / DP(y) / DP(f) table.
    ReplicateStudy(StudyArgs),
    /// Recompute ESS from a saved `traces.csv` and show acceptance rates.
    Diagnostics(DiagArgs),
}

#[derive(Args, Debug, Default)]
struct SimFlags {
    /// Grid points.
    #[arg(long = "points")]
    points: Option<usize>,
    /// Noise variance of both curves.
    #[arg(long)]
    noise: Option<f64>,
}

impl SimFlags {
    fn spec(&self) -> SimSpec {
        let d = SimSpec::default();
        let noise = self.noise.unwrap_or(d.noise1);
        SimSpec { n: self.points.unwrap_or(d.n), noise1: noise, noise2: noise, ..d }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the noise-free curves here as `t,y1,y2`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    sim: SimFlags,
}

/// Flags shared by the sampling commands; each overrides one config key.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// Flat TOML file; its keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report directory [default: out].
    #[arg(long)]
    outdir: Option<PathBuf>,
    /// Base seed; chain k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent chains.
    #[arg(long)]
    chains: Option<usize>,
    /// Iterations per chain, burn-in included.
    #[arg(long)]
    iterations: Option<usize>,
    /// Iterations discarded per chain; step sizes adapt only here.
    #[arg(long)]
    burn_in: Option<usize>,
    /// Keep every n-th post-burn-in draw.
    #[arg(long)]
    thin: Option<usize>,
    /// Warp kernel.
    #[arg(long)]
    sampler: Option<WarpSampler>,
    /// Tangent basis family.
    #[arg(long)]
    family: Option<BasisFamily>,
    /// Number of tangent basis coefficients.
    #[arg(long)]
    n_v: Option<usize>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Working grid size.
    #[arg(long = "grid-points")]
    n: Option<usize>,
    /// Fraction of input samples kept by uniform decimation.
    #[arg(long)]
    subsample: Option<f64>,
    /// Center statistic of each mode.
    #[arg(long)]
    stat: Option<CenterStat>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// `t,y1,y2` file, or the first `t,y` file with `--input2`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Second `t,y` file; `--input` is then the first.
    #[arg(long)]
    input2: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct DpArgs {
    /// `t,y1,y2` file, or the first `t,y` file with `--input2`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    input2: Option<PathBuf>,
    /// Smooth both curves by GP regression before aligning.
    #[arg(long)]
    smooth: bool,
    /// Write `dp_warp.csv` here.
    #[arg(long)]
    outdir: Option<PathBuf>,
    #[arg(long = "grid-points")]
    n: Option<usize>,
    #[arg(long)]
    subsample: Option<f64>,
    /// Lattice points per axis.
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(long, default_value_t = 25)]
    replicates: usize,
    #[command(flatten)]
    sim: SimFlags,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct DiagArgs {
    /// Output directory of an `align-bayes` run.
    #[arg(long)]
    outdir: PathBuf,
}

impl ConfigFlags {
    /// Defaults, then these flags, then the config file, then the environment.
    fn resolve(&self, input: Option<PathBuf>, input2: Option<PathBuf>) -> Result<RunConfig> {
        let mut c = RunConfig { input, input2, ..RunConfig::default() };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        set!(outdir, seed, chains, iterations, burn_in, thin, sampler, family, n_v, subsample, stat);
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        if self.n.is_some() {
            c.n = self.n;
        }
        if let Some(p) = &self.config {
            c.merge_file(p)?;
        }
        c.merge_env(|k| std::env::var(k).ok())?;
        c.validate()?;
        log::info!("resolved config (seed {}):\n{}", c.seed, c.to_toml());
        Ok(c)
    }
}

fn load(cfg: &RunConfig) -> Result<(SampledFunction, SampledFunction)> {
    let input = cfg.input.as_deref().ok_or_else(|| Error::Config("--input is required".into()))?;
    match &cfg.input2 {
        Some(p2) => io::load_pair_files(input, p2, &cfg.load_options()),
        None => io::load_pair(input, &cfg.load_options()),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().map_err(|e| Error::Run(e.to_string()))?.install(f)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let spec = a.sim.spec();
    log::info!("simulate seed {} spec {spec:?}", a.seed);
    let s = io::simulate_pair(&spec, a.seed)?;
    io::write_pair(&a.out, &s.y1, &s.y2)?;
    if let Some(t) = &a.truth {
        io::write_pair(t, &s.f1, &s.f2)?;
    }
    Ok(())
}

fn align_bayes(a: &RunArgs) -> Result<()> {
    let cfg = a.flags.resolve(a.input.clone(), a.input2.clone())?;
    let t0 = Instant::now();
    let (y1, y2) = load(&cfg)?;
    let load_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let post = with_threads(cfg.threads, || run_parallel(&y1, &y2, &cfg.chain_config(), &cfg.pool_config()))?;
    let sampling_s = t1.elapsed().as_secs_f64();
    for (seed, why) in post.failures() {
        log::warn!("chain {seed} stopped early: {why}");
    }
    let t2 = Instant::now();
    let report = io::build_report(&cfg, &post, &y1, &y2)?;
    let dp_s = t2.elapsed().as_secs_f64();
    let t3 = Instant::now();
    io::write_report(&report, &post, &cfg.outdir)?;
    let report_s = t3.elapsed().as_secs_f64();
    io::write_timings(&cfg.outdir, &Timings { load_s, sampling_s, dp_s, report_s })?;
    println!("modes: {} (best {}), pooled draws: {}", report.modes.len(), report.best_mode, report.pooled_draws);
    for (k, m) in report.modes.iter().enumerate() {
        println!(
            "  mode {k}: count {:>6}  amplitude {:.6e}  SSE vs DP(y) {:.6e}  SSE vs DP(f) {:.6e}",
            m.count, m.amplitude_distance, m.sse_vs_dp, m.sse_vs_dp_smooth
        );
    }
    println!("report written to {}", cfg.outdir.display());
    Ok(())
}

fn align_dp(a: &DpArgs) -> Result<()> {
    let mut cfg = RunConfig { input: Some(a.input.clone()), input2: a.input2.clone(), n: a.n, dp_m: a.m, ..RunConfig::default() };
    if let Some(s) = a.subsample {
        cfg.subsample = s;
    }
    cfg.validate()?;
    log::info!("align-dp smooth={} config:\n{}", a.smooth, cfg.to_toml());
    let (mut y1, mut y2) = load(&cfg)?;
    if a.smooth {
        y1 = io::smooth_for_dp(&y1)?;
        y2 = io::smooth_for_dp(&y2)?;
    }
    let w = io::dp_warp(&y1, &y2, &cfg.dp_config())?;
    let id = Warping::identity(w.grid());
    println!("SSE(gamma, id) = {:.6e}", sse(&w, &id)?);
    if let Some(dir) = &a.outdir {
        std::fs::create_dir_all(dir)?;
        write_warp(&dir.join("dp_warp.csv"), &w)?;
    }
    Ok(())
}

fn write_warp(path: &Path, w: &Warping) -> Result<()> {
    let mut out = String::from("t,gamma\n");
    for (t, g) in w.grid().points().iter().zip(w.values()) {
        out.push_str(&format!("{},{}\n", io::fmt(*t), io::fmt(*g)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn replicate_study(a: &StudyArgs) -> Result<()> {
    let cfg = a.flags.resolve(None, None)?;
    let spec = a.sim.spec();
    spec.validate()?;
    let rows = with_threads(cfg.threads, || io::replicate_study(&spec, &cfg, a.replicates))?;
    std::fs::create_dir_all(&cfg.outdir)?;
    let mut table = String::from("replicate,bayes,dp_y,dp_f,modes\n");
    println!("{:>9} {:>24} {:>24} {:>24}", "replicate", "Bayes", "DP(y)", "DP(f)");
    for (r, row) in rows.iter().enumerate() {
        table.push_str(&format!(
            "{r},{},{},{},{}\n",
            io::fmt(row.bayes),
            io::fmt(row.dp_raw),
            io::fmt(row.dp_smooth),
            row.modes
        ));
        println!("{r:>9} {:>24.6e} {:>24.6e} {:>24.6e}", row.bayes, row.dp_raw, row.dp_smooth);
    }
    std::fs::write(cfg.outdir.join("sse_table.csv"), table)?;
    let med = |f: fn(&io::SseRow) -> f64| io::median(rows.iter().map(f).collect());
    println!(
        "{:>9} {:>24.6e} {:>24.6e} {:>24.6e}",
        "median",
        med(|r| r.bayes),
        med(|r| r.dp_raw),
        med(|r| r.dp_smooth)
    );
    Ok(())
}

fn diagnostics(a: &DiagArgs) -> Result<()> {
    let ess = io::ess_from_traces(&a.outdir.join("traces.csv"))?;
    let summary = std::fs::read_to_string(a.outdir.join("summary.json")).ok();
    let report: Option<io::RunReport> = match summary {
        Some(s) => Some(serde_json::from_str(&s).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?),
        None => None,
    };
    for (seed, table) in &ess {
        println!("chain {seed}");
        if let Some(c) = report.as_ref().and_then(|r| r.chains.iter().find(|c| c.diagnostics.seed == *seed)) {
            let a = &c.diagnostics.acceptance;
            println!(
                "  acceptance  warp {:.3}  f1 {:.3}  f2 {:.3}  l1 {:.3}  l2 {:.3}",
                a.warp, a.f1, a.f2, a.l1, a.l2
            );
        }
        for (name, e) in table {
            println!("  ESS {name:<10} {e:>10.1}");
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Parse { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parse `argv` (including the program name), run and return the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.cmd {
        Command::Simulate(a) => simulate(a),
        Command::AlignBayes(a) => align_bayes(a),
        Command::AlignDp(a) => align_dp(a),
        Command::ReplicateStudy(a) => replicate_study(a),
        Command::Diagnostics(a) => diagnostics(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
