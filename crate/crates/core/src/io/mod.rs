//! Data ingestion, simulation, run configuration and report output.

mod config;
mod data;
mod report;
mod study;

pub use config::{RunConfig, ENV_OUTDIR, ENV_THREADS};
pub use data::{
    fmt, load_pair, load_pair_files, simulate_pair, smooth_for_dp, write_pair, LoadOptions, SimSpec, SimulatedPair,
};
pub use report::{build_report, dp_warp, ess_from_traces, write_report, write_timings, ChainReport, ModeReport, RunReport, Timings};
pub use study::{median, mirror, reference_warps, replicate, replicate_study, SseRow};
