//! Experiment runner behind the `gdln` binary.

mod commands;
mod config;
mod verify;

pub use commands::{
    cmd_init_sweep, cmd_race, cmd_routing, cmd_transform_bench, cmd_xor, sweep_step, transform_bench_point, walk,
    BenchPoint, RunOptions,
};
pub use config::{parse_seed_list, ExperimentConfig, RunManifest, RunRecord, SimParams, TaskParams};
pub use verify::{cmd_verify, CheckResult, VerifyOptions, VerifyReport};

use crate::error::{Error, Result};

pub const EXPERIMENTS: [&str; 5] = ["xor", "routing", "race", "init-sweep", "transform-bench"];

/// Run the named experiment.
pub fn run_experiment(name: &str, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunManifest> {
    match name {
        "xor" => cmd_xor(cfg, opts),
        "routing" => cmd_routing(cfg, opts),
        "race" => cmd_race(cfg, opts),
        "init-sweep" => cmd_init_sweep(cfg, opts),
        "transform-bench" => cmd_transform_bench(cfg, opts),
        other => Err(Error::InvalidConfig(format!("unknown experiment `{other}`"))),
    }
}
