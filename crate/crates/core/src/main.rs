use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gdln::cli::{cmd_verify, parse_seed_list, run_experiment, ExperimentConfig, RunOptions, VerifyOptions};

#[derive(Parser)]
#[command(name = "gdln", version, about = "Gated deep linear network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// XoR: closed form, gated networks and the ReLU reference
    Xor(RunArgs),
    /// Routing network with its exact reductions
    Routing(RunArgs),
    /// Pathway race over P and the K/M sweep
    Race(RunArgs),
    /// Init scale sweep of the routing network
    InitSweep(RunArgs),
    /// Composed-transformation classification bench
    TransformBench(RunArgs),
    /// Run the oracle and invariant suite
    Verify {
        #[arg(long)]
        quick: bool,
        #[arg(long, hide = true)]
        inject_gradient_fault: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: runs/<experiment>)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, e.g. `0,1,5-9`
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads for sweep points
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Reduced grids and step counts
    #[arg(long)]
    quick: bool,
}

fn run(name: &str, args: RunArgs) -> gdln::Result<()> {
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(name));
    let opts = RunOptions {
        out,
        parallel: args.parallel,
        quick: args.quick,
        seeds: args.seeds.as_deref().map(parse_seed_list).transpose()?,
    };
    let manifest = run_experiment(name, &cfg, &opts)?;
    println!(
        "{name}: {} runs, {} files in {} ({:.1}s)",
        manifest.runs.len(),
        manifest.files.len(),
        opts.out.display(),
        manifest.wall_time_s
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Xor(a) => run("xor", a),
        Command::Routing(a) => run("routing", a),
        Command::Race(a) => run("race", a),
        Command::InitSweep(a) => run("init-sweep", a),
        Command::TransformBench(a) => run("transform-bench", a),
        Command::Verify { quick, inject_gradient_fault } => {
            let mut stdout = std::io::stdout().lock();
            cmd_verify(VerifyOptions { quick, inject_gradient_fault }, &mut stdout).map(|_| ())
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
