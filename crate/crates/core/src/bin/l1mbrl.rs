use std::path::PathBuf;

use clap::{Parser, Subcommand};
use l1mbrl::cli::{cmd_compare, cmd_run, cmd_verify, CliOptions};

/// L1-augmented model-based RL experiments.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Output root. Falls back to the config's `output_dir`, then
    /// `$L1MBRL_OUT`, then `runs`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace the config's seed list, e.g. `--seed-override 1,2,3`.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
    /// Worker threads for seeds.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate per the config's loop settings.
    Run { config: PathBuf },
    /// Check the estimation-error bound on the synthetic system.
    Verify { config: PathBuf },
    /// Paired baseline vs L1 runs over the config's scenarios.
    Compare { config: PathBuf },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let opts = CliOptions {
        seed_override: args.seed_override,
        out: args.out,
        jobs: args.jobs.max(1),
    };
    let code = match &args.command {
        Command::Run { config } => cmd_run(config, &opts),
        Command::Verify { config } => cmd_verify(config, &opts),
        Command::Compare { config } => cmd_compare(config, &opts),
    };
    std::process::exit(code);
}
