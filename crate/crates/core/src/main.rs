use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context as _, Result};
use clap::{Args, Parser, Subcommand};

use cpo::config::ExperimentConfig;
use cpo::runner::{self, Context, TrainTarget};

#[derive(Parser)]
#[command(name = "cpo", version, about = "Causal preference optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts and the manifest.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the randomized dataset and any confounded copy.
    Simulate(Common),
    /// Fit outcome models on the simulated datasets.
    FitOutcome(Common),
    /// Train one method: ft, cpo, dr-cpo, oo-rlhf, optionally with
    /// `+confounded` or `+reseed`.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
    },
    /// Win rates, reward table and confounding impact.
    Evaluate(Common),
    /// Every stage plus the acceptance checks; writes report.md.
    ReproduceAll(Common),
}

fn context(common: &Common) -> Result<Context> {
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring thread pool")?;
    }
    let config = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    let mut ctx = Context::new(config, &common.out_dir, common.seed);
    ctx.verbose = true;
    Ok(ctx)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let start = Instant::now();
    match &cli.command {
        Command::Simulate(c) => print_paths(&runner::cmd_simulate(&context(c)?)?),
        Command::FitOutcome(c) => print_paths(&runner::cmd_fit_outcome(&context(c)?)?),
        Command::Train { common, method } => {
            let target = TrainTarget::parse(method)?;
            print_paths(&runner::cmd_train(&context(common)?, target)?);
        }
        Command::Evaluate(c) => {
            let eval = runner::cmd_evaluate(&context(c)?)?;
            print!("{}", eval.reward_table.to_text());
        }
        Command::ReproduceAll(c) => {
            let report = runner::cmd_reproduce_all(&context(c)?)?;
            for criterion in &report.criteria {
                println!("{}", criterion.line());
            }
            if !report.all_passed() {
                eprintln!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
                std::process::exit(1);
            }
        }
    }
    eprintln!("elapsed: {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
