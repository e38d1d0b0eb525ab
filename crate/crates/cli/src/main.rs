mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::Run;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "verifree-lab", version, about = "Toy laboratory for verifier-free reasoning gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Oracle gradient and normalization suite over random fixtures
    Check(Common),
    /// Exact estimator variance sweep, written as CSV
    Variance(Common),
    /// Single training run, metrics as JSONL
    Train(Common),
    /// Estimator ablation grid, CSV summary plus JSONL metrics
    Compare(Common),
    /// Token-split vs text-split tokenization report
    PatchDemo(Common),
}

#[derive(Args)]
struct Common {
    /// Config file of `section.key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key after the file is read (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shorthand for --set trainer.seed=N
    #[arg(long)]
    seed: Option<u64>,
}

fn prepare(name: &'static str, c: Common) -> Result<Run> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::defaults(),
    };
    for s in &c.set {
        cfg.apply_override(s).context("--set")?;
    }
    if let Some(seed) = c.seed {
        cfg.set("trainer.seed", &seed.to_string())?;
    }
    if let Some(n) = c.workers {
        anyhow::ensure!(n >= 1, "--workers must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("--workers")?;
    }
    let out_dir = c.out.or_else(|| cfg.raw("output.dir").map(PathBuf::from));
    Ok(Run { command: name, cfg, out_dir })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common, f): (_, _, fn(&Run) -> Result<()>) = match cli.command {
        Command::Check(c) => ("check", c, commands::check),
        Command::Variance(c) => ("variance", c, commands::variance),
        Command::Train(c) => ("train", c, commands::train),
        Command::Compare(c) => ("compare", c, commands::compare),
        Command::PatchDemo(c) => ("patch-demo", c, commands::patch_demo),
    };
    match prepare(name, common).and_then(|run| f(&run)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if commands::is_numerical(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
