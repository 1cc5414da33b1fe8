use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qmkl::config::ExperimentConfig;
use qmkl::experiment::{cmd_diagnose, cmd_kernels, cmd_prepare, cmd_run};
use qmkl::{QmklError, Result};

#[derive(Parser)]
#[command(name = "qmkl", version, about = "Quantum kernel MKL experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples and write preprocessed splits.
    Prepare(Common),
    /// Compute train/train and test/train kernel matrices.
    Kernels(Common),
    /// Cross-validate and evaluate every model.
    Run(Common),
    /// Concentration statistics and exact-vs-sampled sweeps.
    Diagnose(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Recompute artifacts that already exist.
    #[arg(long)]
    force: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides `preprocessing.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn setup(c: &Common) -> Result<ExperimentConfig> {
    if let Some(n) = c.workers {
        if n == 0 {
            return Err(QmklError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| QmklError::Usage(e.to_string()))?;
    }
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.preprocessing.seed = s;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(c) => {
            let paths = cmd_prepare(&setup(&c)?)?;
            println!("wrote {} prepared splits", paths.len());
        }
        Command::Kernels(c) => {
            let n = cmd_kernels(&setup(&c)?, c.force)?;
            println!("kernels ready for {n} splits");
        }
        Command::Run(c) => {
            let cfg = setup(&c)?;
            let records = cmd_run(&cfg, c.force)?;
            println!(
                "{} result records in {}",
                records.len(),
                cfg.output_dir().join("results").display()
            );
        }
        Command::Diagnose(c) => {
            let out = cmd_diagnose(&setup(&c)?)?;
            println!("wrote {}", out.concentration.display());
            println!("wrote {}", out.shot_sweep.display());
            println!("wrote {}", out.tidy.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
