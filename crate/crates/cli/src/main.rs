use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use orlicz_cli::{list_models, run, CliError, ExperimentConfig, Stage};

/// Runs condition checks, certificates, approximations, solves and probes
/// described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "orlicz", version)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long, required_unless_present = "list_models")]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of every direction sample; overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Run only this stage.
    #[arg(long, value_enum)]
    stage: Option<Stage>,
    /// Print the model registry and exit.
    #[arg(long)]
    list_models: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.list_models {
        print!("{}", list_models());
        return ExitCode::SUCCESS;
    }
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Validation {
                path: "--threads".into(),
                message: "need at least one thread".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation {
                path: "--threads".into(),
                message: e.to_string(),
            })?;
    }
    let path = args.config.as_ref().expect("clap requires --config");
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.apply_seed(cfg.seed);
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let summary = run(&cfg, &out, args.stage)?;
    for s in &summary.stages {
        println!("{:<14} {}", s.stage, if s.ok { "ok" } else { "failed" });
        for f in &s.files {
            println!("    {}", f.display());
        }
    }
    Ok(())
}
