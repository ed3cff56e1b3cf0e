use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use spdpc::experiment::{run, Command, Experiment, RunError};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    Sample,
    Train,
    Certify,
    Simulate,
    Benchmark,
}

/// Sampling-based learning and certification of predictive control policies.
#[derive(Debug, Parser)]
#[command(name = "spdpc", version)]
struct Cli {
    #[arg(value_enum)]
    command: Sub,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for training and certification.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(RunError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| RunError::Config(format!("--threads: {e}")))?;
    }
    let exp = Experiment::load(&cli.config)?;
    let seed = cli.seed.unwrap_or(exp.config.seed);
    let out = cli
        .out
        .clone()
        .or_else(|| exp.config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&exp.config.name));
    let command = match cli.command {
        Sub::Sample => Command::Sample,
        Sub::Train => Command::Train,
        Sub::Certify => Command::Certify,
        Sub::Simulate => Command::Simulate,
        Sub::Benchmark => Command::Benchmark,
    };
    let manifest = run(command, &exp, &out, seed)?;
    println!("{}: wrote {} artifact(s) to {}", manifest.command, manifest.artifacts.len(), out.display());
    Ok(())
}
