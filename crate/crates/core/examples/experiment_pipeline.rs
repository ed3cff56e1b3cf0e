//! Run every CLI stage in-process against one config and list the artifacts.
//!
//! ```text
//! cargo run --release --example experiment_pipeline -- [config] [out_dir]
//! ```

use std::path::PathBuf;

use spdpc::experiment::{run, Command, Experiment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/ex1_double_integrator_desk.json"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("spdpc_pipeline"));
    let exp = Experiment::load(&config)?;
    println!("{} (config sha256 {})", exp.config.name, exp.config_hash);

    for cmd in [Command::Sample, Command::Train, Command::Certify, Command::Simulate, Command::Benchmark] {
        let manifest = run(cmd, &exp, &out, exp.config.seed)?;
        println!("{:>9}: {:.1}s", manifest.command, manifest.elapsed_seconds);
        for a in &manifest.artifacts {
            println!("           {a}");
        }
    }
    Ok(())
}
