//! Time a policy forward pass against an online single-shooting solve of the
//! same finite-horizon problem on the quadcopter model.
//!
//! ```text
//! cargo run --release --example online_mpc_benchmark -- [config] [checkpoint]
//! ```

use std::path::PathBuf;

use spdpc::experiment::Experiment;
use spdpc::policy::MlpPolicy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/ex2_quadcopter_desk.json"));
    let exp = Experiment::load(&config)?;
    let seed = exp.config.seed;
    let policy = match args.next() {
        Some(p) => MlpPolicy::load(p.as_ref())?,
        None => MlpPolicy::init(exp.architecture(seed))?,
    };
    println!(
        "model n_x={} n_u={}, horizon {}, policy parameters {}",
        exp.model.n_x(),
        exp.model.n_u(),
        exp.config.horizon,
        policy.param_count()
    );

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build()?;
    let report = pool.install(|| exp.benchmark(&policy, seed))?;
    print!("{}", report.to_csv());
    println!(
        "policy {:.1} us vs baseline {:.1} us per call (x{:.0})",
        report.overall.policy_ns_mean / 1e3,
        report.overall.baseline_ns_mean / 1e3,
        report.overall.ratio
    );
    Ok(())
}
