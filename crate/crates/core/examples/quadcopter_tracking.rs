//! Altitude tracking on the linearized quadcopter with a full-horizon policy
//! that emits all ten actions in one forward pass.
//!
//! ```text
//! cargo run --release --example quadcopter_tracking -- [config] [epochs]
//! ```

use std::path::PathBuf;

use spdpc::experiment::{Experiment, ModelSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/ex2_quadcopter_desk.json"));
    let mut exp = Experiment::load(&path)?;
    if let Some(e) = args.next() {
        exp.config.train.epochs = e.parse()?;
    }
    if let ModelSource::Fixture { fixture } = &exp.config.model {
        println!("model fixture {}", fixture.display());
    }
    let seed = exp.config.seed;
    let splits = exp.scenario_splits(seed)?;
    let (policy, history) = exp.train_policy(&splits, seed, |ev| {
        if ev.record.epoch % 10 == 0 {
            let t = &ev.record.train;
            println!("epoch {:4}  total {:.4}  tracking {:.4}  state {:.4}  input {:.4}", ev.record.epoch, t.total, t.objective, t.state, t.input);
        }
        Ok(())
    })?;
    println!("loss {:.4} -> best dev {:.4}", history.initial_train.total, history.best_dev().unwrap_or(f64::NAN));
    println!("{}", exp.certify(&policy, &splits.test)?.statement());

    let traces = exp.simulate(&policy, seed)?;
    let tail = exp.config.simulation.steps / 2;
    let err: f64 = traces
        .iter()
        .map(|t| t.states[tail..].iter().map(|x| (x[2] - 1.0).abs()).sum::<f64>() / (t.states.len() - tail) as f64)
        .sum::<f64>()
        / traces.len() as f64;
    println!("mean |altitude - 1| over the second half of {} closed-loop runs: {err:.3}", traces.len());
    Ok(())
}
