//! Parametric obstacle avoidance: train (or load) a full-horizon policy and
//! report how many held-out plans clear the obstacle and reach the target.
//!
//! ```text
//! cargo run --release --example obstacle_avoidance -- [config] [checkpoint]
//! ```

use std::path::PathBuf;

use spdpc::dynamics::rollout;
use spdpc::experiment::Experiment;
use spdpc::objectives::obstacle_residual;
use spdpc::policy::MlpPolicy;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/ex3_obstacle_desk.json"));
    let exp = Experiment::load(&config)?;
    let seed = exp.config.seed;
    let splits = exp.scenario_splits(seed)?;

    let policy = match args.next() {
        Some(p) => MlpPolicy::load(p.as_ref())?,
        None => {
            let (p, h) = exp.train_policy(&splits, seed, |ev| {
                if ev.record.epoch % 25 == 0 {
                    println!("epoch {:4}  train {:.5}  dev {:.5}", ev.record.epoch, ev.record.train.total, ev.record.dev.total);
                }
                Ok(())
            })?;
            println!("initial train loss {:.5}, best dev {:.5} at epoch {}", h.initial_train.total, h.best_dev().unwrap_or(f64::NAN), h.best_epoch);
            p
        }
    };

    let (mut clear, mut reach, mut both) = (0usize, 0usize, 0usize);
    let mut dist_sum = 0.0;
    for sc in splits.test.iter() {
        let tr = rollout(&exp.model, &policy, exp.config.policy.mode, sc.x0, sc.xi, sc.omega)?;
        let (r, geo) = (&sc.xi[0..2], &sc.xi[2..6]);
        let ok_obstacle = tr.states[..tr.horizon()]
            .iter()
            .all(|x| obstacle_residual(x, geo[0], geo[1], geo[2], geo[3]) <= 0.0);
        let xn = tr.terminal();
        let d = ((xn[0] - r[0]).powi(2) + (xn[1] - r[1]).powi(2)).sqrt();
        dist_sum += d;
        clear += ok_obstacle as usize;
        reach += (d <= 0.5) as usize;
        both += (ok_obstacle && d <= 0.5) as usize;
    }
    let n = splits.test.len() as f64;
    println!("held-out plans: {}", splits.test.len());
    println!("  obstacle cleared at every step: {:.3}", clear as f64 / n);
    println!("  ||x_N - r_N|| <= 0.5:            {:.3}", reach as f64 / n);
    println!("  both:                            {:.3}", both as f64 / n);
    println!("  mean terminal distance:          {:.3}", dist_sum / n);

    let report = exp.certify(&policy, &splits.test)?;
    println!("{}", report.statement());
    Ok(())
}
