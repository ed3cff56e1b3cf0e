//! Compare tape gradients of the training loss against central finite differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use spdpc::certify::{TerminalCenter, TerminalSet, TerminalShape};
use spdpc::dynamics::{LinearSystem, NoiseSpec, PolicyMode};
use spdpc::objectives::{ConstraintSet, ControlProblem, InputConstraint, LossWeights, StageObjective, StateConstraint};
use spdpc::policy::{MlpPolicy, PolicyArchitecture};
use spdpc::sampling::{sample_scenarios, Component, ParamSpec};
use spdpc::trainer::{flatten, policy_gradient, unflatten};

fn main() -> spdpc::Result<()> {
    let model = LinearSystem::new(vec![vec![1.2, 1.0], vec![0.0, 1.0]], vec![vec![1.0], vec![0.5]])?;
    let problem = ControlProblem {
        objective: StageObjective::Stabilization,
        constraints: ConstraintSet {
            state: vec![StateConstraint::Box { lower: vec![-2.0; 2], upper: vec![2.0; 2] }],
            input: vec![InputConstraint::Box { lower: vec![-1.0], upper: vec![1.0] }],
            terminal: Some(TerminalSet { shape: TerminalShape::Box { half_width: vec![0.1; 2] }, center: TerminalCenter::Origin }),
            ..Default::default()
        },
        weights: LossWeights { q_x: 5.0, q_u: 0.2, q_h: 10.0, q_g: 100.0, q_f: 1.0, ..Default::default() },
    };
    let params = ParamSpec { x0: vec![Component::uniform(-3.0, 3.0); 2], xi: vec![], layout: vec![] };
    let set = sample_scenarios(&params, &NoiseSpec::gaussian(vec![0.1; 2]), 4, 2, 3, 11)?;

    for mode in [PolicyMode::StateFeedback, PolicyMode::FullHorizon] {
        let (inp, out) = mode.policy_dims(2, 0, 1, 3);
        let mut policy = MlpPolicy::init(PolicyArchitecture::new(inp, vec![8, 8], out, 5))?;
        // Biases start at zero; once a whole layer is inactive the next layer sits exactly on
        // the ReLU kink, where finite differences and the one-sided tape derivative disagree.
        for (l, layer) in policy.layers_mut().iter_mut().enumerate() {
            for (j, b) in layer.bias.data_mut().iter_mut().enumerate() {
                *b = 0.05 * ((l + j) % 3) as f64 - 0.04;
            }
        }
        let idx: Vec<usize> = (0..set.len()).collect();
        let (grad, loss) = policy_gradient(&model, &policy, mode, &set, &idx, &problem)?;
        let theta = flatten(&policy);
        let mut probe = policy.clone();
        let h = 1e-6;
        let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        let mut worst = 0.0f64;
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] += h;
            unflatten(&mut probe, &t)?;
            let up = policy_gradient(&model, &probe, mode, &set, &idx, &problem)?.1.total;
            t[i] -= 2.0 * h;
            unflatten(&mut probe, &t)?;
            let dn = policy_gradient(&model, &probe, mode, &set, &idx, &problem)?.1.total;
            let fd = (up - dn) / (2.0 * h);
            worst = worst.max((grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6 * scale));
        }
        println!(
            "{mode:?}: loss {:.6}, {} parameters, max relative error vs finite differences {worst:.2e}",
            loss.total,
            theta.len()
        );
    }
    Ok(())
}
