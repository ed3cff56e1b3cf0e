//! Online implicit MPC used as a timing and quality reference.
//!
//! Each call to [`solve`] minimizes the nominal (disturbance-free) loss of a
//! single scenario over the open-loop action sequence with a gradient method:
//! limited-memory quasi-Newton directions from the tape gradient, accepted only
//! under the Armijo condition, so the objective never increases.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::{open_loop_on_tape, LinearSystem, RolloutVars};
use crate::error::{invalid, Error, Result};
use crate::objectives::{loss_on_tape, ControlProblem};
use crate::policy::MlpPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Steepest-descent trial step, used until curvature pairs are available.
    pub step_size: f64,
    /// Stop once the Euclidean gradient norm drops below this.
    pub tolerance: f64,
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_size: 0.1,
            tolerance: 1e-6,
            warm_start: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        if !(self.tolerance > 0.0) || !(self.step_size > 0.0) {
            return Err(invalid("tolerance and step_size must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// `N` actions of length `n_u`.
    pub actions: Vec<Vec<f64>>,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<f64>,
    pub converged: bool,
}

impl Solution {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().expect("non-empty")
    }
}

struct Instance<'a> {
    model: &'a LinearSystem,
    x0: &'a [f64],
    xi: &'a [f64],
    problem: &'a ControlProblem,
}

impl Instance<'_> {
    fn evaluate(&self, u: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let n_u = self.model.n_u();
        let mut tape = Tape::new();
        let sys = self.model.bind(&mut tape)?;
        let x0 = tape.constant(Tensor::new(vec![1, self.x0.len()], self.x0.to_vec())?)?;
        let xi = if self.xi.is_empty() {
            None
        } else {
            Some(tape.constant(Tensor::new(vec![1, self.xi.len()], self.xi.to_vec())?)?)
        };
        let actions: Vec<Var> = u
            .chunks(n_u)
            .map(|c| {
                let t = Tensor::new(vec![1, n_u], c.to_vec())?;
                if with_grad {
                    tape.param(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect::<Result<_>>()?;
        let states = open_loop_on_tape(&mut tape, &sys, x0, &actions, None)?;
        let roll = RolloutVars { states, actions: actions.clone() };
        let loss = loss_on_tape(&mut tape, &roll, xi, self.problem, 1)?;
        let f = tape.value(loss.total)?.item();
        if !with_grad {
            return Ok((f, Vec::new()));
        }
        let g = tape.backward(loss.total)?;
        let mut grad = Vec::with_capacity(u.len());
        for a in &actions {
            grad.extend_from_slice(g.get(*a).expect("leaf").data());
        }
        Ok((f, grad))
    }

    fn objective(&self, u: &[f64]) -> Result<f64> {
        match self.evaluate(u, false) {
            Ok((f, _)) if f.is_finite() => Ok(f),
            Ok(_) | Err(Error::NonFinite(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Curvature pairs kept by the quasi-Newton direction.
const MEMORY: usize = 10;

/// Two-loop recursion: `-H g` for the inverse-Hessian estimate `H`.
fn direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(q, y)| *q -= a * y);
        alphas.push(a);
    }
    let (s, y, _) = memory.back().expect("non-empty memory");
    let gamma = dot(s, y) / dot(y, y);
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(q, s)| *q += (a - b) * s);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes the nominal loss over `U` starting from `warm` (or zeros).
#[allow(clippy::too_many_arguments)]
pub fn solve(
    model: &LinearSystem,
    x0: &[f64],
    xi: &[f64],
    problem: &ControlProblem,
    horizon: usize,
    config: &SolverConfig,
    warm: Option<&[Vec<f64>]>,
) -> Result<Solution> {
    config.validate()?;
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if x0.len() != model.n_x() {
        return Err(crate::error::dim(format!("x0 has {} entries, n_x = {}", x0.len(), model.n_x())));
    }
    let n_u = model.n_u();
    let mut u: Vec<f64> = match warm {
        Some(w) if config.warm_start => {
            if w.len() != horizon || w.iter().any(|a| a.len() != n_u) {
                return Err(crate::error::dim("warm start must hold N actions of length n_u"));
            }
            w.concat()
        }
        _ => vec![0.0; horizon * n_u],
    };
    let inst = Instance { model, x0, xi, problem };
    let (mut f, mut g) = inst.evaluate(&u, true).map_err(|e| match e {
        Error::NonFinite(_) => Error::NonFiniteObjective,
        e => e,
    })?;
    if !f.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut history = vec![f];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut iterations = 0;
    let mut gnorm = dot(&g, &g).sqrt();
    while gnorm > config.tolerance && iterations < config.max_iterations {
        iterations += 1;
        let (mut d, mut t) = if memory.is_empty() {
            (g.iter().map(|v| -v).collect::<Vec<_>>(), config.step_size)
        } else {
            (direction(&g, &memory), 1.0)
        };
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
            t = config.step_size;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if inst.objective(&trial)? <= f + 1e-4 * t * slope {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        let Some(next) = accepted else { break };
        let (fn_, gn) = inst.evaluate(&next, true)?;
        let sv: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&sv, &yv);
        if sy > 1e-12 * dot(&yv, &yv).sqrt() * dot(&sv, &sv).sqrt() {
            if memory.len() == MEMORY {
                memory.pop_front();
            }
            memory.push_back((sv, yv, 1.0 / sy));
        }
        u = next;
        f = fn_;
        g = gn;
        gnorm = dot(&g, &g).sqrt();
        history.push(f);
    }
    Ok(Solution {
        actions: u.chunks(n_u).map(<[f64]>::to_vec).collect(),
        iterations,
        gradient_norm: gnorm,
        objective_history: history,
        converged: gnorm <= config.tolerance,
    })
}

/// Drops the first action and repeats the last one.
pub fn shift_warm_start(actions: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = actions.iter().skip(1).cloned().collect();
    if let Some(last) = actions.last() {
        out.push(last.clone());
    }
    out
}

/// Wall-clock statistics of one instance, in nanoseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub instance: String,
    pub policy_ns_mean: f64,
    pub policy_ns_max: f64,
    pub baseline_ns_mean: f64,
    pub baseline_ns_max: f64,
    /// `baseline_ns_mean / policy_ns_mean`
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<TimingRow>,
    /// Statistics pooled over every instance and repetition.
    pub overall: TimingRow,
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("instance,policy_ns_mean,policy_ns_max,baseline_ns_mean,baseline_ns_max,ratio\n");
        for r in self.rows.iter().chain(std::iter::once(&self.overall)) {
            s.push_str(&format!(
                "{},{:.1},{:.1},{:.1},{:.1},{:.3}\n",
                r.instance, r.policy_ns_mean, r.policy_ns_max, r.baseline_ns_mean, r.baseline_ns_max, r.ratio
            ));
        }
        s
    }
}

fn stats(samples: &[f64]) -> (f64, f64) {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // A single sample is its own mean; keep the two bit-identical.
    if samples.len() == 1 {
        (samples[0], samples[0])
    } else {
        (mean, max)
    }
}

fn row(name: String, p: &[f64], b: &[f64]) -> TimingRow {
    let (pm, px) = stats(p);
    let (bm, bx) = stats(b);
    TimingRow {
        instance: name,
        policy_ns_mean: pm,
        policy_ns_max: px,
        baseline_ns_mean: bm,
        baseline_ns_max: bx,
        ratio: bm / pm,
    }
}

/// Times one policy evaluation against one cold-started baseline solve on
/// every `(x0, xi)` instance, `repetitions` times each, on the calling thread.
#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    model: &LinearSystem,
    policy: &MlpPolicy,
    problem: &ControlProblem,
    horizon: usize,
    solver: &SolverConfig,
    instances: &[(Vec<f64>, Vec<f64>)],
    repetitions: usize,
) -> Result<BenchmarkReport> {
    if instances.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if repetitions == 0 {
        return Err(invalid("repetitions must be at least 1"));
    }
    let mut rows = Vec::with_capacity(instances.len());
    let (mut all_p, mut all_b) = (Vec::new(), Vec::new());
    for (idx, (x0, xi)) in instances.iter().enumerate() {
        let (mut p, mut b) = (Vec::with_capacity(repetitions), Vec::with_capacity(repetitions));
        for _ in 0..repetitions {
            let t = Instant::now();
            // One forward pass yields the full plan or, in feedback mode, the first action.
            let u = policy.action_sequence(x0, xi, model.n_u())?;
            p.push(t.elapsed().as_nanos() as f64);
            std::hint::black_box(u);

            let t = Instant::now();
            let sol = solve(model, x0, xi, problem, horizon, solver, None)?;
            b.push(t.elapsed().as_nanos() as f64);
            std::hint::black_box(sol);
        }
        all_p.extend_from_slice(&p);
        all_b.extend_from_slice(&b);
        rows.push(row(idx.to_string(), &p, &b));
    }
    Ok(BenchmarkReport {
        rows,
        overall: row("all".into(), &all_p, &all_b),
    })
}
