//! Policy optimization over a sampled scenario set.
//!
//! Minibatches are split into fixed-size chunks. Each chunk is rolled out on
//! its own tape (possibly on another thread), and chunk gradients are merged
//! in chunk order, so results do not depend on the worker count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::{rollout, rollout_on_tape, LinearSystem, PolicyMode};
use crate::error::{invalid, Error, Result};
use crate::objectives::{loss_on_tape, trajectory_loss, ControlProblem, LossBreakdown};
use crate::policy::MlpPolicy;
use crate::rng;
use crate::sampling::ScenarioSet;
use rand::seq::SliceRandom;

/// Scenarios per tape.
pub const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Minibatch size in scenarios.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("betas must lie in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if !(self.epsilon > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(invalid("epsilon must be positive and weight_decay non-negative"));
        }
        Ok(())
    }
}

/// First and second moments, one entry per flattened parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One decoupled-weight-decay Adam step applied in place.
pub fn adamw_step(theta: &mut [f64], grad: &[f64], state: &mut OptimizerState, cfg: &TrainConfig) -> Result<()> {
    if theta.len() != grad.len() || theta.len() != state.m.len() || theta.len() != state.v.len() {
        return Err(crate::error::dim(format!(
            "optimizer shapes: theta {}, grad {}, state {}",
            theta.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..theta.len() {
        let g = grad[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.epsilon) + cfg.weight_decay * theta[i]);
    }
    Ok(())
}

/// Parameters in canonical order: `W_0, b_0, W_1, b_1, ...`.
pub fn flatten(policy: &MlpPolicy) -> Vec<f64> {
    let mut out = Vec::with_capacity(policy.param_count());
    for l in policy.layers() {
        out.extend_from_slice(l.weight.data());
        out.extend_from_slice(l.bias.data());
    }
    out
}

pub fn unflatten(policy: &mut MlpPolicy, theta: &[f64]) -> Result<()> {
    if theta.len() != policy.param_count() {
        return Err(crate::error::dim("flat parameter length"));
    }
    let mut at = 0;
    for l in policy.layers_mut() {
        for t in [&mut l.weight, &mut l.bias] {
            let n = t.numel();
            t.data_mut().copy_from_slice(&theta[at..at + n]);
            at += n;
        }
    }
    Ok(())
}

struct BatchData {
    x0: Tensor,
    xi: Option<Tensor>,
    noise: Vec<Tensor>,
}

fn gather(set: &ScenarioSet, indices: &[usize]) -> Result<BatchData> {
    let n_x = set.x0.first().map_or(0, Vec::len);
    let n_xi = set.n_xi();
    let b = indices.len();
    let mut x0 = Vec::with_capacity(b * n_x);
    let mut xi = Vec::with_capacity(b * n_xi);
    let mut noise = vec![Vec::with_capacity(b * n_x); set.horizon];
    for &idx in indices {
        let sc = set.get(idx);
        x0.extend_from_slice(sc.x0);
        xi.extend_from_slice(sc.xi);
        for (k, w) in sc.omega.iter().enumerate() {
            noise[k].extend_from_slice(w);
        }
    }
    Ok(BatchData {
        x0: Tensor::new(vec![b, n_x], x0)?,
        xi: if n_xi > 0 { Some(Tensor::new(vec![b, n_xi], xi)?) } else { None },
        noise: noise
            .into_iter()
            .map(|w| Tensor::new(vec![b, n_x], w))
            .collect::<Result<_>>()?,
    })
}

fn chunk_pass(
    model: &LinearSystem,
    policy: &MlpPolicy,
    mode: PolicyMode,
    set: &ScenarioSet,
    indices: &[usize],
    problem: &ControlProblem,
    with_grad: bool,
) -> Result<(Option<Vec<f64>>, LossBreakdown)> {
    let data = gather(set, indices)?;
    let mut tape = Tape::new();
    let sys = model.bind(&mut tape)?;
    let bound = if with_grad { policy.bind(&mut tape)? } else { policy.bind_constant(&mut tape)? };
    let x0 = tape.constant(data.x0)?;
    let xi = data.xi.map(|t| tape.constant(t)).transpose()?;
    let noise: Vec<Var> = data
        .noise
        .into_iter()
        .map(|t| tape.constant(t))
        .collect::<Result<_>>()?;
    let roll = rollout_on_tape(&mut tape, &sys, &bound, mode, x0, xi, &noise)?;
    let loss = loss_on_tape(&mut tape, &roll, xi, problem, indices.len())?;
    let values = loss.values(&tape)?;
    if !with_grad {
        return Ok((None, values));
    }
    let grads = tape.backward(loss.total)?;
    let mut flat = Vec::with_capacity(policy.param_count());
    for v in bound.vars() {
        flat.extend_from_slice(grads.get(v).expect("parameter leaf").data());
    }
    Ok((Some(flat), values))
}

fn merged(
    model: &LinearSystem,
    policy: &MlpPolicy,
    mode: PolicyMode,
    set: &ScenarioSet,
    indices: &[usize],
    problem: &ControlProblem,
    with_grad: bool,
) -> Result<(Option<Vec<f64>>, LossBreakdown)> {
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let parts: Vec<_> = indices
        .par_chunks(CHUNK)
        .map(|c| chunk_pass(model, policy, mode, set, c, problem, with_grad).map(|r| (c.len(), r)))
        .collect::<Result<_>>()?;
    let total = indices.len() as f64;
    let mut grad = with_grad.then(|| vec![0.0; policy.param_count()]);
    let mut loss = LossBreakdown::default();
    for (len, (g, l)) in parts {
        let w = len as f64 / total;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.iter_mut().zip(&g).for_each(|(a, g)| *a += w * g);
        }
        loss.total += w * l.total;
        loss.objective += w * l.objective;
        loss.state += w * l.state;
        loss.input += w * l.input;
        loss.terminal += w * l.terminal;
    }
    Ok((grad, loss))
}

/// Gradient of the batch loss with respect to every policy parameter
/// (flattened as in [`flatten`]), together with the loss decomposition.
pub fn policy_gradient(
    model: &LinearSystem,
    policy: &MlpPolicy,
    mode: PolicyMode,
    set: &ScenarioSet,
    indices: &[usize],
    problem: &ControlProblem,
) -> Result<(Vec<f64>, LossBreakdown)> {
    let (g, l) = merged(model, policy, mode, set, indices, problem, true)?;
    Ok((g.expect("gradient requested"), l))
}

/// Mean loss over the whole set without gradient tracking.
pub fn evaluate_loss(
    model: &LinearSystem,
    policy: &MlpPolicy,
    mode: PolicyMode,
    set: &ScenarioSet,
    problem: &ControlProblem,
) -> Result<LossBreakdown> {
    let all: Vec<usize> = (0..set.len()).collect();
    Ok(merged(model, policy, mode, set, &all, problem, false)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub dev: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub initial_train: LossBreakdown,
    pub initial_dev: LossBreakdown,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_dev(&self) -> Option<f64> {
        self.records.iter().map(|r| r.dev.total).reduce(f64::min)
    }

    pub fn final_train(&self) -> Option<f64> {
        self.records.last().map(|r| r.train.total)
    }

    /// `epoch,train_loss,dev_loss,L,L_x,L_u`; epoch 0 is the untrained policy.
    /// Wall-clock seconds are left out so reruns are byte-identical.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,dev_loss,L,L_x,L_u\n");
        let row = |s: &mut String, e: usize, t: &LossBreakdown, d: &LossBreakdown| {
            s.push_str(&format!("{e},{},{},{},{},{}\n", t.total, d.total, t.objective, t.state, t.input));
        };
        row(&mut s, 0, &self.initial_train, &self.initial_dev);
        for r in &self.records {
            row(&mut s, r.epoch, &r.train, &r.dev);
        }
        s
    }

    pub fn seconds(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.seconds).collect()
    }
}

/// Names the scenarios of `indices` whose individual loss is not finite.
fn culprits(
    model: &LinearSystem,
    policy: &MlpPolicy,
    mode: PolicyMode,
    set: &ScenarioSet,
    indices: &[usize],
    problem: &ControlProblem,
) -> Vec<usize> {
    let bad: Vec<usize> = indices
        .iter()
        .copied()
        .filter(|&i| {
            let sc = set.get(i);
            rollout(model, policy, mode, sc.x0, sc.xi, sc.omega)
                .and_then(|t| trajectory_loss(&t, problem))
                .map_or(true, |l| !l.total.is_finite())
        })
        .collect();
    if bad.is_empty() {
        indices.to_vec()
    } else {
        bad
    }
}

fn non_finite(err: Error, epoch: usize, scenarios: impl FnOnce() -> Vec<usize>) -> Error {
    match err {
        Error::NonFinite(_) => Error::NonFiniteLoss { epoch, scenarios: scenarios() },
        e => e,
    }
}

/// Event passed to the training observer after each epoch.
pub struct EpochEvent<'a> {
    pub record: &'a EpochRecord,
    pub policy: &'a MlpPolicy,
    pub is_best: bool,
}

/// Runs `config.epochs` epochs of shuffled minibatch AdamW and returns the
/// parameters with the lowest dev loss. Without a dev set, the train set
/// plays its role.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &LinearSystem,
    policy: MlpPolicy,
    mode: PolicyMode,
    train_set: &ScenarioSet,
    dev_set: Option<&ScenarioSet>,
    problem: &ControlProblem,
    config: &TrainConfig,
    mut observer: impl FnMut(EpochEvent<'_>) -> Result<()>,
) -> Result<(MlpPolicy, TrainHistory)> {
    config.validate()?;
    problem.weights.validate()?;
    problem.constraints.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dev_set = dev_set.unwrap_or(train_set);
    let eval = |p: &MlpPolicy, set: &ScenarioSet, epoch: usize| {
        let all: Vec<usize> = (0..set.len()).collect();
        evaluate_loss(model, p, mode, set, problem)
            .map_err(|e| non_finite(e, epoch, || culprits(model, p, mode, set, &all, problem)))
            .and_then(|l| {
                if l.total.is_finite() {
                    Ok(l)
                } else {
                    Err(Error::NonFiniteLoss { epoch, scenarios: culprits(model, p, mode, set, &all, problem) })
                }
            })
    };

    let mut history = TrainHistory {
        initial_train: eval(&policy, train_set, 0)?,
        initial_dev: eval(&policy, dev_set, 0)?,
        ..Default::default()
    };
    let mut current = policy;
    let mut theta = flatten(&current);
    let mut state = OptimizerState::new(theta.len());
    let mut best: Option<(f64, MlpPolicy)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng::keyed(config.seed, rng::stream::SHUFFLE, &[epoch as u64]));
        for batch in order.chunks(config.batch_size) {
            let (grad, loss) = policy_gradient(model, &current, mode, train_set, batch, problem)
                .map_err(|e| non_finite(e, epoch, || culprits(model, &current, mode, train_set, batch, problem)))?;
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    scenarios: culprits(model, &current, mode, train_set, batch, problem),
                });
            }
            adamw_step(&mut theta, &grad, &mut state, config)?;
            unflatten(&mut current, &theta)?;
        }
        let train_loss = eval(&current, train_set, epoch)?;
        let dev_loss = eval(&current, dev_set, epoch)?;
        let record = EpochRecord {
            epoch,
            train: train_loss,
            dev: dev_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        let is_best = best.as_ref().is_none_or(|(b, _)| dev_loss.total < *b);
        if is_best {
            best = Some((dev_loss.total, current.clone()));
            history.best_epoch = epoch;
        }
        log::debug!(
            "epoch {epoch}: train {:.6e} dev {:.6e}{}",
            train_loss.total,
            dev_loss.total,
            if is_best { " *" } else { "" }
        );
        observer(EpochEvent { record: &record, policy: &current, is_best })?;
        history.records.push(record);
    }
    let (_, best) = best.expect("at least one epoch");
    Ok((best, history))
}
