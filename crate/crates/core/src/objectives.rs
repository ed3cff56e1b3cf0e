//! Control objectives, ReLU constraint penalties and the sampled loss `J`.
//!
//! Every quantity is available twice: as a plain function of a realized
//! [`Trajectory`] and as tape nodes over a batched rollout. Weighted norms
//! `||v||_Q^2` are `Q * sum(v_i^2)` with scalar `Q`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::certify::TerminalSet;
use crate::dynamics::{RolloutVars, Trajectory};
use crate::error::{dim, invalid, Error, Result};

/// Scalar weights of the loss terms. Unused weights stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub q_r: f64,
    pub q_u: f64,
    pub q_x: f64,
    pub q_h: f64,
    pub q_g: f64,
    pub q_f: f64,
    pub q_c: f64,
    pub q_du: f64,
    pub q_dx: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.q_r, self.q_u, self.q_x, self.q_h, self.q_g, self.q_f, self.q_c, self.q_du, self.q_dx,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Where a reference signal comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum Reference {
    Constant { value: Vec<f64> },
    /// `r_k = xi[offset + k * stride .. offset + k * stride + dim]`
    Params { offset: usize, stride: usize },
}

impl Reference {
    fn at(&self, xi: &[f64], k: usize, len: usize) -> Result<Vec<f64>> {
        match self {
            Reference::Constant { value } if value.len() == len => Ok(value.clone()),
            Reference::Constant { value } => Err(dim(format!(
                "reference has {} entries, expected {len}",
                value.len()
            ))),
            Reference::Params { offset, stride } => {
                let start = offset + k * stride;
                xi.get(start..start + len).map(<[f64]>::to_vec).ok_or_else(|| {
                    dim(format!("reference window {start}..{} outside xi[{}]", start + len, xi.len()))
                })
            }
        }
    }

    fn on_tape(&self, tape: &mut Tape, xi: Option<Var>, k: usize, len: usize) -> Result<Var> {
        match self {
            Reference::Constant { value } => {
                if value.len() != len {
                    return Err(dim(format!("reference has {} entries, expected {len}", value.len())));
                }
                tape.constant(Tensor::new(vec![1, len], value.clone())?)
            }
            Reference::Params { offset, stride } => {
                let xi = xi.ok_or_else(|| dim("reference reads xi but the scenario has none"))?;
                let start = offset + k * stride;
                tape.slice(xi, start, start + len)
            }
        }
    }
}

/// Stage cost family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StageObjective {
    /// `Q_x ||x_k||^2 + Q_u ||u_k||^2`
    Stabilization,
    /// `Q_r ||r_k - x_k||^2 + Q_u ||u_k||^2`
    Tracking { reference: Reference },
    /// `Q_r ||y_k - r_k||^2 + Q_x ||x_hat_k||^2` with `y` the selected states
    /// and `x_hat` the rest.
    QuadcopterSplit { outputs: Vec<usize>, reference: Reference },
    /// Terminal target tracking with action and state smoothing:
    /// `Q_r ||x_N - r_N||^2 + sum_{k<N-1} Q_du ||u_{k+1} - u_k||^2
    ///  + sum_{k<N} (Q_dx ||x_{k+1} - x_k||^2 + Q_u ||u_k||^2)`
    ObstacleSmoothing { target_offset: usize },
}

/// State constraint `h(x, p) <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StateConstraint {
    /// `lower <= x <= upper`
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Elliptic keep-out region with `[p, b, c, d] = xi[offset..offset + 4]`.
    Obstacle { offset: usize },
}

/// Input constraint `g(u, p) <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputConstraint {
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

/// `||x_{k+1}|| <= rate * ||x_k||`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contraction {
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintSet {
    pub state: Vec<StateConstraint>,
    pub input: Vec<InputConstraint>,
    pub contraction: Option<Contraction>,
    /// Terminal set penalized in training and checked in certification.
    pub terminal: Option<TerminalSet>,
}

/// Objective, constraints and weights of one control problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlProblem {
    pub objective: StageObjective,
    #[serde(default)]
    pub constraints: ConstraintSet,
    pub weights: LossWeights,
}

/// Decomposition of `J`: `total = objective + state + input + terminal`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// `L`
    pub objective: f64,
    /// `L_x`
    pub state: f64,
    /// `L_u`
    pub input: f64,
    pub terminal: f64,
}

impl LossBreakdown {
    fn scaled(self, c: f64) -> Self {
        Self {
            total: self.total * c,
            objective: self.objective * c,
            state: self.state * c,
            input: self.input * c,
            terminal: self.terminal * c,
        }
    }

    fn plus(self, o: Self) -> Self {
        Self {
            total: self.total + o.total,
            objective: self.objective + o.objective,
            state: self.state + o.state,
            input: self.input + o.input,
            terminal: self.terminal + o.terminal,
        }
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn sq_norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum()
}

fn diff<'a>(a: &'a [f64], b: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    a.iter().zip(b).map(|(x, y)| x - y)
}

/// `Q_h * sum(ReLU(h)^2)`
pub fn penalty_state(residuals: &[f64], q_h: f64) -> f64 {
    q_h * sq_norm(residuals.iter().map(|&r| relu(r)))
}

/// `Q_g * sum(ReLU(g)^2)`
pub fn penalty_input(residuals: &[f64], q_g: f64) -> f64 {
    q_g * sq_norm(residuals.iter().map(|&r| relu(r)))
}

/// `Q_c * ReLU(||x_{k+1}|| - rate * ||x_k||)^2` with Euclidean norms.
pub fn contraction_penalty(x_k: &[f64], x_next: &[f64], rate: f64, q_c: f64) -> f64 {
    let now = sq_norm(x_k.iter().copied()).sqrt();
    let next = sq_norm(x_next.iter().copied()).sqrt();
    q_c * relu(next - rate * now).powi(2)
}

/// `p^2 - b (x_1 - c)^2 - (x_2 - d)^2`; positive inside the obstacle.
pub fn obstacle_residual(x: &[f64], p: f64, b: f64, c: f64, d: f64) -> f64 {
    p * p - b * (x[0] - c).powi(2) - (x[1] - d).powi(2)
}

fn box_residuals(v: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    lower
        .iter()
        .zip(v)
        .map(|(l, x)| l - x)
        .chain(v.iter().zip(upper).map(|(x, u)| x - u))
        .collect()
}

impl StateConstraint {
    pub fn residuals(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        match self {
            StateConstraint::Box { lower, upper } => {
                if lower.len() != x.len() || upper.len() != x.len() {
                    return Err(dim(format!("state box has {} bounds for n_x = {}", lower.len(), x.len())));
                }
                Ok(box_residuals(x, lower, upper))
            }
            StateConstraint::Obstacle { offset } => {
                let g = xi
                    .get(*offset..offset + 4)
                    .ok_or_else(|| dim(format!("obstacle parameters {offset}..{} outside xi[{}]", offset + 4, xi.len())))?;
                if x.len() < 2 {
                    return Err(dim("obstacle constraint needs at least two states"));
                }
                Ok(vec![obstacle_residual(x, g[0], g[1], g[2], g[3])])
            }
        }
    }

    fn on_tape(&self, tape: &mut Tape, x: Var, xi: Option<Var>) -> Result<Var> {
        match self {
            StateConstraint::Box { lower, upper } => box_on_tape(tape, x, lower, upper),
            StateConstraint::Obstacle { offset } => {
                let xi = xi.ok_or_else(|| dim("obstacle constraint reads xi but the scenario has none"))?;
                let o = *offset;
                let p = tape.slice(xi, o, o + 1)?;
                let b = tape.slice(xi, o + 1, o + 2)?;
                let c = tape.slice(xi, o + 2, o + 3)?;
                let d = tape.slice(xi, o + 3, o + 4)?;
                let x1 = tape.slice(x, 0, 1)?;
                let x2 = tape.slice(x, 1, 2)?;
                let p2 = tape.square(p)?;
                let dx1 = tape.sub(x1, c)?;
                let dx1 = tape.square(dx1)?;
                let bdx1 = tape.mul(b, dx1)?;
                let dx2 = tape.sub(x2, d)?;
                let dx2 = tape.square(dx2)?;
                let r = tape.sub(p2, bdx1)?;
                tape.sub(r, dx2)
            }
        }
    }
}

impl InputConstraint {
    pub fn residuals(&self, u: &[f64]) -> Result<Vec<f64>> {
        let InputConstraint::Box { lower, upper } = self;
        if lower.len() != u.len() || upper.len() != u.len() {
            return Err(dim(format!("input box has {} bounds for n_u = {}", lower.len(), u.len())));
        }
        Ok(box_residuals(u, lower, upper))
    }

    fn on_tape(&self, tape: &mut Tape, u: Var) -> Result<Var> {
        let InputConstraint::Box { lower, upper } = self;
        box_on_tape(tape, u, lower, upper)
    }
}

fn box_on_tape(tape: &mut Tape, v: Var, lower: &[f64], upper: &[f64]) -> Result<Var> {
    let n = tape.shape(v)?[1];
    if lower.len() != n || upper.len() != n {
        return Err(dim(format!("box has {} bounds for width {n}", lower.len())));
    }
    let lo = tape.constant(Tensor::new(vec![1, n], lower.to_vec())?)?;
    let hi = tape.constant(Tensor::new(vec![1, n], upper.to_vec())?)?;
    let below = tape.sub(lo, v)?;
    let above = tape.sub(v, hi)?;
    tape.concat(&[below, above])
}

impl ConstraintSet {
    pub fn state_residuals(&self, x: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for c in &self.state {
            out.extend(c.residuals(x, xi)?);
        }
        Ok(out)
    }

    pub fn input_residuals(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for c in &self.input {
            out.extend(c.residuals(u)?);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.state {
            if let StateConstraint::Box { lower, upper } = c {
                check_box(lower, upper)?;
            }
        }
        for InputConstraint::Box { lower, upper } in &self.input {
            check_box(lower, upper)?;
        }
        if let Some(Contraction { rate }) = self.contraction {
            if !(rate > 0.0 && rate <= 1.0) {
                return Err(invalid(format!("contraction rate must lie in (0, 1], got {rate}")));
            }
        }
        if let Some(t) = &self.terminal {
            t.validate()?;
        }
        Ok(())
    }
}

fn check_box(lower: &[f64], upper: &[f64]) -> Result<()> {
    if lower.len() != upper.len() {
        return Err(dim("box bounds differ in length"));
    }
    if lower.iter().chain(upper).any(|v| !v.is_finite()) {
        return Err(invalid("box bounds must be finite"));
    }
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Err(invalid("box lower bound exceeds upper bound"));
    }
    Ok(())
}

fn split_outputs(outputs: &[usize], n_x: usize) -> Result<Vec<usize>> {
    if outputs.iter().any(|&o| o >= n_x) {
        return Err(dim(format!("output selector {outputs:?} out of range for n_x = {n_x}")));
    }
    Ok((0..n_x).filter(|c| !outputs.contains(c)).collect())
}

/// Stage cost at step `k` for the stage-wise objective families.
pub fn stage_loss(
    objective: &StageObjective,
    x: &[f64],
    u: &[f64],
    xi: &[f64],
    k: usize,
    w: &LossWeights,
) -> Result<f64> {
    match objective {
        StageObjective::Stabilization => {
            Ok(w.q_x * sq_norm(x.iter().copied()) + w.q_u * sq_norm(u.iter().copied()))
        }
        StageObjective::Tracking { reference } => {
            let r = reference.at(xi, k, x.len())?;
            Ok(w.q_r * sq_norm(diff(&r, x)) + w.q_u * sq_norm(u.iter().copied()))
        }
        StageObjective::QuadcopterSplit { outputs, reference } => {
            let rest = split_outputs(outputs, x.len())?;
            let y: Vec<f64> = outputs.iter().map(|&o| x[o]).collect();
            let r = reference.at(xi, k, y.len())?;
            Ok(w.q_r * sq_norm(diff(&y, &r)) + w.q_x * sq_norm(rest.iter().map(|&c| x[c])))
        }
        StageObjective::ObstacleSmoothing { .. } => Err(invalid(
            "obstacle-smoothing couples consecutive steps and has no stage-wise form",
        )),
    }
}

fn terminal_value(problem: &ControlProblem, x_n: &[f64], xi: &[f64]) -> Result<f64> {
    let q_f = problem.weights.q_f;
    let mut v = q_f * sq_norm(x_n.iter().copied());
    if let Some(t) = &problem.constraints.terminal {
        v += q_f * t.violation(x_n, xi)?;
    }
    Ok(v)
}

/// Unnormalized per-trajectory sums of every loss term.
pub fn trajectory_loss(traj: &Trajectory, problem: &ControlProblem) -> Result<LossBreakdown> {
    let w = &problem.weights;
    let c = &problem.constraints;
    let n = traj.horizon();
    let xi = traj.params.as_slice();
    let mut objective = 0.0;
    let mut state = 0.0;
    let mut input = 0.0;
    match &problem.objective {
        StageObjective::ObstacleSmoothing { target_offset } => {
            let n_x = traj.terminal().len();
            let target = Reference::Params { offset: *target_offset, stride: 0 }.at(xi, 0, n_x)?;
            objective += w.q_r * sq_norm(diff(traj.terminal(), &target));
            for k in 0..n.saturating_sub(1) {
                objective += w.q_du * sq_norm(diff(&traj.actions[k + 1], &traj.actions[k]));
            }
            for k in 0..n {
                objective += w.q_dx * sq_norm(diff(&traj.states[k + 1], &traj.states[k]));
                objective += w.q_u * sq_norm(traj.actions[k].iter().copied());
            }
        }
        stagewise => {
            for k in 0..n {
                objective += stage_loss(stagewise, &traj.states[k], &traj.actions[k], xi, k, w)?;
            }
        }
    }
    for k in 0..n {
        state += penalty_state(&c.state_residuals(&traj.states[k], xi)?, w.q_h);
        input += penalty_input(&c.input_residuals(&traj.actions[k])?, w.q_g);
        if let Some(Contraction { rate }) = c.contraction {
            state += contraction_penalty(&traj.states[k], &traj.states[k + 1], rate, w.q_c);
        }
    }
    let terminal = terminal_value(problem, traj.terminal(), xi)?;
    Ok(LossBreakdown {
        total: objective + state + input + terminal,
        objective,
        state,
        input,
        terminal,
    })
}

/// `J = 1/(r N) * sum over trajectories of (stage + penalties + terminal)`.
pub fn total_loss(batch: &[Trajectory], problem: &ControlProblem) -> Result<LossBreakdown> {
    let first = batch.first().ok_or(Error::EmptyBatch)?;
    let n = first.horizon();
    let mut acc = LossBreakdown::default();
    for t in batch {
        if t.horizon() != n {
            return Err(Error::MixedHorizon(n, t.horizon()));
        }
        acc = acc.plus(trajectory_loss(t, problem)?);
    }
    Ok(acc.scaled(1.0 / (batch.len() * n) as f64))
}

/// Loss terms as scalar tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub objective: Var,
    pub state: Var,
    pub input: Var,
    pub terminal: Var,
}

impl LossVars {
    pub fn values(&self, tape: &Tape) -> Result<LossBreakdown> {
        let v = |x: Var| tape.value(x).map(Tensor::item);
        Ok(LossBreakdown {
            total: v(self.total)?,
            objective: v(self.objective)?,
            state: v(self.state)?,
            input: v(self.input)?,
            terminal: v(self.terminal)?,
        })
    }
}

/// Sum of squared entries scaled by `q`.
fn weighted_sq(tape: &mut Tape, v: Var, q: f64) -> Result<Var> {
    let s = tape.square(v)?;
    let s = tape.sum(s)?;
    tape.scale(s, q)
}

fn relu_sq(tape: &mut Tape, r: Var, q: f64) -> Result<Var> {
    let r = tape.relu(r)?;
    weighted_sq(tape, r, q)
}

fn columns(tape: &mut Tape, x: Var, cols: &[usize]) -> Result<Var> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &c in cols {
        match runs.last_mut() {
            Some((_, end)) if *end == c => *end += 1,
            _ => runs.push((c, c + 1)),
        }
    }
    let parts = runs
        .into_iter()
        .map(|(s, e)| tape.slice(x, s, e))
        .collect::<Result<Vec<_>>>()?;
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        tape.concat(&parts)
    }
}

struct Accum {
    acc: Option<Var>,
}

impl Accum {
    fn new() -> Self {
        Self { acc: None }
    }

    fn add(&mut self, tape: &mut Tape, v: Var) -> Result<()> {
        self.acc = Some(match self.acc {
            Some(a) => tape.add(a, v)?,
            None => v,
        });
        Ok(())
    }

    fn finish(self, tape: &mut Tape) -> Result<Var> {
        match self.acc {
            Some(a) => Ok(a),
            None => tape.constant(Tensor::scalar(0.0)),
        }
    }
}

/// Builds `J` over a batched rollout of `batch` trajectories.
pub fn loss_on_tape(
    tape: &mut Tape,
    rollout: &RolloutVars,
    xi: Option<Var>,
    problem: &ControlProblem,
    batch: usize,
) -> Result<LossVars> {
    if batch == 0 {
        return Err(Error::EmptyBatch);
    }
    let w = &problem.weights;
    let c = &problem.constraints;
    let n = rollout.actions.len();
    let n_x = tape.shape(rollout.states[0])?[1];
    let mut objective = Accum::new();
    let mut state = Accum::new();
    let mut input = Accum::new();
    let mut terminal = Accum::new();

    match &problem.objective {
        StageObjective::Stabilization => {
            for k in 0..n {
                let a = weighted_sq(tape, rollout.states[k], w.q_x)?;
                objective.add(tape, a)?;
                let b = weighted_sq(tape, rollout.actions[k], w.q_u)?;
                objective.add(tape, b)?;
            }
        }
        StageObjective::Tracking { reference } => {
            for k in 0..n {
                let r = reference.on_tape(tape, xi, k, n_x)?;
                let e = tape.sub(r, rollout.states[k])?;
                let a = weighted_sq(tape, e, w.q_r)?;
                objective.add(tape, a)?;
                let b = weighted_sq(tape, rollout.actions[k], w.q_u)?;
                objective.add(tape, b)?;
            }
        }
        StageObjective::QuadcopterSplit { outputs, reference } => {
            let rest = split_outputs(outputs, n_x)?;
            if outputs.is_empty() {
                return Err(dim("output selector is empty"));
            }
            for k in 0..n {
                let y = columns(tape, rollout.states[k], outputs)?;
                let r = reference.on_tape(tape, xi, k, outputs.len())?;
                let e = tape.sub(y, r)?;
                let a = weighted_sq(tape, e, w.q_r)?;
                objective.add(tape, a)?;
                if !rest.is_empty() {
                    let xh = columns(tape, rollout.states[k], &rest)?;
                    let b = weighted_sq(tape, xh, w.q_x)?;
                    objective.add(tape, b)?;
                }
            }
        }
        StageObjective::ObstacleSmoothing { target_offset } => {
            let target = Reference::Params { offset: *target_offset, stride: 0 }.on_tape(tape, xi, 0, n_x)?;
            let e = tape.sub(rollout.states[n], target)?;
            let a = weighted_sq(tape, e, w.q_r)?;
            objective.add(tape, a)?;
            for k in 0..n.saturating_sub(1) {
                let du = tape.sub(rollout.actions[k + 1], rollout.actions[k])?;
                let a = weighted_sq(tape, du, w.q_du)?;
                objective.add(tape, a)?;
            }
            for k in 0..n {
                let dx = tape.sub(rollout.states[k + 1], rollout.states[k])?;
                let a = weighted_sq(tape, dx, w.q_dx)?;
                objective.add(tape, a)?;
                let b = weighted_sq(tape, rollout.actions[k], w.q_u)?;
                objective.add(tape, b)?;
            }
        }
    }

    let mut norms: Vec<Option<Var>> = vec![None; n + 1];
    let mut norm = |tape: &mut Tape, k: usize| -> Result<Var> {
        if let Some(v) = norms[k] {
            return Ok(v);
        }
        let s = tape.square(rollout.states[k])?;
        let s = tape.sum_cols(s)?;
        let v = tape.sqrt(s)?;
        norms[k] = Some(v);
        Ok(v)
    };
    for k in 0..n {
        for sc in &c.state {
            let r = sc.on_tape(tape, rollout.states[k], xi)?;
            let p = relu_sq(tape, r, w.q_h)?;
            state.add(tape, p)?;
        }
        for ic in &c.input {
            let r = ic.on_tape(tape, rollout.actions[k])?;
            let p = relu_sq(tape, r, w.q_g)?;
            input.add(tape, p)?;
        }
        if let Some(Contraction { rate }) = c.contraction {
            let now = norm(tape, k)?;
            let next = norm(tape, k + 1)?;
            let scaled = tape.scale(now, rate)?;
            let r = tape.sub(next, scaled)?;
            let p = relu_sq(tape, r, w.q_c)?;
            state.add(tape, p)?;
        }
    }

    let t = weighted_sq(tape, rollout.states[n], w.q_f)?;
    terminal.add(tape, t)?;
    if let Some(ts) = &c.terminal {
        let v = ts.violation_on_tape(tape, rollout.states[n], xi)?;
        let v = tape.scale(v, w.q_f)?;
        terminal.add(tape, v)?;
    }

    let norm_factor = 1.0 / (batch * n) as f64;
    let objective = objective.finish(tape)?;
    let objective = tape.scale(objective, norm_factor)?;
    let state = state.finish(tape)?;
    let state = tape.scale(state, norm_factor)?;
    let input = input.finish(tape)?;
    let input = tape.scale(input, norm_factor)?;
    let terminal = terminal.finish(tape)?;
    let terminal = tape.scale(terminal, norm_factor)?;
    let a = tape.add(objective, state)?;
    let b = tape.add(a, input)?;
    let total = tape.add(b, terminal)?;
    Ok(LossVars {
        total,
        objective,
        state,
        input,
        terminal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::{TerminalCenter, TerminalShape};

    fn ex1_weights() -> LossWeights {
        LossWeights {
            q_x: 5.0,
            q_u: 0.2,
            q_h: 10.0,
            q_g: 100.0,
            q_f: 1.0,
            ..Default::default()
        }
    }

    fn box10() -> StateConstraint {
        StateConstraint::Box {
            lower: vec![-10.0; 2],
            upper: vec![10.0; 2],
        }
    }

    #[test]
    fn state_penalty_examples() {
        let r = box10().residuals(&[11.0, 0.0], &[]).unwrap();
        assert_eq!(penalty_state(&r, 10.0), 10.0);
        let r = box10().residuals(&[3.0, -2.0], &[]).unwrap();
        assert_eq!(penalty_state(&r, 10.0), 0.0);
        let r = box10().residuals(&[10.0, 10.0], &[]).unwrap();
        assert_eq!(penalty_state(&r, 10.0), 0.0);
    }

    #[test]
    fn input_penalty_examples() {
        let c = InputConstraint::Box {
            lower: vec![-1.0],
            upper: vec![2.5],
        };
        assert_eq!(penalty_input(&c.residuals(&[3.0]).unwrap(), 2.0), 0.5);
        assert_eq!(penalty_input(&c.residuals(&[-1.0]).unwrap(), 2.0), 0.0);
        assert_eq!(penalty_input(&c.residuals(&[0.0]).unwrap(), 2.0), 0.0);
    }

    #[test]
    fn contraction_examples() {
        assert_eq!(contraction_penalty(&[3.0, 4.0], &[0.0, 0.0], 0.8, 1.0), 0.0);
        assert!((contraction_penalty(&[1.0, 0.0], &[1.0, 0.0], 0.8, 1.0) - 0.04).abs() < 1e-15);
        assert!((contraction_penalty(&[0.0, 0.0], &[0.1, 0.0], 0.8, 1.0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn obstacle_examples() {
        assert_eq!(obstacle_residual(&[2.0, 0.0], 1.0, 1.0, 0.0, 0.0), -3.0);
        assert_eq!(obstacle_residual(&[1.0, 0.0], 1.0, 1.0, 0.0, 0.0), 0.0);
        let r = obstacle_residual(&[0.5, 0.0], 1.0, 1.0, 0.0, 0.0);
        assert_eq!(r, 0.75);
        assert_eq!(penalty_state(&[r], 100.0), 56.25);
    }

    #[test]
    fn stage_loss_examples() {
        let w = ex1_weights();
        let v = stage_loss(&StageObjective::Stabilization, &[1.0, 1.0], &[1.0], &[], 0, &w).unwrap();
        assert!((v - 10.2).abs() < 1e-12);
        let track = StageObjective::Tracking {
            reference: Reference::Params { offset: 0, stride: 2 },
        };
        let v = stage_loss(&track, &[0.3, -0.2], &[0.0], &[9.0, 9.0, 0.3, -0.2], 1, &LossWeights { q_r: 3.0, ..w }).unwrap();
        assert_eq!(v, 0.0);
        let quad = StageObjective::QuadcopterSplit {
            outputs: vec![2],
            reference: Reference::Constant { value: vec![1.0] },
        };
        let mut x = vec![0.0; 12];
        x[2] = 1.0;
        let v = stage_loss(&quad, &x, &[0.0; 4], &[], 0, &LossWeights { q_r: 20.0, q_x: 5.0, ..Default::default() }).unwrap();
        assert_eq!(v, 0.0);
        assert!(stage_loss(&StageObjective::ObstacleSmoothing { target_offset: 0 }, &x, &[0.0], &[], 0, &w).is_err());
    }

    fn traj(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>, params: Vec<f64>) -> Trajectory {
        let n_x = states[0].len();
        Trajectory {
            disturbances: vec![vec![0.0; n_x]; actions.len()],
            states,
            actions,
            scenario: (0, 0),
            params,
        }
    }

    fn ex1_problem() -> ControlProblem {
        ControlProblem {
            objective: StageObjective::Stabilization,
            constraints: ConstraintSet {
                state: vec![box10()],
                input: vec![InputConstraint::Box { lower: vec![-1.0], upper: vec![1.0] }],
                contraction: None,
                terminal: Some(TerminalSet {
                    shape: TerminalShape::Box { half_width: vec![0.1; 2] },
                    center: TerminalCenter::Origin,
                }),
            },
            weights: ex1_weights(),
        }
    }

    #[test]
    fn total_loss_examples() {
        let p = ex1_problem();
        let zero = traj(vec![vec![0.0; 2]; 3], vec![vec![0.0]; 2], vec![]);
        assert_eq!(total_loss(std::slice::from_ref(&zero), &p).unwrap().total, 0.0);
        let one = traj(vec![vec![1.0, 1.0], vec![0.0, 0.0]], vec![vec![1.0]], vec![]);
        let l = total_loss(&[one], &p).unwrap();
        assert!((l.total - 10.2).abs() < 1e-12);
        assert!(matches!(total_loss(&[], &p), Err(Error::EmptyBatch)));
        let short = traj(vec![vec![0.0; 2]; 2], vec![vec![0.0]], vec![]);
        assert!(matches!(total_loss(&[zero, short], &p), Err(Error::MixedHorizon(2, 1))));
    }

    #[test]
    fn doubling_q_h_doubles_state_penalty() {
        let p = ex1_problem();
        let t = traj(vec![vec![12.0, -11.0], vec![10.5, 0.0], vec![0.0, 0.0]], vec![vec![0.5], vec![0.0]], vec![]);
        let a = total_loss(std::slice::from_ref(&t), &p).unwrap();
        let mut p2 = p.clone();
        p2.weights.q_h *= 2.0;
        let b = total_loss(&[t], &p2).unwrap();
        assert!(a.state > 0.0);
        assert_eq!(b.state, 2.0 * a.state);
        assert_eq!(b.objective, a.objective);
    }

    #[test]
    fn obstacle_smoothing_terms() {
        let p = ControlProblem {
            objective: StageObjective::ObstacleSmoothing { target_offset: 0 },
            constraints: ConstraintSet {
                state: vec![StateConstraint::Obstacle { offset: 2 }],
                ..Default::default()
            },
            weights: LossWeights { q_r: 1.0, q_du: 1.0, q_dx: 1.0, q_u: 1.0, q_h: 100.0, ..Default::default() },
        };
        // x0 = (0,0), u0 = (1,0), u1 = (1,1); no obstacle violation (far away)
        let t = traj(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 1.0]],
            vec![vec![1.0, 0.0], vec![1.0, 1.0]],
            vec![2.0, 2.0, 0.1, 1.0, 10.0, 10.0],
        );
        let l = trajectory_loss(&t, &p).unwrap();
        // terminal 0 + 1 = 1; du = 1; dx = 1 + 2 = 3; u = 1 + 2 = 3
        assert!((l.objective - 8.0).abs() < 1e-12);
        assert_eq!(l.state, 0.0);
    }
}
