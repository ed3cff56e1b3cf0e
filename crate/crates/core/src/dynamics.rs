//! Uncertain linear dynamics `x+ = A x + B u + w` and closed-loop rollouts.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{dim, invalid, Result};
use crate::policy::{BoundPolicy, MlpPolicy};
use crate::rng;

/// Nominal `(A, B)` model.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: Tensor,
    b: Tensor,
}

#[derive(Deserialize)]
struct ModelFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
}

impl LinearSystem {
    /// Validates dimensions and warns if the pair is not controllable.
    pub fn new(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        let a = Tensor::from_rows(&a)?;
        let b = Tensor::from_rows(&b)?;
        let (ar, ac) = a.dims2();
        let (br, bc) = b.dims2();
        if ar == 0 || ar != ac {
            return Err(dim(format!("A must be square and non-empty, got {ar}x{ac}")));
        }
        if br != ar || bc == 0 {
            return Err(dim(format!("B must have {ar} rows and at least one column, got {br}x{bc}")));
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(invalid("model matrices must be finite"));
        }
        let sys = Self { a, b };
        let rank = sys.controllability_rank();
        if rank < sys.n_x() {
            log::warn!(
                "(A, B) is not controllable: controllability matrix rank {rank} < n_x = {}",
                sys.n_x()
            );
        }
        Ok(sys)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(s)?;
        Self::new(f.a, f.b)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn n_x(&self) -> usize {
        self.a.dims2().0
    }

    pub fn n_u(&self) -> usize {
        self.b.dims2().1
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    /// Rank of `[B, AB, ..., A^{n-1} B]`.
    pub fn controllability_rank(&self) -> usize {
        let (n, m) = (self.n_x(), self.n_u());
        let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(n * m);
        let mut cur: Vec<Vec<f64>> = (0..m)
            .map(|c| (0..n).map(|r| self.b.row(r)[c]).collect())
            .collect();
        for _ in 0..n {
            let next = cur.iter().map(|col| mat_vec(&self.a, col)).collect();
            blocks.append(&mut cur);
            cur = next;
        }
        matrix_rank(blocks, n)
    }

    pub fn is_controllable(&self) -> bool {
        self.controllability_rank() == self.n_x()
    }

    /// One step `A x + B u + w`.
    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_x() || u.len() != self.n_u() || w.len() != self.n_x() {
            return Err(dim(format!(
                "step expects x[{}], u[{}], w[{}]; got x[{}], u[{}], w[{}]",
                self.n_x(),
                self.n_u(),
                self.n_x(),
                x.len(),
                u.len(),
                w.len()
            )));
        }
        let ax = mat_vec(&self.a, x);
        let bu = mat_vec(&self.b, u);
        Ok((0..self.n_x()).map(|i| ax[i] + bu[i] + w[i]).collect())
    }

    /// Open-loop propagation of a fixed action sequence.
    pub fn propagate(&self, x0: &[f64], actions: &[Vec<f64>], noise: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if actions.len() != noise.len() {
            return Err(dim("action and disturbance sequences differ in length"));
        }
        let mut states = vec![x0.to_vec()];
        for (u, w) in actions.iter().zip(noise) {
            let next = self.step(states.last().expect("non-empty"), u, w)?;
            states.push(next);
        }
        Ok(states)
    }

    /// Places `A` and `B` on a tape as constants.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundSystem> {
        Ok(BoundSystem {
            a: tape.constant(self.a.clone())?,
            b: tape.constant(self.b.clone())?,
            n_x: self.n_x(),
            n_u: self.n_u(),
        })
    }
}

fn mat_vec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    let (r, _) = m.dims2();
    (0..r)
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Rank of the matrix whose columns are `cols` (each of length `rows`).
fn matrix_rank(cols: Vec<Vec<f64>>, rows: usize) -> usize {
    let mut m: Vec<Vec<f64>> = (0..rows)
        .map(|r| cols.iter().map(|c| c[r]).collect())
        .collect();
    let ncols = cols.len();
    let scale = m
        .iter()
        .flatten()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    let tol = 1e-10 * scale;
    let mut rank = 0;
    for c in 0..ncols {
        if rank == rows {
            break;
        }
        let pivot = (rank..rows)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .expect("rows remain");
        if m[pivot][c].abs() <= tol {
            continue;
        }
        m.swap(rank, pivot);
        for r in rank + 1..rows {
            let f = m[r][c] / m[rank][c];
            let pivot_row = m[rank].clone();
            for (v, p) in m[r][c..ncols].iter_mut().zip(&pivot_row[c..ncols]) {
                *v -= f * p;
            }
        }
        rank += 1;
    }
    rank
}

/// `A`, `B` as tape constants.
#[derive(Debug, Clone, Copy)]
pub struct BoundSystem {
    pub a: Var,
    pub b: Var,
    pub n_x: usize,
    pub n_u: usize,
}

impl BoundSystem {
    /// Batched step: `x` is `[batch, n_x]`, `u` is `[batch, n_u]`.
    pub fn step(&self, tape: &mut Tape, x: Var, u: Var, w: Option<Var>) -> Result<Var> {
        let ax = tape.matmul_t(x, self.a)?;
        let bu = tape.matmul_t(u, self.b)?;
        let next = tape.add(ax, bu)?;
        match w {
            Some(w) => tape.add(next, w),
            None => Ok(next),
        }
    }
}

/// How the policy produces actions along a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyMode {
    /// One evaluation at `k = 0` yields the whole sequence `[u_0 .. u_{N-1}]`.
    FullHorizon,
    /// `u_k = pi(x_k)` at every step.
    StateFeedback,
}

impl PolicyMode {
    /// `(input_dim, output_dim)` the policy must have.
    pub fn policy_dims(self, n_x: usize, n_xi: usize, n_u: usize, horizon: usize) -> (usize, usize) {
        match self {
            PolicyMode::FullHorizon => (n_x + n_xi, horizon * n_u),
            PolicyMode::StateFeedback => (n_x + n_xi, n_u),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Uniform,
    #[default]
    Zero,
}

/// Additive disturbance distribution.
///
/// Gaussian noise is truncated at `4 * max(scale)` unless `truncate` is
/// false; an explicit `bound` always applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub scale: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(default = "default_true")]
    pub truncate: bool,
}

fn default_true() -> bool {
    true
}

impl NoiseSpec {
    pub fn zero(n: usize) -> Self {
        Self {
            kind: NoiseKind::Zero,
            scale: vec![0.0; n],
            bound: None,
            truncate: true,
        }
    }

    pub fn gaussian(scale: Vec<f64>) -> Self {
        Self {
            kind: NoiseKind::Gaussian,
            scale,
            bound: None,
            truncate: true,
        }
    }

    pub fn uniform(scale: Vec<f64>) -> Self {
        Self {
            kind: NoiseKind::Uniform,
            scale,
            bound: None,
            truncate: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn validate(&self, n_x: usize) -> Result<()> {
        if self.scale.len() != n_x {
            return Err(dim(format!(
                "noise scale has {} entries, state has {n_x}",
                self.scale.len()
            )));
        }
        if self.scale.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(invalid("noise scales must be finite and non-negative"));
        }
        if let Some(b) = self.bound {
            if !(b > 0.0) {
                return Err(invalid("noise bound must be positive"));
            }
        }
        Ok(())
    }

    /// Infinity-norm bound every sample satisfies, if any.
    pub fn effective_bound(&self) -> Option<f64> {
        if self.bound.is_some() {
            return self.bound;
        }
        match self.kind {
            NoiseKind::Gaussian if self.truncate => {
                Some(4.0 * self.scale.iter().fold(0.0_f64, |a, &s| a.max(s)))
            }
            _ => None,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let bound = self.effective_bound();
        self.scale
            .iter()
            .map(|&s| match self.kind {
                NoiseKind::Zero => 0.0,
                NoiseKind::Uniform => {
                    let half = bound.map_or(s, |b| s.min(b));
                    if half == 0.0 {
                        0.0
                    } else {
                        rng.random_range(-half..=half)
                    }
                }
                NoiseKind::Gaussian => {
                    if s == 0.0 {
                        return 0.0;
                    }
                    let limit = bound.unwrap_or(f64::INFINITY);
                    for _ in 0..10_000 {
                        let z: f64 = StandardNormal.sample(rng);
                        let v = s * z;
                        if v.abs() <= limit {
                            return v;
                        }
                    }
                    0.0
                }
            })
            .collect()
    }
}

/// Seeded disturbance generator addressed by `(trace, step)`.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    pub spec: NoiseSpec,
    pub seed: u64,
    pub stream: u64,
}

impl NoiseSource {
    pub fn new(spec: NoiseSpec, seed: u64, stream: u64) -> Self {
        Self { spec, seed, stream }
    }

    pub fn disturbance(&self, trace: u64, step: u64) -> Vec<f64> {
        let mut r = rng::keyed(self.seed, self.stream, &[trace, step]);
        self.spec.sample(&mut r)
    }
}

/// A realized closed-loop trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `N + 1` states.
    pub states: Vec<Vec<f64>>,
    /// `N` actions.
    pub actions: Vec<Vec<f64>>,
    /// `N` disturbances.
    pub disturbances: Vec<Vec<f64>>,
    /// `(i, j)` scenario indices.
    pub scenario: (usize, usize),
    /// Parameter vector `xi` of the scenario.
    pub params: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Largest deviation between stored states and a replay of the stored inputs.
    pub fn reconstruction_residual(&self, model: &LinearSystem) -> Result<f64> {
        let mut worst = 0.0_f64;
        for k in 0..self.horizon() {
            let next = model.step(&self.states[k], &self.actions[k], &self.disturbances[k])?;
            for (a, b) in next.iter().zip(&self.states[k + 1]) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

fn check_rollout(model: &LinearSystem, policy: &MlpPolicy, mode: PolicyMode, x0: &[f64], xi: &[f64], horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if x0.len() != model.n_x() {
        return Err(dim(format!("x0 has {} entries, n_x = {}", x0.len(), model.n_x())));
    }
    let (inp, out) = mode.policy_dims(model.n_x(), xi.len(), model.n_u(), horizon);
    if policy.input_dim() != inp || policy.output_dim() != out {
        return Err(dim(format!(
            "{mode:?} rollout with n_x={}, n_xi={}, n_u={}, N={horizon} needs a {inp}->{out} policy, got {}->{}",
            model.n_x(),
            xi.len(),
            model.n_u(),
            policy.input_dim(),
            policy.output_dim()
        )));
    }
    Ok(())
}

/// Closed-loop rollout over `noise.len()` steps (plain floating point).
pub fn rollout(
    model: &LinearSystem,
    policy: &MlpPolicy,
    mode: PolicyMode,
    x0: &[f64],
    xi: &[f64],
    noise: &[Vec<f64>],
) -> Result<Trajectory> {
    let horizon = noise.len();
    check_rollout(model, policy, mode, x0, xi, horizon)?;
    let mut states = vec![x0.to_vec()];
    let mut actions = Vec::with_capacity(horizon);
    let planned = match mode {
        PolicyMode::FullHorizon => Some(policy.action_sequence(x0, xi, model.n_u())?),
        PolicyMode::StateFeedback => None,
    };
    for (k, w) in noise.iter().enumerate() {
        let x = states.last().expect("non-empty");
        let u = match &planned {
            Some(seq) => seq[k].clone(),
            None => policy.action_sequence(x, xi, model.n_u())?.swap_remove(0),
        };
        let next = model.step(x, &u, w)?;
        actions.push(u);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        actions,
        disturbances: noise.to_vec(),
        scenario: (0, 0),
        params: xi.to_vec(),
    })
}

/// Differentiable batched rollout.
#[derive(Debug, Clone)]
pub struct RolloutVars {
    /// `N + 1` nodes of shape `[batch, n_x]`.
    pub states: Vec<Var>,
    /// `N` nodes of shape `[batch, n_u]`.
    pub actions: Vec<Var>,
}

/// Unrolls the closed loop on `tape`.
///
/// `x0` is `[batch, n_x]`, `xi` is `[batch, n_xi]` (or `None` when the
/// scenario has no parameters) and `noise[k]` is `[batch, n_x]`.
pub fn rollout_on_tape(
    tape: &mut Tape,
    system: &BoundSystem,
    policy: &BoundPolicy,
    mode: PolicyMode,
    x0: Var,
    xi: Option<Var>,
    noise: &[Var],
) -> Result<RolloutVars> {
    let horizon = noise.len();
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    let n_u = system.n_u;
    let input = |tape: &mut Tape, x: Var| match xi {
        Some(p) => tape.concat(&[x, p]),
        None => Ok(x),
    };
    let mut states = vec![x0];
    let mut actions = Vec::with_capacity(horizon);
    match mode {
        PolicyMode::FullHorizon => {
            let z0 = input(tape, x0)?;
            let seq = policy.forward(tape, z0)?;
            let width = tape.shape(seq)?[1];
            if width != horizon * n_u {
                return Err(dim(format!(
                    "policy emits {width} values, horizon {horizon} x n_u {n_u} required"
                )));
            }
            for k in 0..horizon {
                actions.push(tape.slice(seq, k * n_u, (k + 1) * n_u)?);
            }
            for (k, &w) in noise.iter().enumerate() {
                let next = system.step(tape, states[k], actions[k], Some(w))?;
                states.push(next);
            }
        }
        PolicyMode::StateFeedback => {
            for &w in noise {
                let x = *states.last().expect("non-empty");
                let z = input(tape, x)?;
                let u = policy.forward(tape, z)?;
                if tape.shape(u)?[1] != n_u {
                    return Err(dim("state-feedback policy must emit n_u values"));
                }
                let next = system.step(tape, x, u, Some(w))?;
                actions.push(u);
                states.push(next);
            }
        }
    }
    Ok(RolloutVars { states, actions })
}

/// Open-loop unroll of explicit action nodes.
pub fn open_loop_on_tape(
    tape: &mut Tape,
    system: &BoundSystem,
    x0: Var,
    actions: &[Var],
    noise: Option<&[Var]>,
) -> Result<Vec<Var>> {
    let mut states = vec![x0];
    for (k, &u) in actions.iter().enumerate() {
        let w = noise.map(|n| n[k]);
        let next = system.step(tape, states[k], u, w)?;
        states.push(next);
    }
    Ok(states)
}

/// Receding-horizon closed loop: re-plan from the measured state and apply
/// only the first action each step.
///
/// `params_at(t)` supplies the parameter forecast at real time `t`;
/// `horizon` is the policy's prediction horizon (ignored in state-feedback mode).
#[allow(clippy::too_many_arguments)]
pub fn simulate_receding_horizon(
    model: &LinearSystem,
    policy: &MlpPolicy,
    mode: PolicyMode,
    horizon: usize,
    x0: &[f64],
    params_at: &dyn Fn(usize) -> Vec<f64>,
    noise: &NoiseSource,
    trace: u64,
    steps: usize,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(invalid("simulation needs at least one step"));
    }
    let mut states = vec![x0.to_vec()];
    let mut actions = Vec::with_capacity(steps);
    let mut disturbances = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = states.last().expect("non-empty").clone();
        let xi = params_at(t);
        let plan_len = match mode {
            PolicyMode::FullHorizon => horizon,
            PolicyMode::StateFeedback => 1,
        };
        check_rollout(model, policy, mode, &x, &xi, plan_len)?;
        let u = policy.action_sequence(&x, &xi, model.n_u())?.swap_remove(0);
        let w = noise.disturbance(trace, t as u64);
        let next = model.step(&x, &u, &w)?;
        actions.push(u);
        disturbances.push(w);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        actions,
        disturbances,
        scenario: (trace as usize, 0),
        params: params_at(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyArchitecture;

    fn obstacle_system() -> LinearSystem {
        LinearSystem::new(vec![vec![1.0, 0.1], vec![0.0, 1.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    fn unstable_system() -> LinearSystem {
        LinearSystem::new(vec![vec![1.2, 1.0], vec![0.0, 1.0]], vec![vec![1.0], vec![0.5]]).unwrap()
    }

    #[test]
    fn step_examples() {
        let s = obstacle_system();
        assert_eq!(s.step(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(s.step(&[0.0, 0.0], &[0.0, 0.0], &[0.3, -0.1]).unwrap(), vec![0.3, -0.1]);
        let u = unstable_system();
        let x = u.step(&[1.0, 1.0], &[-1.0], &[0.0, 0.0]).unwrap();
        assert!((x[0] - 1.2).abs() < 1e-15 && (x[1] - 0.5).abs() < 1e-15);
        assert!(u.step(&[1.0], &[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn model_shape_validation() {
        assert!(LinearSystem::new(vec![vec![1.0, 0.0]], vec![vec![1.0]]).is_err());
        assert!(LinearSystem::new(vec![vec![1.0]], vec![vec![1.0], vec![0.0]]).is_err());
    }

    #[test]
    fn controllability() {
        assert!(unstable_system().is_controllable());
        assert!(obstacle_system().is_controllable());
        let bad = LinearSystem::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0], vec![0.0]]).unwrap();
        assert_eq!(bad.controllability_rank(), 1);
    }

    #[test]
    fn json_fixture() {
        let s = LinearSystem::from_json(r#"{"A": [[1.2, 1.0], [0.0, 1.0]], "B": [[1.0], [0.5]]}"#).unwrap();
        assert_eq!(s, unstable_system());
    }

    #[test]
    fn zero_policy_rollouts() {
        let s = obstacle_system();
        let p = MlpPolicy::zeros(PolicyArchitecture::new(2, vec![4], 4, 0)).unwrap();
        let zero = vec![vec![0.0; 2]; 2];
        let t = rollout(&s, &p, PolicyMode::FullHorizon, &[0.0, 0.0], &[], &zero).unwrap();
        assert!(t.states.iter().flatten().all(|&v| v == 0.0));
        let t = rollout(&s, &p, PolicyMode::FullHorizon, &[1.0, 0.0], &[], &zero).unwrap();
        assert_eq!(t.states, vec![vec![1.0, 0.0]; 3]);
    }

    #[test]
    fn rollout_shape_and_errors() {
        let s = unstable_system();
        let p = MlpPolicy::init(PolicyArchitecture::new(2, vec![5], 1, 3)).unwrap();
        let noise = vec![vec![0.01, -0.02]; 3];
        let t = rollout(&s, &p, PolicyMode::StateFeedback, &[1.0, -1.0], &[], &noise).unwrap();
        assert_eq!((t.states.len(), t.actions.len()), (4, 3));
        assert!(t.reconstruction_residual(&s).unwrap() <= 1e-12);
        assert!(rollout(&s, &p, PolicyMode::StateFeedback, &[1.0, -1.0], &[], &[]).is_err());
        assert!(rollout(&s, &p, PolicyMode::FullHorizon, &[1.0, -1.0], &[], &noise).is_err());
    }

    #[test]
    fn tape_rollout_matches_plain_rollout() {
        let s = obstacle_system();
        let p = MlpPolicy::init(PolicyArchitecture::new(3, vec![6, 5], 6, 11)).unwrap();
        let noise = vec![vec![0.01, 0.02], vec![-0.03, 0.0], vec![0.0, 0.05]];
        for mode in [PolicyMode::FullHorizon] {
            let plain = rollout(&s, &p, mode, &[0.4, -0.7], &[0.9], &noise).unwrap();
            let mut tape = Tape::new();
            let sys = s.bind(&mut tape).unwrap();
            let pol = p.bind(&mut tape).unwrap();
            let x0 = tape.constant(Tensor::from_rows(&[vec![0.4, -0.7]]).unwrap()).unwrap();
            let xi = tape.constant(Tensor::from_rows(&[vec![0.9]]).unwrap()).unwrap();
            let w: Vec<Var> = noise
                .iter()
                .map(|w| tape.constant(Tensor::from_rows(std::slice::from_ref(w)).unwrap()).unwrap())
                .collect();
            let r = rollout_on_tape(&mut tape, &sys, &pol, mode, x0, Some(xi), &w).unwrap();
            for (k, &x) in r.states.iter().enumerate() {
                let v = tape.value(x).unwrap().data();
                for (a, b) in v.iter().zip(&plain.states[k]) {
                    assert!((a - b).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn noise_truncation_and_determinism() {
        let spec = NoiseSpec::gaussian(vec![1.0, 0.5]);
        assert_eq!(spec.effective_bound(), Some(4.0));
        let src = NoiseSource::new(NoiseSpec { bound: Some(0.7), ..spec.clone() }, 5, rng::stream::DISTURBANCE);
        for t in 0..2000 {
            assert!(src.disturbance(t, 0).iter().all(|v| v.abs() <= 0.7));
        }
        assert_eq!(src.disturbance(3, 4), src.disturbance(3, 4));
        let untrunc = NoiseSpec { truncate: false, ..spec };
        assert_eq!(untrunc.effective_bound(), None);
        let z = NoiseSpec::zero(3);
        assert_eq!(z.sample(&mut rng::keyed(1, 1, &[])), vec![0.0; 3]);
    }

    #[test]
    fn receding_horizon_matches_rollout_without_noise() {
        let s = unstable_system();
        let p = MlpPolicy::init(PolicyArchitecture::new(2, vec![8], 1, 2)).unwrap();
        let src = NoiseSource::new(NoiseSpec::zero(2), 0, 0);
        let sim = simulate_receding_horizon(&s, &p, PolicyMode::StateFeedback, 1, &[0.5, -0.5], &|_| vec![], &src, 0, 6).unwrap();
        let roll = rollout(&s, &p, PolicyMode::StateFeedback, &[0.5, -0.5], &[], &vec![vec![0.0; 2]; 6]).unwrap();
        assert_eq!(sim.states, roll.states);
        let one = simulate_receding_horizon(&s, &p, PolicyMode::StateFeedback, 1, &[0.5, -0.5], &|_| vec![], &src, 0, 1).unwrap();
        assert_eq!((one.states.len(), one.actions.len()), (2, 1));
        assert!(simulate_receding_horizon(&s, &p, PolicyMode::StateFeedback, 1, &[0.5, -0.5], &|_| vec![], &src, 0, 0).is_err());
    }
}
