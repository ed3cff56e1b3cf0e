//! Sampling-based certification of a learned policy.
//!
//! Each closed-loop trajectory gets a 0/1 indicator (all constraints hold and
//! the final state lies in the terminal set). The empirical mean of the
//! indicators, minus the Hoeffding radius `sqrt(-ln(delta/2) / (2 r))`, lower
//! bounds the true satisfaction probability with confidence `1 - delta`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::dynamics::{rollout, LinearSystem, PolicyMode, Trajectory};
use crate::error::{dim, invalid, Error, Result};
use crate::objectives::ConstraintSet;
use crate::policy::MlpPolicy;
use crate::sampling::ScenarioSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TerminalShape {
    /// `|x - center| <= half_width` component-wise.
    Box { half_width: Vec<f64> },
    /// `||x - center||_2 <= radius`
    Ball { radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TerminalCenter {
    #[default]
    Origin,
    Fixed { point: Vec<f64> },
    /// Center read from `xi[offset .. offset + n_x]`.
    Params { offset: usize },
}

/// Closed terminal region for the final state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSet {
    pub shape: TerminalShape,
    #[serde(default)]
    pub center: TerminalCenter,
}

impl TerminalSet {
    pub fn validate(&self) -> Result<()> {
        match &self.shape {
            TerminalShape::Box { half_width } if half_width.iter().any(|w| !(*w > 0.0)) => {
                Err(invalid("terminal box half-widths must be positive"))
            }
            TerminalShape::Ball { radius } if !(*radius > 0.0) => {
                Err(invalid("terminal ball radius must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn center(&self, n: usize, xi: &[f64]) -> Result<Vec<f64>> {
        match &self.center {
            TerminalCenter::Origin => Ok(vec![0.0; n]),
            TerminalCenter::Fixed { point } if point.len() == n => Ok(point.clone()),
            TerminalCenter::Fixed { point } => Err(dim(format!(
                "terminal center has {} entries, state has {n}",
                point.len()
            ))),
            TerminalCenter::Params { offset } => xi
                .get(*offset..offset + n)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| dim("terminal center outside the parameter vector")),
        }
    }

    /// Exact membership; the boundary counts as inside.
    pub fn contains(&self, x: &[f64], xi: &[f64]) -> Result<bool> {
        let c = self.center(x.len(), xi)?;
        match &self.shape {
            TerminalShape::Box { half_width } => {
                if half_width.len() != x.len() {
                    return Err(dim("terminal box dimension mismatch"));
                }
                Ok(x.iter()
                    .zip(&c)
                    .zip(half_width)
                    .all(|((v, c), w)| (v - c).abs() <= *w))
            }
            TerminalShape::Ball { radius } => {
                let d2: f64 = x.iter().zip(&c).map(|(v, c)| (v - c).powi(2)).sum();
                Ok(d2.sqrt() <= *radius)
            }
        }
    }

    /// Squared ReLU distance outside the set (0 inside).
    pub fn violation(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        let c = self.center(x.len(), xi)?;
        match &self.shape {
            TerminalShape::Box { half_width } => {
                if half_width.len() != x.len() {
                    return Err(dim("terminal box dimension mismatch"));
                }
                Ok(x.iter()
                    .zip(&c)
                    .zip(half_width)
                    .map(|((v, c), w)| {
                        let d = v - c;
                        (d - w).max(0.0).powi(2) + (-d - w).max(0.0).powi(2)
                    })
                    .sum())
            }
            TerminalShape::Ball { radius } => {
                let d: f64 = x.iter().zip(&c).map(|(v, c)| (v - c).powi(2)).sum::<f64>().sqrt();
                Ok((d - radius).max(0.0).powi(2))
            }
        }
    }

    /// Batched [`TerminalSet::violation`], summed over the batch.
    pub fn violation_on_tape(&self, tape: &mut Tape, x: Var, xi: Option<Var>) -> Result<Var> {
        let n = tape.shape(x)?[1];
        let offset = match &self.center {
            TerminalCenter::Origin => x,
            TerminalCenter::Fixed { point } => {
                if point.len() != n {
                    return Err(dim("terminal center dimension mismatch"));
                }
                let c = tape.constant(Tensor::new(vec![1, n], point.clone())?)?;
                tape.sub(x, c)?
            }
            TerminalCenter::Params { offset } => {
                let xi = xi.ok_or_else(|| dim("terminal center reads xi but the scenario has none"))?;
                let c = tape.slice(xi, *offset, offset + n)?;
                tape.sub(x, c)?
            }
        };
        let excess = match &self.shape {
            TerminalShape::Box { half_width } => {
                if half_width.len() != n {
                    return Err(dim("terminal box dimension mismatch"));
                }
                let w = tape.constant(Tensor::new(vec![1, n], half_width.clone())?)?;
                let above = tape.sub(offset, w)?;
                let neg = tape.scale(offset, -1.0)?;
                let below = tape.sub(neg, w)?;
                tape.concat(&[above, below])?
            }
            TerminalShape::Ball { radius } => {
                let s = tape.square(offset)?;
                let s = tape.sum_cols(s)?;
                let d = tape.sqrt(s)?;
                let r = tape.constant(Tensor::scalar(*radius))?;
                tape.sub(d, r)?
            }
        };
        let r = tape.relu(excess)?;
        let s = tape.square(r)?;
        tape.sum(s)
    }
}

/// Confidence requirements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificationConfig {
    /// Required satisfaction probability.
    pub beta: f64,
    /// Two-sided Hoeffding failure probability; confidence is `1 - delta`.
    pub delta: f64,
}

impl CertificationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// 1 iff every state and input constraint holds for `k < N` and `x_N` is in
/// the terminal set (when one is given).
pub fn indicator(traj: &Trajectory, constraints: &ConstraintSet, terminal: Option<&TerminalSet>) -> Result<bool> {
    let xi = traj.params.as_slice();
    for k in 0..traj.horizon() {
        if constraints.state_residuals(&traj.states[k], xi)?.iter().any(|&r| r > 0.0) {
            return Ok(false);
        }
        if constraints.input_residuals(&traj.actions[k])?.iter().any(|&r| r > 0.0) {
            return Ok(false);
        }
    }
    match terminal {
        Some(t) => t.contains(traj.terminal(), xi),
        None => Ok(true),
    }
}

/// Fraction of satisfied trajectories.
pub fn empirical_risk(indicators: &[bool]) -> Result<f64> {
    if indicators.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let ok = indicators.iter().filter(|&&b| b).count();
    Ok(ok as f64 / indicators.len() as f64)
}

/// Hoeffding radius `sqrt(-ln(delta / 2) / (2 r))` for `0 < delta <= 2`.
pub fn hoeffding_alpha(r: usize, delta: f64) -> Result<f64> {
    if r == 0 {
        return Err(invalid("need at least one trajectory"));
    }
    if !(delta > 0.0 && delta <= 2.0) {
        return Err(invalid(format!("delta must lie in (0, 2], got {delta}")));
    }
    Ok((-(delta / 2.0).ln() / (2.0 * r as f64)).max(0.0).sqrt())
}

/// Smallest `r` for which `alpha(r, delta) <= target`.
pub fn required_samples(target_alpha: f64, delta: f64) -> Result<usize> {
    if !(target_alpha > 0.0) {
        return Err(invalid("target radius must be positive"));
    }
    hoeffding_alpha(1, delta)?;
    let r = (-(delta / 2.0).ln() / (2.0 * target_alpha * target_alpha)).ceil();
    Ok((r as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

/// `Pass` iff `beta <= mu_tilde - alpha`.
pub fn certify(mu_tilde: f64, alpha: f64, beta: f64) -> Verdict {
    if beta <= mu_tilde - alpha {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub r: usize,
    pub m: usize,
    pub s: usize,
    pub beta: f64,
    pub delta: f64,
    pub mu_tilde: f64,
    pub alpha: f64,
    pub lower_bound: f64,
    pub verdict: Verdict,
    pub policy_checkpoint: Option<String>,
    pub seed: u64,
    #[serde(skip)]
    pub indicators: Vec<bool>,
}

impl CertificationReport {
    pub fn from_indicators(indicators: Vec<bool>, m: usize, s: usize, cfg: &CertificationConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let r = indicators.len();
        let mu_tilde = empirical_risk(&indicators)?;
        let alpha = hoeffding_alpha(r, cfg.delta)?;
        Ok(Self {
            r,
            m,
            s,
            beta: cfg.beta,
            delta: cfg.delta,
            mu_tilde,
            alpha,
            lower_bound: mu_tilde - alpha,
            verdict: certify(mu_tilde, alpha, cfg.beta),
            policy_checkpoint: None,
            seed,
            indicators,
        })
    }

    pub fn statement(&self) -> String {
        format!(
            "with confidence {:.4}, chance constraints hold with probability >= {} ({:?}; bound {:.6})",
            1.0 - self.delta,
            self.beta,
            self.verdict,
            self.lower_bound
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Rolls out every scenario of `set` and evaluates the indicators.
pub fn evaluate_indicators(
    model: &LinearSystem,
    policy: &MlpPolicy,
    mode: PolicyMode,
    set: &ScenarioSet,
    constraints: &ConstraintSet,
) -> Result<Vec<bool>> {
    (0..set.len())
        .into_par_iter()
        .map(|idx| {
            let sc = set.get(idx);
            let mut traj = rollout(model, policy, mode, sc.x0, sc.xi, sc.omega)?;
            traj.scenario = (sc.i, sc.j);
            indicator(&traj, constraints, constraints.terminal.as_ref())
        })
        .collect()
}

/// Full certification pass on a (held-out) scenario set.
pub fn certify_policy(
    model: &LinearSystem,
    policy: &MlpPolicy,
    mode: PolicyMode,
    set: &ScenarioSet,
    constraints: &ConstraintSet,
    cfg: &CertificationConfig,
) -> Result<CertificationReport> {
    let ind = evaluate_indicators(model, policy, mode, set, constraints)?;
    CertificationReport::from_indicators(ind, set.m(), set.s(), cfg, set.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{InputConstraint, StateConstraint};

    fn ex1_constraints() -> ConstraintSet {
        ConstraintSet {
            state: vec![StateConstraint::Box { lower: vec![-10.0; 2], upper: vec![10.0; 2] }],
            input: vec![InputConstraint::Box { lower: vec![-1.0], upper: vec![1.0] }],
            contraction: None,
            terminal: Some(TerminalSet {
                shape: TerminalShape::Box { half_width: vec![0.1; 2] },
                center: TerminalCenter::Origin,
            }),
        }
    }

    fn traj(states: Vec<Vec<f64>>) -> Trajectory {
        let n = states.len() - 1;
        Trajectory {
            states,
            actions: vec![vec![0.0]; n],
            disturbances: vec![vec![0.0; 2]; n],
            scenario: (0, 0),
            params: vec![],
        }
    }

    #[test]
    fn indicator_examples() {
        let c = ex1_constraints();
        let t = c.terminal.as_ref();
        assert!(indicator(&traj(vec![vec![1.0, 2.0], vec![0.5, 0.5], vec![0.0, 0.0]]), &c, t).unwrap());
        assert!(!indicator(&traj(vec![vec![10.0001, 0.0], vec![0.0, 0.0]]), &c, t).unwrap());
        assert!(indicator(&traj(vec![vec![1.0, 2.0], vec![0.1, 0.1]]), &c, t).unwrap());
        assert!(!indicator(&traj(vec![vec![1.0, 2.0], vec![0.1, 0.1000001]]), &c, t).unwrap());
    }

    #[test]
    fn risk_examples() {
        assert_eq!(empirical_risk(&[true; 5]).unwrap(), 1.0);
        assert_eq!(empirical_risk(&[true, false, true, false]).unwrap(), 0.5);
        let mut v = vec![true; 33330];
        v.iter_mut().take(166).for_each(|b| *b = false);
        assert_eq!(empirical_risk(&v).unwrap(), (33330.0 - 166.0) / 33330.0);
        assert!(empirical_risk(&[]).is_err());
    }

    #[test]
    fn alpha_examples() {
        let a = hoeffding_alpha(33330, 0.01).unwrap();
        assert!((a - 0.008915).abs() < 1e-6, "{a}");
        assert_eq!(hoeffding_alpha(10, 2.0).unwrap(), 0.0);
        let a1 = hoeffding_alpha(100, 0.05).unwrap();
        let a4 = hoeffding_alpha(400, 0.05).unwrap();
        assert!((a1 - 2.0 * a4).abs() < 1e-15);
        assert!(hoeffding_alpha(0, 0.1).is_err());
        assert!(hoeffding_alpha(10, 0.0).is_err());
        assert!(hoeffding_alpha(10, 2.5).is_err());
    }

    #[test]
    fn required_samples_inverts_alpha() {
        let r = required_samples(0.01, 0.01).unwrap();
        assert!(hoeffding_alpha(r, 0.01).unwrap() <= 0.01);
        assert!(hoeffding_alpha(r - 1, 0.01).unwrap() > 0.01);
    }

    #[test]
    fn verdict_examples() {
        let a = hoeffding_alpha(33330, 0.01).unwrap();
        assert_eq!(certify(1.0, a, 0.99), Verdict::Pass);
        assert_eq!(certify(0.5, a, 0.9), Verdict::Fail);
        assert_eq!(certify(0.75, 0.25, 0.5), Verdict::Pass);
    }

    #[test]
    fn report_json_keys() {
        let cfg = CertificationConfig { beta: 0.8, delta: 0.01 };
        let rep = CertificationReport::from_indicators(vec![true; 100], 20, 5, &cfg, 3).unwrap();
        let v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in ["r", "m", "s", "beta", "delta", "mu_tilde", "alpha", "lower_bound", "verdict", "policy_checkpoint", "seed"] {
            assert!(keys.contains(&k), "missing {k}");
        }
        assert_eq!(v["verdict"], "pass");
        assert!(rep.statement().contains("0.99"));
    }

    #[test]
    fn terminal_ball_with_param_center() {
        let t = TerminalSet {
            shape: TerminalShape::Ball { radius: 0.5 },
            center: TerminalCenter::Params { offset: 1 },
        };
        assert!(t.contains(&[1.3, 2.0], &[9.0, 1.0, 2.0]).unwrap());
        assert!(!t.contains(&[1.6, 2.0], &[9.0, 1.0, 2.0]).unwrap());
        assert!((t.violation(&[2.0, 2.0], &[9.0, 1.0, 2.0]).unwrap() - 0.25).abs() < 1e-15);
    }
}
