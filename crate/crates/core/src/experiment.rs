//! Experiment configuration and the `sample | train | certify | simulate |
//! benchmark` pipeline behind the command-line runner.
//!
//! Every run writes its artifacts plus a `manifest_<command>.json` that lists
//! them together with the config hash, the seed and wall-clock data. CSV and
//! checkpoint files never contain timestamps, so reruns with the same config
//! and seed reproduce them byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline_mpc::{benchmark, BenchmarkReport, SolverConfig};
use crate::certify::{certify_policy, CertificationConfig, CertificationReport};
use crate::dynamics::{simulate_receding_horizon, LinearSystem, NoiseSource, NoiseSpec, PolicyMode, Trajectory};
use crate::error::Error;
use crate::objectives::{ControlProblem, InputConstraint, StateConstraint};
use crate::plot::Figure;
use crate::policy::{MlpPolicy, PolicyArchitecture};
use crate::rng::stream;
use crate::sampling::{sample_scenarios, split, Component, ParamSpec, ScenarioSet};
use crate::trainer::{train, TrainConfig, TrainHistory};

/// Failure of a pipeline run, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(#[from] Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Runtime(_) => 2,
        }
    }
}

fn config_err(field: &str, e: impl std::fmt::Display) -> RunError {
    RunError::Config(format!("{field}: {e}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    /// JSON file with `A` and `B`, relative to the config file.
    Fixture { fixture: PathBuf },
    Inline {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden: Vec<usize>,
    pub mode: PolicyMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub steps: usize,
    pub realizations: usize,
    /// Initial-state distribution; defaults to the training one.
    pub x0: Option<Vec<Component>>,
    /// `||x||_inf` threshold used in the settling summary.
    pub settle_tolerance: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { steps: 50, realizations: 20, x0: None, settle_tolerance: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub instances: usize,
    pub repetitions: usize,
    pub solver: SolverConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { instances: 20, repetitions: 5, solver: SolverConfig::default() }
    }
}

fn default_split() -> Vec<f64> {
    vec![0.6, 0.2, 0.2]
}

/// Full description of one case study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSource,
    pub policy: PolicyConfig,
    pub horizon: usize,
    pub params: ParamSpec,
    pub noise: NoiseSpec,
    pub m: usize,
    pub s: usize,
    /// Fractions of the `m` parametric scenarios for train, dev and test.
    #[serde(default = "default_split")]
    pub split: Vec<f64>,
    pub problem: ControlProblem,
    #[serde(default)]
    pub train: TrainConfig,
    pub certification: CertificationConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
    /// Extra checkpoint every this many epochs.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

/// Train, dev and test scenario sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: ScenarioSet,
    pub dev: ScenarioSet,
    pub test: ScenarioSet,
}

/// A loaded, validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: LinearSystem,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let bytes = fs::read(path).map_err(|e| config_err(&path.display().to_string(), e))?;
        let config: ExperimentConfig =
            serde_json::from_slice(&bytes).map_err(|e| config_err(&path.display().to_string(), e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut exp = Self::from_config(config, base)?;
        exp.config_hash = hex::encode(Sha256::digest(&bytes));
        Ok(exp)
    }

    /// Validates `config`; fixture paths resolve against `base`.
    pub fn from_config(config: ExperimentConfig, base: &Path) -> Result<Self, RunError> {
        let model = match &config.model {
            ModelSource::Fixture { fixture } => {
                let p = base.join(fixture);
                if !p.exists() {
                    return Err(config_err("model.fixture", format!("{} does not exist", p.display())));
                }
                LinearSystem::load(&p).map_err(|e| config_err("model.fixture", e))?
            }
            ModelSource::Inline { a, b } => LinearSystem::new(a.clone(), b.clone()).map_err(|e| config_err("model", e))?,
        };
        let c = &config;
        if c.horizon == 0 {
            return Err(config_err("horizon", "must be at least 1"));
        }
        if c.m == 0 || c.s == 0 {
            return Err(config_err("m/s", "must be at least 1"));
        }
        if c.split.len() != 3 || c.split.iter().any(|f| !(*f > 0.0)) || c.split.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(config_err("split", "expected three positive fractions summing to at most 1"));
        }
        c.params.validate().map_err(|e| config_err("params", e))?;
        if c.params.x0.len() != model.n_x() {
            return Err(config_err("params.x0", format!("{} components for n_x = {}", c.params.x0.len(), model.n_x())));
        }
        if let Some(x0) = &c.simulation.x0 {
            if x0.len() != model.n_x() {
                return Err(config_err("simulation.x0", "length must equal n_x"));
            }
        }
        c.noise.validate(model.n_x()).map_err(|e| config_err("noise", e))?;
        c.problem.weights.validate().map_err(|e| config_err("problem.weights", e))?;
        c.problem.constraints.validate().map_err(|e| config_err("problem.constraints", e))?;
        c.train.validate().map_err(|e| config_err("train", e))?;
        c.certification.validate().map_err(|e| config_err("certification", e))?;
        c.benchmark.solver.validate().map_err(|e| config_err("benchmark.solver", e))?;
        if c.simulation.steps == 0 || c.simulation.realizations == 0 {
            return Err(config_err("simulation", "steps and realizations must be at least 1"));
        }
        if c.benchmark.instances == 0 || c.benchmark.repetitions == 0 {
            return Err(config_err("benchmark", "instances and repetitions must be at least 1"));
        }
        if c.policy.hidden.contains(&0) {
            return Err(config_err("policy.hidden", "layer widths must be positive"));
        }
        if c.checkpoint_every == Some(0) {
            return Err(config_err("checkpoint_every", "must be positive"));
        }
        Ok(Self { config, model, config_hash: String::new() })
    }

    pub fn n_xi(&self) -> usize {
        self.config.params.xi.len()
    }

    pub fn architecture(&self, seed: u64) -> PolicyArchitecture {
        let c = &self.config;
        let (input, output) = c.policy.mode.policy_dims(self.model.n_x(), self.n_xi(), self.model.n_u(), c.horizon);
        PolicyArchitecture::new(input, c.policy.hidden.clone(), output, seed)
    }

    /// Samples the `m x s` scenarios and splits them by parametric index.
    /// The test split receives its own disturbance sequences.
    pub fn scenario_splits(&self, seed: u64) -> Result<Splits, Error> {
        let c = &self.config;
        let all = sample_scenarios(&c.params, &c.noise, c.m, c.s, c.horizon, seed)?;
        let mut parts = split(&all, &c.split)?.into_iter();
        let (train, dev, mut test) = (
            parts.next().expect("three parts"),
            parts.next().expect("three parts"),
            parts.next().expect("three parts"),
        );
        let fresh = sample_scenarios(&c.params, &c.noise, 1, c.s, c.horizon, seed ^ TEST_NOISE_SALT)?;
        test.omega = fresh.omega;
        Ok(Splits { train, dev, test })
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.config.train.clone() }
    }

    /// Algorithm entry point: initialize and train a policy.
    pub fn train_policy(
        &self,
        splits: &Splits,
        seed: u64,
        observer: impl FnMut(crate::trainer::EpochEvent<'_>) -> crate::Result<()>,
    ) -> Result<(MlpPolicy, TrainHistory), Error> {
        let policy = MlpPolicy::init(self.architecture(seed))?;
        train(
            &self.model,
            policy,
            self.config.policy.mode,
            &splits.train,
            Some(&splits.dev),
            &self.config.problem,
            &self.train_config(seed),
            observer,
        )
    }

    pub fn certify(&self, policy: &MlpPolicy, test: &ScenarioSet) -> Result<CertificationReport, Error> {
        certify_policy(
            &self.model,
            policy,
            self.config.policy.mode,
            test,
            &self.config.problem.constraints,
            &self.config.certification,
        )
    }

    /// Receding-horizon traces from freshly sampled starts and parameters.
    pub fn simulate(&self, policy: &MlpPolicy, seed: u64) -> Result<Vec<Trajectory>, Error> {
        let c = &self.config;
        let x0_spec = ParamSpec {
            x0: c.simulation.x0.clone().unwrap_or_else(|| c.params.x0.clone()),
            xi: vec![],
            layout: vec![],
        };
        let noise = NoiseSource::new(c.noise.clone(), seed, stream::SIMULATION_NOISE);
        (0..c.simulation.realizations as u64)
            .map(|t| {
                let x0 = x0_spec.sample_x0(seed, stream::SIMULATION_START, t);
                let xi = c.params.sample_xi(seed, stream::SIMULATION_PARAMS, t);
                simulate_receding_horizon(
                    &self.model,
                    policy,
                    c.policy.mode,
                    c.horizon,
                    &x0,
                    &|_| xi.clone(),
                    &noise,
                    t,
                    c.simulation.steps,
                )
            })
            .collect()
    }

    /// Policy evaluation vs. online baseline solve on sampled instances.
    pub fn benchmark(&self, policy: &MlpPolicy, seed: u64) -> Result<BenchmarkReport, Error> {
        let c = &self.config;
        let instances: Vec<(Vec<f64>, Vec<f64>)> = (0..c.benchmark.instances as u64)
            .map(|i| {
                (
                    c.params.sample_x0(seed, stream::BENCHMARK, i),
                    c.params.sample_xi(seed, stream::BENCHMARK, i + (1 << 32)),
                )
            })
            .collect();
        benchmark(
            &self.model,
            policy,
            &c.problem,
            c.horizon,
            &c.benchmark.solver,
            &instances,
            c.benchmark.repetitions,
        )
    }
}

const TEST_NOISE_SALT: u64 = 0x7E57_0000_0000_0001;

/// Per-trace summary of a receding-horizon simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub trace: usize,
    /// First step at which `||x||_inf <= settle_tolerance`.
    pub settled_at: Option<usize>,
    pub max_input_violation: f64,
    pub max_state_violation: f64,
    pub final_inf_norm: f64,
}

pub fn summarize(traces: &[Trajectory], problem: &ControlProblem, tol: f64) -> crate::Result<Vec<TraceSummary>> {
    traces
        .iter()
        .enumerate()
        .map(|(i, tr)| {
            let mut max_u: f64 = 0.0;
            for u in &tr.actions {
                for r in problem.constraints.input_residuals(u)? {
                    max_u = max_u.max(r);
                }
            }
            let mut max_x: f64 = 0.0;
            for x in &tr.states {
                for r in problem.constraints.state_residuals(x, &tr.params)? {
                    max_x = max_x.max(r);
                }
            }
            let inf = |x: &Vec<f64>| x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            Ok(TraceSummary {
                trace: i,
                settled_at: tr.states.iter().position(|x| inf(x) <= tol),
                max_input_violation: max_u,
                max_state_violation: max_x,
                final_inf_norm: inf(tr.terminal().to_vec().as_ref()),
            })
        })
        .collect()
}

/// `trace,t,x_0..,u_0..` with one row per applied action.
pub fn trajectories_csv(traces: &[Trajectory]) -> String {
    let n_x = traces.first().map_or(0, |t| t.states[0].len());
    let n_u = traces.first().and_then(|t| t.actions.first()).map_or(0, Vec::len);
    let mut s = String::from("trace,t");
    (0..n_x).for_each(|i| s.push_str(&format!(",x_{i}")));
    (0..n_u).for_each(|i| s.push_str(&format!(",u_{i}")));
    s.push('\n');
    for (i, tr) in traces.iter().enumerate() {
        for (t, u) in tr.actions.iter().enumerate() {
            s.push_str(&format!("{i},{t}"));
            tr.states[t].iter().chain(u).for_each(|v| s.push_str(&format!(",{v}")));
            s.push('\n');
        }
    }
    s
}

fn bounds(problem: &ControlProblem, state: bool, i: usize) -> Vec<f64> {
    let c = &problem.constraints;
    let mut out = Vec::new();
    if state {
        for sc in &c.state {
            if let StateConstraint::Box { lower, upper } = sc {
                out.extend([lower.get(i), upper.get(i)].into_iter().flatten().copied());
            }
        }
    } else {
        for InputConstraint::Box { lower, upper } in &c.input {
            out.extend([lower.get(i), upper.get(i)].into_iter().flatten().copied());
        }
    }
    out
}

/// One SVG per state and per input, with box bounds dashed.
pub fn trajectory_plots(traces: &[Trajectory], problem: &ControlProblem) -> Vec<(String, String)> {
    let Some(first) = traces.first() else { return vec![] };
    let mut out = Vec::new();
    for i in 0..first.states[0].len() {
        let mut f = Figure::new(format!("state x_{i}"), "time step", format!("x_{i}"));
        for tr in traces {
            f.line(tr.states.iter().enumerate().map(|(t, x)| (t as f64, x[i])).collect());
        }
        bounds(problem, true, i).into_iter().for_each(|b| {
            f.bound(b);
        });
        out.push((format!("state_{i}.svg"), f.to_svg()));
    }
    for i in 0..first.actions.first().map_or(0, Vec::len) {
        let mut f = Figure::new(format!("input u_{i}"), "time step", format!("u_{i}"));
        for tr in traces {
            f.line(tr.actions.iter().enumerate().map(|(t, u)| (t as f64, u[i])).collect());
        }
        bounds(problem, false, i).into_iter().for_each(|b| {
            f.bound(b);
        });
        out.push((format!("input_{i}.svg"), f.to_svg()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Sample,
    Train,
    Certify,
    Simulate,
    Benchmark,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Train => "train",
            Command::Certify => "certify",
            Command::Simulate => "simulate",
            Command::Benchmark => "benchmark",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub experiment: String,
    pub config_sha256: String,
    pub seed: u64,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub elapsed_seconds: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_seconds: Vec<f64>,
    pub summary: serde_json::Value,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub const CHECKPOINT: &str = "policy.json";

struct Output {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Output {
    fn write(&mut self, name: &str, body: impl AsRef<[u8]>) -> Result<(), Error> {
        fs::write(self.dir.join(name), body)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }
}

fn load_checkpoint(dir: &Path) -> Result<MlpPolicy, RunError> {
    let p = dir.join(CHECKPOINT);
    if !p.exists() {
        return Err(RunError::Runtime(Error::InvalidArgument(format!(
            "missing checkpoint {}; run `train` first",
            p.display()
        ))));
    }
    Ok(MlpPolicy::load(&p)?)
}

/// Runs one pipeline stage, writing artifacts and a manifest into `out`.
pub fn run(command: Command, exp: &Experiment, out: &Path, seed: u64) -> Result<Manifest, RunError> {
    fs::create_dir_all(out).map_err(Error::from)?;
    let started_unix = unix_now();
    let clock = Instant::now();
    let mut o = Output { dir: out.to_path_buf(), artifacts: Vec::new() };
    let mut epoch_seconds = Vec::new();
    let c = &exp.config;

    let summary = match command {
        Command::Sample => {
            let s = exp.scenario_splits(seed)?;
            for (prefix, set) in [("train_", &s.train), ("dev_", &s.dev), ("test_", &s.test)] {
                for p in set.write_csv_bundle(out, prefix)? {
                    o.artifacts.push(p.file_name().expect("file").to_string_lossy().into_owned());
                }
            }
            serde_json::json!({
                "train_scenarios": s.train.len(),
                "dev_scenarios": s.dev.len(),
                "test_scenarios": s.test.len(),
            })
        }
        Command::Train => {
            let s = exp.scenario_splits(seed)?;
            let every = c.checkpoint_every;
            let mut periodic = Vec::new();
            let (policy, history) = exp.train_policy(&s, seed, |ev| {
                if every.is_some_and(|k| ev.record.epoch % k == 0) {
                    let name = format!("policy_epoch{:05}.json", ev.record.epoch);
                    ev.policy.save(&out.join(&name))?;
                    periodic.push(name);
                }
                log::info!(
                    "epoch {}: train {:.6e} dev {:.6e}",
                    ev.record.epoch,
                    ev.record.train.total,
                    ev.record.dev.total
                );
                Ok(())
            })?;
            o.artifacts.extend(periodic);
            o.write(CHECKPOINT, policy.to_json()?)?;
            o.write("history.csv", history.to_csv())?;
            epoch_seconds = history.seconds();
            serde_json::json!({
                "initial_train_loss": history.initial_train.total,
                "final_train_loss": history.final_train(),
                "best_dev_loss": history.best_dev(),
                "best_epoch": history.best_epoch,
                "param_count": policy.param_count(),
            })
        }
        Command::Certify => {
            let policy = load_checkpoint(out)?;
            let s = exp.scenario_splits(seed)?;
            let mut report = exp.certify(&policy, &s.test)?;
            report.policy_checkpoint = Some(CHECKPOINT.to_string());
            o.write("report.json", report.to_json()?)?;
            log::info!("{}", report.statement());
            serde_json::json!({ "verdict": report.verdict, "statement": report.statement() })
        }
        Command::Simulate => {
            let policy = load_checkpoint(out)?;
            let traces = exp.simulate(&policy, seed)?;
            o.write("trajectories.csv", trajectories_csv(&traces))?;
            for (name, svg) in trajectory_plots(&traces, &c.problem) {
                o.write(&name, svg)?;
            }
            let sum = summarize(&traces, &c.problem, c.simulation.settle_tolerance)?;
            let settled = sum.iter().filter(|t| t.settled_at.is_some()).count();
            serde_json::json!({
                "traces": sum.len(),
                "settled": settled,
                "max_input_violation": sum.iter().map(|t| t.max_input_violation).fold(0.0, f64::max),
                "max_state_violation": sum.iter().map(|t| t.max_state_violation).fold(0.0, f64::max),
            })
        }
        Command::Benchmark => {
            let policy = match load_checkpoint(out) {
                Ok(p) => p,
                Err(_) => {
                    log::warn!("no checkpoint in {}; timing a freshly initialized policy", out.display());
                    MlpPolicy::init(exp.architecture(seed))?
                }
            };
            let rep = exp.benchmark(&policy, seed)?;
            o.write("benchmark.csv", rep.to_csv())?;
            serde_json::json!({ "ratio": rep.overall.ratio })
        }
    };

    let manifest = Manifest {
        command: command.name().into(),
        experiment: c.name.clone(),
        config_sha256: exp.config_hash.clone(),
        seed,
        artifacts: o.artifacts,
        started_unix,
        finished_unix: unix_now(),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        epoch_seconds,
        summary,
    };
    fs::write(
        out.join(format!("manifest_{}.json", command.name())),
        serde_json::to_string_pretty(&manifest).map_err(Error::from)?,
    )
    .map_err(Error::from)?;
    Ok(manifest)
}
