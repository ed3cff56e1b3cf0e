//! Scenario sampling: `m` parametric draws crossed with `s` disturbance sequences.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::NoiseSpec;
use crate::error::{invalid, Result};
use crate::rng;

/// Distribution of a single scalar component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Component {
    Uniform { lower: f64, upper: f64 },
    Gaussian { mean: f64, std: f64 },
    Constant { value: f64 },
}

impl Component {
    pub fn uniform(lower: f64, upper: f64) -> Self {
        Component::Uniform { lower, upper }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Component::Uniform { lower, upper } if !(lower <= upper) => {
                Err(invalid(format!("uniform bounds reversed: [{lower}, {upper}]")))
            }
            Component::Gaussian { std, .. } if !(std >= 0.0) => {
                Err(invalid(format!("gaussian std must be non-negative, got {std}")))
            }
            _ => Ok(()),
        }
    }

    fn sample(&self, r: &mut impl Rng) -> f64 {
        match *self {
            Component::Uniform { lower, upper } if lower == upper => lower,
            Component::Uniform { lower, upper } => r.random_range(lower..=upper),
            Component::Gaussian { mean, std } => {
                Normal::new(mean, std).expect("validated std").sample(r)
            }
            Component::Constant { value } => value,
        }
    }

    /// Whether `v` lies in the support.
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Component::Uniform { lower, upper } => (lower..=upper).contains(&v),
            Component::Gaussian { .. } => v.is_finite(),
            Component::Constant { value } => v == value,
        }
    }
}

/// Named block of the parameter vector, e.g. `r_N` or obstacle geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub len: usize,
}

/// Distributions of the initial state and of the parameter vector `xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub x0: Vec<Component>,
    #[serde(default)]
    pub xi: Vec<Component>,
    #[serde(default)]
    pub layout: Vec<ParamBlock>,
}

impl ParamSpec {
    pub fn validate(&self) -> Result<()> {
        for c in self.x0.iter().chain(&self.xi) {
            c.validate()?;
        }
        if !self.layout.is_empty() {
            let total: usize = self.layout.iter().map(|b| b.len).sum();
            if total != self.xi.len() {
                return Err(invalid(format!(
                    "parameter layout covers {total} entries, xi has {}",
                    self.xi.len()
                )));
            }
        }
        Ok(())
    }

    pub fn sample_x0(&self, seed: u64, stream: u64, i: u64) -> Vec<f64> {
        let mut r = rng::keyed(seed, stream, &[i]);
        self.x0.iter().map(|c| c.sample(&mut r)).collect()
    }

    pub fn sample_xi(&self, seed: u64, stream: u64, i: u64) -> Vec<f64> {
        let mut r = rng::keyed(seed, stream, &[i]);
        self.xi.iter().map(|c| c.sample(&mut r)).collect()
    }
}

/// Cross product of parametric scenarios and disturbance sequences.
///
/// Scenario `(i, j)` pairs `x0[i]`, `xi[i]` with `omega[j]`; flat index is `i * s + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub seed: u64,
    pub horizon: usize,
    /// Global parametric indices of the rows below.
    pub ids: Vec<usize>,
    pub x0: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    /// `s` sequences of `horizon` disturbance vectors.
    pub omega: Vec<Vec<Vec<f64>>>,
}

/// One `(x0, xi, Omega)` triple.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    /// Flat index within its set.
    pub index: usize,
    /// Global parametric index.
    pub i: usize,
    pub j: usize,
    pub x0: &'a [f64],
    pub xi: &'a [f64],
    pub omega: &'a [Vec<f64>],
}

impl ScenarioSet {
    pub fn m(&self) -> usize {
        self.x0.len()
    }

    pub fn s(&self) -> usize {
        self.omega.len()
    }

    /// `r = m * s`
    pub fn len(&self) -> usize {
        self.m() * self.s()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_xi(&self) -> usize {
        self.xi.first().map_or(0, Vec::len)
    }

    pub fn get(&self, index: usize) -> Scenario<'_> {
        let s = self.s();
        let (row, j) = (index / s, index % s);
        Scenario {
            index,
            i: self.ids[row],
            j,
            x0: &self.x0[row],
            xi: &self.xi[row],
            omega: &self.omega[j],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Scenario<'_>> {
        (0..self.len()).map(|k| self.get(k))
    }

    /// Writes `x0.csv`, `xi.csv` and `omega.csv` with the given file prefix.
    pub fn write_csv_bundle(&self, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut out = Vec::new();

        let header = |name: &str, n: usize| {
            (0..n).fold(String::new(), |mut acc, d| {
                let _ = write!(acc, ",{name}_{d}");
                acc
            })
        };
        let row = |vals: &[f64]| {
            vals.iter().fold(String::new(), |mut acc, v| {
                let _ = write!(acc, ",{v}");
                acc
            })
        };

        let mut x0 = format!("i{}\n", header("x0", self.x0.first().map_or(0, Vec::len)));
        let mut xi = format!("i{}\n", header("xi", self.n_xi()));
        for (r, &i) in self.ids.iter().enumerate() {
            let _ = writeln!(x0, "{i}{}", row(&self.x0[r]));
            let _ = writeln!(xi, "{i}{}", row(&self.xi[r]));
        }
        let n_w = self.omega.first().and_then(|o| o.first()).map_or(0, Vec::len);
        let mut om = format!("j,k{}\n", header("w", n_w));
        for (j, seq) in self.omega.iter().enumerate() {
            for (k, w) in seq.iter().enumerate() {
                let _ = writeln!(om, "{j},{k}{}", row(w));
            }
        }
        for (name, body) in [("x0", x0), ("xi", xi), ("omega", om)] {
            let path = dir.join(format!("{prefix}{name}.csv"));
            std::fs::write(&path, body)?;
            out.push(path);
        }
        Ok(out)
    }
}

/// Draws `m` parametric scenarios and `s` disturbance sequences of length `horizon`.
pub fn sample_scenarios(
    params: &ParamSpec,
    noise: &NoiseSpec,
    m: usize,
    s: usize,
    horizon: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    if m == 0 || s == 0 {
        return Err(invalid(format!("need m >= 1 and s >= 1, got m={m}, s={s}")));
    }
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    params.validate()?;
    noise.validate(params.x0.len())?;
    let ids: Vec<usize> = (0..m).collect();
    let x0 = ids
        .iter()
        .map(|&i| params.sample_x0(seed, rng::stream::INITIAL_STATE, i as u64))
        .collect();
    let xi = ids
        .iter()
        .map(|&i| params.sample_xi(seed, rng::stream::PARAMETERS, i as u64))
        .collect();
    let omega = (0..s as u64)
        .map(|j| {
            (0..horizon as u64)
                .map(|k| noise.sample(&mut rng::keyed(seed, rng::stream::DISTURBANCE, &[j, k])))
                .collect()
        })
        .collect();
    Ok(ScenarioSet {
        seed,
        horizon,
        ids,
        x0,
        xi,
        omega,
    })
}

/// Partitions the parametric indices into consecutive blocks.
///
/// Each block gets `floor(m * f)` rows; when the fractions sum to one the
/// last block absorbs the rounding remainder.
pub fn split(set: &ScenarioSet, fractions: &[f64]) -> Result<Vec<ScenarioSet>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(invalid("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-9 {
        return Err(invalid(format!("split fractions sum to {total} > 1")));
    }
    let m = set.m();
    let mut counts: Vec<usize> = fractions
        .iter()
        .map(|f| (m as f64 * f + 1e-9).floor() as usize)
        .collect();
    if (total - 1.0).abs() <= 1e-9 {
        let used: usize = counts[..counts.len() - 1].iter().sum();
        *counts.last_mut().expect("non-empty") = m - used;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(invalid(format!(
            "split {k} would be empty (m = {m}, fraction {})",
            fractions[k]
        )));
    }
    let mut start = 0;
    Ok(counts
        .into_iter()
        .map(|c| {
            let rows = start..start + c;
            start += c;
            ScenarioSet {
                seed: set.seed,
                horizon: set.horizon,
                ids: set.ids[rows.clone()].to_vec(),
                x0: set.x0[rows.clone()].to_vec(),
                xi: set.xi[rows].to_vec(),
                omega: set.omega.clone(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_spec(n: usize, lo: f64, hi: f64) -> ParamSpec {
        ParamSpec {
            x0: vec![Component::uniform(lo, hi); n],
            xi: vec![],
            layout: vec![],
        }
    }

    #[test]
    fn counts() {
        let set = sample_scenarios(&box_spec(2, -1.0, 1.0), &NoiseSpec::gaussian(vec![0.1; 2]), 2, 3, 4, 1).unwrap();
        assert_eq!(set.len(), 6);
        assert!(set.iter().all(|sc| sc.omega.len() == 4));
    }

    #[test]
    fn paper_scale_count() {
        let set = sample_scenarios(&box_spec(2, -10.0, 10.0), &NoiseSpec::zero(2), 3333, 10, 1, 0).unwrap();
        assert_eq!(set.len(), 33330);
        assert!(set.x0.iter().flatten().all(|v| (-10.0..=10.0).contains(v)));
    }

    #[test]
    fn rejects_empty() {
        let spec = box_spec(1, 0.0, 1.0);
        assert!(sample_scenarios(&spec, &NoiseSpec::zero(1), 0, 1, 1, 0).is_err());
        assert!(sample_scenarios(&spec, &NoiseSpec::zero(1), 1, 0, 1, 0).is_err());
        assert!(sample_scenarios(&box_spec(1, 1.0, 0.0), &NoiseSpec::zero(1), 1, 1, 1, 0).is_err());
    }

    #[test]
    fn cross_product_visits_each_sequence_m_times() {
        let set = sample_scenarios(&box_spec(1, 0.0, 1.0), &NoiseSpec::gaussian(vec![1.0]), 4, 3, 2, 9).unwrap();
        let mut visits = [0usize; 3];
        for sc in set.iter() {
            visits[sc.j] += 1;
            assert_eq!(sc.omega, set.omega[sc.j].as_slice());
        }
        assert_eq!(visits, [4, 4, 4]);
    }

    #[test]
    fn split_by_parametric_index() {
        let set = sample_scenarios(&box_spec(1, 0.0, 1.0), &NoiseSpec::zero(1), 1000, 100, 1, 0).unwrap();
        let parts = split(&set, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let sizes: Vec<usize> = parts.iter().map(ScenarioSet::len).collect();
        assert_eq!(sizes, vec![33300, 33300, 33400]);
        let mut all: Vec<usize> = parts.iter().flat_map(|p| p.ids.clone()).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 1000);

        let same = split(&set, &[1.0]).unwrap();
        assert_eq!(same, vec![set.clone()]);
        assert!(split(&set, &[0.0005, 0.5]).is_err());
        assert!(split(&set, &[0.7, 0.7]).is_err());
    }

    #[test]
    fn csv_bundle_layout() {
        let spec = ParamSpec {
            x0: vec![Component::uniform(0.0, 1.0); 2],
            xi: vec![Component::Constant { value: 2.5 }],
            layout: vec![ParamBlock { name: "r".into(), len: 1 }],
        };
        let set = sample_scenarios(&spec, &NoiseSpec::zero(2), 2, 2, 3, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = set.write_csv_bundle(dir.path(), "train_").unwrap();
        assert_eq!(files.len(), 3);
        let xi = std::fs::read_to_string(dir.path().join("train_xi.csv")).unwrap();
        assert_eq!(xi, "i,xi_0\n0,2.5\n1,2.5\n");
        let om = std::fs::read_to_string(dir.path().join("train_omega.csv")).unwrap();
        assert_eq!(om.lines().count(), 1 + 2 * 3);
    }
}
