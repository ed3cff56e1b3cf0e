//! Fully connected ReLU policy mapping `[x0, xi]` to an action sequence.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{dim, invalid, Error, Result};
use crate::rng;

/// Layer widths of the network and the seed used to initialize it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PolicyArchitecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(invalid("policy needs at least one hidden layer"));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(invalid(format!("layer sizes must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Number of trainable weights and biases.
pub fn param_count(arch: &PolicyArchitecture) -> usize {
    arch.layer_dims().iter().map(|&(i, o)| o * i + o).sum()
}

/// One affine layer: `weight` is `[out, in]`, `bias` is `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    arch: PolicyArchitecture,
    layers: Vec<Layer>,
}

/// Policy parameters bound as leaves on a tape.
#[derive(Debug, Clone)]
pub struct BoundPolicy {
    pub layers: Vec<(Var, Var)>,
}

impl MlpPolicy {
    /// Uniform fan-in initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init(arch: PolicyArchitecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_dims()
            .iter()
            .enumerate()
            .map(|(l, &(fan_in, fan_out))| {
                let mut r = rng::keyed(arch.seed, rng::stream::POLICY_INIT, &[l as u64]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| r.random_range(-bound..=bound))
                    .collect();
                Layer {
                    weight: Tensor::new(vec![fan_out, fan_in], w).expect("sized"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn zeros(arch: PolicyArchitecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_dims()
            .iter()
            .map(|&(i, o)| Layer {
                weight: Tensor::zeros(&[o, i]),
                bias: Tensor::zeros(&[o]),
            })
            .collect();
        Ok(Self { arch, layers })
    }

    pub fn from_layers(arch: PolicyArchitecture, layers: Vec<Layer>) -> Result<Self> {
        arch.validate()?;
        let dims = arch.layer_dims();
        if dims.len() != layers.len() {
            return Err(dim(format!(
                "architecture has {} layers, got {}",
                dims.len(),
                layers.len()
            )));
        }
        for (l, (&(i, o), layer)) in dims.iter().zip(&layers).enumerate() {
            if layer.weight.shape() != [o, i] || layer.bias.shape() != [o] {
                return Err(dim(format!(
                    "layer {l}: expected W [{o}, {i}] and b [{o}], got {:?} and {:?}",
                    layer.weight.shape(),
                    layer.bias.shape()
                )));
            }
            if !layer.weight.is_finite() || !layer.bias.is_finite() {
                return Err(Error::NonFinite("policy parameters"));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> &PolicyArchitecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.arch)
    }

    /// Evaluates the network on one concatenated input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.arch.input_dim {
            return Err(dim(format!(
                "policy input has {} entries, expected {}",
                input.len(),
                self.arch.input_dim
            )));
        }
        let last = self.layers.len() - 1;
        let mut z = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let (out, inp) = (layer.weight.shape()[0], layer.weight.shape()[1]);
            let w = layer.weight.data();
            let next: Vec<f64> = (0..out)
                .map(|r| {
                    let a = layer.bias.data()[r]
                        + w[r * inp..(r + 1) * inp]
                            .iter()
                            .zip(&z)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    if l < last {
                        a.max(0.0)
                    } else {
                        a
                    }
                })
                .collect();
            z = next;
        }
        Ok(z)
    }

    /// Evaluates `[x0, xi]` and reshapes the output into `output_dim / n_u` actions.
    pub fn action_sequence(&self, x0: &[f64], xi: &[f64], n_u: usize) -> Result<Vec<Vec<f64>>> {
        if n_u == 0 || !self.arch.output_dim.is_multiple_of(n_u) {
            return Err(dim(format!(
                "output dim {} is not a multiple of n_u = {n_u}",
                self.arch.output_dim
            )));
        }
        let input: Vec<f64> = x0.iter().chain(xi).copied().collect();
        Ok(self.forward(&input)?.chunks(n_u).map(<[f64]>::to_vec).collect())
    }

    /// Registers every weight and bias as a parameter leaf.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundPolicy> {
        let layers = self
            .layers
            .iter()
            .map(|l| Ok((tape.param(l.weight.clone())?, tape.param(l.bias.clone())?)))
            .collect::<Result<_>>()?;
        Ok(BoundPolicy { layers })
    }

    /// Registers the parameters as constants (no gradient is tracked).
    pub fn bind_constant(&self, tape: &mut Tape) -> Result<BoundPolicy> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok((
                    tape.constant(l.weight.clone())?,
                    tape.constant(l.bias.clone())?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(BoundPolicy { layers })
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            arch: self.arch.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    weight: l.weight.to_rows(),
                    bias: l.bias.data().to_vec(),
                })
                .collect(),
            seed: self.arch.seed,
            version: CHECKPOINT_VERSION,
        }
    }

    pub fn from_checkpoint(ckpt: PolicyCheckpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(invalid(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        let layers = ckpt
            .layers
            .into_iter()
            .map(|r| {
                Ok(Layer {
                    weight: Tensor::from_rows(&r.weight)?,
                    bias: Tensor::vector(r.bias),
                })
            })
            .collect::<Result<_>>()?;
        Self::from_layers(ckpt.arch, layers)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl BoundPolicy {
    /// Batched forward pass: `input` is `[batch, input_dim]`.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut z = input;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let lin = tape.matmul_t(z, w)?;
            let aff = tape.add(lin, b)?;
            z = if l < last { tape.relu(aff)? } else { aff };
        }
        Ok(z)
    }

    /// Parameter leaves in layer order, `[W0, b0, W1, b1, ...]`.
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk form of a policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub arch: PolicyArchitecture,
    pub layers: Vec<LayerRecord>,
    pub seed: u64,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    #[serde(rename = "W")]
    pub weight: Vec<Vec<f64>>,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
}
