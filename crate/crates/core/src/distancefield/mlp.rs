//! Fully connected ReLU network over the joint features `[q, cos q, sin q]`.
//!
//! Weights file (JSON):
//!
//! ```json
//! {
//!   "version": 1,
//!   "input_dim": 21,
//!   "output_dim": 1,
//!   "layers": [
//!     { "rows": 256, "cols": 21, "weights": [/* rows*cols, row-major */], "bias": [/* rows */] },
//!     { "rows": 64,  "cols": 256, "weights": [], "bias": [] },
//!     { "rows": 1,   "cols": 64,  "weights": [], "bias": [] }
//!   ]
//! }
//! ```
//!
//! `input_dim` is `3n` for an `n`-joint robot. Hidden layers use ReLU, the last layer is linear.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<MlpLayer>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpFile {
    version: u32,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl MlpModel {
    /// Checks that the layer dimensions chain and that the first layer takes a `3n` feature
    /// vector.
    pub fn new(layers: Vec<MlpLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Argument("network has no layers".into()))?;
        if first.weights.ncols() == 0 || first.weights.ncols() % 3 != 0 {
            return Err(Error::Argument(format!(
                "first layer takes {} inputs, expected a multiple of 3",
                first.weights.ncols()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.nrows() {
                return Err(Error::Argument(format!(
                    "layer {i}: bias has {} entries for {} rows",
                    layer.bias.len(),
                    layer.weights.nrows()
                )));
            }
            if i > 0 && layers[i - 1].weights.nrows() != layer.weights.ncols() {
                return Err(Error::Argument(format!(
                    "layer {i} takes {} inputs but layer {} produces {}",
                    layer.weights.ncols(),
                    i - 1,
                    layers[i - 1].weights.nrows()
                )));
            }
        }
        Ok(MlpModel { layers })
    }

    pub fn layers(&self) -> &[MlpLayer] {
        &self.layers
    }

    pub fn joint_count(&self) -> usize {
        self.layers[0].weights.ncols() / 3
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weights.nrows()
    }

    fn features(q: &DVector<f64>) -> DVector<f64> {
        let n = q.len();
        DVector::from_fn(3 * n, |i, _| match i / n {
            0 => q[i],
            1 => q[i - n].cos(),
            _ => q[i - 2 * n].sin(),
        })
    }

    /// Network output and its Jacobian with respect to `q` (`output_dim × n`).
    pub fn forward(&self, q: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.joint_count();
        if q.len() != n {
            return Err(Error::Argument(format!(
                "network expects {n} joints, got {}",
                q.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut activation = Self::features(q);
        let mut masks = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &activation + &layer.bias;
            if i < last {
                let mask: Vec<bool> = z.iter().map(|&v| v > 0.0).collect();
                for (v, &on) in z.iter_mut().zip(&mask) {
                    if !on {
                        *v = 0.0;
                    }
                }
                masks.push(mask);
            }
            activation = z;
        }

        // Reverse accumulation: start from the output layer and pull back through each mask.
        let mut jac = self.layers[last].weights.clone();
        for i in (0..last).rev() {
            for (c, &on) in masks[i].iter().enumerate() {
                if !on {
                    jac.column_mut(c).fill(0.0);
                }
            }
            jac *= &self.layers[i].weights;
        }
        let grad = DMatrix::from_fn(jac.nrows(), n, |r, j| {
            jac[(r, j)] - jac[(r, n + j)] * q[j].sin() + jac[(r, 2 * n + j)] * q[j].cos()
        });
        Ok((activation, grad))
    }

    /// Smallest |pre-activation| over the hidden units at `q`; finite differences are only
    /// meaningful when this exceeds the step.
    pub fn kink_margin(&self, q: &DVector<f64>) -> f64 {
        let mut activation = Self::features(q);
        let mut margin = f64::INFINITY;
        for layer in &self.layers[..self.layers.len() - 1] {
            let z = &layer.weights * &activation + &layer.bias;
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
            activation = z.map(|v| v.max(0.0));
        }
        margin
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MlpFile = serde_json::from_str(text)
            .map_err(|e| Error::Argument(format!("network file: {e}")))?;
        if file.version != FORMAT_VERSION {
            return Err(Error::Argument(format!(
                "unsupported network file version {}",
                file.version
            )));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, l) in file.layers.into_iter().enumerate() {
            if l.weights.len() != l.rows * l.cols {
                return Err(Error::Argument(format!(
                    "layer {i}: {} weights for a {}x{} matrix",
                    l.weights.len(),
                    l.rows,
                    l.cols
                )));
            }
            layers.push(MlpLayer {
                weights: DMatrix::from_row_slice(l.rows, l.cols, &l.weights),
                bias: DVector::from_vec(l.bias),
            });
        }
        let model = MlpModel::new(layers)?;
        if model.layers[0].weights.ncols() != file.input_dim || model.output_dim() != file.output_dim {
            return Err(Error::Argument(format!(
                "declared dims {}->{} do not match the layers",
                file.input_dim, file.output_dim
            )));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn to_json(&self) -> String {
        let file = MlpFile {
            version: FORMAT_VERSION,
            input_dim: self.layers[0].weights.ncols(),
            output_dim: self.output_dim(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.transpose().iter().copied().collect(),
                    bias: l.bias.iter().copied().collect(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("plain data serializes")
    }

    /// Randomly initialised network with the given hidden widths; used for tests and as a
    /// placeholder before trained weights are available.
    pub fn random<R: rand::Rng>(joints: usize, hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let mut dims = vec![3 * joints];
        dims.extend_from_slice(hidden);
        dims.push(outputs);
        let layers = dims
            .windows(2)
            .map(|w| {
                let scale = (2.0 / w[0] as f64).sqrt();
                MlpLayer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-scale..scale)),
                    bias: DVector::from_fn(w[1], |_, _| rng.random_range(-0.1..0.1)),
                }
            })
            .collect();
        MlpModel::new(layers).expect("dimensions chain by construction")
    }
}
