//! Intrinsic graph readout: Fréchet mean by Karcher flow, tangent-space
//! pooling at the mean, a linear head, and cross-entropy loss.
//!
//! The Karcher loop runs a fixed number of steps and is differentiated by
//! unrolling it on the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{distance_rows, exp_map_rows, log_map_rows, project_rows};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// How the Karcher iteration starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KarcherInit {
    /// Project the coordinate-wise ambient mean onto the hyperboloid.
    MeanProjection,
    /// Start from the first point.
    FirstNode,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub karcher_iters: usize,
    /// Karcher step size.
    pub eta: f64,
    pub init_mode: KarcherInit,
    /// Feed all d+1 ambient coordinates of the pooled vector to the
    /// classifier; when false, only the spatial part.
    pub classifier_ambient: bool,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            karcher_iters: 5,
            eta: 0.1,
            init_mode: KarcherInit::MeanProjection,
            classifier_ambient: true,
        }
    }
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.karcher_iters == 0 {
            return Err(Error::InvalidInput("karcher_iters must be >= 1".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "eta must be in (0, 1], got {}",
                self.eta
            )));
        }
        Ok(())
    }

    /// Classifier input width for points with `d` spatial coordinates.
    pub fn classifier_input_dim(&self, d: usize) -> usize {
        if self.classifier_ambient {
            d + 1
        } else {
            d
        }
    }
}

/// Linear classification head: `logits = z W_c^T + b_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    /// 2 x (input dim) logit matrix.
    pub weight: Tensor,
    /// 1 x 2 bias.
    pub bias: Tensor,
}

impl ClassifierParams {
    /// Zero init: the head starts exactly undecided and its first gradients
    /// point along the class-mean difference.
    pub fn init(input_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(2, input_dim),
            bias: Tensor::zeros(1, 2),
        }
    }
}

pub struct ClassifierVars {
    pub weight: Var,
    pub bias: Var,
}

impl ClassifierParams {
    pub fn load(&self, t: &mut Tape) -> ClassifierVars {
        ClassifierVars {
            weight: t.leaf(self.weight.clone()),
            bias: t.leaf(self.bias.clone()),
        }
    }
}

/// Fréchet mean of point rows by Karcher flow:
/// `v = mean_i log_mu(x_i); mu <- exp_mu(eta v)`, run `iters` times from the
/// configured initialization. Returns the final [1, d+1] point.
pub fn karcher_flow(
    t: &mut Tape,
    points: Var,
    k: Var,
    iters: usize,
    eta: f64,
    init: KarcherInit,
) -> Result<Var> {
    let rows = t.value(points).rows();
    if rows == 0 {
        return Err(Error::InvalidInput("karcher_flow: no points".into()));
    }
    let mut mu = match init {
        KarcherInit::MeanProjection => {
            let mean = t.mean_axis0(points)?;
            project_rows(t, mean, k)?
        }
        KarcherInit::FirstNode => t.slice_rows(points, 0, 1)?,
    };
    for _ in 0..iters {
        let logs = log_map_rows(t, mu, points, k)?;
        let v = t.mean_axis0(logs)?;
        let step = t.mul_const(v, eta)?;
        mu = exp_map_rows(t, mu, step, k)?;
    }
    Ok(mu)
}

/// Mean squared geodesic distance from `mu` to every point row; the Fréchet
/// objective the Karcher flow descends.
pub fn frechet_objective(t: &mut Tape, mu: Var, points: Var, k: Var) -> Result<Var> {
    let d = distance_rows(t, mu, points, k)?;
    let d2 = t.mul(d, d)?;
    t.mean(d2)
}

/// Pooled tangent vector `z = mean_i log_mu(x_i)`, a [1, d+1] row tangent
/// at `mu`; exactly zero when `mu` is a stationary point of the objective.
pub fn tangent_pool(t: &mut Tape, points: Var, mu: Var, k: Var) -> Result<Var> {
    let logs = log_map_rows(t, mu, points, k)?;
    t.mean_axis0(logs)
}

/// Affine head over the pooled vector: `z W^T + b` -> [1, 2] logits.
pub fn classify(t: &mut Tape, z: Var, params: &ClassifierVars) -> Result<Var> {
    let wt = t.transpose(params.weight)?;
    let zw = t.matmul(z, wt)?;
    t.add(zw, params.bias)
}

/// Cross-entropy of [1, C] logits against a class index, computed as
/// `logsumexp(logits) - logits[label]` with max-shift stabilization.
pub fn cross_entropy(t: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    let v = t.value(logits);
    let classes = v.cols();
    if v.rows() != 1 || label >= classes {
        return Err(Error::InvalidInput(format!(
            "cross_entropy: logits {} with label {label}",
            v.shape_str()
        )));
    }
    // The shift is a constant in the graph; the gradient of logsumexp is the
    // softmax either way.
    let shift = v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = t.add_const(logits, -shift)?;
    let exps = t.exp(shifted)?;
    let total = t.sum(exps)?;
    let lse = t.log(total)?;
    let lse = t.add_const(lse, shift)?;
    let picked = t.slice(logits, 0, 1, label, label + 1)?;
    t.sub(lse, picked)
}

/// Softmax probabilities of a [1, C] logit row (forward value only).
pub fn softmax_probs(logits: &Tensor) -> Vec<f64> {
    let m = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
