//! Full model assembly: input lifting, the layer stack, readout, and loss,
//! plus the ablation variants used for component analysis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SignedGraph;
use crate::layers::{
    curvature_from_rho, forward_layer, lift_rows, Activation, GraphLayout, LayerConfig,
    LayerMode, LayerParams, LayerVars,
};
use crate::manifold::origin_row;
use crate::readout::{
    classify, cross_entropy, karcher_flow, softmax_probs, tangent_pool, ClassifierParams,
    ClassifierVars, ReadoutConfig,
};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Component switches mirroring the ablation axes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Replace every manifold operation with its flat-space counterpart.
    pub euclidean_geometry: bool,
    /// Pool in the origin tangent space instead of at the Fréchet mean.
    pub fixed_base_readout: bool,
    /// Score attention with Euclidean dot products of origin-tangent
    /// coordinates.
    pub euclidean_attention: bool,
    /// Single softmax over the merged neighborhood, all-positive pulls.
    pub unsigned_aggregation: bool,
}

pub const ABLATION_NAMES: [&str; 4] = [
    "euclidean_geometry",
    "fixed_base_readout",
    "euclidean_attention",
    "unsigned_aggregation",
];

impl AblationFlags {
    pub fn parse(name: &str) -> Result<Self> {
        let mut flags = AblationFlags::default();
        match name {
            "euclidean_geometry" => flags.euclidean_geometry = true,
            "fixed_base_readout" => flags.fixed_base_readout = true,
            "euclidean_attention" => flags.euclidean_attention = true,
            "unsigned_aggregation" => flags.unsigned_aggregation = true,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown ablation '{other}' (expected one of {ABLATION_NAMES:?})"
                )))
            }
        }
        Ok(flags)
    }

    /// The flat-geometry ablation already removes the manifold, so combining
    /// it with the others is contradictory.
    pub fn validate(&self) -> Result<()> {
        if self.euclidean_geometry
            && (self.fixed_base_readout || self.euclidean_attention || self.unsigned_aggregation)
        {
            return Err(Error::AblationConflict(
                "euclidean_geometry subsumes the other ablations".into(),
            ));
        }
        Ok(())
    }

    pub fn any(&self) -> bool {
        self.euclidean_geometry
            || self.fixed_base_readout
            || self.euclidean_attention
            || self.unsigned_aggregation
    }
}

/// Architecture hyperparameters; the defaults are the full configuration
/// (3 layers, d = 64, 4 heads, learnable curvature from 1.0, 5 Karcher
/// iterations at step 0.1).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub tau0: f64,
    pub activation: Activation,
    pub self_loops: bool,
    /// Input feature width (time points); the first layer maps T -> d.
    pub time_points: usize,
    pub readout: ReadoutConfig,
    pub ablation: AblationFlags,
}

impl ModelConfig {
    pub fn new(time_points: usize) -> Self {
        Self {
            layers: 3,
            hidden_dim: 64,
            heads: 4,
            tau0: 1.0,
            activation: Activation::Relu,
            self_loops: true,
            time_points,
            readout: ReadoutConfig::default(),
            ablation: AblationFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.heads == 0 {
            return Err(Error::InvalidInput(
                "layers, hidden_dim, and heads must all be >= 1".into(),
            ));
        }
        if !(self.tau0 > 0.0) {
            return Err(Error::InvalidInput(format!("tau0 must be > 0, got {}", self.tau0)));
        }
        self.readout.validate()?;
        self.ablation.validate()
    }

    pub fn layer_config(&self) -> LayerConfig {
        LayerConfig {
            hidden_dim: self.hidden_dim,
            heads: self.heads,
            tau0: self.tau0,
            activation: self.activation,
            self_loops: self.self_loops,
        }
    }

    fn layer_mode(&self) -> LayerMode {
        LayerMode {
            euclidean_attention: self.ablation.euclidean_attention,
            unsigned_aggregation: self.ablation.unsigned_aggregation,
        }
    }

    /// Width of the pooled vector the classifier sees.
    pub fn classifier_dim(&self) -> usize {
        if self.ablation.euclidean_geometry {
            self.hidden_dim
        } else {
            self.readout.classifier_input_dim(self.hidden_dim)
        }
    }
}

/// All learnable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
    pub classifier: ClassifierParams,
}

pub struct ModelVars {
    pub layers: Vec<LayerVars>,
    pub classifier: ClassifierVars,
}

impl ModelParams {
    /// Deterministic initialization from a seed.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let layers = (0..config.layers)
            .map(|l| {
                let d_in = if l == 0 { config.time_points } else { d };
                // Z-scored length-T features arrive at norm ~sqrt(T);
                // deeper layers see roughly unit-norm tangents.
                let input_norm = if l == 0 {
                    (config.time_points as f64).sqrt()
                } else {
                    1.0
                };
                LayerParams::init(d_in, d, config.heads, input_norm, &mut rng)
            })
            .collect();
        Ok(Self {
            layers,
            classifier: ClassifierParams::init(config.classifier_dim()),
        })
    }

    pub fn load(&self, t: &mut Tape) -> ModelVars {
        ModelVars {
            layers: self.layers.iter().map(|l| l.load(t)).collect(),
            classifier: self.classifier.load(t),
        }
    }

    /// Named parameter blocks in a fixed traversal order.
    pub fn blocks(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), &l.weight));
            out.push((format!("layer{i}.bias"), &l.bias));
            for (h, head) in l.heads.iter().enumerate() {
                out.push((format!("layer{i}.head{h}.query"), &head.query));
                out.push((format!("layer{i}.head{h}.key"), &head.key));
                out.push((format!("layer{i}.head{h}.value"), &head.value));
            }
            out.push((format!("layer{i}.rho"), &l.rho));
        }
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in self.layers.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            for head in l.heads.iter_mut() {
                out.push(&mut head.query);
                out.push(&mut head.key);
                out.push(&mut head.value);
            }
            out.push(&mut l.rho);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out
    }

    pub fn block_count(&self) -> usize {
        self.layers.len() * (3 + 3 * self.layers[0].heads.len()) + 2
    }
}

impl ModelVars {
    /// Handles in the same order as [`ModelParams::blocks`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight);
            out.push(l.bias);
            for h in &l.heads {
                out.push(h.query);
                out.push(h.key);
                out.push(h.value);
            }
            out.push(l.rho);
        }
        out.push(self.classifier.weight);
        out.push(self.classifier.bias);
        out
    }
}

/// A graph preprocessed for the forward pass: edge layout plus features.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub layout: GraphLayout,
    pub features: Tensor,
    pub label: Option<usize>,
}

impl PreparedGraph {
    pub fn new(graph: &SignedGraph, config: &ModelConfig) -> Result<Self> {
        if graph.features.cols() != config.time_points {
            return Err(Error::BadShape {
                op: "PreparedGraph::new",
                expected: format!("{} feature columns", config.time_points),
                got: graph.features.shape_str(),
            });
        }
        Ok(Self {
            layout: GraphLayout::new(graph, config.self_loops),
            features: graph.features.clone(),
            label: graph.label,
        })
    }
}

/// Node embeddings after the full layer stack: the [N, *] matrix plus the
/// final curvature handle (`None` in flat geometry).
fn embed_nodes(
    t: &mut Tape,
    vars: &ModelVars,
    prepared: &PreparedGraph,
    config: &ModelConfig,
) -> Result<(Var, Option<Var>)> {
    let feats = t.leaf(prepared.features.clone());
    if config.ablation.euclidean_geometry {
        let x = euclidean_stack(t, vars, prepared, config, feats)?;
        return Ok((x, None));
    }
    let layer_cfg = config.layer_config();
    let mode = config.layer_mode();
    let mut k_in = t.scalar(1.0);
    let mut x = lift_rows(t, feats, k_in)?;
    for lv in &vars.layers {
        let k_out = curvature_from_rho(t, lv.rho)?;
        x = forward_layer(t, &prepared.layout, x, lv, &layer_cfg, k_in, k_out, mode)?;
        k_in = k_out;
    }
    Ok((x, Some(k_in)))
}

/// Flat-space variant of the stack: affine layers, dot-product attention,
/// signed aggregation by vector differences, mean-pooling readout. Records
/// no hyperbolic transcendentals on the tape.
fn euclidean_stack(
    t: &mut Tape,
    vars: &ModelVars,
    prepared: &PreparedGraph,
    config: &ModelConfig,
    feats: Var,
) -> Result<Var> {
    let layout = &prepared.layout;
    let d = config.hidden_dim;
    let scale_const = 1.0 / ((d as f64).sqrt() * config.tau0);
    let mut x = feats;
    for lv in &vars.layers {
        let wt = t.transpose(lv.weight)?;
        let xw = t.matmul(x, wt)?;
        let h = t.add(xw, lv.bias)?;
        if layout.edge_rows() == 0 {
            x = activate(t, h, config.activation)?;
            continue;
        }
        let n = layout.n;
        let sign = t.leaf(layout.sign.clone());
        let mut delta_sum: Option<Var> = None;
        // delta_i = sum_j w (v_j - h_i): a coefficient-matrix product plus a
        // per-node rescaling of h, with only [E,1] tensors on the edges.
        for head in &lv.heads {
            let wq = t.transpose(head.query)?;
            let wk = t.transpose(head.key)?;
            let wv = t.transpose(head.value)?;
            let q = t.matmul(h, wq)?;
            let k = t.matmul(h, wk)?;
            let v = t.matmul(h, wv)?;
            let kt = t.transpose(k)?;
            let score_full = t.matmul(q, kt)?;
            let score_flat = t.reshape(score_full, n * n, 1)?;
            let raw = t.gather_rows(score_flat, layout.flat.clone())?;
            let scores = t.mul_const(raw, scale_const)?;
            let weights = t.softmax_subsets(scores, layout.groups_signed.clone())?;
            let weights = t.mul(weights, sign)?;
            let coef_flat = t.scatter_add_rows(weights, layout.flat.clone(), n * n)?;
            let coef_mat = t.reshape(coef_flat, n, n)?;
            let delta_v = t.matmul(coef_mat, v)?;
            let self_coef = t.scatter_add_rows(weights, layout.src.clone(), n)?;
            let neg_self = t.neg(self_coef)?;
            let delta_h = t.mul(neg_self, h)?;
            let delta = t.add(delta_v, delta_h)?;
            delta_sum = Some(match delta_sum {
                None => delta,
                Some(acc) => t.add(acc, delta)?,
            });
        }
        let delta = t.mul_const(delta_sum.expect("heads"), 1.0 / config.heads as f64)?;
        let y = t.add(h, delta)?;
        x = activate(t, y, config.activation)?;
    }
    Ok(x)
}

fn activate(t: &mut Tape, x: Var, activation: Activation) -> Result<Var> {
    match activation {
        Activation::Relu => t.relu(x),
        Activation::Identity => Ok(x),
    }
}

/// Norm bound on the pooled vector entering the linear head. Healthy runs
/// pool vectors of norm ~1-10; the cap only binds when training starts
/// running the representation up the exponential part of the manifold.
const POOLED_NORM_CAP: f64 = 30.0;

/// Pooled graph representation.
fn readout_graph(
    t: &mut Tape,
    x: Var,
    k_last: Option<Var>,
    config: &ModelConfig,
) -> Result<Var> {
    let z = match k_last {
        None => t.mean_axis0(x)?, // flat geometry: plain mean pooling
        Some(k) => {
            let d = config.hidden_dim;
            let mu = if config.ablation.fixed_base_readout {
                origin_row(t, d, k)?
            } else {
                karcher_flow(
                    t,
                    x,
                    k,
                    config.readout.karcher_iters,
                    config.readout.eta,
                    config.readout.init_mode,
                )?
            };
            let z = tangent_pool(t, x, mu, k)?;
            if config.readout.classifier_ambient {
                z
            } else {
                t.slice_cols(z, 1, d + 1)?
            }
        }
    };
    crate::layers::clip_rows_norm(t, z, POOLED_NORM_CAP)
}

/// Full forward pass to logits.
pub fn forward_logits(
    t: &mut Tape,
    vars: &ModelVars,
    prepared: &PreparedGraph,
    config: &ModelConfig,
) -> Result<Var> {
    let (x, k_last) = embed_nodes(t, vars, prepared, config)?;
    let z = readout_graph(t, x, k_last, config)?;
    classify(t, z, &vars.classifier)
}

/// Forward to the cross-entropy loss of the graph's label.
pub fn forward_loss(
    t: &mut Tape,
    vars: &ModelVars,
    prepared: &PreparedGraph,
    config: &ModelConfig,
) -> Result<(Var, Var)> {
    let label = prepared
        .label
        .ok_or_else(|| Error::InvalidInput("graph has no label".into()))?;
    let logits = forward_logits(t, vars, prepared, config)?;
    let loss = cross_entropy(t, logits, label)?;
    Ok((loss, logits))
}

/// One full forward/backward pass; returns the loss value, the positive
/// class probability, and per-block gradients aligned with
/// [`ModelParams::blocks`].
pub fn loss_and_gradients(
    params: &ModelParams,
    prepared: &PreparedGraph,
    config: &ModelConfig,
) -> Result<(f64, f64, Vec<Tensor>)> {
    let mut t = Tape::new();
    let vars = params.load(&mut t);
    let (loss, logits) = forward_loss(&mut t, &vars, prepared, config)?;
    let probs = softmax_probs(t.value(logits));
    let gmap = t.backward(loss)?;
    let grads = vars
        .vars()
        .into_iter()
        .map(|v| {
            let (r, c) = t.value(v).shape();
            gmap.grad_or_zeros(v, r, c)
        })
        .collect();
    Ok((t.value(loss).item()?, probs[1], grads))
}

/// Forward-only evaluation: positive-class probability of one graph.
pub fn predict_prob(
    params: &ModelParams,
    prepared: &PreparedGraph,
    config: &ModelConfig,
) -> Result<f64> {
    let mut t = Tape::new();
    let vars = params.load(&mut t);
    let logits = forward_logits(&mut t, &vars, prepared, config)?;
    Ok(softmax_probs(t.value(logits))[1])
}

/// The pooled graph-level vector the classifier consumes (forward only).
pub fn graph_representation(
    params: &ModelParams,
    prepared: &PreparedGraph,
    config: &ModelConfig,
) -> Result<Tensor> {
    let mut t = Tape::new();
    let vars = params.load(&mut t);
    let (x, k_last) = embed_nodes(&mut t, &vars, prepared, config)?;
    let z = readout_graph(&mut t, x, k_last, config)?;
    Ok(t.value(z).clone())
}
