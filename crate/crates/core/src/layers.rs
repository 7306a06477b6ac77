//! The hyperbolic graph attention layer stack.
//!
//! Per layer: a hyperbolic linear transform with bias via parallel transport,
//! per-head query/key/value maps, Lorentzian attention scores normalized
//! separately over excitatory and inhibitory neighborhoods, signed
//! aggregation in the tangent space of the receiving node, and a curvature
//! switch with a Euclidean nonlinearity in the origin tangent space.
//!
//! Single-point operations mirror the vectorized edge-list path used for
//! whole-graph forwards; the two are cross-checked in the tests.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::SignedGraph;
use crate::manifold::{
    exp_map_rows, log_map_rows, origin_row, transport_rows, LorentzPoint,
};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Curvature floor added on top of softplus(rho).
pub const CURVATURE_EPS: f64 = 1e-4;

/// Nonlinearity applied in the origin tangent space between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Per-layer structural configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LayerConfig {
    /// Hidden dimension d.
    pub hidden_dim: usize,
    /// Attention head count H.
    pub heads: usize,
    /// Temperature base tau0; the layer temperature is tau0 / sqrt(K).
    pub tau0: f64,
    pub activation: Activation,
    /// Add each node to its own positive neighborhood so isolated nodes
    /// still update.
    pub self_loops: bool,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            heads: 4,
            tau0: 1.0,
            activation: Activation::Relu,
            self_loops: true,
        }
    }
}

/// How the layer computes and mixes attention; the defaults are the full
/// model, the alternatives are ablation paths.
#[derive(Clone, Copy, Debug, Default)]
pub struct LayerMode {
    /// Score with Euclidean dot products of origin-tangent coordinates
    /// instead of the Lorentzian inner product.
    pub euclidean_attention: bool,
    /// Merge both neighborhoods under a single softmax with all-positive
    /// aggregation.
    pub unsigned_aggregation: bool,
}

/// Learnable tensors of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// d_out x d_in, acting on the spatial part of origin-tangent vectors.
    pub weight: Tensor,
    /// 1 x d_out spatial bias (ambient leading coordinate implicitly 0).
    pub bias: Tensor,
    /// Per-head query/key/value maps, each d_out x d_out.
    pub heads: Vec<HeadParams>,
    /// Raw curvature scalar; K = softplus(rho) + 1e-4.
    pub rho: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

/// Tape handles for one layer's parameters.
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
    pub heads: Vec<HeadVars>,
    pub rho: Var,
}

pub struct HeadVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

impl LayerParams {
    /// Xavier-style init; rho set so the layer starts at curvature exactly 1.
    ///
    /// `input_norm` is the expected Euclidean norm of incoming tangent rows;
    /// the main weight matrix is scaled so transformed tangents start near
    /// unit norm. Z-scored length-T series come in at norm sqrt(T), and
    /// leaving that uncorrected walks embeddings so far up the hyperboloid
    /// that cosh overflows once training perturbs the stack.
    pub fn init(
        d_in: usize,
        d_out: usize,
        heads: usize,
        input_norm: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mat = |rows: usize, cols: usize, gain: f64, rng: &mut dyn rand::RngCore| {
            let std = gain * (2.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Tensor::new(rows, cols, data).expect("init shape")
        };
        let weight_gain = 1.0 / input_norm.max(1.0);
        LayerParams {
            weight: mat(d_out, d_in, weight_gain, rng),
            bias: Tensor::zeros(1, d_out),
            heads: (0..heads)
                .map(|_| HeadParams {
                    query: mat(d_out, d_out, 1.0, rng),
                    key: mat(d_out, d_out, 1.0, rng),
                    value: mat(d_out, d_out, 1.0, rng),
                })
                .collect(),
            rho: Tensor::scalar(rho_for_curvature(1.0)),
        }
    }

    pub fn load(&self, t: &mut Tape) -> LayerVars {
        LayerVars {
            weight: t.leaf(self.weight.clone()),
            bias: t.leaf(self.bias.clone()),
            heads: self
                .heads
                .iter()
                .map(|h| HeadVars {
                    query: t.leaf(h.query.clone()),
                    key: t.leaf(h.key.clone()),
                    value: t.leaf(h.value.clone()),
                })
                .collect(),
            rho: t.leaf(self.rho.clone()),
        }
    }
}

/// K = softplus(rho) + eps, strictly positive for any real rho.
pub fn curvature_from_rho(t: &mut Tape, rho: Var) -> Result<Var> {
    let sp = t.softplus(rho)?;
    t.add_const(sp, CURVATURE_EPS)
}

/// Inverse of [`curvature_from_rho`] for initialization.
pub fn rho_for_curvature(k: f64) -> f64 {
    ((k - CURVATURE_EPS).exp() - 1.0).ln()
}

// ─────────────────────────────────────────────────────────────────────
// Core building blocks (row-wise; a single point is a one-row matrix)
// ─────────────────────────────────────────────────────────────────────

/// Lift Euclidean feature rows onto the hyperboloid: exp map at the origin
/// of the ambient vector (0, x).
pub fn lift_rows(t: &mut Tape, feats: Var, k: Var) -> Result<Var> {
    let (rows, dim) = {
        let v = t.value(feats);
        (v.rows(), v.cols())
    };
    let zeros = t.zeros(rows, 1);
    let ambient = t.concat_cols(&[zeros, feats])?;
    let o = origin_row(t, dim, k)?;
    exp_map_rows(t, o, ambient, k)
}

/// Typed single-point lift.
pub fn lift_to_manifold(t: &mut Tape, x: Var, k: Var) -> Result<LorentzPoint> {
    let coords = lift_rows(t, x, k)?;
    Ok(LorentzPoint {
        coords,
        curvature: k,
    })
}

/// Hyperbolic linear transform `exp_o(W log_o(x))`, optionally followed by
/// bias addition `exp_x(PT_{o->x}(b))`.
pub fn hyperbolic_linear(
    t: &mut Tape,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    k: Var,
) -> Result<Var> {
    let (d_out, d_in) = t.value(weight).shape();
    let o_in = origin_row(t, d_in, k)?;
    let tangent = log_map_rows(t, o_in, x, k)?;
    let spatial = t.slice_cols(tangent, 1, d_in + 1)?;
    let wt = t.transpose(weight)?;
    let z = t.matmul(spatial, wt)?;
    let rows = t.value(z).rows();
    let zeros = t.zeros(rows, 1);
    let ambient = t.concat_cols(&[zeros, z])?;
    let o_out = origin_row(t, d_out, k)?;
    let y = exp_map_rows(t, o_out, ambient, k)?;
    match bias {
        None => Ok(y),
        Some(b) => {
            let zb = t.zeros(1, 1);
            let b_amb = t.concat_cols(&[zb, b])?;
            let carried = transport_rows(t, o_out, y, b_amb, k)?;
            exp_map_rows(t, y, carried, k)
        }
    }
}

/// Lorentzian attention score `<q,k>_L / (sqrt(d) * tau)` with
/// `tau = tau0 / sqrt(K)`.
pub fn attention_scores(
    t: &mut Tape,
    q: &LorentzPoint,
    key: &LorentzPoint,
    d: usize,
    tau0: f64,
) -> Result<Var> {
    let inner = t.lorentz_inner_rows(q.coords, key.coords)?;
    let scale = score_scale(t, q.curvature, d, tau0)?;
    t.mul(inner, scale)
}

/// `sqrt(K) / (sqrt(d) * tau0)`, the multiplier taking raw inner products to
/// attention scores.
fn score_scale(t: &mut Tape, k: Var, d: usize, tau0: f64) -> Result<Var> {
    let sqrt_k = t.sqrt(k)?;
    t.mul_const(sqrt_k, 1.0 / ((d as f64).sqrt() * tau0))
}

/// Softmax restricted independently to the excitatory and inhibitory index
/// sets. Returns `(w_pos, w_neg)`, each shaped like `scores`, zero outside
/// its own set; an empty set yields an all-zero tensor rather than NaN.
pub fn signed_softmax(
    t: &mut Tape,
    scores: Var,
    pos: &[usize],
    neg: &[usize],
) -> Result<(Var, Var)> {
    debug_assert!(pos.iter().all(|i| !neg.contains(i)), "index sets overlap");
    let w_pos = t.softmax_subsets(scores, Arc::new(vec![pos.to_vec()]))?;
    let w_neg = t.softmax_subsets(scores, Arc::new(vec![neg.to_vec()]))?;
    Ok((w_pos, w_neg))
}

/// Per-head neighborhood for single-node aggregation: value points and
/// normalized weights for each sign. Either side may have zero rows.
pub struct SignedNeighborhood {
    /// [P, d+1] value points of positive neighbors.
    pub pos_values: Var,
    /// [P, 1] attention weights.
    pub pos_weights: Var,
    /// [Q, d+1] value points of negative neighbors.
    pub neg_values: Var,
    /// [Q, 1] attention weights.
    pub neg_weights: Var,
}

/// Signed tangent aggregation at a single node: per head,
/// `delta = sum_pos w log_h(v) - sum_neg w log_h(v)`; heads are averaged in
/// the tangent space of `h` and mapped back through the exp map.
pub fn signed_aggregate(
    t: &mut Tape,
    h: &LorentzPoint,
    heads: &[SignedNeighborhood],
) -> Result<LorentzPoint> {
    let k = h.curvature;
    let cols = t.value(h.coords).cols();
    let mut total: Option<Var> = None;
    for nb in heads {
        let mut delta: Option<Var> = None;
        for (values, weights, sign) in [
            (nb.pos_values, nb.pos_weights, 1.0),
            (nb.neg_values, nb.neg_weights, -1.0),
        ] {
            if t.value(values).rows() == 0 {
                continue;
            }
            let lm = log_map_rows(t, h.coords, values, k)?;
            let wl = t.mul(weights, lm)?;
            let summed = t.sum_axis0(wl)?;
            let signed = if sign < 0.0 { t.neg(summed)? } else { summed };
            delta = Some(match delta {
                None => signed,
                Some(d) => t.add(d, signed)?,
            });
        }
        let delta = match delta {
            Some(d) => d,
            None => t.zeros(1, cols),
        };
        total = Some(match total {
            None => delta,
            Some(acc) => t.add(acc, delta)?,
        });
    }
    let total = match total {
        Some(v) => t.mul_const(v, 1.0 / heads.len().max(1) as f64)?,
        None => t.zeros(1, cols),
    };
    let coords = exp_map_rows(t, h.coords, total, k)?;
    Ok(LorentzPoint {
        coords,
        curvature: k,
    })
}

/// Curvature switch between layers: a Euclidean nonlinearity on the spatial
/// part of the origin-tangent coordinates, re-lifted under the next
/// curvature. Row-wise over [N, d+1] points.
pub fn layer_update(
    t: &mut Tape,
    y: Var,
    k_prev: Var,
    k_next: Var,
    activation: Activation,
) -> Result<Var> {
    let cols = t.value(y).cols();
    let o_prev = origin_row(t, cols - 1, k_prev)?;
    let tangent = log_map_rows(t, o_prev, y, k_prev)?;
    let spatial = t.slice_cols(tangent, 1, cols)?;
    let activated = match activation {
        Activation::Relu => t.relu(spatial)?,
        Activation::Identity => spatial,
    };
    let rows = t.value(activated).rows();
    let zeros = t.zeros(rows, 1);
    let ambient = t.concat_cols(&[zeros, activated])?;
    let o_next = origin_row(t, cols - 1, k_next)?;
    exp_map_rows(t, o_next, ambient, k_next)
}

// ─────────────────────────────────────────────────────────────────────
// Whole-graph forward over an edge list
// ─────────────────────────────────────────────────────────────────────

/// Precomputed directed edge structure of a signed graph: positive edges
/// first (optionally with self-loops), then negative edges, each sorted by
/// source then target so summation order is fixed.
#[derive(Clone, Debug)]
pub struct GraphLayout {
    pub n: usize,
    pub src: Arc<Vec<usize>>,
    pub tgt: Arc<Vec<usize>>,
    /// `src * n + tgt` per edge, for gathers out of flattened [N,N] score
    /// matrices and scatters into flattened coefficient matrices.
    pub flat: Arc<Vec<usize>>,
    /// +1 for rows from the positive list, -1 for the negative list.
    pub sign: Tensor,
    /// One group per (node, sign) with at least one edge.
    pub groups_signed: Arc<Vec<Vec<usize>>>,
    /// One group per node over all its edges, for unsigned aggregation.
    pub groups_merged: Arc<Vec<Vec<usize>>>,
    pub pos_rows: usize,
}

impl GraphLayout {
    pub fn new(graph: &SignedGraph, self_loops: bool) -> Self {
        let n = graph.node_count();
        let adj = graph.adjacency();
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        let mut groups_signed = Vec::new();
        let mut per_node: Vec<Vec<usize>> = vec![Vec::new(); n];

        for i in 0..n {
            let mut nbrs = adj.pos[i].clone();
            if self_loops {
                nbrs.push(i);
                nbrs.sort_unstable();
            }
            if nbrs.is_empty() {
                continue;
            }
            let mut group = Vec::with_capacity(nbrs.len());
            for j in nbrs {
                group.push(src.len());
                per_node[i].push(src.len());
                src.push(i);
                tgt.push(j);
            }
            groups_signed.push(group);
        }
        let pos_rows = src.len();
        for i in 0..n {
            if adj.neg[i].is_empty() {
                continue;
            }
            let mut group = Vec::with_capacity(adj.neg[i].len());
            for &j in &adj.neg[i] {
                group.push(src.len());
                per_node[i].push(src.len());
                src.push(i);
                tgt.push(j);
            }
            groups_signed.push(group);
        }

        let total = src.len();
        let mut sign_data = vec![1.0; total];
        for s in sign_data.iter_mut().skip(pos_rows) {
            *s = -1.0;
        }
        let groups_merged: Vec<Vec<usize>> =
            per_node.into_iter().filter(|g| !g.is_empty()).collect();
        let flat = src.iter().zip(&tgt).map(|(&s, &t)| s * n + t).collect();

        GraphLayout {
            n,
            src: Arc::new(src),
            tgt: Arc::new(tgt),
            flat: Arc::new(flat),
            sign: Tensor::new(total.max(0), 1, sign_data).expect("sign tensor"),
            groups_signed: Arc::new(groups_signed),
            groups_merged: Arc::new(groups_merged),
            pos_rows,
        }
    }

    pub fn edge_rows(&self) -> usize {
        self.src.len()
    }
}

/// One full attention layer over every node of a graph.
///
/// `x` holds the node points ([N, d_in+1], curvature `k_in`); the result is
/// [N, d_out+1] on the hyperboloid of curvature `k_out`.
///
/// Pairwise inner products come from dense [N,N] matmuls with the edge
/// entries gathered out, and the signed aggregation uses the expansion
/// `log_h(v) = beta (v + u h)`: the value sums become one coefficient-matrix
/// product per head, so no edge-length tensor is ever wider than one column.
pub fn forward_layer(
    t: &mut Tape,
    layout: &GraphLayout,
    x: Var,
    params: &LayerVars,
    config: &LayerConfig,
    k_in: Var,
    k_out: Var,
    mode: LayerMode,
) -> Result<Var> {
    let d_out = t.value(params.weight).rows();
    let h = hyperbolic_linear(t, x, params.weight, Some(params.bias), k_in)?;

    if layout.edge_rows() == 0 {
        // No edges anywhere: every delta is zero and the update is direct.
        return layer_update(t, h, k_in, k_out, config.activation);
    }

    // Shared origin-tangent coordinates of h for the head maps.
    let o = origin_row(t, d_out, k_in)?;
    let th = log_map_rows(t, o, h, k_in)?;
    let th_sp = t.slice_cols(th, 1, d_out + 1)?;

    let scale = score_scale(t, k_in, d_out, config.tau0)?;
    let groups = if mode.unsigned_aggregation {
        layout.groups_merged.clone()
    } else {
        layout.groups_signed.clone()
    };

    let n = layout.n;
    let jmask = t.leaf(minkowski_mask(d_out + 1));
    let h_j = t.mul(h, jmask)?;
    let sign = t.leaf(layout.sign.clone());

    let mut delta_sum: Option<Var> = None;
    for head in &params.heads {
        let wq = t.transpose(head.query)?;
        let wk = t.transpose(head.key)?;
        let wv = t.transpose(head.value)?;
        let q_sp = t.matmul(th_sp, wq)?;
        let k_sp = t.matmul(th_sp, wk)?;
        let v_sp = t.matmul(th_sp, wv)?;

        // [N,N] score matrix, edge entries gathered out.
        let score_full = if mode.euclidean_attention {
            let kt = t.transpose(k_sp)?;
            t.matmul(q_sp, kt)?
        } else {
            let q_pt = lift_tangent_spatial(t, q_sp, k_in)?;
            let k_pt = lift_tangent_spatial(t, k_sp, k_in)?;
            let qj = t.mul(q_pt, jmask)?;
            let kt = t.transpose(k_pt)?;
            t.matmul(qj, kt)?
        };
        let score_flat = t.reshape(score_full, n * n, 1)?;
        let raw = t.gather_rows(score_flat, layout.flat.clone())?;
        let scores = t.mul(raw, scale)?;
        let weights = t.softmax_subsets(scores, groups.clone())?;
        let weights = if mode.unsigned_aggregation {
            weights
        } else {
            t.mul(weights, sign)?
        };

        // log_{h_i}(v_j) = beta (v_j + u h_i) with u = <h_i,v_j>_L / K, so
        //   delta_i = sum_j w beta v_j + (sum_j w beta u) h_i.
        let v_pt = lift_tangent_spatial(t, v_sp, k_in)?;
        let vt = t.transpose(v_pt)?;
        let inner_full = t.matmul(h_j, vt)?;
        let inner_flat = t.reshape(inner_full, n * n, 1)?;
        let inner_e = t.gather_rows(inner_flat, layout.flat.clone())?;
        let u_e = t.div(inner_e, k_in)?;
        let neg_u = t.neg(u_e)?;
        let alpha = t.clamp(
            neg_u,
            1.0 + crate::manifold::ARCOSH_EPS,
            crate::manifold::ARCOSH_CAP,
        )?;
        let num = t.arcosh(alpha)?;
        let a2 = t.mul(alpha, alpha)?;
        let a2m1 = t.add_const(a2, -1.0)?;
        let den = t.sqrt(a2m1)?;
        let beta = t.div(num, den)?;

        let coef = t.mul(weights, beta)?;
        let coef_u = t.mul(coef, u_e)?;
        let coef_flat = t.scatter_add_rows(coef, layout.flat.clone(), n * n)?;
        let coef_mat = t.reshape(coef_flat, n, n)?;
        let delta_v = t.matmul(coef_mat, v_pt)?;
        let self_coef = t.scatter_add_rows(coef_u, layout.src.clone(), n)?;
        let delta_h = t.mul(self_coef, h)?;
        let delta = t.add(delta_v, delta_h)?;
        delta_sum = Some(match delta_sum {
            None => delta,
            Some(acc) => t.add(acc, delta)?,
        });
    }
    let delta = t.mul_const(delta_sum.expect("at least one head"), 1.0 / config.heads as f64)?;
    let y = exp_map_rows(t, h, delta, k_in)?;
    layer_update(t, y, k_in, k_out, config.activation)
}

/// Row mask (-1, 1, ..., 1): multiplying a point matrix flips the time
/// coordinate so plain matmuls compute Lorentzian Gram matrices.
fn minkowski_mask(cols: usize) -> Tensor {
    let mut data = vec![1.0; cols];
    data[0] = -1.0;
    Tensor::new(1, cols, data).expect("mask shape")
}

/// Rescale any row whose Euclidean norm exceeds `cap` back onto the cap
/// sphere; rows inside the ball pass through untouched (zero gradient to the
/// scale factor there, like a clamp).
///
/// Tangent vectors based away from the origin carry ambient coordinates of
/// order e^distance, so an unbounded readout hands the linear head an
/// exponentially steep loss surface; one norm cap keeps it compact.
pub fn clip_rows_norm(t: &mut Tape, x: Var, cap: f64) -> Result<Var> {
    let sq = t.mul(x, x)?;
    let norm2 = t.sum_axis1(sq)?;
    let safe = t.clamp(norm2, 1e-30, f64::INFINITY)?;
    let norm = t.sqrt(safe)?;
    let cap_v = t.scalar(cap);
    let inv = t.div(cap_v, norm)?;
    let factor = t.clamp(inv, 0.0, 1.0)?;
    t.mul(factor, x)
}

/// Spatial tangent rows [N, d] -> manifold points [N, d+1] via exp at the
/// origin (no bias), shared by the q/k/v maps.
fn lift_tangent_spatial(t: &mut Tape, spatial: Var, k: Var) -> Result<Var> {
    let (rows, d) = t.value(spatial).shape();
    let zeros = t.zeros(rows, 1);
    let ambient = t.concat_cols(&[zeros, spatial])?;
    let o = origin_row(t, d, k)?;
    exp_map_rows(t, o, ambient, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::manifold::{self, geodesic_distance, project_to_hyperboloid};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn identity(d: usize) -> Tensor {
        let mut m = Tensor::zeros(d, d);
        for i in 0..d {
            m.set(i, i, 1.0);
        }
        m
    }

    fn random_points(t: &mut Tape, k: Var, n: usize, d: usize, rng: &mut ChaCha8Rng) -> Var {
        let raw = Tensor::new(
            n,
            d + 1,
            (0..n * (d + 1))
                .map(|_| rng.sample::<f64, _>(StandardNormal) * 0.8)
                .collect(),
        )
        .unwrap();
        let leaf = t.leaf(raw);
        manifold::project_rows(t, leaf, k).unwrap()
    }

    #[test]
    fn lift_examples() {
        let mut t = Tape::new();
        let k = t.scalar(1.0);
        // zero vector lifts to the origin
        let z = t.zeros(1, 2);
        let p = lift_to_manifold(&mut t, z, k).unwrap();
        assert!(t.value(p.coords).max_abs_diff(&Tensor::row(&[1.0, 0.0, 0.0])) < 1e-12);

        // (1,0) at K=1 lifts to (cosh 1, sinh 1, 0)
        let x = t.leaf(Tensor::row(&[1.0, 0.0]));
        let p = lift_to_manifold(&mut t, x, k).unwrap();
        let expect = Tensor::row(&[1f64.cosh(), 1f64.sinh(), 0.0]);
        assert!(t.value(p.coords).max_abs_diff(&expect) < 1e-12);

        // membership for random inputs
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = t.leaf(Tensor::row(&[rng.gen::<f64>(), rng.gen::<f64>()]));
            let p = lift_to_manifold(&mut t, x, k).unwrap();
            assert!(p.constraint_residual(&mut t).unwrap() < 1e-10);
        }
    }

    #[test]
    fn hyperbolic_linear_identity_and_zero() {
        let mut t = Tape::new();
        let k = t.scalar(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_points(&mut t, k, 4, 3, &mut rng);

        // W = I, b = 0 is the identity
        let w = t.leaf(identity(3));
        let b = t.leaf(Tensor::zeros(1, 3));
        let y = hyperbolic_linear(&mut t, x, w, Some(b), k).unwrap();
        assert!(t.value(x).max_abs_diff(t.value(y)) < 1e-9);

        // W = 0, b = 0 collapses to the origin
        let w0 = t.leaf(Tensor::zeros(3, 3));
        let y = hyperbolic_linear(&mut t, x, w0, Some(b), k).unwrap();
        for r in 0..4 {
            let row = t.value(y).row_slice(r).to_vec();
            assert!((row[0] - 1.0).abs() < 1e-12 && row[1].abs() < 1e-12);
        }

        // at the origin, transport o->o is the identity: bias beta moves o
        // to exp_o((0, beta))
        let o_leaf = t.leaf(Tensor::row(&[1.0, 0.0, 0.0, 0.0]));
        let w = t.leaf(identity(3));
        let beta = t.leaf(Tensor::row(&[0.5, -0.2, 0.1]));
        let moved = hyperbolic_linear(&mut t, o_leaf, w, Some(beta), k).unwrap();
        let direct = lift_rows(&mut t, beta, k).unwrap();
        assert!(t.value(moved).max_abs_diff(t.value(direct)) < 1e-10);
    }

    #[test]
    fn attention_score_examples() {
        let mut t = Tape::new();
        let k = t.scalar(1.0);
        let o = manifold::origin(&mut t, 3, k).unwrap();
        // <o,o>_L = -1, sqrt(d) = 2, tau = 1 -> -1/2
        let s = attention_scores(&mut t, &o, &o, 4, 1.0).unwrap();
        assert!((t.value(s).item().unwrap() + 0.5).abs() < 1e-12);

        // monotone decrease with distance, and tau scaling preserves argmax
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = {
            let raw = t.leaf(Tensor::row(&[0.0, 0.3, -0.2, 0.5]));
            project_to_hyperboloid(&mut t, raw, k).unwrap()
        };
        let mut last_score = f64::INFINITY;
        let mut last_dist = 0.0;
        for scale in [0.2, 0.6, 1.2, 2.0] {
            let raw: Vec<f64> = (0..4)
                .map(|i| if i == 0 { 0.0 } else { scale * (i as f64) })
                .collect();
            let _ = &mut rng;
            let p = {
                let leaf = t.leaf(Tensor::row(&raw));
                project_to_hyperboloid(&mut t, leaf, k).unwrap()
            };
            let d = geodesic_distance(&mut t, &q, &p).unwrap();
            let s = attention_scores(&mut t, &q, &p, 4, 1.0).unwrap();
            let (d, s) = (t.value(d).item().unwrap(), t.value(s).item().unwrap());
            assert!(d > last_dist);
            assert!(s < last_score, "score must decrease with distance");
            let s2 = attention_scores(&mut t, &q, &p, 4, 2.0).unwrap();
            assert!((t.value(s2).item().unwrap() - s / 2.0).abs() < 1e-12);
            last_score = s;
            last_dist = d;
        }
    }

    #[test]
    fn signed_softmax_examples() {
        let mut t = Tape::new();
        let scores = t.leaf(Tensor::col(&[0.3, 1.7, 1.7, -0.4]));
        // singleton positive set
        let (wp, wn) = signed_softmax(&mut t, scores, &[0], &[1, 2]).unwrap();
        assert_eq!(t.value(wp).data()[0], 1.0);
        // two equal scores split evenly
        assert!((t.value(wn).data()[1] - 0.5).abs() < 1e-15);
        assert!((t.value(wn).data()[2] - 0.5).abs() < 1e-15);
        // empty negative set: all-zero weights, no NaN
        let (_, wn) = signed_softmax(&mut t, scores, &[0, 1], &[]).unwrap();
        assert!(t.value(wn).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn signed_aggregate_examples() {
        let mut t = Tape::new();
        let k = t.scalar(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h_raw = t.leaf(Tensor::row(&[0.0, 0.4, -0.1, 0.2]));
        let h = project_to_hyperboloid(&mut t, h_raw, k).unwrap();

        // no neighbors at all -> output = h
        let empty_vals = t.zeros(0, 4);
        let empty_w = t.zeros(0, 1);
        let nb = SignedNeighborhood {
            pos_values: empty_vals,
            pos_weights: empty_w,
            neg_values: empty_vals,
            neg_weights: empty_w,
        };
        let out = signed_aggregate(&mut t, &h, &[nb]).unwrap();
        assert!(t.value(h.coords).max_abs_diff(t.value(out.coords)) < 1e-9);

        // one positive neighbor with weight 1 -> output = neighbor
        let v = random_points(&mut t, k, 1, 3, &mut rng);
        let one = t.leaf(Tensor::col(&[1.0]));
        let nb = SignedNeighborhood {
            pos_values: v,
            pos_weights: one,
            neg_values: empty_vals,
            neg_weights: empty_w,
        };
        let out = signed_aggregate(&mut t, &h, &[nb]).unwrap();
        assert!(t.value(v).max_abs_diff(t.value(out.coords)) < 1e-8);

        // matching positive and negative neighbor cancel exactly
        let nb = SignedNeighborhood {
            pos_values: v,
            pos_weights: one,
            neg_values: v,
            neg_weights: one,
        };
        let out = signed_aggregate(&mut t, &h, &[nb]).unwrap();
        assert!(t.value(h.coords).max_abs_diff(t.value(out.coords)) < 1e-9);
    }

    #[test]
    fn layer_update_examples() {
        let mut t = Tape::new();
        let k1 = t.scalar(1.0);
        let k2 = t.scalar(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = random_points(&mut t, k1, 3, 4, &mut rng);

        // identity activation, same curvature: round trip
        let out = layer_update(&mut t, y, k1, k1, Activation::Identity).unwrap();
        assert!(t.value(y).max_abs_diff(t.value(out)) < 1e-9);

        // origin maps to origin under any curvature switch
        let o1 = t.leaf(Tensor::row(&[1.0, 0.0, 0.0, 0.0, 0.0]));
        let out = layer_update(&mut t, o1, k1, k2, Activation::Relu).unwrap();
        let expect = Tensor::row(&[2f64.sqrt(), 0.0, 0.0, 0.0, 0.0]);
        assert!(t.value(out).max_abs_diff(&expect) < 1e-12);

        // all-negative spatial tangent + relu collapses to the next origin
        let v = t.leaf(Tensor::row(&[-0.5, -1.2, -0.1, -0.9]));
        let p = lift_rows(&mut t, v, k1).unwrap();
        let out = layer_update(&mut t, p, k1, k2, Activation::Relu).unwrap();
        let expect = Tensor::row(&[2f64.sqrt(), 0.0, 0.0, 0.0, 0.0]);
        assert!(t.value(out).max_abs_diff(&expect) < 1e-12);
    }

    fn tiny_graph(n: usize, pos: &[(usize, usize)], neg: &[(usize, usize)], tdim: usize) -> SignedGraph {
        SignedGraph {
            features: Tensor::zeros(n, tdim),
            pos_edges: pos.iter().map(|&(i, j)| Edge { i, j, w: 0.5 }).collect(),
            neg_edges: neg.iter().map(|&(i, j)| Edge { i, j, w: 0.5 }).collect(),
            label: None,
        }
    }

    #[test]
    fn forward_layer_identity_case() {
        // no edges, W = I, b = 0, identity activation, same curvature
        let g = tiny_graph(4, &[], &[], 5);
        let layout = GraphLayout::new(&g, false);
        let mut t = Tape::new();
        let k = t.scalar(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_points(&mut t, k, 4, 3, &mut rng);
        let params = LayerVars {
            weight: t.leaf(identity(3)),
            bias: t.leaf(Tensor::zeros(1, 3)),
            heads: vec![HeadVars {
                query: t.leaf(identity(3)),
                key: t.leaf(identity(3)),
                value: t.leaf(identity(3)),
            }],
            rho: t.leaf(Tensor::scalar(rho_for_curvature(1.0))),
        };
        let config = LayerConfig {
            hidden_dim: 3,
            heads: 1,
            tau0: 1.0,
            activation: Activation::Identity,
            self_loops: false,
        };
        let out = forward_layer(
            &mut t,
            &layout,
            x,
            &params,
            &config,
            k,
            k,
            LayerMode::default(),
        )
        .unwrap();
        assert!(t.value(x).max_abs_diff(t.value(out)) < 1e-8);
    }

    #[test]
    fn forward_layer_symmetry_on_identical_nodes() {
        // all nodes identical and fully positively connected -> equal outputs
        let g = tiny_graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)], &[], 5);
        let layout = GraphLayout::new(&g, true);
        let mut t = Tape::new();
        let k = t.scalar(1.0);
        let feats = t.leaf(Tensor::new(4, 3, vec![0.4, -0.3, 0.8].repeat(4)).unwrap());
        let x = lift_rows(&mut t, feats, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = LayerParams::init(3, 3, 2, 1.0, &mut rng);
        let params = p.load(&mut t);
        let config = LayerConfig {
            hidden_dim: 3,
            heads: 2,
            tau0: 1.0,
            activation: Activation::Relu,
            self_loops: true,
        };
        let out = forward_layer(
            &mut t,
            &layout,
            x,
            &params,
            &config,
            k,
            k,
            LayerMode::default(),
        )
        .unwrap();
        let first = t.value(out).row_slice(0).to_vec();
        for r in 1..4 {
            let row = t.value(out).row_slice(r);
            for (a, b) in first.iter().zip(row) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn forward_layer_permutation_equivariance() {
        let pos = [(0usize, 1usize), (1, 2), (2, 3), (0, 4)];
        let neg = [(1usize, 4usize), (3, 4)];
        let perm = [2usize, 0, 4, 1, 3]; // node i -> perm[i]
        let n = 5;

        let feats: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..3).map(|c| ((i * 3 + c) as f64) * 0.1 - 0.6).collect())
            .collect();

        let build = |mapping: &dyn Fn(usize) -> usize| -> Tensor {
            let mut g = tiny_graph(n, &[], &[], 3);
            g.pos_edges = pos
                .iter()
                .map(|&(i, j)| {
                    let (a, b) = (mapping(i), mapping(j));
                    Edge { i: a.min(b), j: a.max(b), w: 0.5 }
                })
                .collect();
            g.neg_edges = neg
                .iter()
                .map(|&(i, j)| {
                    let (a, b) = (mapping(i), mapping(j));
                    Edge { i: a.min(b), j: a.max(b), w: 0.5 }
                })
                .collect();
            let mut rows = vec![vec![0.0; 3]; n];
            for i in 0..n {
                rows[mapping(i)] = feats[i].clone();
            }
            g.features = Tensor::from_rows(&rows).unwrap();

            let layout = GraphLayout::new(&g, true);
            let mut t = Tape::new();
            let k = t.scalar(1.0);
            let f = t.leaf(g.features.clone());
            let x = lift_rows(&mut t, f, k).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let p = LayerParams::init(3, 3, 2, 1.0, &mut rng);
            let params = p.load(&mut t);
            let config = LayerConfig {
                hidden_dim: 3,
                heads: 2,
                tau0: 1.0,
                activation: Activation::Relu,
                self_loops: true,
            };
            let out = forward_layer(
                &mut t,
                &layout,
                x,
                &params,
                &config,
                k,
                k,
                LayerMode::default(),
            )
            .unwrap();
            t.value(out).clone()
        };

        let base = build(&|i| i);
        let permuted = build(&|i| perm[i]);
        for i in 0..n {
            let a = base.row_slice(i);
            let b = permuted.row_slice(perm[i]);
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-10, "node {i}: {x} vs {y}");
            }
        }
    }

    /// The vectorized edge-list forward must agree with a straightforward
    /// per-node composition of the public single-point operations.
    #[test]
    fn forward_layer_matches_per_node_reference() {
        let g = tiny_graph(5, &[(0, 1), (1, 2), (0, 4)], &[(2, 3), (1, 4)], 3);
        let layout = GraphLayout::new(&g, true);
        let config = LayerConfig {
            hidden_dim: 3,
            heads: 2,
            tau0: 1.3,
            activation: Activation::Relu,
            self_loops: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = LayerParams::init(3, 3, 2, 1.0, &mut rng);
        let feats = Tensor::new(
            5,
            3,
            (0..15).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.7).collect(),
        )
        .unwrap();

        // vectorized
        let mut t = Tape::new();
        let k_in = t.scalar(1.0);
        let k_out = t.scalar(1.6);
        let f = t.leaf(feats.clone());
        let x = lift_rows(&mut t, f, k_in).unwrap();
        let params = p.load(&mut t);
        let fast = forward_layer(
            &mut t,
            &layout,
            x,
            &params,
            &config,
            k_in,
            k_out,
            LayerMode::default(),
        )
        .unwrap();
        let fast_out = t.value(fast).clone();

        // reference: per node, through the single-point public ops
        let mut t = Tape::new();
        let k_in = t.scalar(1.0);
        let k_out = t.scalar(1.6);
        let f = t.leaf(feats);
        let x = lift_rows(&mut t, f, k_in).unwrap();
        let params = p.load(&mut t);
        let h_all = hyperbolic_linear(&mut t, x, params.weight, Some(params.bias), k_in).unwrap();
        let adj = g.adjacency();
        let mut out_rows = Vec::new();
        for i in 0..5 {
            let h_i = LorentzPoint {
                coords: t.slice_rows(h_all, i, i + 1).unwrap(),
                curvature: k_in,
            };
            let mut pos = adj.pos[i].clone();
            pos.push(i);
            pos.sort_unstable();
            let neg = adj.neg[i].clone();
            let mut heads = Vec::new();
            for hv in &params.heads {
                // q/k/v as hyperbolic linear maps (no bias) of h
                let q = hyperbolic_linear(&mut t, h_i.coords, hv.query, None, k_in).unwrap();
                let q = LorentzPoint { coords: q, curvature: k_in };
                let nbr_scores = |t: &mut Tape, list: &[usize]| -> (Option<Var>, Var) {
                    if list.is_empty() {
                        let empty = t.zeros(0, 4);
                        return (None, empty);
                    }
                    let mut scores = Vec::new();
                    let mut vals = Vec::new();
                    for &j in list {
                        let hj = t.slice_rows(h_all, j, j + 1).unwrap();
                        let kj = hyperbolic_linear(t, hj, hv.key, None, k_in).unwrap();
                        let kj = LorentzPoint { coords: kj, curvature: k_in };
                        let s = attention_scores(t, &q, &kj, 3, config.tau0).unwrap();
                        scores.push(s);
                        let vj = hyperbolic_linear(t, hj, hv.value, None, k_in).unwrap();
                        vals.push(vj);
                    }
                    let s = t.concat_rows(&scores).unwrap();
                    let v = t.concat_rows(&vals).unwrap();
                    (Some(s), v)
                };
                let (pos_scores, pos_vals) = nbr_scores(&mut t, &pos);
                let (neg_scores, neg_vals) = nbr_scores(&mut t, &neg);
                let softmax_all = |t: &mut Tape, s: Option<Var>| -> Var {
                    match s {
                        None => t.zeros(0, 1),
                        Some(s) => {
                            let rows = t.value(s).rows();
                            let grp = Arc::new(vec![(0..rows).collect::<Vec<_>>()]);
                            t.softmax_subsets(s, grp).unwrap()
                        }
                    }
                };
                let wp = softmax_all(&mut t, pos_scores);
                let wn = softmax_all(&mut t, neg_scores);
                heads.push(SignedNeighborhood {
                    pos_values: pos_vals,
                    pos_weights: wp,
                    neg_values: neg_vals,
                    neg_weights: wn,
                });
            }
            let agg = signed_aggregate(&mut t, &h_i, &heads).unwrap();
            let updated =
                layer_update(&mut t, agg.coords, k_in, k_out, config.activation).unwrap();
            out_rows.push(updated);
        }
        let reference = t.concat_rows(&out_rows).unwrap();
        let ref_out = t.value(reference).clone();

        assert!(
            fast_out.max_abs_diff(&ref_out) < 1e-9,
            "vectorized vs reference: {}",
            fast_out.max_abs_diff(&ref_out)
        );
    }

    #[test]
    fn forward_layer_gradients_check_out() {
        use crate::gradcheck::check_gradients;
        let g = tiny_graph(4, &[(0, 1), (1, 2)], &[(0, 3)], 3);
        let layout = GraphLayout::new(&g, true);
        let config = LayerConfig {
            hidden_dim: 3,
            heads: 2,
            tau0: 1.0,
            activation: Activation::Relu,
            self_loops: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = LayerParams::init(3, 3, 2, 1.0, &mut rng);
        let feats = Tensor::new(
            4,
            3,
            (0..12).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.8).collect(),
        )
        .unwrap();
        let params = [
            ("weight", p.weight.clone()),
            ("bias", Tensor::row(&[0.1, -0.2, 0.05])),
            ("q0", p.heads[0].query.clone()),
            ("k0", p.heads[0].key.clone()),
            ("v0", p.heads[0].value.clone()),
            ("q1", p.heads[1].query.clone()),
            ("k1", p.heads[1].key.clone()),
            ("v1", p.heads[1].value.clone()),
            ("rho", p.rho.clone()),
            ("rho_out", Tensor::scalar(rho_for_curvature(1.4))),
        ];
        let report = check_gradients(
            |t, vs| {
                let k_in = curvature_from_rho(t, vs[8])?;
                let k_out = curvature_from_rho(t, vs[9])?;
                let f = t.leaf(feats.clone());
                let x = lift_rows(t, f, k_in)?;
                let lv = LayerVars {
                    weight: vs[0],
                    bias: vs[1],
                    heads: vec![
                        HeadVars { query: vs[2], key: vs[3], value: vs[4] },
                        HeadVars { query: vs[5], key: vs[6], value: vs[7] },
                    ],
                    rho: vs[8],
                };
                let out = forward_layer(
                    t,
                    &layout,
                    x,
                    &lv,
                    &config,
                    k_in,
                    k_out,
                    LayerMode::default(),
                )?;
                // scalar probe mixing all coordinates
                let probe = t.leaf(Tensor::new(
                    4,
                    4,
                    (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect(),
                ).unwrap());
                let prod = t.mul(out, probe)?;
                t.sum(prod)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass(), "{report:#?}");
    }
}
