//! Desk-scale synthetic benchmark: two subject classes whose latent
//! connectivity follows trees of different branching factors, plus a
//! tree-embedding distortion experiment comparing hyperbolic and Euclidean
//! geometry at equal dimension.
//!
//! Subject signals follow a signed autoregressive process on the (rewired)
//! latent tree: each node is `+-coupling` times its parent plus fresh
//! Gaussian innovation, so the correlation between two ROIs is
//! `+-coupling^(tree distance)`. Pearson correlations then genuinely encode
//! the hierarchy, inhibitory (negative) couplings appear by construction,
//! and the two classes differ in the *shape* of their correlation
//! distributions rather than only in which node pairs are linked.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SubjectTimeSeries;
use crate::manifold;
use crate::optim::{adamw_step, AdamWConfig, AdamWState};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Synthetic cohort description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub subjects_per_class: usize,
    pub roi_count: usize,
    pub time_points: usize,
    /// Maximum tree depth; generation fails if `roi_count` nodes do not fit.
    pub depth: usize,
    /// Branching factor of each class's latent tree.
    pub branching: [usize; 2],
    /// White-noise level added on top of the unit-variance structured signal.
    pub noise: f64,
    /// Per-node probability of re-attaching to a random earlier node.
    pub rewiring: f64,
    /// Parent-child coupling of the tree autoregression, in (0, 1).
    pub coupling: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            subjects_per_class: 100,
            roi_count: 32,
            time_points: 64,
            depth: 8,
            branching: [2, 4],
            noise: 0.3,
            rewiring: 0.05,
            coupling: 0.75,
            seed: 42,
        }
    }
}

impl SynthSpec {
    /// The AAL-116-shaped variant: 116 ROIs, 150 time points.
    pub fn full_size(mut self) -> Self {
        self.roi_count = 116;
        self.time_points = 150;
        self.depth = 8;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.roi_count < 4 {
            return Err(Error::InvalidInput("roi_count must be >= 4".into()));
        }
        if self.time_points < 8 {
            return Err(Error::InvalidInput("time_points must be >= 8".into()));
        }
        if self.noise < 0.0 {
            return Err(Error::InvalidInput("noise must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.rewiring) {
            return Err(Error::InvalidInput("rewiring must be in [0,1]".into()));
        }
        if !(self.coupling > 0.0 && self.coupling < 1.0) {
            return Err(Error::InvalidInput(format!(
                "coupling {} gives a degenerate covariance; use a value in (0, 1)",
                self.coupling
            )));
        }
        for (class, &b) in self.branching.iter().enumerate() {
            if b < 2 {
                return Err(Error::InvalidInput(format!(
                    "class {class}: branching must be >= 2"
                )));
            }
            let capacity = tree_capacity(b, self.depth);
            if self.roi_count > capacity {
                return Err(Error::InvalidInput(format!(
                    "class {class}: {} nodes exceed depth-{} capacity {capacity}; increase depth",
                    self.roi_count, self.depth
                )));
            }
        }
        Ok(())
    }
}

/// Node count of a complete b-ary tree of the given depth.
fn tree_capacity(branching: usize, depth: usize) -> usize {
    let mut total = 1usize;
    let mut level = 1usize;
    for _ in 0..depth {
        level = level.saturating_mul(branching);
        total = total.saturating_add(level);
    }
    total
}

/// Edges of the complete b-ary tree over `n` nodes in breadth-first order
/// (node i attaches to (i-1)/b).
pub fn truncated_tree_edges(branching: usize, n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| ((i - 1) / branching, i)).collect()
}

/// Edges of the complete b-ary tree of exactly the given depth.
pub fn complete_tree_edges(branching: usize, depth: usize) -> (usize, Vec<(usize, usize)>) {
    let n = tree_capacity(branching, depth);
    (n, truncated_tree_edges(branching, n))
}

fn subject_rng(spec: &SynthSpec, class: usize, index: usize) -> ChaCha8Rng {
    let mix = spec
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((class as u64) << 32)
        .wrapping_add(index as u64 + 1);
    ChaCha8Rng::seed_from_u64(mix)
}

/// The latent tree of one subject: per node, its parent (heap order with
/// per-node rewiring to a random earlier node) and the sign of the coupling
/// edge, alternating over sibling positions so inhibitory pathways exist by
/// construction.
fn subject_tree(
    spec: &SynthSpec,
    class: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<f64>) {
    let n = spec.roi_count;
    let b = spec.branching[class];
    let mut parent = vec![0usize; n];
    let mut sign = vec![1.0f64; n];
    for i in 1..n {
        parent[i] = if spec.rewiring > 0.0 && rng.gen::<f64>() < spec.rewiring {
            rng.gen_range(0..i)
        } else {
            (i - 1) / b
        };
        sign[i] = if ((i - 1) % b) % 2 == 0 { 1.0 } else { -1.0 };
    }
    (parent, sign)
}

/// One subject's time series: a signed tree autoregression sampled T times.
///
/// Per time point, the root is a unit Gaussian and every other node is
/// `sign * coupling * parent + sqrt(1 - coupling^2) * innovation`, so each
/// node has unit variance and `corr(i,j) = (product of edge signs) *
/// coupling^(tree distance)`. White observation noise is added on top.
/// Deterministic given (spec, class, index).
pub fn generate_subject(spec: &SynthSpec, class: usize, index: usize) -> Result<SubjectTimeSeries> {
    spec.validate()?;
    if class > 1 {
        return Err(Error::InvalidInput(format!("class must be 0 or 1, got {class}")));
    }
    let n = spec.roi_count;
    let mut rng = subject_rng(spec, class, index);
    let (parent, sign) = subject_tree(spec, class, &mut rng);

    let innovation = (1.0 - spec.coupling * spec.coupling).sqrt();
    let t = spec.time_points;
    let mut series = Tensor::zeros(n, t);
    let mut latent = vec![0.0f64; n];
    for col in 0..t {
        latent[0] = rng.sample(StandardNormal);
        for i in 1..n {
            let eps: f64 = rng.sample(StandardNormal);
            latent[i] = sign[i] * spec.coupling * latent[parent[i]] + innovation * eps;
        }
        for (row, &value) in latent.iter().enumerate() {
            let white: f64 = rng.sample(StandardNormal);
            series.set(row, col, value + spec.noise * white);
        }
    }
    SubjectTimeSeries::new(format!("c{class}s{index:04}"), Some(class), series)
}

/// The full balanced cohort, class 0 first.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Vec<SubjectTimeSeries>> {
    spec.validate()?;
    let mut subjects = Vec::with_capacity(2 * spec.subjects_per_class);
    for class in 0..2 {
        for index in 0..spec.subjects_per_class {
            subjects.push(generate_subject(spec, class, index)?);
        }
    }
    Ok(subjects)
}

// ─────────────────────────────────────────────────────────────────────
// Tree-embedding distortion
// ─────────────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EmbedGeometry {
    Hyperbolic { curvature: f64 },
    Euclidean,
}

/// Distortion of one embedding run: mean and max over node pairs of
/// `|d_embed / d_graph - 1|`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortionReport {
    pub geometry: EmbedGeometry,
    pub dim: usize,
    pub iters: usize,
    pub average_distortion: f64,
    pub worst_distortion: f64,
    /// Final relative-stress objective value.
    pub stress: f64,
}

/// All-pairs hop distances of a connected graph; errors when disconnected.
fn bfs_distances(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<usize>>> {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n || u == v {
            return Err(Error::InvalidInput(format!("bad edge ({u},{v})")));
        }
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut all = Vec::with_capacity(n);
    for start in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        if dist.iter().any(|&d| d == usize::MAX) {
            return Err(Error::InvalidInput("input graph is disconnected".into()));
        }
        all.push(dist);
    }
    Ok(all)
}

/// Embed a connected tree by minimizing relative stress
/// `sum ((d_embed - d_graph) / d_graph)^2` with Adam over free coordinates:
/// tangent coordinates at the origin for the hyperbolic case, plain
/// coordinates for the Euclidean one.
pub fn embed_tree_distortion(
    n: usize,
    edges: &[(usize, usize)],
    geometry: EmbedGeometry,
    dim: usize,
    iters: usize,
    seed: u64,
) -> Result<DistortionReport> {
    if dim < 2 {
        return Err(Error::InvalidInput(format!("dim must be >= 2, got {dim}")));
    }
    let hop = bfs_distances(n, edges)?;
    let mut pair_src = Vec::new();
    let mut pair_tgt = Vec::new();
    let mut d_graph = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            pair_src.push(i);
            pair_tgt.push(j);
            d_graph.push(hop[i][j] as f64);
        }
    }
    let pair_src = Arc::new(pair_src);
    let pair_tgt = Arc::new(pair_tgt);
    let pairs = d_graph.len();
    let target = Tensor::col(&d_graph);
    let inv_w = Tensor::new(
        pairs,
        1,
        d_graph.iter().map(|d| 1.0 / (d * d)).collect(),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Tensor::new(
        n,
        dim,
        (0..n * dim)
            .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )?;

    let cfg = AdamWConfig {
        lr: 0.05,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut state = AdamWState::new(&[&coords]);
    let mut last = (f64::INFINITY, Vec::new());

    for _ in 0..iters.max(1) {
        let mut t = Tape::new();
        let c = t.leaf(coords.clone());
        let d_embed = match geometry {
            EmbedGeometry::Hyperbolic { curvature } => {
                let k = t.scalar(curvature);
                let pts = crate::layers::lift_rows(&mut t, c, k)?;
                let a = t.gather_rows(pts, pair_src.clone())?;
                let b = t.gather_rows(pts, pair_tgt.clone())?;
                manifold::distance_rows(&mut t, a, b, k)?
            }
            EmbedGeometry::Euclidean => {
                let a = t.gather_rows(c, pair_src.clone())?;
                let b = t.gather_rows(c, pair_tgt.clone())?;
                let diff = t.sub(a, b)?;
                let sq = t.mul(diff, diff)?;
                let norm2 = t.sum_axis1(sq)?;
                let safe = t.clamp(norm2, 1e-30, f64::INFINITY)?;
                t.sqrt(safe)?
            }
        };
        let tgt_leaf = t.leaf(target.clone());
        let w_leaf = t.leaf(inv_w.clone());
        let resid = t.sub(d_embed, tgt_leaf)?;
        let sq = t.mul(resid, resid)?;
        let weighted = t.mul(sq, w_leaf)?;
        let loss = t.mean(weighted)?;
        last = (t.value(loss).item()?, t.value(d_embed).data().to_vec());
        let gmap = t.backward(loss)?;
        let grad = gmap.grad_or_zeros(c, n, dim);
        adamw_step(&mut [&mut coords], &[grad], &mut state, &cfg)?;
    }

    let (stress, d_final) = last;
    let distortions: Vec<f64> = d_final
        .iter()
        .zip(&d_graph)
        .map(|(&de, &dg)| (de / dg - 1.0).abs())
        .collect();
    let average = distortions.iter().sum::<f64>() / pairs as f64;
    let worst = distortions.iter().cloned().fold(0.0, f64::max);
    Ok(DistortionReport {
        geometry,
        dim,
        iters,
        average_distortion: average,
        worst_distortion: worst,
        stress,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::pearson_correlation;

    #[test]
    fn same_seed_same_series() {
        let spec = SynthSpec {
            subjects_per_class: 2,
            ..Default::default()
        };
        let a = generate_subject(&spec, 1, 3).unwrap();
        let b = generate_subject(&spec, 1, 3).unwrap();
        assert_eq!(a.series, b.series);
        // different subjects differ
        let c = generate_subject(&spec, 1, 4).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn dataset_is_balanced_and_labeled() {
        let spec = SynthSpec {
            subjects_per_class: 5,
            roi_count: 8,
            time_points: 16,
            ..Default::default()
        };
        let subjects = generate_dataset(&spec).unwrap();
        assert_eq!(subjects.len(), 10);
        let ones = subjects.iter().filter(|s| s.label == Some(1)).count();
        assert_eq!(ones, 5);
    }

    #[test]
    fn huge_noise_washes_out_correlations() {
        let spec = SynthSpec {
            subjects_per_class: 1,
            roi_count: 16,
            time_points: 256,
            noise: 100.0,
            rewiring: 0.0,
            ..Default::default()
        };
        let s = generate_subject(&spec, 0, 0).unwrap();
        let c = pearson_correlation(&s.series).unwrap();
        let n = spec.roi_count;
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                total += c.at(i, j).abs();
            }
        }
        let mean = total / (n * (n - 1) / 2) as f64;
        assert!(mean < 0.1, "mean |corr| = {mean}");
    }

    #[test]
    fn tree_neighbors_correlate_more_than_strangers() {
        let spec = SynthSpec {
            subjects_per_class: 1,
            roi_count: 16,
            time_points: 4096,
            noise: 0.0,
            rewiring: 0.0,
            ..Default::default()
        };
        let s = generate_subject(&spec, 0, 0).unwrap();
        let c = pearson_correlation(&s.series).unwrap();
        let edges = truncated_tree_edges(2, 16);
        // couplings are signed, so compare magnitudes
        let adj_mean = edges.iter().map(|&(i, j)| c.at(i, j).abs()).sum::<f64>()
            / edges.len() as f64;
        let mut far_sum = 0.0;
        let mut far_count = 0;
        let is_edge = |i: usize, j: usize| edges.contains(&(i.min(j), i.max(j)));
        for i in 0..16 {
            for j in (i + 1)..16 {
                if !is_edge(i, j) {
                    far_sum += c.at(i, j).abs();
                    far_count += 1;
                }
            }
        }
        let far_mean = far_sum / far_count as f64;
        assert!(
            adj_mean > far_mean,
            "adjacent {adj_mean} vs non-adjacent {far_mean}"
        );
        // adjacent magnitudes track the coupling strength
        assert!((adj_mean - spec.coupling).abs() < 0.1, "adjacent {adj_mean}");
        // both signs appear among true couplings
        assert!(edges.iter().any(|&(i, j)| c.at(i, j) < -0.3));
        assert!(edges.iter().any(|&(i, j)| c.at(i, j) > 0.3));
    }

    #[test]
    fn degenerate_coupling_reports_helpful_error() {
        let spec = SynthSpec {
            subjects_per_class: 1,
            roi_count: 8,
            coupling: 1.0,
            rewiring: 0.0,
            ..Default::default()
        };
        let err = generate_subject(&spec, 0, 0).unwrap_err();
        assert!(err.to_string().contains("coupling"), "{err}");
    }

    #[test]
    fn two_node_tree_embeds_exactly() {
        for geometry in [EmbedGeometry::Hyperbolic { curvature: 1.0 }, EmbedGeometry::Euclidean] {
            let r = embed_tree_distortion(2, &[(0, 1)], geometry, 2, 400, 7).unwrap();
            assert!(
                r.average_distortion < 1e-3,
                "{geometry:?}: {}",
                r.average_distortion
            );
        }
    }

    #[test]
    fn path_graph_embeds_well_in_the_plane() {
        let edges: Vec<(usize, usize)> = (0..7).map(|i| (i, i + 1)).collect();
        let r = embed_tree_distortion(8, &edges, EmbedGeometry::Euclidean, 2, 1200, 11).unwrap();
        assert!(r.average_distortion < 0.05, "{}", r.average_distortion);
    }

    #[test]
    fn disconnected_input_rejected() {
        let err = embed_tree_distortion(4, &[(0, 1), (2, 3)], EmbedGeometry::Euclidean, 2, 10, 1)
            .unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn distortion_invariant_under_relabeling() {
        let (n, edges) = complete_tree_edges(2, 3);
        // relabel via i -> n-1-i
        let relabeled: Vec<(usize, usize)> = edges
            .iter()
            .map(|&(u, v)| {
                let (a, b) = (n - 1 - u, n - 1 - v);
                (a.min(b), a.max(b))
            })
            .collect();
        let a = embed_tree_distortion(n, &edges, EmbedGeometry::Euclidean, 2, 600, 5).unwrap();
        let b = embed_tree_distortion(n, &relabeled, EmbedGeometry::Euclidean, 2, 600, 5).unwrap();
        assert!(
            (a.average_distortion - b.average_distortion).abs() < 0.02,
            "{} vs {}",
            a.average_distortion,
            b.average_distortion
        );
    }
}
