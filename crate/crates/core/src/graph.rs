//! Subject-wise signed graph construction from ROI time series.
//!
//! Nodes are ROIs carrying their time series as features; edges come from
//! Pearson correlation, split by sign and sparsified per node to the top-k
//! strongest connections of each sign, then symmetrized by union.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rows with standard deviation below this are treated as constant and
/// correlate 0 with everything.
const DEGENERATE_STD: f64 = 1e-12;

/// One subject's ROI-averaged time series.
#[derive(Clone, Debug)]
pub struct SubjectTimeSeries {
    pub subject_id: String,
    /// Class index (0 = control, 1 = patient) when known.
    pub label: Option<usize>,
    /// N x T, one row per ROI.
    pub series: Tensor,
}

impl SubjectTimeSeries {
    pub fn new(subject_id: impl Into<String>, label: Option<usize>, series: Tensor) -> Result<Self> {
        if series.cols() < 3 {
            return Err(Error::InvalidInput(format!(
                "time series needs T >= 3 points, got {}",
                series.cols()
            )));
        }
        if !series.all_finite() {
            return Err(Error::InvalidInput("time series contains non-finite values".into()));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            label,
            series,
        })
    }

    pub fn roi_count(&self) -> usize {
        self.series.rows()
    }

    pub fn time_points(&self) -> usize {
        self.series.cols()
    }
}

/// A weighted undirected edge, stored once with `i < j`; the weight is the
/// correlation magnitude, in (0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Signed sparse functional-connectivity graph for one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedGraph {
    /// N x T node features (the time series, optionally z-scored).
    pub features: Tensor,
    pub pos_edges: Vec<Edge>,
    pub neg_edges: Vec<Edge>,
    pub label: Option<usize>,
}

/// Per-node neighbor lists derived from a [`SignedGraph`]; both directions
/// of every undirected edge.
#[derive(Clone, Debug, Default)]
pub struct Adjacency {
    pub pos: Vec<Vec<usize>>,
    pub neg: Vec<Vec<usize>>,
}

impl SignedGraph {
    pub fn node_count(&self) -> usize {
        self.features.rows()
    }

    pub fn adjacency(&self) -> Adjacency {
        let n = self.node_count();
        let mut adj = Adjacency {
            pos: vec![Vec::new(); n],
            neg: vec![Vec::new(); n],
        };
        for e in &self.pos_edges {
            adj.pos[e.i].push(e.j);
            adj.pos[e.j].push(e.i);
        }
        for e in &self.neg_edges {
            adj.neg[e.i].push(e.j);
            adj.neg[e.j].push(e.i);
        }
        for list in adj.pos.iter_mut().chain(adj.neg.iter_mut()) {
            list.sort_unstable();
        }
        adj
    }
}

/// Pearson correlation between all row pairs of an N x T matrix.
///
/// The diagonal is exactly 1; rows with (numerically) zero variance
/// correlate 0 with every other row instead of producing NaN.
pub fn pearson_correlation(series: &Tensor) -> Result<Tensor> {
    if series.cols() < 3 {
        return Err(Error::InvalidInput(format!(
            "pearson_correlation needs T >= 3, got {}",
            series.cols()
        )));
    }
    if !series.all_finite() {
        return Err(Error::InvalidInput(
            "pearson_correlation: non-finite input".into(),
        ));
    }
    let (n, t) = series.shape();
    // Center rows and precompute norms.
    let mut centered = vec![0.0; n * t];
    let mut norms = vec![0.0; n];
    for r in 0..n {
        let row = series.row_slice(r);
        let mean = row.iter().sum::<f64>() / t as f64;
        let dst = &mut centered[r * t..(r + 1) * t];
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = v - mean;
        }
        norms[r] = dst.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    let degenerate: Vec<bool> = norms
        .iter()
        .map(|&s| s / (t as f64 - 1.0).sqrt() < DEGENERATE_STD)
        .collect();

    let mut c = Tensor::zeros(n, n);
    for i in 0..n {
        c.set(i, i, 1.0);
        for j in (i + 1)..n {
            let value = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                let dot: f64 = centered[i * t..(i + 1) * t]
                    .iter()
                    .zip(&centered[j * t..(j + 1) * t])
                    .map(|(&a, &b)| a * b)
                    .sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            c.set(i, j, value);
            c.set(j, i, value);
        }
    }
    Ok(c)
}

/// Z-score each row in place; degenerate rows are left centered at zero.
pub fn zscore_rows(series: &mut Tensor) {
    let (n, t) = series.shape();
    for r in 0..n {
        let row = &mut series.data_mut()[r * t..(r + 1) * t];
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        let std = var.sqrt();
        if std < DEGENERATE_STD {
            for v in row.iter_mut() {
                *v -= mean;
            }
        } else {
            for v in row.iter_mut() {
                *v = (*v - mean) / std;
            }
        }
    }
}

/// Options for [`build_signed_graph`].
#[derive(Clone, Copy, Debug)]
pub struct GraphBuildOptions {
    /// Per-node, per-sign edge budget.
    pub k: usize,
    /// Z-score node features per row (the correlation itself is
    /// scale-invariant; the downstream network is not).
    pub zscore_features: bool,
}

impl Default for GraphBuildOptions {
    fn default() -> Self {
        Self {
            k: 10,
            zscore_features: true,
        }
    }
}

/// Build the signed sparse graph for one subject.
///
/// For each node the k largest strictly-positive entries of `max(C, 0)` and,
/// independently, of `max(-C, 0)` are selected (fewer when fewer exist);
/// the union of per-node selections is kept, so an edge survives if either
/// endpoint selected it. Ties break toward the lower column index.
pub fn build_signed_graph(subject: &SubjectTimeSeries, opts: GraphBuildOptions) -> Result<SignedGraph> {
    let corr = pearson_correlation(&subject.series)?;
    let mut features = subject.series.clone();
    if opts.zscore_features {
        zscore_rows(&mut features);
    }
    build_signed_graph_from_correlation(&corr, &features, subject.label, opts.k)
}

/// Core top-k selection given a precomputed correlation matrix.
pub fn build_signed_graph_from_correlation(
    corr: &Tensor,
    features: &Tensor,
    label: Option<usize>,
    k: usize,
) -> Result<SignedGraph> {
    let n = corr.rows();
    if corr.cols() != n {
        return Err(Error::BadShape {
            op: "build_signed_graph",
            expected: "square correlation matrix".into(),
            got: corr.shape_str(),
        });
    }
    if features.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "build_signed_graph",
            lhs: corr.shape_str(),
            rhs: features.shape_str(),
        });
    }
    if k == 0 || k >= n {
        return Err(Error::EdgeBudgetOutOfRange {
            context: "build_signed_graph".into(),
            k,
            n,
        });
    }

    let mut pos_keep = vec![false; n * n];
    let mut neg_keep = vec![false; n * n];
    for i in 0..n {
        select_top_k(corr, i, k, 1.0, &mut pos_keep);
        select_top_k(corr, i, k, -1.0, &mut neg_keep);
    }

    // Union symmetrization: an undirected edge survives if either endpoint
    // selected it.
    let mut pos_edges = Vec::new();
    let mut neg_edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if pos_keep[i * n + j] || pos_keep[j * n + i] {
                pos_edges.push(Edge {
                    i,
                    j,
                    w: corr.at(i, j),
                });
            }
            if neg_keep[i * n + j] || neg_keep[j * n + i] {
                neg_edges.push(Edge {
                    i,
                    j,
                    w: -corr.at(i, j),
                });
            }
        }
    }

    Ok(SignedGraph {
        features: features.clone(),
        pos_edges,
        neg_edges,
        label,
    })
}

/// Mark node i's k strongest strictly-positive entries of `sign * C[i, :]`
/// (j != i), ties broken by lower column index.
fn select_top_k(corr: &Tensor, i: usize, k: usize, sign: f64, keep: &mut [bool]) {
    let n = corr.rows();
    let mut candidates: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != i)
        .filter_map(|j| {
            let v = sign * corr.at(i, j);
            (v > 0.0).then_some((v, j))
        })
        .collect();
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, j) in candidates.iter().take(k) {
        keep[i * n + j] = true;
    }
}
