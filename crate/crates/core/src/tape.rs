//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] is an append-only arena of nodes. Each recorded operation
//! computes its forward value eagerly and stores the operand handles needed
//! by the adjoint rule; [`Tape::backward`] replays the arena once in reverse,
//! accumulating gradients by summation over all uses of a handle.
//!
//! Broadcasting for the elementwise binary ops is limited to the cases the
//! model needs: equal shapes, scalar against anything, a column [N,1]
//! against [N,M], and a row [1,M] against [N,M].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{matmul_raw, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Sqrt(Var),
    Exp(Var),
    Log(Var),
    Cosh(Var),
    Sinh(Var),
    Arcosh(Var),
    Softplus(Var),
    Relu(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    AddConst { x: Var },
    MulConst { x: Var, c: f64 },
    Matmul(Var, Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    SumAxis0(Var),
    SumAxis1(Var),
    Reshape(Var),
    Slice { x: Var, r0: usize, r1: usize, c0: usize, c1: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { x: Var, idx: Arc<Vec<usize>> },
    ScatterAddRows { x: Var, idx: Arc<Vec<usize>> },
    SoftmaxSubsets { x: Var, groups: Arc<Vec<Vec<usize>>> },
    Select { mask: Var, a: Var, b: Var },
    LorentzInnerRows(Var, Var),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Sqrt(..) => "sqrt",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Cosh(..) => "cosh",
            Op::Sinh(..) => "sinh",
            Op::Arcosh(..) => "arcosh",
            Op::Softplus(..) => "softplus",
            Op::Relu(..) => "relu",
            Op::Clamp { .. } => "clamp",
            Op::AddConst { .. } => "add_const",
            Op::MulConst { .. } => "mul_const",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumAxis0(..) => "sum_axis0",
            Op::SumAxis1(..) => "sum_axis1",
            Op::Reshape(..) => "reshape",
            Op::Slice { .. } => "slice",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::ScatterAddRows { .. } => "scatter_add_rows",
            Op::SoftmaxSubsets { .. } => "softmax_subsets",
            Op::Select { .. } => "select",
            Op::LorentzInnerRows(..) => "lorentz_inner_rows",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients keyed by tape handle, produced by [`Tape::backward`].
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape when nothing flowed to it.
    pub fn grad_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Tensor {
        match self.grad(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(rows, cols),
        }
    }
}

/// Broadcast-aware read view: stride 0 along a dimension of size 1.
#[derive(Clone, Copy)]
struct BView<'a> {
    data: &'a [f64],
    rstride: usize,
    cstride: usize,
}

impl<'a> BView<'a> {
    fn of(t: &'a Tensor) -> Self {
        BView {
            data: t.data(),
            rstride: if t.rows() == 1 { 0 } else { t.cols() },
            cstride: if t.cols() == 1 { 0 } else { 1 },
        }
    }
}

/// Append-only record of a forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            check_finite: false,
        }
    }

    /// When enabled, every recorded op verifies its output is finite and
    /// fails with the op kind otherwise.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded ops of the given kind, e.g. `"arcosh"`.
    /// Used by structural assertions (a flat-geometry run must record none
    /// of the hyperbolic transcendentals).
    pub fn count_ops(&self, kind: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: op.kind() });
        }
        let id = self.nodes.len();
        self.nodes.push(Node { op, value });
        Ok(Var(id))
    }

    // ── Inputs ───────────────────────────────────────────────────────

    /// Record an input value. Leaves receive gradients like any other node;
    /// whether they are parameters is the caller's bookkeeping.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        Var(id)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Tensor::zeros(rows, cols))
    }

    // ── Elementwise binary ops with broadcasting ─────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast_zip("add", a, b, |x, y| x + y)?;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast_zip("sub", a, b, |x, y| x - y)?;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast_zip("mul", a, b, |x, y| x * y)?;
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.broadcast_zip("div", a, b, |x, y| x / y)?;
        self.push(Op::Div(a, b), v)
    }

    fn broadcast_zip(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let ta = self.value(a);
        let tb = self.value(b);
        let (rows, cols) = broadcast_shape(op, ta.shape(), tb.shape())?;
        // Fast path: identical shapes.
        if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            return Tensor::new(rows, cols, data);
        }
        let va = BView::of(ta);
        let vb = BView::of(tb);
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let ra = r * va.rstride;
            let rb = r * vb.rstride;
            match (va.cstride, vb.cstride) {
                (1, 1) => {
                    let sa = &va.data[ra..ra + cols];
                    let sb = &vb.data[rb..rb + cols];
                    data.extend(sa.iter().zip(sb).map(|(&x, &y)| f(x, y)));
                }
                (1, 0) => {
                    let y = vb.data[rb];
                    data.extend(va.data[ra..ra + cols].iter().map(|&x| f(x, y)));
                }
                (0, 1) => {
                    let x = va.data[ra];
                    data.extend(vb.data[rb..rb + cols].iter().map(|&y| f(x, y)));
                }
                (0, 0) => data.push(f(va.data[ra], vb.data[rb])),
                _ => unreachable!(),
            }
        }
        Tensor::new(rows, cols, data)
    }

    // ── Elementwise unary ops ────────────────────────────────────────

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| -a);
        self.push(Op::Neg(x), v)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::sqrt);
        self.push(Op::Sqrt(x), v)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), v)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::ln);
        self.push(Op::Log(x), v)
    }

    pub fn cosh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::cosh);
        self.push(Op::Cosh(x), v)
    }

    pub fn sinh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::sinh);
        self.push(Op::Sinh(x), v)
    }

    pub fn arcosh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::acosh);
        self.push(Op::Arcosh(x), v)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(softplus);
        self.push(Op::Softplus(x), v)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(Op::Relu(x), v)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a.clamp(lo, hi));
        self.push(Op::Clamp { x, lo, hi }, v)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a + c);
        self.push(Op::AddConst { x }, v)
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a * c);
        self.push(Op::MulConst { x, c }, v)
    }

    // ── Linear algebra ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::Matmul(a, b), v)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).transpose();
        self.push(Op::Transpose(x), v)
    }

    // ── Reductions ───────────────────────────────────────────────────

    /// Sum of all entries, producing a 1x1 scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(Op::Sum(x), v)
    }

    /// Mean of all entries, producing a 1x1 scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64);
        self.push(Op::Mean(x), v)
    }

    /// Column sums: [N,M] -> [1,M].
    pub fn sum_axis0(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.shape();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, &v) in out.iter_mut().zip(t.row_slice(r)) {
                *o += v;
            }
        }
        let v = Tensor::new(1, cols, out)?;
        self.push(Op::SumAxis0(x), v)
    }

    /// Row sums: [N,M] -> [N,1].
    pub fn sum_axis1(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, _) = t.shape();
        let data: Vec<f64> = (0..rows).map(|r| t.row_slice(r).iter().sum()).collect();
        let v = Tensor::new(rows, 1, data)?;
        self.push(Op::SumAxis1(x), v)
    }

    /// Column means: [N,M] -> [1,M].
    pub fn mean_axis0(&mut self, x: Var) -> Result<Var> {
        let rows = self.shape(x).0;
        let s = self.sum_axis0(x)?;
        self.mul_const(s, 1.0 / rows as f64)
    }

    // ── Shape ops ────────────────────────────────────────────────────

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x);
        if t.numel() != rows * cols {
            return Err(Error::BadShape {
                op: "reshape",
                expected: format!("{} elements", rows * cols),
                got: t.shape_str(),
            });
        }
        let v = Tensor::new(rows, cols, t.data().to_vec())?;
        self.push(Op::Reshape(x), v)
    }

    /// Rectangular slice, rows `r0..r1` and cols `c0..c1`.
    pub fn slice(&mut self, x: Var, r0: usize, r1: usize, c0: usize, c1: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.shape();
        if r1 > rows || c1 > cols || r0 >= r1 || c0 >= c1 {
            return Err(Error::BadShape {
                op: "slice",
                expected: format!("ranges within {}", t.shape_str()),
                got: format!("rows {r0}..{r1}, cols {c0}..{c1}"),
            });
        }
        let mut data = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for r in r0..r1 {
            data.extend_from_slice(&t.row_slice(r)[c0..c1]);
        }
        let v = Tensor::new(r1 - r0, c1 - c0, data)?;
        self.push(Op::Slice { x, r0, r1, c0, c1 }, v)
    }

    pub fn slice_cols(&mut self, x: Var, c0: usize, c1: usize) -> Result<Var> {
        let rows = self.shape(x).0;
        self.slice(x, 0, rows, c0, c1)
    }

    pub fn slice_rows(&mut self, x: Var, r0: usize, r1: usize) -> Result<Var> {
        let cols = self.shape(x).1;
        self.slice(x, r0, r1, 0, cols)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidInput("concat_cols: no inputs".into()));
        }
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: format!("[{rows}x_]"),
                    rhs: self.value(p).shape_str(),
                });
            }
            cols += c;
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let v = Tensor::new(rows, cols, data)?;
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidInput("concat_rows: no inputs".into()));
        }
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: format!("[_x{cols}]"),
                    rhs: self.value(p).shape_str(),
                });
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(rows, cols, data)?;
        self.push(Op::ConcatRows(parts.to_vec()), v)
    }

    // ── Indexed ops ──────────────────────────────────────────────────

    /// Select rows by index; indices may repeat. Backward scatter-adds.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.shape();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::BadShape {
                op: "gather_rows",
                expected: format!("indices < {rows}"),
                got: format!("{bad}"),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            data.extend_from_slice(t.row_slice(i));
        }
        let v = Tensor::new(idx.len(), cols, data)?;
        self.push(Op::GatherRows { x, idx }, v)
    }

    /// `out[idx[e], :] += x[e, :]` into a fresh [out_rows, M] tensor.
    pub fn scatter_add_rows(
        &mut self,
        x: Var,
        idx: Arc<Vec<usize>>,
        out_rows: usize,
    ) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.shape();
        if rows != idx.len() {
            return Err(Error::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: t.shape_str(),
                rhs: format!("{} indices", idx.len()),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= out_rows) {
            return Err(Error::BadShape {
                op: "scatter_add_rows",
                expected: format!("indices < {out_rows}"),
                got: format!("{bad}"),
            });
        }
        let mut out = Tensor::zeros(out_rows, cols);
        for (e, &i) in idx.iter().enumerate() {
            let src = t.row_slice(e);
            let dst = &mut out.data_mut()[i * cols..(i + 1) * cols];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        self.push(Op::ScatterAddRows { x, idx }, out)
    }

    /// Softmax restricted to disjoint subsets of flat element indices.
    ///
    /// Every entry inside a subset is normalized against that subset only;
    /// entries in no subset map to 0. Singleton subsets produce exactly 1.0
    /// and an empty subset list is legal, so degenerate neighborhoods never
    /// produce NaN.
    pub fn softmax_subsets(&mut self, x: Var, groups: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let t = self.value(x);
        let n = t.numel();
        for g in groups.iter() {
            if let Some(&bad) = g.iter().find(|&&i| i >= n) {
                return Err(Error::BadShape {
                    op: "softmax_subsets",
                    expected: format!("indices < {n}"),
                    got: format!("{bad}"),
                });
            }
        }
        debug_assert!(
            {
                let mut seen = vec![false; n];
                groups
                    .iter()
                    .flatten()
                    .all(|&i| !std::mem::replace(&mut seen[i], true))
            },
            "softmax_subsets: subsets must be disjoint"
        );
        let (rows, cols) = t.shape();
        let mut out = vec![0.0; n];
        let src = t.data();
        for g in groups.iter() {
            if g.is_empty() {
                continue;
            }
            let m = g.iter().map(|&i| src[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &i in g {
                let e = (src[i] - m).exp();
                out[i] = e;
                z += e;
            }
            for &i in g {
                out[i] /= z;
            }
        }
        let v = Tensor::new(rows, cols, out)?;
        self.push(Op::SoftmaxSubsets { x, groups }, v)
    }

    /// Elementwise select: `mask > 0` picks `a`, otherwise `b`. The mask is
    /// a routing signal and receives no gradient.
    pub fn select(&mut self, mask: Var, a: Var, b: Var) -> Result<Var> {
        let (tm, ta, tb) = (self.value(mask), self.value(a), self.value(b));
        if tm.shape() != ta.shape() || ta.shape() != tb.shape() {
            return Err(Error::ShapeMismatch {
                op: "select",
                lhs: ta.shape_str(),
                rhs: format!("{} / mask {}", tb.shape_str(), tm.shape_str()),
            });
        }
        let data = tm
            .data()
            .iter()
            .zip(ta.data().iter().zip(tb.data()))
            .map(|(&m, (&x, &y))| if m > 0.0 { x } else { y })
            .collect();
        let v = Tensor::new(ta.rows(), ta.cols(), data)?;
        self.push(Op::Select { mask, a, b }, v)
    }

    /// Row-wise Minkowski inner product `-x0*y0 + sum_i xi*yi`.
    ///
    /// Shapes [N,M] x [N,M] -> [N,1]; either side may have a single row,
    /// which is then paired against every row of the other.
    pub fn lorentz_inner_rows(&mut self, x: Var, y: Var) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        let (xr, xc) = tx.shape();
        let (yr, yc) = ty.shape();
        if xc != yc || xc < 2 || (xr != yr && xr != 1 && yr != 1) {
            return Err(Error::ShapeMismatch {
                op: "lorentz_inner_rows",
                lhs: tx.shape_str(),
                rhs: ty.shape_str(),
            });
        }
        let rows = xr.max(yr);
        let data: Vec<f64> = (0..rows)
            .map(|r| {
                let a = tx.row_slice(if xr == 1 { 0 } else { r });
                let b = ty.row_slice(if yr == 1 { 0 } else { r });
                minkowski_dot(a, b)
            })
            .collect();
        let v = Tensor::new(rows, 1, data)?;
        self.push(Op::LorentzInnerRows(x, y), v)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Visits every node exactly once in
    /// reverse topological order; replaying the same tape yields bit-identical
    /// gradients.
    pub fn backward(&self, loss: Var) -> Result<GradientMap> {
        let loss_t = self.value(loss);
        if !loss_t.is_scalar() {
            return Err(Error::NonScalarLoss {
                got: loss_t.shape_str(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(GradientMap { grads })
    }

    fn backward_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum_reduce(grads, *a, g, 1.0);
                self.accum_reduce(grads, *b, g, 1.0);
            }
            Op::Sub(a, b) => {
                self.accum_reduce(grads, *a, g, 1.0);
                self.accum_reduce(grads, *b, g, -1.0);
            }
            Op::Mul(a, b) => {
                self.accum_scaled_by(grads, *a, *b, g);
                self.accum_scaled_by(grads, *b, *a, g);
            }
            Op::Div(a, b) => {
                // d/da (a/b) = 1/b ; d/db (a/b) = -a/b^2
                self.accum_pair(grads, *a, *a, *b, g, |_av, bv, gi| gi / bv);
                self.accum_pair(grads, *b, *a, *b, g, |av, bv, gi| -gi * av / (bv * bv));
            }
            Op::Neg(x) => self.accum_map(grads, *x, g, |_xv, gi| -gi),
            Op::Sqrt(x) => {
                let out = &node.value;
                self.accum_with(grads, *x, g, |i, gi| {
                    if gi == 0.0 {
                        0.0
                    } else {
                        gi / (2.0 * out.data()[i])
                    }
                });
            }
            Op::Exp(x) => {
                let out = &node.value;
                self.accum_with(grads, *x, g, |i, gi| gi * out.data()[i]);
            }
            Op::Log(x) => self.accum_map(grads, *x, g, |xv, gi| {
                if gi == 0.0 {
                    0.0
                } else {
                    gi / xv
                }
            }),
            Op::Cosh(x) => self.accum_map(grads, *x, g, |xv, gi| gi * xv.sinh()),
            Op::Sinh(x) => self.accum_map(grads, *x, g, |xv, gi| gi * xv.cosh()),
            Op::Arcosh(x) => self.accum_map(grads, *x, g, |xv, gi| {
                if gi == 0.0 {
                    0.0
                } else {
                    gi / (xv * xv - 1.0).sqrt()
                }
            }),
            Op::Softplus(x) => self.accum_map(grads, *x, g, |xv, gi| gi * sigmoid(xv)),
            Op::Relu(x) => self.accum_map(grads, *x, g, |xv, gi| if xv >= 0.0 { gi } else { 0.0 }),
            // Straight-through-zero outside the active range; at the boundary
            // the interior one-sided value (pass-through) applies.
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                self.accum_map(grads, *x, g, move |xv, gi| {
                    if xv >= lo && xv <= hi {
                        gi
                    } else {
                        0.0
                    }
                });
            }
            Op::AddConst { x, .. } => self.accum_reduce(grads, *x, g, 1.0),
            Op::MulConst { x, c } => self.accum_reduce(grads, *x, g, *c),
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.shape();
                let n = tb.cols();
                // dA = g @ B^T, dB = A^T @ g
                let bt = tb.transpose();
                let da = matmul_raw(g.data(), bt.data(), m, n, k);
                let at = ta.transpose();
                let db = matmul_raw(at.data(), g.data(), k, m, n);
                accum(grads, *a, da);
                accum(grads, *b, db);
            }
            Op::Transpose(x) => accum(grads, *x, g.transpose()),
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                accum(grads, *x, Tensor::full(r, c, g.data()[0]));
            }
            Op::Mean(x) => {
                let (r, c) = self.shape(*x);
                accum(grads, *x, Tensor::full(r, c, g.data()[0] / (r * c) as f64));
            }
            Op::SumAxis0(x) => {
                let (r, c) = self.shape(*x);
                let mut d = Vec::with_capacity(r * c);
                for _ in 0..r {
                    d.extend_from_slice(g.data());
                }
                accum(grads, *x, Tensor::new(r, c, d).expect("sum_axis0 grad"));
            }
            Op::SumAxis1(x) => {
                let (r, c) = self.shape(*x);
                let mut d = Vec::with_capacity(r * c);
                for row in 0..r {
                    d.extend(std::iter::repeat(g.data()[row]).take(c));
                }
                accum(grads, *x, Tensor::new(r, c, d).expect("sum_axis1 grad"));
            }
            Op::Reshape(x) => {
                let (r, c) = self.shape(*x);
                accum(
                    grads,
                    *x,
                    Tensor::new(r, c, g.data().to_vec()).expect("reshape grad"),
                );
            }
            Op::Slice { x, r0, r1, c0, c1 } => {
                let (r, c) = self.shape(*x);
                let slot = grads[x.index()].get_or_insert_with(|| Tensor::zeros(r, c));
                for (gr, row) in (*r0..*r1).enumerate() {
                    let src = g.row_slice(gr);
                    let dst = &mut slot.data_mut()[row * c + c0..row * c + c1];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    let slot = grads[p.index()].get_or_insert_with(|| Tensor::zeros(pr, pc));
                    for r in 0..pr {
                        let src = &g.row_slice(r)[c0..c0 + pc];
                        let dst = &mut slot.data_mut()[r * pc..(r + 1) * pc];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    c0 += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut r0 = 0;
                for &p in parts {
                    let (pr, pc) = self.shape(p);
                    let d = g.data()[r0 * pc..(r0 + pr) * pc].to_vec();
                    accum(grads, p, Tensor::new(pr, pc, d).expect("concat_rows grad"));
                    r0 += pr;
                }
            }
            Op::GatherRows { x, idx } => {
                let (r, c) = self.shape(*x);
                let slot = grads[x.index()].get_or_insert_with(|| Tensor::zeros(r, c));
                for (e, &i) in idx.iter().enumerate() {
                    let src = g.row_slice(e);
                    let dst = &mut slot.data_mut()[i * c..(i + 1) * c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            Op::ScatterAddRows { x, idx } => {
                let (r, c) = self.shape(*x);
                let mut d = Vec::with_capacity(r * c);
                for &i in idx.iter() {
                    d.extend_from_slice(g.row_slice(i));
                }
                accum(grads, *x, Tensor::new(r, c, d).expect("scatter grad"));
            }
            Op::SoftmaxSubsets { x, groups } => {
                let w = node.value.data();
                let (r, c) = self.shape(*x);
                let mut d = vec![0.0; r * c];
                for grp in groups.iter() {
                    let dot: f64 = grp.iter().map(|&i| w[i] * g.data()[i]).sum();
                    for &i in grp {
                        d[i] = w[i] * (g.data()[i] - dot);
                    }
                }
                accum(grads, *x, Tensor::new(r, c, d).expect("softmax grad"));
            }
            Op::Select { mask, a, b } => {
                let tm = self.value(*mask);
                self.accum_with(grads, *a, g, |i, gi| if tm.data()[i] > 0.0 { gi } else { 0.0 });
                self.accum_with(grads, *b, g, |i, gi| if tm.data()[i] > 0.0 { 0.0 } else { gi });
            }
            Op::LorentzInnerRows(x, y) => {
                self.accum_lorentz_side(grads, *x, self.value(*y), g);
                self.accum_lorentz_side(grads, *y, self.value(*x), g);
            }
        }
    }

    /// Adjoint of one side of `lorentz_inner_rows`: d_x[r] += g[r] * J other[r].
    fn accum_lorentz_side(
        &self,
        grads: &mut [Option<Tensor>],
        side: Var,
        other: &Tensor,
        g: &Tensor,
    ) {
        let (sr, sc) = self.shape(side);
        let or = other.rows();
        let slot = grads[side.index()].get_or_insert_with(|| Tensor::zeros(sr, sc));
        let rows = g.rows();
        for r in 0..rows {
            let gi = g.data()[r];
            if gi == 0.0 {
                continue;
            }
            let orow = other.row_slice(if or == 1 { 0 } else { r });
            let srow0 = (if sr == 1 { 0 } else { r }) * sc;
            let dst = &mut slot.data_mut()[srow0..srow0 + sc];
            dst[0] -= gi * orow[0];
            for (d, &o) in dst[1..].iter_mut().zip(&orow[1..]) {
                *d += gi * o;
            }
        }
    }

    /// Accumulate `sign * g` into the gradient of a possibly-broadcast
    /// operand, reducing over broadcast dimensions.
    fn accum_reduce(&self, grads: &mut [Option<Tensor>], target: Var, g: &Tensor, sign: f64) {
        let (tr, tc) = self.shape(target);
        let (gr, gc) = g.shape();
        let slot = grads[target.index()].get_or_insert_with(|| Tensor::zeros(tr, tc));
        if (tr, tc) == (gr, gc) {
            for (d, &s) in slot.data_mut().iter_mut().zip(g.data()) {
                *d += sign * s;
            }
            return;
        }
        let srs = if tr == 1 { 0 } else { tc };
        let scs = if tc == 1 { 0 } else { 1 };
        for r in 0..gr {
            let grow = g.row_slice(r);
            let so = r * srs;
            if scs == 1 {
                let dst = &mut slot.data_mut()[so..so + gc];
                for (d, &s) in dst.iter_mut().zip(grow) {
                    *d += sign * s;
                }
            } else {
                slot.data_mut()[so] += sign * grow.iter().sum::<f64>();
            }
        }
    }

    /// Product-rule accumulation: d_target += g * value(other), with both
    /// operands possibly broadcast.
    fn accum_scaled_by(&self, grads: &mut [Option<Tensor>], target: Var, other: Var, g: &Tensor) {
        let (tr, tc) = self.shape(target);
        let (gr, gc) = g.shape();
        let vo = BView::of(self.value(other));
        let slot = grads[target.index()].get_or_insert_with(|| Tensor::zeros(tr, tc));
        let srs = if tr == 1 { 0 } else { tc };
        let scs = if tc == 1 { 0 } else { 1 };
        for r in 0..gr {
            let grow = g.row_slice(r);
            let so = r * srs;
            let oo = r * vo.rstride;
            match (scs, vo.cstride) {
                (1, 1) => {
                    let orow = &vo.data[oo..oo + gc];
                    let dst = &mut slot.data_mut()[so..so + gc];
                    for ((d, &s), &o) in dst.iter_mut().zip(grow).zip(orow) {
                        *d += s * o;
                    }
                }
                (1, 0) => {
                    let ov = vo.data[oo];
                    let dst = &mut slot.data_mut()[so..so + gc];
                    for (d, &s) in dst.iter_mut().zip(grow) {
                        *d += s * ov;
                    }
                }
                (0, 1) => {
                    let orow = &vo.data[oo..oo + gc];
                    let acc: f64 = grow.iter().zip(orow).map(|(&s, &o)| s * o).sum();
                    slot.data_mut()[so] += acc;
                }
                (0, 0) => {
                    let ov = vo.data[oo];
                    slot.data_mut()[so] += ov * grow.iter().sum::<f64>();
                }
                _ => unreachable!(),
            }
        }
    }

    /// Accumulation where the adjoint needs both operand values (division).
    fn accum_pair(
        &self,
        grads: &mut [Option<Tensor>],
        target: Var,
        a: Var,
        b: Var,
        g: &Tensor,
        f: impl Fn(f64, f64, f64) -> f64,
    ) {
        let (tr, tc) = self.shape(target);
        let gr = g.rows();
        let va = BView::of(self.value(a));
        let vb = BView::of(self.value(b));
        let slot = grads[target.index()].get_or_insert_with(|| Tensor::zeros(tr, tc));
        let srs = if tr == 1 { 0 } else { tc };
        let scs = if tc == 1 { 0 } else { 1 };
        for r in 0..gr {
            let grow = g.row_slice(r);
            let (ao, bo, so) = (r * va.rstride, r * vb.rstride, r * srs);
            for (c, &gi) in grow.iter().enumerate() {
                if gi == 0.0 {
                    continue;
                }
                let av = va.data[ao + c * va.cstride];
                let bv = vb.data[bo + c * vb.cstride];
                slot.data_mut()[so + c * scs] += f(av, bv, gi);
            }
        }
    }

    /// Accumulate `f(x_value, g)` elementwise into the gradient of `x`,
    /// where `x` has the same shape as the output.
    fn accum_map(
        &self,
        grads: &mut [Option<Tensor>],
        x: Var,
        g: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) {
        let tx = self.value(x);
        let (r, c) = tx.shape();
        let slot = grads[x.index()].get_or_insert_with(|| Tensor::zeros(r, c));
        for ((d, &xv), &gi) in slot
            .data_mut()
            .iter_mut()
            .zip(tx.data())
            .zip(g.data())
        {
            *d += f(xv, gi);
        }
    }

    /// Accumulate `f(flat_index, g)` elementwise (same-shape as output).
    fn accum_with(
        &self,
        grads: &mut [Option<Tensor>],
        x: Var,
        g: &Tensor,
        f: impl Fn(usize, f64) -> f64,
    ) {
        let (r, c) = self.shape(x);
        let slot = grads[x.index()].get_or_insert_with(|| Tensor::zeros(r, c));
        for (i, (d, &gi)) in slot.data_mut().iter_mut().zip(g.data()).enumerate() {
            *d += f(i, gi);
        }
    }
}

fn accum(grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
    match &mut grads[v.index()] {
        Some(t) => t.add_assign(&delta).expect("gradient shape invariant"),
        slot @ None => *slot = Some(delta),
    }
}

fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    let ok = |x: usize, y: usize| x == y || x == 1 || y == 1;
    if ok(a.0, b.0) && ok(a.1, b.1) {
        Ok((a.0.max(b.0), a.1.max(b.1)))
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: format!("[{}x{}]", a.0, a.1),
            rhs: format!("[{}x{}]", b.0, b.1),
        })
    }
}

pub(crate) fn minkowski_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let spatial: f64 = a[1..].iter().zip(&b[1..]).map(|(&x, &y)| x * y).sum();
    spatial - a[0] * b[0]
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_grad(g: &GradientMap, v: Var) -> f64 {
        g.grad(v).unwrap().item().unwrap()
    }

    #[test]
    fn add_elementwise() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::row(&[1.0, 2.0]));
        let b = t.leaf(Tensor::row(&[3.0, 4.0]));
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn arcosh_of_one_is_zero() {
        let mut t = Tape::new();
        let x = t.scalar(1.0);
        let y = t.arcosh(x).unwrap();
        assert_eq!(t.value(y).item().unwrap(), 0.0);
    }

    #[test]
    fn square_gradient() {
        // loss = x^2 at x = 3 -> dloss/dx = 6
        let mut t = Tape::new();
        let x = t.scalar(3.0);
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(scalar_grad(&g, x), 6.0);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        // sum(softmax(v)) == 1 identically, so the gradient vanishes.
        let mut t = Tape::new();
        let v = t.leaf(Tensor::row(&[0.3, -1.2, 2.0, 0.0]));
        let groups = Arc::new(vec![vec![0, 1, 2, 3]]);
        let w = t.softmax_subsets(v, groups).unwrap();
        let s = t.sum(w).unwrap();
        let g = t.backward(s).unwrap();
        for &gi in g.grad(v).unwrap().data() {
            assert!(gi.abs() < 1e-15, "expected zero gradient, got {gi}");
        }
    }

    #[test]
    fn clamped_region_kills_gradient() {
        // loss = arcosh(clamp(x, 1+eps, inf)) at x = 0.5 -> grad 0
        let mut t = Tape::new();
        let x = t.scalar(0.5);
        let c = t.clamp(x, 1.0 + 1e-12, f64::INFINITY).unwrap();
        let y = t.arcosh(c).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(scalar_grad(&g, x), 0.0);
    }

    #[test]
    fn gradient_accumulates_over_uses() {
        // loss = x + x has gradient 2, twice the single-use gradient.
        let mut t = Tape::new();
        let x = t.scalar(1.5);
        let y = t.add(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(scalar_grad(&g, x), 2.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn backward_is_deterministic() {
        let build = || {
            let mut t = Tape::new();
            let a = t.leaf(Tensor::row(&[0.7, -0.3, 1.1]));
            let b = t.leaf(Tensor::row(&[0.2, 0.9, -2.0]));
            let c = t.mul(a, b).unwrap();
            let d = t.exp(c).unwrap();
            let e = t.sum(d).unwrap();
            let g = t.backward(e).unwrap();
            (
                g.grad(a).unwrap().data().to_vec(),
                g.grad(b).unwrap().data().to_vec(),
            )
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn matmul_identity_forward() {
        let mut t = Tape::new();
        let i2 = t.leaf(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let m = t.leaf(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let p = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(p).data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut t = Tape::new();
        let a = t.zeros(2, 3);
        let b = t.zeros(4, 5);
        let err = t.add(a, b).unwrap_err().to_string();
        assert!(
            err.contains("add") && err.contains("[2x3]") && err.contains("[4x5]"),
            "{err}"
        );
    }

    #[test]
    fn gather_scatter_roundtrip_gradients() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let idx = Arc::new(vec![1usize, 0, 1]);
        let gth = t.gather_rows(x, idx.clone()).unwrap();
        assert_eq!(t.value(gth).data(), &[3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        let back = t.scatter_add_rows(gth, idx, 2).unwrap();
        // row0 appears once, row1 twice
        assert_eq!(t.value(back).data(), &[1.0, 2.0, 6.0, 8.0]);
        let s = t.sum(back).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn softmax_subsets_normalizes_groups_and_zeroes_rest() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 1.0, 5.0, 9.0]));
        let groups = Arc::new(vec![vec![0, 1], vec![3]]);
        let w = t.softmax_subsets(x, groups).unwrap();
        let out = t.value(w).data();
        assert!((out[0] - 0.5).abs() < 1e-15);
        assert!((out[1] - 0.5).abs() < 1e-15);
        assert_eq!(out[2], 0.0);
        assert_eq!(out[3], 1.0);
    }

    #[test]
    fn finite_check_mode_flags_nan() {
        let mut t = Tape::new();
        t.set_check_finite(true);
        let x = t.scalar(-1.0);
        let err = t.sqrt(x).unwrap_err();
        assert!(err.to_string().contains("sqrt"), "{err}");
    }

    #[test]
    fn select_routes_gradient_by_mask_sign() {
        let mut t = Tape::new();
        let mask = t.leaf(Tensor::row(&[1.0, -1.0]));
        let a = t.leaf(Tensor::row(&[10.0, 20.0]));
        let b = t.leaf(Tensor::row(&[30.0, 40.0]));
        let s = t.select(mask, a, b).unwrap();
        assert_eq!(t.value(s).data(), &[10.0, 40.0]);
        let l = t.sum(s).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[0.0, 1.0]);
        assert!(g.grad(mask).is_none());
    }

    #[test]
    fn broadcast_col_times_matrix() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::col(&[2.0, 3.0]));
        let m = t.leaf(Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap());
        let p = t.mul(w, m).unwrap();
        assert_eq!(t.value(p).data(), &[2.0, 2.0, 3.0, 3.0]);
        let s = t.sum(p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn lorentz_inner_rows_values_and_broadcast() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![2.0, 1.0, 1.0]]).unwrap());
        let y = t.leaf(Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![3.0, 2.0, 2.0]]).unwrap());
        let p = t.lorentz_inner_rows(x, y).unwrap();
        assert_eq!(t.value(p).data(), &[-1.0, -2.0]);

        let o = t.leaf(Tensor::row(&[1.0, 0.0, 0.0]));
        let q = t.lorentz_inner_rows(o, y).unwrap();
        assert_eq!(t.value(q).data(), &[-1.0, -3.0]);
    }
}
