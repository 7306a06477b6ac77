//! Central-difference verification of tape gradients.
//!
//! The function under test is rebuilt from scratch for every perturbed
//! evaluation, so the check is independent of any state cached between
//! passes. Relative error is `|a-b| / max(|a|, |b|, 1e-8)`.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome for one named parameter block.
#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Coordinate (flat index) where the worst error occurred.
    pub worst_index: usize,
    pub pass: bool,
}

/// Full gradient-check report.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.blocks.iter().all(|b| b.pass)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare tape gradients of a scalar function against central differences.
///
/// `f` receives a fresh tape plus one leaf per parameter block (in the order
/// of `params`) and must return the scalar output handle.
pub fn check_gradients<F>(
    f: F,
    params: &[(&str, Tensor)],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    // Analytic gradients once.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let base: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut blocks = Vec::with_capacity(params.len());
    let mut overall: f64 = 0.0;

    for (bi, (name, tensor)) in params.iter().enumerate() {
        let analytic = grads.grad_or_zeros(vars[bi], tensor.rows(), tensor.cols());
        let mut max_rel = 0.0f64;
        let mut worst = 0usize;
        for i in 0..tensor.numel() {
            let mut plus = base.clone();
            plus[bi].data_mut()[i] += h;
            let mut minus = base.clone();
            minus[bi].data_mut()[i] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let rel = relative_error(analytic.data()[i], numeric);
            if rel > max_rel {
                max_rel = rel;
                worst = i;
            }
        }
        overall = overall.max(max_rel);
        blocks.push(BlockReport {
            name: (*name).to_string(),
            max_rel_err: max_rel,
            worst_index: worst,
            pass: max_rel < tol,
        });
    }

    Ok(GradCheckReport {
        blocks,
        max_rel_err: overall,
        tol,
    })
}
