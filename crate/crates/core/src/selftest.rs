//! Geometry and gradient property suites, shared between the CLI self-test
//! command and the acceptance tests. Every suite is deterministic for a
//! fixed seed and reports its worst observed error.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::gradcheck::check_gradients;
use crate::graph::{Edge, SignedGraph};
use crate::manifold::{
    self, distance_rows, exp_map_rows, log_map_rows, random_point, random_tangent,
};
use crate::model::{forward_loss, ModelConfig, ModelParams, PreparedGraph};
use crate::readout::{frechet_objective, karcher_flow, KarcherInit};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Outcome of one property suite.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub pass: bool,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub seconds: f64,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &str, cases: usize, max_error: f64, tolerance: f64, t0: Instant) -> Self {
        Self {
            name: name.into(),
            pass: max_error < tolerance,
            cases,
            max_error,
            tolerance,
            seconds: t0.elapsed().as_secs_f64(),
            detail: format!("max error {max_error:.3e} over {cases} cases (tol {tolerance:.1e})"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
    pub pass: bool,
}

/// Exp/log round trip: 1000 random (x, v) per curvature in {0.5, 1, 2} with
/// |v|_L <= 3 must satisfy `|log_x(exp_x(v)) - v|_inf < 1e-6`.
pub fn suite_exp_log_roundtrip(seed: u64) -> Result<SuiteResult> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &kval in &[0.5, 1.0, 2.0] {
        let mut t = Tape::new();
        let k = t.scalar(kval);
        for _ in 0..1000 {
            let x = random_point(&mut t, k, 6, 1.0, &mut rng)?;
            let norm = rng.gen_range(1e-4..3.0);
            let v = random_tangent(&mut t, &x, norm, &mut rng)?;
            let y = manifold::exp_map(&mut t, &x, &v)?;
            let back = manifold::log_map(&mut t, &x, &y)?;
            let diff = t.value(v.coords).max_abs_diff(t.value(back.coords));
            worst = worst.max(diff);
            cases += 1;
        }
    }
    Ok(SuiteResult::new("exp_log_roundtrip", cases, worst, 1e-6, t0))
}

/// Norm identity on 1000 random pairs: `|log_x(y)|_L = sqrt(K) d_K(x,y)`
/// within 1e-8.
pub fn suite_log_norm_identity(seed: u64) -> Result<SuiteResult> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &kval in &[0.5, 1.0, 2.0] {
        let mut t = Tape::new();
        let k = t.scalar(kval);
        for _ in 0..334 {
            let x = random_point(&mut t, k, 6, 1.0, &mut rng)?;
            let y = random_point(&mut t, k, 6, 1.0, &mut rng)?;
            let v = manifold::log_map(&mut t, &x, &y)?;
            let n = manifold::tangent_norm(&mut t, &v)?;
            let d = manifold::geodesic_distance(&mut t, &x, &y)?;
            let lhs = t.value(n).item()?;
            let rhs = kval.sqrt() * t.value(d).item()?;
            worst = worst.max((lhs - rhs).abs());
            cases += 1;
        }
    }
    Ok(SuiteResult::new("log_norm_identity", cases, worst, 1e-8, t0))
}

/// Parallel transport: inner products preserved within 1e-8, transported
/// vectors tangent at the target within 1e-9, and transporting back
/// recovers the input within 1e-7. The reported error is the worst ratio of
/// observed error to its own tolerance (pass below 1).
pub fn suite_transport(seed: u64) -> Result<SuiteResult> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x22);
    let mut worst_ratio = 0.0f64;
    let mut detail = (0.0f64, 0.0f64, 0.0f64);
    let mut cases = 0;
    let mut t = Tape::new();
    let k = t.scalar(1.0);
    for _ in 0..500 {
        let x = random_point(&mut t, k, 6, 1.0, &mut rng)?;
        let y = random_point(&mut t, k, 6, 1.0, &mut rng)?;
        let u = random_tangent(&mut t, &x, rng.gen_range(0.1..2.0), &mut rng)?;
        let v = random_tangent(&mut t, &x, rng.gen_range(0.1..2.0), &mut rng)?;
        let uv = t.lorentz_inner_rows(u.coords, v.coords)?;
        let tu = manifold::parallel_transport(&mut t, &x, &y, &u)?;
        let tv = manifold::parallel_transport(&mut t, &x, &y, &v)?;
        let tuv = t.lorentz_inner_rows(tu.coords, tv.coords)?;
        let iso = (t.value(uv).item()? - t.value(tuv).item()?).abs();

        let tan = t.lorentz_inner_rows(tu.coords, y.coords)?;
        let tan = t.value(tan).item()?.abs();

        let back = manifold::parallel_transport(&mut t, &y, &x, &tu)?;
        let rt = t.value(u.coords).max_abs_diff(t.value(back.coords));

        detail = (detail.0.max(iso), detail.1.max(tan), detail.2.max(rt));
        worst_ratio = worst_ratio.max(iso / 1e-8).max(tan / 1e-9).max(rt / 1e-7);
        cases += 1;
    }
    let mut r = SuiteResult::new("transport_isometry", cases, worst_ratio, 1.0, t0);
    r.detail = format!(
        "isometry {:.2e} (tol 1e-8), tangency {:.2e} (tol 1e-9), roundtrip {:.2e} (tol 1e-7)",
        detail.0, detail.1, detail.2
    );
    Ok(r)
}

/// Karcher flow: the Fréchet objective is non-increasing across 5 iterations
/// at step 0.1 on 100 random 10-point clouds (any rise above 1e-10 fails).
pub fn suite_karcher_monotone(seed: u64) -> Result<SuiteResult> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x33);
    let mut worst_rise = 0.0f64;
    let mut cases = 0;
    for trial in 0..100 {
        let mut t = Tape::new();
        let k = t.scalar(1.0);
        let dim = 2 + (trial % 7); // d <= 8
        let raw = Tensor::new(
            10,
            dim + 1,
            (0..10 * (dim + 1))
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )?;
        let leaf = t.leaf(raw);
        let pts = manifold::project_rows(&mut t, leaf, k)?;

        let mean = t.mean_axis0(pts)?;
        let mut mu = manifold::project_rows(&mut t, mean, k)?;
        let obj = frechet_objective(&mut t, mu, pts, k)?;
        let mut prev = t.value(obj).item()?;
        for _ in 0..5 {
            let logs = log_map_rows(&mut t, mu, pts, k)?;
            let v = t.mean_axis0(logs)?;
            let step = t.mul_const(v, 0.1)?;
            mu = exp_map_rows(&mut t, mu, step, k)?;
            let obj = frechet_objective(&mut t, mu, pts, k)?;
            let now = t.value(obj).item()?;
            worst_rise = worst_rise.max(now - prev);
            prev = now;
        }
        cases += 1;
    }
    Ok(SuiteResult::new("karcher_monotone", cases, worst_rise, 1e-10, t0))
}

/// Two-point Karcher flow in the long-iteration limit against a brute-force
/// geodesic sweep: equidistance within 1e-6 and objective within 1e-9 of the
/// sweep minimum.
pub fn suite_karcher_midpoint(seed: u64) -> Result<SuiteResult> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x44);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for _ in 0..20 {
        let mut t = Tape::new();
        let k = t.scalar(1.0);
        let a = random_point(&mut t, k, 4, 1.0, &mut rng)?;
        let b = random_point(&mut t, k, 4, 1.0, &mut rng)?;
        let pts = t.concat_rows(&[a.coords, b.coords])?;
        let mu = karcher_flow(&mut t, pts, k, 50, 0.5, KarcherInit::MeanProjection)?;
        let da = distance_rows(&mut t, mu, a.coords, k)?;
        let db = distance_rows(&mut t, mu, b.coords, k)?;
        let gap = (t.value(da).item()? - t.value(db).item()?).abs();
        worst = worst.max(gap / 1e-6);

        let obj = frechet_objective(&mut t, mu, pts, k)?;
        let obj = t.value(obj).item()?;
        let lg = log_map_rows(&mut t, a.coords, b.coords, k)?;
        let mut sweep_best = f64::INFINITY;
        for s in 0..=1000 {
            let frac = s as f64 / 1000.0;
            let scaled = t.mul_const(lg, frac)?;
            let cand = exp_map_rows(&mut t, a.coords, scaled, k)?;
            let o = frechet_objective(&mut t, cand, pts, k)?;
            sweep_best = sweep_best.min(t.value(o).item()?);
        }
        worst = worst.max((obj - sweep_best) / 1e-9);
        cases += 1;
    }
    let mut r = SuiteResult::new("karcher_midpoint_oracle", cases, worst, 1.0, t0);
    r.detail = format!(
        "worst error/tolerance ratio {worst:.3} (equidistance tol 1e-6, objective tol 1e-9)"
    );
    Ok(r)
}

/// Gradients of every differentiable tape primitive against central
/// differences on randomized inputs away from clamp boundaries.
pub fn suite_primitive_gradients(seed: u64) -> Result<SuiteResult> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for _ in 0..5 {
        let rand_row = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
            Tensor::row(&(0..4).map(|_| rng.gen_range(lo..hi)).collect::<Vec<_>>())
        };
        let params = [
            ("a", rand_row(&mut rng, 0.3, 2.5)),
            ("b", rand_row(&mut rng, 0.3, 2.5)),
        ];
        let report = check_gradients(
            |t, vs| {
                let (a, b) = (vs[0], vs[1]);
                let s = t.add(a, b)?;
                let d = t.sub(s, b)?;
                let m = t.mul(d, b)?;
                let q = t.div(m, b)?;
                let e = t.exp(q)?;
                let l = t.log(e)?;
                let sp = t.softplus(l)?;
                let r = t.relu(sp)?;
                let sq = t.sqrt(r)?;
                let ch = t.cosh(sq)?;
                let sh = t.sinh(sq)?;
                let both = t.add(ch, sh)?;
                let cl = t.clamp(both, 1.0 + 1e-9, 50.0)?;
                let ac = t.arcosh(cl)?;
                let n = t.neg(ac)?;
                let inner = t.lorentz_inner_rows(n, b)?;
                let groups = std::sync::Arc::new(vec![vec![0usize, 1, 2], vec![3]]);
                let w = t.softmax_subsets(a, groups)?;
                let probe = t.leaf(Tensor::row(&[0.3, -0.7, 1.1, 0.2]));
                let wp = t.mul(w, probe)?;
                let ws = t.sum(wp)?;
                let total = t.add(inner, ws)?;
                t.sum(total)
            },
            &params,
            1e-5,
            1e-6,
        )?;
        worst = worst.max(report.max_rel_err);
        cases += 1;
    }
    Ok(SuiteResult::new("primitive_gradients", cases, worst, 1e-6, t0))
}

/// Deterministic 6-node signed test graph for the end-to-end check.
pub fn gradcheck_graph(seed: u64) -> SignedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x66);
    let features = Tensor::new(
        6,
        5,
        (0..30).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
    )
    .expect("feature shape");
    SignedGraph {
        features,
        pos_edges: vec![
            Edge { i: 0, j: 1, w: 0.8 },
            Edge { i: 1, j: 2, w: 0.6 },
            Edge { i: 3, j: 4, w: 0.7 },
            Edge { i: 0, j: 5, w: 0.4 },
        ],
        neg_edges: vec![
            Edge { i: 2, j: 3, w: 0.5 },
            Edge { i: 1, j: 4, w: 0.3 },
            Edge { i: 4, j: 5, w: 0.6 },
        ],
        label: Some(1),
    }
}

/// End-to-end gradient check: full model (2 layers, d = 4, 2 heads, 6-node
/// graph, unrolled 5-step Karcher readout); every parameter block must match
/// central differences at relative error < 1e-4.
pub fn suite_model_gradcheck(seed: u64) -> Result<SuiteResult> {
    let t0 = Instant::now();
    let graph = gradcheck_graph(seed);
    let mut config = ModelConfig::new(5);
    config.layers = 2;
    config.hidden_dim = 4;
    config.heads = 2;
    let params = ModelParams::init(&config, seed ^ 0x77)?;
    let prepared = PreparedGraph::new(&graph, &config)?;

    let named: Vec<(String, Tensor)> = params
        .blocks()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let named_refs: Vec<(&str, Tensor)> = named
        .iter()
        .map(|(n, t)| (n.as_str(), t.clone()))
        .collect();
    let layers = config.layers;
    let heads = config.heads;
    let report = check_gradients(
        move |t, vs| {
            let mut idx = 0;
            let mut take = || {
                let v = vs[idx];
                idx += 1;
                v
            };
            let layer_vars = (0..layers)
                .map(|_| {
                    let weight = take();
                    let bias = take();
                    let head_vars = (0..heads)
                        .map(|_| crate::layers::HeadVars {
                            query: take(),
                            key: take(),
                            value: take(),
                        })
                        .collect();
                    let rho = take();
                    crate::layers::LayerVars {
                        weight,
                        bias,
                        heads: head_vars,
                        rho,
                    }
                })
                .collect();
            let classifier = crate::readout::ClassifierVars {
                weight: take(),
                bias: take(),
            };
            let vars = crate::model::ModelVars {
                layers: layer_vars,
                classifier,
            };
            let (loss, _) = forward_loss(t, &vars, &prepared, &config)?;
            Ok(loss)
        },
        &named_refs,
        1e-5,
        1e-4,
    )?;
    let blocks = report.blocks.len();
    let mut r = SuiteResult::new("model_gradient_check", blocks, report.max_rel_err, 1e-4, t0);
    r.pass = report.pass();
    let failing: Vec<&str> = report
        .blocks
        .iter()
        .filter(|b| !b.pass)
        .map(|b| b.name.as_str())
        .collect();
    r.detail = if failing.is_empty() {
        format!(
            "max rel err {:.3e} across {blocks} parameter blocks (tol 1e-4)",
            report.max_rel_err
        )
    } else {
        format!("failing blocks: {failing:?}")
    };
    Ok(r)
}

/// Run every suite.
pub fn run_selftest(seed: u64) -> Result<SelftestReport> {
    let suites = vec![
        suite_exp_log_roundtrip(seed)?,
        suite_log_norm_identity(seed)?,
        suite_transport(seed)?,
        suite_karcher_monotone(seed)?,
        suite_karcher_midpoint(seed)?,
        suite_primitive_gradients(seed)?,
        suite_model_gradcheck(seed)?,
    ];
    let pass = suites.iter().all(|s| s.pass);
    Ok(SelftestReport { seed, suites, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes_end_to_end() {
        let report = run_selftest(7).unwrap();
        for s in &report.suites {
            assert!(s.pass, "{}: {}", s.name, s.detail);
        }
        assert!(report.pass);
    }
}
