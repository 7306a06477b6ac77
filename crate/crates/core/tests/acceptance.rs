//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured values. Run with `cargo test --test acceptance`.
//!
//! The training-based criteria share one cross-validation run through a
//! process-wide cache so the suite stays within its time budget.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use brain_hgcn::graph::{build_signed_graph, GraphBuildOptions, SignedGraph};
use brain_hgcn::metrics::MetricsReport;
use brain_hgcn::model::{AblationFlags, ModelConfig};
use brain_hgcn::selftest;
use brain_hgcn::synth::{
    complete_tree_edges, embed_tree_distortion, generate_dataset, EmbedGeometry, SynthSpec,
};
use brain_hgcn::train::{metrics_json, train, TrainConfig, TrainOutcome};

const SEED: u64 = 42;

fn report_line(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn assert_runtime(criterion: &str, elapsed: Duration, budget: Duration) {
    assert!(
        elapsed <= budget,
        "criterion {criterion}: runtime {elapsed:?} exceeded budget {budget:?}"
    );
}

// ── Criterion 1: geometry round trip ────────────────────────────────

#[test]
fn criterion_1_exp_log_roundtrip() {
    let t0 = Instant::now();
    let suite = selftest::suite_exp_log_roundtrip(SEED).unwrap();
    let elapsed = t0.elapsed();
    report_line(
        "1 (exp/log round trip)",
        suite.pass && elapsed < Duration::from_secs(5),
        &format!("{} in {elapsed:?}", suite.detail),
    );
    assert_runtime("1", elapsed, Duration::from_secs(5));
}

// ── Criterion 2: log-map norm identity ──────────────────────────────

#[test]
fn criterion_2_norm_identity() {
    let suite = selftest::suite_log_norm_identity(SEED).unwrap();
    report_line("2 (norm identity)", suite.pass, &suite.detail);
}

// ── Criterion 3: transport isometry ─────────────────────────────────

#[test]
fn criterion_3_transport() {
    let suite = selftest::suite_transport(SEED).unwrap();
    report_line("3 (transport isometry)", suite.pass, &suite.detail);
}

// ── Criterion 4: Karcher flow ───────────────────────────────────────

#[test]
fn criterion_4_karcher() {
    let mono = selftest::suite_karcher_monotone(SEED).unwrap();
    let mid = selftest::suite_karcher_midpoint(SEED).unwrap();
    report_line(
        "4 (Karcher flow)",
        mono.pass && mid.pass,
        &format!("{}; {}", mono.detail, mid.detail),
    );
}

// ── Criterion 5: end-to-end gradient check ──────────────────────────

#[test]
fn criterion_5_model_gradient_check() {
    let t0 = Instant::now();
    let suite = selftest::suite_model_gradcheck(SEED).unwrap();
    let elapsed = t0.elapsed();
    report_line(
        "5 (end-to-end gradient check)",
        suite.pass && elapsed < Duration::from_secs(60),
        &format!("{} in {elapsed:?}", suite.detail),
    );
    assert_runtime("5", elapsed, Duration::from_secs(60));
}

// ── Criteria 6/7/9: synthetic training runs ─────────────────────────

fn benchmark_graphs() -> &'static Vec<SignedGraph> {
    static GRAPHS: OnceLock<Vec<SignedGraph>> = OnceLock::new();
    GRAPHS.get_or_init(|| {
        let spec = SynthSpec {
            seed: SEED,
            ..Default::default()
        };
        let subjects = generate_dataset(&spec).expect("synthetic dataset");
        assert_eq!(subjects.len(), 200, "default cohort is 200 subjects");
        subjects
            .iter()
            .map(|s| build_signed_graph(s, GraphBuildOptions::default()).expect("graph build"))
            .collect()
    })
}

fn criterion6_protocol() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        folds: 5,
        seed: SEED,
        ..Default::default()
    }
}

fn full_model_config() -> ModelConfig {
    ModelConfig::new(64)
}

/// The full-model criterion-6 run, shared by criteria 6, 7, and 9.
fn full_run() -> &'static (TrainOutcome, Duration) {
    static RUN: OnceLock<(TrainOutcome, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let graphs = benchmark_graphs();
        let t0 = Instant::now();
        let outcome = train(graphs, &full_model_config(), &criterion6_protocol())
            .expect("criterion-6 training run");
        (outcome, t0.elapsed())
    })
}

fn ablation_report(flag: &str) -> MetricsReport {
    let graphs = benchmark_graphs();
    let mut config = full_model_config();
    config.ablation = AblationFlags::parse(flag).expect("known ablation");
    train(graphs, &config, &criterion6_protocol())
        .expect("ablation run")
        .report
}

#[test]
fn criterion_6_synthetic_classification() {
    let (outcome, elapsed) = full_run();
    let acc = outcome.report.acc.mean;
    report_line(
        "6 (synthetic classification)",
        acc >= 85.0 && *elapsed < Duration::from_secs(600),
        &format!(
            "mean test ACC {acc:.1}% (need >= 85) over 5 folds, 30 epochs in {elapsed:?}"
        ),
    );
    assert_runtime("6", *elapsed, Duration::from_secs(600));

    // loss sanity: first-10-epoch mean strictly above last-10-epoch mean
    let curve = &outcome.loss_curve;
    let mean_over = |lo: usize, hi: usize| {
        let pts: Vec<f64> = curve
            .iter()
            .filter(|p| p.epoch >= lo && p.epoch < hi)
            .map(|p| p.loss)
            .collect();
        pts.iter().sum::<f64>() / pts.len() as f64
    };
    let early = mean_over(0, 10);
    let late = mean_over(20, 30);
    assert!(
        early > late,
        "training loss did not decrease: first-10 {early:.4} vs last-10 {late:.4}"
    );
}

#[test]
fn criterion_7_ablation_ordering() {
    let full = full_run().0.report.auc.mean;
    let names = [
        "euclidean_geometry",
        "fixed_base_readout",
        "euclidean_attention",
        "unsigned_aggregation",
    ];
    let aucs: Vec<(String, f64)> = names
        .iter()
        .map(|n| (n.to_string(), ablation_report(n).auc.mean))
        .collect();

    let mut detail = format!("full AUC {full:.1}");
    for (name, auc) in &aucs {
        detail.push_str(&format!(", {name} {auc:.1}"));
    }

    // With a one-point slack: the full model is at least every ablation
    // minus 1, and the flat-geometry ablation is strictly lowest among the
    // five configurations up to the same slack.
    let slack = 1.0;
    let full_on_top = aucs.iter().all(|(_, a)| full >= a - slack);
    let euclidean = aucs
        .iter()
        .find(|(n, _)| n == "euclidean_geometry")
        .map(|(_, a)| *a)
        .unwrap();
    let others_min = aucs
        .iter()
        .filter(|(n, _)| n != "euclidean_geometry")
        .map(|(_, a)| *a)
        .fold(full, f64::min);
    let euclidean_lowest = euclidean < others_min + slack;

    report_line(
        "7 (ablation ordering)",
        full_on_top && euclidean_lowest,
        &detail,
    );
}

#[test]
fn criterion_8_distortion_ordering() {
    let t0 = Instant::now();
    let (n, edges) = complete_tree_edges(2, 5);
    let hyp = embed_tree_distortion(
        n,
        &edges,
        EmbedGeometry::Hyperbolic { curvature: 1.0 },
        2,
        1500,
        SEED,
    )
    .unwrap();
    let euc = embed_tree_distortion(n, &edges, EmbedGeometry::Euclidean, 2, 1500, SEED).unwrap();
    let elapsed = t0.elapsed();
    report_line(
        "8 (distortion ordering)",
        hyp.average_distortion < euc.average_distortion && elapsed < Duration::from_secs(120),
        &format!(
            "depth-5 binary tree, dim 2: hyperbolic avg {:.4} (worst {:.4}) vs euclidean avg {:.4} (worst {:.4}) in {elapsed:?}",
            hyp.average_distortion,
            hyp.worst_distortion,
            euc.average_distortion,
            euc.worst_distortion
        ),
    );
    assert_runtime("8", elapsed, Duration::from_secs(120));
}

#[test]
fn criterion_9_determinism() {
    // First run: the shared criterion-6 outcome. Second run: fresh, same
    // seeds. The serialized metrics must agree byte for byte (the file
    // contains no timestamps).
    let first = metrics_json(&full_run().0.report).unwrap();
    let graphs = benchmark_graphs();
    let again = train(graphs, &full_model_config(), &criterion6_protocol())
        .expect("repeat training run");
    let second = metrics_json(&again.report).unwrap();
    report_line(
        "9 (determinism)",
        first == second,
        &format!("metrics.json identical across reruns ({} bytes)", first.len()),
    );
}
