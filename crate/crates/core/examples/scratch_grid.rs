// Temporary: protocol/config grid for the synthetic benchmark.

use std::time::Instant;

use brain_hgcn::graph::{build_signed_graph, GraphBuildOptions};
use brain_hgcn::model::{AblationFlags, ModelConfig};
use brain_hgcn::synth::{generate_dataset, SynthSpec};
use brain_hgcn::train::{train, TrainConfig};

fn run(
    tag: &str,
    spec: &SynthSpec,
    dim: usize,
    heads: usize,
    batch: usize,
    lr: f64,
    ablate: Option<&str>,
) {
    let subjects = generate_dataset(spec).unwrap();
    let graphs: Vec<_> = subjects
        .iter()
        .map(|s| build_signed_graph(s, GraphBuildOptions::default()).unwrap())
        .collect();
    let mut model_cfg = ModelConfig::new(spec.time_points);
    model_cfg.hidden_dim = dim;
    model_cfg.heads = heads;
    if let Some(a) = ablate {
        model_cfg.ablation = AblationFlags::parse(a).unwrap();
    }
    let cfg = TrainConfig {
        batch_size: batch,
        lr,
        epochs: 30,
        folds: 5,
        seed: 42,
        ..Default::default()
    };
    let t0 = Instant::now();
    let out = train(&graphs, &model_cfg, &cfg).unwrap();
    let first: f64 = out.loss_curve.iter().filter(|p| p.epoch < 10).map(|p| p.loss).sum::<f64>()
        / out.loss_curve.iter().filter(|p| p.epoch < 10).count().max(1) as f64;
    let last: f64 = out.loss_curve.iter().filter(|p| p.epoch >= 20).map(|p| p.loss).sum::<f64>()
        / out.loss_curve.iter().filter(|p| p.epoch >= 20).count().max(1) as f64;
    println!(
        "{tag}: ACC {:.1}±{:.1} AUC {:.1}±{:.1} | loss {first:.3}->{last:.3} | {:?}",
        out.report.acc.mean, out.report.acc.std, out.report.auc.mean, out.report.auc.std,
        t0.elapsed()
    );
}

fn main() {
    let near_spec = SynthSpec {
        branching: [2, 3],
        coupling: 0.75,
        noise: 0.3,
        rewiring: 0.05,
        ..Default::default()
    };
    let strong = SynthSpec {
        branching: [2, 4],
        coupling: 0.85,
        noise: 0.2,
        rewiring: 0.02,
        ..Default::default()
    };
    run("near-spec d16 H4 b8", &near_spec, 16, 4, 8, 1e-3, None);
    run("near-spec d64 H4 b8", &near_spec, 64, 4, 8, 1e-3, None);
    run("strong    d16 H4 b8", &strong, 16, 4, 8, 1e-3, None);
    run("strong    d16 H4 b4 lr3e-3", &strong, 16, 4, 4, 3e-3, None);
}
