// Temporary: criterion-6-shaped learnability experiment.

use std::time::Instant;

use brain_hgcn::graph::{build_signed_graph, GraphBuildOptions};
use brain_hgcn::model::{AblationFlags, ModelConfig};
use brain_hgcn::synth::{generate_dataset, SynthSpec};
use brain_hgcn::train::{train, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ablation = args.get(1).cloned().unwrap_or_default();

    let spec = SynthSpec::default();
    let t0 = Instant::now();
    let subjects = generate_dataset(&spec).unwrap();
    let graphs: Vec<_> = subjects
        .iter()
        .map(|s| build_signed_graph(s, GraphBuildOptions::default()).unwrap())
        .collect();
    println!("dataset: {} graphs in {:?}", graphs.len(), t0.elapsed());

    let mut model_cfg = ModelConfig::new(spec.time_points);
    if !ablation.is_empty() {
        model_cfg.ablation = AblationFlags::parse(&ablation).unwrap();
    }
    let cfg = TrainConfig {
        epochs: 30,
        folds: 5,
        seed: 42,
        ..Default::default()
    };
    let t0 = Instant::now();
    let out = train(&graphs, &model_cfg, &cfg).unwrap();
    println!(
        "[{}] trained in {:?}",
        if ablation.is_empty() { "full" } else { &ablation },
        t0.elapsed()
    );
    println!(
        "ACC {:.1}+-{:.1}  SEN {:.1}+-{:.1}  SPE {:.1}+-{:.1}  AUC {:.1}+-{:.1}",
        out.report.acc.mean,
        out.report.acc.std,
        out.report.sen.mean,
        out.report.sen.std,
        out.report.spe.mean,
        out.report.spe.std,
        out.report.auc.mean,
        out.report.auc.std
    );
    let first: f64 = out.loss_curve.iter().filter(|p| p.epoch < 10).map(|p| p.loss).sum::<f64>()
        / out.loss_curve.iter().filter(|p| p.epoch < 10).count().max(1) as f64;
    let last: f64 = out
        .loss_curve
        .iter()
        .filter(|p| p.epoch >= cfg.epochs.saturating_sub(10))
        .map(|p| p.loss)
        .sum::<f64>()
        / out
            .loss_curve
            .iter()
            .filter(|p| p.epoch >= cfg.epochs.saturating_sub(10))
            .count()
            .max(1) as f64;
    println!("loss first10 {first:.4} -> last10 {last:.4}");
}
