// Temporary profiling scratchpad.

use std::time::Instant;

use brain_hgcn::graph::{build_signed_graph, GraphBuildOptions};
use brain_hgcn::model::{loss_and_gradients, ModelConfig, ModelParams, PreparedGraph};
use brain_hgcn::synth::{generate_subject, SynthSpec};

fn main() {
    let spec = SynthSpec::default();
    let t0 = Instant::now();
    let subject = generate_subject(&spec, 0, 0).unwrap();
    println!("generate_subject: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let graph = build_signed_graph(&subject, GraphBuildOptions::default()).unwrap();
    println!(
        "build graph: {:?} ({} pos, {} neg edges)",
        t0.elapsed(),
        graph.pos_edges.len(),
        graph.neg_edges.len()
    );

    let config = ModelConfig::new(spec.time_points);
    let params = ModelParams::init(&config, 1).unwrap();
    let prepared = PreparedGraph::new(&graph, &config).unwrap();
    println!("edge rows: {}", prepared.layout.edge_rows());

    // warmup
    let _ = loss_and_gradients(&params, &prepared, &config).unwrap();
    let t0 = Instant::now();
    let reps = 10;
    for _ in 0..reps {
        let _ = loss_and_gradients(&params, &prepared, &config).unwrap();
    }
    let per = t0.elapsed() / reps;
    println!("forward+backward per graph: {per:?}");

    let passes = 5 * 30 * 160;
    println!(
        "criterion-6 estimate (sequential): {:?}",
        per * passes as u32
    );
}
