// Temporary: forward vs backward split and tape size.

use std::time::Instant;

use brain_hgcn::graph::{build_signed_graph, GraphBuildOptions};
use brain_hgcn::model::{forward_loss, ModelConfig, ModelParams, PreparedGraph};
use brain_hgcn::synth::{generate_subject, SynthSpec};
use brain_hgcn::tape::Tape;

fn main() {
    let spec = SynthSpec::default();
    let subject = generate_subject(&spec, 0, 0).unwrap();
    let graph = build_signed_graph(&subject, GraphBuildOptions::default()).unwrap();
    let config = ModelConfig::new(spec.time_points);
    let params = ModelParams::init(&config, 1).unwrap();
    let prepared = PreparedGraph::new(&graph, &config).unwrap();

    // warmup
    for _ in 0..3 {
        let mut t = Tape::new();
        let vars = params.load(&mut t);
        let (loss, _) = forward_loss(&mut t, &vars, &prepared, &config).unwrap();
        let _ = t.backward(loss).unwrap();
    }

    let reps = 20;
    let t0 = Instant::now();
    let mut nodes = 0;
    for _ in 0..reps {
        let mut t = Tape::new();
        let vars = params.load(&mut t);
        let (_loss, _) = forward_loss(&mut t, &vars, &prepared, &config).unwrap();
        nodes = t.len();
    }
    println!("forward only: {:?} ({nodes} tape nodes)", t0.elapsed() / reps);

    let t0 = Instant::now();
    for _ in 0..reps {
        let mut t = Tape::new();
        let vars = params.load(&mut t);
        let (loss, _) = forward_loss(&mut t, &vars, &prepared, &config).unwrap();
        let _ = t.backward(loss).unwrap();
    }
    println!("forward+backward: {:?}", t0.elapsed() / reps);
}
