// Temporary: class separation of the init-time pooled representation.

use brain_hgcn::graph::{build_signed_graph, GraphBuildOptions};
use brain_hgcn::model::{graph_representation, ModelConfig, ModelParams, PreparedGraph};
use brain_hgcn::synth::{generate_dataset, SynthSpec};

fn main() {
    for (branching, coupling, noise, rewiring) in [
        ([2usize, 6usize], 0.85, 0.1, 0.02),
        ([2, 8], 0.85, 0.1, 0.02),
        ([2, 16], 0.85, 0.1, 0.02),
        ([2, 8], 0.9, 0.1, 0.02),
    ] {
        let spec = SynthSpec {
            subjects_per_class: 50,
            branching,
            coupling,
            noise,
            rewiring,
            ..Default::default()
        };
        let subjects = generate_dataset(&spec).unwrap();
        let graphs: Vec<_> = subjects
            .iter()
            .map(|s| build_signed_graph(s, GraphBuildOptions::default()).unwrap())
            .collect();

        // neg-edge fraction per class
        let mut frac = [Vec::new(), Vec::new()];
        for g in &graphs {
            let total = (g.pos_edges.len() + g.neg_edges.len()) as f64;
            frac[g.label.unwrap()].push(g.neg_edges.len() as f64 / total);
        }

        let config = ModelConfig::new(spec.time_points);
        let params = ModelParams::init(&config, 42).unwrap();
        let zs: Vec<(usize, Vec<f64>)> = graphs
            .iter()
            .map(|g| {
                let p = PreparedGraph::new(g, &config).unwrap();
                let z = graph_representation(&params, &p, &config).unwrap();
                (g.label.unwrap(), z.data().to_vec())
            })
            .collect();

        let dim = zs[0].1.len();
        let mut mean = [vec![0.0; dim], vec![0.0; dim]];
        let mut count = [0usize; 2];
        for (label, z) in &zs {
            count[*label] += 1;
            for (m, v) in mean[*label].iter_mut().zip(z) {
                *m += v;
            }
        }
        for c in 0..2 {
            for m in mean[c].iter_mut() {
                *m /= count[c] as f64;
            }
        }
        let w: Vec<f64> = mean[1].iter().zip(&mean[0]).map(|(a, b)| a - b).collect();
        // project and measure separation
        let mut proj = [Vec::new(), Vec::new()];
        for (label, z) in &zs {
            let p: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
            proj[*label].push(p);
        }
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
            (m, s)
        };
        let (m0, s0) = stats(&proj[0]);
        let (m1, s1) = stats(&proj[1]);
        let dprime = (m1 - m0).abs() / ((s0 * s0 + s1 * s1) / 2.0).sqrt().max(1e-12);
        // LDA-threshold accuracy
        let thr = (m0 + m1) / 2.0;
        let up = m1 > m0;
        let mut correct = 0;
        for (label, v) in proj.iter().enumerate() {
            for &x in v {
                let pred = if (x > thr) == up { 1 } else { 0 };
                if pred == label {
                    correct += 1;
                }
            }
        }
        let acc = 100.0 * correct as f64 / zs.len() as f64;
        let (f0, _) = stats(&frac[0]);
        let (f1, _) = stats(&frac[1]);
        println!(
            "branching {branching:?} coupling {coupling} noise {noise} rewiring {rewiring}: init-z d'={dprime:.2} lda-acc={acc:.1}% | neg-frac {f0:.3} vs {f1:.3}"
        );
    }
}
