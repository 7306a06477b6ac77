// Temporary: how much class signal do the synthetic graphs carry?

use brain_hgcn::graph::{build_signed_graph, pearson_correlation, GraphBuildOptions};
use brain_hgcn::synth::{generate_dataset, truncated_tree_edges, SynthSpec};

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn main() {
    for (noise, rewiring) in [(0.4, 0.05), (0.1, 0.02), (0.0, 0.0)] {
        let spec = SynthSpec {
            subjects_per_class: 50,
            noise,
            rewiring,
            ..Default::default()
        };
        let subjects = generate_dataset(&spec).unwrap();
        let n = spec.roi_count;
        let tree: [Vec<(usize, usize)>; 2] =
            [truncated_tree_edges(2, n), truncated_tree_edges(3, n)];

        // Equivariant statistic: mean |corr| over selected edges.
        // Identity-aware statistic: mean corr over class-0 tree pairs minus
        // class-1 tree pairs.
        let mut sel_stat = [Vec::new(), Vec::new()];
        let mut id_stat = [Vec::new(), Vec::new()];
        let mut deg_stat = [Vec::new(), Vec::new()];
        for s in &subjects {
            let label = s.label.unwrap();
            let c = pearson_correlation(&s.series).unwrap();
            let g = build_signed_graph(s, GraphBuildOptions::default()).unwrap();
            let total_w: f64 = g.pos_edges.iter().map(|e| e.w).sum::<f64>()
                + g.neg_edges.iter().map(|e| e.w).sum::<f64>();
            let count = (g.pos_edges.len() + g.neg_edges.len()) as f64;
            sel_stat[label].push(total_w / count);

            let mean_over = |pairs: &[(usize, usize)]| {
                pairs.iter().map(|&(i, j)| c.at(i, j)).sum::<f64>() / pairs.len() as f64
            };
            id_stat[label].push(mean_over(&tree[0]) - mean_over(&tree[1]));

            let adj = g.adjacency();
            let degs: Vec<f64> = (0..n).map(|i| adj.pos[i].len() as f64).collect();
            let (_, dstd) = mean_std(&degs);
            deg_stat[label].push(dstd);
        }
        println!("noise={noise} rewiring={rewiring}");
        for (name, stat) in [("sel|corr|", &sel_stat), ("id-aware", &id_stat), ("deg-std", &deg_stat)] {
            let (m0, s0) = mean_std(&stat[0]);
            let (m1, s1) = mean_std(&stat[1]);
            let sep = (m0 - m1).abs() / (s0.powi(2) + s1.powi(2)).sqrt().max(1e-12) * 2f64.sqrt();
            println!("  {name}: class0 {m0:.4}+-{s0:.4} class1 {m1:.4}+-{s1:.4} | d' = {sep:.2}");
        }
    }
}
