// Temporary: distortion ordering experiment.

use std::time::Instant;

use brain_hgcn::synth::{complete_tree_edges, embed_tree_distortion, EmbedGeometry};

fn main() {
    let (n, edges) = complete_tree_edges(2, 5);
    println!("depth-5 binary tree: {n} nodes");
    for iters in [500, 1500, 3000] {
        let t0 = Instant::now();
        let hyp = embed_tree_distortion(
            n,
            &edges,
            EmbedGeometry::Hyperbolic { curvature: 1.0 },
            2,
            iters,
            7,
        )
        .unwrap();
        let euc = embed_tree_distortion(n, &edges, EmbedGeometry::Euclidean, 2, iters, 7).unwrap();
        println!(
            "iters {iters}: hyp avg {:.4} worst {:.4} stress {:.5} | euc avg {:.4} worst {:.4} stress {:.5} | {:?}",
            hyp.average_distortion,
            hyp.worst_distortion,
            hyp.stress,
            euc.average_distortion,
            euc.worst_distortion,
            euc.stress,
            t0.elapsed()
        );
    }
}
