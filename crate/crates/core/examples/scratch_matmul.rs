// Temporary: matmul kernel throughput.

use std::time::Instant;

use brain_hgcn::Tensor;

fn bench(m: usize, k: usize, n: usize, reps: u32) {
    let a = Tensor::new(m, k, (0..m * k).map(|i| (i as f64).sin()).collect()).unwrap();
    let b = Tensor::new(k, n, (0..k * n).map(|i| (i as f64).cos()).collect()).unwrap();
    let _ = a.matmul(&b).unwrap();
    let t0 = Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        let c = a.matmul(&b).unwrap();
        sink += c.data()[0];
    }
    let per = t0.elapsed() / reps;
    let flops = 2.0 * (m * k * n) as f64;
    println!(
        "{m}x{k}x{n}: {per:?} -> {:.2} Gflop/s (sink {sink:.3})",
        flops / per.as_secs_f64() / 1e9
    );
}

fn main() {
    bench(32, 64, 64, 2000);
    bench(32, 65, 32, 2000);
    bench(32, 32, 65, 2000);
    bench(64, 64, 64, 2000);
}
