//! Wall time of both sketch passes over a streamed synthetic population.
//!
//! `cargo run --release --example sketch_scaling -- [n] [rows] [mean_nnz]`

use std::time::Instant;

use wds_core::cws::HashFamilyConfig;
use wds_core::sketch::two_pass;
use wds_core::synth::SyntheticStream;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let n = args.first().copied().unwrap_or(100_000);
    let rows = args.get(1).copied().unwrap_or(100);
    let mean_nnz = args.get(2).copied().unwrap_or(200);
    let source = SyntheticStream { n, n_genes: 36_601, mean_nnz, seed: 1 };
    let config = HashFamilyConfig::new(7, rows, 10_000).unwrap();
    let mut out = vec![0.0; n];
    let start = Instant::now();
    let sketch = two_pass(&source, config, &mut out).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mean = out.iter().sum::<f64>() / n as f64;
    println!(
        "n={n} R={rows} nnz~{mean_nnz}: {secs:.2}s, mean density {mean:.2}, counters {} bytes",
        sketch.counter_bytes()
    );
}
