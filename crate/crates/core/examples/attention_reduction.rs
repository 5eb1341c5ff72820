//! Shows the kv token compression: equivalence with plain attention at
//! R = 1, and the cost drop at higher ratios.
//!
//! Run with: cargo run --release --example attention_reduction

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use deweather::attention::{AttentionConfig, SelfAttention};
use deweather::params::ParamStore;
use deweather::tensor::{Graph, Tensor};

fn median_forward_time(reduction: usize, n: usize, c: usize) -> f64 {
    let cfg = AttentionConfig::new(c, 2, reduction).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f32>::new();
    let attn = SelfAttention::init(&mut store, &mut rng, "attn", cfg).unwrap();
    let x = Tensor::from_fn(&[1, n, c], |i| ((i * 37 % 101) as f32 - 50.0) * 0.01);
    let mut times: Vec<f64> = (0..5)
        .map(|_| {
            let mut g = Graph::new();
            let p = store.bind_all_frozen(&mut g);
            let xv = g.constant(x.clone());
            let t = Instant::now();
            attn.forward(&mut g, &p, xv).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times[2]
}

fn main() {
    let (n, c) = (1024, 32);
    println!("self-attention over {n} tokens, dim {c} (median of 5 runs):");
    let base = median_forward_time(1, n, c);
    for r in [1usize, 2, 4, 8] {
        let t = if r == 1 { base } else { median_forward_time(r, n, c) };
        println!("  R = {r}: {:8.3} ms  ({:.1}x)", t * 1e3, base / t);
    }
}
