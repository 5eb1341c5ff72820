//! Visualizes what the weather-type queries attend to: trains briefly on a
//! mixed dataset, then writes one grayscale attention map per query for a
//! degraded input.
//!
//! Run with: cargo run --release --example query_attention_maps

use deweather::degrade::{gen_dataset, generate_sample, MixWeights, WeatherKind};
use deweather::imgio::{to_network_range, write_png};
use deweather::model::{NetworkConfig, Restorer};
use deweather::optim::AdamState;
use deweather::tensor::Tensor;
use deweather::train::{train, TrainConfig};

fn main() {
    let dir = std::path::Path::new("query_attention_out");
    std::fs::create_dir_all(dir).unwrap();
    let manifest = gen_dataset(6, &MixWeights::uniform(), 17, dir, 64, 0.6).expect("gen");

    let net_cfg = NetworkConfig::default();
    let (net, mut store) = Restorer::init::<f32>(&net_cfg, 2).expect("init");
    let mut opt = AdamState::new(&store);
    let cfg = TrainConfig { steps: Some(200), seed: 3, ..TrainConfig::default() };
    train(&net, &mut store, &mut opt, &manifest, &dir.join("q.ckpt"), &cfg, &mut |_| {})
        .expect("train");

    let factor = net_cfg.stride_product();
    for kind in WeatherKind::ALL {
        let sample = generate_sample(kind, 500, 0.6, 64).expect("sample");
        let mut shape = vec![1];
        shape.extend_from_slice(sample.degraded.shape());
        let net_in =
            Tensor::new(shape, to_network_range(&sample.degraded).data().to_vec()).unwrap();
        let (_, weights) = net.restore_with_attention(&store, &net_in).expect("forward");
        let weights = weights.expect("decoder enabled");
        let ws = weights.shape().to_vec(); // [1, heads, Kq, N4]
        let (heads, kq, n4) = (ws[1], ws[2], ws[3]);
        let side = 64 / factor;

        for q in 0..kq {
            let mut map = vec![0.0f32; n4];
            for h in 0..heads {
                let base = (h * kq + q) * n4;
                for (acc, &v) in map.iter_mut().zip(&weights.data()[base..base + n4]) {
                    *acc += v / heads as f32;
                }
            }
            let (lo, hi) = map
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            let mut img = Tensor::zeros(&[1, 64, 64]);
            for y in 0..64 {
                for x in 0..64 {
                    let v = map[(y / factor) * side + x / factor];
                    img.data_mut()[y * 64 + x] =
                        if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                }
            }
            write_png(&dir.join(format!("{}_query{q}.png", kind.as_str())), &img).unwrap();
        }
        println!("{}: wrote {kq} query maps", kind.as_str());
    }
    println!("maps in {}", dir.display());
}
