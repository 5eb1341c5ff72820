//! The whole loop in one binary: generate pairs, overfit briefly, restore
//! the training images, and report PSNR/SSIM gains per weather kind.
//!
//! Run with: cargo run --release --example restore_pipeline
//! (a few minutes on a laptop core)

use deweather::degrade::{gen_dataset, MixWeights};
use deweather::imgio::{read_manifest, read_raw, to_image_range, to_network_range, write_png};
use deweather::metrics::{psnr, ssim};
use deweather::model::{NetworkConfig, Restorer};
use deweather::optim::AdamState;
use deweather::tensor::Tensor;
use deweather::train::{train, TrainConfig};

fn main() {
    let dir = std::path::Path::new("restore_pipeline_out");
    std::fs::create_dir_all(dir).unwrap();
    let manifest = gen_dataset(6, &MixWeights::uniform(), 77, dir, 64, 0.5).expect("gen");

    let (net, mut store) = Restorer::init::<f32>(&NetworkConfig::default(), 9).expect("init");
    let mut opt = AdamState::new(&store);
    let cfg = TrainConfig { steps: Some(300), seed: 6, ..TrainConfig::default() };
    let report = train(
        &net,
        &mut store,
        &mut opt,
        &manifest,
        &dir.join("pipeline.ckpt"),
        &cfg,
        &mut |line| println!("{line}"),
    )
    .expect("train");
    println!("loss {:.4} -> {:.4}", report.initial_loss, report.final_loss);

    for (i, row) in read_manifest(&manifest).expect("manifest").iter().enumerate() {
        let clean = read_raw(&row.clean).unwrap();
        let degraded = read_raw(&row.degraded).unwrap();
        let mut batched_shape = vec![1];
        batched_shape.extend_from_slice(degraded.shape());
        let net_in = Tensor::new(batched_shape, to_network_range(&degraded).data().to_vec()).unwrap();
        let out = net.restore(&store, &net_in).unwrap();
        let restored =
            to_image_range(&Tensor::new(out.shape()[1..].to_vec(), out.data().to_vec()).unwrap());
        println!(
            "pair {i} ({}): degraded {:5.2} dB / {:.3} -> restored {:5.2} dB / {:.3}",
            row.kind.as_str(),
            psnr(&clean, &degraded, 1.0),
            ssim(&clean, &degraded).unwrap(),
            psnr(&clean, &restored, 1.0),
            ssim(&clean, &restored).unwrap(),
        );
        write_png(&dir.join(format!("restored_{i}.png")), &restored).unwrap();
    }
    println!("restored previews in {}", dir.display());
}
