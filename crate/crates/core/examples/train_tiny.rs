//! Trains a reduced network on a few generated pairs and prints the loss
//! trajectory. Finishes in under a minute.
//!
//! Run with: cargo run --release --example train_tiny

use deweather::degrade::{gen_dataset, MixWeights};
use deweather::model::{NetworkConfig, Restorer};
use deweather::optim::{AdamState, Schedule};
use deweather::train::{train, TrainConfig};

fn main() {
    let dir = std::path::Path::new("train_tiny_out");
    std::fs::create_dir_all(dir).unwrap();
    let manifest = gen_dataset(4, &MixWeights::uniform(), 11, dir, 32, 0.5).expect("gen");

    let net_cfg = NetworkConfig {
        depths: [1, 1, 1, 1],
        dims: [8, 16, 24, 32],
        heads: [1, 2, 2, 4],
        ..NetworkConfig::default()
    };
    let (net, mut store) = Restorer::init::<f32>(&net_cfg, 3).expect("init");
    println!("{} trainable scalars", store.total_scalars());

    let mut opt = AdamState::new(&store);
    let cfg = TrainConfig {
        steps: Some(60),
        seed: 4,
        schedule: Schedule { batch_size: 2, ..Schedule::default() },
        ..TrainConfig::default()
    };
    let report = train(
        &net,
        &mut store,
        &mut opt,
        &manifest,
        &dir.join("tiny.ckpt"),
        &cfg,
        &mut |line| println!("{line}"),
    )
    .expect("train");
    println!(
        "loss {:.5} -> {:.5} over {} steps",
        report.initial_loss, report.final_loss, report.steps_run
    );
}
