//! Training loop: seeded shuffled batches, per-sample forward/backward,
//! averaged gradients, Adam updates under the halving schedule.
//!
//! Training is a pure function of (config, seed, dataset bytes): the shuffle
//! for epoch e is derived from (seed, e), per-sample gradients are summed in
//! batch order, and resuming from a checkpoint recomputes the exact batch a
//! fresh run would see at that step.

use std::path::Path;

use rayon::prelude::*;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::imgio::{read_manifest, read_raw, to_network_range};
use crate::loss::{LossConfig, LossModule};
use crate::metrics::psnr;
use crate::model::Restorer;
use crate::optim::{adam_step, clip_global_norm, lr_at, AdamState, Schedule};
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub seed: u64,
    pub loss: LossConfig,
    /// Global-norm clip; `None` leaves gradients untouched (the default).
    pub grad_clip: Option<f32>,
    /// Write a checkpoint every N epochs (0 disables periodic saves; the
    /// final state is always written).
    pub checkpoint_every_epochs: usize,
    /// Stop after exactly this many optimizer steps instead of running the
    /// full epoch schedule. Epochs past the schedule keep its final rate.
    pub steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: Schedule::default(),
            seed: 0,
            loss: LossConfig::default(),
            grad_clip: None,
            checkpoint_every_epochs: 0,
            steps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_psnr: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps_run: u64,
    pub epochs: Vec<EpochLog>,
}

/// In-memory dataset: (degraded, clean) pairs in network range.
pub struct PairedData {
    pub pairs: Vec<(Tensor<f32>, Tensor<f32>)>,
}

impl PairedData {
    pub fn load(manifest: &Path) -> Result<Self> {
        let rows = read_manifest(manifest)?;
        if rows.is_empty() {
            return Err(Error::Input(format!("{}: empty manifest", manifest.display())));
        }
        let mut pairs = Vec::with_capacity(rows.len());
        for row in &rows {
            let clean = to_network_range(&read_raw(&row.clean)?);
            let degraded = to_network_range(&read_raw(&row.degraded)?);
            if clean.shape() != degraded.shape() {
                return Err(Error::Format(format!(
                    "pair {} / {}: shape mismatch",
                    row.clean.display(),
                    row.degraded.display()
                )));
            }
            pairs.push((degraded, clean));
        }
        Ok(PairedData { pairs })
    }

    /// Monitoring split: the last 12.5% of manifest rows (at least one).
    /// These rows still receive gradient updates at desk scale; the split
    /// only selects which pairs the per-epoch PSNR is measured on.
    pub fn validation_range(&self) -> std::ops::Range<usize> {
        let n = self.pairs.len();
        let val = (n / 8).max(1);
        n - val..n
    }
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0xd1b5_4a32_d192_ed03));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Forward + backward for one sample; returns (loss, per-parameter grads).
fn sample_pass(
    net: &Restorer,
    store: &ParamStore<f32>,
    losses: &LossModule<f32>,
    degraded: &Tensor<f32>,
    clean: &Tensor<f32>,
) -> Result<(f64, Vec<Option<Vec<f32>>>)> {
    let mut g = Graph::new();
    let p = store.bind_all(&mut g);
    let x = g.constant(degraded.clone());
    let target = g.constant(clean.clone());
    let out = net.forward(&mut g, &p, x)?;
    let loss = losses.total(&mut g, out, target)?;
    let loss_val = g.data(loss)[0];
    if !loss_val.is_finite() {
        let (node, op) = g.first_non_finite().unwrap_or((loss.index(), "loss"));
        return Err(Error::NonFinite { op: op.to_string(), node });
    }
    g.backward(loss)?;
    Ok((loss_val as f64, g.export_param_grads(store.len())))
}

/// Mean PSNR of restored validation pairs, in dB on [0, 1] images.
/// A perfect reconstruction (infinite PSNR) counts as 100 dB so the mean
/// stays finite.
fn validation_psnr(net: &Restorer, store: &ParamStore<f32>, data: &PairedData) -> Result<f64> {
    let range = data.validation_range();
    let mut total = 0.0;
    let mut count = 0usize;
    for (degraded, clean) in &data.pairs[range] {
        let restored = net.restore(store, &unsqueeze(degraded))?;
        let restored_img = crate::imgio::to_image_range(&squeeze(&restored));
        let clean_img = crate::imgio::to_image_range(clean);
        let v = psnr(&clean_img, &restored_img, 1.0);
        total += if v.is_finite() { v } else { 100.0 };
        count += 1;
    }
    Ok(total / count as f64)
}

fn unsqueeze(t: &Tensor<f32>) -> Tensor<f32> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    Tensor::new(shape, t.data().to_vec()).expect("prepend batch dim")
}

fn squeeze(t: &Tensor<f32>) -> Tensor<f32> {
    let s = t.shape();
    Tensor::new(s[1..].to_vec(), t.data().to_vec()).expect("squeeze batch dim")
}

/// Runs the loop. `store` and `opt` carry any resumed state; `opt.step`
/// determines where iteration continues.
pub fn train(
    net: &Restorer,
    store: &mut ParamStore<f32>,
    opt: &mut AdamState,
    manifest: &Path,
    out_checkpoint: &Path,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&str),
) -> Result<TrainReport> {
    cfg.schedule.validate()?;
    let data = PairedData::load(manifest)?;
    let losses = LossModule::new(cfg.loss);
    let n = data.pairs.len();
    let bs = cfg.schedule.batch_size;
    let steps_per_epoch = n.div_ceil(bs) as u64;
    let total_steps = cfg
        .steps
        .unwrap_or(cfg.schedule.total_epochs as u64 * steps_per_epoch);

    let mut epochs = Vec::new();
    let mut initial_loss = None;
    let mut final_loss = 0.0f64;
    let mut epoch_losses: Vec<f64> = Vec::new();

    let mut step = opt.step;
    while step < total_steps {
        let epoch = (step / steps_per_epoch) as usize;
        let batch_idx = (step % steps_per_epoch) as usize;
        let lr_epoch = epoch.min(cfg.schedule.total_epochs - 1);
        let lr = lr_at(lr_epoch, &cfg.schedule)?;

        let order = epoch_order(cfg.seed, epoch, n);
        let lo = batch_idx * bs;
        let hi = (lo + bs).min(n);
        let batch: Vec<&(Tensor<f32>, Tensor<f32>)> =
            order[lo..hi].iter().map(|&i| &data.pairs[i]).collect();

        let results: Vec<Result<(f64, Vec<Option<Vec<f32>>>)>> = batch
            .par_iter()
            .map(|(degraded, clean)| {
                let s = degraded.shape().to_vec();
                let mut d = Tensor::zeros(&[1, s[0], s[1], s[2]]);
                d.data_mut().copy_from_slice(degraded.data());
                let mut c = Tensor::zeros(&[1, s[0], s[1], s[2]]);
                c.data_mut().copy_from_slice(clean.data());
                sample_pass(net, store, &losses, &d, &c)
            })
            .collect();

        // Fixed-order reduction keeps results independent of thread timing.
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; store.len()];
        let mut loss_sum = 0.0f64;
        for r in results {
            let (loss, sample_grads) = r?;
            loss_sum += loss;
            for (slot, g) in grads.iter_mut().zip(sample_grads) {
                match (slot.as_mut(), g) {
                    (Some(acc), Some(g)) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    (None, Some(g)) => *slot = Some(g),
                    _ => {}
                }
            }
        }
        let scale = 1.0 / batch.len() as f32;
        for g in grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
        let mean_loss = loss_sum / batch.len() as f64;
        if initial_loss.is_none() {
            initial_loss = Some(mean_loss);
        }
        final_loss = mean_loss;
        epoch_losses.push(mean_loss);

        if let Some(max_norm) = cfg.grad_clip {
            clip_global_norm(&mut grads, max_norm);
        }
        adam_step(store, &grads, opt, lr)?;
        step = opt.step;

        let epoch_done = batch_idx as u64 + 1 == steps_per_epoch || step == total_steps;
        if epoch_done {
            let mean: f64 = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
            epoch_losses.clear();
            let vp = validation_psnr(net, store, &data)?;
            log(&format!(
                "epoch {epoch} step {step} loss {mean:.6} val_psnr {vp:.3} lr {lr:.6}"
            ));
            epochs.push(EpochLog { epoch, mean_loss: mean, val_psnr: vp, lr });
            if cfg.checkpoint_every_epochs > 0 && (epoch + 1) % cfg.checkpoint_every_epochs == 0 {
                checkpoint::save(out_checkpoint, store, opt)?;
            }
        }
    }
    checkpoint::save(out_checkpoint, store, opt)?;
    Ok(TrainReport {
        initial_loss: initial_loss.unwrap_or(0.0),
        final_loss,
        steps_run: step,
        epochs,
    })
}
