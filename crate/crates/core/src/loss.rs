//! Training losses: smooth L1 plus a weighted perceptual feature term.
//!
//! The perceptual term is an MSE between multi-layer features of a frozen,
//! seeded, randomly initialized 3-layer strided conv extractor (tap after
//! each layer). A fixed random feature space keeps the loss hermetic while
//! preserving its structure: an MSE in a nonlinear feature space. Extractor
//! weights are derived from the seed on construction and are never trained
//! or checkpointed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::conv_fan_in;
use crate::tensor::{lit, Graph, Real, Tensor, Var};

/// Loss weighting and extractor identity.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Weight of the perceptual term. The default keeps both terms within
    /// one order of magnitude at initialization.
    pub lambda_perceptual: f64,
    pub feature_seed: u64,
    /// Which extractor layers contribute feature MSEs.
    pub taps: [bool; 3],
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_perceptual: 0.04, feature_seed: 1069, taps: [true; 3] }
    }
}

/// Mean smooth L1 over E = pred - gt: 0.5 E² where |E| < 1, |E| - 0.5
/// elsewhere. Gradient is E on the quadratic branch and sign(E) outside,
/// continuous at |E| = 1.
pub fn smooth_l1<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    let e = g.sub(pred, gt)?;
    let h = g.huber(e)?;
    g.mean_all(h)
}

const EXTRACTOR_CHANNELS: [usize; 4] = [3, 8, 16, 32];

/// Frozen seeded convolutional feature extractor.
pub struct FeatureExtractor<T: Real> {
    layers: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> FeatureExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7f4a_7c15_9e37_79b9);
        let layers = EXTRACTOR_CHANNELS
            .windows(2)
            .map(|io| {
                let w: Tensor<f64> = conv_fan_in(&[io[1], io[0], 3, 3], &mut rng);
                let b: Tensor<f64> = Tensor::zeros(&[io[1]]);
                (w.cast::<T>(), b.cast::<T>())
            })
            .collect();
        FeatureExtractor { layers }
    }

    /// Feature maps after each strided conv + GELU.
    fn taps(&self, g: &mut Graph<T>, image: Var) -> Result<Vec<Var>> {
        let mut x = image;
        let mut taps = Vec::with_capacity(self.layers.len());
        for (w, b) in &self.layers {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let conv = g.conv2d(x, wv, Some(bv), 2, 1, 1)?;
            x = g.gelu(conv)?;
            taps.push(x);
        }
        Ok(taps)
    }
}

/// Loss assembly for one (pred, gt) pair of `[B, 3, H, W]` images.
pub struct LossModule<T: Real> {
    pub cfg: LossConfig,
    extractor: FeatureExtractor<T>,
}

impl<T: Real> LossModule<T> {
    pub fn new(cfg: LossConfig) -> Self {
        LossModule { cfg, extractor: FeatureExtractor::new(cfg.feature_seed) }
    }

    /// Mean of per-tap feature MSEs over the configured tap layers.
    pub fn feature_loss(&self, g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
        let pred_taps = self.extractor.taps(g, pred)?;
        let gt_taps = self.extractor.taps(g, gt)?;
        let mut acc: Option<Var> = None;
        let mut used = 0usize;
        for (i, (fa, fb)) in pred_taps.into_iter().zip(gt_taps).enumerate() {
            if !self.cfg.taps[i] {
                continue;
            }
            used += 1;
            let d = g.sub(fa, fb)?;
            let sq = g.mul(d, d)?;
            let m = g.mean_all(sq)?;
            acc = Some(match acc {
                Some(a) => g.add(a, m)?,
                None => m,
            });
        }
        let total = acc.ok_or_else(|| {
            crate::error::Error::Config("feature loss needs at least one tap layer".to_string())
        })?;
        g.mul_scalar(total, lit::<T>(1.0 / used as f64))
    }

    /// smooth_l1 + lambda * feature_loss. A zero lambda skips the extractor
    /// entirely, so the reduction is exact.
    pub fn total(&self, g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
        let s = smooth_l1(g, pred, gt)?;
        if self.cfg.lambda_perceptual == 0.0 {
            return Ok(s);
        }
        let f = self.feature_loss(g, pred, gt)?;
        let weighted = g.mul_scalar(f, lit::<T>(self.cfg.lambda_perceptual))?;
        g.add(s, weighted)
    }
}
