//! Referenced image-quality metrics: PSNR and single-scale SSIM.
//!
//! Both operate on [0, 1] images; network-range outputs must be mapped back
//! first. Metric lines are emitted tab-separated as `name\tvalue`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Peak signal-to-noise ratio in dB: 20·log10(max_val / sqrt(MSE)).
/// Identical inputs return the positive-infinity sentinel.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, max_val: f64) -> f64 {
    assert_eq!(a.shape(), b.shape(), "psnr: shape mismatch");
    let mut mse = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        mse += d * d;
    }
    mse /= a.numel() as f64;
    if mse == 0.0 {
        return f64::INFINITY;
    }
    20.0 * (max_val / mse.sqrt()).log10()
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01; // (0.01 L)^2 with L = 1
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Channel-mean grayscale view of a `[C, H, W]` image.
fn grayscale(t: &Tensor<f32>) -> Result<(Vec<f64>, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::dim("ssim", format!("expected [C, H, W], got {:?}", s)));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut gray = vec![0.0f64; h * w];
    for ch in 0..c {
        for i in 0..h * w {
            gray[i] += t.data()[ch * h * w + i] as f64;
        }
    }
    for v in gray.iter_mut() {
        *v /= c as f64;
    }
    Ok((gray, h, w))
}

/// Horizontal-then-vertical separable Gaussian filter over valid positions.
fn gaussian_filter(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let k = gaussian_kernel();
    let wo = w - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0f64; h * wo];
    for y in 0..h {
        for x in 0..wo {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * src[y * w + x + i];
            }
            tmp[y * wo + x] = s;
        }
    }
    let ho = h - SSIM_WINDOW + 1;
    let mut out = vec![0.0f64; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * wo + x];
            }
            out[y * wo + x] = s;
        }
    }
    (out, ho, wo)
}

/// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5),
/// C1 = (0.01 L)^2, C2 = (0.03 L)^2, L = 1, on channel-mean grayscale.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            "ssim",
            format!("shape mismatch: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let (ga, h, w) = grayscale(a)?;
    let (gb, _, _) = grayscale(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "ssim: image {h}x{w} smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let aa: Vec<f64> = ga.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = gb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ga.iter().zip(&gb).map(|(x, y)| x * y).collect();

    let (mu_a, ho, wo) = gaussian_filter(&ga, h, w);
    let (mu_b, _, _) = gaussian_filter(&gb, h, w);
    let (m_aa, _, _) = gaussian_filter(&aa, h, w);
    let (m_bb, _, _) = gaussian_filter(&bb, h, w);
    let (m_ab, _, _) = gaussian_filter(&ab, h, w);

    let mut total = 0.0;
    for i in 0..ho * wo {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = m_aa[i] - ma * ma;
        let var_b = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let v = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2));
        total += v;
    }
    Ok(total / (ho * wo) as f64)
}

/// Formats one metric line: `name\tvalue`.
pub fn metric_line(name: &str, value: f64) -> String {
    format!("{name}\t{value:.6}")
}
