//! Synthetic paired-data generators for the three weather physics models.
//!
//! Raindrop:  I = (1 - M) ⊙ B + R
//! Rain+fog:  I = T ⊙ (B + Σᵢ Rᵢ) + (1 - T) ⊙ A
//! Snow:      I = z ⊙ S + (1 - z) ⊙ B
//!
//! Clean scenes are procedural (gradient fields, smooth blobs, checker
//! composites) so the entire dataset is reproducible from a seed. All images
//! live in [0, 1]; the network's (-1, 1) range is applied at the pipeline
//! boundary.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imgio::{write_manifest, write_raw, ManifestRow};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeatherKind {
    Raindrop,
    RainFog,
    Snow,
}

impl WeatherKind {
    pub const ALL: [WeatherKind; 3] = [WeatherKind::Raindrop, WeatherKind::RainFog, WeatherKind::Snow];

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherKind::Raindrop => "raindrop",
            WeatherKind::RainFog => "rain_fog",
            WeatherKind::Snow => "snow",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "raindrop" => Some(WeatherKind::Raindrop),
            "rain_fog" => Some(WeatherKind::RainFog),
            "snow" => Some(WeatherKind::Snow),
            _ => None,
        }
    }
}

/// Generating parameters for one degraded sample.
pub enum DegradationParams {
    Raindrop {
        /// Soft drop mask `[1, H, W]` in [0, 1].
        mask: Tensor<f32>,
        /// Drop residual `[3, H, W]`.
        residual: Tensor<f32>,
    },
    RainFog {
        /// Transmission map `[1, H, W]` in [0, 1].
        transmission: Tensor<f32>,
        /// Streak layers, each `[1, H, W]`; at least one.
        streaks: Vec<Tensor<f32>>,
        /// Atmospheric light per channel.
        airlight: [f32; 3],
    },
    Snow {
        /// Soft snow mask `[1, H, W]` in [0, 1].
        mask: Tensor<f32>,
        /// Flake appearance `[3, H, W]`.
        flakes: Tensor<f32>,
    },
}

impl DegradationParams {
    pub fn kind(&self) -> WeatherKind {
        match self {
            DegradationParams::Raindrop { .. } => WeatherKind::Raindrop,
            DegradationParams::RainFog { .. } => WeatherKind::RainFog,
            DegradationParams::Snow { .. } => WeatherKind::Snow,
        }
    }
}

/// One paired sample.
pub struct DegradationSample {
    pub clean: Tensor<f32>,
    pub degraded: Tensor<f32>,
    pub params: DegradationParams,
    pub seed: u64,
}

// ── formula application ─────────────────────────────────────────────────

fn check_unit_range(op: &'static str, name: &str, t: &Tensor<f32>) -> Result<()> {
    if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Contract(format!("{op}: {name} must lie in [0, 1]")));
    }
    Ok(())
}

fn check_plane(op: &'static str, b: &Tensor<f32>, plane: &Tensor<f32>) -> Result<()> {
    let (bs, ps) = (b.shape(), plane.shape());
    if bs.len() != 3 || ps.len() != 3 || ps[0] != 1 || bs[1] != ps[1] || bs[2] != ps[2] {
        return Err(Error::dim(
            op,
            format!("expected mask [1, H, W] matching image {:?}, got {:?}", bs, ps),
        ));
    }
    Ok(())
}

fn clamp_unit(mut t: Tensor<f32>) -> Tensor<f32> {
    for v in t.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    t
}

/// Raindrop composite before clamping: (1 - M) ⊙ B + R.
///
/// Composites are evaluated in f64 and rounded once to f32, so each output
/// pixel sits within one 32-bit rounding step of the exact formula.
pub fn raindrop_composite(b: &Tensor<f32>, m: &Tensor<f32>, r: &Tensor<f32>) -> Result<Tensor<f32>> {
    check_plane("apply_raindrop", b, m)?;
    if r.shape() != b.shape() {
        return Err(Error::dim(
            "apply_raindrop",
            format!("residual {:?} must match image {:?}", r.shape(), b.shape()),
        ));
    }
    check_unit_range("apply_raindrop", "mask", m)?;
    let (h, w) = (b.shape()[1], b.shape()[2]);
    let mut out = Tensor::zeros(b.shape());
    let (bd, md, rd, od) = (b.data(), m.data(), r.data(), out.data_mut());
    for c in 0..3 {
        for i in 0..h * w {
            let v = (1.0 - md[i] as f64) * bd[c * h * w + i] as f64 + rd[c * h * w + i] as f64;
            od[c * h * w + i] = v as f32;
        }
    }
    Ok(out)
}

pub fn apply_raindrop(b: &Tensor<f32>, m: &Tensor<f32>, r: &Tensor<f32>) -> Result<Tensor<f32>> {
    Ok(clamp_unit(raindrop_composite(b, m, r)?))
}

/// Rain+fog composite before clamping: T ⊙ (B + Σ Rᵢ) + (1 - T) ⊙ A.
pub fn rain_fog_composite(
    b: &Tensor<f32>,
    t: &Tensor<f32>,
    streaks: &[Tensor<f32>],
    airlight: [f32; 3],
) -> Result<Tensor<f32>> {
    check_plane("apply_rain_fog", b, t)?;
    check_unit_range("apply_rain_fog", "transmission", t)?;
    if streaks.is_empty() {
        return Err(Error::Contract(
            "apply_rain_fog: needs at least one streak layer (n >= 1)".to_string(),
        ));
    }
    for s in streaks {
        check_plane("apply_rain_fog", b, s)?;
    }
    let (h, w) = (b.shape()[1], b.shape()[2]);
    let mut rain = vec![0.0f64; h * w];
    for s in streaks {
        for (acc, &v) in rain.iter_mut().zip(s.data()) {
            *acc += v as f64;
        }
    }
    let mut out = Tensor::zeros(b.shape());
    let (bd, td, od) = (b.data(), t.data(), out.data_mut());
    for c in 0..3 {
        for i in 0..h * w {
            let t64 = td[i] as f64;
            let v = t64 * (bd[c * h * w + i] as f64 + rain[i]) + (1.0 - t64) * airlight[c] as f64;
            od[c * h * w + i] = v as f32;
        }
    }
    Ok(out)
}

pub fn apply_rain_fog(
    b: &Tensor<f32>,
    t: &Tensor<f32>,
    streaks: &[Tensor<f32>],
    airlight: [f32; 3],
) -> Result<Tensor<f32>> {
    Ok(clamp_unit(rain_fog_composite(b, t, streaks, airlight)?))
}

/// Snow composite before clamping: z ⊙ S + (1 - z) ⊙ B.
pub fn snow_composite(b: &Tensor<f32>, z: &Tensor<f32>, s: &Tensor<f32>) -> Result<Tensor<f32>> {
    check_plane("apply_snow", b, z)?;
    check_unit_range("apply_snow", "snow mask", z)?;
    if s.shape() != b.shape() {
        return Err(Error::dim(
            "apply_snow",
            format!("flakes {:?} must match image {:?}", s.shape(), b.shape()),
        ));
    }
    let (h, w) = (b.shape()[1], b.shape()[2]);
    let mut out = Tensor::zeros(b.shape());
    let (bd, zd, sd, od) = (b.data(), z.data(), s.data(), out.data_mut());
    for c in 0..3 {
        for i in 0..h * w {
            let z64 = zd[i] as f64;
            let v = z64 * sd[c * h * w + i] as f64 + (1.0 - z64) * bd[c * h * w + i] as f64;
            od[c * h * w + i] = v as f32;
        }
    }
    Ok(out)
}

pub fn apply_snow(b: &Tensor<f32>, z: &Tensor<f32>, s: &Tensor<f32>) -> Result<Tensor<f32>> {
    Ok(clamp_unit(snow_composite(b, z, s)?))
}

// ── procedural scenes ───────────────────────────────────────────────────

/// Bilinear value noise in [0, 1] over an `h`x`w` field.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: usize) -> Vec<f32> {
    let cell = cell.max(1);
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid: Vec<f32> = (0..gh * gw).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        let fy = y as f32 / cell as f32;
        let (y0, ty) = (fy as usize, fy.fract());
        for x in 0..w {
            let fx = x as f32 / cell as f32;
            let (x0, tx) = (fx as usize, fx.fract());
            let g = |yy: usize, xx: usize| grid[yy * gw + xx];
            let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
            let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

/// Procedural clean scene in [0, 1]; the kind cycles with the seed.
pub fn gen_scene(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce0_e9a5_6015_fec5);
    let mut img = Tensor::zeros(&[3, h, w]);
    match seed % 3 {
        0 => {
            // Linear gradient field with a mild radial term per channel.
            for c in 0..3 {
                let base: f32 = rng.gen_range(0.1..0.7);
                let gx: f32 = rng.gen_range(-0.5..0.5);
                let gy: f32 = rng.gen_range(-0.5..0.5);
                let rad: f32 = rng.gen_range(-0.3..0.3);
                let (cx, cy): (f32, f32) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
                let plane = &mut img.data_mut()[c * h * w..(c + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        let u = x as f32 / w as f32;
                        let v = y as f32 / h as f32;
                        let d2 = (u - cx).powi(2) + (v - cy).powi(2);
                        plane[y * w + x] = (base + gx * u + gy * v + rad * d2).clamp(0.0, 1.0);
                    }
                }
            }
        }
        1 => {
            // Random smooth blobs over a gray base.
            let base: f32 = rng.gen_range(0.15..0.45);
            for v in img.data_mut() {
                *v = base;
            }
            let blobs = rng.gen_range(3..7);
            for _ in 0..blobs {
                let color: [f32; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                let (cx, cy): (f32, f32) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                let sigma: f32 = rng.gen_range(0.08..0.3);
                let data = img.data_mut();
                for y in 0..h {
                    for x in 0..w {
                        let u = x as f32 / w as f32;
                        let v = y as f32 / h as f32;
                        let d2 = (u - cx).powi(2) + (v - cy).powi(2);
                        let fall = (-d2 / (2.0 * sigma * sigma)).exp() * 0.6;
                        for c in 0..3 {
                            let p = &mut data[c * h * w + y * w + x];
                            *p = (*p + fall * (color[c] - *p)).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        }
        _ => {
            // Checker composite shaded by a diagonal ramp.
            let cell = rng.gen_range(4..=12usize);
            let a: [f32; 3] = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
            let b: [f32; 3] = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
            let data = img.data_mut();
            for y in 0..h {
                for x in 0..w {
                    let check = ((x / cell) + (y / cell)) % 2 == 0;
                    let ramp = 0.6 + 0.4 * (x + y) as f32 / (h + w) as f32;
                    for c in 0..3 {
                        let col = if check { a[c] } else { b[c] };
                        data[c * h * w + y * w + x] = (col * ramp).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    img
}

// ── degradation parameter generation ────────────────────────────────────

const MAX_DISCS: usize = 48;

/// Generates weather parameters for an `h`x`w` image. Reproducible from the
/// seed; mask coverage grows pointwise with `intensity` because the random
/// draws are fixed up front and intensity only scales counts and thresholds.
pub fn gen_params(kind: WeatherKind, seed: u64, intensity: f32, h: usize, w: usize) -> Result<DegradationParams> {
    if !(intensity > 0.0 && intensity <= 1.0) {
        return Err(Error::Input(format!("intensity must be in (0, 1], got {intensity}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    match kind {
        WeatherKind::Raindrop => {
            // Fixed pool of candidate discs; intensity selects a prefix.
            let discs: Vec<(f32, f32, f32)> = (0..MAX_DISCS)
                .map(|_| {
                    (
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(0.0..1.0),
                        rng.gen_range(1.5..5.5),
                    )
                })
                .collect();
            let noise = value_noise(&mut rng, h, w, 6);
            let active = ((intensity * MAX_DISCS as f32).round() as usize).clamp(1, MAX_DISCS);
            // Low intensities thin the drops out as well as making them rarer,
            // so the degradation vanishes smoothly as intensity -> 0.
            let cap = (4.0 * intensity).min(1.0);
            let mut mask = Tensor::zeros(&[1, h, w]);
            let md = mask.data_mut();
            for &(cx, cy, r) in &discs[..active] {
                let (px, py) = (cx * w as f32, cy * h as f32);
                let radius = r * (0.6 + 0.8 * intensity);
                let r2 = radius * radius;
                let y0 = (py - radius - 1.0).max(0.0) as usize;
                let y1 = ((py + radius + 1.0) as usize).min(h - 1);
                let x0 = (px - radius - 1.0).max(0.0) as usize;
                let x1 = ((px + radius + 1.0) as usize).min(w - 1);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let d2 = (x as f32 - px).powi(2) + (y as f32 - py).powi(2);
                        let v = (1.0 - d2 / r2).max(0.0);
                        let soft = v * v * (3.0 - 2.0 * v) * cap; // smoothstep-shaped edge
                        let m = &mut md[y * w + x];
                        *m = *m + soft - *m * soft; // soft union keeps [0, 1]
                    }
                }
            }
            let mut residual = Tensor::zeros(&[3, h, w]);
            let rd = residual.data_mut();
            for c in 0..3 {
                for i in 0..h * w {
                    // Bright refracted highlight inside the drops.
                    rd[c * h * w + i] = mask.data()[i] * (0.35 + 0.3 * noise[i]);
                }
            }
            Ok(DegradationParams::Raindrop { mask, residual })
        }
        WeatherKind::RainFog => {
            let field = value_noise(&mut rng, h, w, 16);
            let mut transmission = Tensor::zeros(&[1, h, w]);
            for (t, &f) in transmission.data_mut().iter_mut().zip(&field) {
                *t = 1.0 - intensity * f;
            }
            let airlight = [
                rng.gen_range(0.75..0.95),
                rng.gen_range(0.75..0.95),
                rng.gen_range(0.75..0.95),
            ];
            let n = 1 + (intensity * 2.999) as usize;
            let mut streaks = Vec::with_capacity(n);
            for _ in 0..3 {
                // Draw all three layers so the stream is fixed; keep n of them.
                let mut layer = Tensor::<f32>::zeros(&[1, h, w]);
                let ld = layer.data_mut();
                let count = ((h * w) as f32 * (0.002 + 0.008 * intensity)) as usize;
                let angle: f32 = rng.gen_range(-0.35..0.35);
                let len = rng.gen_range(5..12usize);
                let amp: f32 = intensity * rng.gen_range(0.25f32..0.5);
                for _ in 0..count {
                    let cx = rng.gen_range(0..w) as f32;
                    let cy = rng.gen_range(0..h) as f32;
                    for t in 0..len {
                        let ft = t as f32 - len as f32 / 2.0;
                        let x = cx + ft * angle.sin();
                        let y = cy + ft * angle.cos();
                        if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                            let fade = 1.0 - (2.0 * ft.abs() / len as f32);
                            let p = &mut ld[y as usize * w + x as usize];
                            *p = (*p + amp * fade).min(1.0);
                        }
                    }
                }
                if streaks.len() < n {
                    streaks.push(layer);
                }
            }
            Ok(DegradationParams::RainFog { transmission, streaks, airlight })
        }
        WeatherKind::Snow => {
            let fine = value_noise(&mut rng, h, w, 2);
            let tint = value_noise(&mut rng, h, w, 4);
            let threshold = 1.0 - 0.04 - 0.3 * intensity;
            let cap = (4.0 * intensity).min(1.0);
            let mut mask = Tensor::zeros(&[1, h, w]);
            for (z, &f) in mask.data_mut().iter_mut().zip(&fine) {
                // Soft threshold: 0 below, ramps up over a narrow band; the
                // cap fades flakes out smoothly at vanishing intensity.
                *z = ((f - threshold) / 0.06).clamp(0.0, 1.0) * cap;
            }
            let mut flakes = Tensor::zeros(&[3, h, w]);
            let fd = flakes.data_mut();
            for c in 0..3 {
                for i in 0..h * w {
                    fd[c * h * w + i] = 0.85 + 0.15 * tint[i];
                }
            }
            Ok(DegradationParams::Snow { mask, flakes })
        }
    }
}

/// Applies the parameters' formula to a clean scene.
pub fn apply(params: &DegradationParams, clean: &Tensor<f32>) -> Result<Tensor<f32>> {
    match params {
        DegradationParams::Raindrop { mask, residual } => apply_raindrop(clean, mask, residual),
        DegradationParams::RainFog { transmission, streaks, airlight } => {
            apply_rain_fog(clean, transmission, streaks, *airlight)
        }
        DegradationParams::Snow { mask, flakes } => apply_snow(clean, mask, flakes),
    }
}

/// Builds one paired sample from a seed.
pub fn generate_sample(
    kind: WeatherKind,
    seed: u64,
    intensity: f32,
    size: usize,
) -> Result<DegradationSample> {
    let clean = gen_scene(seed, size, size);
    let params = gen_params(kind, seed, intensity, size, size)?;
    let degraded = apply(&params, &clean)?;
    Ok(DegradationSample { clean, degraded, params, seed })
}

// ── dataset generation ──────────────────────────────────────────────────

/// Mixture weights over the three kinds; must sum to 1.
#[derive(Debug, Clone, Copy)]
pub struct MixWeights {
    pub raindrop: f64,
    pub rain_fog: f64,
    pub snow: f64,
}

impl MixWeights {
    pub fn uniform() -> Self {
        MixWeights { raindrop: 1.0 / 3.0, rain_fog: 1.0 / 3.0, snow: 1.0 / 3.0 }
    }

    /// The combined training distribution: 1,069 raindrop, 9,000 rain+fog
    /// and 9,000 snow images out of 19,069.
    pub fn paper() -> Self {
        let total = 9000.0 + 1069.0 + 9000.0;
        MixWeights { raindrop: 1069.0 / total, rain_fog: 9000.0 / total, snow: 9000.0 / total }
    }

    pub fn validate(&self) -> Result<()> {
        let sum = self.raindrop + self.rain_fog + self.snow;
        if self.raindrop < 0.0 || self.rain_fog < 0.0 || self.snow < 0.0 || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Input(format!("mix weights must be >= 0 and sum to 1, got {self:?}")));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.raindrop, self.rain_fog, self.snow]
    }
}

/// Largest-remainder apportionment of `count` samples over the mix.
pub fn apportion(count: usize, mix: &MixWeights) -> [usize; 3] {
    let weights = mix.as_array();
    let ideal: Vec<f64> = weights.iter().map(|w| w * count as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut left = count - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        (ideal[b] - ideal[b].floor())
            .partial_cmp(&(ideal[a] - ideal[a].floor()))
            .unwrap()
            .then(a.cmp(&b))
    });
    for &i in &order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

fn split_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 step keyed by the sample index.
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Writes `count` paired raw images plus a manifest into `out_dir`.
/// Regeneration with the same arguments is byte-identical.
pub fn gen_dataset(
    count: usize,
    mix: &MixWeights,
    seed: u64,
    out_dir: &Path,
    size: usize,
    intensity: f32,
) -> Result<PathBuf> {
    if count == 0 {
        return Err(Error::Input("count must be >= 1".to_string()));
    }
    mix.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let per_kind = apportion(count, mix);
    let mut kinds = Vec::with_capacity(count);
    for (ki, &n) in per_kind.iter().enumerate() {
        kinds.extend(std::iter::repeat(WeatherKind::ALL[ki]).take(n));
    }
    let mut rows = Vec::with_capacity(count);
    for (i, &kind) in kinds.iter().enumerate() {
        let sample_seed = split_seed(seed, i as u64);
        let sample = generate_sample(kind, sample_seed, intensity, size)?;
        let clean_name = format!("pair_{i:05}_clean.twimg");
        let degraded_name = format!("pair_{i:05}_degraded.twimg");
        write_raw(&out_dir.join(&clean_name), &sample.clean)?;
        write_raw(&out_dir.join(&degraded_name), &sample.degraded)?;
        // Relative paths keep the manifest byte-identical across output
        // directories and let the dataset move as a unit.
        rows.push(ManifestRow {
            clean: clean_name.into(),
            degraded: degraded_name.into(),
            kind,
            seed: sample_seed,
        });
    }
    let manifest = out_dir.join("manifest.tsv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}
