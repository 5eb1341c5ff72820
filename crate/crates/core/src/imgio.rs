//! Image and manifest I/O.
//!
//! The raw float format is bit-exact and used everywhere metrics matter:
//! magic "TWIMG1", three u32 little-endian dims (C, H, W), then C*H*W f32
//! little-endian values, row-major. 8-bit PNG is supported as a convenience
//! for viewing; metrics are never computed through the quantized path.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::degrade::WeatherKind;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMG_MAGIC: &[u8; 6] = b"TWIMG1";

/// Writes a `[C, H, W]` tensor in the raw float format.
pub fn write_raw(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::dim("write_raw", format!("expected [C, H, W], got {:?}", s)));
    }
    let mut buf = Vec::with_capacity(6 + 12 + image.numel() * 4);
    buf.extend_from_slice(IMG_MAGIC);
    for &d in s {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in image.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<Tensor<f32>> {
    let mut file = fs::File::open(path)?;
    let mut magic = [0u8; 6];
    file.read_exact(&mut magic)?;
    if &magic != IMG_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {:?}, expected {:?}",
            path.display(),
            magic,
            IMG_MAGIC
        )));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        let mut b = [0u8; 4];
        file.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let numel = dims[0] * dims[1] * dims[2];
    let mut bytes = vec![0u8; numel * 4];
    file.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(dims.to_vec(), data)
}

/// Writes a `[3, H, W]` or `[1, H, W]` tensor in [0, 1] as an 8-bit PNG.
pub fn write_png(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || (s[0] != 3 && s[0] != 1) {
        return Err(Error::dim("write_png", format!("expected [3|1, H, W], got {:?}", s)));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let data = image.data();
    if c == 3 {
        let mut px = Vec::with_capacity(h * w * 3);
        for i in 0..h * w {
            for ch in 0..3 {
                px.push(to_u8(data[ch * h * w + i]));
            }
        }
        image::save_buffer(path, &px, w as u32, h as u32, image::ColorType::Rgb8)
            .map_err(|e| Error::Format(format!("png encode {}: {e}", path.display())))?;
    } else {
        let px: Vec<u8> = data.iter().map(|&v| to_u8(v)).collect();
        image::save_buffer(path, &px, w as u32, h as u32, image::ColorType::L8)
            .map_err(|e| Error::Format(format!("png encode {}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("png decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    let data = t.data_mut();
    for (i, px) in img.pixels().enumerate() {
        for ch in 0..3 {
            data[ch * h * w + i] = px.0[ch] as f32 / 255.0;
        }
    }
    Ok(t)
}

/// Loads by extension: `.twimg` is the raw float path, anything else goes
/// through the PNG decoder.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("twimg") => read_raw(path),
        _ => read_png(path),
    }
}

pub fn save_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("twimg") => write_raw(path, image),
        _ => write_png(path, image),
    }
}

/// [0, 1] image to the network's (-1, 1) working range.
pub fn to_network_range(image: &Tensor<f32>) -> Tensor<f32> {
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = *v * 2.0 - 1.0;
    }
    out
}

/// Network output back to [0, 1], clamped.
pub fn to_image_range(image: &Tensor<f32>) -> Tensor<f32> {
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = ((*v + 1.0) * 0.5).clamp(0.0, 1.0);
    }
    out
}

/// One dataset pair: tab-separated clean path, degraded path, kind, seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub clean: PathBuf,
    pub degraded: PathBuf,
    pub kind: WeatherKind,
    pub seed: u64,
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            row.clean.display(),
            row.degraded.display(),
            row.kind.as_str(),
            row.seed
        ));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a manifest; relative image paths are resolved against the
/// manifest's own directory, so datasets can be moved wholesale.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &str| {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            base.join(pb)
        }
    };
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(Error::Format(format!(
                "{}:{}: expected 4 tab-separated fields, got {}",
                path.display(),
                ln + 1,
                parts.len()
            )));
        }
        rows.push(ManifestRow {
            clean: resolve(parts[0]),
            degraded: resolve(parts[1]),
            kind: WeatherKind::from_str(parts[2]).ok_or_else(|| {
                Error::Format(format!("{}:{}: unknown kind `{}`", path.display(), ln + 1, parts[2]))
            })?,
            seed: parts[3].parse().map_err(|_| {
                Error::Format(format!("{}:{}: bad seed `{}`", path.display(), ln + 1, parts[3]))
            })?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.twimg");
        let img = Tensor::from_fn(&[3, 4, 5], |i| (i as f32).sin());
        write_raw(&path, &img).unwrap();
        let back = read_raw(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn corrupt_magic_is_format_error_not_crash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.twimg");
        let img = Tensor::zeros(&[1, 2, 2]);
        write_raw(&path, &img).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_raw(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.twimg");
        let img = Tensor::zeros(&[3, 8, 8]);
        write_raw(&path, &img).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_raw(&path), Err(Error::Io(_))));
    }

    #[test]
    fn range_maps_invert() {
        let img = Tensor::from_fn(&[1, 2, 2], |i| i as f32 / 3.0);
        let round = to_image_range(&to_network_range(&img));
        for (a, b) in round.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn manifest_round_trip_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        let rows = vec![ManifestRow {
            clean: PathBuf::from("a/clean.twimg"),
            degraded: PathBuf::from("a/deg.twimg"),
            kind: WeatherKind::RainFog,
            seed: 42,
        }];
        write_manifest(&path, &rows).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back[0].clean, dir.path().join("a/clean.twimg"));
        assert_eq!(back[0].degraded, dir.path().join("a/deg.twimg"));
        assert_eq!(back[0].kind, rows[0].kind);
        assert_eq!(back[0].seed, rows[0].seed);
    }
}
