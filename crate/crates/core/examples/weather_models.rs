//! Generates one clean procedural scene per weather model, applies the
//! degradation formulas, and writes PNG previews next to raw floats.
//!
//! Run with: cargo run --release --example weather_models

use deweather::degrade::{generate_sample, WeatherKind};
use deweather::imgio::{write_png, write_raw};
use deweather::metrics::{psnr, ssim};

fn main() {
    let out = std::path::Path::new("weather_models_out");
    std::fs::create_dir_all(out).expect("create output dir");
    for (i, kind) in WeatherKind::ALL.into_iter().enumerate() {
        let sample = generate_sample(kind, 40 + i as u64, 0.6, 128).expect("generate");
        let name = kind.as_str();
        write_png(&out.join(format!("{name}_clean.png")), &sample.clean).unwrap();
        write_png(&out.join(format!("{name}_degraded.png")), &sample.degraded).unwrap();
        write_raw(&out.join(format!("{name}_degraded.twimg")), &sample.degraded).unwrap();
        println!(
            "{name:9} psnr {:6.2} dB  ssim {:.4}",
            psnr(&sample.clean, &sample.degraded, 1.0),
            ssim(&sample.clean, &sample.degraded).unwrap()
        );
    }
    println!("wrote previews to {}", out.display());
}
