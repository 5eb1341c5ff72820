//! The `deweather` command-line surface: gen, train, restore, eval,
//! gradcheck, attn-dump.
//!
//! Exit codes: 0 success, 1 runtime/I-O failure, 2 usage error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::degrade::{gen_dataset, MixWeights, WeatherKind};
use crate::error::{Error, Result};
use crate::gradcheck::{check_all_ops, full_network_probe};
use crate::imgio::{
    load_image, read_manifest, save_image, to_image_range, to_network_range, write_png,
};
use crate::metrics::{metric_line, psnr, ssim};
use crate::model::Restorer;
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "deweather",
    version,
    about = "All-weather image restoration: synthetic data, training, inference, metrics",
    after_long_help = config_key_help()
)]
struct Cli {
    /// Plain-text key=value run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Chattier progress output.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a paired synthetic weather dataset plus manifest.
    Gen {
        /// Number of image pairs.
        #[arg(long)]
        count: usize,
        /// `uniform`, `paper`, or three comma-separated weights
        /// (raindrop,rain_fog,snow).
        #[arg(long, default_value = "uniform")]
        mix: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Scene side length (defaults to config image_size).
        #[arg(long)]
        size: Option<usize>,
        /// Degradation intensity in (0, 1].
        #[arg(long)]
        intensity: Option<f32>,
    },
    /// Train on a generated manifest and write a checkpoint.
    Train {
        /// Dataset manifest (falls back to config `data`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output checkpoint path (falls back to config `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Run exactly this many optimizer steps instead of the full
        /// epoch schedule.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Restore a degraded image file with a trained checkpoint.
    Restore {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Per-kind and overall PSNR/SSIM of a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Finite-difference verification of every op plus a full-network probe.
    Gradcheck {
        /// Deliberately falsify one comparison (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Write decoder attention maps as grayscale PNG files.
    AttnDump {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated query indices; all queries when omitted.
        #[arg(long)]
        queries: Option<String>,
    },
}

fn config_key_help() -> String {
    format!(
        "Config file keys (one `key = value` per line; unknown keys are rejected):\n{}",
        RunConfig::describe_keys()
    )
}

/// Parses argv and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 2 on usage errors and 0 for --help/--version.
            e.exit();
        }
    };
    let verbose = cli.verbose;
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e @ (Error::Input(_) | Error::Config(_))) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            if verbose {
                eprintln!("error: {e:?}");
            } else {
                eprintln!("error: {e}");
            }
            1
        }
    }
}

fn load_config(cli_config: &Option<PathBuf>, cli_seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match cli_config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli_seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config, cli.seed)?;
    match cli.command {
        Command::Gen { count, mix, out, size, intensity } => cmd_gen(
            &cfg,
            count,
            &mix,
            &out,
            size.unwrap_or(cfg.image_size),
            intensity.unwrap_or(cfg.intensity),
            cli.verbose,
        ),
        Command::Train { data, out, resume, steps } => {
            cmd_train(&cfg, data, out, resume, steps)
        }
        Command::Restore { ckpt, input, output } => cmd_restore(&cfg, &ckpt, &input, &output),
        Command::Eval { ckpt, data } => cmd_eval(&cfg, &ckpt, data),
        Command::Gradcheck { corrupt } => cmd_gradcheck(&cfg, corrupt),
        Command::AttnDump { ckpt, input, out, queries } => {
            cmd_attn_dump(&cfg, &ckpt, &input, &out, queries.as_deref())
        }
    }
}

fn parse_mix(mix: &str) -> Result<MixWeights> {
    match mix {
        "uniform" => Ok(MixWeights::uniform()),
        "paper" | "paper-mix" => Ok(MixWeights::paper()),
        custom => {
            let parts: Vec<f64> = custom
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| Error::Input(format!("bad mix weight `{p}`")))
                })
                .collect::<Result<_>>()?;
            if parts.len() != 3 {
                return Err(Error::Input(
                    "mix must be `uniform`, `paper`, or raindrop,rain_fog,snow weights".to_string(),
                ));
            }
            let m = MixWeights { raindrop: parts[0], rain_fog: parts[1], snow: parts[2] };
            m.validate()?;
            Ok(m)
        }
    }
}

fn cmd_gen(
    cfg: &RunConfig,
    count: usize,
    mix: &str,
    out: &Path,
    size: usize,
    intensity: f32,
    verbose: bool,
) -> Result<()> {
    let weights = parse_mix(mix)?;
    let manifest = gen_dataset(count, &weights, cfg.seed, out, size, intensity)?;
    if verbose {
        let rows = read_manifest(&manifest)?;
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for row in &rows {
            *counts.entry(row.kind.as_str()).or_default() += 1;
        }
        for (kind, n) in counts {
            println!("{kind}\t{n}");
        }
    }
    println!("{}", manifest.display());
    Ok(())
}

/// Builds the configured network and loads a checkpoint into it.
fn load_trained(cfg: &RunConfig, ckpt: &Path) -> Result<(Restorer, ParamStore<f32>, AdamState)> {
    let (net, fresh) = Restorer::init::<f32>(&cfg.network, cfg.seed)?;
    let (store, opt) = checkpoint::load(ckpt)?;
    checkpoint::verify_matches(&store, &fresh)?;
    Ok((net, store, opt))
}

fn cmd_train(
    cfg: &RunConfig,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    resume: Option<PathBuf>,
    steps: Option<u64>,
) -> Result<()> {
    let manifest = data
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::Input("no dataset: pass --data or set `data` in config".to_string()))?;
    let out_ckpt = out
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Input("no output: pass --out or set `out` in config".to_string()))?;

    let (net, mut store) = Restorer::init::<f32>(&cfg.network, cfg.seed)?;
    let mut opt = AdamState::new(&store);
    if let Some(resume_path) = resume {
        let (loaded, loaded_opt) = checkpoint::load(&resume_path)?;
        checkpoint::verify_matches(&loaded, &store)?;
        store = loaded;
        opt = loaded_opt;
    }
    let train_cfg = TrainConfig {
        schedule: cfg.schedule.clone(),
        seed: cfg.seed,
        loss: cfg.loss,
        grad_clip: cfg.grad_clip,
        checkpoint_every_epochs: cfg.checkpoint_every,
        steps,
    };
    let report = train(&net, &mut store, &mut opt, &manifest, &out_ckpt, &train_cfg, &mut |line| {
        println!("{line}");
    })?;
    println!(
        "done\tsteps {}\tinitial_loss {:.6}\tfinal_loss {:.6}\tparams {}",
        report.steps_run,
        report.initial_loss,
        report.final_loss,
        store.total_scalars()
    );
    Ok(())
}

fn cmd_restore(cfg: &RunConfig, ckpt: &Path, input: &Path, output: &Path) -> Result<()> {
    let (net, store, _) = load_trained(cfg, ckpt)?;
    let image = load_image(input)?;
    let net_in = batch_of_one(&to_network_range(&image));
    let restored = net.restore(&store, &net_in)?;
    let out_img = to_image_range(&strip_batch(&restored));
    save_image(output, &out_img)?;
    println!("{}", output.display());
    Ok(())
}

fn batch_of_one(t: &Tensor<f32>) -> Tensor<f32> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    Tensor::new(shape, t.data().to_vec()).expect("batch of one")
}

fn strip_batch(t: &Tensor<f32>) -> Tensor<f32> {
    Tensor::new(t.shape()[1..].to_vec(), t.data().to_vec()).expect("strip batch")
}

fn cmd_eval(cfg: &RunConfig, ckpt: &Path, data: Option<PathBuf>) -> Result<()> {
    let manifest = data
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::Input("no dataset: pass --data or set `data` in config".to_string()))?;
    let (net, store, _) = load_trained(cfg, ckpt)?;
    let rows = read_manifest(&manifest)?;
    if rows.is_empty() {
        return Err(Error::Input(format!("{}: empty manifest", manifest.display())));
    }

    // Per kind: metrics of the degraded input pair and of the restoration.
    #[derive(Default)]
    struct Scores {
        input_psnr: Vec<f64>,
        input_ssim: Vec<f64>,
        psnr: Vec<f64>,
        ssim: Vec<f64>,
    }
    let mut by_kind: BTreeMap<&'static str, Scores> = BTreeMap::new();
    for row in &rows {
        let clean = load_image(&row.clean)?;
        let degraded = load_image(&row.degraded)?;
        let restored = net.restore(&store, &batch_of_one(&to_network_range(&degraded)))?;
        let restored = to_image_range(&strip_batch(&restored));
        let entry = by_kind.entry(row.kind.as_str()).or_default();
        entry.input_psnr.push(psnr(&clean, &degraded, 1.0));
        entry.input_ssim.push(ssim(&clean, &degraded)?);
        entry.psnr.push(psnr(&clean, &restored, 1.0));
        entry.ssim.push(ssim(&clean, &restored)?);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut overall = Scores::default();
    for kind in WeatherKind::ALL {
        if let Some(s) = by_kind.get(kind.as_str()) {
            let k = kind.as_str();
            println!("{}", metric_line(&format!("{k}.input.psnr"), mean(&s.input_psnr)));
            println!("{}", metric_line(&format!("{k}.input.ssim"), mean(&s.input_ssim)));
            println!("{}", metric_line(&format!("{k}.psnr"), mean(&s.psnr)));
            println!("{}", metric_line(&format!("{k}.ssim"), mean(&s.ssim)));
            overall.input_psnr.extend_from_slice(&s.input_psnr);
            overall.input_ssim.extend_from_slice(&s.input_ssim);
            overall.psnr.extend_from_slice(&s.psnr);
            overall.ssim.extend_from_slice(&s.ssim);
        }
    }
    println!("{}", metric_line("overall.input.psnr", mean(&overall.input_psnr)));
    println!("{}", metric_line("overall.input.ssim", mean(&overall.input_ssim)));
    println!("{}", metric_line("overall.psnr", mean(&overall.psnr)));
    println!("{}", metric_line("overall.ssim", mean(&overall.ssim)));
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, corrupt: bool) -> Result<()> {
    let mut reports = check_all_ops(cfg.seed, corrupt);
    reports.push(full_network_probe(cfg.seed, 20)?);
    let mut all_pass = true;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        println!("{}\t{:.3e}\t{:.0e}\t{}", r.name, r.max_err, r.tolerance, status);
        all_pass &= r.passed();
    }
    if !all_pass {
        return Err(Error::Contract("gradient check failed".to_string()));
    }
    Ok(())
}

fn cmd_attn_dump(
    cfg: &RunConfig,
    ckpt: &Path,
    input: &Path,
    out: &Path,
    queries: Option<&str>,
) -> Result<()> {
    if !cfg.network.weather_queries {
        return Err(Error::Input(
            "attention dump needs weather_queries=on in the network config".to_string(),
        ));
    }
    let (net, store, _) = load_trained(cfg, ckpt)?;
    let image = load_image(input)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let net_in = batch_of_one(&to_network_range(&image));
    let (_, weights) = net.restore_with_attention(&store, &net_in)?;
    let weights = weights.expect("decoder enabled");
    let ws = weights.shape().to_vec(); // [1, heads, Kq, N4]
    let (heads, kq, n4) = (ws[1], ws[2], ws[3]);
    let factor = cfg.network.stride_product();
    let (h4, w4) = (h / factor, w / factor);
    if h4 * w4 != n4 {
        return Err(Error::Contract(format!(
            "attention length {n4} does not match the {h4}x{w4} deepest grid"
        )));
    }

    let indices: Vec<usize> = match queries {
        Some(list) => list
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Input(format!("bad query index `{p}`")))
            })
            .collect::<Result<_>>()?,
        None => (0..kq).collect(),
    };
    for &q in &indices {
        if q >= kq {
            return Err(Error::Input(format!("query index {q} out of range (Kq = {kq})")));
        }
    }

    std::fs::create_dir_all(out)?;
    for &q in &indices {
        // Head-mean attention row for this query.
        let mut map = vec![0.0f32; n4];
        for head in 0..heads {
            let base = (head * kq + q) * n4;
            for (acc, &v) in map.iter_mut().zip(&weights.data()[base..base + n4]) {
                *acc += v / heads as f32;
            }
        }
        // Upscale to input resolution, then min-max normalize per map.
        let mut full = Tensor::zeros(&[1, h, w]);
        for y in 0..h {
            for x in 0..w {
                full.data_mut()[y * w + x] = map[(y / factor) * w4 + (x / factor)];
            }
        }
        let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
        for &v in full.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi > lo {
            for v in full.data_mut() {
                *v = (*v - lo) / (hi - lo);
            }
        } else {
            for v in full.data_mut() {
                *v = 0.0;
            }
        }
        write_png(&out.join(format!("query_{q:02}.png")), &full)?;
    }
    println!("{}\t{} maps", out.display(), indices.len());
    Ok(())
}
