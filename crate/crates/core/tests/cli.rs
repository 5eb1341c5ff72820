//! End-to-end checks of the command-line surface through the compiled
//! binary: generation, training, restoration, evaluation, gradient checks
//! and attention dumps on a deliberately tiny configuration.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_deweather")
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small network that still exercises every component.
const TINY_CFG: &str = "\
depths = 1,1,1,1
dims = 8,16,24,32
heads = 1,1,2,2
reductions = 4,2,2,1
intra_reductions = 8,8,4,1
query_count = 4
decoder_depth = 1
batch_size = 2
image_size = 32
seed = 5
";

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY_CFG).unwrap();

    // gen: idempotent, manifest printed on stdout.
    let gen = run(
        &["gen", "--count", "4", "--mix", "uniform", "--out", "data", "--config", "tiny.cfg"],
        dir.path(),
    );
    assert_ok(&gen);
    let manifest = dir.path().join("data/manifest.tsv");
    assert!(manifest.exists());
    let first = std::fs::read(&manifest).unwrap();
    assert_ok(&run(
        &["gen", "--count", "4", "--mix", "uniform", "--out", "data", "--config", "tiny.cfg"],
        dir.path(),
    ));
    assert_eq!(first, std::fs::read(&manifest).unwrap(), "gen is not idempotent");

    // train a handful of steps.
    let train = run(
        &[
            "train",
            "--config",
            "tiny.cfg",
            "--data",
            "data/manifest.tsv",
            "--out",
            "tiny.ckpt",
            "--steps",
            "4",
        ],
        dir.path(),
    );
    assert_ok(&train);
    assert!(dir.path().join("tiny.ckpt").exists());
    let stdout = String::from_utf8_lossy(&train.stdout);
    assert!(stdout.contains("epoch 0"), "missing epoch log: {stdout}");

    // restore: output dims equal input dims.
    let degraded = dir.path().join("data/pair_00000_degraded.twimg");
    let restore = run(
        &[
            "restore",
            "--config",
            "tiny.cfg",
            "--ckpt",
            "tiny.ckpt",
            "--input",
            degraded.to_str().unwrap(),
            "--output",
            "restored.twimg",
        ],
        dir.path(),
    );
    assert_ok(&restore);
    let original = deweather::imgio::read_raw(&degraded).unwrap();
    let restored = deweather::imgio::read_raw(&dir.path().join("restored.twimg")).unwrap();
    assert_eq!(original.shape(), restored.shape());

    // eval prints per-kind and overall metric lines grouped by kind labels.
    let eval = run(
        &["eval", "--config", "tiny.cfg", "--ckpt", "tiny.ckpt", "--data", "data/manifest.tsv"],
        dir.path(),
    );
    assert_ok(&eval);
    let stdout = String::from_utf8_lossy(&eval.stdout);
    for needle in ["raindrop.psnr", "rain_fog.ssim", "snow.psnr", "overall.psnr", "overall.ssim"] {
        assert!(stdout.contains(needle), "eval output missing {needle}: {stdout}");
    }

    // attn-dump writes one grayscale map per query.
    let dump = run(
        &[
            "attn-dump",
            "--config",
            "tiny.cfg",
            "--ckpt",
            "tiny.ckpt",
            "--input",
            degraded.to_str().unwrap(),
            "--out",
            "maps",
        ],
        dir.path(),
    );
    assert_ok(&dump);
    let maps: Vec<_> = std::fs::read_dir(dir.path().join("maps")).unwrap().collect();
    assert_eq!(maps.len(), 4, "expected one map per query");

    // Maps differ across degradation kinds: pair 0 is raindrop, pair 3 snow
    // under the uniform 4-sample apportionment.
    let other = dir.path().join("data/pair_00003_degraded.twimg");
    assert_ok(&run(
        &[
            "attn-dump",
            "--config",
            "tiny.cfg",
            "--ckpt",
            "tiny.ckpt",
            "--input",
            other.to_str().unwrap(),
            "--out",
            "maps_other",
        ],
        dir.path(),
    ));
    let a = std::fs::read(dir.path().join("maps/query_00.png")).unwrap();
    let b = std::fs::read(dir.path().join("maps_other/query_00.png")).unwrap();
    assert_ne!(a, b, "attention maps identical across degradation kinds");

    // out-of-range query index is a usage error.
    let bad = run(
        &[
            "attn-dump",
            "--config",
            "tiny.cfg",
            "--ckpt",
            "tiny.ckpt",
            "--input",
            degraded.to_str().unwrap(),
            "--out",
            "maps2",
            "--queries",
            "99",
        ],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_on_identical_pairs_hits_sentinels() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY_CFG).unwrap();
    assert_ok(&run(
        &["gen", "--count", "2", "--out", "data", "--config", "tiny.cfg"],
        dir.path(),
    ));
    // Re-point each row's degraded column at the clean image, so the input
    // pair is (clean, clean).
    let manifest = dir.path().join("data/manifest.tsv");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let doctored: String = text
        .lines()
        .map(|l| {
            let mut parts: Vec<&str> = l.split('\t').collect();
            parts[1] = parts[0];
            parts.join("\t") + "\n"
        })
        .collect();
    std::fs::write(&manifest, doctored).unwrap();

    assert_ok(&run(
        &[
            "train",
            "--config",
            "tiny.cfg",
            "--data",
            "data/manifest.tsv",
            "--out",
            "t.ckpt",
            "--steps",
            "1",
        ],
        dir.path(),
    ));
    let eval = run(
        &["eval", "--config", "tiny.cfg", "--ckpt", "t.ckpt", "--data", "data/manifest.tsv"],
        dir.path(),
    );
    assert_ok(&eval);
    let stdout = String::from_utf8_lossy(&eval.stdout);
    assert!(stdout.contains("overall.input.psnr\tinf"), "psnr sentinel missing: {stdout}");
    let ssim_line = stdout
        .lines()
        .find(|l| l.starts_with("overall.input.ssim"))
        .expect("input ssim line");
    let value: f64 = ssim_line.split('\t').nth(1).unwrap().parse().unwrap();
    assert!((value - 1.0).abs() < 1e-6, "{ssim_line}");
}

#[test]
fn usage_errors_exit_2_missing_files_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let unknown_flag = run(&["gen", "--count", "2", "--out", "x", "--frobnicate"], dir.path());
    assert_eq!(unknown_flag.status.code(), Some(2));

    let bad_mix = run(&["gen", "--count", "2", "--mix", "0.5,0.5", "--out", "x"], dir.path());
    assert_eq!(bad_mix.status.code(), Some(2));

    let missing = run(
        &["eval", "--ckpt", "nope.ckpt", "--data", "nope.tsv"],
        dir.path(),
    );
    assert_eq!(missing.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert!(!stderr.is_empty());
}

#[test]
fn gradcheck_command_reports_and_fails_on_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(&["gradcheck"], dir.path());
    assert_ok(&ok);
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("full_network"), "{stdout}");
    // Every line is one op report ending in PASS.
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines.len() >= 20);
    for line in &lines {
        assert!(line.ends_with("PASS"), "unexpected line: {line}");
    }
    // Each op name appears exactly once.
    let mut names: Vec<&str> = lines.iter().map(|l| l.split('\t').next().unwrap()).collect();
    let total = names.len();
    names.sort_unstable();
    names.dedup();
    assert_eq!(total, names.len(), "duplicate op in report");

    let corrupted = run(&["gradcheck", "--corrupt"], dir.path());
    assert_eq!(corrupted.status.code(), Some(1));
}
