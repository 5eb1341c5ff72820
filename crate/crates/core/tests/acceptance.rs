//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Tests serialize on a global lock so timing-sensitive checks and the long
//! overfit run get the machine to themselves.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deweather::attention::{AttentionConfig, SelfAttention};
use deweather::checkpoint;
use deweather::degrade::{
    self, apply_raindrop, apply_rain_fog, apply_snow, gen_dataset, raindrop_composite,
    rain_fog_composite, snow_composite, MixWeights, WeatherKind,
};
use deweather::gradcheck::{check_all_ops, full_network_probe};
use deweather::imgio::{read_manifest, read_raw, to_image_range};
use deweather::loss::{smooth_l1, LossConfig, LossModule};
use deweather::metrics::{psnr, ssim};
use deweather::model::{Ablation, NetworkConfig, Restorer};
use deweather::optim::{lr_at, AdamState, Schedule};
use deweather::params::ParamStore;
use deweather::tensor::{Graph, Tensor};
use deweather::train::{train, TrainConfig};

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(()))
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn batch_of_one(t: &Tensor<f32>) -> Tensor<f32> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    Tensor::new(shape, t.data().to_vec()).unwrap()
}

fn strip_batch(t: &Tensor<f32>) -> Tensor<f32> {
    Tensor::new(t.shape()[1..].to_vec(), t.data().to_vec()).unwrap()
}

#[test]
fn criterion_01_gradient_suite() {
    let _guard = serial();
    let started = Instant::now();
    let mut reports = check_all_ops(2024, false);
    reports.push(full_network_probe(2024, 20).unwrap());
    for r in &reports {
        assert!(
            r.passed(),
            "criterion 1 FAIL: op `{}` max rel err {:.3e} > {:.0e}",
            r.name,
            r.max_err,
            r.tolerance
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() <= 120,
        "criterion 1 FAIL: gradient suite took {elapsed:?} (limit 2 min)"
    );
    println!(
        "criterion 1 PASS: {} ops + full-network probe under tolerance in {:.1?}",
        reports.len() - 1,
        elapsed
    );
}

/// Plain O(N^2) multi-head attention computed with independent loops from
/// the same projection weights.
#[allow(clippy::too_many_arguments)]
fn naive_attention(
    x: &[f32],
    n: usize,
    c: usize,
    heads: usize,
    wq: &[f32],
    wk: &[f32],
    wv: &[f32],
    wo: &[f32],
    bo: &[f32],
) -> Vec<f32> {
    let d = c / heads;
    let project = |w: &[f32]| {
        let mut out = vec![0.0f32; n * c];
        for t in 0..n {
            for j in 0..c {
                let mut s = 0.0;
                for i in 0..c {
                    s += x[t * c + i] * w[i * c + j];
                }
                out[t * c + j] = s;
            }
        }
        out
    };
    let q = project(wq);
    let k = project(wk);
    let v = project(wv);
    let mut merged = vec![0.0f32; n * c];
    let scale = 1.0 / (d as f32).sqrt();
    for h in 0..heads {
        for t in 0..n {
            let mut scores = vec![0.0f32; n];
            for u in 0..n {
                let mut s = 0.0;
                for e in 0..d {
                    s += q[t * c + h * d + e] * k[u * c + h * d + e];
                }
                scores[u] = s * scale;
            }
            let mx = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut denom = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - mx).exp();
                denom += *s;
            }
            for e in 0..d {
                let mut acc = 0.0;
                for u in 0..n {
                    acc += scores[u] / denom * v[u * c + h * d + e];
                }
                merged[t * c + h * d + e] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; n * c];
    for t in 0..n {
        for j in 0..c {
            let mut s = bo[j];
            for i in 0..c {
                s += merged[t * c + i] * wo[i * c + j];
            }
            out[t * c + j] = s;
        }
    }
    out
}

#[test]
fn criterion_02_attention_equivalence_and_cost() {
    let _guard = serial();
    let c = 16;
    let heads = 2;
    let cfg = AttentionConfig::new(c, heads, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut store = ParamStore::<f32>::new();
    let attn = SelfAttention::init(&mut store, &mut rng, "a", cfg).unwrap();
    attn.params.set_identity_recovery(&mut store);

    for n in [4usize, 16, 64] {
        let x = Tensor::from_fn(&[1, n, c], |i| ((i * 29 % 23) as f32 - 11.0) * 0.08);
        let mut g = Graph::new();
        let p = store.bind_all_frozen(&mut g);
        let xv = g.constant(x.clone());
        let out = attn.forward(&mut g, &p, xv).unwrap();
        let fast = g.data(out).to_vec();

        let grab = |id: deweather::params::ParamId| store.get(id).data().to_vec();
        let reference = naive_attention(
            x.data(),
            n,
            c,
            heads,
            &grab(attn.params.query.w),
            &grab(attn.params.key.w),
            &grab(attn.params.value.w),
            &grab(attn.params.out.w),
            &grab(attn.params.out.b.unwrap()),
        );
        let max_diff = fast
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(
            max_diff < 1e-6,
            "criterion 2 FAIL: N={n} disagrees with naive oracle by {max_diff:.2e}"
        );
    }

    // Cost: R=4 strictly faster than R=1 at N=1024, C=32 (median of 5).
    let time_attention = |reduction: usize| -> f64 {
        let cfg = AttentionConfig::new(32, 2, reduction).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::<f32>::new();
        let attn = SelfAttention::init(&mut store, &mut rng, "t", cfg).unwrap();
        let x = Tensor::from_fn(&[1, 1024, 32], |i| ((i * 31 % 97) as f32 - 48.0) * 0.01);
        let mut times: Vec<f64> = (0..5)
            .map(|_| {
                let mut g = Graph::new();
                let p = store.bind_all_frozen(&mut g);
                let xv = g.constant(x.clone());
                let t = Instant::now();
                let out = attn.forward(&mut g, &p, xv).unwrap();
                let dt = t.elapsed().as_secs_f64();
                assert!(g.value(out).is_finite());
                dt
            })
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times[2]
    };
    let t_r1 = time_attention(1);
    let t_r4 = time_attention(4);
    assert!(
        t_r4 < t_r1,
        "criterion 2 FAIL: R=4 median {t_r4:.4}s not faster than R=1 median {t_r1:.4}s"
    );
    println!(
        "criterion 2 PASS: naive-oracle match at N in {{4,16,64}}; R=4 {:.1}x faster at N=1024",
        t_r1 / t_r4
    );
}

#[test]
fn criterion_03_shape_law() {
    let _guard = serial();
    let cfg = NetworkConfig::default();
    let (net, store) = Restorer::init::<f32>(&cfg, 7).unwrap();
    for size in [32usize, 64, 96] {
        let img = Tensor::from_fn(&[1, 3, size, size], |i| ((i % 201) as f32 / 100.5) - 1.0);
        let mut g = Graph::new();
        let p = store.bind_all_frozen(&mut g);
        let x = g.constant(img.clone());
        let pyramid = net.encoder.forward(&mut g, &p, x).unwrap();
        let mut expect = size;
        for (i, stage) in pyramid.stages.iter().enumerate() {
            expect /= cfg.strides[i];
            assert_eq!(
                (stage.h, stage.w),
                (expect, expect),
                "criterion 3 FAIL: stage {} of {size} input",
                i + 1
            );
        }
        let out = net.restore(&store, &img).unwrap();
        assert_eq!(out.shape(), img.shape(), "criterion 3 FAIL: restore changed dims at {size}");
        assert!(
            out.data().iter().all(|v| v.abs() < 1.0),
            "criterion 3 FAIL: tail output escaped (-1, 1) at {size}"
        );
    }
    println!("criterion 3 PASS: restore preserves 32/64/96 dims; pyramid follows strides; tail in (-1,1)");
}

#[test]
fn criterion_04_degradation_exactness() {
    let _guard = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (h, w) = (12, 12);
    let unit = |rng: &mut ChaCha8Rng, shape: &[usize]| {
        Tensor::from_fn(shape, |_| rng.gen_range(0.0f32..1.0))
    };
    for case in 0..100 {
        let b = unit(&mut rng, &[3, h, w]);
        match case % 3 {
            0 => {
                let m = unit(&mut rng, &[1, h, w]);
                let r = unit(&mut rng, &[3, h, w]);
                let pre = raindrop_composite(&b, &m, &r).unwrap();
                for c in 0..3 {
                    for i in 0..h * w {
                        let exact = (1.0 - m.data()[i] as f64) * b.data()[c * h * w + i] as f64
                            + r.data()[c * h * w + i] as f64;
                        ulp_check(pre.data()[c * h * w + i], exact, case, i);
                    }
                }
            }
            1 => {
                let t = unit(&mut rng, &[1, h, w]);
                let streaks: Vec<Tensor<f32>> =
                    (0..2).map(|_| unit(&mut rng, &[1, h, w])).collect();
                let a = [
                    rng.gen_range(0.0f32..1.0),
                    rng.gen_range(0.0f32..1.0),
                    rng.gen_range(0.0f32..1.0),
                ];
                let pre = rain_fog_composite(&b, &t, &streaks, a).unwrap();
                for c in 0..3 {
                    for i in 0..h * w {
                        let sum_r = streaks.iter().map(|s| s.data()[i] as f64).sum::<f64>();
                        let t64 = t.data()[i] as f64;
                        let exact = t64 * (b.data()[c * h * w + i] as f64 + sum_r)
                            + (1.0 - t64) * a[c] as f64;
                        ulp_check(pre.data()[c * h * w + i], exact, case, i);
                    }
                }
            }
            _ => {
                let z = unit(&mut rng, &[1, h, w]);
                let s = unit(&mut rng, &[3, h, w]);
                let pre = snow_composite(&b, &z, &s).unwrap();
                for c in 0..3 {
                    for i in 0..h * w {
                        let z64 = z.data()[i] as f64;
                        let exact = z64 * s.data()[c * h * w + i] as f64
                            + (1.0 - z64) * b.data()[c * h * w + i] as f64;
                        ulp_check(pre.data()[c * h * w + i], exact, case, i);
                    }
                }
            }
        }
    }

    // Limit cases are exact.
    let b = degrade::gen_scene(1, h, w);
    let zero_plane = Tensor::zeros(&[1, h, w]);
    let zero_img = Tensor::zeros(&[3, h, w]);
    let one_plane = Tensor::ones(&[1, h, w]);
    assert_eq!(apply_raindrop(&b, &zero_plane, &zero_img).unwrap().data(), b.data());
    assert_eq!(
        apply_rain_fog(&b, &one_plane, &[zero_plane.clone()], [0.9; 3]).unwrap().data(),
        b.data()
    );
    assert_eq!(apply_snow(&b, &zero_plane, &zero_img).unwrap().data(), b.data());
    let flakes = Tensor::full(&[3, h, w], 0.95);
    assert_eq!(apply_snow(&b, &one_plane, &flakes).unwrap().data(), flakes.data());
    println!("criterion 4 PASS: 100 random composites within one 32-bit ulp; limit cases exact");
}

fn ulp_check(got: f32, exact: f64, case: usize, i: usize) {
    let ulp = (got.abs().max(f32::MIN_POSITIVE) * f32::EPSILON) as f64;
    assert!(
        (got as f64 - exact).abs() <= ulp,
        "criterion 4 FAIL: case {case} pixel {i}: {got} vs {exact}"
    );
}

#[test]
fn criterion_05_loss_anchors() {
    let _guard = serial();
    let mut g = Graph::<f32>::new();
    let half = g.leaf(Tensor::scalar(0.5));
    let two = g.leaf(Tensor::scalar(2.0));
    let zero = g.leaf(Tensor::scalar(0.0));
    let l_half = smooth_l1(&mut g, half, zero).unwrap();
    let l_two = smooth_l1(&mut g, two, zero).unwrap();
    assert_eq!(g.data(l_half), &[0.125], "criterion 5 FAIL: E=0.5 anchor");
    assert_eq!(g.data(l_two), &[1.5], "criterion 5 FAIL: E=2 anchor");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::from_fn(&[1, 3, 16, 16], |_| rng.gen_range(-1.0f32..1.0));
    let y = Tensor::from_fn(&[1, 3, 16, 16], |_| rng.gen_range(-1.0f32..1.0));
    let module = LossModule::<f32>::new(LossConfig::default());
    let mut g = Graph::new();
    let (vx, vy) = (g.leaf(x.clone()), g.leaf(y.clone()));
    let same = module.total(&mut g, vx, vx).unwrap();
    assert_eq!(g.data(same), &[0.0], "criterion 5 FAIL: total(x,x) != 0");

    let zero_lambda =
        LossModule::<f32>::new(LossConfig { lambda_perceptual: 0.0, ..Default::default() });
    let t = zero_lambda.total(&mut g, vx, vy).unwrap();
    let s = smooth_l1(&mut g, vx, vy).unwrap();
    assert_eq!(g.data(t), g.data(s), "criterion 5 FAIL: lambda=0 reduction not exact");
    println!("criterion 5 PASS: smooth-L1 anchors exact; total(x,x)=0; lambda=0 reduction exact");
}

#[test]
fn criterion_06_metric_anchors() {
    let _guard = serial();
    let a = Tensor::from_fn(&[3, 16, 16], |i| ((i / 16 + i % 16) % 2) as f32);
    assert!(psnr(&a, &a, 1.0).is_infinite(), "criterion 6 FAIL: psnr sentinel");

    let base = Tensor::full(&[3, 16, 16], 0.3);
    let off = Tensor::full(&[3, 16, 16], 0.3 + 1.0 / 255.0);
    let db = psnr(&base, &off, 1.0);
    assert!(
        (db - 48.1308).abs() <= 0.01,
        "criterion 6 FAIL: 1/255 difference gives {db:.4} dB"
    );

    let s_same = ssim(&a, &a).unwrap();
    assert!((s_same - 1.0).abs() <= 1e-6, "criterion 6 FAIL: ssim(a,a) = {s_same}");

    // Agreement with an independent direct-window implementation.
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for pair in 0..10 {
        let x = Tensor::from_fn(&[3, 16, 16], |_| rng.gen_range(0.0f32..1.0));
        let y = Tensor::from_fn(&[3, 16, 16], |_| rng.gen_range(0.0f32..1.0));
        let lib = ssim(&x, &y).unwrap();
        let oracle = reference_ssim(&x, &y);
        assert!(
            (lib - oracle).abs() < 1e-3,
            "criterion 6 FAIL: pair {pair}: {lib} vs reference {oracle}"
        );
    }
    println!("criterion 6 PASS: psnr/ssim anchors and reference agreement hold");
}

/// Direct per-window SSIM used as the reference implementation.
fn reference_ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let s = a.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let gray = |t: &Tensor<f32>, i: usize| {
        (0..c).map(|ch| t.data()[ch * h * w + i] as f64).sum::<f64>() / c as f64
    };
    let mut kernel = vec![0.0f64; 121];
    let mut ksum = 0.0;
    for y in 0..11 {
        for x in 0..11 {
            let (dy, dx) = (y as f64 - 5.0, x as f64 - 5.0);
            let v = (-(dy * dy + dx * dx) / 4.5).exp();
            kernel[y * 11 + x] = v;
            ksum += v;
        }
    }
    for v in kernel.iter_mut() {
        *v /= ksum;
    }
    let (c1, c2) = (0.0001, 0.0009);
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..h - 10 {
        for ox in 0..w - 10 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..11 {
                for kx in 0..11 {
                    let i = (oy + ky) * w + ox + kx;
                    let kv = kernel[ky * 11 + kx];
                    let (va, vb) = (gray(a, i), gray(b, i));
                    ma += kv * va;
                    mb += kv * vb;
                    saa += kv * va * va;
                    sbb += kv * vb * vb;
                    sab += kv * va * vb;
                }
            }
            let (va, vb, cab) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cab + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn criterion_07_overfit_restoration() {
    let _guard = serial();
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_dataset(8, &MixWeights::uniform(), 1234, dir.path(), 64, 0.5).unwrap();

    let cfg = NetworkConfig::default();
    let (net, mut store) = Restorer::init::<f32>(&cfg, 7).unwrap();
    let mut opt = AdamState::new(&store);
    let train_cfg = TrainConfig {
        steps: Some(2000),
        seed: 99,
        ..TrainConfig::default()
    };
    let ckpt = dir.path().join("overfit.ckpt");
    let report = train(&net, &mut store, &mut opt, &manifest, &ckpt, &train_cfg, &mut |_| {}).unwrap();

    assert!(
        report.final_loss < 0.2 * report.initial_loss,
        "criterion 7 FAIL: loss {:.5} -> {:.5} is not a 5x reduction",
        report.initial_loss,
        report.final_loss
    );

    let rows = read_manifest(&manifest).unwrap();
    let mut degraded_psnr = 0.0;
    let mut restored_psnr = 0.0;
    for row in &rows {
        let clean = read_raw(&row.clean).unwrap();
        let degraded = read_raw(&row.degraded).unwrap();
        let net_in = batch_of_one(&deweather::imgio::to_network_range(&degraded));
        let restored = to_image_range(&strip_batch(&net.restore(&store, &net_in).unwrap()));
        degraded_psnr += psnr(&clean, &degraded, 1.0).min(100.0);
        restored_psnr += psnr(&clean, &restored, 1.0).min(100.0);
    }
    degraded_psnr /= rows.len() as f64;
    restored_psnr /= rows.len() as f64;
    assert!(
        restored_psnr >= degraded_psnr + 5.0,
        "criterion 7 FAIL: restored {restored_psnr:.2} dB vs degraded {degraded_psnr:.2} dB (+5 needed)"
    );
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() <= 30 * 60,
        "criterion 7 FAIL: overfit run took {elapsed:?} (limit 30 min)"
    );
    println!(
        "criterion 7 PASS: loss {:.4} -> {:.4}; psnr {:.2} -> {:.2} dB in {:.0?}",
        report.initial_loss, report.final_loss, degraded_psnr, restored_psnr, elapsed
    );
}

#[test]
fn criterion_08_ablation_ladder() {
    let _guard = serial();
    let rungs = [
        Ablation::Base,
        Ablation::Hierarchical,
        Ablation::IntraPatch,
        Ablation::WeatherQueries,
    ];
    let counts: Vec<usize> = rungs
        .iter()
        .map(|&r| {
            let cfg = NetworkConfig::default().with_ablation(r);
            let (_, store) = Restorer::init::<f32>(&cfg, 0).unwrap();
            store.total_scalars()
        })
        .collect();
    for pair in counts.windows(2) {
        assert!(
            pair[0] < pair[1],
            "criterion 8 FAIL: parameter ladder not strictly increasing: {counts:?}"
        );
    }

    // Additivity: zero-init intra branch output matches disabled, bitwise.
    let cfg_on = NetworkConfig::default().with_ablation(Ablation::IntraPatch);
    let (net_on, mut store_on) = Restorer::init::<f32>(&cfg_on, 31).unwrap();
    for id in store_on.ids().collect::<Vec<_>>() {
        if store_on.name(id).contains(".intra.") {
            store_on.get_mut(id).data_mut().fill(0.0);
        }
    }
    let cfg_off = NetworkConfig::default().with_ablation(Ablation::Hierarchical);
    let (net_off, mut store_off) = Restorer::init::<f32>(&cfg_off, 77).unwrap();
    for id in store_off.ids().collect::<Vec<_>>() {
        let name = store_off.name(id).to_string();
        let src = store_on.id_of(&name).expect("shared parameter");
        let data = store_on.get(src).data().to_vec();
        store_off.get_mut(id).data_mut().copy_from_slice(&data);
    }
    let img = Tensor::from_fn(&[1, 3, 32, 32], |i| ((i % 19) as f32 - 9.0) * 0.09);
    let out_on = net_on.restore(&store_on, &img).unwrap();
    let out_off = net_off.restore(&store_off, &img).unwrap();
    assert_eq!(
        out_on.data(),
        out_off.data(),
        "criterion 8 FAIL: zero-init intra differs from disabled"
    );
    println!("criterion 8 PASS: ladder {counts:?} strictly increases; zero-init additivity bit-exact");
}

#[test]
fn criterion_09_persistence() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();

    // Bitwise checkpoint round trip.
    let cfg = NetworkConfig::default();
    let (net, mut store) = Restorer::init::<f32>(&cfg, 13).unwrap();
    let mut opt = AdamState::new(&store);
    let ckpt = dir.path().join("roundtrip.ckpt");
    checkpoint::save(&ckpt, &store, &opt).unwrap();
    let (loaded, loaded_opt) = checkpoint::load(&ckpt).unwrap();
    checkpoint::verify_matches(&loaded, &store).unwrap();
    for ((_, a), (_, b)) in loaded.iter().zip(store.iter()) {
        assert_eq!(a.data(), b.data(), "criterion 9 FAIL: checkpoint not bitwise");
    }
    assert_eq!(loaded_opt.step, 0);

    // Resume reproduces the uninterrupted next-step loss exactly.
    let manifest = gen_dataset(4, &MixWeights::uniform(), 21, dir.path(), 32, 0.5).unwrap();
    let mk = |steps| TrainConfig {
        steps: Some(steps),
        seed: 3,
        schedule: Schedule { batch_size: 2, ..Schedule::default() },
        ..TrainConfig::default()
    };
    let ckpt_a = dir.path().join("a.ckpt");
    let report_full =
        train(&net, &mut store, &mut opt, &manifest, &ckpt_a, &mk(4), &mut |_| {}).unwrap();

    let (net_b, mut store_b) = Restorer::init::<f32>(&cfg, 13).unwrap();
    let mut opt_b = AdamState::new(&store_b);
    let ckpt_b = dir.path().join("b.ckpt");
    train(&net_b, &mut store_b, &mut opt_b, &manifest, &ckpt_b, &mk(3), &mut |_| {}).unwrap();
    let (mut store_r, mut opt_r) = checkpoint::load(&ckpt_b).unwrap();
    let report_resumed =
        train(&net_b, &mut store_r, &mut opt_r, &manifest, &ckpt_b, &mk(4), &mut |_| {}).unwrap();
    assert_eq!(
        report_full.final_loss, report_resumed.final_loss,
        "criterion 9 FAIL: resumed step loss differs"
    );

    // Dataset regeneration from the same seed is byte-identical.
    let d1 = dir.path().join("regen1");
    let d2 = dir.path().join("regen2");
    gen_dataset(3, &MixWeights::paper(), 5, &d1, 16, 0.5).unwrap();
    gen_dataset(3, &MixWeights::paper(), 5, &d2, 16, 0.5).unwrap();
    for entry in std::fs::read_dir(&d1).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(d1.join(&name)).unwrap();
        let b = std::fs::read(d2.join(&name)).unwrap();
        assert_eq!(a, b, "criterion 9 FAIL: regenerated {name:?} differs");
    }
    println!("criterion 9 PASS: checkpoints bitwise, resume exact, regeneration byte-identical");
}

#[test]
fn criterion_10_schedule() {
    let _guard = serial();
    let s = Schedule::default();
    let anchors = [(0usize, 0.0002f64), (120, 0.0001), (180, 0.00005)];
    for (epoch, expect) in anchors {
        let lr = lr_at(epoch, &s).unwrap();
        assert_eq!(lr, expect, "criterion 10 FAIL: lr at epoch {epoch}");
    }
    println!("criterion 10 PASS: lr anchors 0.0002 / 0.0001 / 0.00005 at epochs 0 / 120 / 180");
}

#[test]
fn manifest_labels_are_complete() {
    let _guard = serial();
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_dataset(9, &MixWeights::uniform(), 2, dir.path(), 16, 0.5).unwrap();
    let rows = read_manifest(&manifest).unwrap();
    assert_eq!(rows.len(), 9);
    for row in &rows {
        assert!(WeatherKind::ALL.contains(&row.kind));
    }
}
