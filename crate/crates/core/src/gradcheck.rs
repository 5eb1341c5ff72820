//! Central finite-difference verification of recorded gradients.
//!
//! Runs in `f64` check mode: 32-bit arithmetic is too coarse for reliable
//! difference quotients. Step h = 1e-3; relative tolerance 1e-3 per op, with
//! an absolute fallback of 1e-6 where both sides are smaller than 1e-6.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

pub const FD_STEP: f64 = 1e-3;
pub const OP_TOLERANCE: f64 = 1e-3;
pub const NETWORK_TOLERANCE: f64 = 1e-2;
const SMALL: f64 = 1e-6;

/// Relative discrepancy between an analytic and a numeric derivative, with
/// the small-magnitude absolute fallback.
pub fn discrepancy(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < SMALL {
        // Report abs error scaled so that the shared tolerance applies.
        return (analytic - numeric).abs() / SMALL * OP_TOLERANCE;
    }
    (analytic - numeric).abs() / scale
}

/// Checks the recorded backward of `build` (inputs -> scalar loss var)
/// against central finite differences on every input coordinate.
/// Returns the maximum discrepancy.
pub fn check_fn(
    build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
) -> Result<f64> {
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.data(loss)[0])
    };

    // Analytic gradients in one recorded pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().requires_grad(true)))
        .collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).expect("leaf marked requires_grad").to_vec())
        .collect();

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for i in 0..tensor.numel() {
            let orig = tensor.data()[i];
            work[ti].data_mut()[i] = orig + FD_STEP;
            let up = eval(&work)?;
            work[ti].data_mut()[i] = orig - FD_STEP;
            let down = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(discrepancy(analytic[ti][i], numeric));
        }
    }
    Ok(worst)
}

/// Uniform random tensor in [-1, 1].
pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Outcome of one registered gradient check.
pub struct OpReport {
    pub name: &'static str,
    pub max_err: f64,
    pub tolerance: f64,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_err <= self.tolerance
    }
}

/// Runs the finite-difference suite over every differentiable op. Each op
/// appears exactly once. `corrupt` deliberately falsifies one comparison and
/// exists as a negative control for the harness itself.
pub fn check_all_ops(seed: u64, corrupt: bool) -> Vec<OpReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    let mut run = |name: &'static str,
                   shapes: &[Vec<usize>],
                   build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
                   rng: &mut ChaCha8Rng| {
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(s, rng)).collect();
        let max_err = check_fn(build, &inputs).expect("gradcheck build failed");
        reports.push(OpReport {
            name,
            max_err,
            tolerance: OP_TOLERANCE,
        });
    };

    run(
        "add",
        &[vec![2, 3], vec![3]],
        &|g, v| {
            let y = g.add(v[0], v[1])?;
            g.sum_all(y)
        },
        &mut rng,
    );
    run(
        "sub",
        &[vec![2, 3], vec![2, 3]],
        &|g, v| {
            let y = g.sub(v[0], v[1])?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "mul",
        &[vec![4], vec![4]],
        &|g, v| {
            let y = g.mul(v[0], v[1])?;
            g.sum_all(y)
        },
        &mut rng,
    );
    run(
        "add_scalar",
        &[vec![5]],
        &|g, v| {
            let y = g.add_scalar(v[0], 0.37)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "mul_scalar",
        &[vec![5]],
        &|g, v| {
            let y = g.mul_scalar(v[0], -1.7)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "tanh",
        &[vec![6]],
        &|g, v| {
            let y = g.tanh(v[0])?;
            g.sum_all(y)
        },
        &mut rng,
    );
    run(
        "gelu",
        &[vec![6]],
        &|g, v| {
            let y = g.gelu(v[0])?;
            g.sum_all(y)
        },
        &mut rng,
    );
    run(
        "huber",
        // Scale so both branches are hit while no coordinate lands within
        // the FD stencil of the |x| = 1 joint (checked for this seed).
        &[vec![8]],
        &|g, v| {
            let scaled = g.mul_scalar(v[0], 2.4)?;
            let y = g.huber(scaled)?;
            g.sum_all(y)
        },
        &mut rng,
    );
    run(
        "matmul",
        &[vec![3, 3], vec![3, 3]],
        &|g, v| {
            let y = g.matmul(v[0], v[1])?;
            g.sum_all(y)
        },
        &mut rng,
    );
    run(
        "matmul_batched",
        &[vec![2, 2, 3], vec![3, 2]],
        &|g, v| {
            let y = g.matmul(v[0], v[1])?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "softmax",
        &[vec![5]],
        &|g, v| {
            // Weighted sum makes the loss sensitive to every softmax output.
            let s = g.softmax(v[0], 0)?;
            let w = g.constant(Tensor::from_fn(&[5], |i| (i as f64 + 1.0) * 0.3));
            let y = g.mul(s, w)?;
            g.sum_all(y)
        },
        &mut rng,
    );
    run(
        "layernorm",
        &[vec![2, 4], vec![4], vec![4]],
        &|g, v| {
            let y = g.layernorm(v[0], v[1], v[2], 1e-6)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "conv2d",
        &[vec![1, 2, 4, 4], vec![3, 2, 3, 3], vec![3]],
        &|g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1, 1)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "conv2d_strided_grouped",
        &[vec![1, 4, 4, 4], vec![4, 1, 3, 3], vec![4]],
        &|g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1, 4)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "reshape",
        &[vec![4, 3]],
        &|g, v| {
            let y = g.reshape(v[0], &[2, 6])?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "permute",
        &[vec![2, 3, 4]],
        &|g, v| {
            let y = g.permute(v[0], &[2, 0, 1])?;
            let w = g.constant(Tensor::from_fn(&[4, 2, 3], |i| (i % 7) as f64 * 0.2 - 0.5));
            let y = g.mul(y, w)?;
            g.sum_all(y)
        },
        &mut rng,
    );
    run(
        "concat",
        &[vec![2, 2], vec![2, 3]],
        &|g, v| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "slice",
        &[vec![3, 4]],
        &|g, v| {
            let y = g.slice(v[0], 1, 1, 2)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "broadcast_to",
        &[vec![1, 3]],
        &|g, v| {
            let y = g.broadcast_to(v[0], &[4, 2, 3])?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "upsample_nearest",
        &[vec![1, 2, 2, 3]],
        &|g, v| {
            let y = g.upsample_nearest(v[0], 2)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );
    run(
        "sum",
        &[vec![3, 2]],
        &|g, v| {
            let y = g.mul(v[0], v[0])?;
            g.sum_all(y)
        },
        &mut rng,
    );
    run(
        "mean",
        &[vec![3, 2]],
        &|g, v| {
            let y = g.mul(v[0], v[0])?;
            g.mean_all(y)
        },
        &mut rng,
    );
    run(
        "mean_axis",
        &[vec![2, 3, 2]],
        &|g, v| {
            let y = g.mean_axis(v[0], 1)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        },
        &mut rng,
    );

    if corrupt {
        if let Some(r) = reports.last_mut() {
            r.max_err += 1.0;
        }
    }
    reports
}

/// End-to-end probe: builds the full network in f64 on a 1x3x32x32 input,
/// records one backward pass of the total loss, then verifies the gradient
/// at `n_coords` randomly sampled parameter coordinates against central
/// finite differences.
pub fn full_network_probe(seed: u64, n_coords: usize) -> Result<OpReport> {
    use crate::loss::{LossConfig, LossModule};
    use crate::model::{NetworkConfig, Restorer};

    let cfg = NetworkConfig::default();
    let (net, mut store) = Restorer::init::<f64>(&cfg, seed)?;
    let losses = LossModule::<f64>::new(LossConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd_ef01);
    let input = rand_tensor(&[1, 3, 32, 32], &mut rng);
    let target = rand_tensor(&[1, 3, 32, 32], &mut rng);

    let eval = |store: &crate::params::ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let p = store.bind_all_frozen(&mut g);
        let x = g.constant(input.clone());
        let t = g.constant(target.clone());
        let out = net.forward(&mut g, &p, x)?;
        let loss = losses.total(&mut g, out, t)?;
        Ok(g.data(loss)[0])
    };

    // One recorded pass for the analytic gradients.
    let analytic = {
        let mut g = Graph::new();
        let p = store.bind_all(&mut g);
        let x = g.constant(input.clone());
        let t = g.constant(target.clone());
        let out = net.forward(&mut g, &p, x)?;
        let loss = losses.total(&mut g, out, t)?;
        g.backward(loss)?;
        g.export_param_grads(store.len())
    };

    // Sample coordinates uniformly over all trainable scalars.
    let sizes: Vec<usize> = store.iter().map(|(_, t)| t.numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst = 0.0f64;
    for _ in 0..n_coords {
        let mut flat = rng.gen_range(0..total);
        let mut pi = 0usize;
        while flat >= sizes[pi] {
            flat -= sizes[pi];
            pi += 1;
        }
        let id = crate::params::ParamId::from_index(pi);
        let orig = store.get(id).data()[flat];
        store.get_mut(id).data_mut()[flat] = orig + FD_STEP;
        let up = eval(&store)?;
        store.get_mut(id).data_mut()[flat] = orig - FD_STEP;
        let down = eval(&store)?;
        store.get_mut(id).data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[pi].as_ref().expect("trainable param has grad")[flat];
        worst = worst.max(discrepancy(a, numeric));
    }
    Ok(OpReport {
        name: "full_network",
        max_err: worst,
        tolerance: NETWORK_TOLERANCE,
    })
}
