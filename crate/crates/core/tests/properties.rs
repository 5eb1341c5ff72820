//! Property tests for the spec-level invariants that hold over whole input
//! ranges rather than at anchor points.

use proptest::prelude::*;

use deweather::degrade::{generate_sample, WeatherKind};
use deweather::model::{NetworkConfig, Restorer};
use deweather::optim::{lr_at, Schedule};
use deweather::tensor::{Graph, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Softmax rows sum to 1 for entries anywhere in [-50, 50].
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-50.0f32..50.0, 2..24)) {
        let n = values.len();
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new(vec![n], values).unwrap());
        let s = g.softmax(x, 0).unwrap();
        let sum: f32 = g.data(s).iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6, "sum = {sum}");
    }

    // Broadcast add agrees with explicit expansion and keeps gradients
    // consistent with fan-in (every output contributes once).
    #[test]
    fn broadcast_add_matches_manual_expansion(
        rows in 1usize..5,
        cols in 1usize..5,
        bias in prop::collection::vec(-10.0f32..10.0, 1..5),
    ) {
        let cols = bias.len().max(cols.min(bias.len()));
        let bias = bias[..cols].to_vec();
        let x = Tensor::from_fn(&[rows, cols], |i| (i as f32) * 0.25 - 1.0);
        let mut g = Graph::<f32>::new();
        let xv = g.leaf(x.clone());
        let bv = g.leaf(Tensor::new(vec![cols], bias.clone()).unwrap().requires_grad(true));
        let y = g.add(xv, bv).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                let expect = x.data()[r * cols + c] + bias[c];
                prop_assert_eq!(g.data(y)[r * cols + c], expect);
            }
        }
        let loss = g.sum_all(y).unwrap();
        g.backward(loss).unwrap();
        prop_assert!(g.grad(bv).unwrap().iter().all(|&v| v == rows as f32));
    }

    // Reshape/permute round trips restore the exact data.
    #[test]
    fn permute_round_trip_is_identity(b in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5) {
        let x = Tensor::from_fn(&[b, c, h, w], |i| (i as f32).sin());
        let mut g = Graph::<f32>::new();
        let xv = g.leaf(x.clone());
        let p = g.permute(xv, &[0, 2, 3, 1]).unwrap();
        let back = g.permute(p, &[0, 3, 1, 2]).unwrap();
        prop_assert_eq!(g.data(back), x.data());
    }

    // Every degradation keeps outputs in [0, 1] across seeds and intensities.
    #[test]
    fn degraded_images_stay_in_unit_range(seed in 0u64..500, intensity in 0.05f32..1.0) {
        for kind in WeatherKind::ALL {
            let s = generate_sample(kind, seed, intensity, 16).unwrap();
            prop_assert!(s.degraded.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    // The schedule never increases and always starts at the base rate.
    #[test]
    fn lr_never_increases(halve_a in 1usize..50, gap in 1usize..50) {
        let schedule = Schedule {
            halve_epochs: vec![halve_a, halve_a + gap],
            total_epochs: halve_a + gap + 10,
            ..Schedule::default()
        };
        let mut prev = f64::INFINITY;
        for e in 0..schedule.total_epochs {
            let lr = lr_at(e, &schedule).unwrap();
            prop_assert!(lr <= prev);
            prev = lr;
        }
        prop_assert_eq!(lr_at(0, &schedule).unwrap(), schedule.base_lr);
    }
}

// Restoration output shape equals input shape for every valid size; one
// non-proptest sweep keeps runtime bounded.
#[test]
fn restore_shape_preserved_for_valid_sizes() {
    let cfg = NetworkConfig::default();
    let (net, store) = Restorer::init::<f32>(&cfg, 1).unwrap();
    for size in [32usize, 64] {
        let img = Tensor::from_fn(&[1, 3, size, size], |i| ((i % 11) as f32 - 5.0) * 0.15);
        let out = net.restore(&store, &img).unwrap();
        assert_eq!(out.shape(), img.shape());
    }
}
