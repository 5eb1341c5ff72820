//! Records a few tensor ops on the tape, runs backward, and checks one
//! gradient against a central finite difference by hand.
//!
//! Run with: cargo run --release --example autodiff_basics

use deweather::tensor::{Graph, Tensor};

fn main() {
    let mut g = Graph::<f32>::new();

    // loss = mean((tanh(x · w) - y)^2)
    let x = g.leaf(Tensor::new(vec![2, 3], vec![0.5, -0.2, 0.1, 0.8, 0.3, -0.6]).unwrap());
    let w = g.leaf(
        Tensor::new(vec![3, 1], vec![0.4, -0.3, 0.2])
            .unwrap()
            .requires_grad(true),
    );
    let y = g.leaf(Tensor::new(vec![2, 1], vec![0.1, -0.4]).unwrap());

    let h = g.matmul(x, w).unwrap();
    let a = g.tanh(h).unwrap();
    let d = g.sub(a, y).unwrap();
    let sq = g.mul(d, d).unwrap();
    let loss = g.mean_all(sq).unwrap();
    println!("loss = {:.6}", g.data(loss)[0]);

    g.backward(loss).unwrap();
    let grad = g.grad(w).unwrap().to_vec();
    println!("dL/dw = {:?}", grad);

    // Finite-difference spot check on w[0].
    let eval = |w0: f32| {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(Tensor::new(vec![2, 3], vec![0.5, -0.2, 0.1, 0.8, 0.3, -0.6]).unwrap());
        let w = g.leaf(Tensor::new(vec![3, 1], vec![w0, -0.3, 0.2]).unwrap());
        let y = g.leaf(Tensor::new(vec![2, 1], vec![0.1, -0.4]).unwrap());
        let h = g.matmul(x, w).unwrap();
        let a = g.tanh(h).unwrap();
        let d = g.sub(a, y).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.mean_all(sq).unwrap();
        g.data(loss)[0]
    };
    let h = 1e-3;
    let numeric = (eval(0.4 + h) - eval(0.4 - h)) / (2.0 * h);
    println!("finite difference on w[0]: {numeric:.6} (recorded {:.6})", grad[0]);
}
