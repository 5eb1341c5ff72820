//! Runs the finite-difference suite over every differentiable op plus the
//! full-network probe, printing one line per check.
//!
//! Run with: cargo run --release --example gradient_verification

use deweather::gradcheck::{check_all_ops, full_network_probe};

fn main() {
    let mut reports = check_all_ops(0, false);
    reports.push(full_network_probe(0, 20).expect("probe builds"));
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<24} max rel err {:>9.3e}  (tol {:.0e})  {}",
            r.name,
            r.max_err,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
        ok &= r.passed();
    }
    assert!(ok, "a gradient check failed");
}
