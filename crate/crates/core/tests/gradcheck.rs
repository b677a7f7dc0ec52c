mod common;

use common::{gradient_check, tiny_config};
use fsner::TrainConfig;

#[test]
fn generation_gradient_matches_differences() {
    let cfg = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        ..tiny_config()
    };
    let (worst, n) = gradient_check(cfg, 120, 11);
    println!("checked {n} coordinates, worst relative error {worst:.3e}");
    assert!(n >= 100);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn joint_gradient_matches_differences() {
    let (worst, n) = gradient_check(tiny_config(), 120, 12);
    println!("checked {n} coordinates, worst relative error {worst:.3e}");
    assert!(n >= 100);
    assert!(worst <= 1e-3, "worst relative error {worst:e}");
}
