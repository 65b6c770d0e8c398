mod common;

use common::*;

#[test]
fn network_gradients_match_central_differences() {
    let samples = network_gradient_samples_h(31, 1e-4);
    assert!(samples.iter().any(|s| s.0 == "gem.delta"));
    assert!(samples.iter().any(|s| s.0 == "msma.global.p1"));
    assert!(samples.iter().any(|s| s.0.starts_with("pme")));
    for seed in [31, 32] {
        let report = network_gradient_check(seed);
        assert!(report.failures.is_empty(), "seed {seed}: {:?}", report.failures);
    }
}

#[test]
fn loss_gradients_match_central_differences() {
    for seed in 0..3 {
        let e = loss_input_gradient_error(seed);
        assert!(e < 1e-4, "seed {seed}: {e}");
    }
}
