mod common;

use common::{oracle_cdf, oracle_quantile};
use flowwatch::model::{normal_cdf, normal_quantile};
use proptest::prelude::*;

#[test]
fn oracle_known_values() {
    assert!((oracle_cdf(0.0) - 0.5).abs() < 1e-15);
    assert!((oracle_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
    // Phi(-6) = 9.8658764503769e-10
    assert!((oracle_cdf(-6.0) / 9.865876450377e-10 - 1.0).abs() < 1e-9);
    assert!((oracle_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
}

#[test]
fn series_and_fraction_agree_at_switchover() {
    let z = 2.5 * std::f64::consts::SQRT_2;
    let below = oracle_cdf(-(z - 1e-9));
    let above = oracle_cdf(-(z + 1e-9));
    assert!((below / above - 1.0).abs() < 1e-7);
}

proptest! {
    #[test]
    fn library_cdf_matches_oracle(z in -8.0f64..8.0) {
        let (a, b) = (normal_cdf(z), oracle_cdf(z));
        prop_assert!((a - b).abs() <= 1e-14 + 1e-10 * b, "z={z}: {a} vs {b}");
    }

    #[test]
    fn library_quantile_matches_oracle(p in 1e-9f64..(1.0 - 1e-9)) {
        prop_assert!((normal_quantile(p).unwrap() - oracle_quantile(p)).abs() < 1e-6);
    }
}
