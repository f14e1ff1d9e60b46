//! Shared test helpers: an independent normal CDF and quantile oracle, and
//! scenario fixtures.

#![allow(dead_code)]

use std::f64::consts::PI;

/// erfc(x) for x >= 0: positive-term series below 2.5, continued fraction
/// above.
fn erfc_pos(x: f64) -> f64 {
    assert!(x >= 0.0);
    if x < 2.5 {
        // erf(x) = 2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (1*3*...*(2n+1))
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term > 1e-17 * sum {
            n += 1.0;
            term *= 2.0 * x * x / (2.0 * n + 1.0);
            sum += term;
        }
        1.0 - 2.0 / PI.sqrt() * (-x * x).exp() * sum
    } else {
        // erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        let mut f = x;
        for n in (1..=400).rev() {
            f = x + (n as f64 / 2.0) / f;
        }
        (-x * x).exp() / (PI.sqrt() * f)
    }
}

pub fn oracle_cdf(z: f64) -> f64 {
    let t = z.abs() / std::f64::consts::SQRT_2;
    let lower = 0.5 * erfc_pos(t);
    if z < 0.0 {
        lower
    } else {
        1.0 - lower
    }
}

/// Quantile by bisection on [`oracle_cdf`].
pub fn oracle_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if oracle_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    0.5 * (lo + hi)
}
