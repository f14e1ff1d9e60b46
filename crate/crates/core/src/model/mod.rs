//! Two-parameter traffic model.
//!
//! Mean channel load grows linearly with the number of active flows, and the
//! load of many independent flows is approximately Gaussian around that line:
//!
//! ```text
//! B(N) = b · (N ± k · A · √N)
//! ```
//!
//! with `b` the mean per-flow rate, `k` a dispersion coefficient and `A` the
//! standard normal quantile at `1 - ε/2`, so that normal traffic leaves the
//! band a fraction `ε` of the time. Several consecutive samples outside the
//! band flag an anomalous network state.
//!
//! `b` is the least-squares slope through the origin. `k` has no closed form
//! in the model; it is estimated as the standard deviation of the residuals
//! standardized by `b·√N`, which is exactly the quantity the band assumes to
//! be unit-normal after scaling by `k`.

mod persist;
mod quantile;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::IntervalSample;
use crate::flow::Timestamp;

pub use persist::{load_model, save_model};
pub use quantile::{normal_cdf, normal_quantile};

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_MIN_FIT_SAMPLES: usize = 24;
pub const DEFAULT_CONSECUTIVE: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("probability {0} outside (0, 1)")]
    DomainError(f64),
    #[error("need at least {need} samples with active flows, have {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(&'static str),
    #[error("malformed model document: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    /// Mean per-flow rate, bits per second.
    pub b: f64,
    /// Dispersion coefficient.
    pub k: f64,
    pub epsilon: f64,
    /// Normal quantile at `1 - epsilon / 2`.
    pub quantile: f64,
    pub fitted_on: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_at: Option<Timestamp>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Load above the band at the sample's flow count.
    Above,
    /// Load below the band, i.e. more flows than the load accounts for.
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub window_start: Timestamp,
    pub run_length: usize,
    pub direction: Direction,
    pub samples: Vec<IntervalSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub epsilon: f64,
    pub min_samples: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            epsilon: DEFAULT_EPSILON,
            min_samples: DEFAULT_MIN_FIT_SAMPLES,
        }
    }
}

/// Fits `b` and `k` to baseline samples. Samples with no active flows carry
/// no information and are skipped.
pub fn fit_model(samples: &[IntervalSample], opts: FitOptions) -> Result<TrafficModel, ModelError> {
    if !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        return Err(ModelError::DomainError(opts.epsilon));
    }
    let quantile = normal_quantile(1.0 - opts.epsilon / 2.0)?;
    let usable: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.active_flows > 0)
        .map(|s| (s.active_flows as f64, s.load_bps / s.active_flows as f64))
        .collect();
    if usable.is_empty() && !samples.is_empty() {
        return Err(ModelError::DegenerateFit("no sample has active flows"));
    }
    let need = opts.min_samples.max(2);
    if usable.len() < need {
        return Err(ModelError::InsufficientData {
            have: usable.len(),
            need,
        });
    }

    // Σ N·B / Σ N² written as a weighted mean of per-flow rates ρ = B/N,
    // shifted by the first rate: exact when every ρ is identical.
    let reference = usable[0].1;
    let weight: f64 = usable.iter().map(|(n, _)| n * n).sum();
    let shift: f64 = usable
        .iter()
        .map(|(n, rho)| n * n * (rho - reference))
        .sum::<f64>()
        / weight;
    let b = reference + shift;
    if !(b.is_finite() && b > 0.0) {
        return Err(ModelError::DegenerateFit("per-flow rate is not positive"));
    }

    let residuals: Vec<f64> = usable
        .iter()
        .map(|(n, rho)| n.sqrt() * (rho - b) / b)
        .collect();
    let count = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / count;
    let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (count - 1.0);

    Ok(TrafficModel {
        b,
        k: var.sqrt(),
        epsilon: opts.epsilon,
        quantile,
        fitted_on: usable.len(),
        fitted_at: None,
    })
}

impl TrafficModel {
    pub fn band(&self, active_flows: u64) -> Band {
        let n = active_flows as f64;
        let spread = self.k * self.quantile * n.sqrt();
        Band {
            lower: (self.b * (n - spread)).max(0.0),
            upper: self.b * (n + spread),
        }
    }

    /// Which side of the band a sample falls on, if outside.
    pub fn position(&self, sample: &IntervalSample) -> Option<Direction> {
        let band = self.band(sample.active_flows);
        if sample.load_bps > band.upper {
            Some(Direction::Above)
        } else if sample.load_bps < band.lower {
            Some(Direction::Below)
        } else {
            None
        }
    }
}

/// One event per maximal run of at least `m` consecutive out-of-band
/// samples. A run keeps the direction of its first sample.
pub fn detect_anomalies(
    model: &TrafficModel,
    samples: &[IntervalSample],
    m: usize,
) -> Vec<AnomalyEvent> {
    let mut tracker = RunTracker::new(m);
    let mut events = Vec::new();
    for s in samples {
        if let Some(done) = tracker.push(*s, model.position(s)) {
            events.push(done);
        }
    }
    events.extend(tracker.finish());
    events
}

/// Streaming form of the consecutive-run rule.
#[derive(Debug, Clone)]
pub struct RunTracker {
    m: usize,
    run: Vec<IntervalSample>,
    direction: Option<Direction>,
}

impl RunTracker {
    pub fn new(m: usize) -> Self {
        RunTracker {
            m: m.max(1),
            run: Vec::new(),
            direction: None,
        }
    }

    /// Length of the run currently in progress.
    pub fn current_run(&self) -> usize {
        self.run.len()
    }

    pub fn threshold(&self) -> usize {
        self.m
    }

    /// Feeds one sample; returns the event for a run that this sample ended.
    pub fn push(
        &mut self,
        sample: IntervalSample,
        outside: Option<Direction>,
    ) -> Option<AnomalyEvent> {
        match outside {
            Some(dir) => {
                if self.run.is_empty() {
                    self.direction = Some(dir);
                }
                self.run.push(sample);
                None
            }
            None => self.finish(),
        }
    }

    /// Closes the current run, returning it if long enough.
    /// The run in progress, once it is long enough to count as an anomaly.
    pub fn ongoing(&self) -> Option<AnomalyEvent> {
        let direction = self.direction?;
        (self.run.len() >= self.m).then(|| AnomalyEvent {
            window_start: self.run[0].window_start,
            run_length: self.run.len(),
            direction,
            samples: self.run.clone(),
        })
    }

    pub fn finish(&mut self) -> Option<AnomalyEvent> {
        let run = std::mem::take(&mut self.run);
        let direction = self.direction.take()?;
        (run.len() >= self.m).then(|| AnomalyEvent {
            window_start: run[0].window_start,
            run_length: run.len(),
            direction,
            samples: run,
        })
    }
}

/// Builds samples from `(N, B)` pairs on a regular grid; handy for tests and
/// tooling.
pub fn samples_from_pairs(
    pairs: &[(u64, f64)],
    first: Timestamp,
    window_len: Duration,
) -> Vec<IntervalSample> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(n, b))| IntervalSample {
            window_start: first + window_len * i as u32,
            window_len,
            active_flows: n,
            load_bps: b,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn grid(pairs: &[(u64, f64)]) -> Vec<IntervalSample> {
        samples_from_pairs(pairs, Timestamp(0), Duration::from_secs(300))
    }

    fn opts(min: usize) -> FitOptions {
        FitOptions {
            epsilon: 0.05,
            min_samples: min,
        }
    }

    fn model(b: f64, k: f64) -> TrafficModel {
        TrafficModel {
            b,
            k,
            epsilon: 0.05,
            quantile: normal_quantile(0.975).unwrap(),
            fitted_on: 0,
            fitted_at: None,
        }
    }

    #[test]
    fn exact_line_gives_zero_dispersion() {
        let m = fit_model(&grid(&[(100, 1000.0), (200, 2000.0), (400, 4000.0)]), opts(3)).unwrap();
        assert_eq!(m.b, 10.0);
        assert_eq!(m.k, 0.0);
        assert_eq!(m.fitted_on, 3);
    }

    #[test]
    fn all_zero_flows_is_degenerate() {
        let err = fit_model(&grid(&[(0, 0.0); 30]), opts(3)).unwrap_err();
        assert!(matches!(err, ModelError::DegenerateFit(_)));
    }

    #[test]
    fn too_few_samples() {
        let err = fit_model(&grid(&[(100, 1000.0); 5]), FitOptions::default()).unwrap_err();
        assert!(matches!(err, ModelError::InsufficientData { have: 5, need: 24 }));
        assert!(matches!(
            fit_model(&[], opts(3)),
            Err(ModelError::InsufficientData { have: 0, .. })
        ));
    }

    #[test]
    fn negative_slope_is_degenerate() {
        let err = fit_model(&grid(&[(100, -1.0), (200, -5.0)]), opts(2)).unwrap_err();
        assert!(matches!(err, ModelError::DegenerateFit(_)));
    }

    #[test]
    fn band_examples() {
        let m = model(10.0, 0.5);
        assert_eq!(m.band(0), Band { lower: 0.0, upper: 0.0 });
        let up = m.band(10_000).upper;
        assert!((up - 100_980.0).abs() < 0.1, "{up}");

        let flat = model(10.0, 0.0);
        assert_eq!(flat.band(1234), Band { lower: 12_340.0, upper: 12_340.0 });
    }

    #[test]
    fn lower_band_clamped_at_zero() {
        let m = model(10.0, 5.0);
        assert_eq!(m.band(4).lower, 0.0);
    }

    #[test]
    fn no_anomaly_inside_band() {
        let m = model(10.0, 0.5);
        let s = grid(&[(10_000, 100_000.0); 10]);
        assert!(detect_anomalies(&m, &s, 3).is_empty());
    }

    #[test]
    fn short_run_is_ignored_long_run_reported() {
        let m = model(10.0, 0.5);
        let inside = (10_000, 100_000.0);
        let low = (10_000, 50_000.0);
        let high = (10_000, 200_000.0);
        let s = grid(&[inside, low, low, inside, inside]);
        assert!(detect_anomalies(&m, &s, 3).is_empty());

        let s = grid(&[inside, high, low, low, low, inside, high, high, high]);
        let ev = detect_anomalies(&m, &s, 3);
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0].run_length, 4);
        assert_eq!(ev[0].direction, Direction::Above);
        assert_eq!(ev[0].window_start, Timestamp(300_000));
        assert_eq!(ev[1].run_length, 3);
        assert_eq!(ev[1].samples.len(), 3);
    }

    proptest! {
        #[test]
        fn band_ordered_and_monotone(b in 0.1f64..1e6, k in 0.0f64..10.0, n in 0u64..1_000_000) {
            let m = model(b, k);
            let here = m.band(n);
            prop_assert!(here.upper >= here.lower);
            prop_assert!(m.band(n + 1).upper > here.upper);
        }

        #[test]
        fn zero_residuals_always_zero_k(rate in 1u64..100_000, ns in proptest::collection::vec(1u64..100_000, 2..50)) {
            let pairs: Vec<(u64, f64)> = ns.iter().map(|&n| (n, (n * rate) as f64)).collect();
            let m = fit_model(&grid(&pairs), opts(2)).unwrap();
            prop_assert_eq!(m.k, 0.0);
            prop_assert_eq!(m.b, rate as f64);
        }
    }
}
