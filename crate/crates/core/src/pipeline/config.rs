use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::aggregate::FlowCounting;
use crate::classify::Thresholds;
use crate::ingest::DEFAULT_PORT;
use crate::mitigate::{Dialect, DEFAULT_BLOCK_TTL};
use crate::model::{DEFAULT_CONSECUTIVE, DEFAULT_EPSILON, DEFAULT_MIN_FIT_SAMPLES};
use crate::serde_secs;

/// Every tunable of the detection loop. Durations are written as seconds in
/// the TOML form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Classification cadence; one tick per window.
    #[serde(with = "serde_secs")]
    pub classify_window: Duration,
    /// Window of the traffic-model samples.
    #[serde(with = "serde_secs")]
    pub fit_window: Duration,
    /// How long a completed flow still counts as active for classification.
    #[serde(with = "serde_secs")]
    pub grace: Duration,
    /// Grace applied to model samples.
    #[serde(with = "serde_secs")]
    pub sample_grace: Duration,
    pub flow_counting: FlowCounting,
    pub thresholds: Thresholds,
    pub epsilon: f64,
    pub consecutive_m: usize,
    #[serde(with = "serde_secs")]
    pub block_ttl: Duration,
    #[serde(with = "serde_secs")]
    pub refit_interval: Duration,
    /// Trailing span of samples a refit uses.
    #[serde(with = "serde_secs")]
    pub fit_history: Duration,
    pub min_fit_samples: usize,
    #[serde(with = "serde_secs")]
    pub dedupe_window: Duration,
    pub listen: SocketAddr,
    pub whitelist: Vec<Ipv4Net>,
    /// Skip classification unless an anomaly run is in progress. Has no
    /// effect before a model exists.
    pub classify_only_on_anomaly: bool,
    pub rule_dialect: Dialect,
    pub journal: Option<PathBuf>,
    /// Model document loaded at startup.
    pub model: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            classify_window: Duration::from_secs(60),
            fit_window: Duration::from_secs(300),
            grace: Duration::from_secs(60),
            sample_grace: Duration::ZERO,
            flow_counting: FlowCounting::Active,
            thresholds: Thresholds::default(),
            epsilon: DEFAULT_EPSILON,
            consecutive_m: DEFAULT_CONSECUTIVE,
            block_ttl: DEFAULT_BLOCK_TTL,
            refit_interval: Duration::from_secs(3600),
            fit_history: Duration::from_secs(24 * 3600),
            min_fit_samples: DEFAULT_MIN_FIT_SAMPLES,
            dedupe_window: Duration::from_secs(300),
            listen: SocketAddr::from(([0, 0, 0, 0], DEFAULT_PORT)),
            whitelist: Vec::new(),
            classify_only_on_anomaly: false,
            rule_dialect: Dialect::LinuxPacketFilter,
            journal: None,
            model: None,
        }
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T, PipelineError> {
    Err(PipelineError::Config(msg.into()))
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("classify_window", self.classify_window),
            ("fit_window", self.fit_window),
            ("block_ttl", self.block_ttl),
            ("refit_interval", self.refit_interval),
            ("fit_history", self.fit_history),
        ];
        for (name, d) in positive {
            if d < Duration::from_millis(1) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.classify_window > self.fit_window {
            return bad("classify_window must not exceed fit_window");
        }
        if !self.fit_window.as_millis().is_multiple_of(self.classify_window.as_millis()) {
            return bad("fit_window must be a whole multiple of classify_window");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if self.consecutive_m == 0 {
            return bad("consecutive_m must be at least 1");
        }
        self.thresholds.validate().map_err(PipelineError::Config)
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg = Self::parse_unchecked(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let cfg = Self::load_unchecked(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without cross-field validation, for callers layering
    /// overrides on top. Call [`validate`](Self::validate) afterwards.
    pub fn parse_unchecked(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load_unchecked(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse_unchecked(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.classify_window, Duration::from_secs(60));
        assert_eq!(c.fit_window, Duration::from_secs(300));
        assert_eq!(c.block_ttl, Duration::from_secs(300));
        assert_eq!(c.listen.port(), 2055);
        assert_eq!(c.consecutive_m, 3);
    }

    #[test]
    fn toml_round_trip_and_partial_documents() {
        let c = PipelineConfig {
            whitelist: vec!["192.168.0.0/16".parse().unwrap()],
            grace: Duration::from_millis(1500),
            journal: Some("/var/lib/flowwatch/journal.log".into()),
            ..PipelineConfig::default()
        };
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);

        let p = PipelineConfig::from_toml(
            "epsilon = 0.01\nrule_dialect = \"generic-deny-list\"\n[thresholds]\nhigh_flow_count = 500\n",
        )
        .unwrap();
        assert_eq!(p.epsilon, 0.01);
        assert_eq!(p.rule_dialect, Dialect::GenericDenyList);
        assert_eq!(p.thresholds.high_flow_count, 500);
        assert_eq!(p.thresholds.tiny_flow_bytes, 50);
    }

    #[test]
    fn invalid_documents_rejected() {
        for doc in [
            "classify_window = 600",
            "classify_window = 0",
            "fit_window = 90",
            "epsilon = 1.5",
            "unknown_key = 1",
            "consecutive_m = 0",
        ] {
            assert!(
                matches!(PipelineConfig::from_toml(doc), Err(PipelineError::Config(_))),
                "{doc}"
            );
        }
    }
}
