//! Flow-level network intrusion detection.
//!
//! NetFlow v5 / flow-CSV records are aggregated into fixed windows, compared
//! against a fitted load-vs-flows confidence band, and classified per source
//! as port scans, DoS or DDoS participants. Suspects land on a TTL blacklist
//! that is rendered as firewall drop rules.
//!
//! Module map:
//!
//! - [`flow`]: record and key types
//! - [`ingest`]: NetFlow v5 codec, UDP collector, flow-CSV
//! - [`aggregate`]: windowing, interval samples, per-source statistics
//! - [`model`]: traffic model fit, confidence band, anomaly runs
//! - [`classify`]: per-source attack classification and report merging
//! - [`mitigate`]: blacklist, journal, firewall rules
//! - [`simulate`]: deterministic baseline and attack generators
//! - [`pipeline`]: the per-minute detection loop

pub mod aggregate;
pub mod classify;
pub mod flow;
pub mod ingest;
pub mod mitigate;
pub mod model;
pub mod pipeline;
pub mod simulate;

pub use aggregate::{FlowCounting, IntervalSample, SourceStats};
pub use classify::{AttackKind, GroupId, SuspectReport, Thresholds};
pub use flow::{FlowKey, FlowRecord, Timestamp};
pub use model::{AnomalyEvent, Direction, TrafficModel};
pub use pipeline::{Pipeline, PipelineConfig};

/// Serde adapter for durations written as (possibly fractional) seconds.
pub(crate) mod serde_secs {
    use std::time::Duration;

    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        if d.subsec_nanos() == 0 {
            s.serialize_u64(d.as_secs())
        } else {
            s.serialize_f64(d.as_secs_f64())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Secs {
            Int(u64),
            Float(f64),
        }
        match Secs::deserialize(d)? {
            Secs::Int(s) => Ok(Duration::from_secs(s)),
            Secs::Float(f) => Duration::try_from_secs_f64(f)
                .map(|x| Duration::from_millis(x.as_millis() as u64))
                .map_err(D::Error::custom),
        }
    }
}
