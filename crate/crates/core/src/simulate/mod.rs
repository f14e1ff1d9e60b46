//! Deterministic synthetic traffic: a stationary baseline plus port-scan,
//! LOIC-style DDoS and ping-flood attack scenarios.
//!
//! Randomness comes from ChaCha8 seeded with the scenario seed. Every
//! generator draws from its own stream so scenarios compose without
//! perturbing each other:
//!
//! - baseline window `i` uses stream `i`
//! - attack `j` (zero-based, in spec order) uses stream `(j + 1) << 40`
//!
//! Other implementations should share recorded flow-CSV fixtures rather than
//! try to reproduce the generator bit for bit.

mod attacks;
mod baseline;

use std::net::Ipv4Addr;
use std::time::Duration;

use ipnet::Ipv4Net;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::AttackKind;
use crate::flow::{FlowRecord, Timestamp};
use crate::serde_secs;

pub use attacks::{gen_loic_ddos, gen_pingflood, gen_portscan};
pub use baseline::{gen_baseline, gen_baseline_window, BaselineWindows};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scenario: {0}")]
pub struct InvalidSpec(pub String);

fn invalid<T>(msg: impl Into<String>) -> Result<T, InvalidSpec> {
    Err(InvalidSpec(msg.into()))
}

/// 2011-05-01T00:00:00Z
pub const DEFAULT_EPOCH: Timestamp = Timestamp(1_304_208_000_000);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    /// Scenario start; attack offsets are relative to it.
    pub start: Timestamp,
    #[serde(with = "serde_secs")]
    pub duration: Duration,
    pub baseline: BaselineSpec,
    pub attacks: Vec<AttackSpec>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 1,
            start: DEFAULT_EPOCH,
            duration: Duration::from_secs(3600),
            baseline: BaselineSpec::default(),
            attacks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    /// Inclusive range the per-window flow count is drawn from.
    pub flows_per_window: [u64; 2],
    /// Mean per-flow contribution to the window's average load, bit/s.
    pub per_flow_rate_mean: f64,
    pub per_flow_rate_sd: f64,
    #[serde(with = "serde_secs")]
    pub window: Duration,
    /// Longest baseline flow.
    #[serde(with = "serde_secs")]
    pub max_flow_duration: Duration,
    /// Client addresses are drawn from the first `client_count` hosts here.
    pub clients: Ipv4Net,
    pub client_count: u32,
    pub servers: Ipv4Net,
    pub server_count: u32,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        BaselineSpec {
            flows_per_window: [50_000, 60_000],
            per_flow_rate_mean: 4000.0,
            per_flow_rate_sd: 1000.0,
            window: Duration::from_secs(300),
            max_flow_duration: Duration::from_secs(30),
            clients: "10.0.0.0/16".parse().unwrap(),
            client_count: 4096,
            servers: "172.16.0.0/12".parse().unwrap(),
            server_count: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    /// Offset from the scenario start.
    #[serde(with = "serde_secs")]
    pub start: Duration,
    #[serde(flatten)]
    pub attack: Attack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Attack {
    PortScan(PortScanParams),
    LoicDdos(LoicParams),
    PingFlood(PingFloodParams),
}

impl Attack {
    /// The classification the attack should earn its sources.
    pub fn expected_kind(&self) -> AttackKind {
        match self {
            Attack::PortScan(_) => AttackKind::PortScan,
            Attack::LoicDdos(p) if p.sources.len() >= 3 => AttackKind::DDoS,
            Attack::PingFlood(p) if p.sources.len() >= 3 => AttackKind::DDoS,
            _ => AttackKind::DoS,
        }
    }

    pub fn sources(&self) -> Vec<Ipv4Addr> {
        match self {
            Attack::PortScan(p) => vec![p.scanner],
            Attack::LoicDdos(p) => p.sources.clone(),
            Attack::PingFlood(p) => p.sources.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PortScanParams {
    pub scanner: Ipv4Addr,
    pub target: Ipv4Net,
    /// Scan intensity, flows per five minutes (observed scanners: 10-20 k).
    pub flows_per_5min: u64,
    #[serde(with = "serde_secs")]
    pub duration: Duration,
}

impl Default for PortScanParams {
    fn default() -> Self {
        PortScanParams {
            scanner: Ipv4Addr::new(203, 0, 113, 66),
            target: "10.200.0.0/24".parse().unwrap(),
            flows_per_5min: 15_000,
            duration: Duration::from_secs(300),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoicParams {
    pub sources: Vec<Ipv4Addr>,
    pub target: Ipv4Addr,
    pub flows_per_minute: u64,
    #[serde(with = "serde_secs")]
    pub duration: Duration,
    /// Inclusive byte range per flow.
    pub bytes: [u64; 2],
    pub ports: Vec<u16>,
}

impl LoicParams {
    /// `n` sources numbered up from 198.51.100.1.
    pub fn with_sources(n: u8) -> Self {
        LoicParams {
            sources: (1..=n).map(|i| Ipv4Addr::new(198, 51, 100, i)).collect(),
            ..LoicParams::default()
        }
    }
}

impl Default for LoicParams {
    fn default() -> Self {
        LoicParams {
            sources: (1..=10).map(|i| Ipv4Addr::new(198, 51, 100, i)).collect(),
            target: Ipv4Addr::new(10, 200, 0, 80),
            flows_per_minute: 3000,
            duration: Duration::from_secs(600),
            bytes: [200, 5000],
            ports: vec![80, 443, 8080, 53, 123, 3306, 25, 22],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PingFloodParams {
    pub sources: Vec<Ipv4Addr>,
    pub target: Ipv4Addr,
    #[serde(with = "serde_secs")]
    pub duration: Duration,
    pub packets: u64,
    /// IP bytes per echo request.
    pub packet_bytes: u64,
}

impl PingFloodParams {
    /// `n` sources numbered up from 192.0.2.1.
    pub fn with_sources(n: u8) -> Self {
        PingFloodParams {
            sources: (1..=n).map(|i| Ipv4Addr::new(192, 0, 2, i)).collect(),
            ..PingFloodParams::default()
        }
    }
}

impl Default for PingFloodParams {
    fn default() -> Self {
        PingFloodParams {
            sources: vec![Ipv4Addr::new(192, 0, 2, 1)],
            target: Ipv4Addr::new(10, 200, 0, 80),
            duration: Duration::from_secs(1800),
            packets: 20_000,
            packet_bytes: 84,
        }
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn attack_stream(index: usize) -> u64 {
    (index as u64 + 1) << 40
}

/// A host address inside `net`, skipping the network address.
pub(crate) fn host_in(net: Ipv4Net, index: u32) -> Ipv4Addr {
    let span = (1u64 << (32 - net.prefix_len())).saturating_sub(2).max(1);
    let offset = 1 + u64::from(index) % span;
    Ipv4Addr::from(u32::from(net.network()).wrapping_add(offset as u32))
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), InvalidSpec> {
        if self.duration.is_zero() {
            return invalid("duration must be positive");
        }
        self.baseline.validate()?;
        for a in &self.attacks {
            if a.start >= self.duration {
                return invalid(format!(
                    "attack starting at {:?} lies outside the {:?} scenario",
                    a.start, self.duration
                ));
            }
        }
        Ok(())
    }

    /// Number of whole baseline windows in the scenario.
    pub fn window_count(&self) -> u64 {
        (self.duration.as_millis() / self.baseline.window.as_millis().max(1)) as u64
    }

    /// `(source, expected kind)` for every injected attacker.
    pub fn attackers(&self) -> Vec<(Ipv4Addr, AttackKind)> {
        self.attacks
            .iter()
            .flat_map(|a| {
                let kind = a.attack.expected_kind();
                a.attack.sources().into_iter().map(move |s| (s, kind))
            })
            .collect()
    }

    /// Flow records of the attacks only, sorted by start time.
    pub fn generate_attacks(&self) -> Result<Vec<FlowRecord>, InvalidSpec> {
        self.validate()?;
        let mut out = Vec::new();
        for (i, a) in self.attacks.iter().enumerate() {
            let at = self.start + a.start;
            let seed = self.seed;
            let stream = attack_stream(i);
            let mut rng = stream_rng(seed, stream);
            out.extend(match &a.attack {
                Attack::PortScan(p) => attacks::portscan(p, at, &mut rng)?,
                Attack::LoicDdos(p) => attacks::loic(p, at, &mut rng)?,
                Attack::PingFlood(p) => attacks::pingflood(p, at, &mut rng)?,
            });
        }
        out.sort_by_key(|r| r.start_time);
        Ok(out)
    }

    /// Baseline and attacks merged by start time.
    pub fn generate(&self) -> Result<Vec<FlowRecord>, InvalidSpec> {
        let mut out = gen_baseline(self)?;
        out.extend(self.generate_attacks()?);
        out.sort_by_key(|r| r.start_time);
        Ok(out)
    }
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<(), InvalidSpec> {
        let [lo, hi] = self.flows_per_window;
        if hi < lo {
            return invalid("flows_per_window range is reversed");
        }
        if !(self.per_flow_rate_mean > 0.0 && self.per_flow_rate_mean.is_finite()) {
            return invalid("per_flow_rate_mean must be positive");
        }
        if !(self.per_flow_rate_sd >= 0.0 && self.per_flow_rate_sd.is_finite()) {
            return invalid("per_flow_rate_sd must be non-negative");
        }
        if self.window < Duration::from_secs(1) {
            return invalid("baseline window must be at least one second");
        }
        if self.client_count == 0 || self.server_count == 0 {
            return invalid("address pools must be non-empty");
        }
        Ok(())
    }
}
