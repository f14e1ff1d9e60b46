//! Flow record data model.
//!
//! A flow is a unidirectional sequence of packets sharing the classic 7-tuple
//! key: addresses, ports, protocol, ingress interface and ToS. Records carry
//! millisecond timing and the volume counters exported by the router.

use std::fmt;
use std::net::Ipv4Addr;
use std::ops::{Add, Sub};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTO_ICMP: u8 = 1;
pub const PROTO_TCP: u8 = 6;
pub const PROTO_UDP: u8 = 17;

/// Milliseconds since the Unix epoch.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub const fn from_secs(secs: i64) -> Self {
        Timestamp(secs * 1000)
    }

    pub const fn as_millis(self) -> i64 {
        self.0
    }

    /// Wall-clock now, truncated to milliseconds.
    pub fn now() -> Self {
        Timestamp(chrono::Utc::now().timestamp_millis())
    }

    /// Largest multiple of `step` that is `<= self`.
    pub fn floor_to(self, step: Duration) -> Self {
        let step = millis(step).max(1);
        Timestamp(self.0.div_euclid(step) * step)
    }

    /// Signed distance `self - earlier`, saturating at zero.
    pub fn saturating_since(self, earlier: Timestamp) -> Duration {
        Duration::from_millis(self.0.saturating_sub(earlier.0).max(0) as u64)
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0.saturating_add(millis(rhs)))
    }
}

impl Sub<Duration> for Timestamp {
    type Output = Timestamp;

    fn sub(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0.saturating_sub(millis(rhs)))
    }
}

/// Accepts integer milliseconds since the epoch or a UTC date-time such as
/// `2011-05-01 12:00:00.250` (a `T` separator and trailing `Z` are allowed).
impl std::str::FromStr for Timestamp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(ms) = s.parse::<i64>() {
            return Ok(Timestamp(ms));
        }
        let text = s.replacen('T', " ", 1);
        chrono::NaiveDateTime::parse_from_str(text.trim_end_matches('Z'), "%Y-%m-%d %H:%M:%S%.f")
            .map(|dt| Timestamp(dt.and_utc().timestamp_millis()))
            .map_err(|e| format!("bad timestamp {s:?}: {e}"))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match chrono::DateTime::from_timestamp_millis(self.0) {
            Some(dt) => write!(f, "{}", dt.format("%Y-%m-%dT%H:%M:%S%.3fZ")),
            None => write!(f, "{}ms", self.0),
        }
    }
}

/// Whole milliseconds of a duration, saturating at `i64::MAX`.
pub(crate) fn millis(d: Duration) -> i64 {
    i64::try_from(d.as_millis()).unwrap_or(i64::MAX)
}

/// The 7-tuple flow key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    /// For ICMP this carries `type * 256 + code`.
    pub dst_port: u16,
    pub protocol: u8,
    pub ingress_ifindex: u16,
    /// Carried for completeness; nothing downstream keys on it.
    pub tos: u8,
}

impl FlowKey {
    pub fn new(
        protocol: u8,
        src_addr: Ipv4Addr,
        src_port: u16,
        dst_addr: Ipv4Addr,
        dst_port: u16,
    ) -> Self {
        FlowKey {
            src_addr,
            dst_addr,
            src_port,
            dst_port,
            protocol,
            ingress_ifindex: 0,
            tos: 0,
        }
    }

    pub fn icmp(src_addr: Ipv4Addr, dst_addr: Ipv4Addr, icmp_type: u8, icmp_code: u8) -> Self {
        FlowKey::new(
            PROTO_ICMP,
            src_addr,
            0,
            dst_addr,
            pack_icmp(icmp_type, icmp_code),
        )
    }

    /// True for protocols whose key carries port (or ICMP type/code) values.
    pub fn has_ports(&self) -> bool {
        matches!(self.protocol, PROTO_TCP | PROTO_UDP | PROTO_ICMP)
    }

    /// ICMP `(type, code)` when this is an ICMP flow.
    pub fn icmp_type_code(&self) -> Option<(u8, u8)> {
        (self.protocol == PROTO_ICMP).then(|| unpack_icmp(self.dst_port))
    }
}

pub fn pack_icmp(icmp_type: u8, icmp_code: u8) -> u16 {
    u16::from(icmp_type) * 256 + u16::from(icmp_code)
}

pub fn unpack_icmp(port: u16) -> (u8, u8) {
    ((port >> 8) as u8, (port & 0xff) as u8)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlowError {
    #[error("invalid record: {0}")]
    InvalidRecord(&'static str),
}

/// One exported unidirectional flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowRecord {
    pub key: FlowKey,
    pub start_time: Timestamp,
    /// Millisecond resolution.
    pub duration: Duration,
    pub packets: u64,
    pub bytes: u64,
}

impl FlowRecord {
    pub fn end_time(&self) -> Timestamp {
        self.start_time + self.duration
    }

    pub fn duration_ms(&self) -> i64 {
        millis(self.duration)
    }

    /// Returns the record unchanged if every invariant holds.
    pub fn validate(self) -> Result<FlowRecord, FlowError> {
        if self.packets == 0 {
            return Err(FlowError::InvalidRecord("zero packets"));
        }
        if self.bytes < self.packets {
            return Err(FlowError::InvalidRecord("bytes < packets"));
        }
        if !self.key.has_ports() && (self.key.src_port != 0 || self.key.dst_port != 0) {
            return Err(FlowError::InvalidRecord("port on portless protocol"));
        }
        if !self.duration.subsec_nanos().is_multiple_of(1_000_000) {
            return Err(FlowError::InvalidRecord("sub-millisecond duration"));
        }
        Ok(self)
    }
}
