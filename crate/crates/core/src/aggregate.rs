//! Windowed aggregation of flow records.
//!
//! Every record is attributed to the fixed, epoch-aligned windows its lifetime
//! overlaps. Bytes are split in proportion to temporal overlap, so the total
//! volume of a record is conserved across windows. A grace period after a
//! flow ends keeps it *active* in later windows without attributing volume:
//! exporters only report flows once they have completed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::Ipv4Addr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::flow::{millis, FlowRecord, Timestamp};

/// A record's membership in one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assigned<'a> {
    pub record: &'a FlowRecord,
    /// Share of the record's bytes attributed to this window; zero for
    /// grace-only activity.
    pub fraction: f64,
}

/// One window's network state: the model's N and B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSample {
    pub window_start: Timestamp,
    pub window_len: Duration,
    pub active_flows: u64,
    pub load_bps: f64,
}

/// How `active_flows` is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowCounting {
    /// Every record assigned to the window, grace-only ones included.
    #[default]
    Active,
    /// Only records whose end time falls inside the window.
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub src_addr: Ipv4Addr,
    pub window_start: Timestamp,
    pub flow_count: u64,
    pub tiny_flow_count: u64,
    #[serde(with = "duration_ms")]
    pub max_flow_duration: Duration,
    pub max_flow_packets: u64,
    pub total_bytes: u64,
    pub distinct_dst_addrs: u64,
    pub distinct_dst_ports: u64,
    /// Destination receiving the most of this source's flows (lowest address
    /// on ties).
    pub top_dst_addr: Ipv4Addr,
}

pub(crate) mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Byte share of `record` falling in `[window_start, window_start + window_len)`.
pub fn overlap_fraction(record: &FlowRecord, window_start: Timestamp, window_len: Duration) -> f64 {
    let ws = window_start.as_millis();
    let we = ws + millis(window_len);
    let start = record.start_time.as_millis();
    let dur = record.duration_ms();
    if dur == 0 {
        return if (ws..we).contains(&start) { 1.0 } else { 0.0 };
    }
    let end = start + dur;
    let overlap = (end.min(we) - start.max(ws)).max(0);
    (overlap as f64 / dur as f64).clamp(0.0, 1.0)
}

/// Half-open activity span `[start, end + grace)`; zero-duration flows are
/// active for at least their starting millisecond.
fn activity_span(record: &FlowRecord, grace: Duration) -> (i64, i64) {
    let start = record.start_time.as_millis();
    let end = record.end_time().as_millis().saturating_add(millis(grace));
    (start, end.max(start + 1))
}

/// Assigns one record to one window, if it is active there at all.
pub fn assign_one<'a>(
    record: &'a FlowRecord,
    window_start: Timestamp,
    window_len: Duration,
    grace: Duration,
) -> Option<Assigned<'a>> {
    let ws = window_start.as_millis();
    let we = ws + millis(window_len);
    let (a, b) = activity_span(record, grace);
    (a < we && b > ws).then(|| Assigned {
        record,
        fraction: overlap_fraction(record, window_start, window_len),
    })
}

/// Assigns records to a single window.
pub fn assign_window<'a, I>(
    records: I,
    window_start: Timestamp,
    window_len: Duration,
    grace: Duration,
) -> Vec<Assigned<'a>>
where
    I: IntoIterator<Item = &'a FlowRecord>,
{
    records
        .into_iter()
        .filter_map(|r| assign_one(r, window_start, window_len, grace))
        .collect()
}

/// Assigns every record to every epoch-aligned window it is active in.
pub fn assign_to_windows<'a, I>(
    records: I,
    window_len: Duration,
    grace: Duration,
) -> BTreeMap<Timestamp, Vec<Assigned<'a>>>
where
    I: IntoIterator<Item = &'a FlowRecord>,
{
    assert!(!window_len.is_zero(), "window length must be positive");
    let len = millis(window_len);
    let mut out: BTreeMap<Timestamp, Vec<Assigned<'a>>> = BTreeMap::new();
    for record in records {
        let (a, b) = activity_span(record, grace);
        let mut w = a.div_euclid(len) * len;
        while w < b {
            let ws = Timestamp(w);
            out.entry(ws).or_default().push(Assigned {
                record,
                fraction: overlap_fraction(record, ws, window_len),
            });
            w += len;
        }
    }
    out
}

/// Computes N and B for one window from its assignments.
pub fn sample_interval(
    window_start: Timestamp,
    window_len: Duration,
    assigned: &[Assigned<'_>],
    counting: FlowCounting,
) -> IntervalSample {
    let ws = window_start.as_millis();
    let we = ws + millis(window_len);
    let active_flows = match counting {
        FlowCounting::Active => assigned.len() as u64,
        FlowCounting::Completed => assigned
            .iter()
            .filter(|a| (ws..we).contains(&a.record.end_time().as_millis()))
            .count() as u64,
    };
    let bits: f64 = assigned
        .iter()
        .map(|a| a.record.bytes as f64 * 8.0 * a.fraction)
        .sum();
    let load_bps = if active_flows == 0 {
        0.0
    } else {
        bits / window_len.as_secs_f64()
    };
    IntervalSample {
        window_start,
        window_len,
        active_flows,
        load_bps,
    }
}

#[derive(Default)]
struct SourceAcc {
    flow_count: u64,
    tiny: u64,
    max_dur: Duration,
    max_pkts: u64,
    bytes: u64,
    dsts: HashMap<Ipv4Addr, u64>,
    ports: HashSet<u16>,
}

/// Per-source evidence over one window, sorted by source address.
pub fn source_stats(
    window_start: Timestamp,
    assigned: &[Assigned<'_>],
    tiny_flow_bytes: u64,
) -> Vec<SourceStats> {
    let mut by_src: HashMap<Ipv4Addr, SourceAcc> = HashMap::new();
    for a in assigned {
        let r = a.record;
        let acc = by_src.entry(r.key.src_addr).or_default();
        acc.flow_count += 1;
        if r.bytes <= tiny_flow_bytes {
            acc.tiny += 1;
        }
        acc.max_dur = acc.max_dur.max(r.duration);
        acc.max_pkts = acc.max_pkts.max(r.packets);
        acc.bytes = acc.bytes.saturating_add(r.bytes);
        *acc.dsts.entry(r.key.dst_addr).or_default() += 1;
        acc.ports.insert(r.key.dst_port);
    }
    let mut out: Vec<SourceStats> = by_src
        .into_iter()
        .map(|(src_addr, acc)| {
            let top_dst_addr = acc
                .dsts
                .iter()
                .max_by(|(a1, c1), (a2, c2)| c1.cmp(c2).then(a2.cmp(a1)))
                .map(|(a, _)| *a)
                .unwrap_or(Ipv4Addr::UNSPECIFIED);
            SourceStats {
                src_addr,
                window_start,
                flow_count: acc.flow_count,
                tiny_flow_count: acc.tiny,
                max_flow_duration: acc.max_dur,
                max_flow_packets: acc.max_pkts,
                total_bytes: acc.bytes,
                distinct_dst_addrs: acc.dsts.len() as u64,
                distinct_dst_ports: acc.ports.len() as u64,
                top_dst_addr,
            }
        })
        .collect();
    out.sort_by_key(|s| s.src_addr);
    out
}
