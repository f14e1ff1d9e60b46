//! Per-source attack classification.
//!
//! Run once per classification window over [`SourceStats`]:
//!
//! 1. Sources with a large number of flows are suspects. If almost all of
//!    their flows are tiny (a few dozen bytes), the source is port scanning;
//!    otherwise it is a DoS candidate.
//! 2. Sources with a very long flow (or one carrying a flood of packets) are
//!    DoS candidates. Ping floods look like this: one ICMP flow per attacker
//!    that is only exported once it completes, so detection can lag the
//!    start of the flood by the flow's lifetime.
//!
//! DoS candidates aiming at the same destination are promoted to a DDoS
//! group once enough of them are seen together.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::net::Ipv4Addr;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::aggregate::SourceStats;
use crate::flow::Timestamp;
use crate::serde_secs;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Flows at or below this many bytes are tiny.
    pub tiny_flow_bytes: u64,
    /// Flows per source per classification window that make it a suspect.
    pub high_flow_count: u64,
    /// A flow lasting longer than this marks a DoS candidate.
    #[serde(with = "serde_secs")]
    pub long_flow_duration: Duration,
    /// Packets on a single flow that mark a DoS candidate.
    pub flood_packets: u64,
    pub ddos_min_sources: usize,
    /// Share of tiny flows above which a suspect counts as a scanner.
    pub tiny_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            tiny_flow_bytes: 50,
            high_flow_count: 1000,
            long_flow_duration: Duration::from_secs(300),
            flood_packets: 10_000,
            ddos_min_sources: 3,
            tiny_fraction: 0.9,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), String> {
        if self.tiny_flow_bytes == 0
            || self.high_flow_count == 0
            || self.long_flow_duration.is_zero()
            || self.flood_packets == 0
            || self.ddos_min_sources == 0
        {
            return Err("thresholds must be positive".into());
        }
        if !(self.tiny_fraction > 0.0 && self.tiny_fraction <= 1.0) {
            return Err(format!("tiny_fraction {} outside (0, 1]", self.tiny_fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    PortScan,
    #[serde(rename = "dos")]
    DoS,
    #[serde(rename = "ddos")]
    DDoS,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::PortScan => "port_scan",
            AttackKind::DoS => "dos",
            AttackKind::DDoS => "ddos",
        })
    }
}

/// Identifies a DDoS group by its target and the window it was first seen
/// in. Renders as `<target>@<first window, ms since epoch>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupId {
    pub target: Ipv4Addr,
    pub since: Timestamp,
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.target, self.since.as_millis())
    }
}

impl FromStr for GroupId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (t, since) = s.split_once('@').ok_or_else(|| format!("bad group id {s:?}"))?;
        Ok(GroupId {
            target: t.parse().map_err(|_| format!("bad group target {t:?}"))?,
            since: Timestamp(since.parse().map_err(|_| format!("bad group time {since:?}"))?),
        })
    }
}

impl Serialize for GroupId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectReport {
    #[serde(rename = "timestamp")]
    pub window_start: Timestamp,
    pub src_addr: Ipv4Addr,
    pub kind: AttackKind,
    pub group_id: Option<GroupId>,
    pub evidence: SourceStats,
}

impl SuspectReport {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("reports always serialize")
    }
}

/// Writes reports one JSON object per line.
pub fn write_reports<'a, W: Write>(
    mut out: W,
    reports: impl IntoIterator<Item = &'a SuspectReport>,
) -> io::Result<()> {
    for r in reports {
        writeln!(out, "{}", r.to_line())?;
    }
    out.flush()
}

pub fn read_reports<R: BufRead>(input: R) -> io::Result<Vec<SuspectReport>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| {
            serde_json::from_str(&l?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
        })
        .collect()
}

/// Classifies one window's sources. The result is sorted by source address
/// and does not depend on the order of `stats`.
pub fn classify_window(stats: &[SourceStats], th: &Thresholds) -> Vec<SuspectReport> {
    let mut reports = Vec::new();
    let mut candidates: Vec<&SourceStats> = Vec::new();

    for s in stats {
        if s.flow_count > 0 && s.flow_count >= th.high_flow_count {
            let tiny_share = s.tiny_flow_count as f64 / s.flow_count as f64;
            if tiny_share >= th.tiny_fraction {
                reports.push(SuspectReport {
                    window_start: s.window_start,
                    src_addr: s.src_addr,
                    kind: AttackKind::PortScan,
                    group_id: None,
                    evidence: s.clone(),
                });
                continue;
            }
            candidates.push(s);
        } else if s.max_flow_duration > th.long_flow_duration
            || s.max_flow_packets >= th.flood_packets
        {
            candidates.push(s);
        }
    }

    let mut by_target: BTreeMap<Ipv4Addr, Vec<&SourceStats>> = BTreeMap::new();
    for c in candidates {
        by_target.entry(c.top_dst_addr).or_default().push(c);
    }
    for (target, members) in by_target {
        let group = (members.len() >= th.ddos_min_sources).then(|| GroupId {
            target,
            since: members
                .iter()
                .map(|m| m.window_start)
                .min()
                .expect("groups are non-empty"),
        });
        for m in members {
            reports.push(SuspectReport {
                window_start: m.window_start,
                src_addr: m.src_addr,
                kind: if group.is_some() {
                    AttackKind::DDoS
                } else {
                    AttackKind::DoS
                },
                group_id: group,
                evidence: m.clone(),
            });
        }
    }

    reports.sort_by_key(|r| (r.src_addr, r.kind));
    reports
}

/// Reports accepted so far, used to suppress repeats and to keep DDoS group
/// identifiers stable while an attack continues. Single writer.
#[derive(Debug, Clone, Default)]
pub struct ReportHistory {
    reports: Vec<SuspectReport>,
    /// Each group with the latest window it was seen in, suppressed repeats
    /// included.
    groups: Vec<(GroupId, Timestamp)>,
}

impl ReportHistory {
    pub fn new(reports: Vec<SuspectReport>) -> Self {
        let mut h = ReportHistory {
            reports: Vec::new(),
            groups: Vec::new(),
        };
        for r in &reports {
            if let Some(g) = r.group_id {
                h.touch(g, r.window_start);
            }
        }
        h.reports = reports;
        h
    }

    pub fn reports(&self) -> &[SuspectReport] {
        &self.reports
    }

    pub fn into_reports(self) -> Vec<SuspectReport> {
        self.reports
    }

    /// Drops reports and groups last seen before `cutoff`.
    pub fn prune_before(&mut self, cutoff: Timestamp) {
        self.reports.retain(|r| r.window_start >= cutoff);
        self.groups.retain(|(_, seen)| *seen >= cutoff);
    }

    fn touch(&mut self, group: GroupId, seen: Timestamp) {
        match self.groups.iter_mut().find(|(g, _)| *g == group) {
            Some((_, s)) => *s = (*s).max(seen),
            None => self.groups.push((group, seen)),
        }
    }

    /// Merges a new batch and returns the reports that were accepted.
    pub fn merge(&mut self, new: Vec<SuspectReport>, dedupe_window: Duration) -> Vec<SuspectReport> {
        let within = |earlier: Timestamp, later: Timestamp| {
            later >= earlier && later.saturating_since(earlier) < dedupe_window
        };

        let mut accepted = Vec::new();
        for mut r in new {
            if let Some(g) = r.group_id {
                // Join the earliest group against the same target that is
                // still live.
                let existing = self
                    .groups
                    .iter()
                    .filter(|(hg, seen)| hg.target == g.target && within(*seen, r.window_start))
                    .map(|(hg, _)| *hg)
                    .min_by_key(|hg| hg.since);
                if let Some(existing) = existing {
                    if existing.since < g.since {
                        r.group_id = Some(existing);
                    }
                }
                self.touch(r.group_id.unwrap_or(g), r.window_start);
            }
            let repeat = self.reports.iter().any(|h| {
                h.src_addr == r.src_addr && h.kind == r.kind && within(h.window_start, r.window_start)
            });
            if repeat {
                continue;
            }
            self.reports.push(r.clone());
            accepted.push(r);
        }
        accepted
    }
}

/// Functional form: returns `history` extended by the accepted part of `new`.
pub fn merge_reports(
    history: &[SuspectReport],
    new: Vec<SuspectReport>,
    dedupe_window: Duration,
) -> Vec<SuspectReport> {
    let mut h = ReportHistory::new(history.to_vec());
    h.merge(new, dedupe_window);
    h.into_reports()
}
