use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::journal::{JournalEvent, JournalOp};
use crate::classify::{AttackKind, SuspectReport};
use crate::flow::Timestamp;

pub const DEFAULT_BLOCK_TTL: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlacklistEntry {
    pub src_addr: Ipv4Addr,
    pub kind: AttackKind,
    pub added_at: Timestamp,
    pub expires_at: Timestamp,
    /// Reports received while listed, the first one included.
    pub hit_count: u64,
}

/// Blocked sources keyed by address. Owned by a single task.
#[derive(Debug, Clone)]
pub struct Blacklist {
    entries: BTreeMap<Ipv4Addr, BlacklistEntry>,
    ttl: Duration,
    whitelist: Vec<Ipv4Net>,
}

impl Default for Blacklist {
    fn default() -> Self {
        Blacklist::new(DEFAULT_BLOCK_TTL)
    }
}

impl Blacklist {
    pub fn new(ttl: Duration) -> Self {
        Blacklist {
            entries: BTreeMap::new(),
            ttl,
            whitelist: Vec::new(),
        }
    }

    /// Prefixes that are never blocked.
    pub fn with_whitelist(mut self, whitelist: Vec<Ipv4Net>) -> Self {
        self.whitelist = whitelist;
        self
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn is_whitelisted(&self, addr: Ipv4Addr) -> bool {
        self.whitelist.iter().any(|n| n.contains(&addr))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, addr: Ipv4Addr) -> Option<&BlacklistEntry> {
        self.entries.get(&addr)
    }

    /// Entries in ascending address order.
    pub fn entries(&self) -> impl Iterator<Item = &BlacklistEntry> {
        self.entries.values()
    }

    /// Inserts new suspects and refreshes listed ones. Returns the journal
    /// events describing the changes.
    pub fn update(&mut self, reports: &[SuspectReport], now: Timestamp) -> Vec<JournalEvent> {
        let mut events = Vec::new();
        for r in reports {
            if self.is_whitelisted(r.src_addr) {
                continue;
            }
            let expires_at = now + self.ttl;
            let op = match self.entries.get_mut(&r.src_addr) {
                Some(e) => {
                    e.hit_count += 1;
                    e.expires_at = e.expires_at.max(expires_at);
                    JournalOp::Refresh {
                        src_addr: e.src_addr,
                        expires_at: e.expires_at,
                        hit_count: e.hit_count,
                    }
                }
                None => {
                    let entry = BlacklistEntry {
                        src_addr: r.src_addr,
                        kind: r.kind,
                        added_at: now,
                        expires_at,
                        hit_count: 1,
                    };
                    info!(addr = %r.src_addr, kind = %r.kind, until = %expires_at, "blocking source");
                    self.entries.insert(r.src_addr, entry);
                    JournalOp::Add { entry }
                }
            };
            events.push(JournalEvent { at: now, op });
        }
        events
    }

    /// Removes every entry with `expires_at <= now`.
    pub fn expire(&mut self, now: Timestamp) -> Vec<JournalEvent> {
        let gone: Vec<Ipv4Addr> = self
            .entries
            .values()
            .filter(|e| e.expires_at <= now)
            .map(|e| e.src_addr)
            .collect();
        gone.into_iter()
            .map(|src_addr| {
                self.entries.remove(&src_addr);
                info!(addr = %src_addr, "block expired");
                JournalEvent {
                    at: now,
                    op: JournalOp::Expire { src_addr },
                }
            })
            .collect()
    }

    /// Applies a journaled event.
    pub fn apply(&mut self, event: &JournalEvent) {
        match event.op {
            JournalOp::Add { entry } => {
                self.entries.insert(entry.src_addr, entry);
            }
            JournalOp::Refresh {
                src_addr,
                expires_at,
                hit_count,
            } => {
                if let Some(e) = self.entries.get_mut(&src_addr) {
                    e.expires_at = expires_at;
                    e.hit_count = hit_count;
                }
            }
            JournalOp::Expire { src_addr } => {
                self.entries.remove(&src_addr);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::SourceStats;

    fn report(addr: [u8; 4]) -> SuspectReport {
        SuspectReport {
            window_start: Timestamp(0),
            src_addr: addr.into(),
            kind: AttackKind::PortScan,
            group_id: None,
            evidence: SourceStats {
                src_addr: addr.into(),
                window_start: Timestamp(0),
                flow_count: 1,
                tiny_flow_count: 1,
                max_flow_duration: Duration::ZERO,
                max_flow_packets: 1,
                total_bytes: 40,
                distinct_dst_addrs: 1,
                distinct_dst_ports: 1,
                top_dst_addr: Ipv4Addr::LOCALHOST,
            },
        }
    }

    const T: Timestamp = Timestamp(1_000_000);

    #[test]
    fn insert_and_refresh() {
        let mut bl = Blacklist::default();
        let ev = bl.update(&[report([10, 1, 2, 3])], T);
        assert_eq!(ev.len(), 1);
        let e = bl.get([10, 1, 2, 3].into()).unwrap();
        assert_eq!(e.expires_at, Timestamp(1_300_000));
        assert_eq!(e.hit_count, 1);

        bl.update(&[report([10, 1, 2, 3])], Timestamp(1_100_000));
        let e = bl.get([10, 1, 2, 3].into()).unwrap();
        assert_eq!(e.hit_count, 2);
        assert_eq!(e.expires_at, Timestamp(1_400_000));
        assert_eq!(e.added_at, T);
    }

    #[test]
    fn refresh_never_shortens() {
        let mut bl = Blacklist::default();
        bl.update(&[report([10, 1, 2, 3])], T);
        bl.update(&[report([10, 1, 2, 3])], Timestamp(900_000));
        assert_eq!(bl.get([10, 1, 2, 3].into()).unwrap().expires_at, Timestamp(1_300_000));
    }

    #[test]
    fn empty_reports_leave_list_unchanged() {
        let mut bl = Blacklist::default();
        bl.update(&[report([10, 1, 2, 3])], T);
        let before: Vec<_> = bl.entries().copied().collect();
        assert!(bl.update(&[], T).is_empty());
        assert_eq!(bl.entries().copied().collect::<Vec<_>>(), before);
    }

    #[test]
    fn expiry_boundary_is_inclusive() {
        let mut bl = Blacklist::default();
        bl.update(&[report([10, 1, 2, 3])], T);
        assert!(bl.expire(Timestamp(1_299_999)).is_empty());
        assert_eq!(bl.len(), 1);
        assert_eq!(bl.expire(Timestamp(1_300_000)).len(), 1);
        assert!(bl.is_empty());
        assert!(bl.expire(Timestamp(2_000_000)).is_empty());
    }

    #[test]
    fn whitelisted_sources_are_never_listed() {
        let mut bl = Blacklist::default().with_whitelist(vec!["10.1.0.0/16".parse().unwrap()]);
        assert!(bl.update(&[report([10, 1, 2, 3])], T).is_empty());
        assert!(bl.is_empty());
        bl.update(&[report([10, 2, 2, 3])], T);
        assert_eq!(bl.len(), 1);
    }
}
