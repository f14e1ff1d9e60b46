use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::blacklist::Blacklist;
use super::MitigateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dialect {
    /// `-A INPUT -s <addr>/32 -j DROP`, suitable for `iptables` / `iptables-restore`.
    #[default]
    LinuxPacketFilter,
    /// Bare addresses, one per line.
    GenericDenyList,
}

impl FromStr for Dialect {
    type Err = MitigateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linux-packet-filter" => Ok(Dialect::LinuxPacketFilter),
            "generic-deny-list" => Ok(Dialect::GenericDenyList),
            other => Err(MitigateError::UnknownDialect(other.to_owned())),
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::LinuxPacketFilter => "linux-packet-filter",
            Dialect::GenericDenyList => "generic-deny-list",
        })
    }
}

/// One drop rule per listed source, in ascending address order.
pub fn emit_firewall_rules(blacklist: &Blacklist, dialect: Dialect) -> Vec<String> {
    blacklist
        .entries()
        .map(|e| match dialect {
            Dialect::LinuxPacketFilter => format!("-A INPUT -s {}/32 -j DROP", e.src_addr),
            Dialect::GenericDenyList => e.src_addr.to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;
    use std::time::Duration;

    use super::*;
    use crate::aggregate::SourceStats;
    use crate::classify::{AttackKind, SuspectReport};
    use crate::flow::Timestamp;

    fn listed(addrs: &[[u8; 4]]) -> Blacklist {
        let mut bl = Blacklist::default();
        let reports: Vec<SuspectReport> = addrs
            .iter()
            .map(|a| SuspectReport {
                window_start: Timestamp(0),
                src_addr: (*a).into(),
                kind: AttackKind::PortScan,
                group_id: None,
                evidence: SourceStats {
                    src_addr: (*a).into(),
                    window_start: Timestamp(0),
                    flow_count: 0,
                    tiny_flow_count: 0,
                    max_flow_duration: Duration::ZERO,
                    max_flow_packets: 0,
                    total_bytes: 0,
                    distinct_dst_addrs: 0,
                    distinct_dst_ports: 0,
                    top_dst_addr: Ipv4Addr::UNSPECIFIED,
                },
            })
            .collect();
        bl.update(&reports, Timestamp(0));
        bl
    }

    #[test]
    fn single_rule_template() {
        assert_eq!(
            emit_firewall_rules(&listed(&[[10, 1, 2, 3]]), Dialect::LinuxPacketFilter),
            vec!["-A INPUT -s 10.1.2.3/32 -j DROP"]
        );
    }

    #[test]
    fn empty_list_no_rules() {
        assert!(emit_firewall_rules(&Blacklist::default(), Dialect::LinuxPacketFilter).is_empty());
    }

    #[test]
    fn sorted_numerically() {
        let bl = listed(&[[10, 0, 0, 20], [9, 255, 0, 1], [10, 0, 0, 3]]);
        assert_eq!(
            emit_firewall_rules(&bl, Dialect::GenericDenyList),
            vec!["9.255.0.1", "10.0.0.3", "10.0.0.20"]
        );
    }

    #[test]
    fn dialect_names() {
        assert_eq!("generic-deny-list".parse::<Dialect>().unwrap(), Dialect::GenericDenyList);
        assert_eq!(
            Dialect::LinuxPacketFilter.to_string().parse::<Dialect>().unwrap(),
            Dialect::LinuxPacketFilter
        );
        assert!(matches!(
            "pf".parse::<Dialect>(),
            Err(MitigateError::UnknownDialect(d)) if d == "pf"
        ));
    }
}
