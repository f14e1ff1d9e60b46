//! TTL blacklist of suspect sources, its append-only journal, and firewall
//! rule rendering. Rules are emitted as text; installing them is left to the
//! operator, e.g. `flowwatch blacklist --journal j.log | xargs -L1 iptables`.

mod blacklist;
mod journal;
mod rules;

use thiserror::Error;

pub use blacklist::{Blacklist, BlacklistEntry, DEFAULT_BLOCK_TTL};
pub use journal::{replay_journal, Journal, JournalEvent, JournalOp, Replay};
pub use rules::{emit_firewall_rules, Dialect};

#[derive(Debug, Error)]
pub enum MitigateError {
    #[error("journal storage failure: {0}")]
    StorageFailure(#[from] std::io::Error),
    #[error("unknown rule dialect {0:?} (expected linux-packet-filter or generic-deny-list)")]
    UnknownDialect(String),
}
