//! Append-only blacklist journal, one JSON event per line.
//!
//! The blacklist at any instant is a pure function of the journal prefix up
//! to that instant, so a restarted process (or an operator tool) can rebuild
//! it by replay.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::blacklist::{Blacklist, BlacklistEntry};
use super::MitigateError;
use crate::flow::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum JournalOp {
    Add {
        #[serde(flatten)]
        entry: BlacklistEntry,
    },
    Refresh {
        src_addr: Ipv4Addr,
        expires_at: Timestamp,
        hit_count: u64,
    },
    Expire {
        src_addr: Ipv4Addr,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEvent {
    pub at: Timestamp,
    #[serde(flatten)]
    pub op: JournalOp,
}

impl JournalEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("journal events always serialize")
    }
}

/// Append handle on a journal file.
pub struct Journal {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Journal {
    pub fn open(path: impl AsRef<Path>) -> Result<Journal, MitigateError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Journal {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &JournalEvent) -> Result<(), MitigateError> {
        writeln!(self.out, "{}", event.to_line())?;
        Ok(())
    }

    pub fn append_all<'a>(
        &mut self,
        events: impl IntoIterator<Item = &'a JournalEvent>,
    ) -> Result<(), MitigateError> {
        for e in events {
            self.append(e)?;
        }
        self.flush()
    }

    pub fn flush(&mut self) -> Result<(), MitigateError> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }
}

impl Drop for Journal {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

#[derive(Debug, Clone)]
pub struct Replay {
    pub blacklist: Blacklist,
    pub applied: usize,
    /// Set when replay stopped early on a line it could not parse.
    pub warning: Option<String>,
}

/// Rebuilds the blacklist from a journal, applying events stamped at or
/// before `until` (all events when `None`). Stops at the first unreadable
/// line; everything before it is kept.
pub fn replay_journal<R: BufRead>(
    input: R,
    base: Blacklist,
    until: Option<Timestamp>,
) -> Result<Replay, MitigateError> {
    let mut bl = base;
    let mut applied = 0;
    let mut warning = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: JournalEvent = match serde_json::from_str(&line) {
            Ok(e) => e,
            Err(e) => {
                let msg = format!("journal line {}: {e}; replay stopped", i + 1);
                warn!("{msg}");
                warning = Some(msg);
                break;
            }
        };
        if until.is_some_and(|t| event.at > t) {
            break;
        }
        bl.apply(&event);
        applied += 1;
    }
    Ok(Replay {
        blacklist: bl,
        applied,
        warning,
    })
}
