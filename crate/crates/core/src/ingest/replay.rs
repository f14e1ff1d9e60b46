//! Datagram replay files: export datagrams stored back to back, each
//! prefixed by its length as a big-endian `u16`. Suitable for replaying a
//! capture over UDP without a packet-capture library.

use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("replay stream truncated at offset {0}")]
    Truncated(usize),
    #[error("zero-length datagram at offset {0}")]
    Empty(usize),
}

pub fn write_replay<W: Write>(mut out: W, datagrams: &[Vec<u8>]) -> io::Result<()> {
    for d in datagrams {
        let len = u16::try_from(d.len())
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "datagram over 64 KiB"))?;
        out.write_all(&len.to_be_bytes())?;
        out.write_all(d)?;
    }
    out.flush()
}

/// Iterates the datagrams in a replay buffer. Stops after the first error.
pub fn read_replay(buf: &[u8]) -> impl Iterator<Item = Result<&[u8], ReplayError>> {
    let mut pos = 0usize;
    let mut failed = false;
    std::iter::from_fn(move || {
        if failed || pos == buf.len() {
            return None;
        }
        let at = pos;
        let Some(len) = buf.get(pos..pos + 2) else {
            failed = true;
            return Some(Err(ReplayError::Truncated(at)));
        };
        let len = usize::from(u16::from_be_bytes([len[0], len[1]]));
        if len == 0 {
            failed = true;
            return Some(Err(ReplayError::Empty(at)));
        }
        match buf.get(pos + 2..pos + 2 + len) {
            Some(d) => {
                pos += 2 + len;
                Some(Ok(d))
            }
            None => {
                failed = true;
                Some(Err(ReplayError::Truncated(at)))
            }
        }
    })
}
