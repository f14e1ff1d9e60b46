use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::Sender;
use serde::Serialize;
use thiserror::Error;
use tracing::{debug, warn};

use super::netflow::decode_netflow_v5;
use crate::flow::FlowRecord;

pub const DEFAULT_PORT: u16 = 2055;

#[derive(Debug, Error)]
pub enum ListenError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Session counters, shared between the receiving task and status readers.
#[derive(Debug, Default)]
pub struct IngestStats {
    datagrams: AtomicU64,
    records_ok: AtomicU64,
    records_rejected: AtomicU64,
    decode_errors: AtomicU64,
    last_sequence_gap: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct IngestStatsSnapshot {
    pub datagrams: u64,
    pub records_ok: u64,
    pub records_rejected: u64,
    pub decode_errors: u64,
    pub last_sequence_gap: u64,
}

impl IngestStats {
    pub fn snapshot(&self) -> IngestStatsSnapshot {
        IngestStatsSnapshot {
            datagrams: self.datagrams.load(Ordering::Relaxed),
            records_ok: self.records_ok.load(Ordering::Relaxed),
            records_rejected: self.records_rejected.load(Ordering::Relaxed),
            decode_errors: self.decode_errors.load(Ordering::Relaxed),
            last_sequence_gap: self.last_sequence_gap.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ExporterId {
    peer: SocketAddr,
    engine_type: u8,
    engine_id: u8,
}

/// Decodes, validates and accounts datagrams; keeps per-exporter sequence
/// state so that lost export datagrams show up as gaps.
#[derive(Debug, Default)]
pub struct DatagramProcessor {
    stats: Arc<IngestStats>,
    next_sequence: HashMap<ExporterId, u32>,
}

impl DatagramProcessor {
    pub fn new(stats: Arc<IngestStats>) -> Self {
        DatagramProcessor {
            stats,
            next_sequence: HashMap::new(),
        }
    }

    pub fn stats(&self) -> &Arc<IngestStats> {
        &self.stats
    }

    /// Returns the valid records of one datagram. Never fails: decode errors
    /// and invalid records only move counters.
    pub fn process(&mut self, peer: SocketAddr, datagram: &[u8]) -> Vec<FlowRecord> {
        let stats = &self.stats;
        stats.datagrams.fetch_add(1, Ordering::Relaxed);
        let decoded = match decode_netflow_v5(datagram) {
            Ok(d) => d,
            Err(e) => {
                debug!(%peer, error = %e, "dropping datagram");
                stats.decode_errors.fetch_add(1, Ordering::Relaxed);
                return Vec::new();
            }
        };

        let h = decoded.header;
        let id = ExporterId {
            peer,
            engine_type: h.engine_type,
            engine_id: h.engine_id,
        };
        if let Some(expected) = self.next_sequence.get(&id) {
            let gap = h.flow_sequence.wrapping_sub(*expected);
            // Backward jumps are exporter restarts or reordering, not loss.
            if gap != 0 && gap < 1 << 31 {
                warn!(%peer, gap, "netflow sequence gap");
                stats
                    .last_sequence_gap
                    .store(u64::from(gap), Ordering::Relaxed);
            }
        }
        self.next_sequence
            .insert(id, h.flow_sequence.wrapping_add(u32::from(h.count)));

        let mut out = Vec::with_capacity(decoded.records.len());
        for flow in decoded.flows() {
            match flow.validate() {
                Ok(f) => {
                    stats.records_ok.fetch_add(1, Ordering::Relaxed);
                    out.push(f);
                }
                Err(e) => {
                    debug!(%peer, error = %e, "rejecting record");
                    stats.records_rejected.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        out
    }
}

/// UDP NetFlow v5 receiver. One producer per socket.
pub struct UdpCollector {
    socket: UdpSocket,
    processor: DatagramProcessor,
}

impl UdpCollector {
    pub fn bind(addr: SocketAddr) -> Result<Self, ListenError> {
        let socket =
            UdpSocket::bind(addr).map_err(|source| ListenError::BindFailure { addr, source })?;
        socket.set_read_timeout(Some(Duration::from_millis(200)))?;
        Ok(UdpCollector {
            socket,
            processor: DatagramProcessor::default(),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    pub fn stats(&self) -> Arc<IngestStats> {
        Arc::clone(self.processor.stats())
    }

    /// Receives until `stop` is set or every queue receiver is gone. Blocks on
    /// a full queue.
    pub fn run(&mut self, queue: &Sender<FlowRecord>, stop: &AtomicBool) -> Result<(), ListenError> {
        let mut buf = [0u8; 65_536];
        while !stop.load(Ordering::Relaxed) {
            let (len, peer) = match self.socket.recv_from(&mut buf) {
                Ok(x) => x,
                Err(e)
                    if matches!(
                        e.kind(),
                        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted
                    ) =>
                {
                    continue
                }
                Err(e) => return Err(e.into()),
            };
            for record in self.processor.process(peer, &buf[..len]) {
                if queue.send(record).is_err() {
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}

/// Binds and runs a collector on the current thread.
pub fn listen_udp(
    addr: SocketAddr,
    queue: &Sender<FlowRecord>,
    stop: &AtomicBool,
) -> Result<Arc<IngestStats>, ListenError> {
    let mut collector = UdpCollector::bind(addr)?;
    collector.run(queue, stop)?;
    Ok(collector.stats())
}

#[cfg(test)]
mod tests {
    use std::net::Ipv4Addr;
    use std::time::Duration;

    use super::*;
    use crate::flow::{FlowKey, Timestamp, PROTO_TCP, PROTO_UDP};
    use crate::ingest::netflow::{encode_netflow_v5, NetflowV5Header, V5Record};

    fn peer() -> SocketAddr {
        "192.0.2.1:9995".parse().unwrap()
    }

    fn flow() -> FlowRecord {
        FlowRecord {
            key: FlowKey::new(
                PROTO_UDP,
                Ipv4Addr::new(10, 0, 0, 1),
                53,
                Ipv4Addr::new(10, 0, 0, 2),
                53,
            ),
            start_time: Timestamp(1_304_251_200_000),
            duration: Duration::from_millis(10),
            packets: 1,
            bytes: 60,
        }
    }

    fn datagram(seq: u32, n: usize) -> Vec<u8> {
        let h = NetflowV5Header::at(Timestamp(1_304_251_260_000), Timestamp(1_304_000_000_000), seq);
        encode_netflow_v5(&h, &vec![V5Record::from(flow()); n]).unwrap()
    }

    #[test]
    fn valid_datagram_counts_records() {
        let mut p = DatagramProcessor::default();
        let out = p.process(peer(), &datagram(0, 4));
        assert_eq!(out.len(), 4);
        let s = p.stats().snapshot();
        assert_eq!(s.records_ok, 4);
        assert_eq!(s.datagrams, 1);
    }

    #[test]
    fn garbage_counts_decode_error() {
        let mut p = DatagramProcessor::default();
        assert!(p.process(peer(), b"not a netflow datagram").is_empty());
        let s = p.stats().snapshot();
        assert_eq!(s.decode_errors, 1);
        assert_eq!(s.records_ok, 0);
    }

    #[test]
    fn invalid_records_are_rejected_not_fatal() {
        let mut bad = flow();
        bad.key = FlowKey::new(PROTO_TCP, bad.key.src_addr, 1, bad.key.dst_addr, 2);
        bad.packets = 10;
        bad.bytes = 5;
        let h = NetflowV5Header::at(Timestamp(1_304_251_260_000), Timestamp(1_304_000_000_000), 0);
        let d = encode_netflow_v5(&h, &[flow().into(), bad.into()]).unwrap();
        let mut p = DatagramProcessor::default();
        assert_eq!(p.process(peer(), &d).len(), 1);
        let s = p.stats().snapshot();
        assert_eq!((s.records_ok, s.records_rejected), (1, 1));
    }

    #[test]
    fn sequence_gap_detected() {
        let mut p = DatagramProcessor::default();
        p.process(peer(), &datagram(100, 5));
        p.process(peer(), &datagram(105, 5));
        assert_eq!(p.stats().snapshot().last_sequence_gap, 0);
        // 110 expected, 140 received: 30 flows lost.
        p.process(peer(), &datagram(140, 5));
        assert_eq!(p.stats().snapshot().last_sequence_gap, 30);
    }
}
