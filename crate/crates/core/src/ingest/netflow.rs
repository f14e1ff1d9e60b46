//! NetFlow v5 codec.
//!
//! A v5 export datagram is a 24-byte header followed by `count` fixed 48-byte
//! records, all big-endian. Record timestamps are router uptime offsets; they
//! are converted to absolute time through the header's export clock.

use std::net::Ipv4Addr;
use std::time::Duration;

use thiserror::Error;

use crate::flow::{FlowKey, FlowRecord, Timestamp};

pub const HEADER_LEN: usize = 24;
pub const RECORD_LEN: usize = 48;
pub const MAX_RECORDS: usize = 30;
pub const VERSION: u16 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetflowError {
    #[error("unsupported netflow version {0}")]
    BadVersion(u16),
    #[error("datagram length {len} does not match header (expected {expected})")]
    TruncatedDatagram { len: usize, expected: usize },
    #[error("record count {0} outside 1..=30")]
    BadCount(usize),
    #[error("{0} records do not fit in one v5 datagram")]
    TooManyRecords(usize),
    #[error("field overflow: {0}")]
    Overflow(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NetflowV5Header {
    pub version: u16,
    pub count: u16,
    pub sys_uptime_ms: u32,
    pub unix_secs: u32,
    pub unix_nsecs: u32,
    pub flow_sequence: u32,
    pub engine_type: u8,
    pub engine_id: u8,
    /// Parsed and preserved, never used for renormalization.
    pub sampling_interval: u16,
}

impl NetflowV5Header {
    /// Header for an export at `export_time` from a router booted at `boot_time`.
    pub fn at(export_time: Timestamp, boot_time: Timestamp, flow_sequence: u32) -> Self {
        let ms = export_time.as_millis();
        NetflowV5Header {
            version: VERSION,
            count: 0,
            sys_uptime_ms: (ms - boot_time.as_millis()) as u32,
            unix_secs: ms.div_euclid(1000) as u32,
            unix_nsecs: (ms.rem_euclid(1000) as u32) * 1_000_000,
            flow_sequence,
            engine_type: 0,
            engine_id: 0,
            sampling_interval: 0,
        }
    }

    /// Absolute export time in milliseconds.
    pub fn export_millis(&self) -> i64 {
        i64::from(self.unix_secs) * 1000 + i64::from(self.unix_nsecs / 1_000_000)
    }
}

/// v5 record fields that have no place in [`FlowRecord`] but must survive a
/// decode/encode round trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct V5Extras {
    pub next_hop: Ipv4Addr,
    pub output_ifindex: u16,
    pub pad1: u8,
    pub tcp_flags: u8,
    pub src_as: u16,
    pub dst_as: u16,
    pub src_mask: u8,
    pub dst_mask: u8,
    pub pad2: u16,
}

impl Default for V5Extras {
    fn default() -> Self {
        V5Extras {
            next_hop: Ipv4Addr::UNSPECIFIED,
            output_ifindex: 0,
            pad1: 0,
            tcp_flags: 0,
            src_as: 0,
            dst_as: 0,
            src_mask: 0,
            dst_mask: 0,
            pad2: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct V5Record {
    pub flow: FlowRecord,
    pub extras: V5Extras,
}

impl From<FlowRecord> for V5Record {
    fn from(flow: FlowRecord) -> Self {
        V5Record {
            flow,
            extras: V5Extras::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct V5Datagram {
    pub header: NetflowV5Header,
    pub records: Vec<V5Record>,
}

impl V5Datagram {
    pub fn flows(&self) -> impl Iterator<Item = FlowRecord> + '_ {
        self.records.iter().map(|r| r.flow)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.buf[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        out
    }

    fn u8(&mut self) -> u8 {
        self.take::<1>()[0]
    }

    fn u16(&mut self) -> u16 {
        u16::from_be_bytes(self.take())
    }

    fn u32(&mut self) -> u32 {
        u32::from_be_bytes(self.take())
    }

    fn addr(&mut self) -> Ipv4Addr {
        Ipv4Addr::from(self.u32())
    }
}

/// Decodes one export datagram. Records are not validated here.
pub fn decode_netflow_v5(datagram: &[u8]) -> Result<V5Datagram, NetflowError> {
    if datagram.len() < HEADER_LEN {
        return Err(NetflowError::TruncatedDatagram {
            len: datagram.len(),
            expected: HEADER_LEN,
        });
    }
    let mut rd = Reader {
        buf: datagram,
        pos: 0,
    };
    let version = rd.u16();
    if version != VERSION {
        return Err(NetflowError::BadVersion(version));
    }
    let count = rd.u16();
    if count == 0 || usize::from(count) > MAX_RECORDS {
        return Err(NetflowError::BadCount(usize::from(count)));
    }
    let expected = HEADER_LEN + RECORD_LEN * usize::from(count);
    if datagram.len() != expected {
        return Err(NetflowError::TruncatedDatagram {
            len: datagram.len(),
            expected,
        });
    }
    let header = NetflowV5Header {
        version,
        count,
        sys_uptime_ms: rd.u32(),
        unix_secs: rd.u32(),
        unix_nsecs: rd.u32(),
        flow_sequence: rd.u32(),
        engine_type: rd.u8(),
        engine_id: rd.u8(),
        sampling_interval: rd.u16(),
    };
    let export_ms = header.export_millis();

    let records = (0..count)
        .map(|_| {
            let src_addr = rd.addr();
            let dst_addr = rd.addr();
            let next_hop = rd.addr();
            let input = rd.u16();
            let output = rd.u16();
            let packets = rd.u32();
            let bytes = rd.u32();
            let first = rd.u32();
            let last = rd.u32();
            let src_port = rd.u16();
            let dst_port = rd.u16();
            let pad1 = rd.u8();
            let tcp_flags = rd.u8();
            let protocol = rd.u8();
            let tos = rd.u8();
            let extras = V5Extras {
                next_hop,
                output_ifindex: output,
                pad1,
                tcp_flags,
                src_as: rd.u16(),
                dst_as: rd.u16(),
                src_mask: rd.u8(),
                dst_mask: rd.u8(),
                pad2: rd.u16(),
            };
            // Uptime counters wrap every ~49.7 days; take the most recent
            // reading consistent with the header's uptime.
            let age = header.sys_uptime_ms.wrapping_sub(first);
            let flow = FlowRecord {
                key: FlowKey {
                    src_addr,
                    dst_addr,
                    src_port,
                    dst_port,
                    protocol,
                    ingress_ifindex: input,
                    tos,
                },
                start_time: Timestamp(export_ms - i64::from(age)),
                duration: Duration::from_millis(u64::from(last.wrapping_sub(first))),
                packets: u64::from(packets),
                bytes: u64::from(bytes),
            };
            V5Record { flow, extras }
        })
        .collect();

    Ok(V5Datagram { header, records })
}

/// Encodes records under `header`. The header's `version` and `count` are
/// ignored and recomputed.
pub fn encode_netflow_v5(
    header: &NetflowV5Header,
    records: &[V5Record],
) -> Result<Vec<u8>, NetflowError> {
    if records.is_empty() {
        return Err(NetflowError::BadCount(0));
    }
    if records.len() > MAX_RECORDS {
        return Err(NetflowError::TooManyRecords(records.len()));
    }
    let export_ms = header.export_millis();
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * records.len());
    out.extend_from_slice(&VERSION.to_be_bytes());
    out.extend_from_slice(&(records.len() as u16).to_be_bytes());
    out.extend_from_slice(&header.sys_uptime_ms.to_be_bytes());
    out.extend_from_slice(&header.unix_secs.to_be_bytes());
    out.extend_from_slice(&header.unix_nsecs.to_be_bytes());
    out.extend_from_slice(&header.flow_sequence.to_be_bytes());
    out.push(header.engine_type);
    out.push(header.engine_id);
    out.extend_from_slice(&header.sampling_interval.to_be_bytes());

    for rec in records {
        let f = &rec.flow;
        let x = &rec.extras;
        let packets =
            u32::try_from(f.packets).map_err(|_| NetflowError::Overflow("packet counter"))?;
        let bytes = u32::try_from(f.bytes).map_err(|_| NetflowError::Overflow("octet counter"))?;
        let age = u32::try_from(export_ms - f.start_time.as_millis())
            .map_err(|_| NetflowError::Overflow("start time outside the uptime window"))?;
        let dur = u32::try_from(f.duration.as_millis())
            .map_err(|_| NetflowError::Overflow("flow duration"))?;
        let first = header.sys_uptime_ms.wrapping_sub(age);
        let last = first.wrapping_add(dur);

        out.extend_from_slice(&u32::from(f.key.src_addr).to_be_bytes());
        out.extend_from_slice(&u32::from(f.key.dst_addr).to_be_bytes());
        out.extend_from_slice(&u32::from(x.next_hop).to_be_bytes());
        out.extend_from_slice(&f.key.ingress_ifindex.to_be_bytes());
        out.extend_from_slice(&x.output_ifindex.to_be_bytes());
        out.extend_from_slice(&packets.to_be_bytes());
        out.extend_from_slice(&bytes.to_be_bytes());
        out.extend_from_slice(&first.to_be_bytes());
        out.extend_from_slice(&last.to_be_bytes());
        out.extend_from_slice(&f.key.src_port.to_be_bytes());
        out.extend_from_slice(&f.key.dst_port.to_be_bytes());
        out.push(x.pad1);
        out.push(x.tcp_flags);
        out.push(f.key.protocol);
        out.push(f.key.tos);
        out.extend_from_slice(&x.src_as.to_be_bytes());
        out.extend_from_slice(&x.dst_as.to_be_bytes());
        out.push(x.src_mask);
        out.push(x.dst_mask);
        out.extend_from_slice(&x.pad2.to_be_bytes());
    }
    Ok(out)
}

/// Packs flows into as many datagrams as needed, 30 records each, with the
/// export clock of each datagram set to the latest end time it carries.
/// `flow_sequence` advances by the number of records already exported.
pub fn pack_datagrams(
    flows: &[FlowRecord],
    boot_time: Timestamp,
    first_sequence: u32,
) -> Result<Vec<Vec<u8>>, NetflowError> {
    let mut seq = first_sequence;
    flows
        .chunks(MAX_RECORDS)
        .map(|chunk| {
            let export = chunk
                .iter()
                .map(FlowRecord::end_time)
                .max()
                .expect("chunks are non-empty");
            // Round the export clock up to the next whole second so that
            // unix_nsecs stays representable and no flow ends after export.
            let export = Timestamp((export.as_millis() + 999).div_euclid(1000) * 1000);
            let header = NetflowV5Header::at(export, boot_time, seq);
            seq = seq.wrapping_add(chunk.len() as u32);
            let recs: Vec<V5Record> = chunk.iter().copied().map(V5Record::from).collect();
            encode_netflow_v5(&header, &recs)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::PROTO_TCP;

    fn sample_flow() -> FlowRecord {
        FlowRecord {
            key: FlowKey::new(
                PROTO_TCP,
                Ipv4Addr::new(10, 0, 0, 1),
                51000,
                Ipv4Addr::new(10, 0, 0, 2),
                80,
            ),
            start_time: Timestamp(1_304_251_200_000),
            duration: Duration::from_millis(20),
            packets: 1,
            bytes: 48,
        }
    }

    fn header() -> NetflowV5Header {
        NetflowV5Header::at(
            Timestamp(1_304_251_260_000),
            Timestamp(1_304_000_000_000),
            7,
        )
    }

    #[test]
    fn zero_count_is_bad_count() {
        let mut d = vec![0u8; 24];
        d[1] = 5;
        assert_eq!(decode_netflow_v5(&d), Err(NetflowError::BadCount(0)));
    }

    #[test]
    fn odd_length_is_truncated() {
        let mut d = vec![0u8; 71];
        d[1] = 5;
        d[3] = 1;
        assert!(matches!(
            decode_netflow_v5(&d),
            Err(NetflowError::TruncatedDatagram { len: 71, .. })
        ));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut d = vec![0u8; 72];
        d[1] = 9;
        d[3] = 1;
        assert_eq!(decode_netflow_v5(&d), Err(NetflowError::BadVersion(9)));
    }

    #[test]
    fn short_buffer_rejected() {
        assert!(matches!(
            decode_netflow_v5(&[0, 5]),
            Err(NetflowError::TruncatedDatagram { len: 2, .. })
        ));
    }

    #[test]
    fn single_record_is_72_bytes_and_decodes() {
        let bytes = encode_netflow_v5(&header(), &[sample_flow().into()]).unwrap();
        assert_eq!(bytes.len(), 72);
        let d = decode_netflow_v5(&bytes).unwrap();
        assert_eq!(d.header.count, 1);
        assert_eq!(d.records[0].flow, sample_flow());
    }

    #[test]
    fn encoder_limits() {
        assert_eq!(
            encode_netflow_v5(&header(), &[]),
            Err(NetflowError::BadCount(0))
        );
        let many = vec![V5Record::from(sample_flow()); 31];
        assert_eq!(
            encode_netflow_v5(&header(), &many),
            Err(NetflowError::TooManyRecords(31))
        );
        let mut big = sample_flow();
        big.bytes = u64::from(u32::MAX) + 1;
        assert_eq!(
            encode_netflow_v5(&header(), &[big.into()]),
            Err(NetflowError::Overflow("octet counter"))
        );
        let mut future = sample_flow();
        future.start_time = Timestamp(header().export_millis() + 1);
        assert!(matches!(
            encode_netflow_v5(&header(), &[future.into()]),
            Err(NetflowError::Overflow(_))
        ));
    }

    #[test]
    fn uptime_wraparound_resolves_to_recent_past() {
        // Router uptime has just wrapped: header says 1000 ms, flow started
        // 3000 ms before export at an uptime of 2^32 - 2000.
        let mut h = header();
        h.sys_uptime_ms = 1000;
        let mut f = sample_flow();
        f.start_time = Timestamp(h.export_millis() - 3000);
        f.duration = Duration::from_millis(2500);
        let bytes = encode_netflow_v5(&h, &[f.into()]).unwrap();
        let first = u32::from_be_bytes(bytes[24 + 24..24 + 28].try_into().unwrap());
        assert_eq!(first, u32::MAX - 1999);
        assert_eq!(decode_netflow_v5(&bytes).unwrap().records[0].flow, f);
    }

    #[test]
    fn pack_splits_into_thirty() {
        let flows = vec![sample_flow(); 61];
        let dgrams = pack_datagrams(&flows, Timestamp(1_304_000_000_000), 100).unwrap();
        assert_eq!(dgrams.len(), 3);
        let seqs: Vec<u32> = dgrams
            .iter()
            .map(|d| decode_netflow_v5(d).unwrap().header.flow_sequence)
            .collect();
        assert_eq!(seqs, vec![100, 130, 160]);
        let total: usize = dgrams
            .iter()
            .map(|d| decode_netflow_v5(d).unwrap().records.len())
            .sum();
        assert_eq!(total, 61);
    }
}
