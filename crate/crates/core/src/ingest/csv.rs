//! Flow-CSV text format.
//!
//! One header line, then one flow per line:
//!
//! ```text
//! start_time,duration_s,protocol,src_addr,src_port,dst_addr,dst_port,packets,bytes
//! 2011-05-01 12:00:00.000,0.020,TCP,10.0.0.1,51000,10.0.0.2,80,1,48
//! ```
//!
//! Times are UTC with millisecond precision. Ingress interface and ToS are not
//! part of the format and read back as zero.

use std::io::{self, BufRead, Write};
use std::net::{IpAddr, Ipv4Addr};
use std::time::Duration;

use chrono::DateTime;
use thiserror::Error;

use crate::flow::{FlowKey, FlowRecord, Timestamp, PROTO_ICMP, PROTO_TCP, PROTO_UDP};

pub const CSV_HEADER: &str =
    "start_time,duration_s,protocol,src_addr,src_port,dst_addr,dst_port,packets,bytes";
const COLUMNS: usize = 9;
const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S%.3f";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn protocol_name(proto: u8) -> Option<&'static str> {
    match proto {
        PROTO_TCP => Some("TCP"),
        PROTO_UDP => Some("UDP"),
        PROTO_ICMP => Some("ICMP"),
        _ => None,
    }
}

pub fn parse_protocol(s: &str) -> Option<u8> {
    match s.to_ascii_uppercase().as_str() {
        "TCP" => Some(PROTO_TCP),
        "UDP" => Some(PROTO_UDP),
        "ICMP" => Some(PROTO_ICMP),
        other => other.parse().ok(),
    }
}

fn parse_time(s: &str) -> Result<Timestamp, String> {
    if s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("bad start_time {s:?}"));
    }
    s.parse::<Timestamp>().map_err(|e| format!("start_time: {e}"))
}

/// Seconds with at most three decimals, parsed exactly into milliseconds.
fn parse_seconds(s: &str) -> Result<Duration, String> {
    let bad = || format!("bad duration {s:?}");
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    if whole.is_empty() || frac.len() > 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let secs: u64 = whole.parse().map_err(|_| bad())?;
    let frac_ms: u64 = if frac.is_empty() {
        0
    } else {
        format!("{frac:0<3}").parse().map_err(|_| bad())?
    };
    secs.checked_mul(1000)
        .and_then(|ms| ms.checked_add(frac_ms))
        .map(Duration::from_millis)
        .ok_or_else(bad)
}

fn parse_addr(s: &str, what: &str) -> Result<Ipv4Addr, String> {
    match s.parse::<IpAddr>() {
        Ok(IpAddr::V4(a)) => Ok(a),
        Ok(IpAddr::V6(_)) => Err(format!("{what}: IPv6 is not supported")),
        Err(_) => Err(format!("bad {what} {s:?}")),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad {what} {s:?}"))
}

/// Parses a single data line.
pub fn parse_line(line: &str) -> Result<FlowRecord, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != COLUMNS {
        return Err(format!(
            "expected {COLUMNS} fields, found {}",
            fields.len()
        ));
    }
    let protocol =
        parse_protocol(fields[2]).ok_or_else(|| format!("bad protocol {:?}", fields[2]))?;
    let record = FlowRecord {
        key: FlowKey::new(
            protocol,
            parse_addr(fields[3], "src_addr")?,
            parse_num(fields[4], "src_port")?,
            parse_addr(fields[5], "dst_addr")?,
            parse_num(fields[6], "dst_port")?,
        ),
        start_time: parse_time(fields[0])?,
        duration: parse_seconds(fields[1])?,
        packets: parse_num(fields[7], "packets")?,
        bytes: parse_num(fields[8], "bytes")?,
    };
    record.validate().map_err(|e| e.to_string())
}

/// Iterator over the records of a flow-CSV stream.
///
/// Blank lines and `#` comments are skipped, as is a leading header line.
/// A malformed line yields an error item and the stream continues.
pub struct FlowCsvReader<R> {
    lines: io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Iterator for FlowCsvReader<R> {
    type Item = Result<FlowRecord, CsvError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if self.line_no == 1 && trimmed.starts_with("start_time") {
                continue;
            }
            return Some(parse_line(trimmed).map_err(|reason| CsvError::MalformedLine {
                line: self.line_no,
                reason,
            }));
        }
    }
}

pub fn read_flow_csv<R: BufRead>(reader: R) -> FlowCsvReader<R> {
    FlowCsvReader {
        lines: reader.lines(),
        line_no: 0,
    }
}

pub fn format_line(r: &FlowRecord) -> String {
    let start = DateTime::from_timestamp_millis(r.start_time.as_millis())
        .map(|dt| dt.format(TIME_FORMAT).to_string())
        .unwrap_or_default();
    let ms = r.duration.as_millis();
    let proto = protocol_name(r.key.protocol)
        .map(str::to_owned)
        .unwrap_or_else(|| r.key.protocol.to_string());
    format!(
        "{start},{}.{:03},{proto},{},{},{},{},{},{}",
        ms / 1000,
        ms % 1000,
        r.key.src_addr,
        r.key.src_port,
        r.key.dst_addr,
        r.key.dst_port,
        r.packets,
        r.bytes
    )
}

pub fn write_flow_csv<'a, W, I>(mut out: W, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a FlowRecord>,
{
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", format_line(r))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn read_all(text: &str) -> Vec<Result<FlowRecord, CsvError>> {
        read_flow_csv(text.as_bytes()).collect()
    }

    #[test]
    fn reads_documented_line() {
        let rs = read_all("2011-05-01 12:00:00.000,0.020,TCP,10.0.0.1,51000,10.0.0.2,80,1,48\n");
        assert_eq!(rs.len(), 1);
        let r = rs[0].as_ref().unwrap();
        assert_eq!(r.duration, Duration::from_millis(20));
        assert_eq!(r.bytes, 48);
        assert_eq!(r.packets, 1);
        assert_eq!(r.key.protocol, PROTO_TCP);
        assert_eq!(r.key.src_port, 51000);
        assert_eq!(r.start_time, Timestamp(1_304_251_200_000));
    }

    #[test]
    fn empty_stream() {
        assert!(read_all("").is_empty());
    }

    #[test]
    fn eight_fields_is_malformed_and_stream_continues() {
        let text = format!(
            "{CSV_HEADER}\n2011-05-01 12:00:00.000,0.020,TCP,10.0.0.1,51000,10.0.0.2,80,1\n\
             2011-05-01 12:00:00.000,0.020,UDP,10.0.0.1,53,10.0.0.2,53,1,60\n"
        );
        let rs = read_all(&text);
        assert_eq!(rs.len(), 2);
        assert!(matches!(rs[0], Err(CsvError::MalformedLine { line: 2, .. })));
        assert!(rs[1].is_ok());
    }

    #[test]
    fn rejects_ipv6_and_invalid_records() {
        let rs = read_all(
            "2011-05-01 12:00:00.000,0.020,TCP,::1,1,10.0.0.2,80,1,48\n\
             2011-05-01 12:00:00.000,0.020,TCP,10.0.0.1,1,10.0.0.2,80,5,4\n\
             2011-05-01 12:00:00.000,0.0201,TCP,10.0.0.1,1,10.0.0.2,80,1,4\n",
        );
        let reasons: Vec<String> = rs.into_iter().map(|r| r.unwrap_err().to_string()).collect();
        assert!(reasons[0].contains("IPv6"), "{}", reasons[0]);
        assert!(reasons[1].contains("bytes < packets"), "{}", reasons[1]);
        assert!(reasons[2].contains("duration"), "{}", reasons[2]);
    }

    #[test]
    fn numeric_protocols_and_iso_times() {
        let r = parse_line("2011-05-01T12:00:00.5Z,1,47,10.0.0.1,0,10.0.0.2,0,2,100").unwrap();
        assert_eq!(r.key.protocol, 47);
        assert_eq!(r.start_time, Timestamp(1_304_251_200_500));
        assert_eq!(r.duration, Duration::from_secs(1));
        assert!(format_line(&r).contains(",47,"));
    }

    #[test]
    fn write_empty_and_single() {
        let mut buf = Vec::new();
        write_flow_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));

        let r = parse_line("2011-05-01 12:00:00.000,0.020,TCP,10.0.0.1,51000,10.0.0.2,80,1,48")
            .unwrap();
        let mut buf = Vec::new();
        write_flow_csv(&mut buf, &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "2011-05-01 12:00:00.000,0.020,TCP,10.0.0.1,51000,10.0.0.2,80,1,48"
        );
    }

    fn arb_record() -> impl Strategy<Value = FlowRecord> {
        (
            prop_oneof![Just(PROTO_TCP), Just(PROTO_UDP), Just(PROTO_ICMP), Just(47u8)],
            any::<u32>(),
            any::<u32>(),
            any::<u16>(),
            any::<u16>(),
            -2_000_000_000_000i64..4_000_000_000_000,
            0u64..10_000_000,
            1u64..1_000_000,
            0u64..1_000_000,
        )
            .prop_map(|(proto, s, d, sp, dp, start, dur, pkts, extra)| {
                let (sp, dp) = if proto == 47 { (0, 0) } else { (sp, dp) };
                FlowRecord {
                    key: FlowKey::new(proto, s.into(), sp, d.into(), dp),
                    start_time: Timestamp(start),
                    duration: Duration::from_millis(dur),
                    packets: pkts,
                    bytes: pkts + extra,
                }
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip(records in proptest::collection::vec(arb_record(), 0..10)) {
            let mut buf = Vec::new();
            write_flow_csv(&mut buf, &records).unwrap();
            let back: Vec<FlowRecord> = read_flow_csv(buf.as_slice())
                .collect::<Result<_, _>>()
                .unwrap();
            prop_assert_eq!(back, records);
        }
    }
}
