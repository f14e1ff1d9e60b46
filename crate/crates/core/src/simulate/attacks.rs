use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{attack_stream, host_in, invalid, stream_rng, InvalidSpec, LoicParams, PingFloodParams, PortScanParams};
use crate::flow::{millis, pack_icmp, FlowKey, FlowRecord, Timestamp, PROTO_ICMP, PROTO_TCP, PROTO_UDP};

/// Port-scan flows starting at `start`, drawn from the first attack stream of `seed`.
pub fn gen_portscan(p: &PortScanParams, start: Timestamp, seed: u64) -> Result<Vec<FlowRecord>, InvalidSpec> {
    portscan(p, start, &mut stream_rng(seed, attack_stream(0)))
}

/// LOIC-style flood flows starting at `start`.
pub fn gen_loic_ddos(p: &LoicParams, start: Timestamp, seed: u64) -> Result<Vec<FlowRecord>, InvalidSpec> {
    loic(p, start, &mut stream_rng(seed, attack_stream(0)))
}

/// One long ICMP echo flow per source starting at `start`.
pub fn gen_pingflood(p: &PingFloodParams, start: Timestamp, seed: u64) -> Result<Vec<FlowRecord>, InvalidSpec> {
    pingflood(p, start, &mut stream_rng(seed, attack_stream(0)))
}

/// Single-packet probes sweeping every host of the target, then every port.
pub(super) fn portscan(
    p: &PortScanParams,
    start: Timestamp,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FlowRecord>, InvalidSpec> {
    let span = millis(p.duration);
    let total = (u128::from(p.flows_per_5min) * span as u128 / 300_000) as u64;
    if total == 0 {
        return invalid("port scan produces no flows");
    }
    let hosts = ((1u64 << (32 - p.target.prefix_len())).saturating_sub(2)).max(1);
    let mut out = Vec::with_capacity(total as usize);
    for i in 0..total {
        let slot_start = (u128::from(i) * span as u128 / u128::from(total)) as i64;
        let slot_end = (u128::from(i + 1) * span as u128 / u128::from(total)) as i64;
        let at = slot_start + rng.random_range(0..(slot_end - slot_start).max(1));
        let dst = host_in(p.target, (i % hosts) as u32);
        let port = 1 + ((i / hosts) % 65_535) as u16;
        out.push(FlowRecord {
            key: FlowKey::new(PROTO_TCP, p.scanner, rng.random_range(1024..=u16::MAX), dst, port),
            start_time: start + Duration::from_millis(at as u64),
            duration: Duration::from_millis(rng.random_range(0..1000)),
            packets: 1,
            bytes: rng.random_range(28..=50),
        });
    }
    out.sort_by_key(|r| r.start_time);
    Ok(out)
}

pub(super) fn loic(p: &LoicParams, start: Timestamp, rng: &mut ChaCha8Rng) -> Result<Vec<FlowRecord>, InvalidSpec> {
    if p.sources.is_empty() {
        return invalid("LOIC attack needs at least one source");
    }
    if p.ports.is_empty() {
        return invalid("LOIC attack needs at least one port");
    }
    let [lo, hi] = p.bytes;
    if lo == 0 || hi < lo {
        return invalid("LOIC byte range must be positive and ordered");
    }
    let span = millis(p.duration);
    let per_source = (u128::from(p.flows_per_minute) * span as u128 / 60_000) as u64;
    if per_source == 0 {
        return invalid("LOIC attack produces no flows");
    }
    let mut out = Vec::with_capacity((per_source as usize).saturating_mul(p.sources.len()));
    for &src in &p.sources {
        for _ in 0..per_source {
            let bytes = rng.random_range(lo..=hi);
            let proto = if rng.random_bool(0.5) { PROTO_TCP } else { PROTO_UDP };
            let port = p.ports[rng.random_range(0..p.ports.len())];
            out.push(FlowRecord {
                key: FlowKey::new(proto, src, rng.random_range(1024..=u16::MAX), p.target, port),
                start_time: start + Duration::from_millis(rng.random_range(0..span) as u64),
                duration: Duration::from_millis(rng.random_range(1000..=60_000)),
                packets: bytes.div_ceil(600),
                bytes,
            });
        }
    }
    out.sort_by_key(|r| r.start_time);
    Ok(out)
}

pub(super) fn pingflood(
    p: &PingFloodParams,
    start: Timestamp,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FlowRecord>, InvalidSpec> {
    if p.sources.is_empty() {
        return invalid("ping flood needs at least one source");
    }
    if p.packets == 0 || p.packet_bytes == 0 {
        return invalid("ping flood needs positive packet count and size");
    }
    let bytes = p
        .packets
        .checked_mul(p.packet_bytes)
        .ok_or_else(|| InvalidSpec("ping flood byte count overflows".into()))?;
    let mut out: Vec<FlowRecord> = p
        .sources
        .iter()
        .map(|&src| FlowRecord {
            key: FlowKey::icmp(src, p.target, 8, 0),
            start_time: start + Duration::from_millis(rng.random_range(0..1000)),
            duration: p.duration,
            packets: p.packets,
            bytes,
        })
        .collect();
    debug_assert!(out.iter().all(|r| r.key.protocol == PROTO_ICMP && r.key.dst_port == pack_icmp(8, 0)));
    out.sort_by_key(|r| r.start_time);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    const T0: Timestamp = Timestamp(1_304_208_000_000);

    #[test]
    fn portscan_shape() {
        let flows = gen_portscan(&PortScanParams::default(), T0, 1).unwrap();
        assert_eq!(flows.len(), 15_000);
        let ports: HashSet<_> = flows.iter().map(|f| (f.key.dst_addr, f.key.dst_port)).collect();
        assert_eq!(ports.len(), 15_000);
        for f in &flows {
            assert!((28..=50).contains(&f.bytes));
            assert_eq!(f.packets, 1);
            assert!(f.duration < Duration::from_secs(1));
            assert!(f.start_time >= T0 && f.start_time < T0 + Duration::from_secs(300));
            f.validate().unwrap();
        }
    }

    #[test]
    fn loic_shape() {
        let p = LoicParams {
            duration: Duration::from_secs(120),
            ..LoicParams::with_sources(4)
        };
        let flows = gen_loic_ddos(&p, T0, 2).unwrap();
        assert_eq!(flows.len(), 4 * 6000);
        for f in &flows {
            assert!((200..=5000).contains(&f.bytes));
            assert!(f.duration >= Duration::from_secs(1) && f.duration <= Duration::from_secs(60));
            assert_eq!(f.key.dst_addr, p.target);
            f.validate().unwrap();
        }
    }

    #[test]
    fn pingflood_shape() {
        let flows = gen_pingflood(&PingFloodParams::with_sources(3), T0, 3).unwrap();
        assert_eq!(flows.len(), 3);
        for f in &flows {
            assert_eq!(f.key.icmp_type_code(), Some((8, 0)));
            assert_eq!(f.packets, 20_000);
            assert_eq!(f.bytes, 20_000 * 84);
            assert_eq!(f.duration, Duration::from_secs(1800));
        }
    }

    #[test]
    fn zero_counts_rejected() {
        let p = PortScanParams {
            flows_per_5min: 0,
            ..PortScanParams::default()
        };
        assert!(gen_portscan(&p, T0, 1).is_err());
        let p = LoicParams {
            sources: vec![],
            ..LoicParams::default()
        };
        assert!(gen_loic_ddos(&p, T0, 1).is_err());
        let p = PingFloodParams {
            packets: 0,
            ..PingFloodParams::default()
        };
        assert!(gen_pingflood(&p, T0, 1).is_err());
    }

    #[test]
    fn deterministic() {
        let p = LoicParams::with_sources(2);
        assert_eq!(gen_loic_ddos(&p, T0, 9).unwrap(), gen_loic_ddos(&p, T0, 9).unwrap());
    }
}
