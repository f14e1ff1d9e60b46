use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{host_in, stream_rng, InvalidSpec, ScenarioSpec};
use crate::flow::{millis, FlowKey, FlowRecord, Timestamp, PROTO_TCP, PROTO_UDP};

const TCP_PORTS: [u16; 6] = [80, 443, 22, 25, 993, 8080];
const UDP_PORTS: [u16; 3] = [53, 123, 443];
const MTU_BYTES: u64 = 1400;

/// Baseline flows of window `index`, in generation order.
///
/// Every flow lies entirely inside its window and contributes
/// `rate * window / 8` bytes, so the window's average load is the sum of the
/// drawn per-flow rates.
pub fn gen_baseline_window(spec: &ScenarioSpec, index: u64) -> Result<Vec<FlowRecord>, InvalidSpec> {
    spec.baseline.validate()?;
    let b = &spec.baseline;
    let mut rng = stream_rng(spec.seed, index);
    let window_ms = millis(b.window);
    let window_start = spec.start + Duration::from_millis(index * window_ms as u64);
    let n = rng.random_range(b.flows_per_window[0]..=b.flows_per_window[1]);
    let rate = Normal::new(b.per_flow_rate_mean, b.per_flow_rate_sd)
        .map_err(|e| InvalidSpec(format!("per-flow rate: {e}")))?;
    let max_dur = millis(b.max_flow_duration);
    let secs = b.window.as_secs_f64();

    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let offset = rng.random_range(0..window_ms);
        let dur = rng.random_range(0..=max_dur.min(window_ms - 1 - offset));
        let bps = positive(&rate, &mut rng);
        let bytes = ((bps * secs / 8.0).round() as u64).max(1);
        let packets = bytes.div_ceil(MTU_BYTES).max(1);
        let key = flow_key(spec, &mut rng);
        out.push(FlowRecord {
            key,
            start_time: window_start + Duration::from_millis(offset as u64),
            duration: Duration::from_millis(dur as u64),
            packets,
            bytes,
        });
    }
    Ok(out)
}

fn positive(dist: &Normal<f64>, rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x = dist.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
}

fn flow_key(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> FlowKey {
    let b = &spec.baseline;
    let src = host_in(b.clients, rng.random_range(0..b.client_count));
    let dst = host_in(b.servers, rng.random_range(0..b.server_count));
    let sport = rng.random_range(1024..=u16::MAX);
    if rng.random_bool(0.8) {
        FlowKey::new(PROTO_TCP, src, sport, dst, TCP_PORTS[rng.random_range(0..TCP_PORTS.len())])
    } else {
        FlowKey::new(PROTO_UDP, src, sport, dst, UDP_PORTS[rng.random_range(0..UDP_PORTS.len())])
    }
}

/// All baseline flows of the scenario sorted by start time. Large scenarios
/// should iterate [`BaselineWindows`] instead of materialising everything.
pub fn gen_baseline(spec: &ScenarioSpec) -> Result<Vec<FlowRecord>, InvalidSpec> {
    spec.validate()?;
    let mut out = Vec::new();
    for w in BaselineWindows::new(spec)? {
        out.extend(w?.1);
    }
    out.sort_by_key(|r| r.start_time);
    Ok(out)
}

/// Streams `(window_start, flows)` one baseline window at a time.
pub struct BaselineWindows<'a> {
    spec: &'a ScenarioSpec,
    next: u64,
    count: u64,
}

impl<'a> BaselineWindows<'a> {
    pub fn new(spec: &'a ScenarioSpec) -> Result<Self, InvalidSpec> {
        spec.validate()?;
        Ok(BaselineWindows {
            spec,
            next: 0,
            count: spec.window_count(),
        })
    }
}

impl Iterator for BaselineWindows<'_> {
    type Item = Result<(Timestamp, Vec<FlowRecord>), InvalidSpec>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.count {
            return None;
        }
        let i = self.next;
        self.next += 1;
        let start = self.spec.start + self.spec.baseline.window * i as u32;
        Some(gen_baseline_window(self.spec, i).map(|flows| (start, flows)))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.count - self.next) as usize;
        (left, Some(left))
    }
}
