use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::time::Duration;

use thiserror::Error;

use super::{Pipeline, PipelineError, TickOutput};
use crate::aggregate::IntervalSample;
use crate::classify::SuspectReport;
use crate::flow::{millis, FlowRecord, Timestamp};
use crate::model::AnomalyEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("scenario completed without a matching report")]
pub struct NotDetected;

/// What a batch run over recorded flows produced.
#[derive(Debug, Clone, Default)]
pub struct ScenarioRun {
    pub ticks: usize,
    /// Accepted reports with the tick that emitted them.
    pub reports: Vec<(Timestamp, SuspectReport)>,
    pub fit_samples: Vec<IntervalSample>,
    pub anomalies: Vec<AnomalyEvent>,
    pub max_tick_latency: Duration,
}

impl ScenarioRun {
    pub fn reported_sources(&self) -> BTreeSet<Ipv4Addr> {
        self.reports.iter().map(|(_, r)| r.src_addr).collect()
    }

    /// Time from `attack_start` to the first tick reporting any of
    /// `attackers`.
    pub fn detection_latency(
        &self,
        attack_start: Timestamp,
        attackers: &[Ipv4Addr],
    ) -> Result<Duration, NotDetected> {
        self.reports
            .iter()
            .filter(|(at, r)| *at >= attack_start && attackers.contains(&r.src_addr))
            .map(|(at, _)| at.saturating_since(attack_start))
            .min()
            .ok_or(NotDetected)
    }
}

/// Replays `records` through `pipeline` on virtual time, ticking at every
/// classification boundary in `(from, until]`. A record becomes visible at
/// the first tick at or after its end time, as an exporter would deliver it.
pub fn run_batch(
    pipeline: &mut Pipeline,
    records: Vec<FlowRecord>,
    from: Timestamp,
    until: Timestamp,
) -> Result<ScenarioRun, PipelineError> {
    run_batch_with(pipeline, records, from, until, |_| {})
}

/// [`run_batch`] with a callback observing every tick.
pub fn run_batch_with<F: FnMut(&TickOutput)>(
    pipeline: &mut Pipeline,
    mut records: Vec<FlowRecord>,
    from: Timestamp,
    until: Timestamp,
    mut on_tick: F,
) -> Result<ScenarioRun, PipelineError> {
    let step = millis(pipeline.config().classify_window);
    records.sort_by_key(|r| r.end_time());
    let mut pending = records.into_iter().peekable();
    let mut run = ScenarioRun::default();

    let mut t = (from.as_millis().div_euclid(step) + 1) * step;
    while t <= until.as_millis() {
        let now = Timestamp(t);
        let mut ready = Vec::new();
        while let Some(r) = pending.next_if(|r| r.end_time() <= now) {
            ready.push(r);
        }
        pipeline.ingest(ready);
        let out = pipeline.tick(now)?;
        on_tick(&out);
        run.ticks += 1;
        run.max_tick_latency = run.max_tick_latency.max(out.latency);
        run.fit_samples.extend(out.fit_sample);
        run.anomalies.extend(out.anomaly.clone());
        run.reports.extend(out.reports.into_iter().map(|r| (now, r)));
        t += step;
    }
    Ok(run)
}
