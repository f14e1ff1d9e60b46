//! The detection loop: buffered records in, one tick per classification
//! window out.
//!
//! A tick closes `[now - classify_window, now)`, classifies its sources,
//! merges and journals the resulting reports and maintains the blacklist.
//! When `now` also closes a fit window the tick takes a model sample, tracks
//! anomaly runs against the current model and refits when due. Time is always
//! passed in, so replayed scenarios tick on virtual time.

mod batch;
mod config;

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use thiserror::Error;
use tracing::{debug, info, warn};

use crate::aggregate::{assign_window, sample_interval, source_stats, IntervalSample};
use crate::classify::{classify_window, ReportHistory, SuspectReport};
use crate::flow::{millis, FlowRecord, Timestamp};
use crate::mitigate::{
    emit_firewall_rules, replay_journal, Blacklist, Journal, JournalEvent, MitigateError,
};
use crate::model::{fit_model, load_model, save_model, AnomalyEvent, Band, FitOptions, ModelError, RunTracker, TrafficModel};

pub use batch::{run_batch, run_batch_with, NotDetected, ScenarioRun};
pub use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Storage(#[from] MitigateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("tick at {now} is not aligned to the classification window")]
    Misaligned { now: Timestamp },
}

/// Everything one tick produced.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub now: Timestamp,
    /// The closed classification window.
    pub sample: IntervalSample,
    /// The closed fit window, on ticks that end one.
    pub fit_sample: Option<IntervalSample>,
    pub band: Option<Band>,
    /// Set on the tick where an anomaly run reaches the required length.
    pub anomaly: Option<AnomalyEvent>,
    /// True while an anomaly run of the required length is in progress.
    pub anomaly_active: bool,
    pub classified: bool,
    /// Reports accepted after de-duplication.
    pub reports: Vec<SuspectReport>,
    pub journal: Vec<JournalEvent>,
    /// The full rule set, present when the blacklist changed.
    pub rules: Option<Vec<String>>,
    pub blacklist_len: usize,
    pub refitted: bool,
    pub latency: Duration,
}

impl TickOutput {
    /// One structured status line.
    pub fn status_line(&self) -> String {
        let mut s = format!(
            "window={} n={} b={:.0}",
            self.sample.window_start, self.sample.active_flows, self.sample.load_bps
        );
        if let Some(f) = &self.fit_sample {
            let _ = write!(s, " fit_n={} fit_b={:.0}", f.active_flows, f.load_bps);
        }
        match &self.band {
            Some(b) => {
                let _ = write!(s, " band={:.0}..{:.0}", b.lower, b.upper);
            }
            None => s.push_str(" band=-"),
        }
        let _ = write!(
            s,
            " anomaly={} reports={} blacklist={} latency_us={}",
            u8::from(self.anomaly_active),
            self.reports.len(),
            self.blacklist_len,
            self.latency.as_micros()
        );
        s
    }
}

#[derive(Debug, Clone, Copy)]
struct ModelSample {
    sample: IntervalSample,
    anomalous: bool,
}

/// Detection state owned by the tick task.
pub struct Pipeline {
    config: PipelineConfig,
    model: Option<TrafficModel>,
    records: Vec<FlowRecord>,
    rejected: u64,
    blacklist: Blacklist,
    history: ReportHistory,
    journal: Option<Journal>,
    tracker: RunTracker,
    samples: VecDeque<ModelSample>,
    last_fit: Option<Timestamp>,
    last_tick: Option<Timestamp>,
    autosave_model: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let blacklist = Blacklist::new(config.block_ttl).with_whitelist(config.whitelist.clone());
        Ok(Pipeline {
            tracker: RunTracker::new(config.consecutive_m),
            config,
            model: None,
            records: Vec::new(),
            rejected: 0,
            blacklist,
            history: ReportHistory::default(),
            journal: None,
            samples: VecDeque::new(),
            last_fit: None,
            autosave_model: false,
            last_tick: None,
        })
    }

    /// Like [`Pipeline::new`], additionally loading the configured model and
    /// restoring the blacklist from the configured journal before appending
    /// to it.
    pub fn open(config: PipelineConfig) -> Result<Self, PipelineError> {
        let mut p = Pipeline::new(config)?;
        if let Some(path) = p.config.model.clone() {
            p.model = Some(load_model_at(&path)?);
        }
        p.restore_journal()?;
        Ok(p)
    }

    /// For long-running detectors: a configured model file that does not
    /// exist yet is not an error, and every successful refit is written
    /// back to it so a restart resumes from the last fit.
    pub fn open_persistent(config: PipelineConfig) -> Result<Self, PipelineError> {
        let mut p = Pipeline::new(config)?;
        if let Some(path) = p.config.model.clone() {
            if path.exists() {
                p.model = Some(load_model_at(&path)?);
            } else {
                info!(path = %path.display(), "no saved model; fitting from live traffic");
            }
            p.autosave_model = true;
        }
        p.restore_journal()?;
        Ok(p)
    }

    fn restore_journal(&mut self) -> Result<(), PipelineError> {
        let p = self;
        if let Some(path) = p.config.journal.clone() {
            if path.exists() {
                let f = File::open(&path).map_err(MitigateError::from)?;
                let base = Blacklist::new(p.config.block_ttl)
                    .with_whitelist(p.config.whitelist.clone());
                let replay = replay_journal(BufReader::new(f), base, None)?;
                info!(entries = replay.blacklist.len(), "blacklist restored from journal");
                p.blacklist = replay.blacklist;
            }
            p.journal = Some(Journal::open(&path)?);
        }
        Ok(())
    }

    pub fn with_model(mut self, model: TrafficModel) -> Self {
        self.model = Some(model);
        self
    }

    pub fn with_journal(mut self, journal: Journal) -> Self {
        self.journal = Some(journal);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn model(&self) -> Option<&TrafficModel> {
        self.model.as_ref()
    }

    pub fn blacklist(&self) -> &Blacklist {
        &self.blacklist
    }

    /// Reports still inside the de-duplication horizon.
    pub fn recent_reports(&self) -> &[SuspectReport] {
        self.history.reports()
    }

    pub fn buffered(&self) -> usize {
        self.records.len()
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn rules(&self) -> Vec<String> {
        emit_firewall_rules(&self.blacklist, self.config.rule_dialect)
    }

    /// Buffers exported records; invalid ones are counted and dropped.
    pub fn ingest<I: IntoIterator<Item = FlowRecord>>(&mut self, records: I) -> usize {
        let before = self.records.len();
        for r in records {
            match r.validate() {
                Ok(r) => self.records.push(r),
                Err(e) => {
                    self.rejected += 1;
                    debug!(error = %e, "record rejected");
                }
            }
        }
        self.records.len() - before
    }

    /// Runs one cycle for the window ending at `now`.
    pub fn tick(&mut self, now: Timestamp) -> Result<TickOutput, PipelineError> {
        let started = Instant::now();
        let cw = self.config.classify_window;
        let fw = self.config.fit_window;
        if now.as_millis().rem_euclid(millis(cw)) != 0 {
            return Err(PipelineError::Misaligned { now });
        }

        let ws = now - cw;
        let records = std::mem::take(&mut self.records);
        let assigned = assign_window(&records, ws, cw, self.config.grace);
        let sample = sample_interval(ws, cw, &assigned, self.config.flow_counting);

        let mut fit_sample = None;
        let mut band = None;
        let mut anomaly = None;
        let mut refitted = false;
        if now.as_millis().rem_euclid(millis(fw)) == 0 {
            let fs = now - fw;
            let fit_assigned = assign_window(&records, fs, fw, self.config.sample_grace);
            let s = sample_interval(fs, fw, &fit_assigned, self.config.flow_counting);
            let position = self.model.as_ref().and_then(|m| {
                band = Some(m.band(s.active_flows));
                m.position(&s)
            });
            let was_active = self.tracker.ongoing().is_some();
            self.tracker.push(s, position);
            self.samples.push_back(ModelSample {
                sample: s,
                anomalous: false,
            });
            if let Some(ev) = self.tracker.ongoing() {
                let run = ev.run_length;
                for m in self.samples.iter_mut().rev().take(run) {
                    m.anomalous = true;
                }
                if !was_active {
                    warn!(start = %ev.window_start, direction = ?ev.direction, "anomalous traffic state");
                    anomaly = Some(ev);
                }
            }
            fit_sample = Some(s);
            refitted = self.maybe_refit(now);
        }
        let anomaly_active = self.tracker.ongoing().is_some();

        let classified = !self.config.classify_only_on_anomaly || self.model.is_none() || anomaly_active;
        let mut reports = Vec::new();
        if classified {
            let stats = source_stats(ws, &assigned, self.config.thresholds.tiny_flow_bytes);
            let mut found = classify_window(&stats, &self.config.thresholds);
            found.retain(|r| !self.blacklist.is_whitelisted(r.src_addr));
            reports = self.history.merge(found, self.config.dedupe_window);
        }
        drop(assigned);
        self.records = records;
        self.history
            .prune_before(now - (self.config.dedupe_window + cw));

        let mut journal = self.blacklist.update(&reports, now);
        journal.extend(self.blacklist.expire(now));
        if let Some(j) = self.journal.as_mut() {
            if !journal.is_empty() {
                j.append_all(&journal)?;
            }
        }
        let rules = (!journal.is_empty()).then(|| self.rules());

        self.prune(now);
        self.last_tick = Some(now);
        let out = TickOutput {
            now,
            sample,
            fit_sample,
            band,
            anomaly,
            anomaly_active,
            classified,
            reports,
            journal,
            rules,
            blacklist_len: self.blacklist.len(),
            refitted,
            latency: started.elapsed(),
        };
        debug!("{}", out.status_line());
        Ok(out)
    }

    fn maybe_refit(&mut self, now: Timestamp) -> bool {
        let horizon = now - self.config.fit_history;
        while self
            .samples
            .front()
            .is_some_and(|s| s.sample.window_start < horizon)
        {
            self.samples.pop_front();
        }
        let due = self
            .last_fit
            .is_none_or(|t| now.saturating_since(t) >= self.config.refit_interval);
        if !due {
            return false;
        }
        let clean: Vec<IntervalSample> = self
            .samples
            .iter()
            .filter(|s| !s.anomalous)
            .map(|s| s.sample)
            .collect();
        let opts = FitOptions {
            epsilon: self.config.epsilon,
            min_samples: self.config.min_fit_samples,
        };
        match fit_model(&clean, opts) {
            Ok(mut m) => {
                m.fitted_at = Some(now);
                info!(b = m.b, k = m.k, samples = m.fitted_on, "traffic model refitted");
                if let (true, Some(path)) = (self.autosave_model, &self.config.model) {
                    if let Err(e) = save_model(path, &m) {
                        warn!(path = %path.display(), error = %e, "could not save model");
                    }
                }
                self.model = Some(m);
                self.last_fit = Some(now);
                true
            }
            Err(e) => {
                debug!(error = %e, "refit skipped");
                false
            }
        }
    }

    /// Drops records that no future window can see.
    fn prune(&mut self, now: Timestamp) {
        let cw = self.config.classify_window;
        let earliest = (now + cw) - self.config.fit_window.max(cw);
        let tail = self.config.grace.max(self.config.sample_grace);
        self.records.retain(|r| {
            let active_until = (r.end_time() + tail).as_millis().max(r.start_time.as_millis() + 1);
            active_until > earliest.as_millis()
        });
    }

    /// Flushes the journal, if any.
    pub fn flush(&mut self) -> Result<(), PipelineError> {
        if let Some(j) = self.journal.as_mut() {
            j.flush()?;
        }
        Ok(())
    }
}

fn load_model_at(path: &std::path::Path) -> Result<TrafficModel, PipelineError> {
    load_model(path).map_err(|e| match e {
        ModelError::Io(source) => PipelineError::Io { path: path.to_path_buf(), source },
        other => PipelineError::Model(other),
    })
}
