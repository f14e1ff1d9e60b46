use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, ValueEnum};
use crossbeam_channel::RecvTimeoutError;
use flowwatch::aggregate::{assign_to_windows, sample_interval};
use flowwatch::classify::write_reports;
use flowwatch::ingest::{pack_datagrams, read_flow_csv, write_flow_csv, write_replay, UdpCollector};
use flowwatch::mitigate::{emit_firewall_rules, replay_journal, Blacklist, Dialect};
use flowwatch::model::{detect_anomalies, fit_model, load_model, save_model, FitOptions};
use flowwatch::pipeline::{run_batch_with, Pipeline, PipelineConfig};
use flowwatch::simulate::{
    Attack, AttackSpec, LoicParams, PingFloodParams, PortScanParams, ScenarioSpec,
};
use flowwatch::{FlowRecord, IntervalSample, Timestamp};
use tracing::{info, warn};

use crate::{CliError, Done};

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// Standard output for `None` or `-`, otherwise a new file.
fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) if p.as_os_str() == "-" => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
        Some(p) => Ok(Box::new(create(p)?)),
    }
}

fn secs(s: &str) -> std::result::Result<Duration, String> {
    let v: f64 = s.parse().map_err(|_| format!("not a number of seconds: {s:?}"))?;
    Duration::try_from_secs_f64(v)
        .map(|d| Duration::from_millis(d.as_millis() as u64))
        .map_err(|e| e.to_string())
}

/// Pipeline settings that may be given on the command line; they take
/// precedence over the configuration file.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Classification window, seconds.
    #[arg(long, value_parser = secs)]
    classify_window: Option<Duration>,
    /// Model-sample window, seconds.
    #[arg(long, value_parser = secs)]
    fit_window: Option<Duration>,
    /// Completed-flow grace for classification, seconds.
    #[arg(long, value_parser = secs)]
    grace: Option<Duration>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Blacklist entry lifetime, seconds.
    #[arg(long, value_parser = secs)]
    block_ttl: Option<Duration>,
    /// Never report or block addresses in this prefix (repeatable).
    #[arg(long, value_name = "PREFIX")]
    whitelist: Vec<ipnet::Ipv4Net>,
    /// Traffic model document to start from.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Blacklist journal, restored on start and appended to.
    #[arg(long)]
    journal: Option<PathBuf>,
    #[arg(long)]
    rule_dialect: Option<Dialect>,
    /// Classify only while an anomaly run is in progress.
    #[arg(long)]
    classify_only_on_anomaly: bool,
}

impl ConfigArgs {
    fn resolve(&self, file: Option<&Path>) -> Result<PipelineConfig> {
        let mut c = match file {
            Some(p) => PipelineConfig::load_unchecked(p).map_err(|e| match e {
                flowwatch::pipeline::PipelineError::Io { .. } => CliError::Io(e.to_string()),
                other => CliError::Usage(format!("{}: {other}", p.display())),
            })?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = self.classify_window {
            c.classify_window = v;
        }
        if let Some(v) = self.fit_window {
            c.fit_window = v;
        }
        if let Some(v) = self.grace {
            c.grace = v;
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.block_ttl {
            c.block_ttl = v;
        }
        if !self.whitelist.is_empty() {
            c.whitelist = self.whitelist.clone();
        }
        if let Some(v) = &self.model {
            c.model = Some(v.clone());
        }
        if let Some(v) = &self.journal {
            c.journal = Some(v.clone());
        }
        if let Some(v) = self.rule_dialect {
            c.rule_dialect = v;
        }
        c.classify_only_on_anomaly |= self.classify_only_on_anomaly;
        c.validate()?;
        Ok(c)
    }
}

fn read_records(path: &Path) -> Result<Vec<FlowRecord>> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    let mut bad = 0usize;
    for item in read_flow_csv(BufReader::new(f)) {
        match item {
            Ok(r) => out.push(r),
            Err(flowwatch::ingest::CsvError::Io(e)) => return Err(io_err(path, e)),
            Err(e) => {
                bad += 1;
                if bad <= 10 {
                    warn!("{}: {e}", path.display());
                }
            }
        }
    }
    if bad > 0 {
        warn!(skipped = bad, "{}: malformed lines skipped", path.display());
    }
    Ok(out)
}

/// The epoch-aligned span `[from, until]` covering every record.
fn span(records: &[FlowRecord], step: Duration) -> Option<(Timestamp, Timestamp)> {
    let first = records.iter().map(|r| r.start_time).min()?;
    let last = records.iter().map(|r| r.end_time()).max()?;
    let from = first.floor_to(step);
    let until = (last + step).floor_to(step);
    Some((from, until))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    /// Flow CSV.
    Csv,
    /// Length-prefixed NetFlow v5 datagrams.
    #[value(alias = "netflow-pcapless-udp-replay")]
    Replay,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AttackKindArg {
    PortScan,
    Loic,
    PingFlood,
}

#[derive(Debug, Clone)]
struct AttackArg {
    kind: AttackKindArg,
    offset: Duration,
}

fn parse_attack(s: &str) -> std::result::Result<AttackArg, String> {
    let (kind, offset) = s.split_once('@').unwrap_or((s, "0"));
    Ok(AttackArg {
        kind: AttackKindArg::from_str(kind, true)?,
        offset: secs(offset)?,
    })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario document (TOML). Defaults to one hour of baseline traffic.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario length, seconds.
    #[arg(long, value_parser = secs)]
    duration: Option<Duration>,
    /// Add an attack with default parameters: KIND[@OFFSET_SECONDS], KIND one
    /// of port-scan, loic, ping-flood (repeatable).
    #[arg(long, value_parser = parse_attack)]
    attack: Vec<AttackArg>,
    /// Output file; standard output when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Send the datagrams to a collector instead of writing them.
    #[arg(long, value_name = "ADDR")]
    send: Option<SocketAddr>,
}

pub fn simulate(a: SimulateArgs) -> Result<Done> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            toml::from_str::<ScenarioSpec>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(d) = a.duration {
        spec.duration = d;
    }
    for at in &a.attack {
        let attack = match at.kind {
            AttackKindArg::PortScan => Attack::PortScan(PortScanParams::default()),
            AttackKindArg::Loic => Attack::LoicDdos(LoicParams::default()),
            AttackKindArg::PingFlood => Attack::PingFlood(PingFloodParams::default()),
        };
        spec.attacks.push(AttackSpec {
            start: at.offset,
            attack,
        });
    }
    let mut records = spec
        .generate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    info!(records = records.len(), "scenario generated");

    if let Some(addr) = a.send {
        records.sort_by_key(|r| r.end_time());
        let datagrams = encode(&spec, &records)?;
        let sock = UdpSocket::bind(("0.0.0.0", 0)).map_err(|e| CliError::Io(e.to_string()))?;
        for (i, d) in datagrams.iter().enumerate() {
            sock.send_to(d, addr)
                .map_err(|e| CliError::Io(format!("{addr}: {e}")))?;
            if i % 64 == 63 {
                std::thread::sleep(Duration::from_millis(1));
            }
        }
        info!(datagrams = datagrams.len(), %addr, "scenario sent");
        return Ok(Done::Clean);
    }

    let out = output(a.out.as_deref())?;
    let fail = |e: io::Error| CliError::Io(format!("writing output: {e}"));
    match a.format {
        Format::Csv => write_flow_csv(out, &records).map_err(fail)?,
        Format::Replay => {
            records.sort_by_key(|r| r.end_time());
            write_replay(out, &encode(&spec, &records)?).map_err(fail)?
        }
    }
    Ok(Done::Clean)
}

fn encode(spec: &ScenarioSpec, records: &[FlowRecord]) -> Result<Vec<Vec<u8>>> {
    let boot = spec.start - Duration::from_secs(3600);
    pack_datagrams(records, boot, 0).map_err(|e| CliError::Usage(e.to_string()))
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Flow CSV to analyze.
    input: PathBuf,
    /// Where to write reports (JSON lines); standard output when omitted.
    #[arg(long, short)]
    reports: Option<PathBuf>,
    /// Print one status line per tick to standard error.
    #[arg(long)]
    status: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn analyze(config: Option<&Path>, a: AnalyzeArgs) -> Result<Done> {
    let cfg = a.config.resolve(config)?;
    let records = read_records(&a.input)?;
    let mut out = output(a.reports.as_deref())?;
    let Some((from, until)) = span(&records, cfg.classify_window) else {
        out.flush().map_err(|e| CliError::Io(e.to_string()))?;
        return Ok(Done::Clean);
    };
    let mut pipeline = Pipeline::open(cfg)?;
    let status = a.status;
    let run = run_batch_with(&mut pipeline, records, from, until, |t| {
        if status {
            eprintln!("{}", t.status_line());
        }
    })?;
    pipeline.flush()?;
    write_reports(&mut out, run.reports.iter().map(|(_, r)| r))
        .map_err(|e| CliError::Io(format!("writing reports: {e}")))?;
    info!(
        ticks = run.ticks,
        reports = run.reports.len(),
        max_tick_ms = run.max_tick_latency.as_secs_f64() * 1e3,
        "analysis complete"
    );
    Ok(if run.reports.is_empty() {
        Done::Clean
    } else {
        Done::Reported
    })
}

/// Model samples over the fit-window grid spanning the records.
fn fit_samples(cfg: &PipelineConfig, records: &[FlowRecord]) -> Vec<IntervalSample> {
    let Some((from, until)) = span(records, cfg.fit_window) else {
        return Vec::new();
    };
    let windows = assign_to_windows(records, cfg.fit_window, cfg.sample_grace);
    let mut out = Vec::new();
    let mut ws = from;
    while ws < until {
        let assigned = windows.get(&ws).map(Vec::as_slice).unwrap_or(&[]);
        out.push(sample_interval(ws, cfg.fit_window, assigned, cfg.flow_counting));
        ws = ws + cfg.fit_window;
    }
    out
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Flow CSV of normal traffic.
    input: PathBuf,
    /// Model document to write.
    #[arg(long, short)]
    out: PathBuf,
    /// Fewest usable samples accepted.
    #[arg(long)]
    min_samples: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn fit(config: Option<&Path>, a: FitArgs) -> Result<Done> {
    let cfg = a.config.resolve(config)?;
    let records = read_records(&a.input)?;
    let samples = fit_samples(&cfg, &records);
    let opts = FitOptions {
        epsilon: cfg.epsilon,
        min_samples: a.min_samples.unwrap_or(cfg.min_fit_samples),
    };
    let model = fit_model(&samples, opts).map_err(|e| CliError::Io(format!("fit failed: {e}")))?;
    save_model(&a.out, &model).map_err(|e| io_err(&a.out, e))?;
    eprintln!(
        "b={:.3} k={:.5} epsilon={} samples={}",
        model.b, model.k, model.epsilon, model.fitted_on
    );
    Ok(Done::Clean)
}

#[derive(Debug, Args)]
pub struct PlotDataArgs {
    /// Flow CSV.
    input: PathBuf,
    /// CSV to write; standard output when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn plot_data(config: Option<&Path>, a: PlotDataArgs) -> Result<Done> {
    let cfg = a.config.resolve(config)?;
    let path = cfg
        .model
        .clone()
        .ok_or_else(|| CliError::Usage("plot-data needs a model (--model or config)".into()))?;
    let model = load_model(&path).map_err(|e| io_err(&path, e))?;
    let records = read_records(&a.input)?;
    let samples = fit_samples(&cfg, &records);
    let flagged: Vec<Timestamp> = detect_anomalies(&model, &samples, cfg.consecutive_m)
        .iter()
        .flat_map(|ev| ev.samples.iter().map(|s| s.window_start))
        .collect();
    let mut out = output(a.out.as_deref())?;
    let mut write = || -> io::Result<()> {
        writeln!(out, "window_start,N,B,band_lower,band_upper,anomaly_flag")?;
        for s in &samples {
            let band = model.band(s.active_flows);
            writeln!(
                out,
                "{},{},{:.3},{:.3},{:.3},{}",
                s.window_start,
                s.active_flows,
                s.load_bps,
                band.lower,
                band.upper,
                u8::from(flagged.contains(&s.window_start))
            )?;
        }
        out.flush()
    };
    write().map_err(|e| CliError::Io(format!("writing plot data: {e}")))?;
    Ok(Done::Clean)
}

#[derive(Debug, Args)]
pub struct BlacklistArgs {
    /// Blacklist journal to replay.
    #[arg(long)]
    journal: Option<PathBuf>,
    #[arg(long)]
    dialect: Option<Dialect>,
    /// Evaluate the list at this instant (epoch ms or UTC date-time);
    /// defaults to now.
    #[arg(long)]
    at: Option<Timestamp>,
}

pub fn blacklist(config: Option<&Path>, a: BlacklistArgs) -> Result<Done> {
    let cfg = ConfigArgs::default().resolve(config)?;
    let journal = a
        .journal
        .or(cfg.journal.clone())
        .ok_or_else(|| CliError::Usage("no journal given (--journal or config)".into()))?;
    let at = a.at.unwrap_or_else(Timestamp::now);
    let f = File::open(&journal).map_err(|e| io_err(&journal, e))?;
    let replay = replay_journal(BufReader::new(f), Blacklist::new(cfg.block_ttl), Some(at))
        .map_err(|e| io_err(&journal, e))?;
    if let Some(w) = &replay.warning {
        eprintln!("flowwatch: {w}");
    }
    let mut bl = replay.blacklist;
    bl.expire(at);
    let mut out = BufWriter::new(io::stdout().lock());
    for rule in emit_firewall_rules(&bl, a.dialect.unwrap_or(cfg.rule_dialect)) {
        writeln!(out, "{rule}").map_err(|e| CliError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(Done::Clean)
}

#[derive(Debug, Args)]
pub struct WatchArgs {
    /// UDP address to collect NetFlow v5 on.
    #[arg(long)]
    listen: Option<SocketAddr>,
    /// Rewrite this file with the full rule set whenever it changes.
    #[arg(long)]
    rules_out: Option<PathBuf>,
    /// Stop after this many ticks.
    #[arg(long, hide = true)]
    ticks: Option<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn watch(config: Option<&Path>, a: WatchArgs) -> Result<Done> {
    let mut cfg = a.config.resolve(config)?;
    if let Some(l) = a.listen {
        cfg.listen = l;
    }
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, Arc::clone(&stop))
            .map_err(|e| CliError::Io(format!("installing signal handler: {e}")))?;
    }

    let mut collector = UdpCollector::bind(cfg.listen).map_err(|e| CliError::Io(e.to_string()))?;
    let local = collector.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
    eprintln!("flowwatch: collecting NetFlow v5 on {local}");
    let ingest_stats = collector.stats();
    let cw = cfg.classify_window;
    let mut pipeline = Pipeline::open_persistent(cfg)?;
    let (tx, rx) = crossbeam_channel::bounded::<FlowRecord>(1 << 20);
    let collector_stop = Arc::clone(&stop);
    let handle = std::thread::spawn(move || collector.run(&tx, &collector_stop));

    let mut next_tick = Timestamp::now().floor_to(cw) + cw;
    let mut ticks = 0u64;
    let mut result = Ok(Done::Clean);
    let mut batch = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        let wait = next_tick
            .saturating_since(Timestamp::now())
            .min(Duration::from_millis(200));
        match rx.recv_timeout(wait) {
            Ok(r) => {
                batch.push(r);
                batch.extend(rx.try_iter());
                pipeline.ingest(batch.drain(..));
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        if Timestamp::now() < next_tick {
            continue;
        }
        let out = match pipeline.tick(next_tick) {
            Ok(o) => o,
            Err(e) => {
                result = Err(e.into());
                break;
            }
        };
        let s = ingest_stats.snapshot();
        println!(
            "{} datagrams={} decode_errors={} gap={}",
            out.status_line(),
            s.datagrams,
            s.decode_errors,
            s.last_sequence_gap
        );
        for r in &out.reports {
            eprintln!("{}", r.to_line());
        }
        if let (Some(rules), Some(path)) = (&out.rules, &a.rules_out) {
            if let Err(e) = write_rules(path, rules) {
                result = Err(e);
                break;
            }
        }
        let _ = io::stdout().flush();
        next_tick = next_tick + cw;
        ticks += 1;
        if a.ticks.is_some_and(|n| ticks >= n) {
            break;
        }
    }

    stop.store(true, Ordering::Relaxed);
    pipeline.flush()?;
    drop(rx);
    match handle.join() {
        Ok(Ok(())) => {}
        Ok(Err(e)) => warn!(error = %e, "collector stopped with an error"),
        Err(_) => warn!("collector thread panicked"),
    }
    eprintln!("flowwatch: stopped after {ticks} ticks, journal flushed");
    result
}

fn write_rules(path: &Path, rules: &[String]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = create(&tmp)?;
    for r in rules {
        writeln!(f, "{r}").map_err(|e| io_err(&tmp, e))?;
    }
    f.flush().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}
