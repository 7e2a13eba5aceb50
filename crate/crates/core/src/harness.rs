//! Experiment runner: forwarding time, throughput, availability and
//! collusion, each emitted as deterministic CSV or JSONL.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::analysis::{collusion_csv_rows, run_collusion_sweep, COLLUSION_CSV_HEADER};
use crate::crypto::sha256;
use crate::netsim::{Millis, DEFAULT_LATENCY_RANGE, DEFAULT_SERVICE_TIME};
use crate::relay::ForwardingProtocol;
use crate::world::{CryptoMode, RequestSpec, TxOutcome, TxRecord, World, WorldConfig, WorldError};
use crate::RelayId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Experiment {
    #[default]
    ForwardingTime,
    Throughput,
    Availability,
    Collusion,
}

impl Experiment {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "forwarding_time" => Some(Self::ForwardingTime),
            "throughput" => Some(Self::Throughput),
            "availability" => Some(Self::Availability),
            "collusion" => Some(Self::Collusion),
            _ => None,
        }
    }

    pub fn slug(&self) -> &'static str {
        match self {
            Self::ForwardingTime => "forwarding_time",
            Self::Throughput => "throughput",
            Self::Availability => "availability",
            Self::Collusion => "collusion",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

/// Stem/proxy parameters matched to the reported starting anonymity sets
/// (about 7 relays for Dandelion++, 4.5 for Clover).
pub fn collusion_protocols() -> Vec<ForwardingProtocol> {
    vec![
        ForwardingProtocol::Dandelion { stem_continue_prob: 6.0 / 7.0 },
        ForwardingProtocol::Clover { fanout: 2, proxy_continue_prob: 0.43 },
    ]
}

/// Dandelion++ and Clover at defaults, plus Shortest Ping with hop budgets
/// 1..=15 so that its (deterministic) path length covers the same x range.
pub fn timing_protocols() -> Vec<ForwardingProtocol> {
    let mut v = vec![ForwardingProtocol::dandelion(), ForwardingProtocol::clover()];
    v.extend((1..=15).map(|hops| ForwardingProtocol::ShortestPing { hops }));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub n_relays: usize,
    /// Empty picks the per-experiment defaults above.
    pub protocols: Vec<ForwardingProtocol>,
    /// Transactions per scenario (per protocol variant; per ratio point for
    /// collusion).
    pub requests: usize,
    pub seeds: Vec<u64>,
    pub arrival_gap_ms: Millis,
    pub latency_range: (Millis, Millis),
    pub service_time: Millis,
    pub crypto: CryptoMode,
    pub failure_counts: Vec<usize>,
    /// Destination inclusion time added to availability processing times.
    pub destination_block_ms: Millis,
    pub entry_retries: u32,
    pub max_reroutes: u32,
    pub collusion_ratios: Vec<f64>,
    /// Colluder resamples per ratio point; `requests` are split across them.
    pub collusion_trials: usize,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::ForwardingTime,
            n_relays: 100,
            protocols: Vec::new(),
            requests: 6000,
            seeds: vec![1],
            arrival_gap_ms: 20,
            latency_range: DEFAULT_LATENCY_RANGE,
            service_time: DEFAULT_SERVICE_TIME,
            crypto: CryptoMode::Fast,
            failure_counts: (0..=10).collect(),
            destination_block_ms: 6000,
            entry_retries: 5,
            max_reroutes: 3,
            collusion_ratios: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            collusion_trials: 50,
            format: OutputFormat::Csv,
            out: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("all {0} relays failed")]
    AllNodesFailed(usize),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_owned()));
        if self.n_relays < 2 {
            return bad("n_relays must be at least 2");
        }
        if self.requests == 0 {
            return bad("requests must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed required");
        }
        if self.latency_range.0 > self.latency_range.1 {
            return bad("latency_range is reversed");
        }
        for p in &self.protocols {
            p.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        match self.experiment {
            Experiment::Availability => {
                if let Some(&f) = self.failure_counts.iter().find(|&&f| f >= self.n_relays) {
                    return Err(HarnessError::AllNodesFailed(f));
                }
                if self.failure_counts.is_empty() {
                    return bad("failure_counts is empty");
                }
            }
            Experiment::Collusion => {
                if self.collusion_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
                    return bad("collusion ratios must lie in [0, 1]");
                }
                if self.collusion_trials == 0 {
                    return bad("collusion_trials must be at least 1");
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn effective_protocols(&self) -> Vec<ForwardingProtocol> {
        if !self.protocols.is_empty() {
            return self.protocols.clone();
        }
        match self.experiment {
            Experiment::Collusion => collusion_protocols(),
            Experiment::Availability => vec![ForwardingProtocol::dandelion(), ForwardingProtocol::clover()],
            _ => timing_protocols(),
        }
    }

    /// SHA-256 of the config with defaults resolved, as hex.
    pub fn hash(&self) -> String {
        let mut resolved = self.clone();
        resolved.protocols = self.effective_protocols();
        resolved.out = None;
        let json = serde_json::to_string(&resolved).expect("config serializes");
        hex::encode(sha256(&[json.as_bytes()]))
    }

    fn world(&self, protocol: ForwardingProtocol, seed: u64, block_ms: Millis) -> WorldConfig {
        WorldConfig {
            n_relays: self.n_relays,
            protocol,
            seed,
            latency_range: self.latency_range,
            service_time: self.service_time,
            crypto: self.crypto,
            destination_block_ms: block_ms,
            entry_retries: self.entry_retries,
            max_reroutes: self.max_reroutes,
            ..WorldConfig::default()
        }
    }
}

/// A global invariant; any failure maps to exit code 3 in the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub experiment: Experiment,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub virtual_ms: Millis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub metadata: Metadata,
    pub checks: Vec<Check>,
    /// Per-(protocol, x) samples kept for statistics; not serialized.
    pub samples: BTreeMap<(String, i64), Vec<f64>>,
    /// Protocol-level scalars such as system throughput.
    pub summary: BTreeMap<String, f64>,
}

impl ExperimentResult {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// (x, value) pairs for one protocol, x ascending.
    pub fn series(&self, protocol: &str, x: &str, y: &str) -> Vec<(f64, f64)> {
        let (Some(p), Some(xi), Some(yi)) = (self.column("protocol"), self.column(x), self.column(y)) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter(|r| r[p] == protocol)
            .filter_map(|r| Some((r[xi].parse().ok()?, r[yi].parse().ok()?)))
            .collect()
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

/// Welch's unequal-variance t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let va = sa * sa / a.len() as f64;
    let vb = sb * sb / b.len() as f64;
    let se = (va + vb).sqrt();
    if se == 0.0 {
        return None;
    }
    let t = (ma - mb) / se;
    let df = (va + vb).powi(2) / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(WelchTest { t, df, p_two_sided: 2.0 * (1.0 - dist.cdf(t.abs())) })
}

/// One finished world run.
struct RunOutput {
    protocol: String,
    records: Vec<TxRecord>,
    served: Vec<u64>,
    total_served: u64,
    duration_ms: Millis,
    final_ms: Millis,
    audit_clean: bool,
    audit_detail: String,
}

const USER: &str = "user-harness";

fn run_world(cfg: WorldConfig, requests: usize, gap: Millis, failures: usize) -> Result<RunOutput, HarnessError> {
    let protocol = cfg.protocol.name().to_owned();
    let n = cfg.n_relays;
    let mut world = World::new(cfg)?;
    world.authorize(USER);
    world.fail_random_relays(failures);
    for i in 0..requests as u64 {
        world.schedule_request(i * gap, RequestSpec::data(USER, b"harness"))?;
    }
    let stats = world.run();
    let audit = world.audit();
    let served: Vec<u64> = (0..=n as u32).map(|i| world.served(RelayId(i))).collect();
    Ok(RunOutput {
        protocol,
        served,
        total_served: world.total_served(),
        duration_ms: stats.final_time.max(1),
        final_ms: stats.final_time,
        audit_clean: audit.clean(),
        audit_detail: format!("{audit:?}"),
        records: world.take_records(),
    })
}

/// Runs scenarios on scoped threads and returns results in input order.
fn parallel<T: Send, R: Send>(jobs: Vec<T>, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = jobs.into_iter().map(|j| s.spawn(move || f(j))).collect();
        handles.into_iter().map(|h| h.join().expect("experiment worker panicked")).collect()
    })
}

fn audit_check(runs: &[RunOutput]) -> Check {
    let bad: Vec<&str> = runs.iter().filter(|r| !r.audit_clean).map(|r| r.audit_detail.as_str()).collect();
    Check {
        name: "no_invalid_forwards_or_identity_leaks".into(),
        passed: bad.is_empty(),
        detail: bad.first().map_or_else(|| "clean".into(), |d| d.to_string()),
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn grouped_rows(samples: &BTreeMap<(String, i64), Vec<f64>>) -> Vec<Vec<String>> {
    samples
        .iter()
        .map(|((p, x), v)| {
            let (m, s) = mean_std(v);
            vec![p.clone(), x.to_string(), f6(m), f6(s), v.len().to_string()]
        })
        .collect()
}

fn timing_runs(cfg: &ExperimentConfig, block_ms: Millis) -> Result<Vec<RunOutput>, HarnessError> {
    let jobs: Vec<(ForwardingProtocol, u64)> =
        cfg.effective_protocols().into_iter().flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s))).collect();
    parallel(jobs, |(p, s)| run_world(cfg.world(p, s, block_ms), cfg.requests, cfg.arrival_gap_ms, 0))
        .into_iter()
        .collect()
}

fn metadata(cfg: &ExperimentConfig, runs: &[RunOutput]) -> Metadata {
    Metadata {
        experiment: cfg.experiment,
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        virtual_ms: runs.iter().map(|r| r.final_ms).max().unwrap_or(0),
    }
}

/// Mean forwarding time (entry receipt to first accepted submission) per
/// realized forwarding count, the relays on the first accepted copy's path.
pub fn run_forwarding_time(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let runs = timing_runs(cfg, 0)?;
    let mut samples: BTreeMap<(String, i64), Vec<f64>> = BTreeMap::new();
    for run in &runs {
        for t in &run.records {
            if let (Some(ft), Some(h)) = (t.forwarding_time(), t.hops) {
                samples.entry((run.protocol.clone(), h as i64)).or_default().push(ft as f64);
            }
        }
    }
    Ok(ExperimentResult {
        columns: ["protocol", "forwardings", "mean_ms", "std_ms", "count"].map(String::from).to_vec(),
        rows: grouped_rows(&samples),
        metadata: metadata(cfg, &runs),
        checks: vec![audit_check(&runs)],
        samples,
        summary: BTreeMap::new(),
    })
}

/// Per-transaction rate (1000 / forwarding ms) per forwarding count, plus
/// one `system` row per protocol holding the summed per-node throughput.
pub fn run_throughput(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let runs = timing_runs(cfg, 0)?;
    let mut samples: BTreeMap<(String, i64), Vec<f64>> = BTreeMap::new();
    let mut system: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    let mut additive = true;
    let mut detail = String::from("exact");
    for run in &runs {
        for t in &run.records {
            if let (Some(ft), Some(h)) = (t.forwarding_time(), t.hops) {
                samples.entry((run.protocol.clone(), h as i64)).or_default().push(1000.0 / ft.max(1) as f64);
            }
        }
        let secs = run.duration_ms as f64 / 1000.0;
        let per_node: f64 = run.served.iter().map(|&c| c as f64 / secs).sum();
        let counted: u64 = run.served.iter().sum();
        let whole = run.total_served as f64 / secs;
        if counted != run.total_served || (per_node - whole).abs() > 1e-9 * whole.max(1.0) {
            additive = false;
            detail = format!("{}: per-node {counted} vs system {}", run.protocol, run.total_served);
        }
        let e = system.entry(run.protocol.clone()).or_default();
        e.0 += per_node;
        e.1 += counted;
    }
    let mut rows = grouped_rows(&samples);
    let mut summary = BTreeMap::new();
    let runs_per = |p: &str| runs.iter().filter(|r| r.protocol == p).count().max(1) as f64;
    for (p, (tp, count)) in &system {
        let tp = tp / runs_per(p);
        summary.insert(format!("{p}.system_tx_per_s"), tp);
        rows.push(vec![p.clone(), "system".into(), f6(tp), f6(0.0), count.to_string()]);
    }
    rows.sort_by(|a, b| a[0].cmp(&b[0]));
    let mut checks = vec![audit_check(&runs)];
    checks.push(Check { name: "throughput_additivity".into(), passed: additive, detail });
    Ok(ExperimentResult {
        columns: ["protocol", "forwardings", "tx_per_s", "std", "count"].map(String::from).to_vec(),
        rows,
        metadata: metadata(cfg, &runs),
        checks,
        samples,
        summary,
    })
}

/// Mean processing time (issue to destination inclusion) with `f` relays
/// down from the start, for each configured failure count.
pub fn run_availability(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let jobs: Vec<(ForwardingProtocol, u64, usize)> = cfg
        .effective_protocols()
        .into_iter()
        .flat_map(|p| cfg.seeds.iter().flat_map(move |&s| cfg.failure_counts.iter().map(move |&f| (p, s, f))))
        .collect();
    let outputs: Vec<(usize, RunOutput)> = parallel(jobs, |(p, s, f)| {
        run_world(cfg.world(p, s, cfg.destination_block_ms), cfg.requests, cfg.arrival_gap_ms, f).map(|r| (f, r))
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let mut samples: BTreeMap<(String, i64), Vec<f64>> = BTreeMap::new();
    let mut tallies: BTreeMap<(String, i64), (u64, u64, u64)> = BTreeMap::new();
    let mut conserved = true;
    for (f, run) in &outputs {
        let key = (run.protocol.clone(), *f as i64);
        let v = samples.entry(key.clone()).or_default();
        let t = tallies.entry(key).or_default();
        let (mut ok, mut failed) = (0u64, 0u64);
        for r in &run.records {
            match r.outcome {
                TxOutcome::Completed => {
                    ok += 1;
                    v.push(r.processing_time(cfg.destination_block_ms).expect("completed") as f64);
                }
                TxOutcome::Failed(_) => failed += 1,
                TxOutcome::Pending => {}
            }
        }
        conserved &= ok + failed == cfg.requests as u64 && run.records.len() == cfg.requests;
        t.0 += ok;
        t.1 += failed;
        t.2 += run.records.len() as u64;
    }
    let rows = samples
        .iter()
        .map(|(k, v)| {
            let (m, s) = mean_std(v);
            let (ok, failed, issued) = tallies[k];
            vec![k.0.clone(), k.1.to_string(), f6(m), f6(s), ok.to_string(), failed.to_string(), issued.to_string()]
        })
        .collect();
    let runs: Vec<RunOutput> = outputs.into_iter().map(|(_, r)| r).collect();
    let checks = vec![
        audit_check(&runs),
        Check {
            name: "completed_plus_failed_equals_issued".into(),
            passed: conserved,
            detail: format!("{} requests per scenario", cfg.requests),
        },
    ];
    Ok(ExperimentResult {
        columns: ["protocol", "failures", "mean_ms", "std_ms", "completed", "failed", "issued"]
            .map(String::from)
            .to_vec(),
        rows,
        metadata: metadata(cfg, &runs),
        checks,
        samples,
        summary: BTreeMap::new(),
    })
}

pub fn run_collusion(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let protocols = cfg.effective_protocols();
    let per_trial = cfg.requests.div_ceil(cfg.collusion_trials);
    let mut rows = Vec::new();
    let mut sound = true;
    for &seed in &cfg.seeds {
        let sweep = run_collusion_sweep(
            &protocols,
            &cfg.collusion_ratios,
            cfg.n_relays,
            per_trial,
            cfg.collusion_trials,
            seed,
        )?;
        sound &= sweep.iter().all(|r| r.metrics.soundness_violations == 0);
        rows.extend(collusion_csv_rows(&sweep).into_iter().map(|l| l.split(',').map(String::from).collect()));
    }
    Ok(ExperimentResult {
        columns: COLLUSION_CSV_HEADER.split(',').map(String::from).collect(),
        rows,
        metadata: Metadata {
            experiment: cfg.experiment,
            config_hash: cfg.hash(),
            seeds: cfg.seeds.clone(),
            virtual_ms: 0,
        },
        checks: vec![Check { name: "anonymity_set_contains_origin".into(), passed: sound, detail: String::new() }],
        samples: BTreeMap::new(),
        summary: BTreeMap::new(),
    })
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    match cfg.experiment {
        Experiment::ForwardingTime => run_forwarding_time(cfg),
        Experiment::Throughput => run_throughput(cfg),
        Experiment::Availability => run_availability(cfg),
        Experiment::Collusion => run_collusion(cfg),
    }
}

fn header_comment(result: &ExperimentResult) -> String {
    let m = &result.metadata;
    let seeds: Vec<String> = m.seeds.iter().map(u64::to_string).collect();
    format!(
        "# xrelay experiment={} config_sha256={} seeds={} virtual_ms={}\n",
        m.experiment.slug(),
        m.config_hash,
        seeds.join(";"),
        m.virtual_ms
    )
}

pub fn to_csv(result: &ExperimentResult) -> String {
    let mut s = header_comment(result);
    s.push_str(&result.columns.join(","));
    s.push('\n');
    for r in &result.rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

/// One JSON object per row; numeric cells stay numbers.
pub fn to_jsonl(result: &ExperimentResult) -> String {
    let mut s = header_comment(result);
    for r in &result.rows {
        let obj: serde_json::Map<String, serde_json::Value> = result
            .columns
            .iter()
            .zip(r)
            .map(|(c, v)| {
                let val = serde_json::from_str::<serde_json::Number>(v)
                    .map(serde_json::Value::Number)
                    .unwrap_or_else(|_| serde_json::Value::String(v.clone()));
                (c.clone(), val)
            })
            .collect();
        s.push_str(&serde_json::to_string(&obj).expect("row serializes"));
        s.push('\n');
    }
    s
}

pub fn emit(result: &ExperimentResult, format: OutputFormat, path: &Path) -> Result<(), HarnessError> {
    let body = match format {
        OutputFormat::Csv => to_csv(result),
        OutputFormat::Jsonl => to_jsonl(result),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, body)?;
    Ok(())
}

/// (x column, y column) plotted for each experiment.
pub fn plot_axes(experiment: Experiment) -> (&'static str, &'static str) {
    match experiment {
        Experiment::ForwardingTime => ("forwardings", "mean_ms"),
        Experiment::Throughput => ("forwardings", "tx_per_s"),
        Experiment::Availability => ("failures", "mean_ms"),
        Experiment::Collusion => ("ratio", "deanon_prob"),
    }
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// A plain SVG line chart, one polyline per protocol.
pub fn svg_line_chart(result: &ExperimentResult, x: &str, y: &str) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let Some(pi) = result.column("protocol") else {
        return String::new();
    };
    let mut protocols: Vec<&str> = result.rows.iter().map(|r| r[pi].as_str()).collect();
    protocols.dedup();
    let series: Vec<(&str, Vec<(f64, f64)>)> = protocols
        .iter()
        .map(|p| (*p, result.series(p, x, y).into_iter().filter(|(a, b)| a.is_finite() && b.is_finite()).collect()))
        .collect();
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, 0.0f64, f64::MIN);
    for &(a, b) in pts {
        x0 = x0.min(a);
        x1 = x1.max(a);
        y0 = y0.min(b);
        y1 = y1.max(b);
    }
    if x0 >= x1 {
        x1 = x0 + 1.0;
    }
    if y0 >= y1 {
        y1 = y0 + 1.0;
    }
    let sx = |a: f64| pad + (a - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |b: f64| h - pad - (b - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(s, "<path d=\"M{pad} {pad} V{} H{}\" stroke=\"black\" fill=\"none\"/>", h - pad, w - pad);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x}</text>", w / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{y}</text>",
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"{}\">{x0:.2}</text>", h - pad + 15.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x1:.2}</text>", w - pad, h - pad + 15.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.3}</text>", pad - 4.0, pad + 4.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y0:.3}</text>", pad - 4.0, h - pad);
    for (i, (name, pts)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(a, b)| format!("{:.1},{:.1}", sx(a), sy(b))).collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\"/>",
            coords.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{colour}\">{name}</text>",
            w - pad - 100.0,
            pad + 16.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{Network, Topology};

    fn small(experiment: Experiment) -> ExperimentConfig {
        ExperimentConfig {
            experiment,
            n_relays: 20,
            requests: 60,
            protocols: vec![ForwardingProtocol::dandelion(), ForwardingProtocol::clover()],
            failure_counts: vec![0, 2],
            collusion_ratios: vec![0.0, 0.2],
            collusion_trials: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let c = ExperimentConfig::from_json(r#"{"experiment":"AVAILABILITY","n_relays":10,"failure_counts":[0,3]}"#)
            .unwrap();
        assert_eq!(c.experiment, Experiment::Availability);
        assert_eq!(c.requests, 6000);
        c.validate().unwrap();
        assert!(ExperimentConfig::from_json(r#"{"bogus":1}"#).is_err());
        let bad = ExperimentConfig { n_relays: 1, ..c.clone() };
        assert!(matches!(bad.validate(), Err(HarnessError::Config(_))));
        let bad = ExperimentConfig { failure_counts: vec![10], ..c.clone() };
        assert!(matches!(bad.validate(), Err(HarnessError::AllNodesFailed(10))));
        let bad = ExperimentConfig { requests: 0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_path_only() {
        let a = small(Experiment::Throughput);
        let b = ExperimentConfig { out: Some("x.csv".into()), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { requests: 61, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn every_experiment_is_deterministic() {
        for e in [Experiment::ForwardingTime, Experiment::Throughput, Experiment::Availability, Experiment::Collusion] {
            let cfg = small(e);
            let a = run(&cfg).unwrap();
            let b = run(&cfg).unwrap();
            assert_eq!(to_csv(&a), to_csv(&b), "{e:?}");
            assert!(a.all_checks_pass(), "{e:?} {:?}", a.checks);
            assert!(!a.rows.is_empty());
        }
    }

    #[test]
    fn availability_conserves_requests() {
        let r = run(&small(Experiment::Availability)).unwrap();
        let (c, f, i) = (r.column("completed").unwrap(), r.column("failed").unwrap(), r.column("issued").unwrap());
        for row in &r.rows {
            let n = |k: usize| row[k].parse::<u64>().unwrap();
            assert_eq!(n(c) + n(f), n(i));
            assert_eq!(n(i), 60);
        }
    }

    #[test]
    fn saturated_node_serves_at_reciprocal_of_service_time() {
        let topo = Topology::random(&[RelayId(0), RelayId(1)], (5, 5), true, 1).unwrap();
        let mut net: Network<()> = Network::new(topo, 2);
        for _ in 0..1000 {
            net.send(RelayId(0), RelayId(1), ()).unwrap();
        }
        let stats = net.run_until_idle(Millis::MAX, |_, _| {});
        let busy_secs = (stats.final_time - 5) as f64 / 1000.0;
        assert!((net.served(RelayId(0)) as f64 / busy_secs - 500.0).abs() < 1e-9);
    }

    #[test]
    fn welch_matches_hand_computation() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        let w = welch_t_test(&a, &b).unwrap();
        // t = -3 / sqrt(2.5/5 + 10/5), df = 2.5^2 / (0.25/4 + 4/4)
        assert!((w.t - (-3.0 / 2.5f64.sqrt())).abs() < 1e-12);
        assert!((w.df - 6.25 / 1.0625).abs() < 1e-12);
        assert!(w.p_two_sided > 0.05 && w.p_two_sided < 0.2);
        assert!(welch_t_test(&[1.0], &b).is_none());
    }

    #[test]
    fn jsonl_keeps_numbers_numeric() {
        let r = run(&small(Experiment::ForwardingTime)).unwrap();
        let j = to_jsonl(&r);
        let line = j.lines().nth(1).unwrap();
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["mean_ms"].is_number());
        assert!(v["protocol"].is_string());
    }

    #[test]
    fn svg_has_one_line_per_protocol() {
        let r = run(&small(Experiment::ForwardingTime)).unwrap();
        let svg = svg_line_chart(&r, "forwardings", "mean_ms");
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
