//! Timed multi-worker HTTP flood runs.
//!
//! `run_flood` owns a run: it preflights the target, spawns the configured
//! number of workers over one shared connection pool, and funnels every
//! attempt's outcome through a single log writer. Workers share exactly three
//! linearizable resources: the payload cursor, the record sink and the pool.

mod client;

pub use client::{ClientError, ClientResponse, HttpClient, BODY_PREFIX_LIMIT};

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use thiserror::Error;
use tokio::io::{AsyncWriteExt, BufWriter};
use tokio::sync::mpsc;
use url::Url;

use crate::metrics::{
    classify_response, is_success, merge_tallies, BodyMarker, Mode, OutcomeClass, OutcomeRecord,
    RunTally, TransportFailure,
};
use crate::payload::{PayloadCorpus, PayloadCursor};

pub const USER_AGENT: &str = "loadforge-bench/1.0";
pub const DEFAULT_DURATION_S: u32 = 25;
pub const DEFAULT_WORKERS: u32 = 50;
pub const DEFAULT_TIMEOUT_MS: u64 = 2000;
/// Pause after a connect failure so a dead target does not fill the log.
const CONNECT_BACKOFF: Duration = Duration::from_millis(10);

/// RFC 3986 unreserved characters stay, everything else is percent-encoded;
/// spaces become %20 in both query strings and form bodies.
const FORM_ENCODE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'.')
    .remove(b'_')
    .remove(b'~');

/// Named load shape. Floods never sleep between requests; slow-drip paces
/// sends at a fixed interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    PostFlood,
    GetFlood,
    SlowDrip { delay_ms: u64 },
}

impl Profile {
    pub fn name(&self) -> &'static str {
        match self {
            Profile::PostFlood => "post-flood",
            Profile::GetFlood => "get-flood",
            Profile::SlowDrip { .. } => "slow-drip",
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            Profile::GetFlood => "GET",
            Profile::PostFlood | Profile::SlowDrip { .. } => "POST",
        }
    }

    pub fn inter_request_delay_ms(&self) -> u64 {
        match self {
            Profile::SlowDrip { delay_ms } => *delay_ms,
            _ => 0,
        }
    }
}

/// Everything needed to execute one timed flood run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub target_url: Url,
    pub duration_s: u32,
    pub workers: u32,
    pub profile: Profile,
    pub corpus: PayloadCorpus,
    pub request_timeout_ms: u64,
    pub mode: Mode,
    pub max_connections: u32,
    pub seed: u64,
    pub log_path: PathBuf,
}

impl RunConfig {
    /// Defaults: 25 s, 50 workers, POST flood, 2000 ms timeout, strict mode,
    /// one connection per worker, seed 0.
    pub fn new(target_url: Url, log_path: PathBuf) -> RunConfig {
        RunConfig {
            target_url,
            duration_s: DEFAULT_DURATION_S,
            workers: DEFAULT_WORKERS,
            profile: Profile::PostFlood,
            corpus: PayloadCorpus::default_corpus(),
            request_timeout_ms: DEFAULT_TIMEOUT_MS,
            mode: Mode::Strict,
            max_connections: DEFAULT_WORKERS,
            seed: 0,
            log_path,
        }
    }

    pub fn validate(&self) -> Result<(), FloodError> {
        if self.duration_s < 1 {
            return Err(FloodError::InvalidConfig("duration must be >= 1s".into()));
        }
        if self.workers < 1 {
            return Err(FloodError::InvalidConfig("workers must be >= 1".into()));
        }
        if self.max_connections < 1 {
            return Err(FloodError::InvalidConfig(
                "max_connections must be >= 1".into(),
            ));
        }
        if self.request_timeout_ms < 1 {
            return Err(FloodError::InvalidConfig(
                "request timeout must be >= 1ms".into(),
            ));
        }
        if self.target_url.scheme() != "http" {
            return Err(FloodError::InvalidConfig(format!(
                "target scheme must be http, got {:?}",
                self.target_url.scheme()
            )));
        }
        if self.target_url.host_str().is_none() {
            return Err(FloodError::InvalidConfig("target URL has no host".into()));
        }
        if let Profile::SlowDrip { delay_ms } = self.profile {
            if delay_ms < 100 {
                return Err(FloodError::InvalidConfig(
                    "slow-drip delay must be >= 100ms".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum FloodError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("target unreachable at start: {detail}")]
    TargetUnreachableAtStart { detail: String },
    #[error("failed to write run log: {0}")]
    LogWrite(#[from] std::io::Error),
}

/// Per-class attempt counts for one worker.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub server_success: u64,
    pub server_failed: u64,
    pub overload_rejected: u64,
    pub timeout: u64,
    pub connect_error: u64,
    pub protocol_error: u64,
}

impl ClassCounts {
    fn incr(&mut self, outcome: OutcomeClass) {
        match outcome {
            OutcomeClass::ServerSuccess => self.server_success += 1,
            OutcomeClass::ServerFailed => self.server_failed += 1,
            OutcomeClass::OverloadRejected => self.overload_rejected += 1,
            OutcomeClass::Timeout => self.timeout += 1,
            OutcomeClass::ConnectError => self.connect_error += 1,
            OutcomeClass::ProtocolError => self.protocol_error += 1,
        }
    }

    pub fn get(&self, outcome: OutcomeClass) -> u64 {
        match outcome {
            OutcomeClass::ServerSuccess => self.server_success,
            OutcomeClass::ServerFailed => self.server_failed,
            OutcomeClass::OverloadRejected => self.overload_rejected,
            OutcomeClass::Timeout => self.timeout,
            OutcomeClass::ConnectError => self.connect_error,
            OutcomeClass::ProtocolError => self.protocol_error,
        }
    }

    pub fn sum(&self) -> u64 {
        OutcomeClass::ALL.iter().map(|&o| self.get(o)).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct WorkerStats {
    pub worker_id: u32,
    pub attempted: u64,
    pub counts: ClassCounts,
    pub last_error: Option<String>,
}

/// Result of a completed run: the aggregate tally, where the log went, and
/// per-worker breakdowns for cross-checks.
#[derive(Debug)]
pub struct FloodReport {
    pub tally: RunTally,
    pub log_path: PathBuf,
    pub worker_stats: Vec<WorkerStats>,
    pub records_written: u64,
}

/// One request, fully serialized except for the connection it runs on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestSpec {
    pub method: &'static str,
    pub request_target: String,
    pub host: String,
    pub body: Vec<u8>,
}

impl RequestSpec {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "{} {} HTTP/1.1\r\nHost: {}\r\nUser-Agent: {USER_AGENT}\r\n",
            self.method, self.request_target, self.host
        )
        .into_bytes();
        if self.method == "POST" {
            out.extend_from_slice(
                format!(
                    "Content-Type: application/x-www-form-urlencoded\r\nContent-Length: {}\r\n",
                    self.body.len()
                )
                .as_bytes(),
            );
        }
        out.extend_from_slice(b"\r\n");
        out.extend_from_slice(&self.body);
        out
    }
}

fn host_header(url: &Url) -> String {
    let host = url.host_str().unwrap_or("127.0.0.1");
    match url.port() {
        Some(port) => format!("{host}:{port}"),
        None => host.to_string(),
    }
}

/// Deterministically build the request for one payload.
pub fn build_request(profile: &Profile, target: &Url, course_name: &str) -> RequestSpec {
    let encoded = utf8_percent_encode(course_name, FORM_ENCODE).to_string();
    let host = host_header(target);
    match profile.method() {
        "GET" => {
            let request_target = match target.query() {
                Some(q) => format!("{}?{}&courseName={}", target.path(), q, encoded),
                None => format!("{}?courseName={}", target.path(), encoded),
            };
            RequestSpec {
                method: "GET",
                request_target,
                host,
                body: Vec::new(),
            }
        }
        _ => {
            let request_target = match target.query() {
                Some(q) => format!("{}?{}", target.path(), q),
                None => target.path().to_string(),
            };
            RequestSpec {
                method: "POST",
                request_target,
                host,
                body: format!("courseName={encoded}").into_bytes(),
            }
        }
    }
}

fn preflight_request(target: &Url) -> Vec<u8> {
    let request_target = match target.query() {
        Some(q) => format!("{}?{}", target.path(), q),
        None => target.path().to_string(),
    };
    format!(
        "GET {request_target} HTTP/1.1\r\nHost: {}\r\nUser-Agent: {USER_AGENT}\r\n\r\n",
        host_header(target)
    )
    .into_bytes()
}

/// Scan a body prefix for the success/failed tokens.
pub fn detect_marker(body: &[u8]) -> Option<BodyMarker> {
    if contains(body, b"SUCCESS") {
        Some(BodyMarker::Success)
    } else if contains(body, b"Failed") {
        Some(BodyMarker::Failed)
    } else {
        None
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

struct RunContext {
    client: HttpClient,
    corpus: PayloadCorpus,
    cursor: PayloadCursor,
    target_url: Url,
    profile: Profile,
    mode: Mode,
    run_start: Instant,
    deadline: Instant,
    sink: mpsc::UnboundedSender<OutcomeRecord>,
}

/// Execute one timed flood run. Returns the aggregate tally and the log path
/// on success; on an unreachable target the log exists but is empty.
pub async fn run_flood(config: RunConfig) -> Result<FloodReport, FloodError> {
    config.validate()?;
    let file = tokio::fs::File::create(&config.log_path).await?;

    let client = HttpClient::new(
        &config.target_url,
        config.max_connections,
        Duration::from_millis(config.request_timeout_ms),
    );

    // One real request up front; a connect failure aborts the run before any
    // worker starts. The connection it opens joins the pool.
    if let Err(e) = client.execute(&preflight_request(&config.target_url)).await {
        if e.kind == TransportFailure::Connect {
            return Err(FloodError::TargetUnreachableAtStart { detail: e.detail });
        }
    }

    let (sink, mut source) = mpsc::unbounded_channel::<OutcomeRecord>();
    let writer = tokio::spawn(async move {
        let mut out = BufWriter::new(file);
        let mut written = 0u64;
        while let Some(record) = source.recv().await {
            let mut line = serde_json::to_vec(&record).expect("records always serialize");
            line.push(b'\n');
            out.write_all(&line).await?;
            written += 1;
        }
        out.flush().await?;
        Ok::<u64, std::io::Error>(written)
    });

    let run_start = Instant::now();
    let context = Arc::new(RunContext {
        client,
        corpus: config.corpus.clone(),
        cursor: PayloadCursor::new(config.seed),
        target_url: config.target_url.clone(),
        profile: config.profile,
        mode: config.mode,
        run_start,
        deadline: run_start + Duration::from_secs(config.duration_s as u64),
        sink,
    });

    let mut joins = Vec::with_capacity(config.workers as usize);
    for worker_id in 0..config.workers {
        let context = context.clone();
        joins.push(tokio::spawn(worker_attack_loop(context, worker_id)));
    }

    let mut worker_stats = Vec::with_capacity(joins.len());
    let mut tally = RunTally::from_counts(0, 0, config.duration_s);
    for join in joins {
        let (stats, success, failure) = join.await.expect("workers never panic");
        let worker_tally = RunTally::from_counts(success, failure, config.duration_s);
        tally = merge_tallies(&tally, &worker_tally).expect("durations match by construction");
        worker_stats.push(stats);
    }

    drop(context); // last sender gone; writer drains and finishes
    let records_written = writer.await.expect("writer never panics")?;

    debug_assert_eq!(
        records_written,
        worker_stats.iter().map(|w| w.attempted).sum::<u64>(),
        "every attempt must produce exactly one log record"
    );

    Ok(FloodReport {
        tally,
        log_path: config.log_path,
        worker_stats,
        records_written,
    })
}

/// The per-worker send loop: pick payload, build, send, classify, record,
/// until the shared deadline passes.
async fn worker_attack_loop(context: Arc<RunContext>, worker_id: u32) -> (WorkerStats, u64, u64) {
    let mut stats = WorkerStats {
        worker_id,
        ..WorkerStats::default()
    };
    let mut success = 0u64;
    let mut failure = 0u64;
    let delay = context.profile.inter_request_delay_ms();
    let mut next_send = context.run_start;

    loop {
        if delay > 0 {
            if next_send >= context.deadline {
                break;
            }
            tokio::time::sleep_until(next_send.into()).await;
            next_send += Duration::from_millis(delay);
        }
        if Instant::now() >= context.deadline {
            break;
        }

        let entry = context.corpus.next(&context.cursor);
        let request = build_request(&context.profile, &context.target_url, &entry.course_name);
        let attempt_start = Instant::now();
        let result = context.client.execute(&request.to_bytes()).await;
        let latency_ms = attempt_start.elapsed().as_millis() as u64;

        let (outcome, http_status, body_marker) = match result {
            Ok(response) => {
                let marker = detect_marker(&response.body_prefix);
                (
                    classify_response(Some(response.status), marker, None),
                    Some(response.status),
                    marker,
                )
            }
            Err(error) => {
                let outcome = classify_response(None, None, Some(error.kind));
                stats.last_error = Some(error.to_string());
                (outcome, None, None)
            }
        };

        stats.attempted += 1;
        stats.counts.incr(outcome);
        if is_success(outcome, context.mode, entry.expected_present) {
            success += 1;
        } else {
            failure += 1;
        }

        let record = OutcomeRecord {
            timestamp_ms: context.run_start.elapsed().as_millis() as u64,
            worker_id,
            outcome,
            http_status,
            body_marker,
            latency_ms,
            payload: entry.course_name.clone(),
        };
        if context.sink.send(record).is_err() {
            break; // log writer is gone; stop producing
        }

        if outcome == OutcomeClass::ConnectError {
            tokio::time::sleep(CONNECT_BACKOFF).await;
        }
    }

    (stats, success, failure)
}
