//! Command-line surface: `serve`, `flood`, `report`, `compare`, plus the
//! safety gate that keeps the flood pointed at hosts the operator named
//! explicitly.
//!
//! Exit codes are stable: 0 ok, 2 usage/parse, 3 safety refusal, 4 port in
//! use, 5 unreachable target, 6 render error.

use std::collections::BTreeSet;
use std::io::Write as _;
use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use url::Url;

use crate::flood::{self, FloodError, Profile, RunConfig};
use crate::metrics::Mode;
use crate::payload::PayloadCorpus;
use crate::report::{
    ingest_manifest, recount_log, render_ratio_chart, render_ratio_table, render_totals_table,
    write_atomic, ChartMetric, ReportDocument, ReportError, ReportRow, TableFormat,
};
use crate::target::{self, Datastore, OverloadResponse, ServerConfig, ServerError};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_REFUSED: u8 = 3;
pub const EXIT_PORT_IN_USE: u8 = 4;
pub const EXIT_UNREACHABLE: u8 = 5;
pub const EXIT_RENDER: u8 = 6;

/// Environment switch that restricts the gate to loopback no matter what
/// flags say; meant for CI.
pub const NO_NETWORK_ENV: &str = "LOADFORGE_NO_NETWORK";

const LOOPBACK_HOSTS: [&str; 3] = ["127.0.0.1", "localhost", "::1"];

/// Allowlist consulted before any socket is opened.
#[derive(Debug, Clone)]
pub struct SafetyPolicy {
    allowed: BTreeSet<String>,
    loopback_only: bool,
}

impl SafetyPolicy {
    pub fn new(extra_hosts: &[String], loopback_only: bool) -> SafetyPolicy {
        let mut allowed: BTreeSet<String> =
            LOOPBACK_HOSTS.iter().map(|h| h.to_string()).collect();
        if !loopback_only {
            allowed.extend(extra_hosts.iter().cloned());
        }
        SafetyPolicy {
            allowed,
            loopback_only,
        }
    }

    pub fn allowed_hosts(&self) -> impl Iterator<Item = &str> {
        self.allowed.iter().map(|s| s.as_str())
    }
}

/// Exact-string host check; loopback names always pass, anything else only
/// when named via `--allow-host`.
pub fn safety_gate(target: &Url, policy: &SafetyPolicy) -> Result<(), String> {
    let raw_host = target.host_str().unwrap_or_default();
    let host = raw_host.trim_start_matches('[').trim_end_matches(']');
    if policy.allowed.contains(host) {
        return Ok(());
    }
    let mut message = format!(
        "refusing to flood host {host:?}: not in the allowlist\nallowed hosts: {}",
        policy
            .allowed_hosts()
            .collect::<Vec<_>>()
            .join(", ")
    );
    if policy.loopback_only {
        message.push_str(&format!("\n{NO_NETWORK_ENV}=1 is set: only loopback targets are allowed"));
    } else {
        message.push_str("\nname additional hosts explicitly with --allow-host <host>");
    }
    Err(message)
}

#[derive(Parser)]
#[command(
    name = "loadforge",
    version,
    about = "HTTP load benchmark with a bundled capacity-limited target"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the bundled course-search target server
    Serve(ServeArgs),
    /// Run a timed flood against an allowlisted target
    Flood(FloodArgs),
    /// Render one measured row from a run log
    Report(ReportArgs),
    /// Merge measured runs and ingested rows into tables and charts
    Compare(CompareArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// Max concurrently processed search requests
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    capacity: u32,
    /// Searches allowed to wait for a slot before rejection
    #[arg(long, default_value_t = 16)]
    queue_depth: u32,
    /// CPU burn per admitted search, milliseconds
    #[arg(long, default_value_t = 25)]
    work_ms: u64,
    #[arg(long, value_enum, default_value_t = OverloadResponse::FailedPage)]
    overload: OverloadResponse,
    /// Seed CSV (course_name,address,age,full_name,institute_name)
    #[arg(long)]
    seed_file: Option<PathBuf>,
}

#[derive(Args)]
struct FloodArgs {
    /// Target URL, e.g. http://127.0.0.1:8080/search
    #[arg(long, value_parser = Url::parse)]
    target: Url,
    /// Run duration in seconds
    #[arg(long, default_value_t = flood::DEFAULT_DURATION_S, value_parser = clap::value_parser!(u32).range(1..))]
    duration: u32,
    #[arg(long, default_value_t = flood::DEFAULT_WORKERS, value_parser = clap::value_parser!(u32).range(1..))]
    workers: u32,
    #[arg(long, value_enum, default_value_t = ProfileKind::PostFlood)]
    profile: ProfileKind,
    /// Pause between sends for slow-drip, milliseconds
    #[arg(long, default_value_t = 500)]
    delay_ms: u64,
    /// Payload corpus file; built-in half present / half absent corpus if omitted
    #[arg(long)]
    payloads: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Strict)]
    mode: Mode,
    /// Per-request timeout, milliseconds
    #[arg(long, default_value_t = flood::DEFAULT_TIMEOUT_MS, value_parser = clap::value_parser!(u64).range(1..))]
    timeout_ms: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSONL run log destination
    #[arg(long, default_value = "run.jsonl")]
    out: PathBuf,
    /// Connection pool cap; defaults to one per worker
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    max_connections: Option<u32>,
    /// Allow a non-loopback host (exact match, repeatable)
    #[arg(long = "allow-host")]
    allow_host: Vec<String>,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum ProfileKind {
    PostFlood,
    GetFlood,
    SlowDrip,
}

#[derive(clap::ValueEnum, Clone, Copy, PartialEq, Eq)]
enum OutputFormat {
    Md,
    Csv,
    Svg,
}

#[derive(Args)]
struct ReportArgs {
    /// JSONL run log to recount
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "run")]
    label: String,
    /// Run duration the log was produced with (fills the Time column)
    #[arg(long, default_value_t = flood::DEFAULT_DURATION_S, value_parser = clap::value_parser!(u32).range(1..))]
    duration: u32,
    #[arg(long, value_enum, default_value_t = Mode::Strict)]
    mode: Mode,
    /// Corpus file for oracle-mode expectations
    #[arg(long)]
    payloads: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Md)]
    format: OutputFormat,
    /// Metric to chart when --format svg
    #[arg(long, value_enum, default_value_t = ChartMetric::Ratio)]
    metric: ChartMetric,
    /// Output file; stdout if omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Ingest CSV: name,time_s,success,failure[,total]
    #[arg(long)]
    manifest: PathBuf,
    /// Measured run to include, as <label>=<run.jsonl> (repeatable)
    #[arg(long = "run")]
    runs: Vec<String>,
    #[arg(long, default_value_t = flood::DEFAULT_DURATION_S, value_parser = clap::value_parser!(u32).range(1..))]
    duration: u32,
    #[arg(long, value_enum, default_value_t = Mode::Strict)]
    mode: Mode,
    #[arg(long)]
    payloads: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Md)]
    format: OutputFormat,
    /// Directory the table/chart files are written into
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Failure {
        let code = match e {
            ReportError::NonFiniteMetric { .. } => EXIT_RENDER,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<FloodError> for Failure {
    fn from(e: FloodError) -> Failure {
        let code = match e {
            FloodError::TargetUnreachableAtStart { .. } => EXIT_UNREACHABLE,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<ServerError> for Failure {
    fn from(e: ServerError) -> Failure {
        let code = match e {
            ServerError::PortInUse { .. } => EXIT_PORT_IN_USE,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<crate::payload::CorpusError> for Failure {
    fn from(e: crate::payload::CorpusError) -> Failure {
        Failure::usage(e.to_string())
    }
}

impl From<crate::target::SeedError> for Failure {
    fn from(e: crate::target::SeedError) -> Failure {
        Failure::usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::usage(e.to_string())
    }
}

/// Parse arguments and dispatch; the returned code is the process exit code.
pub async fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::try_from(e.exit_code()).unwrap_or(EXIT_USAGE);
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Serve(args) => cmd_serve(args).await,
        Command::Flood(args) => cmd_flood(args).await,
        Command::Report(args) => cmd_report(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

async fn cmd_serve(args: ServeArgs) -> Result<(), Failure> {
    let datastore = match &args.seed_file {
        Some(path) => Datastore::from_csv_file(path)?,
        None => Datastore::builtin(),
    };
    let handle = target::start(ServerConfig {
        bind: args.bind,
        port: args.port,
        capacity: args.capacity,
        queue_depth: args.queue_depth,
        work_ms: args.work_ms,
        overload: args.overload,
        datastore,
    })
    .await?;
    println!("serving on {}", handle.addr());
    std::io::stdout().flush().ok();
    tokio::signal::ctrl_c().await.map_err(Failure::from)?;
    handle.shutdown().await;
    Ok(())
}

fn load_corpus(path: &Option<PathBuf>) -> Result<PayloadCorpus, Failure> {
    Ok(match path {
        Some(path) => PayloadCorpus::from_file(path)?,
        None => PayloadCorpus::default_corpus(),
    })
}

fn no_network_env() -> bool {
    std::env::var(NO_NETWORK_ENV).map(|v| v == "1").unwrap_or(false)
}

async fn cmd_flood(args: FloodArgs) -> Result<(), Failure> {
    // The gate runs before anything that could touch the network.
    let policy = SafetyPolicy::new(&args.allow_host, no_network_env());
    if let Err(refusal) = safety_gate(&args.target, &policy) {
        return Err(Failure {
            code: EXIT_REFUSED,
            message: refusal,
        });
    }

    let corpus = load_corpus(&args.payloads)?;
    let profile = match args.profile {
        ProfileKind::PostFlood => Profile::PostFlood,
        ProfileKind::GetFlood => Profile::GetFlood,
        ProfileKind::SlowDrip => Profile::SlowDrip {
            delay_ms: args.delay_ms,
        },
    };
    let workers = args.workers;
    let config = RunConfig {
        target_url: args.target,
        duration_s: args.duration,
        workers,
        profile,
        corpus,
        request_timeout_ms: args.timeout_ms,
        mode: args.mode,
        max_connections: args.max_connections.unwrap_or(workers),
        seed: args.seed,
        log_path: args.out,
    };
    let report = flood::run_flood(config).await?;

    let row = ReportRow::measured(profile.name(), &report.tally);
    let doc = ReportDocument::new(vec![row])?;
    print!("{}", render_ratio_table(&doc, TableFormat::Markdown));
    eprintln!(
        "log: {} ({} records)",
        report.log_path.display(),
        report.records_written
    );
    Ok(())
}

fn render_single(
    doc: &ReportDocument,
    format: OutputFormat,
    metric: ChartMetric,
) -> Result<String, Failure> {
    Ok(match format {
        OutputFormat::Md => render_ratio_table(doc, TableFormat::Markdown),
        OutputFormat::Csv => render_ratio_table(doc, TableFormat::Csv),
        OutputFormat::Svg => render_ratio_chart(doc, metric)?,
    })
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&args.payloads)?;
    let tally = recount_log(&args.input, args.mode, &corpus.expected_map(), args.duration)?;
    let doc = ReportDocument::new(vec![ReportRow::measured(&args.label, &tally)])?;
    let rendered = render_single(&doc, args.format, args.metric)?;
    match &args.out {
        Some(path) => {
            write_atomic(path, rendered.as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let corpus = load_corpus(&args.payloads)?;
    let expected = corpus.expected_map();
    let mut rows: Vec<ReportRow> = Vec::new();
    for spec in &args.runs {
        let Some((label, path)) = spec.split_once('=') else {
            return Err(Failure::usage(format!(
                "--run expects <label>=<run.jsonl>, got {spec:?}"
            )));
        };
        let tally = recount_log(std::path::Path::new(path), args.mode, &expected, args.duration)?;
        rows.push(ReportRow::measured(label, &tally));
    }
    rows.extend(ingest_manifest(&args.manifest)?);
    let doc = ReportDocument::new(rows)?;
    for note in &doc.notes {
        eprintln!("warning: {note}");
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let outputs: Vec<(PathBuf, String)> = match args.format {
        OutputFormat::Md => vec![
            (
                args.out_dir.join("ratio_table.md"),
                render_ratio_table(&doc, TableFormat::Markdown),
            ),
            (
                args.out_dir.join("totals_table.md"),
                render_totals_table(&doc, TableFormat::Markdown),
            ),
        ],
        OutputFormat::Csv => vec![
            (
                args.out_dir.join("ratio_table.csv"),
                render_ratio_table(&doc, TableFormat::Csv),
            ),
            (
                args.out_dir.join("totals_table.csv"),
                render_totals_table(&doc, TableFormat::Csv),
            ),
        ],
        OutputFormat::Svg => vec![
            (
                args.out_dir.join("ratio_chart.svg"),
                render_ratio_chart(&doc, ChartMetric::Ratio)?,
            ),
            (
                args.out_dir.join("totals_chart.svg"),
                render_ratio_chart(&doc, ChartMetric::Total)?,
            ),
        ],
    };
    for (path, contents) in outputs {
        write_atomic(&path, contents.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
