//! `kgforage discover | join | serve`.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kgforage::discovery::{discover_related, AttributeDescriptor, DiscoveryConfig};
use kgforage::graph_store::Value;
use kgforage::kg_client::{BackendConfig, KgClient};
use kgforage::materializer::materialize;
use kgforage::planner::JoinPlan;
use kgforage::tabular::{export_csv, import_csv, sidecar_path, CsvOptions, Dataset, PlanSidecar};
use serde::Deserialize;

use crate::app::{self, AppConfig, AppState};

pub const DEFAULT_BACKEND: &str = "remote:https://query.wikidata.org/sparql";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "kgforage",
    version,
    about = "Augment CSV datasets with columns joined from a knowledge graph"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List attributes related to a column's entities.
    Discover(DiscoverArgs),
    /// Apply join plans from a file and write the augmented CSV.
    Join(JoinArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// `local:<fixture.jsonl>` or `remote:<sparql url>`. KGFORAGE_ENDPOINT
    /// overrides the URL of a remote backend.
    #[arg(long, default_value = DEFAULT_BACKEND)]
    backend: String,
    /// Maximum concurrent backend requests.
    #[arg(long, default_value_t = 4)]
    max_concurrency: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    /// Entities per VALUES block.
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
}

impl BackendArgs {
    fn config(&self) -> Result<BackendConfig, String> {
        let mut cfg = BackendConfig::from_selector(&self.backend)
            .map_err(|e| e.to_string())?
            .with_env_overrides();
        cfg.max_concurrency = self.max_concurrency;
        cfg.request_timeout = Duration::from_secs(self.timeout);
        cfg.batch_size = self.batch_size;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct InputArgs {
    /// CSV file to read.
    #[arg(long)]
    input: PathBuf,
    /// Field delimiter; `tab` for TSV.
    #[arg(long, default_value = ",")]
    delimiter: String,
    /// The first line is data, not column names.
    #[arg(long)]
    no_header: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Debug, Args)]
struct DiscoverArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Column whose cells name entities.
    #[arg(long)]
    column: String,
    #[command(flatten)]
    backend: BackendArgs,
    /// Seed for the row sample.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 25)]
    sample_size: usize,
    #[arg(long, default_value_t = 50)]
    top_k: usize,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
}

#[derive(Debug, Args)]
struct JoinArgs {
    #[command(flatten)]
    input: InputArgs,
    /// JSON plan file: an array of plans, `{"plans": [...]}`, or an exported
    /// plan sidecar.
    #[arg(long)]
    plans: PathBuf,
    /// Augmented CSV to write; the plan sidecar goes next to it.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
    /// Seed for `sample` aggregations in plans that do not set one.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: std::net::IpAddr,
    #[command(flatten)]
    backend: BackendArgs,
    /// Idle minutes before a session is dropped.
    #[arg(long, default_value_t = 120)]
    session_ttl_minutes: u64,
    /// Largest accepted upload, in megabytes.
    #[arg(long, default_value_t = 50)]
    max_upload_mb: usize,
}

/// Runs the CLI with `argv` (program name first), writing results to `out`
/// and diagnostics to stderr.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Discover(args) => discover(&args, out),
        Command::Join(args) => join(&args),
        Command::Serve(args) => serve(&args),
    };
    match result {
        Ok(()) | Err(Failure::ClosedOutput) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
    /// stdout was closed, e.g. piped into `head`.
    ClosedOutput,
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn output(e: std::io::Error) -> Failure {
    if e.kind() == std::io::ErrorKind::BrokenPipe {
        Failure::ClosedOutput
    } else {
        runtime(e)
    }
}

fn read_dataset(args: &InputArgs) -> Result<Dataset, Failure> {
    let delimiter = match args.delimiter.as_str() {
        "tab" | "\\t" | "\t" => b'\t',
        s if s.len() == 1 && s.is_ascii() => s.as_bytes()[0],
        s => {
            return Err(Failure::Usage(format!(
                "delimiter must be one ASCII character, got {s:?}"
            )))
        }
    };
    let bytes = std::fs::read(&args.input)
        .map_err(|e| runtime(format!("reading {}: {e}", args.input.display())))?;
    import_csv(
        &bytes,
        CsvOptions {
            has_header: !args.no_header,
            delimiter,
        },
    )
    .map_err(|e| runtime(format!("{}: {e}", args.input.display())))
}

fn connect(args: &BackendArgs) -> Result<KgClient, Failure> {
    let cfg = args.config().map_err(Failure::Usage)?;
    KgClient::connect(&cfg).map_err(runtime)
}

fn example_text(desc: &AttributeDescriptor, v: &Value) -> String {
    match v {
        Value::Entity(id) => desc
            .labels
            .get(id)
            .cloned()
            .unwrap_or_else(|| id.to_string()),
        other => other.to_string(),
    }
}

/// Tabs and newlines in labels would break the TSV layout.
fn tsv_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

fn discover(args: &DiscoverArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let dataset = read_dataset(&args.input)?;
    let client = connect(&args.backend)?;
    let cfg = DiscoveryConfig {
        sample_size: args.sample_size,
        top_k: args.top_k,
        rng_seed: args.seed,
        ..DiscoveryConfig::default()
    };
    let found = discover_related(&client, &dataset, &args.column, &cfg).map_err(runtime)?;
    match args.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, &found).map_err(|e| output(e.into()))?;
            writeln!(out).map_err(output)?;
        }
        Format::Tsv => {
            writeln!(out, "property\tlabel\tcoverage\tdatatype\texamples").map_err(output)?;
            for d in &found {
                let examples: Vec<String> = d.examples.iter().map(|v| example_text(d, v)).collect();
                writeln!(
                    out,
                    "{}\t{}\t{:.3}\t{}\t{}",
                    d.property,
                    tsv_field(&d.label),
                    d.coverage,
                    d.datatype.as_str(),
                    tsv_field(&examples.join("; "))
                )
                .map_err(output)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PlanFile {
    List(Vec<JoinPlan>),
    Wrapped { plans: Vec<JoinPlan> },
    Sidecar(PlanSidecar),
}

/// Plans from a plan file, in file order.
pub fn read_plans(path: &Path) -> Result<Vec<JoinPlan>, String> {
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    let parsed: PlanFile = serde_json::from_str(&text).map_err(|_| {
        format!(
            "{}: expected a JSON array of plans, {{\"plans\": [...]}}, or a plan sidecar",
            path.display()
        )
    })?;
    Ok(match parsed {
        PlanFile::List(plans) | PlanFile::Wrapped { plans } => plans,
        PlanFile::Sidecar(s) => s.columns.into_iter().map(|c| c.plan).collect(),
    })
}

fn join(args: &JoinArgs) -> Result<(), Failure> {
    let plans = read_plans(&args.plans).map_err(Failure::Usage)?;
    let mut dataset = read_dataset(&args.input)?;
    let client = connect(&args.backend)?;
    for (i, plan) in plans.into_iter().enumerate() {
        let plan = JoinPlan {
            rng_seed: plan.rng_seed.or(args.seed),
            ..plan
        };
        dataset = materialize(&client, &dataset, &plan)
            .map_err(|e| runtime(format!("plan {}: {e}", i + 1)))?;
    }
    std::fs::write(&args.output, export_csv(&dataset))
        .map_err(|e| runtime(format!("writing {}: {e}", args.output.display())))?;
    let sidecar = sidecar_path(&args.output);
    let json = serde_json::to_string_pretty(&dataset.plan_sidecar()).map_err(runtime)?;
    std::fs::write(&sidecar, json + "\n")
        .map_err(|e| runtime(format!("writing {}: {e}", sidecar.display())))?;
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<(), Failure> {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .try_init();
    let backend = args.backend.config().map_err(Failure::Usage)?;
    let config = AppConfig {
        max_upload_bytes: args.max_upload_mb.saturating_mul(1024 * 1024),
        session_ttl: Duration::from_secs(args.session_ttl_minutes.saturating_mul(60)),
        ..AppConfig::new(backend)
    };
    let state = AppState::new(config).map_err(runtime)?;
    let addr = SocketAddr::new(args.bind, args.port);
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| runtime(format!("binding {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(runtime)?;
        log::info!("listening on http://{bound}");
        app::serve(state, listener).await.map_err(runtime)
    })
}
