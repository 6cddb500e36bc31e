use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use psychoprobe_core::client::{
    Backend, BackendSet, Behavior, CachedBackend, ClientError, FixtureBackend, ModelSpec, OpenAiCompatBackend,
    ResponseCache, ScriptedBackend,
};
use psychoprobe_core::inventory::{Inventory, InventoryError};
use psychoprobe_core::prompts::ProbeTask;
use psychoprobe_core::report::{self, Format, ReportError};
use psychoprobe_core::runner::{self, default_families, RunConfig, RunError, Runner, RUN_CONFIG, SUMMARIES};

const EXIT_DATA: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "psychoprobe",
    version,
    about = "Probe language models for memorization of psychometric inventories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check inventory files against the schema and consistency rules.
    Validate {
        #[arg(required = true)]
        inventories: Vec<PathBuf>,
    },
    /// Probe models and append the results to the run log.
    Run(RunArgs),
    /// Compute per-(model, inventory) metrics from a run log.
    Score {
        /// Run output directory holding run_log.jsonl.
        #[arg(long, default_value = "psychoprobe-out")]
        out: PathBuf,
        /// Inventory files; defaults to those recorded in run_config.json.
        #[arg(long, value_delimiter = ',')]
        inventories: Vec<PathBuf>,
    },
    /// Render summaries as a model or questionnaire table.
    Report {
        /// Run output directory holding summaries.json.
        #[arg(long, default_value = "psychoprobe-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TableArg::Model)]
        table: TableArg,
        #[arg(long, value_enum, default_value_t = FormatArg::Md)]
        format: FormatArg,
        /// Write here instead of `<out>/<table>_table.<ext>`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated model ids.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Comma-separated inventory files.
    #[arg(long, value_delimiter = ',')]
    inventories: Vec<PathBuf>,
    /// Comma-separated tasks: verbatim, keyword, dimension, option-score, target-score.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<ProbeTask>,
    /// `scripted:<behavior>`, `fixture:<path>` or `live[:<base-url>]`.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Model,
    Questionnaire,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    #[value(alias = "markdown")]
    Md,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<InventoryError> for Failure {
    fn from(e: InventoryError) -> Self {
        let code = match e {
            InventoryError::NotFound(_) => EXIT_USAGE,
            InventoryError::Io { .. } => EXIT_IO,
            _ => EXIT_DATA,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Inventory(e) => e.into(),
            RunError::Config(_) => Failure::new(EXIT_USAGE, e.to_string()),
            RunError::Io { .. } => Failure::new(EXIT_IO, e.to_string()),
            RunError::Render(_) | RunError::Log { .. } | RunError::EmptyLog => Failure::new(EXIT_DATA, e.to_string()),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        let code = match e {
            ReportError::Empty => EXIT_DATA,
            ReportError::Io { .. } | ReportError::Csv(_) => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let code = match e {
            ClientError::Cache(_) => EXIT_IO,
            ClientError::MissingApiKey => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure::new(code, e.to_string())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { inventories } => validate(&inventories),
        Command::Run(args) => run(args),
        Command::Score { out, inventories } => score(&out, inventories),
        Command::Report {
            out,
            table,
            format,
            output,
        } => report(&out, table, format, output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn validate(paths: &[PathBuf]) -> Result<(), Failure> {
    // Report every file; exit with the most severe failure.
    let mut worst: Option<Failure> = None;
    for path in paths {
        let failure = match Inventory::load(path) {
            Ok(inv) => {
                println!(
                    "OK: {}, {} items, {} dimensions",
                    inv.name,
                    inv.items.len(),
                    inv.dimensions.len()
                );
                continue;
            }
            Err(InventoryError::Validation(violations)) => {
                for v in &violations {
                    eprintln!("{}: {v}", path.display());
                }
                Failure::new(
                    EXIT_DATA,
                    format!("{}: {} validation error(s)", path.display(), violations.len()),
                )
            }
            Err(e) => Failure::from(e),
        };
        if worst.as_ref().is_none_or(|w| failure.code > w.code) {
            worst = Some(failure);
        }
    }
    worst.map_or(Ok(()), Err)
}

fn build_config(args: RunArgs) -> Result<RunConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            if args.models.is_empty() || args.inventories.is_empty() {
                return Err(Failure::new(
                    EXIT_USAGE,
                    "run needs --config, or both --models and --inventories",
                ));
            }
            RunConfig::new(Vec::new(), Vec::new())
        }
    };
    if !args.models.is_empty() {
        let existing = std::mem::take(&mut config.models);
        config.models = args
            .models
            .iter()
            .map(|id| {
                existing
                    .iter()
                    .find(|m| &m.model_id == id)
                    .cloned()
                    .unwrap_or_else(|| ModelSpec::new(id.as_str()))
            })
            .collect();
    }
    if !args.inventories.is_empty() {
        config.inventory_paths = args.inventories;
    }
    if !args.tasks.is_empty() {
        config.tasks = args.tasks;
    }
    if args.backend.is_some() {
        config.backend = args.backend;
    }
    if let Some(n) = args.concurrency {
        config.concurrency = n;
    }
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    if let Some(cache) = args.cache {
        config.cache_dir = cache;
    }
    if args.run_id.is_some() {
        config.run_id = args.run_id;
    }
    config.validate()?;
    Ok(config)
}

fn build_backend(config: &mut RunConfig, inventories: &[Arc<Inventory>]) -> Result<Arc<dyn Backend>, Failure> {
    let spec = config.backend.clone().unwrap_or_else(|| "live".to_string());
    let (kind, arg) = spec.split_once(':').unwrap_or((spec.as_str(), ""));
    let backend: Arc<dyn Backend> = match kind {
        "scripted" => {
            let behavior: Behavior = arg.parse().map_err(|e: String| Failure::new(EXIT_USAGE, e))?;
            Arc::new(ScriptedBackend::new(behavior, inventories.iter().cloned()))
        }
        "fixture" if !arg.is_empty() => Arc::new(FixtureBackend::load(arg)?),
        "live" => {
            if !arg.is_empty() {
                for model in &mut config.models {
                    model.endpoint = arg.to_string();
                }
            }
            let cache = ResponseCache::open(&config.cache_dir).map_err(|e| {
                Failure::new(
                    EXIT_IO,
                    format!("cannot open cache {}: {e}", config.cache_dir.display()),
                )
            })?;
            Arc::new(CachedBackend::new(OpenAiCompatBackend::from_env()?, cache))
        }
        _ => {
            return Err(Failure::new(
                EXIT_USAGE,
                format!("unknown backend {spec:?} (expected scripted:<behavior>, fixture:<path> or live[:<base-url>])"),
            ))
        }
    };
    Ok(backend)
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut config = build_config(args)?;
    let inventories = config.load_inventories()?;
    let backend = build_backend(&mut config, &inventories)?;
    let runner = Runner::new(config, inventories, BackendSet::uniform(backend));
    let plan = runner.plan()?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    let outcome = runtime.block_on(runner.execute(&plan))?;
    println!(
        "run {}: {} planned, {} already done, {} probed ({} transport errors, {} parse failures) -> {}",
        outcome.run_id,
        outcome.planned,
        outcome.skipped,
        outcome.new_records,
        outcome.transport_errors,
        outcome.parse_failures,
        runner.log_path().display()
    );
    Ok(())
}

fn recorded_config(out: &Path) -> Result<Option<RunConfig>, Failure> {
    let path = out.join(RUN_CONFIG);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(RunConfig::load(path)?))
}

fn score(out: &Path, inventories: Vec<PathBuf>) -> Result<(), Failure> {
    let paths = if inventories.is_empty() {
        recorded_config(out)?.map(|c| c.inventory_paths).ok_or_else(|| {
            Failure::new(
                EXIT_USAGE,
                format!("no {RUN_CONFIG} in {}; pass --inventories", out.display()),
            )
        })?
    } else {
        inventories
    };
    let inventories = paths
        .iter()
        .map(|p| Inventory::load(p).map(Arc::new))
        .collect::<Result<Vec<_>, _>>()?;
    let summaries = runner::score_run(out, &inventories)?;
    for s in &summaries {
        let failures: usize = s.parse_failures.values().sum();
        let transport: usize = s.transport_failures.values().sum();
        println!(
            "{} / {}: {} parse failures, {} transport failures",
            s.model_id, s.inventory_name, failures, transport
        );
    }
    println!("wrote {}", out.join(SUMMARIES).display());
    Ok(())
}

fn report(out: &Path, table: TableArg, format: FormatArg, output: Option<PathBuf>) -> Result<(), Failure> {
    let summaries = runner::read_summaries(&out.join(SUMMARIES))?;
    let families = recorded_config(out)?.map_or_else(default_families, |c| c.families);
    let (built, name) = match table {
        TableArg::Model => (report::build_model_table(&summaries, &families)?, "model"),
        TableArg::Questionnaire => (report::build_questionnaire_table(&summaries)?, "questionnaire"),
    };
    let (format, ext) = match format {
        FormatArg::Csv => (Format::Csv, "csv"),
        FormatArg::Md => (Format::Markdown, "md"),
    };
    let path = output.unwrap_or_else(|| out.join(format!("{name}_table.{ext}")));
    report::emit(&built, format, &path)?;
    print!("{}", report::render(&built, format)?);
    eprintln!("wrote {}", path.display());
    Ok(())
}
