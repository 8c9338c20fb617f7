//! `partsynth`: build knowledge indexes, run ensemble extractions, and
//! evaluate runs.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or config
//! errors. Machine-readable output goes to stdout; logs and diagnostics go
//! to stderr.

mod input;

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use partsynth::index::{ingest_records, RecordFormat};
use partsynth::metrics::{evaluate_run, EvalOptions, SystemRun};
use partsynth::synthesis::SynthesisError;
use partsynth::{
    EnsembleConfig, GroundTruthManifest, HashedTrigramEmbedder, KnowledgeIndex, Pipeline,
    PipelineResult, SpecSchema,
};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "partsynth", version, about = "Retrieval-grounded ensemble extraction of part specifications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-index operations
    #[command(subcommand)]
    Index(IndexCommand),
    /// Run the three-phase pipeline over part descriptions
    Extract(ExtractArgs),
    /// Score pipeline runs against a ground-truth manifest
    Eval(EvalArgs),
    /// Ensemble configuration operations
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Ingest a CSV or JSON knowledge base and write an index directory
    Build(IndexBuildArgs),
}

#[derive(Args)]
struct IndexBuildArgs {
    /// Knowledge-base file (.csv or .json)
    #[arg(long)]
    kb: PathBuf,
    /// Output directory for the index
    #[arg(long)]
    out: PathBuf,
    /// Record format; inferred from the file extension when omitted
    #[arg(long, value_enum)]
    format: Option<KbFormat>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KbFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct ExtractArgs {
    /// Descriptions file, or `-` for stdin
    #[arg(long)]
    input: String,
    /// Ensemble configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Index directory written by `index build`
    #[arg(long)]
    index: PathBuf,
    /// Also write the full per-description pipeline results here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Field schema (JSON); defaults to the built-in part schema
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of run files, one JSON array of pipeline results per system
    #[arg(long)]
    runs: PathBuf,
    /// Ground-truth manifest (JSON)
    #[arg(long)]
    manifest: PathBuf,
    /// Also write the metric reports as JSON here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stdout format
    #[arg(long, value_enum, default_value_t = EvalFormat::Table)]
    format: EvalFormat,
    /// Include research-phase outputs in the diversity comparison
    #[arg(long)]
    idr_include_research: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalFormat {
    Table,
    Json,
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Validate an ensemble configuration
    Check(ConfigCheckArgs),
}

#[derive(Args)]
struct ConfigCheckArgs {
    /// Ensemble configuration (JSON)
    #[arg(long)]
    config: PathBuf,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome = Result<(), Failure>;

trait FailureExt<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> FailureExt<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(err) => {
            eprintln!("error: cannot start async runtime: {err}");
            return ExitCode::from(1);
        }
    };

    let outcome = runtime.block_on(async {
        match cli.command {
            Command::Index(IndexCommand::Build(args)) => index_build(args).await,
            Command::Extract(args) => extract(args).await,
            Command::Eval(args) => eval(args),
            Command::Config(ConfigCommand::Check(args)) => config_check(args),
        }
    });

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(err)) => {
            eprintln!("error: {}", one_line(&err));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(err)) => {
            eprintln!("error: {}", one_line(&err));
            ExitCode::from(1)
        }
    }
}

fn one_line(err: &anyhow::Error) -> String {
    format!("{err:#}").replace('\n', " ")
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .usage()
}

fn write_stdout(text: &str) -> Outcome {
    let mut stdout = std::io::stdout().lock();
    stdout
        .write_all(text.as_bytes())
        .and_then(|()| stdout.flush())
        .context("cannot write to stdout")
        .runtime()
}

fn to_json<T: serde::Serialize + ?Sized>(value: &T) -> Result<String, Failure> {
    let mut text = serde_json::to_string_pretty(value).runtime()?;
    text.push('\n');
    Ok(text)
}

fn write_file(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .runtime()
}

async fn index_build(args: IndexBuildArgs) -> Outcome {
    let format = match args.format {
        Some(KbFormat::Csv) => RecordFormat::Csv,
        Some(KbFormat::Json) => RecordFormat::Json,
        None => RecordFormat::from_path(&args.kb)
            .ok_or_else(|| anyhow!("cannot infer format of {}; pass --format", args.kb.display()))
            .usage()?,
    };
    let report = ingest_records(&args.kb, format)
        .with_context(|| format!("cannot ingest {}", args.kb.display()))
        .usage()?;
    for skipped in &report.errors {
        tracing::warn!("skipped {skipped}");
    }
    if report.records.is_empty() {
        tracing::warn!("no records ingested; the index will be empty");
    }
    let index = KnowledgeIndex::build(&report.records, Arc::new(HashedTrigramEmbedder::default()))
        .await
        .runtime()?;
    index
        .save(&args.out)
        .with_context(|| format!("cannot write index to {}", args.out.display()))
        .runtime()?;
    let summary = serde_json::json!({
        "records": index.len(),
        "skipped": report.errors.len(),
        "dimension": index.flat().dimension(),
    });
    write_stdout(&to_json(&summary)?)
}

async fn extract(args: ExtractArgs) -> Outcome {
    let text = if args.input == "-" {
        let mut text = String::new();
        std::io::stdin()
            .read_to_string(&mut text)
            .context("cannot read stdin")
            .usage()?;
        text
    } else {
        read_text(Path::new(&args.input))?
    };
    let descriptions = input::parse_descriptions(&text).usage()?;
    let config = EnsembleConfig::load(&args.config).usage()?;
    let schema = match &args.schema {
        Some(path) => SpecSchema::load(path).usage()?,
        None => SpecSchema::default_parts(),
    };
    let index = KnowledgeIndex::open(&args.index)
        .with_context(|| format!("cannot open index {}", args.index.display()))
        .usage()?;
    let pipeline = Pipeline::from_config(config, index, schema).usage()?;

    let mut results: Vec<PipelineResult> = Vec::with_capacity(descriptions.len());
    for description in &descriptions {
        let result = pipeline.run_pipeline(description).await;
        for warning in &result.warnings {
            tracing::warn!(description = %description.id, "{warning}");
        }
        if let Some(err) = &result.error {
            tracing::error!(description = %description.id, "{err}");
        }
        results.push(result);
    }

    if let Some(out) = &args.out {
        write_file(out, &to_json(&results)?)?;
    }
    let specs: Vec<_> = results.iter().filter_map(|r| r.final_spec.as_ref()).collect();
    write_stdout(&to_json(&specs)?)?;

    let all_quorum_failures = results
        .iter()
        .all(|r| matches!(r.error, Some(SynthesisError::QuorumNotMet { .. })));
    if all_quorum_failures {
        return Err(Failure::Runtime(anyhow!(
            "quorum not met for any of {} description(s)",
            results.len()
        )));
    }
    Ok(())
}

fn load_runs(dir: &Path) -> Result<Vec<SystemRun>, Failure> {
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read runs directory {}", dir.display()))
        .usage()?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.context("cannot list runs directory").usage()?.path();
        if path.extension().is_some_and(|ext| ext == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Usage(anyhow!("no .json run files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|path| {
            let results: Vec<PipelineResult> = serde_json::from_str(&read_text(path)?)
                .with_context(|| format!("invalid run file {}", path.display()))
                .usage()?;
            let system_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(SystemRun { system_id, results })
        })
        .collect()
}

fn eval(args: EvalArgs) -> Outcome {
    let manifest = GroundTruthManifest::load(&args.manifest).usage()?;
    let runs = load_runs(&args.runs)?;
    let options = EvalOptions {
        idr_include_research: args.idr_include_research,
    };
    let (reports, table) = evaluate_run(&runs, &manifest, options).usage()?;
    if let Some(out) = &args.out {
        write_file(out, &to_json(&reports)?)?;
    }
    match args.format {
        EvalFormat::Table => write_stdout(&table),
        EvalFormat::Json => write_stdout(&to_json(&reports)?),
    }
}

fn config_check(args: ConfigCheckArgs) -> Outcome {
    let config = EnsembleConfig::load(&args.config).usage()?;
    let research = if config.research_models.is_empty() {
        "none".to_string()
    } else {
        config.research_models.join(", ")
    };
    write_stdout(&format!(
        "ok: {} provider(s), synthesis {}, research {}, k {}, threshold {}\n",
        config.roster.len(),
        config.synthesis_model,
        research,
        config.k,
        config.threshold
    ))
}
