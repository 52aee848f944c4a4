use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use codeinstruct::corpus::language_distribution;
use codeinstruct::decontam::{
    apply_plan, audit, plan_removal, read_benchmark, train_texts, write_histogram_csv, EmbedField, DEFAULT_BIN_WIDTH,
    DEFAULT_TOP_K,
};
use codeinstruct::embedding::EmbeddingBackendConfig;
use codeinstruct::emitter::{read_dataset, write_dataset, DatasetSummary};
use codeinstruct::exemplar_db::ExemplarDb;
use codeinstruct::jsonl;
use codeinstruct::pipeline::{self, Backends, Checkpoint, OpenMode, Pipeline, PipelineConfig, PipelineError, RunHooks};

#[derive(Parser, Debug)]
#[command(name = "codeinstruct", version, about = "Build a multi-task code instruction dataset")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Continue the run recorded in the work directory.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Read the raw corpus into the work directory.
    Ingest,
    /// Apply length and blacklist filters.
    Filter,
    /// Embed the filtered records (cached).
    Embed,
    /// Pick the coreset with k-center greedy.
    Select,
    /// Assign a task to every selected record.
    Assign,
    /// Run the generator/discriminator loop.
    Generate,
    /// Write the training dataset.
    Emit,
    /// Measure train/benchmark similarity.
    Audit(AuditArgs),
    /// Remove the nearest training neighbours of every benchmark item.
    Decontaminate(DecontamArgs),
    /// Print counts for the work directory.
    Stats,
    /// Run every remaining stage.
    Run,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Field {
    Output,
    InstructionAndOutput,
}

impl From<Field> for EmbedField {
    fn from(f: Field) -> Self {
        match f {
            Field::Output => EmbedField::Output,
            Field::InstructionAndOutput => EmbedField::InstructionAndOutput,
        }
    }
}

#[derive(clap::Args, Debug)]
struct AuditArgs {
    /// Training dataset (JSONL of training examples).
    #[arg(long)]
    train: PathBuf,
    /// Benchmark file (JSONL with bench_id and canonical_solution).
    #[arg(long)]
    bench: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    bin_width: f64,
    #[arg(long, value_enum, default_value_t = Field::Output)]
    field: Field,
    /// Report path.
    #[arg(long, default_value = "leakage_report.json")]
    out: PathBuf,
    /// Also write the top-1 histogram as CSV.
    #[arg(long)]
    histogram_csv: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct DecontamArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    bench: PathBuf,
    /// Neighbours removed per benchmark item.
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Field::Output)]
    field: Field,
    /// Cleaned dataset path.
    #[arg(long)]
    out: PathBuf,
    /// Optional path for the audit report used to plan the removal.
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Errors the user fixes by changing arguments or config; exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            let usage = e.chain().any(|c| {
                c.downcast_ref::<UsageError>().is_some()
                    || c.downcast_ref::<PipelineError>().is_some_and(PipelineError::is_config)
            });
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

/// Joins the error chain, skipping causes whose text a wrapper already repeats.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| UsageError("this command needs --config <path>".into()))?;
    if !path.exists() {
        return Err(UsageError(format!("config file {} does not exist", path.display())).into());
    }
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_pipeline(cli: &Cli) -> Result<Pipeline> {
    let cfg = load_config(cli)?;
    let backends = Backends::from_config(&cfg)?;
    let mode = if cli.resume { OpenMode::Resume } else { OpenMode::Continue };
    Ok(Pipeline::open(cfg, backends, RunHooks::none(), mode)?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest => open_pipeline(&cli)?.stage_ingest()?,
        Command::Filter => print_json(&open_pipeline(&cli)?.stage_filter()?)?,
        Command::Embed => open_pipeline(&cli)?.stage_embed()?,
        Command::Select => {
            let sel = open_pipeline(&cli)?.stage_select()?;
            println!("selected {} records", sel.selected_ids.len());
        }
        Command::Assign => {
            let a = open_pipeline(&cli)?.stage_assign()?;
            println!("assigned {} records", a.len());
        }
        Command::Generate => {
            let mut p = open_pipeline(&cli)?;
            p.stage_generate()?;
            print_json(&p.summary())?;
        }
        Command::Emit => {
            let n = open_pipeline(&cli)?.stage_emit()?;
            println!("emitted {n} examples");
        }
        Command::Run => {
            let cfg = load_config(&cli)?;
            let backends = Backends::from_config(&cfg)?;
            let summary = pipeline::run(cfg, backends, RunHooks::none(), cli.resume)?;
            print_json(&summary)?;
        }
        Command::Stats => stats(&load_config(&cli)?)?,
        Command::Audit(args) => run_audit(&cli, args)?,
        Command::Decontaminate(args) => run_decontaminate(&cli, args)?,
    }
    Ok(())
}

fn stats(cfg: &PipelineConfig) -> Result<()> {
    let paths = pipeline::WorkPaths::new(&cfg.work_dir);
    let ckpt_path = paths.checkpoint();
    if !ckpt_path.exists() {
        anyhow::bail!("no checkpoint in {}; nothing has run yet", cfg.work_dir.display());
    }
    let ckpt: Checkpoint = jsonl::read_json(&ckpt_path)?;
    let mut out = serde_json::json!({
        "stage": ckpt.stage,
        "counts": ckpt.counts,
        "usage": ckpt.usage,
        "unprocessed": ckpt.counts.selected.saturating_sub(ckpt.counts.records_processed),
    });
    if paths.filtered().exists() {
        let records: Vec<codeinstruct::corpus::RawCodeRecord> = jsonl::read_all(&paths.filtered())?;
        if !records.is_empty() {
            out["languages"] = serde_json::to_value(language_distribution(&records, None)?)?;
        }
    }
    let db_path = cfg.exemplar_db_path();
    if db_path.exists() {
        out["exemplar_db"] = serde_json::to_value(ExemplarDb::open(&db_path)?.stats())?;
    }
    let dataset = cfg.output_path();
    if dataset.exists() {
        out["dataset"] = serde_json::to_value(DatasetSummary::of(&read_dataset(&dataset)?))?;
    }
    print_json(&out)
}

fn embedding_config(cli: &Cli) -> Result<EmbeddingBackendConfig> {
    Ok(match &cli.config {
        Some(_) => load_config(cli)?.embedding_backend,
        None => EmbeddingBackendConfig::default(),
    })
}

fn write_report<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    jsonl::write_json_atomic(path, value)?;
    Ok(())
}

fn run_audit(cli: &Cli, args: &AuditArgs) -> Result<()> {
    if args.top_k < 1 {
        return Err(UsageError("--top-k must be >= 1".into()).into());
    }
    let client = embedding_config(cli)?.build_client()?;
    let train = read_dataset(&args.train)?;
    let bench = read_benchmark(&args.bench)?;
    let report = audit(&train_texts(&train, args.field.into()), &bench, &client, args.top_k, args.bin_width)?;
    write_report(&args.out, &report)?;
    if let Some(csv) = &args.histogram_csv {
        write_histogram_csv(&report, csv)?;
    }
    println!(
        "audited {} benchmark items against {} training examples; average top-1 similarity {:.4}; report at {}",
        bench.len(),
        train.len(),
        report.average_top1,
        args.out.display()
    );
    Ok(())
}

fn run_decontaminate(cli: &Cli, args: &DecontamArgs) -> Result<()> {
    if args.n < 1 {
        return Err(UsageError("--n must be >= 1".into()).into());
    }
    let client = embedding_config(cli)?.build_client()?;
    let train = read_dataset(&args.train)?;
    let bench = read_benchmark(&args.bench)?;
    let report = audit(&train_texts(&train, args.field.into()), &bench, &client, args.n, DEFAULT_BIN_WIDTH)?;
    if let Some(p) = &args.report {
        write_report(p, &report)?;
    }
    let plan = plan_removal(&report, args.n);
    let keyed = train.into_iter().map(|e| (e.source_record_id.clone(), e)).collect();
    let outcome = apply_plan(&plan, keyed);
    for id in &outcome.missing_ids {
        log::warn!("planned removal {id} is not in the training set");
    }
    let kept: Vec<_> = outcome.kept.into_iter().map(|(_, e)| e).collect();
    write_dataset(&kept, &args.out)?;
    println!("removed {} examples; {} remain in {}", outcome.removed_count, kept.len(), args.out.display());
    Ok(())
}
