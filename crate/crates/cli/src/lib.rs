//! `attrchain` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 transport error.

mod config;

use std::collections::{BTreeSet, HashMap};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use attrchain_core::chains::{parse_chain, AttributionChain};
use attrchain_core::corpus::{corpus_stats, load_corpus, CorpusFormat, QaInstance};
use attrchain_core::curation::{curate, CuratedRecord, CurationReport};
use attrchain_core::eval::{self, EvalConfig, EvalError, EvalRun, RawAnnotation, SweepReport};
use attrchain_core::llmio::{Cassette, CassetteMode, ChatBackend, HttpBackend, LlmClient, RetryPolicy};
use attrchain_core::metrics::PermutationConfig;
use attrchain_core::prompting::{read_demo_records, DemoRecord, PromptMode, WordHeuristic};
use attrchain_core::report::{build_report, render_files};
use attrchain_core::review::{AnnotationLog, ReviewStore};
use attrchain_core::seed;
use attrchain_core::taskgen::{self, AugmentPolicy, BuildConfig, TaskKind};
use clap::{Args, Parser, Subcommand};
use rand::seq::index;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-1106";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Transport(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Transport(m) => write!(f, "transport error: {m}"),
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        if e.is_transport() {
            Self::Transport(e.to_string())
        } else {
            Self::Data(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "attrchain", version, about = "Attributed multi-hop QA: curation, task building and evaluation")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect raw few-shot CoQ annotations for a corpus.
    Generate(GenerateArgs),
    /// Filter raw annotations and write the kept set plus an incidence report.
    Curate(CurateArgs),
    /// Build LA/AP/CG/QI training records.
    BuildTasks(BuildTasksArgs),
    /// Multi-trial evaluation in one prompting mode.
    Evaluate(EvaluateArgs),
    /// Evaluation across distractor noise ratios.
    SweepNoise(SweepArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
    /// Render tables and figure series from run artifacts.
    Report(ReportArgs),
    /// Serve the review API (and optional UI assets).
    ServeReview(ServeArgs),
    /// Print the assessment summary from a running review server.
    ReviewSummary(ReviewSummaryArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "internal")]
    pub format: CorpusFormat,
}

#[derive(Debug, Args, Clone)]
pub struct LlmArgs {
    /// Cassette file of recorded responses.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// record, replay or passthrough.
    #[arg(long)]
    pub cassette_mode: Option<CassetteMode>,
    /// Base URL of an OpenAI-compatible endpoint.
    #[arg(long)]
    pub api_base: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub max_attempts: Option<u32>,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long)]
    pub shots: Option<usize>,
    /// Token budget for the whole prompt.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Comma-separated trial seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Raw annotations (`{id, response}` per line).
    #[arg(long, alias = "in")]
    pub raw: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BuildTasksArgs {
    /// Curated samples from `curate`.
    #[arg(long)]
    pub curated: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "la,ap,cg,qi")]
    pub tasks: Vec<TaskKind>,
    #[arg(long, default_value_t = 2)]
    pub copies: usize,
    /// Tasks emitted once with their original context.
    #[arg(long, value_delimiter = ',', default_value = "qi")]
    pub no_augment: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub min_distractors: usize,
    #[arg(long)]
    pub max_distractors: Option<usize>,
    #[arg(long)]
    pub no_shuffle: bool,
    /// Generic instruction records to mix in (subsampled to the reasoning count).
    #[arg(long)]
    pub mixin: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[arg(long)]
    pub mode: PromptMode,
    /// Percentage of distractors kept.
    #[arg(long, default_value_t = 100)]
    pub noise_ratio: u32,
    /// Dataset label for reports (defaults to the corpus file stem).
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    #[arg(long)]
    pub mode: PromptMode,
    #[arg(long, value_delimiter = ',', default_value = "0,20,40,60,80,100")]
    pub ratios: Vec<u32>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub corpus: Option<StatsCorpus>,
    /// Curated samples; statistics then include step and quote lengths.
    #[arg(long, conflicts_with = "corpus")]
    pub curated: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsCorpus {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "internal")]
    pub format: CorpusFormat,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub curation: Option<PathBuf>,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long = "eval")]
    pub evals: Vec<PathBuf>,
    #[arg(long = "sweep")]
    pub sweeps: Vec<PathBuf>,
    #[arg(long, default_value_t = 9999)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub permutation_seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub curated: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory of built UI assets served at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReviewSummaryArgs {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    pub url: String,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("attrchain: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let file = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => generate(a, &file),
        Command::Curate(a) => curate_cmd(a),
        Command::BuildTasks(a) => build_tasks(a),
        Command::Evaluate(a) => evaluate(a, &file),
        Command::SweepNoise(a) => sweep(a, &file),
        Command::Stats(a) => stats(a),
        Command::Report(a) => report(a),
        Command::ServeReview(a) => serve_review(a),
        Command::ReviewSummary(a) => review_summary(a),
    }
}

/// Writes next to `path` and renames into place, so a failed run never
/// leaves a truncated artifact under the final name.
fn write_atomic(path: &Path, content: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| data(format!("{}: {e}", parent.display())))?;
    }
    let tmp = partial_path(path);
    std::fs::write(&tmp, content).map_err(|e| data(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(data)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(data)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| data(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| data(format!("{} line {}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn load(args: &CorpusArgs) -> Result<Vec<QaInstance>, CliError> {
    load_corpus(&args.corpus, args.format).map_err(|e| data(format!("{}: {e}", args.corpus.display())))
}

fn load_demos(path: &Path) -> Result<Vec<DemoRecord>, CliError> {
    let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    read_demo_records(BufReader::new(file)).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn build_client(args: &LlmArgs, file: &config::FileConfig) -> Result<LlmClient, CliError> {
    let mode = match (args.cassette_mode, &file.llm.cassette_mode) {
        (Some(m), _) => m,
        (None, Some(s)) => s.parse().map_err(|e: attrchain_core::llmio::LlmError| CliError::Usage(e.to_string()))?,
        (None, None) => CassetteMode::Replay,
    };
    let cassette_path = args.cassette.clone().or_else(|| file.llm.cassette.clone());
    let cassette = match (&cassette_path, mode) {
        (Some(p), _) => Cassette::open(p, mode).map_err(|e| data(format!("cassette {}: {e}", p.display())))?,
        (None, CassetteMode::Passthrough) => Cassette::in_memory(mode),
        (None, _) => return Err(CliError::Usage(format!("--cassette is required in {mode} mode"))),
    };
    let api_base = args
        .api_base
        .clone()
        .or_else(|| config::env(config::ENV_API_BASE))
        .or_else(|| file.llm.api_base.clone());
    let backend: Option<Box<dyn ChatBackend>> = match (mode, api_base) {
        (CassetteMode::Replay, _) | (_, None) => None,
        (_, Some(base)) => {
            let key = config::env(config::ENV_API_KEY).or_else(|| file.llm.api_key.clone());
            let timeout = Duration::from_secs(file.llm.timeout_secs.unwrap_or(120));
            Some(Box::new(HttpBackend::new(&base, key, timeout).map_err(|e| CliError::Transport(e.to_string()))?))
        }
    };
    let mut retry = RetryPolicy::default();
    if let Some(n) = args.max_attempts.or(file.llm.max_attempts) {
        retry.max_attempts = n.max(1);
    }
    Ok(LlmClient::new(cassette, backend)
        .with_retry(retry)
        .with_parallelism(args.parallelism.or(file.llm.parallelism).unwrap_or(attrchain_core::llmio::DEFAULT_PARALLELISM)))
}

fn eval_config(
    mode: PromptMode,
    prompt: &PromptArgs,
    llm: &LlmArgs,
    dataset: Option<&str>,
    corpus: &Path,
    file: &config::FileConfig,
) -> Result<EvalConfig, CliError> {
    let model = llm
        .model
        .clone()
        .or_else(|| config::env(config::ENV_MODEL))
        .or_else(|| file.llm.model.clone())
        .unwrap_or_else(|| DEFAULT_MODEL.to_string());
    let mut cfg = EvalConfig::new(&model, mode);
    cfg.dataset = dataset.map(str::to_string).unwrap_or_else(|| {
        corpus
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    if let Some(s) = prompt.shots.or(file.eval.shots) {
        cfg.shots = s;
    }
    if let Some(b) = prompt.budget.or(file.eval.budget) {
        cfg.budget = b;
    }
    if let Some(seeds) = prompt.seeds.clone().or_else(|| file.eval.seeds.clone()) {
        if seeds.is_empty() {
            return Err(CliError::Usage("--seeds must not be empty".into()));
        }
        cfg.seeds = seeds;
    }
    Ok(cfg)
}

fn generate(args: GenerateArgs, file: &config::FileConfig) -> Result<(), CliError> {
    let corpus = load(&args.corpus)?;
    let pool = load_demos(&args.prompt.demos)?;
    let client = build_client(&args.llm, file)?;
    let cfg = eval_config(PromptMode::Coq, &args.prompt, &args.llm, None, &args.corpus.corpus, file)?;
    // one instance at a time so that completed annotations survive a failure
    let mut done: Vec<RawAnnotation> = Vec::with_capacity(corpus.len());
    for chunk in corpus.chunks(cfg.seeds.len().max(1) * 8) {
        match eval::generate(chunk, &pool, &client, &cfg, &WordHeuristic) {
            Ok(mut out) => done.append(&mut out),
            Err(e) => {
                let partial = partial_path(&args.out);
                std::fs::write(&partial, jsonl(&done)?).map_err(data)?;
                eprintln!("attrchain: {} annotations written to {} (partial)", done.len(), partial.display());
                return Err(e.into());
            }
        }
    }
    write_atomic(&args.out, &jsonl(&done)?)
}

/// Output that does not parse as CoQ becomes an empty chain, which fails the
/// answer check.
fn parse_raw(raw: &RawAnnotation) -> AttributionChain {
    parse_chain(&raw.response, PromptMode::Coq).unwrap_or_else(|_| AttributionChain {
        steps: Vec::new(),
        answer: String::new(),
        raw: raw.response.clone(),
    })
}

fn curate_cmd(args: CurateArgs) -> Result<(), CliError> {
    let corpus = load(&args.corpus)?;
    let by_id: HashMap<&str, &QaInstance> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    let raw: Vec<RawAnnotation> = read_jsonl(&args.raw)?;
    let samples = raw
        .iter()
        .map(|r| {
            let inst = by_id
                .get(r.id.as_str())
                .ok_or_else(|| data(format!("annotation for unknown instance {}", r.id)))?;
            Ok(((*inst).clone(), parse_raw(r)))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let result = curate(&samples);
    let kept: Vec<CuratedRecord> = result.kept.iter().map(|(i, c)| CuratedRecord::new(i, c)).collect();
    write_atomic(&args.out, &jsonl(&kept)?)?;
    write_json(&args.report, &result.report)?;
    if let Some(path) = &args.verdicts {
        write_atomic(path, &jsonl(&result.verdicts)?)?;
    }
    eprintln!("kept {} of {}", result.report.total_kept, result.report.total_in);
    Ok(())
}

fn build_tasks(args: BuildTasksArgs) -> Result<(), CliError> {
    let samples: Vec<(QaInstance, AttributionChain)> = read_jsonl::<CuratedRecord>(&args.curated)?
        .into_iter()
        .map(CuratedRecord::into_pair)
        .collect();
    let no_augment = args
        .no_augment
        .iter()
        .filter(|s| !s.trim().is_empty() && s.trim() != "none")
        .map(|s| s.parse::<TaskKind>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<BTreeSet<_>, _>>()?;
    let config = BuildConfig {
        tasks: args.tasks.clone(),
        policy: AugmentPolicy {
            min_distractors: args.min_distractors,
            max_distractors: args.max_distractors,
            shuffle: !args.no_shuffle,
            copies: args.copies,
        },
        no_augment,
        seed: args.seed,
    };
    let examples = taskgen::build_tasks(&samples, &config).map_err(|e| match e {
        taskgen::TaskError::InvalidPolicy(m) => CliError::Usage(m),
        other => data(other),
    })?;
    let mixin = match &args.mixin {
        None => None,
        Some(path) => {
            let file = File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
            let all = taskgen::read_instruction_records(BufReader::new(file)).map_err(data)?;
            if all.len() < examples.len() {
                return Err(data(format!(
                    "mixin has {} records, need at least {}",
                    all.len(),
                    examples.len()
                )));
            }
            let mut rng = seed::derived_rng(args.seed, &["mixin"]);
            let mut picked: Vec<usize> = index::sample(&mut rng, all.len(), examples.len()).into_vec();
            picked.sort_unstable();
            Some(picked.into_iter().map(|i| all[i].clone()).collect::<Vec<_>>())
        }
    };
    let mut buf = BufWriter::new(Vec::new());
    let n = taskgen::export(&examples, mixin.as_deref(), args.seed, &mut buf).map_err(data)?;
    write_atomic(&args.out, &buf.into_inner().map_err(|e| data(e.error()))?)?;
    eprintln!("wrote {n} records");
    Ok(())
}

fn evaluate(args: EvaluateArgs, file: &config::FileConfig) -> Result<(), CliError> {
    let corpus = load(&args.corpus)?;
    let pool = load_demos(&args.prompt.demos)?;
    let client = build_client(&args.llm, file)?;
    let mut cfg = eval_config(args.mode, &args.prompt, &args.llm, args.dataset.as_deref(), &args.corpus.corpus, file)?;
    if args.noise_ratio > 100 {
        return Err(CliError::Usage(format!("noise ratio {} outside 0..=100", args.noise_ratio)));
    }
    cfg.noise_ratio = args.noise_ratio;
    let run: EvalRun = eval::evaluate(&corpus, &pool, &client, &cfg, &WordHeuristic)?;
    write_json(&args.out, &run)
}

fn sweep(args: SweepArgs, file: &config::FileConfig) -> Result<(), CliError> {
    if let Some(r) = args.ratios.iter().find(|&&r| r > 100) {
        return Err(CliError::Usage(format!("noise ratio {r} outside 0..=100")));
    }
    let corpus = load(&args.corpus)?;
    let pool = load_demos(&args.prompt.demos)?;
    let client = build_client(&args.llm, file)?;
    let cfg = eval_config(args.mode, &args.prompt, &args.llm, args.dataset.as_deref(), &args.corpus.corpus, file)?;
    let report: SweepReport = eval::sweep_noise(&corpus, &pool, &client, &cfg, &args.ratios, &WordHeuristic)?;
    write_json(&args.out, &report)
}

fn stats(args: StatsArgs) -> Result<(), CliError> {
    let stats = match (&args.curated, args.corpus.as_ref().and_then(|c| c.corpus.as_ref().map(|p| (p, c.format)))) {
        (Some(path), _) => {
            let (corpus, chains): (Vec<QaInstance>, Vec<AttributionChain>) = read_jsonl::<CuratedRecord>(path)?
                .into_iter()
                .map(CuratedRecord::into_pair)
                .unzip();
            corpus_stats(&corpus, Some(&chains)).map_err(data)?
        }
        (None, Some((path, format))) => {
            let corpus = load_corpus(path, format).map_err(|e| data(format!("{}: {e}", path.display())))?;
            corpus_stats(&corpus, None).map_err(data)?
        }
        (None, None) => return Err(CliError::Usage("stats needs --corpus or --curated".into())),
    };
    write_json(&args.out, &stats)
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let curation: Option<CurationReport> = args.curation.as_deref().map(read_json).transpose()?;
    let stats = args.stats.as_deref().map(read_json).transpose()?;
    let runs: Vec<EvalRun> = args.evals.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    let sweeps: Vec<SweepReport> = args.sweeps.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    let permutation = PermutationConfig {
        permutations: args.permutations,
        seed: args.permutation_seed,
    };
    let report = build_report(curation.as_ref(), stats.as_ref(), &runs, &sweeps, &permutation);
    let files = render_files(&report).map_err(data)?;
    for (name, content) in files {
        write_atomic(&args.out_dir.join(name), content.as_bytes())?;
    }
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Transport(e.to_string()))
}

fn serve_review(args: ServeArgs) -> Result<(), CliError> {
    let records: Vec<CuratedRecord> = read_jsonl(&args.curated)?;
    let log = AnnotationLog::open(&args.annotations).map_err(data)?;
    let store = Arc::new(ReviewStore::new(records, log).map_err(data)?);
    eprintln!("serving {} samples on http://{}", store.len(), args.addr);
    runtime()?
        .block_on(attrchain_server::serve(args.addr, store, args.static_dir))
        .map_err(|e| CliError::Transport(e.to_string()))
}

fn review_summary(args: ReviewSummaryArgs) -> Result<(), CliError> {
    let client = attrchain_client::ReviewClient::new(&args.url).map_err(|e| CliError::Usage(e.to_string()))?;
    let summary = runtime()?.block_on(client.summary()).map_err(|e| match e {
        attrchain_client::ClientError::Api { .. } => data(e),
        other => CliError::Transport(other.to_string()),
    })?;
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &summary).map_err(data)?;
    writeln!(out).map_err(data)
}
