//! `dbroute` command line: one subcommand per pipeline step. Flags may
//! also come from a TOML file given with `--config`; flags win.

pub mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dbroute::baseline::{index_tables, DEFAULT_B, DEFAULT_K1, DEFAULT_TOP};
use dbroute::catalog::{load_catalog, profile_values, CatalogError, DEFAULT_MAX_DISTINCT};
use dbroute::eval::{
    evaluate_routing, render_reports, tune_bm25, Bm25Method, Bm25Tuning, EvalOptions, RouterMethod,
    RoutingReport, TUNE_B_GRID, TUNE_K1_GRID,
};
use dbroute::graph::{build_graph, SchemaGraph, DEFAULT_JOIN_THRESHOLD};
use dbroute::protocol::{serve_stub, Channel, StubMode};
use dbroute::router::{
    fit_scorer, DecodeConfig, FitParams, NaiveBayesModel, NaiveBayesScorer, ProtocolScorer, Scorer, SchemaRouter,
};
use dbroute::sqlparse::{adapt_dataset, read_dataset, AdaptStats};
use dbroute::synth::{
    read_instances, synthesize_corpus, write_instances, CorpusConfig, ExternalQuestioner, Instance, Lexicon,
    Questioner, TemplateQuestioner, DEFAULT_MAX_TABLES, DEFAULT_SYNONYM_RATE,
};
use dbroute::vocab::Vocabulary;
use dbroute::SchemaCatalog;
use serde::Serialize;
use service::{AppState, Engine};
use sqlgen::ex::{evaluate_ex, Bm25Source, CandidateSource, ExOptions, OracleSource, RouterSource};
use sqlgen::llm::{ChatConfig, ChatModel, HttpChatModel, LlmError};
use sqlgen::prompt::{PromptStrategy, StrategyKind};
use thiserror::Error;
use tracing::{info, warn};

use crate::config::FileConfig;

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_PORT: u16 = 8080;

/// Exit code 1: bad flags or invalid input. Exit code 2: reading or writing failed.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Invalid(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<dbroute::synth::SynthError> for CliError {
    fn from(e: dbroute::synth::SynthError) -> Self {
        match e {
            dbroute::synth::SynthError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<dbroute::protocol::ProtocolError> for CliError {
    fn from(e: dbroute::protocol::ProtocolError) -> Self {
        match e {
            dbroute::protocol::ProtocolError::Io(_) | dbroute::protocol::ProtocolError::Closed => {
                CliError::Io(e.to_string())
            }
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "dbroute", version, about = "Schema routing over many databases")]
pub struct Cli {
    /// TOML file whose keys mirror the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel steps.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the schema graph and write it in text form.
    BuildGraph {
        #[command(flatten)]
        catalog: CatalogArgs,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize a (question, schema) training corpus.
    Synthesize {
        #[command(flatten)]
        catalog: CatalogArgs,
        /// Number of instances to generate.
        #[arg(long)]
        n: Option<usize>,
        /// Largest schema, in tables.
        #[arg(long)]
        max_tables: Option<usize>,
        /// Probability of replacing a schema word with a synonym.
        #[arg(long)]
        synonym_rate: Option<f64>,
        /// Synonym file: one `word<TAB>synonym` pair per line.
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// External questioner program speaking the line protocol.
        #[arg(long)]
        questioner_cmd: Option<String>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the statistical scorer on a corpus.
    Fit {
        /// Training corpus (JSON lines).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Additive smoothing of word counts.
        #[arg(long)]
        alpha: Option<f64>,
        /// Additive smoothing of the schema prior.
        #[arg(long)]
        beta: Option<f64>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Route one question to candidate schemata.
    Route {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        /// Natural-language question.
        #[arg(long)]
        question: String,
        /// Number of candidates to report.
        #[arg(long)]
        k: Option<usize>,
        /// Print JSON instead of a listing.
        #[arg(long)]
        json: bool,
    },
    /// Recall@k and mAP of a routing method on a dataset.
    EvalRouting {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        /// Routing method to evaluate.
        #[arg(long, value_enum)]
        method: Method,
        /// Routing instances as JSON lines.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// BM25 term-frequency saturation.
        #[arg(long)]
        k1: Option<f64>,
        /// BM25 length normalization.
        #[arg(long)]
        b: Option<f64>,
        /// JSON report destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the BM25 baseline, optionally grid-searching k1 and b on a corpus first.
    BaselineBm25 {
        #[command(flatten)]
        catalog: CatalogArgs,
        /// Routing instances as JSON lines.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// BM25 term-frequency saturation.
        #[arg(long)]
        k1: Option<f64>,
        /// BM25 length normalization.
        #[arg(long)]
        b: Option<f64>,
        /// Grid-search k1 and b on the corpus before evaluating.
        #[arg(long)]
        tune: bool,
        /// Corpus used for tuning.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn benchmark records (question, SQL, db_id) into routing instances.
    AdaptDataset {
        #[command(flatten)]
        catalog: CatalogArgs,
        /// Benchmark records as a JSON array.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execution accuracy of generated SQL.
    EvalEx {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        #[command(flatten)]
        llm: LlmArgs,
        /// Routing instances as JSON lines.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Directory holding `<db>/<db>.sqlite`.
        #[arg(long)]
        db_dir: Option<PathBuf>,
        /// Where candidate schemata come from.
        #[arg(long, value_enum, default_value_t = Source::Router)]
        source: Source,
        /// best, multi or cot.
        #[arg(long)]
        strategy: Option<String>,
        /// Candidates shown to the prompt or the simulated user.
        #[arg(long)]
        k: Option<usize>,
        /// Simulate a user who picks the gold schema when it is among the candidates.
        #[arg(long)]
        human_in_the_loop: bool,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// HTTP API for the console.
    Serve {
        #[command(flatten)]
        catalog: CatalogArgs,
        #[command(flatten)]
        scorer: ScorerArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        #[command(flatten)]
        llm: LlmArgs,
        /// Bind address (default 127.0.0.1).
        #[arg(long)]
        host: Option<String>,
        /// Bind port.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Built-in scorer stub on stdin/stdout, for protocol conformance checks.
    ScorerStub {
        /// Score rule used by the stub.
        #[arg(long, value_enum, default_value_t = StubKind::Uniform)]
        mode: StubKind,
        /// Refuse handshakes with another hash.
        #[arg(long)]
        vocab_hash: Option<String>,
        /// Derive the expected hash from this catalog.
        #[arg(long)]
        catalog: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CatalogArgs {
    /// Catalog in the Spider `tables.json` layout.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Pre-built graph; rebuilt from the catalog when absent.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Database files for value profiling (`<db>/<db>.sqlite`).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Jaccard threshold for joinable columns.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ScorerArgs {
    /// Fitted statistical model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// External scorer program.
    #[arg(long)]
    pub scorer_cmd: Option<String>,
    /// Argument for the scorer program; repeatable.
    #[arg(long = "scorer-arg", allow_hyphen_values = true)]
    pub scorer_args: Vec<String>,
    /// External scorer listening on TCP.
    #[arg(long)]
    pub scorer_addr: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// Beam width.
    #[arg(long)]
    pub beams: Option<usize>,
    /// Number of diverse beam groups.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Diversity penalty between groups.
    #[arg(long)]
    pub diversity: Option<f64>,
    /// Largest schema, in tables.
    #[arg(long)]
    pub max_tables: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct LlmArgs {
    /// OpenAI-compatible chat completions base URL.
    #[arg(long)]
    pub llm_endpoint: Option<String>,
    /// Chat model name.
    #[arg(long)]
    pub llm_model: Option<String>,
    /// Sampling temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Router,
    Bm25,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Source {
    Oracle,
    Router,
    Bm25,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StubKind {
    Uniform,
    Echo,
}

/// Parsed flags merged with the configuration file.
struct Ctx {
    file: FileConfig,
    seed: u64,
    jobs: Option<usize>,
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing required flag --{flag}")))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(io::stderr)
        .try_init();
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        jobs: cli.jobs.or(file.jobs),
        file,
    };
    if let Some(j) = ctx.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        // Fails only if a pool already exists, as in repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    match cli.command {
        Command::BuildGraph { catalog, out } => cmd_build_graph(&ctx, &catalog, out),
        Command::Synthesize {
            catalog,
            n,
            max_tables,
            synonym_rate,
            lexicon,
            questioner_cmd,
            out,
        } => cmd_synthesize(&ctx, &catalog, n, max_tables, synonym_rate, lexicon, questioner_cmd, out),
        Command::Fit { corpus, alpha, beta, out } => cmd_fit(&ctx, corpus, alpha, beta, out),
        Command::Route {
            catalog,
            scorer,
            decode,
            question,
            k,
            json,
        } => cmd_route(&ctx, &catalog, &scorer, &decode, &question, k, json),
        Command::EvalRouting {
            catalog,
            scorer,
            decode,
            method,
            dataset,
            k1,
            b,
            out,
        } => cmd_eval_routing(&ctx, &catalog, &scorer, &decode, method, dataset, k1, b, out),
        Command::BaselineBm25 {
            catalog,
            dataset,
            k1,
            b,
            tune,
            corpus,
            out,
        } => cmd_baseline(&ctx, &catalog, dataset, k1, b, tune, corpus, out),
        Command::AdaptDataset { catalog, dataset, out } => cmd_adapt(&ctx, &catalog, dataset, out),
        Command::EvalEx {
            catalog,
            scorer,
            decode,
            llm,
            dataset,
            db_dir,
            source,
            strategy,
            k,
            human_in_the_loop,
            out,
        } => cmd_eval_ex(
            &ctx,
            &catalog,
            &scorer,
            &decode,
            &llm,
            ExFlags {
                dataset,
                db_dir,
                source,
                strategy,
                k,
                human_in_the_loop,
                out,
            },
        ),
        Command::Serve {
            catalog,
            scorer,
            decode,
            llm,
            host,
            port,
        } => cmd_serve(&ctx, catalog, scorer, decode, llm, host, port),
        Command::ScorerStub { mode, vocab_hash, catalog } => cmd_scorer_stub(&ctx, mode, vocab_hash, catalog),
    }
}

// ------------------------------------------------------------------ loading

fn load_catalog_from(ctx: &Ctx, args: &CatalogArgs) -> Result<SchemaCatalog, CliError> {
    let path = required(args.catalog.clone().or(ctx.file.catalog.clone()), "catalog")?;
    let catalog = load_catalog(&path)?;
    Ok(match args.data_dir.clone().or(ctx.file.data_dir.clone()) {
        Some(dir) => profile_values(catalog, Some(&dir), DEFAULT_MAX_DISTINCT),
        None => catalog,
    })
}

fn load_graph_for(ctx: &Ctx, args: &CatalogArgs, catalog: &SchemaCatalog) -> Result<SchemaGraph, CliError> {
    if let Some(path) = args.graph.clone().or(ctx.file.graph.clone()) {
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        return SchemaGraph::from_text(&text).map_err(invalid);
    }
    let threshold = args.threshold.or(ctx.file.threshold).unwrap_or(DEFAULT_JOIN_THRESHOLD);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("--threshold must lie in [0, 1], got {threshold}")));
    }
    Ok(build_graph(catalog, threshold))
}

fn read_corpus(path: &Path) -> Result<Vec<Instance>, CliError> {
    let f = File::open(path).map_err(io_err(path))?;
    let instances = read_instances(BufReader::new(f))?;
    if instances.is_empty() {
        return Err(CliError::Invalid(format!("{}: no records", path.display())));
    }
    Ok(instances)
}

fn decode_config(ctx: &Ctx, args: &DecodeArgs) -> Result<DecodeConfig, CliError> {
    let d = DecodeConfig::default();
    let f = &ctx.file;
    let config = DecodeConfig {
        beams: args.beams.or(f.beams).unwrap_or(d.beams),
        groups: args.groups.or(f.groups).unwrap_or(d.groups),
        diversity: args.diversity.or(f.diversity).unwrap_or(d.diversity),
        max_tables: args.max_tables.or(f.max_tables).unwrap_or(d.max_tables),
        max_steps: d.max_steps,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn build_scorer(
    ctx: &Ctx,
    args: &ScorerArgs,
    graph: &SchemaGraph,
    vocab: &Vocabulary,
) -> Result<Box<dyn Scorer>, CliError> {
    let f = &ctx.file;
    if let Some(addr) = args.scorer_addr.clone().or(f.scorer_addr.clone()) {
        let ch = Channel::connect_tcp(&addr)?;
        return Ok(Box::new(ProtocolScorer::connect(ch, vocab.clone()).map_err(invalid)?));
    }
    if let Some(cmd) = args.scorer_cmd.clone().or(f.scorer_cmd.clone()) {
        let cmd_args = if args.scorer_args.is_empty() {
            f.scorer_args.clone().unwrap_or_default()
        } else {
            args.scorer_args.clone()
        };
        let ch = Channel::spawn(&cmd, &cmd_args)?;
        return Ok(Box::new(ProtocolScorer::connect(ch, vocab.clone()).map_err(invalid)?));
    }
    let path = args
        .model
        .clone()
        .or(f.model.clone())
        .ok_or_else(|| CliError::Usage("one of --model, --scorer-cmd or --scorer-addr is required".into()))?;
    let f = File::open(&path).map_err(io_err(&path))?;
    let model: NaiveBayesModel =
        serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(Box::new(NaiveBayesScorer::new(model, vocab, graph)))
}

struct Routed {
    catalog: SchemaCatalog,
    router: SchemaRouter,
    scorer: Box<dyn Scorer>,
}

fn load_router(ctx: &Ctx, cat: &CatalogArgs, scorer: &ScorerArgs, decode: &DecodeArgs) -> Result<Routed, CliError> {
    let config = decode_config(ctx, decode)?;
    let catalog = load_catalog_from(ctx, cat)?;
    let graph = load_graph_for(ctx, cat, &catalog)?;
    let vocab = Vocabulary::from_catalog(&catalog);
    let scorer = build_scorer(ctx, scorer, &graph, &vocab)?;
    let router = SchemaRouter::new(graph, vocab, config).map_err(invalid)?;
    Ok(Routed { catalog, router, scorer })
}

// ------------------------------------------------------------------ output

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(io_err(p)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

// ------------------------------------------------------------------ commands

fn cmd_build_graph(ctx: &Ctx, args: &CatalogArgs, out: Option<PathBuf>) -> Result<(), CliError> {
    let catalog = load_catalog_from(ctx, args)?;
    let graph = load_graph_for(ctx, args, &catalog)?;
    let text = graph.to_text().map_err(invalid)?;
    info!(databases = graph.database_count(), edges = graph.edges().len(), "graph built");
    write_output(out.as_deref(), text.as_bytes())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synthesize(
    ctx: &Ctx,
    args: &CatalogArgs,
    n: Option<usize>,
    max_tables: Option<usize>,
    synonym_rate: Option<f64>,
    lexicon: Option<PathBuf>,
    questioner_cmd: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let f = &ctx.file;
    let n = required(n.or(f.n), "n")?;
    let max_tables = max_tables.or(f.max_tables).unwrap_or(DEFAULT_MAX_TABLES);
    let rate = synonym_rate.or(f.synonym_rate).unwrap_or(DEFAULT_SYNONYM_RATE);
    if !(0.0..=1.0).contains(&rate) {
        return Err(CliError::Usage(format!("--synonym-rate must lie in [0, 1], got {rate}")));
    }
    let catalog = load_catalog_from(ctx, args)?;
    let graph = load_graph_for(ctx, args, &catalog)?;
    let questioner: Box<dyn Questioner> = match questioner_cmd.or(f.questioner_cmd.clone()) {
        Some(cmd) => Box::new(ExternalQuestioner::new(Channel::spawn(&cmd, &[])?)),
        None => {
            let lex = match lexicon.or(f.lexicon.clone()) {
                Some(p) => Lexicon::load(&p).map_err(io_err(&p))?,
                None => Lexicon::builtin(),
            };
            Box::new(TemplateQuestioner::new(&catalog, lex, rate))
        }
    };
    let config = CorpusConfig {
        n,
        max_tables,
        seed: ctx.seed,
    };
    let corpus = synthesize_corpus(&graph, &catalog, config, questioner.as_ref())?;
    info!(records = corpus.len(), "corpus synthesized");
    match out {
        Some(p) => {
            let file = File::create(&p).map_err(io_err(&p))?;
            write_instances(&corpus, BufWriter::new(file)).map_err(io_err(&p))
        }
        None => write_instances(&corpus, io::stdout().lock()).map_err(|e| CliError::Io(format!("stdout: {e}"))),
    }
}

fn cmd_fit(
    ctx: &Ctx,
    corpus: Option<PathBuf>,
    alpha: Option<f64>,
    beta: Option<f64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let f = &ctx.file;
    let path = required(corpus.or(f.corpus.clone()), "corpus")?;
    let d = FitParams::default();
    let params = FitParams {
        alpha: alpha.or(f.alpha).unwrap_or(d.alpha),
        beta: beta.or(f.beta).unwrap_or(d.beta),
    };
    let corpus = read_corpus(&path)?;
    let model = fit_scorer(&corpus, params).map_err(invalid)?;
    info!(instances = model.instances, terms = model.term_vocabulary, "scorer fitted");
    write_output(out.as_deref(), &to_json(&model))
}

#[derive(Serialize)]
struct RouteOutput<'a> {
    question: &'a str,
    candidates: &'a [dbroute::router::RoutingCandidate],
    /// Wall-clock values; excluded from reproducibility comparisons.
    metadata: RouteMetadata,
}

#[derive(Serialize)]
struct RouteMetadata {
    latency_ms: f64,
}

fn cmd_route(
    ctx: &Ctx,
    cat: &CatalogArgs,
    scorer: &ScorerArgs,
    decode: &DecodeArgs,
    question: &str,
    k: Option<usize>,
    json: bool,
) -> Result<(), CliError> {
    if question.trim().is_empty() {
        return Err(CliError::Usage("--question must not be empty".into()));
    }
    let k = k.or(ctx.file.k).unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let r = load_router(ctx, cat, scorer, decode)?;
    let routing = r.router.route(question, k, r.scorer.as_ref()).map_err(invalid)?;
    let bytes = if json {
        to_json(&RouteOutput {
            question,
            candidates: &routing.candidates,
            metadata: RouteMetadata {
                latency_ms: routing.latency.as_secs_f64() * 1e3,
            },
        })
    } else {
        let mut s = String::new();
        for (i, c) in routing.candidates.iter().enumerate() {
            s.push_str(&format!("{}. {} ({:.4})\n", i + 1, c.database, c.score));
            for t in &c.tables {
                s.push_str(&format!("     {} ({:.4})\n", t.name, t.score));
            }
        }
        s.into_bytes()
    };
    write_output(None, &bytes)
}

fn bm25_params(ctx: &Ctx, k1: Option<f64>, b: Option<f64>) -> Result<(f64, f64), CliError> {
    let k1 = k1.or(ctx.file.k1).unwrap_or(DEFAULT_K1);
    let b = b.or(ctx.file.b).unwrap_or(DEFAULT_B);
    if !(k1 > 0.0) || !(0.0..=1.0).contains(&b) {
        return Err(CliError::Usage(format!("need k1 > 0 and b in [0, 1], got k1={k1} b={b}")));
    }
    Ok((k1, b))
}

fn report_out(report: &impl Serialize, text: String, out: Option<PathBuf>) -> Result<(), CliError> {
    write_output(None, text.as_bytes())?;
    match out {
        Some(p) => write_output(Some(&p), &to_json(report)),
        None => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval_routing(
    ctx: &Ctx,
    cat: &CatalogArgs,
    scorer: &ScorerArgs,
    decode: &DecodeArgs,
    method: Method,
    dataset: Option<PathBuf>,
    k1: Option<f64>,
    b: Option<f64>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let path = required(dataset.or(ctx.file.dataset.clone()), "dataset")?;
    let dataset = read_corpus(&path)?;
    let opts = EvalOptions::default();
    let report = match method {
        Method::Router => {
            let r = load_router(ctx, cat, scorer, decode)?;
            let m = RouterMethod {
                router: &r.router,
                scorer: r.scorer.as_ref(),
                label: "router".into(),
            };
            evaluate_routing(&m, &dataset, Some(&r.catalog), &opts).map_err(invalid)?
        }
        Method::Bm25 => {
            let (k1, b) = bm25_params(ctx, k1, b)?;
            let catalog = load_catalog_from(ctx, cat)?;
            let m = Bm25Method {
                index: index_tables(&catalog, k1, b),
                top: DEFAULT_TOP,
            };
            evaluate_routing(&m, &dataset, Some(&catalog), &opts).map_err(invalid)?
        }
    };
    report_out(&report, render_reports(std::slice::from_ref(&report)), out)
}

#[derive(Serialize)]
struct BaselineOutput {
    k1: f64,
    b: f64,
    tuning: Option<Bm25Tuning>,
    report: RoutingReport,
}

#[allow(clippy::too_many_arguments)]
fn cmd_baseline(
    ctx: &Ctx,
    cat: &CatalogArgs,
    dataset: Option<PathBuf>,
    k1: Option<f64>,
    b: Option<f64>,
    tune: bool,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let path = required(dataset.or(ctx.file.dataset.clone()), "dataset")?;
    let dataset = read_corpus(&path)?;
    let catalog = load_catalog_from(ctx, cat)?;
    let (mut k1, mut b) = bm25_params(ctx, k1, b)?;
    let tuning = if tune {
        let corpus_path = required(corpus.or(ctx.file.corpus.clone()), "corpus")?;
        let corpus = read_corpus(&corpus_path)?;
        let t = tune_bm25(&catalog, &corpus, &TUNE_K1_GRID, &TUNE_B_GRID).map_err(invalid)?;
        info!(k1 = t.k1, b = t.b, map = t.table_map, "bm25 tuned");
        (k1, b) = (t.k1, t.b);
        Some(t)
    } else {
        None
    };
    let method = Bm25Method {
        index: index_tables(&catalog, k1, b),
        top: DEFAULT_TOP,
    };
    let mut report = evaluate_routing(&method, &dataset, Some(&catalog), &EvalOptions::default()).map_err(invalid)?;
    if tuning.is_some() {
        report.method = "bm25-tuned".into();
    }
    let text = format!("k1={k1} b={b}\n{}", render_reports(std::slice::from_ref(&report)));
    report_out(&BaselineOutput { k1, b, tuning, report }, text, out)
}

#[derive(Serialize)]
struct AdaptOutput {
    stats: AdaptStats,
    parse_rate: f64,
}

fn cmd_adapt(ctx: &Ctx, cat: &CatalogArgs, dataset: Option<PathBuf>, out: Option<PathBuf>) -> Result<(), CliError> {
    let path = required(dataset.or(ctx.file.dataset.clone()), "dataset")?;
    let catalog = load_catalog_from(ctx, cat)?;
    let records = read_dataset(&path).map_err(|e| match e {
        dbroute::sqlparse::DatasetError::Io(_) => CliError::Io(format!("{}: {e}", path.display())),
        _ => CliError::Invalid(format!("{}: {e}", path.display())),
    })?;
    let (instances, stats) = adapt_dataset(&records, &catalog);
    let summary = to_json(&AdaptOutput {
        stats,
        parse_rate: stats.parse_rate(),
    });
    match out {
        Some(p) => {
            let file = File::create(&p).map_err(io_err(&p))?;
            write_instances(&instances, BufWriter::new(file)).map_err(io_err(&p))?;
            write_output(None, &summary)
        }
        None => {
            write_instances(&instances, io::stdout().lock()).map_err(|e| CliError::Io(format!("stdout: {e}")))?;
            eprint!("{}", String::from_utf8_lossy(&summary));
            Ok(())
        }
    }
}

fn chat_config(ctx: &Ctx, args: &LlmArgs) -> ChatConfig {
    let mut c = ctx.file.llm.clone().unwrap_or_default();
    if let Some(e) = &args.llm_endpoint {
        c.endpoint = e.clone();
    }
    let mut c = c.with_env();
    if let Some(m) = &args.llm_model {
        c.model = m.clone();
    }
    if let Some(t) = args.temperature {
        c.temperature = t;
    }
    c
}

struct ExFlags {
    dataset: Option<PathBuf>,
    db_dir: Option<PathBuf>,
    source: Source,
    strategy: Option<String>,
    k: Option<usize>,
    human_in_the_loop: bool,
    out: Option<PathBuf>,
}

fn cmd_eval_ex(
    ctx: &Ctx,
    cat: &CatalogArgs,
    scorer: &ScorerArgs,
    decode: &DecodeArgs,
    llm: &LlmArgs,
    flags: ExFlags,
) -> Result<(), CliError> {
    let f = &ctx.file;
    let path = required(flags.dataset.or(f.dataset.clone()), "dataset")?;
    let db_dir = required(flags.db_dir.or(f.db_dir.clone()), "db-dir")?;
    let kind: StrategyKind = flags
        .strategy
        .or(f.strategy.clone())
        .map(|s| s.parse().map_err(CliError::Usage))
        .transpose()?
        .unwrap_or(StrategyKind::BestSchema);
    let k = flags.k.or(f.k).unwrap_or(DEFAULT_K);
    let strategy = PromptStrategy::new(kind, k).map_err(|e| CliError::Usage(e.to_string()))?;
    let model = HttpChatModel::new(chat_config(ctx, llm)).map_err(|e| match e {
        LlmError::Unconfigured => {
            CliError::Usage("no chat endpoint: set --llm-endpoint, [llm] endpoint or DBROUTE_LLM_ENDPOINT".into())
        }
        other => invalid(other),
    })?;
    let dataset = read_corpus(&path)?;
    let mut opts = ExOptions::new(strategy, db_dir);
    opts.human_in_the_loop = flags.human_in_the_loop;
    if let Some(j) = ctx.jobs {
        opts.jobs = j;
    }
    let report = match flags.source {
        Source::Oracle => {
            let catalog = load_catalog_from(ctx, cat)?;
            evaluate_ex(&dataset, &OracleSource, &model, &catalog, &opts)
        }
        Source::Bm25 => {
            let (k1, b) = bm25_params(ctx, None, None)?;
            let catalog = load_catalog_from(ctx, cat)?;
            let src = Bm25Source {
                index: index_tables(&catalog, k1, b),
                top: DEFAULT_TOP,
                tables_per_database: DEFAULT_MAX_TABLES,
            };
            evaluate_ex(&dataset, &src, &model, &catalog, &opts)
        }
        Source::Router => {
            let r = load_router(ctx, cat, scorer, decode)?;
            let src = RouterSource {
                router: &r.router,
                scorer: r.scorer.as_ref(),
            };
            evaluate_ex(&dataset, &src as &dyn CandidateSource, &model, &r.catalog, &opts)
        }
    };
    let excluded = report.instances - report.valid;
    if excluded > 0 {
        warn!(excluded, "instances excluded because the gold query or database failed");
    }
    let text = format!(
        "EX {:.2}% ({} / {} valid, {} instances), prompt tokens {}, completion tokens {}\n",
        report.ex,
        report.correct,
        report.valid,
        report.instances,
        report.usage.prompt_tokens,
        report.usage.completion_tokens
    );
    report_out(&report, text, flags.out)
}

fn cmd_serve(
    ctx: &Ctx,
    cat: CatalogArgs,
    scorer: ScorerArgs,
    decode: DecodeArgs,
    llm: LlmArgs,
    host: Option<String>,
    port: Option<u16>,
) -> Result<(), CliError> {
    let host = host.or(ctx.file.host.clone()).unwrap_or_else(|| "127.0.0.1".into());
    let port = port.or(ctx.file.port).unwrap_or(DEFAULT_PORT);
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
    // Flags are checked before binding; the expensive load runs while the
    // server already answers 503.
    decode_config(ctx, &decode)?;
    let chat = chat_config(ctx, &llm);
    let model: Option<Arc<dyn ChatModel>> = if chat.is_configured() {
        Some(Arc::new(HttpChatModel::new(chat).map_err(invalid)?))
    } else {
        warn!("no chat endpoint configured; /generate will answer 424");
        None
    };
    let state = AppState::pending();
    let loader = {
        let state = state.clone();
        let ctx = Ctx {
            file: ctx.file.clone(),
            seed: ctx.seed,
            jobs: ctx.jobs,
        };
        move || match load_router(&ctx, &cat, &scorer, &decode) {
            Ok(r) => {
                info!(databases = r.catalog.databases().len(), "router ready");
                state.install(Engine {
                    router: r.router,
                    scorer: r.scorer,
                    catalog: r.catalog,
                    model,
                });
            }
            Err(e) => {
                eprintln!("error: {e}");
                std::process::exit(e.exit_code());
            }
        }
    };
    std::thread::spawn(loader);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    runtime
        .block_on(service::serve(addr, state))
        .map_err(|e| CliError::Io(format!("{addr}: {e}")))
}

fn cmd_scorer_stub(
    ctx: &Ctx,
    mode: StubKind,
    vocab_hash: Option<String>,
    catalog: Option<PathBuf>,
) -> Result<(), CliError> {
    let hash = match (vocab_hash, catalog.or(ctx.file.catalog.clone())) {
        (Some(h), _) => Some(h),
        (None, Some(p)) => Some(Vocabulary::from_catalog(&load_catalog(&p)?).hash()),
        (None, None) => None,
    };
    let mode = match mode {
        StubKind::Uniform => StubMode::Uniform,
        StubKind::Echo => StubMode::Echo,
    };
    let stats = serve_stub(io::stdin().lock(), io::stdout().lock(), mode, hash.as_deref())
        .map_err(|e| CliError::Io(e.to_string()))?;
    info!(requests = stats.requests, errors = stats.errors, "stub finished");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("dbroute").chain(args.iter().copied()))
    }

    #[test]
    fn command_definition_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_anywhere() {
        let c = parse(&["synthesize", "--catalog", "t.json", "--n", "10", "--seed", "7", "--jobs", "2"]).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.jobs, Some(2));
        assert!(matches!(c.command, Command::Synthesize { n: Some(10), .. }));
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        assert!(parse(&["fit", "--bogus"]).is_err());
        assert_eq!(run(["dbroute", "fit", "--bogus"]), 1);
        assert_eq!(run(["dbroute", "--help"]), 0);
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Invalid("x".into()).exit_code(), 1);
        assert_eq!(CliError::Io("x".into()).exit_code(), 2);
        assert!(matches!(required::<u8>(None, "n"), Err(CliError::Usage(m)) if m.contains("--n")));
    }

    #[test]
    fn flags_override_config() {
        let ctx = Ctx {
            file: FileConfig {
                beams: Some(4),
                groups: Some(2),
                ..FileConfig::default()
            },
            seed: 0,
            jobs: None,
        };
        let flags = DecodeArgs {
            beams: Some(6),
            groups: None,
            diversity: None,
            max_tables: None,
        };
        let c = decode_config(&ctx, &flags).unwrap();
        assert_eq!((c.beams, c.groups), (6, 2));
    }
}
