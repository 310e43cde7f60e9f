//! Generation for one question under a prompt strategy, and the
//! execution-accuracy harness over a dataset.

use std::path::{Path, PathBuf};
use std::time::Duration;

use dbroute::baseline::{bm25_retrieve, Bm25Index};
use dbroute::router::{RoutingCandidate, Scorer, SchemaRouter, TableScore};
use dbroute::synth::Instance;
use dbroute::SchemaCatalog;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::exec::{execution_match_with, ExecError, STATEMENT_TIMEOUT};
use crate::llm::{ChatMessage, ChatModel, LlmError, Usage};
use crate::prompt::{
    build_best_prompt, build_cot_prompts, build_multi_prompt, complete_sql, PromptError, PromptStrategy, Selection,
    SelectionFlag, StrategyKind,
};

pub const DEFAULT_JOBS: usize = 4;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Everything sent and received for one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub prompts: Vec<String>,
    pub replies: Vec<String>,
    pub sql: String,
    pub usage: Usage,
    /// Candidate chosen in the selection turn, when there was one.
    pub selection: Option<Selection>,
}

/// Builds the prompt(s) for `strategy`, calls the model and extracts SQL.
/// Only the first `strategy.candidates` candidates are used.
pub fn generate(
    question: &str,
    candidates: &[RoutingCandidate],
    strategy: PromptStrategy,
    model: &dyn ChatModel,
    catalog: &SchemaCatalog,
) -> Result<Generation, GenerateError> {
    let shown = &candidates[..strategy.candidates.min(candidates.len())];
    let mut g = Generation::default();
    let ask = |g: &mut Generation, messages: &[ChatMessage]| -> Result<String, GenerateError> {
        let c = model.complete(messages)?;
        g.usage += c.usage;
        g.replies.push(c.text.clone());
        Ok(c.text)
    };
    let final_prompt = match strategy.kind {
        StrategyKind::BestSchema => build_best_prompt(question, shown.first().ok_or(PromptError::NoCandidate)?, catalog)?,
        StrategyKind::MultiSchema => build_multi_prompt(question, shown, catalog)?,
        StrategyKind::MultiSchemaCot => {
            let cot = build_cot_prompts(question, shown, catalog)?;
            g.prompts.push(cot.turn1.clone());
            let reply = ask(&mut g, &[ChatMessage::user(cot.turn1.clone())])?;
            let turn2 = cot.turn2(&reply, catalog)?;
            if turn2.selection.flag != SelectionFlag::Exact {
                warn!(reply = %reply, flag = ?turn2.selection.flag, "selection reply not in [id] form");
            }
            g.selection = Some(turn2.selection);
            turn2.prompt
        }
    };
    g.prompts.push(final_prompt.clone());
    let reply = ask(&mut g, &[ChatMessage::user(final_prompt)])?;
    g.sql = complete_sql(&reply);
    Ok(g)
}

/// Where candidate schemata come from during evaluation.
pub trait CandidateSource: Sync {
    fn name(&self) -> &str;
    fn candidates(&self, instance: &Instance, k: usize) -> Result<Vec<RoutingCandidate>, String>;
}

/// The gold schema as the only candidate.
pub struct OracleSource;

impl CandidateSource for OracleSource {
    fn name(&self) -> &str {
        "oracle"
    }

    fn candidates(&self, instance: &Instance, _k: usize) -> Result<Vec<RoutingCandidate>, String> {
        Ok(vec![RoutingCandidate {
            database: instance.database.clone(),
            tables: instance
                .tables
                .iter()
                .map(|t| TableScore {
                    name: t.clone(),
                    score: 0.0,
                })
                .collect(),
            score: 0.0,
        }])
    }
}

pub struct RouterSource<'a> {
    pub router: &'a SchemaRouter,
    pub scorer: &'a dyn Scorer,
}

impl CandidateSource for RouterSource<'_> {
    fn name(&self) -> &str {
        "router"
    }

    fn candidates(&self, instance: &Instance, k: usize) -> Result<Vec<RoutingCandidate>, String> {
        self.router
            .route(&instance.question, k, self.scorer)
            .map(|r| r.candidates)
            .map_err(|e| e.to_string())
    }
}

/// Retrieved tables grouped by database in order of first retrieval.
pub struct Bm25Source {
    pub index: Bm25Index,
    pub top: usize,
    /// Tables kept per database candidate.
    pub tables_per_database: usize,
}

impl CandidateSource for Bm25Source {
    fn name(&self) -> &str {
        "bm25"
    }

    fn candidates(&self, instance: &Instance, k: usize) -> Result<Vec<RoutingCandidate>, String> {
        let mut out: Vec<RoutingCandidate> = Vec::new();
        for (key, score) in bm25_retrieve(&self.index, &instance.question, self.top) {
            match out.iter().position(|c| c.database == key.database) {
                Some(i) if out[i].tables.len() < self.tables_per_database => {
                    out[i].tables.push(TableScore { name: key.table, score })
                }
                Some(_) => {}
                None if out.len() < k => out.push(RoutingCandidate {
                    database: key.database,
                    tables: vec![TableScore { name: key.table, score }],
                    score,
                }),
                None => {}
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExOptions {
    pub strategy: PromptStrategy,
    /// Simulated user picks the gold-database candidate among the shown
    /// ones, then the best-schema prompt is used.
    pub human_in_the_loop: bool,
    pub jobs: usize,
    /// Holds `<db>/<db>.sqlite` per database.
    pub db_dir: PathBuf,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

impl ExOptions {
    pub fn new(strategy: PromptStrategy, db_dir: impl Into<PathBuf>) -> Self {
        Self {
            strategy,
            human_in_the_loop: false,
            jobs: DEFAULT_JOBS,
            db_dir: db_dir.into(),
            timeout: STATEMENT_TIMEOUT,
        }
    }
}

/// Spider layout: `<dir>/<db>/<db>.sqlite`.
pub fn database_file(db_dir: &Path, database: &str) -> PathBuf {
    db_dir.join(database).join(format!("{database}.sqlite"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub question: String,
    pub database: String,
    pub gold_sql: Option<String>,
    #[serde(flatten)]
    pub generation: Generation,
    /// Database of the schema the final prompt used.
    pub prompted_database: Option<String>,
    /// `None` when the instance was excluded.
    pub matched: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExReport {
    pub source: String,
    pub strategy: PromptStrategy,
    pub human_in_the_loop: bool,
    pub instances: usize,
    /// Instances whose gold query executed.
    pub valid: usize,
    pub correct: usize,
    /// Percentage over valid instances.
    pub ex: f64,
    pub usage: Usage,
    pub records: Vec<GenerationRecord>,
}

fn evaluate_one(
    inst: &Instance,
    source: &dyn CandidateSource,
    model: &dyn ChatModel,
    catalog: &SchemaCatalog,
    opts: &ExOptions,
) -> GenerationRecord {
    let mut rec = GenerationRecord {
        question: inst.question.clone(),
        database: inst.database.clone(),
        gold_sql: inst.sql.clone(),
        generation: Generation::default(),
        prompted_database: None,
        matched: None,
        error: None,
    };
    let Some(gold) = inst.sql.as_deref() else {
        rec.error = Some("instance has no gold SQL".into());
        return rec;
    };
    let candidates = match source.candidates(inst, opts.strategy.candidates) {
        Ok(c) => c,
        Err(e) => {
            rec.error = Some(e);
            rec.matched = Some(false);
            return rec;
        }
    };
    let (candidates, strategy) = if opts.human_in_the_loop {
        let shown = &candidates[..opts.strategy.candidates.min(candidates.len())];
        let pick = shown.iter().position(|c| c.database == inst.database);
        let chosen = shown.get(pick.unwrap_or(0)).cloned().into_iter().collect::<Vec<_>>();
        rec.generation.selection = Some(Selection {
            index: pick.unwrap_or(0) + 1,
            flag: if pick.is_some() { SelectionFlag::Exact } else { SelectionFlag::Fallback },
        });
        (chosen, PromptStrategy::best())
    } else {
        (candidates, opts.strategy)
    };
    let human = rec.generation.selection.clone();
    match generate(&inst.question, &candidates, strategy, model, catalog) {
        Ok(g) => {
            rec.prompted_database = match g.selection.as_ref() {
                Some(s) => candidates.get(s.index - 1).map(|c| c.database.clone()),
                None => candidates.first().map(|c| c.database.clone()),
            };
            rec.generation = g;
            if human.is_some() {
                rec.generation.selection = human;
            }
        }
        Err(e) => {
            rec.error = Some(e.to_string());
            rec.matched = Some(false);
            return rec;
        }
    }
    let db_file = database_file(&opts.db_dir, &inst.database);
    match execution_match_with(&rec.generation.sql, gold, &db_file, opts.timeout) {
        Ok(m) => rec.matched = Some(m),
        Err(e @ (ExecError::Gold(_) | ExecError::Open { .. })) => {
            rec.error = Some(e.to_string());
            rec.matched = None;
        }
    }
    rec
}

/// EX over `dataset`. Per-instance failures are recorded, never fatal.
pub fn evaluate_ex(
    dataset: &[Instance],
    source: &dyn CandidateSource,
    model: &dyn ChatModel,
    catalog: &SchemaCatalog,
    opts: &ExOptions,
) -> ExReport {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .expect("thread pool");
    let records: Vec<GenerationRecord> =
        pool.install(|| dataset.par_iter().map(|i| evaluate_one(i, source, model, catalog, opts)).collect());
    let valid = records.iter().filter(|r| r.matched.is_some()).count();
    let correct = records.iter().filter(|r| r.matched == Some(true)).count();
    let mut usage = Usage::default();
    for r in &records {
        usage += r.generation.usage;
    }
    ExReport {
        source: source.name().to_string(),
        strategy: opts.strategy,
        human_in_the_loop: opts.human_in_the_loop,
        instances: records.len(),
        valid,
        correct,
        ex: if valid == 0 { 0.0 } else { 100.0 * correct as f64 / valid as f64 },
        usage,
        records,
    }
}
