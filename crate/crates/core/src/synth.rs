//! Training-data synthesis: random-walk schema sampling over the schema
//! graph and question generation for each sampled schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::catalog::{Database, SchemaCatalog};
use crate::graph::{QuerySchema, SchemaGraph};
use crate::protocol::{Channel, ProtocolError, TableSpec};
use crate::serialize::{dfs_serialize, SerializeError, SerializedSchema};
use crate::vocab::Inventory;

pub const DEFAULT_MAX_TABLES: usize = 4;
pub const DEFAULT_SYNONYM_RATE: f64 = 0.2;
/// Share of instances an external questioner may fail on before the run aborts.
pub const MAX_SKIP_FRACTION: f64 = 0.10;

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("schema graph has no databases")]
    EmptyGraph,
    #[error("corpus size must be at least 1")]
    EmptyCorpus,
    #[error("max_tables must be at least 1")]
    ZeroTables,
    #[error("unknown database `{0}`")]
    UnknownDatabase(String),
    #[error(transparent)]
    Serialize(#[from] SerializeError),
    #[error("questioner failed: {0}")]
    Questioner(String),
    #[error("{skipped} of {total} instances skipped by the questioner; aborting")]
    TooManySkips { skipped: usize, total: usize },
    #[error("corpus line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Derives an independent per-item seed from a run seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(index))
}

/// Random walk from the root: pick a database uniformly, then grow a
/// connected table set one uniformly drawn unvisited neighbour at a time.
pub fn sample_schema<R: Rng + ?Sized>(
    graph: &SchemaGraph,
    max_tables: usize,
    rng: &mut R,
) -> Result<QuerySchema, SynthError> {
    let db = graph.databases().choose(rng).ok_or(SynthError::EmptyGraph)?;
    sample_schema_in(graph, db, max_tables, rng)
}

/// Same walk with the database step fixed.
pub fn sample_schema_in<R: Rng + ?Sized>(
    graph: &SchemaGraph,
    database: &str,
    max_tables: usize,
    rng: &mut R,
) -> Result<QuerySchema, SynthError> {
    if max_tables == 0 {
        return Err(SynthError::ZeroTables);
    }
    let tables: Vec<&str> = graph.tables(database).collect();
    let first = *tables
        .choose(rng)
        .ok_or_else(|| SynthError::UnknownDatabase(database.to_string()))?;
    let target = rng.gen_range(1..=max_tables);
    let mut chosen: Vec<&str> = vec![first];
    while chosen.len() < target {
        let frontier: BTreeSet<&str> = chosen
            .iter()
            .flat_map(|t| graph.table_neighbors(database, t).map(|(n, _)| n))
            .filter(|n| !chosen.contains(n))
            .collect();
        match frontier.into_iter().choose(rng) {
            Some(next) => chosen.push(next),
            None => break,
        }
    }
    Ok(QuerySchema::new(database, chosen))
}

/// Word-level synonym table, read from `word<TAB>synonym` lines.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Self {
        let mut lex = Self::default();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(['\t', ',']).map(str::trim);
            if let (Some(word), Some(syn)) = (fields.next(), fields.next()) {
                lex.insert(word, syn);
            }
        }
        lex
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_LEXICON)
    }

    pub fn insert(&mut self, word: &str, synonym: &str) {
        let list = self.entries.entry(word.to_lowercase()).or_default();
        let syn = synonym.to_lowercase();
        if !list.contains(&syn) {
            list.push(syn);
        }
    }

    pub fn synonyms(&self, word: &str) -> &[String] {
        self.entries.get(word).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Produces a natural-language question for a sampled schema.
pub trait Questioner: Send + Sync {
    fn id(&self) -> &str;

    /// `schema` lists tables in serialization order.
    fn ask(&self, schema: &SerializedSchema, catalog: &SchemaCatalog, seed: u64) -> Result<String, SynthError>;
}

/// Template-based questioner: names a sampled column of every table and
/// optionally swaps schema words for synonyms.
#[derive(Debug, Clone)]
pub struct TemplateQuestioner {
    pub lexicon: Lexicon,
    pub synonym_rate: f64,
    pub inventory: Inventory,
}

impl TemplateQuestioner {
    pub fn new(catalog: &SchemaCatalog, lexicon: Lexicon, synonym_rate: f64) -> Self {
        Self {
            lexicon,
            synonym_rate: synonym_rate.clamp(0.0, 1.0),
            inventory: Inventory::from_catalog(catalog),
        }
    }

    fn phrase<R: Rng>(&self, name: &str, rng: &mut R) -> String {
        self.inventory
            .words(name)
            .into_iter()
            .map(|w| {
                let syns = self.lexicon.synonyms(&w);
                if !syns.is_empty() && rng.gen_bool(self.synonym_rate) {
                    syns.choose(rng).cloned().unwrap_or(w)
                } else {
                    w
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

const SINGLE_TEMPLATES: &[&str] = &[
    "What is the {c} of each {t}?",
    "List the {c} of all {t} records.",
    "Show every {t} together with its {c}.",
    "Which {t} has the largest {c}?",
    "How many {t} entries have a {c} above the average?",
    "Find the {c} and the {c2} of every {t}.",
    "Give me the distinct {c} values among the {t}.",
    "Sort the {t} by {c} in descending order.",
];

const MULTI_TEMPLATES: &[&str] = &[
    "What is {parts}?",
    "Show {parts} for the matching records.",
    "List {parts} together.",
    "For each {t}, find the {c} along with {rest}.",
    "Which {t} has the highest {c}, and what is {rest}?",
    "Return {parts}, ordered by the {c}.",
];

fn join_phrases(parts: &[String]) -> String {
    match parts {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn pick_column<'a, R: Rng>(db: &'a Database, table: &str, rng: &mut R) -> Option<&'a str> {
    let t = db.table(table)?;
    let named: Vec<&str> = t
        .columns
        .iter()
        .map(|c| c.normalized.as_str())
        .filter(|c| *c != "id")
        .collect();
    let pool = if named.is_empty() {
        t.columns.iter().map(|c| c.normalized.as_str()).collect()
    } else {
        named
    };
    pool.choose(rng).copied()
}

/// Deterministic template question for `schema` under `seed`.
pub fn template_question(
    questioner: &TemplateQuestioner,
    schema: &SerializedSchema,
    catalog: &SchemaCatalog,
    seed: u64,
) -> Result<String, SynthError> {
    let db = catalog
        .resolve_database(schema.database())
        .ok_or_else(|| SynthError::UnknownDatabase(schema.database().to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tables: Vec<&String> = schema.tables().iter().collect();
    tables.shuffle(&mut rng);

    let mut parts = Vec::with_capacity(tables.len());
    let mut first = None;
    for t in &tables {
        let col = pick_column(db, t, &mut rng).unwrap_or(t.as_str());
        let (c, tp) = (questioner.phrase(col, &mut rng), questioner.phrase(t, &mut rng));
        if first.is_none() {
            first = Some((c.clone(), tp.clone()));
        }
        parts.push(format!("the {c} of the {tp}"));
    }
    let (c, t) = first.ok_or_else(|| SerializeError::NoTables(db.id.clone()))?;
    let question = if tables.len() == 1 {
        let template = SINGLE_TEMPLATES.choose(&mut rng).expect("templates");
        let c2 = pick_column(db, tables[0], &mut rng)
            .map(|col| questioner.phrase(col, &mut rng))
            .unwrap_or_else(|| c.clone());
        template.replace("{c2}", &c2).replace("{c}", &c).replace("{t}", &t)
    } else {
        let template = MULTI_TEMPLATES.choose(&mut rng).expect("templates");
        template
            .replace("{parts}", &join_phrases(&parts))
            .replace("{rest}", &join_phrases(&parts[1..]))
            .replace("{c}", &c)
            .replace("{t}", &t)
    };
    Ok(question)
}

impl Questioner for TemplateQuestioner {
    fn id(&self) -> &str {
        "template"
    }

    fn ask(&self, schema: &SerializedSchema, catalog: &SchemaCatalog, seed: u64) -> Result<String, SynthError> {
        template_question(self, schema, catalog, seed)
    }
}

/// Questioner backed by an external process speaking the line protocol.
pub struct ExternalQuestioner {
    channel: Mutex<Channel>,
    attempts: usize,
}

impl ExternalQuestioner {
    pub fn new(channel: Channel) -> Self {
        Self {
            channel: Mutex::new(channel),
            attempts: 3,
        }
    }
}

impl Questioner for ExternalQuestioner {
    fn id(&self) -> &str {
        "external"
    }

    fn ask(&self, schema: &SerializedSchema, catalog: &SchemaCatalog, _seed: u64) -> Result<String, SynthError> {
        let db = catalog
            .resolve_database(schema.database())
            .ok_or_else(|| SynthError::UnknownDatabase(schema.database().to_string()))?;
        let tables: Vec<TableSpec> = schema
            .tables()
            .iter()
            .filter_map(|t| db.table(t))
            .map(|t| TableSpec {
                name: t.normalized.clone(),
                columns: t.columns.iter().map(|c| c.normalized.clone()).collect(),
            })
            .collect();
        let mut last: Option<ProtocolError> = None;
        let mut channel = self.channel.lock().expect("questioner channel poisoned");
        for _ in 0..self.attempts {
            match channel.ask(&db.id, tables.clone()) {
                Ok(text) if !text.trim().is_empty() => return Ok(text.trim().to_string()),
                Ok(_) => last = Some(ProtocolError::Remote("empty question".into())),
                Err(e) => last = Some(e),
            }
        }
        Err(SynthError::Questioner(last.map(|e| e.to_string()).unwrap_or_default()))
    }
}

/// One routing instance: a question and its target schema, tables listed in
/// serialization order. Synthetic records carry a seed; adapted benchmark
/// records carry the gold SQL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub question: String,
    pub database: String,
    pub tables: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questioner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql: Option<String>,
}

impl Instance {
    pub fn schema(&self) -> QuerySchema {
        QuerySchema::new(&self.database, self.tables.iter().cloned())
    }

    pub fn serialized(&self) -> SerializedSchema {
        let mut elements = vec![self.database.clone()];
        elements.extend(self.tables.iter().cloned());
        SerializedSchema::new(elements)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    pub n: usize,
    pub max_tables: usize,
    pub seed: u64,
}

/// Databases visited in shuffled rounds, so every database appears once per
/// `|databases|` consecutive instances while each draw stays uniform.
fn database_schedule(graph: &SchemaGraph, n: usize, seed: u64) -> Vec<&str> {
    let dbs: Vec<&str> = graph.databases().collect();
    let mut out = Vec::with_capacity(n);
    let mut round = 0u64;
    while out.len() < n {
        let mut order = dbs.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x5eed_db00, round)));
        out.extend(order.into_iter().take(n - out.len()));
        round += 1;
    }
    out
}

pub fn synthesize_corpus(
    graph: &SchemaGraph,
    catalog: &SchemaCatalog,
    config: CorpusConfig,
    questioner: &dyn Questioner,
) -> Result<Vec<Instance>, SynthError> {
    if config.n == 0 {
        return Err(SynthError::EmptyCorpus);
    }
    if graph.database_count() == 0 {
        return Err(SynthError::EmptyGraph);
    }
    let schedule = database_schedule(graph, config.n, config.seed);
    let results: Vec<Result<Option<Instance>, SynthError>> = schedule
        .par_iter()
        .enumerate()
        .map(|(i, db)| {
            let seed = derive_seed(config.seed, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let schema = sample_schema_in(graph, db, config.max_tables, &mut rng)?;
            let serialized = dfs_serialize(graph, &schema, seed)?;
            match questioner.ask(&serialized, catalog, seed) {
                Ok(question) => Ok(Some(Instance {
                    question,
                    database: schema.database,
                    tables: serialized.tables().to_vec(),
                    seed: Some(seed),
                    questioner: Some(questioner.id().to_string()),
                    sql: None,
                })),
                Err(SynthError::Questioner(msg)) => {
                    warn!(instance = i, error = %msg, "questioner failed; instance skipped");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut out = Vec::with_capacity(config.n);
    let mut skipped = 0;
    for r in results {
        match r? {
            Some(inst) => out.push(inst),
            None => skipped += 1,
        }
    }
    if skipped as f64 > MAX_SKIP_FRACTION * config.n as f64 {
        return Err(SynthError::TooManySkips {
            skipped,
            total: config.n,
        });
    }
    Ok(out)
}

pub fn write_instances<W: Write>(instances: &[Instance], mut writer: W) -> io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut writer, inst)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_instances<R: BufRead>(reader: R) -> Result<Vec<Instance>, SynthError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = serde_json::from_str(&line).map_err(|e| SynthError::Record {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}
