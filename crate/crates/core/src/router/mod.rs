//! Schema router: graph-constrained token decoding with diverse beam search,
//! and merging of decoded sequences into ranked candidate schemata.
//!
//! A sequence spells `database <sep> table <sep> … table <sep> </s>`. At each
//! step the permitted element names are all databases (nothing decoded),
//! all tables of the decoded database (no table yet), or the unvisited
//! table-relation neighbours of the decoded tables. A prefix tree over the
//! permitted names is rebuilt whenever an element completes.

mod bayes;
mod scorer;
mod trie;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::normalize;
use crate::graph::SchemaGraph;
use crate::serialize::SerializedSchema;
use crate::synth::DEFAULT_MAX_TABLES;
use crate::vocab::{TokenId, Vocabulary, EOS, SEP};

pub use bayes::{fit_scorer, question_terms, ElementCounts, FitError, FitParams, NaiveBayesModel, NaiveBayesScorer};
pub use scorer::{
    checked_logprobs, logsumexp, normalize_logprobs, ProtocolScorer, RandomScorer, ScoreError, Scorer, ScoringSession,
    UniformScorer,
};
pub use trie::TokenTrie;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beams: usize,
    pub groups: usize,
    pub diversity: f64,
    /// Upper bound on decoded tables per sequence.
    pub max_tables: usize,
    /// Hard cap on decoding steps; unfinished beams are dropped.
    pub max_steps: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beams: 10,
            groups: 10,
            diversity: 2.0,
            max_tables: DEFAULT_MAX_TABLES,
            max_steps: 256,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), RouteError> {
        if self.beams == 0 || self.groups == 0 || self.beams % self.groups != 0 {
            return Err(RouteError::Config(format!(
                "beams ({}) must be a positive multiple of groups ({})",
                self.beams, self.groups
            )));
        }
        if !(self.diversity >= 0.0) || !self.diversity.is_finite() {
            return Err(RouteError::Config(format!("diversity must be >= 0, got {}", self.diversity)));
        }
        if self.max_tables == 0 {
            return Err(RouteError::Config("max_tables must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("sequence already ended")]
    Finished,
    #[error("token {0} is not permitted here")]
    NotPermitted(TokenId),
}

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("scoring question `{question}`: {source}")]
    Scorer {
        question: String,
        #[source]
        source: ScoreError,
    },
    #[error(transparent)]
    State(#[from] StateError),
    #[error("invalid decode config: {0}")]
    Config(String),
}

/// Partial decode of one sequence.
#[derive(Debug, Clone)]
pub struct DecoderState {
    database: Option<String>,
    tables: Vec<String>,
    pending: Vec<TokenId>,
    tokens: Vec<TokenId>,
    finished: bool,
    trie: Arc<TokenTrie>,
}

impl DecoderState {
    pub fn database(&self) -> Option<&str> {
        self.database.as_deref()
    }

    pub fn tables(&self) -> &[String] {
        &self.tables
    }

    /// Sub-tokens emitted since the last separator.
    pub fn pending(&self) -> &[TokenId] {
        &self.pending
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Names the current element may still become.
    pub fn permitted(&self) -> &[String] {
        self.trie.names()
    }
}

/// A finished sequence and its unpenalized log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub schema: SerializedSchema,
    pub tokens: Vec<TokenId>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableScore {
    pub name: String,
    pub score: f64,
}

/// Candidate schema after merging sequences that share a database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingCandidate {
    pub database: String,
    /// Best first; each scored by the best sequence containing it.
    pub tables: Vec<TableScore>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    pub candidates: Vec<RoutingCandidate>,
    pub sequences: Vec<ScoredSequence>,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
}

impl Routing {
    pub fn database_ranking(&self) -> Vec<String> {
        self.candidates.iter().map(|c| c.database.clone()).collect()
    }

    pub fn table_ranking(&self) -> Vec<(String, String)> {
        table_ranking(&self.candidates).into_iter().map(|(d, t, _)| (d, t)).collect()
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1e3)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?.max(0.0) / 1e3))
    }
}

fn cmp_score_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Groups sequences by database. A database scores as its best sequence; a
/// table as the best sequence containing it.
pub fn merge_candidates(sequences: &[ScoredSequence]) -> Vec<RoutingCandidate> {
    let mut by_db: BTreeMap<&str, (f64, BTreeMap<&str, f64>)> = BTreeMap::new();
    for seq in sequences {
        let entry = by_db
            .entry(seq.schema.database())
            .or_insert((f64::NEG_INFINITY, BTreeMap::new()));
        entry.0 = entry.0.max(seq.score);
        for t in seq.schema.tables() {
            let s = entry.1.entry(t.as_str()).or_insert(f64::NEG_INFINITY);
            *s = s.max(seq.score);
        }
    }
    let mut out: Vec<RoutingCandidate> = by_db
        .into_iter()
        .map(|(db, (score, tables))| {
            let mut tables: Vec<TableScore> = tables
                .into_iter()
                .map(|(name, score)| TableScore {
                    name: name.to_string(),
                    score,
                })
                .collect();
            tables.sort_by(|a, b| cmp_score_desc(a.score, b.score).then_with(|| a.name.cmp(&b.name)));
            RoutingCandidate {
                database: db.to_string(),
                tables,
                score,
            }
        })
        .collect();
    out.sort_by(|a, b| cmp_score_desc(a.score, b.score).then_with(|| a.database.cmp(&b.database)));
    out
}

/// All candidate tables across candidates, best first.
pub fn table_ranking(candidates: &[RoutingCandidate]) -> Vec<(String, String, f64)> {
    let mut out: Vec<(String, String, f64)> = candidates
        .iter()
        .flat_map(|c| c.tables.iter().map(|t| (c.database.clone(), t.name.clone(), t.score)))
        .collect();
    out.sort_by(|a, b| cmp_score_desc(a.2, b.2).then_with(|| (&a.0, &a.1).cmp(&(&b.0, &b.1))));
    out
}

/// Immutable decoding context over one schema graph and vocabulary.
#[derive(Debug, Clone)]
pub struct SchemaRouter {
    graph: SchemaGraph,
    vocab: Vocabulary,
    config: DecodeConfig,
    root: Arc<TokenTrie>,
    table_tokens: HashMap<String, BTreeMap<String, Vec<TokenId>>>,
}

struct Beam {
    state: DecoderState,
    raw: f64,
    penalized: f64,
}

struct Expansion {
    parent: usize,
    token: Option<TokenId>,
    raw: f64,
    penalized: f64,
}

impl Expansion {
    fn sequence<'a>(&'a self, group: &'a [Beam]) -> impl Iterator<Item = TokenId> + 'a {
        group[self.parent].state.tokens.iter().chain(self.token.iter()).copied()
    }
}

impl SchemaRouter {
    pub fn new(graph: SchemaGraph, vocab: Vocabulary, config: DecodeConfig) -> Result<Self, RouteError> {
        config.validate()?;
        let root = TokenTrie::new(graph.databases().map(|db| (db.to_string(), vocab.encode(&normalize(db)))));
        let table_tokens = graph
            .databases()
            .map(|db| {
                let tables = graph.tables(db).map(|t| (t.to_string(), vocab.encode(t))).collect();
                (db.to_string(), tables)
            })
            .collect();
        Ok(Self {
            graph,
            vocab,
            config,
            root: Arc::new(root),
            table_tokens,
        })
    }

    pub fn graph(&self) -> &SchemaGraph {
        &self.graph
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &DecodeConfig {
        &self.config
    }

    pub fn with_config(mut self, config: DecodeConfig) -> Result<Self, RouteError> {
        config.validate()?;
        self.config = config;
        Ok(self)
    }

    pub fn initial_state(&self) -> DecoderState {
        DecoderState {
            database: None,
            tables: Vec::new(),
            pending: Vec::new(),
            tokens: Vec::new(),
            finished: false,
            trie: Arc::clone(&self.root),
        }
    }

    /// Names permitted for the next element given the decoded ones.
    pub fn permitted_names(&self, database: Option<&str>, tables: &[String]) -> Vec<String> {
        let Some(db) = database else {
            return self.graph.databases().map(str::to_string).collect();
        };
        if tables.len() >= self.config.max_tables {
            return Vec::new();
        }
        if tables.is_empty() {
            return self.graph.tables(db).map(str::to_string).collect();
        }
        let frontier: BTreeSet<&str> = tables
            .iter()
            .flat_map(|t| {
                self.graph
                    .table_neighbors(db, t)
                    .filter(|(_, kind)| kind.is_table_relation())
                    .map(|(n, _)| n)
            })
            .filter(|n| !tables.iter().any(|t| t == n))
            .collect();
        frontier.into_iter().map(str::to_string).collect()
    }

    fn element_trie(&self, database: Option<&str>, tables: &[String]) -> Arc<TokenTrie> {
        let Some(db) = database else {
            return Arc::clone(&self.root);
        };
        let tokens = &self.table_tokens[db];
        Arc::new(TokenTrie::new(
            self.permitted_names(Some(db), tables)
                .into_iter()
                .map(|t| {
                    let ids = tokens[&t].clone();
                    (t, ids)
                }),
        ))
    }

    pub fn allowed_continuations(&self, state: &DecoderState) -> BTreeSet<TokenId> {
        if state.finished {
            return BTreeSet::new();
        }
        let mut out = state.trie.continuations(&state.pending);
        if !state.pending.is_empty() && state.trie.complete(&state.pending).is_some() {
            out.insert(SEP);
        }
        if state.pending.is_empty() && !state.tables.is_empty() {
            out.insert(EOS);
        }
        out
    }

    pub fn advance(&self, state: &DecoderState, token: TokenId) -> Result<DecoderState, StateError> {
        if state.finished {
            return Err(StateError::Finished);
        }
        if !self.allowed_continuations(state).contains(&token) {
            return Err(StateError::NotPermitted(token));
        }
        let mut next = state.clone();
        next.tokens.push(token);
        match token {
            EOS => next.finished = true,
            SEP => {
                let name = state.trie.complete(&state.pending).expect("separator allowed").to_string();
                if next.database.is_none() {
                    next.database = Some(name);
                } else {
                    next.tables.push(name);
                }
                next.pending.clear();
                next.trie = self.element_trie(next.database.as_deref(), &next.tables);
            }
            t => next.pending.push(t),
        }
        Ok(next)
    }

    /// Replays a token sequence from the initial state.
    pub fn state_from_tokens(&self, tokens: &[TokenId]) -> Result<DecoderState, StateError> {
        tokens
            .iter()
            .try_fold(self.initial_state(), |s, &t| self.advance(&s, t))
    }

    /// Token sequence of a serialized schema.
    pub fn encode(&self, schema: &SerializedSchema) -> Vec<TokenId> {
        let mut out = Vec::new();
        for (i, e) in schema.elements.iter().enumerate() {
            let name = if i == 0 { normalize(e) } else { e.clone() };
            out.extend(self.vocab.encode(&name));
            out.push(SEP);
        }
        out.push(EOS);
        out
    }

    fn finished_sequence(&self, beam: &Beam) -> ScoredSequence {
        let mut elements = vec![beam.state.database.clone().expect("finished beam has a database")];
        elements.extend(beam.state.tables.iter().cloned());
        ScoredSequence {
            schema: SerializedSchema::new(elements),
            tokens: beam.state.tokens.clone(),
            score: beam.raw,
        }
    }

    /// Diverse beam search: `groups` groups of `beams / groups` beams, each
    /// token penalized by `diversity` times the number of earlier-group
    /// beams that picked it at the same step.
    pub fn decode(&self, question: &str, scorer: &dyn Scorer) -> Result<Vec<ScoredSequence>, RouteError> {
        let cfg = self.config;
        let wrap = |source| RouteError::Scorer {
            question: question.to_string(),
            source,
        };
        let mut session = scorer.session(question).map_err(wrap)?;
        let per_group = cfg.beams / cfg.groups;
        let initial = || Beam {
            state: self.initial_state(),
            raw: 0.0,
            penalized: 0.0,
        };
        let mut groups: Vec<Vec<Beam>> = (0..cfg.groups).map(|_| vec![initial()]).collect();

        for _ in 0..cfg.max_steps {
            if groups.iter().flatten().all(|b| b.state.finished) {
                break;
            }
            let mut chosen: HashMap<TokenId, usize> = HashMap::new();
            for group in groups.iter_mut() {
                let mut expansions = Vec::new();
                for (i, beam) in group.iter().enumerate() {
                    if beam.state.finished {
                        expansions.push(Expansion {
                            parent: i,
                            token: None,
                            raw: beam.raw,
                            penalized: beam.penalized,
                        });
                        continue;
                    }
                    let allowed: Vec<TokenId> = self.allowed_continuations(&beam.state).into_iter().collect();
                    if allowed.is_empty() {
                        continue;
                    }
                    let scores = session.score(&beam.state.tokens, &allowed).map_err(wrap)?;
                    let logprobs = checked_logprobs(scores, allowed.len()).map_err(wrap)?;
                    for (&t, lp) in allowed.iter().zip(logprobs) {
                        let penalty = cfg.diversity * chosen.get(&t).copied().unwrap_or(0) as f64;
                        expansions.push(Expansion {
                            parent: i,
                            token: Some(t),
                            raw: beam.raw + lp,
                            penalized: beam.penalized + lp - penalty,
                        });
                    }
                }
                let g: &[Beam] = group;
                expansions.sort_by(|a, b| {
                    cmp_score_desc(a.penalized, b.penalized).then_with(|| a.sequence(g).cmp(b.sequence(g)))
                });
                expansions.truncate(per_group);
                let mut next = Vec::with_capacity(expansions.len());
                for e in &expansions {
                    let parent = &group[e.parent];
                    let state = match e.token {
                        Some(t) => {
                            *chosen.entry(t).or_insert(0) += 1;
                            self.advance(&parent.state, t)?
                        }
                        None => parent.state.clone(),
                    };
                    next.push(Beam {
                        state,
                        raw: e.raw,
                        penalized: e.penalized,
                    });
                }
                *group = next;
            }
        }

        let mut out: Vec<ScoredSequence> = groups
            .iter()
            .flatten()
            .filter(|b| b.state.finished)
            .map(|b| self.finished_sequence(b))
            .collect();
        out.sort_by(|a, b| cmp_score_desc(a.score, b.score).then_with(|| a.tokens.cmp(&b.tokens)));
        Ok(out)
    }

    /// Decodes, merges and keeps the top `k` candidates.
    pub fn route(&self, question: &str, k: usize, scorer: &dyn Scorer) -> Result<Routing, RouteError> {
        let start = Instant::now();
        let sequences = self.decode(question, scorer)?;
        let mut candidates = merge_candidates(&sequences);
        candidates.truncate(k);
        Ok(Routing {
            candidates,
            sequences,
            latency: start.elapsed(),
        })
    }
}
