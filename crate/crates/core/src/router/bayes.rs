//! Statistical scorer fitted on a synthetic corpus: multinomial naive Bayes
//! over question terms per schema element, with a character-trigram
//! fallback for unseen wording and a stop hazard fitted on sequence lengths.
//!
//! Element scores are turned into token scores by marginalizing: a token's
//! score is the log of the summed probability of every permitted name whose
//! token sequence continues with it.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scorer::{logsumexp, ScoreError, Scorer, ScoringSession};
use crate::catalog::normalize;
use crate::graph::SchemaGraph;
use crate::synth::Instance;
use crate::vocab::{TokenId, Vocabulary, EOS, SEP};

/// Score given to candidates no permitted name supports.
const FLOOR: f64 = -1.0e4;

const STOPWORDS: &[&str] = &[
    "a", "all", "also", "among", "an", "and", "any", "are", "as", "at", "be", "by", "can", "did", "do", "does", "each",
    "every", "find", "for", "from", "give", "has", "have", "how", "in", "is", "it", "its", "list", "me", "of", "on",
    "or", "please", "return", "show", "that", "the", "their", "them", "there", "these", "those", "to", "was", "were",
    "what", "when", "where", "which", "who", "whose", "with",
];

fn stem(word: &str) -> String {
    if word.len() > 4 && word.ends_with("ies") {
        return format!("{}y", &word[..word.len() - 3]);
    }
    if word.len() > 3 && word.ends_with('s') && !word.ends_with("ss") && !word.ends_with("us") && !word.ends_with("is") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Lower-cased alphanumeric words minus stopwords, with plural endings folded.
pub fn question_terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| stem(&w))
        .collect()
}

fn trigrams(words: impl IntoIterator<Item = String>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for w in words {
        let chars: Vec<char> = w.chars().collect();
        for win in chars.windows(3) {
            out.insert(win.iter().collect());
        }
    }
    out
}

/// Share of the element name's trigrams that also occur in the question.
fn trigram_overlap(question: &BTreeSet<String>, name: &str) -> f64 {
    let own = trigrams(name.split('_').map(str::to_string));
    if own.is_empty() {
        return 0.0;
    }
    own.iter().filter(|t| question.contains(*t)).count() as f64 / own.len() as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ElementCounts {
    /// Instances whose schema contains the element.
    pub occurrences: u64,
    /// Question-term tokens seen with the element.
    pub term_total: u64,
    pub terms: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    /// Additive smoothing of term counts.
    pub alpha: f64,
    /// Weight of the character-trigram fallback.
    pub beta: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 2.0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// Fitted counts; serializable as the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub alpha: f64,
    pub beta: f64,
    pub instances: u64,
    /// Distinct question terms in the corpus.
    pub term_vocabulary: u64,
    pub databases: BTreeMap<String, ElementCounts>,
    pub tables: BTreeMap<String, BTreeMap<String, ElementCounts>>,
    /// `lengths[k]`: instances with exactly `k` tables.
    pub lengths: Vec<u64>,
}

impl NaiveBayesModel {
    /// Probability of stopping after `k` decoded tables.
    pub fn stop_hazard(&self, k: usize) -> f64 {
        let at = self.lengths.get(k).copied().unwrap_or(0) as f64;
        let at_least: f64 = self.lengths.iter().skip(k).sum::<u64>() as f64;
        ((at + 1.0) / (at_least + 2.0)).clamp(1e-6, 1.0 - 1e-6)
    }

    fn term_score(&self, counts: Option<&ElementCounts>, terms: &[String]) -> f64 {
        let total = counts.map_or(0, |c| c.term_total) as f64;
        let denom = (total + self.alpha * self.term_vocabulary.max(1) as f64).ln();
        terms
            .iter()
            .map(|t| {
                let c = counts.and_then(|c| c.terms.get(t)).copied().unwrap_or(0) as f64;
                (c + self.alpha).ln() - denom
            })
            .sum()
    }
}

fn add_terms(counts: &mut ElementCounts, terms: &[String]) {
    counts.occurrences += 1;
    counts.term_total += terms.len() as u64;
    for t in terms {
        *counts.terms.entry(t.clone()).or_insert(0) += 1;
    }
}

pub fn fit_scorer(corpus: &[Instance], params: FitParams) -> Result<NaiveBayesModel, FitError> {
    if corpus.is_empty() {
        return Err(FitError::EmptyCorpus);
    }
    if !(params.alpha > 0.0) || !params.alpha.is_finite() {
        return Err(FitError::Parameter(format!("alpha must be positive, got {}", params.alpha)));
    }
    if !(params.beta >= 0.0) || !params.beta.is_finite() {
        return Err(FitError::Parameter(format!("beta must be >= 0, got {}", params.beta)));
    }
    let mut model = NaiveBayesModel {
        alpha: params.alpha,
        beta: params.beta,
        instances: corpus.len() as u64,
        term_vocabulary: 0,
        databases: BTreeMap::new(),
        tables: BTreeMap::new(),
        lengths: Vec::new(),
    };
    let mut vocabulary = BTreeSet::new();
    for inst in corpus {
        let terms = question_terms(&inst.question);
        vocabulary.extend(terms.iter().cloned());
        add_terms(model.databases.entry(inst.database.clone()).or_default(), &terms);
        let tables = model.tables.entry(inst.database.clone()).or_default();
        let distinct: BTreeSet<&String> = inst.tables.iter().collect();
        for t in &distinct {
            add_terms(tables.entry((*t).clone()).or_default(), &terms);
        }
        let k = distinct.len();
        if model.lengths.len() <= k {
            model.lengths.resize(k + 1, 0);
        }
        model.lengths[k] += 1;
    }
    model.term_vocabulary = vocabulary.len() as u64;
    Ok(model)
}

struct DbEntry {
    id: String,
    tokens: Vec<TokenId>,
    tables: Vec<(String, Vec<TokenId>)>,
}

/// Fitted model bound to a vocabulary and schema graph.
pub struct NaiveBayesScorer {
    model: NaiveBayesModel,
    graph: SchemaGraph,
    databases: Vec<DbEntry>,
    by_tokens: HashMap<Vec<TokenId>, usize>,
    vocab: Vocabulary,
}

impl NaiveBayesScorer {
    pub fn new(model: NaiveBayesModel, vocab: &Vocabulary, graph: &SchemaGraph) -> Self {
        let databases: Vec<DbEntry> = graph
            .databases()
            .map(|db| DbEntry {
                id: db.to_string(),
                tokens: vocab.encode(&normalize(db)),
                tables: graph.tables(db).map(|t| (t.to_string(), vocab.encode(t))).collect(),
            })
            .collect();
        let by_tokens = databases.iter().enumerate().map(|(i, d)| (d.tokens.clone(), i)).collect();
        Self {
            model,
            graph: graph.clone(),
            databases,
            by_tokens,
            vocab: vocab.clone(),
        }
    }

    pub fn model(&self) -> &NaiveBayesModel {
        &self.model
    }

    /// Unnormalized log-scores of every database for `question`.
    pub fn database_scores(&self, question: &str) -> Vec<(String, f64)> {
        let q = Question::new(question);
        self.databases
            .iter()
            .zip(self.db_scores(&q))
            .map(|(d, s)| (d.id.clone(), s))
            .collect()
    }

    fn db_scores(&self, q: &Question) -> Vec<f64> {
        let m = &self.model;
        let total: f64 = self
            .databases
            .iter()
            .map(|d| m.databases.get(&d.id).map_or(0, |c| c.occurrences) as f64)
            .sum::<f64>()
            + self.databases.len() as f64;
        self.databases
            .iter()
            .map(|d| {
                let counts = m.databases.get(&d.id);
                let prior = ((counts.map_or(0, |c| c.occurrences) as f64 + 1.0) / total).ln();
                m.term_score(counts, &q.terms) + prior + m.beta * trigram_overlap(&q.trigrams, &normalize(&d.id))
            })
            .collect()
    }

    fn table_scores(&self, q: &Question, db: &DbEntry) -> HashMap<String, f64> {
        let m = &self.model;
        let counts = m.tables.get(&db.id);
        let get = |t: &str| counts.and_then(|c| c.get(t));
        let total: f64 = db
            .tables
            .iter()
            .map(|(t, _)| get(t).map_or(0, |c| c.occurrences) as f64)
            .sum::<f64>()
            + db.tables.len() as f64;
        db.tables
            .iter()
            .map(|(t, _)| {
                let c = get(t);
                let prior = ((c.map_or(0, |c| c.occurrences) as f64 + 1.0) / total).ln();
                let s = m.term_score(c, &q.terms) + prior + m.beta * trigram_overlap(&q.trigrams, t);
                (t.clone(), s)
            })
            .collect()
    }
}

struct Question {
    terms: Vec<String>,
    trigrams: BTreeSet<String>,
}

impl Question {
    fn new(text: &str) -> Self {
        let words = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase);
        Self {
            terms: question_terms(text),
            trigrams: trigrams(words),
        }
    }
}

struct BayesSession<'a> {
    scorer: &'a NaiveBayesScorer,
    question: Question,
    db_scores: Vec<f64>,
    tables: HashMap<usize, HashMap<String, f64>>,
}

impl Scorer for NaiveBayesScorer {
    fn session<'a>(&'a self, question: &str) -> Result<Box<dyn ScoringSession + 'a>, ScoreError> {
        let q = Question::new(question);
        Ok(Box::new(BayesSession {
            scorer: self,
            db_scores: self.db_scores(&q),
            question: q,
            tables: HashMap::new(),
        }))
    }
}

impl ScoringSession for BayesSession<'_> {
    fn score(&mut self, prefix: &[TokenId], candidates: &[TokenId]) -> Result<Vec<f64>, ScoreError> {
        if prefix.contains(&EOS) {
            return Err(ScoreError::Invalid("prefix extends past end of sequence".into()));
        }
        let s = self.scorer;
        let mut parts: Vec<&[TokenId]> = prefix.split(|t| *t == SEP).collect();
        let pending = parts.pop().unwrap_or(&[]);

        // Pool of (name tokens, log-score) for the element being decoded.
        let pool: Vec<(&[TokenId], f64)> = match parts.first() {
            None => s
                .databases
                .iter()
                .zip(&self.db_scores)
                .map(|(d, &sc)| (d.tokens.as_slice(), sc))
                .collect(),
            Some(db_tokens) => {
                let &di = s
                    .by_tokens
                    .get(*db_tokens)
                    .ok_or_else(|| ScoreError::Invalid(format!("unknown database `{}`", s.vocab.decode(db_tokens))))?;
                let db = &s.databases[di];
                let decoded: Vec<String> = parts[1..].iter().map(|t| s.vocab.decode(t)).collect();
                let permitted: BTreeSet<&str> = if decoded.is_empty() {
                    db.tables.iter().map(|(t, _)| t.as_str()).collect()
                } else {
                    decoded
                        .iter()
                        .flat_map(|t| s.graph.table_neighbors(&db.id, t).map(|(n, _)| n))
                        .filter(|n| !decoded.iter().any(|d| d == n))
                        .collect()
                };
                let question = &self.question;
                let scores = self.tables.entry(di).or_insert_with(|| s.table_scores(question, db));
                db.tables
                    .iter()
                    .filter(|(t, _)| permitted.contains(t.as_str()))
                    .map(|(t, toks)| (toks.as_slice(), scores[t]))
                    .collect()
            }
        };
        let z = logsumexp(&pool.iter().map(|(_, sc)| *sc).collect::<Vec<_>>());
        let decoded_tables = parts.len().saturating_sub(1);
        let stop_possible = pending.is_empty() && decoded_tables >= 1;
        let h = s.model.stop_hazard(decoded_tables);
        let go_on = if stop_possible { (1.0 - h).ln() } else { 0.0 };

        Ok(candidates
            .iter()
            .map(|&c| {
                let v = match c {
                    EOS if stop_possible => h.ln(),
                    EOS => FLOOR,
                    SEP => pool
                        .iter()
                        .find(|(toks, _)| *toks == pending)
                        .map_or(FLOOR, |(_, sc)| sc - z + go_on),
                    t => {
                        let support: Vec<f64> = pool
                            .iter()
                            .filter(|(toks, _)| {
                                toks.len() > pending.len() && toks.starts_with(pending) && toks[pending.len()] == t
                            })
                            .map(|(_, sc)| *sc)
                            .collect();
                        if support.is_empty() {
                            FLOOR
                        } else {
                            logsumexp(&support) - z + go_on
                        }
                    }
                };
                if v.is_finite() {
                    v.max(FLOOR)
                } else {
                    FLOOR
                }
            })
            .collect())
    }
}
