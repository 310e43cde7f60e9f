//! Prompt builders for the three generation strategies: best schema,
//! multiple schemata, and a two-turn schema selection followed by the
//! best-schema prompt.

use std::fmt::Write as _;

use dbroute::router::{RoutingCandidate, TableScore};
use dbroute::SchemaCatalog;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER: &str = "### Complete sqlite SQL query only and with no explanation";
pub const TABLES_HEADER: &str = "### Sqlite SQL tables, with their properties:";
pub const COT_INSTRUCTION: &str = "Based on the provided natural language question, find the database that can best answer this question from the list schemata below. Only output the corresponding database schema identifier in the [id] format, without any additional information.";
pub const COT_DATABASES_HEADER: &str = "Sqlite SQL databases, with their tables and properties:";

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("no candidate schema")]
    NoCandidate,
    #[error("candidate for `{0}` has no tables")]
    EmptyCandidate(String),
    #[error("unknown database `{0}`")]
    UnknownDatabase(String),
    #[error("unknown table `{table}` in `{database}`")]
    UnknownTable { database: String, table: String },
    #[error("strategy needs at least {needed} candidates, got {got}")]
    TooFewCandidates { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    BestSchema,
    MultiSchema,
    MultiSchemaCot,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "best" | "best_schema" | "bestschema" => Ok(Self::BestSchema),
            "multi" | "multi_schema" | "multischema" => Ok(Self::MultiSchema),
            "cot" | "multi_schema_cot" | "multischemacot" => Ok(Self::MultiSchemaCot),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptStrategy {
    pub kind: StrategyKind,
    /// Candidates shown to the multi strategies; best schema uses one.
    pub candidates: usize,
}

impl PromptStrategy {
    pub fn new(kind: StrategyKind, candidates: usize) -> Result<Self, PromptError> {
        let needed = match kind {
            StrategyKind::MultiSchemaCot => 2,
            _ => 1,
        };
        if candidates < needed {
            return Err(PromptError::TooFewCandidates { needed, got: candidates });
        }
        Ok(Self { kind, candidates })
    }

    pub fn best() -> Self {
        Self {
            kind: StrategyKind::BestSchema,
            candidates: 1,
        }
    }
}

/// Candidate with unit scores, for schemata chosen outside the router.
pub fn candidate(database: &str, tables: &[&str]) -> RoutingCandidate {
    RoutingCandidate {
        database: database.to_string(),
        tables: tables
            .iter()
            .map(|t| TableScore {
                name: t.to_string(),
                score: 0.0,
            })
            .collect(),
        score: 0.0,
    }
}

/// `table(col, col, ...)` lines of a candidate, in candidate table order.
fn table_lines(candidate: &RoutingCandidate, catalog: &SchemaCatalog) -> Result<Vec<String>, PromptError> {
    let db = catalog
        .resolve_database(&candidate.database)
        .ok_or_else(|| PromptError::UnknownDatabase(candidate.database.clone()))?;
    if candidate.tables.is_empty() {
        return Err(PromptError::EmptyCandidate(candidate.database.clone()));
    }
    candidate
        .tables
        .iter()
        .map(|t| {
            let table = db
                .table(&dbroute::normalize(&t.name))
                .ok_or_else(|| PromptError::UnknownTable {
                    database: db.id.clone(),
                    table: t.name.clone(),
                })?;
            let cols: Vec<&str> = table.columns.iter().map(|c| c.normalized.as_str()).collect();
            Ok(format!("{}({})", table.normalized, cols.join(", ")))
        })
        .collect()
}

fn basic_prompt(question: &str, lines: &[String]) -> String {
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(out, "{TABLES_HEADER}").unwrap();
    writeln!(out, "#").unwrap();
    for l in lines {
        writeln!(out, "# {l}").unwrap();
    }
    writeln!(out, "#").unwrap();
    writeln!(out, "### {}", question.trim()).unwrap();
    out.push_str("SELECT");
    out
}

pub fn build_best_prompt(question: &str, candidate: &RoutingCandidate, catalog: &SchemaCatalog) -> Result<String, PromptError> {
    Ok(basic_prompt(question, &table_lines(candidate, catalog)?))
}

/// The basic prompt with the table lines of every candidate, in order.
pub fn build_multi_prompt(question: &str, candidates: &[RoutingCandidate], catalog: &SchemaCatalog) -> Result<String, PromptError> {
    if candidates.is_empty() {
        return Err(PromptError::NoCandidate);
    }
    let mut lines = Vec::new();
    for c in candidates {
        lines.extend(table_lines(c, catalog)?);
    }
    Ok(basic_prompt(question, &lines))
}

/// How the selection reply was interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionFlag {
    /// `[k]` with k in range.
    Exact,
    /// A bare in-range number without brackets.
    Lenient,
    /// Unparseable or out of range; the first candidate was used.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// 1-based candidate number.
    pub index: usize,
    pub flag: SelectionFlag,
}

/// Reads the candidate number from a selection reply.
pub fn parse_selection(reply: &str, candidates: usize) -> Selection {
    let reply = reply.trim();
    let in_range = |k: usize| (1..=candidates).contains(&k);
    if let Some(k) = bracketed_number(reply).filter(|k| in_range(*k)) {
        return Selection {
            index: k,
            flag: SelectionFlag::Exact,
        };
    }
    if let Some(k) = first_number(reply).filter(|k| in_range(*k)) {
        if !reply.contains('[') {
            return Selection {
                index: k,
                flag: SelectionFlag::Lenient,
            };
        }
    }
    Selection {
        index: 1,
        flag: SelectionFlag::Fallback,
    }
}

fn bracketed_number(s: &str) -> Option<usize> {
    let open = s.find('[')?;
    let close = open + s[open..].find(']')?;
    s[open + 1..close].trim().parse().ok()
}

fn first_number(s: &str) -> Option<usize> {
    let start = s.find(|c: char| c.is_ascii_digit())?;
    let digits: String = s[start..].chars().take_while(char::is_ascii_digit).collect();
    digits.parse().ok()
}

/// First turn of the selection strategy plus what the second turn needs.
#[derive(Debug, Clone, PartialEq)]
pub struct CotPrompts {
    pub turn1: String,
    question: String,
    candidates: Vec<RoutingCandidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CotTurn2 {
    pub prompt: String,
    pub selection: Selection,
}

impl CotPrompts {
    /// The best-schema prompt for the candidate named in `reply`.
    pub fn turn2(&self, reply: &str, catalog: &SchemaCatalog) -> Result<CotTurn2, PromptError> {
        let selection = parse_selection(reply, self.candidates.len());
        let prompt = build_best_prompt(&self.question, &self.candidates[selection.index - 1], catalog)?;
        Ok(CotTurn2 { prompt, selection })
    }
}

pub fn build_cot_prompts(question: &str, candidates: &[RoutingCandidate], catalog: &SchemaCatalog) -> Result<CotPrompts, PromptError> {
    if candidates.len() < 2 {
        return Err(PromptError::TooFewCandidates {
            needed: 2,
            got: candidates.len(),
        });
    }
    let mut out = String::new();
    writeln!(out, "{COT_INSTRUCTION}").unwrap();
    writeln!(out).unwrap();
    writeln!(out, "Question: {}", question.trim()).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "{COT_DATABASES_HEADER}").unwrap();
    for (i, c) in candidates.iter().enumerate() {
        let lines = table_lines(c, catalog)?;
        writeln!(out).unwrap();
        writeln!(out, "[{}] {}", i + 1, c.database).unwrap();
        for l in lines {
            writeln!(out, "{l}").unwrap();
        }
    }
    Ok(CotPrompts {
        turn1: out,
        question: question.to_string(),
        candidates: candidates.to_vec(),
    })
}

const SQL_STARTS: [&str; 4] = ["select", "with", "values", "explain"];

/// SQL text from a model reply: code fences stripped, and `SELECT `
/// prepended when the reply continues the primed keyword.
pub fn complete_sql(reply: &str) -> String {
    let mut text = reply.trim();
    if let Some(rest) = text.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        text = rest.split("```").next().unwrap_or_default().trim();
    }
    if text.is_empty() {
        return String::new();
    }
    let first = text
        .split(|c: char| c.is_whitespace() || c == '(')
        .next()
        .unwrap_or_default()
        .to_ascii_lowercase();
    if SQL_STARTS.contains(&first.as_str()) {
        text.to_string()
    } else {
        format!("SELECT {text}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dbroute::fixtures;

    const QUESTION: &str = "Which language is the most popular on the Asian continent?";

    #[test]
    fn best_prompt_layout() {
        let cat = fixtures::toy_catalog();
        let p = build_best_prompt(QUESTION, &candidate("world", &["country"]), &cat).unwrap();
        assert_eq!(p.lines().filter(|l| l.starts_with("# ")).count(), 1);
        assert!(p.ends_with("\nSELECT"));
        assert_eq!(
            build_best_prompt(QUESTION, &candidate("world", &[]), &cat),
            Err(PromptError::EmptyCandidate("world".into()))
        );
        assert!(matches!(
            build_best_prompt(QUESTION, &candidate("world", &["nope"]), &cat),
            Err(PromptError::UnknownTable { .. })
        ));
    }

    #[test]
    fn multi_with_one_candidate_is_best() {
        let cat = fixtures::toy_catalog();
        let c = candidate("world", &["country", "countrylanguage"]);
        assert_eq!(
            build_multi_prompt(QUESTION, std::slice::from_ref(&c), &cat).unwrap(),
            build_best_prompt(QUESTION, &c, &cat).unwrap()
        );
        assert_eq!(build_multi_prompt(QUESTION, &[], &cat), Err(PromptError::NoCandidate));
    }

    #[test]
    fn multi_keeps_order_and_duplicates() {
        let cat = fixtures::toy_catalog();
        let cs = [candidate("car", &["countries"]), candidate("world", &["country"]), candidate("car", &["countries"])];
        let p = build_multi_prompt(QUESTION, &cs, &cat).unwrap();
        let lines: Vec<&str> = p.lines().filter(|l| l.starts_with("# ")).collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("# countries(") && lines[1].starts_with("# country(") && lines[2] == lines[0]);
    }

    #[test]
    fn selection_parsing() {
        assert_eq!(parse_selection("[2]", 5), Selection { index: 2, flag: SelectionFlag::Exact });
        assert_eq!(parse_selection("[9]", 5), Selection { index: 1, flag: SelectionFlag::Fallback });
        assert_eq!(parse_selection("2", 5), Selection { index: 2, flag: SelectionFlag::Lenient });
        assert_eq!(parse_selection("none", 5).flag, SelectionFlag::Fallback);
        assert_eq!(parse_selection("The answer is [3].", 5).index, 3);
    }

    #[test]
    fn cot_needs_two_candidates() {
        let cat = fixtures::toy_catalog();
        assert!(matches!(
            build_cot_prompts(QUESTION, &[candidate("world", &["country"])], &cat),
            Err(PromptError::TooFewCandidates { needed: 2, got: 1 })
        ));
        let cs = [candidate("car", &["countries"]), candidate("world", &["country"])];
        let cot = build_cot_prompts(QUESTION, &cs, &cat).unwrap();
        let t2 = cot.turn2("[2]", &cat).unwrap();
        assert_eq!(t2.prompt, build_best_prompt(QUESTION, &cs[1], &cat).unwrap());
    }

    #[test]
    fn reply_completion() {
        assert_eq!(complete_sql(" name FROM singer"), "SELECT name FROM singer");
        assert_eq!(complete_sql("SELECT 1"), "SELECT 1");
        assert_eq!(complete_sql("```sql\nselect 1\n```"), "select 1");
        assert_eq!(complete_sql("with x as (select 1) select * from x"), "with x as (select 1) select * from x");
        assert_eq!(complete_sql("   "), "");
        assert!(PromptStrategy::new(StrategyKind::MultiSchemaCot, 1).is_err());
    }
}
