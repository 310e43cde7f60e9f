//! SELECT-subset SQL reader that extracts the tables and columns a query
//! touches, and the dataset adapter built on it.
//!
//! The grammar covers what NL2SQL benchmarks use: joins, nested queries in
//! any clause, CTEs, compound operators, aggregates, CASE/CAST and window
//! calls. Double-quoted tokens name identifiers in FROM and are string
//! literals elsewhere, which is how SQLite resolves them in practice.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::catalog::{normalize, SchemaCatalog};
use crate::synth::Instance;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at token {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

/// Tables and columns referenced by a query. Names are lower-cased with
/// quoting removed; a column whose table cannot be pinned down has `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlMetadata {
    pub tables: BTreeSet<String>,
    /// Tables in order of first appearance.
    pub table_order: Vec<String>,
    pub columns: BTreeSet<(Option<String>, String)>,
    pub parse_ok: bool,
    /// The outermost query carries an ORDER BY.
    pub ordered: bool,
}

pub fn extract_metadata(sql: &str) -> SqlMetadata {
    parse_metadata(sql).unwrap_or_default()
}

/// Like [`extract_metadata`] but reports the grammar failure.
pub fn parse_metadata(sql: &str) -> Result<SqlMetadata, ParseError> {
    let toks = lex(sql)?;
    let mut p = Parser::new(toks);
    let ordered = p.statement()?;
    Ok(SqlMetadata {
        tables: p.table_order.iter().cloned().collect(),
        table_order: p.table_order,
        columns: p.columns,
        parse_ok: true,
        ordered,
    })
}

/// Whether the outermost query is ordered; `false` when the text does not parse.
pub fn has_top_level_order_by(sql: &str) -> bool {
    parse_metadata(sql).is_ok_and(|m| m.ordered)
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Quote {
    Double,
    Backtick,
    Bracket,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String, Quote),
    Str,
    Num,
    Param,
    Sym(&'static str),
}

const SYMBOLS: [&str; 20] = [
    "==", "!=", "<>", "<=", ">=", "||", "(", ")", ",", ".", ";", "*", "+", "-", "/", "%", "=", "<", ">", "~",
];

fn lex(sql: &str) -> Result<Vec<Tok>, ParseError> {
    let chars: Vec<char> = sql.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |toks: &Vec<Tok>, message: String| ParseError {
        position: toks.len(),
        message,
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            i += 2;
            while i < chars.len() && !(chars[i] == '*' && chars.get(i + 1) == Some(&'/')) {
                i += 1;
            }
            i += 2;
        } else if c == '\'' || c == '"' || c == '`' || c == '[' {
            let close = if c == '[' { ']' } else { c };
            let mut text = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(err(&toks, format!("unterminated {c} quote"))),
                    Some(&ch) if ch == close => {
                        if close != ']' && chars.get(i + 1) == Some(&close) {
                            text.push(close);
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(&ch) => {
                        text.push(ch);
                        i += 1;
                    }
                }
            }
            toks.push(match c {
                '\'' => Tok::Str,
                '"' => Tok::Quoted(text, Quote::Double),
                '`' => Tok::Quoted(text, Quote::Backtick),
                _ => Tok::Quoted(text, Quote::Bracket),
            });
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.') {
                let exp = matches!(chars[i], 'e' | 'E') && matches!(chars.get(i + 1), Some('+' | '-'));
                i += if exp { 2 } else { 1 };
            }
            toks.push(Tok::Num);
        } else if c.is_alphanumeric() || c == '_' || c == '$' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                i += 1;
            }
            toks.push(Tok::Word(chars[start..i].iter().collect()));
        } else if c == '?' || c == ':' || c == '@' {
            i += 1;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            toks.push(Tok::Param);
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let sym = SYMBOLS
                .iter()
                .find(|s| rest.starts_with(**s))
                .ok_or_else(|| err(&toks, format!("unexpected character {c:?}")))?;
            toks.push(Tok::Sym(sym));
            i += sym.chars().count();
        }
    }
    Ok(toks)
}

// ---------------------------------------------------------------- parser

const RESERVED: &[&str] = &[
    "all", "and", "as", "asc", "between", "by", "case", "collate", "cross", "desc", "distinct", "else", "end", "escape",
    "except", "exists", "from", "full", "glob", "group", "having", "in", "inner", "intersect", "is", "join", "left",
    "like", "limit", "natural", "not", "null", "offset", "on", "or", "order", "outer", "regexp", "right", "select",
    "then", "union", "using", "when", "where", "window", "with",
];

fn is_reserved(word: &str) -> bool {
    RESERVED.contains(&word.to_ascii_lowercase().as_str())
}

#[derive(Default)]
struct Scope {
    /// alias or table name -> underlying table; `None` for derived tables and CTEs.
    aliases: BTreeMap<String, Option<String>>,
    tables: Vec<String>,
    derived: bool,
    refs: Vec<(Option<String>, String)>,
    select_aliases: BTreeSet<String>,
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
    scopes: Vec<Scope>,
    ctes: Vec<BTreeSet<String>>,
    table_order: Vec<String>,
    columns: BTreeSet<(Option<String>, String)>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn new(toks: Vec<Tok>) -> Self {
        Self {
            toks,
            pos: 0,
            scopes: Vec::new(),
            ctes: Vec::new(),
            table_order: Vec::new(),
            columns: BTreeSet::new(),
        }
    }

    fn fail<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(ParseError {
            position: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn peek_at(&self, ahead: usize) -> Option<&Tok> {
        self.toks.get(self.pos + ahead)
    }

    fn peek_kw(&self, kw: &str) -> bool {
        self.kw_at(0, kw)
    }

    fn kw_at(&self, ahead: usize, kw: &str) -> bool {
        matches!(self.peek_at(ahead), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        let hit = self.peek_kw(kw);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            self.fail(format!("expected {}", kw.to_uppercase()))
        }
    }

    fn peek_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym)
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        let hit = self.peek_sym(sym);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn expect_sym(&mut self, sym: &str) -> PResult<()> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            self.fail(format!("expected `{sym}`"))
        }
    }

    /// Identifier in name position: bare non-reserved word or any quoted form.
    fn name(&mut self) -> PResult<String> {
        match self.peek().cloned() {
            Some(Tok::Word(w)) if !is_reserved(&w) => {
                self.pos += 1;
                Ok(w.to_lowercase())
            }
            Some(Tok::Quoted(q, _)) => {
                self.pos += 1;
                Ok(q.to_lowercase())
            }
            _ => self.fail("expected identifier"),
        }
    }

    fn optional_alias(&mut self) -> PResult<Option<String>> {
        if self.eat_kw("as") {
            return self.name().map(Some);
        }
        match self.peek() {
            Some(Tok::Word(w)) if !is_reserved(w) => self.name().map(Some),
            Some(Tok::Quoted(..)) => self.name().map(Some),
            Some(Tok::Str) => {
                self.pos += 1;
                Ok(None)
            }
            _ => Ok(None),
        }
    }

    fn statement(&mut self) -> PResult<bool> {
        let ordered = self.query()?;
        while self.eat_sym(";") {}
        if self.pos != self.toks.len() {
            return self.fail("trailing input");
        }
        Ok(ordered)
    }

    fn starts_query(&self) -> bool {
        self.peek_kw("select") || self.peek_kw("with") || self.peek_kw("values")
    }

    /// Full query with optional CTEs, compound operators, ORDER BY and LIMIT.
    /// Returns whether it carries its own ORDER BY.
    fn query(&mut self) -> PResult<bool> {
        let with = self.eat_kw("with");
        if with {
            self.eat_kw("recursive");
            self.ctes.push(BTreeSet::new());
            loop {
                let name = self.name()?;
                if self.eat_sym("(") {
                    self.name_list()?;
                }
                self.expect_kw("as")?;
                self.eat_kw("not");
                self.eat_kw("materialized");
                self.expect_sym("(")?;
                // Registered first so recursive references resolve to the CTE.
                self.ctes.last_mut().expect("cte frame").insert(name);
                self.query()?;
                self.expect_sym(")")?;
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let result = self.compound();
        if with {
            self.ctes.pop();
        }
        result
    }

    fn compound(&mut self) -> PResult<bool> {
        loop {
            self.select_core()?;
            let setop = if self.eat_kw("union") {
                self.eat_kw("all");
                true
            } else {
                self.eat_kw("intersect") || self.eat_kw("except")
            };
            if !setop {
                break;
            }
            self.finish_scope();
        }
        let mut ordered = false;
        if self.peek_kw("order") && self.kw_at(1, "by") {
            self.pos += 2;
            self.ordering_terms()?;
            ordered = true;
        }
        if self.eat_kw("limit") {
            self.expr()?;
            if self.eat_kw("offset") || self.eat_sym(",") {
                self.expr()?;
            }
        }
        self.finish_scope();
        Ok(ordered)
    }

    fn ordering_terms(&mut self) -> PResult<()> {
        loop {
            self.expr()?;
            if !self.eat_kw("asc") {
                self.eat_kw("desc");
            }
            if self.eat_kw("nulls") && !self.eat_kw("first") {
                self.expect_kw("last")?;
            }
            if !self.eat_sym(",") {
                return Ok(());
            }
        }
    }

    fn name_list(&mut self) -> PResult<Vec<String>> {
        let mut out = vec![self.name()?];
        while self.eat_sym(",") {
            out.push(self.name()?);
        }
        self.expect_sym(")")?;
        Ok(out)
    }

    /// One SELECT (or parenthesized query). Leaves its scope pushed.
    fn select_core(&mut self) -> PResult<()> {
        if self.peek_sym("(") {
            self.pos += 1;
            self.query()?;
            self.expect_sym(")")?;
            self.scopes.push(Scope::default());
            return Ok(());
        }
        if self.eat_kw("values") {
            self.scopes.push(Scope::default());
            loop {
                self.expect_sym("(")?;
                self.expr_list_until_close()?;
                if !self.eat_sym(",") {
                    return Ok(());
                }
            }
        }
        self.expect_kw("select")?;
        self.scopes.push(Scope::default());
        if !self.eat_kw("distinct") {
            self.eat_kw("all");
        }
        loop {
            if self.eat_sym("*") {
            } else {
                self.expr()?;
                if let Some(alias) = self.optional_alias()? {
                    self.scope().select_aliases.insert(alias);
                }
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        if self.eat_kw("from") {
            self.from_clause()?;
        }
        if self.eat_kw("where") {
            self.expr()?;
        }
        if self.peek_kw("group") && self.kw_at(1, "by") {
            self.pos += 2;
            self.expr()?;
            while self.eat_sym(",") {
                self.expr()?;
            }
        }
        if self.eat_kw("having") {
            self.expr()?;
        }
        Ok(())
    }

    fn scope(&mut self) -> &mut Scope {
        self.scopes.last_mut().expect("open scope")
    }

    fn finish_scope(&mut self) {
        let Some(scope) = self.scopes.pop() else { return };
        for (qualifier, column) in &scope.refs {
            let table = match qualifier {
                Some(q) => std::iter::once(&scope)
                    .chain(self.scopes.iter().rev())
                    .find_map(|s| s.aliases.get(q))
                    .cloned()
                    .flatten(),
                None if scope.select_aliases.contains(column) => continue,
                None if scope.tables.len() == 1 && !scope.derived => scope.tables.first().cloned(),
                None => None,
            };
            self.columns.insert((table, column.clone()));
        }
    }

    fn from_clause(&mut self) -> PResult<()> {
        self.table_ref()?;
        loop {
            if self.eat_sym(",") {
                self.table_ref()?;
                continue;
            }
            let start = self.pos;
            self.eat_kw("natural");
            if self.eat_kw("left") || self.eat_kw("right") || self.eat_kw("full") {
                self.eat_kw("outer");
            } else if !self.eat_kw("inner") {
                self.eat_kw("cross");
            }
            if !self.eat_kw("join") {
                if self.pos != start {
                    return self.fail("expected JOIN");
                }
                return Ok(());
            }
            self.table_ref()?;
            if self.eat_kw("on") {
                self.expr()?;
            } else if self.eat_kw("using") {
                self.expect_sym("(")?;
                for c in self.name_list()? {
                    self.scope().refs.push((None, c));
                }
            }
        }
    }

    fn is_cte(&self, name: &str) -> bool {
        self.ctes.iter().any(|frame| frame.contains(name))
    }

    fn table_ref(&mut self) -> PResult<()> {
        if self.eat_sym("(") {
            if self.starts_query() {
                self.query()?;
                self.expect_sym(")")?;
                let alias = self.optional_alias()?;
                let scope = self.scope();
                scope.derived = true;
                if let Some(a) = alias {
                    scope.aliases.insert(a, None);
                }
            } else {
                self.from_clause()?;
                self.expect_sym(")")?;
            }
            return Ok(());
        }
        let mut name = self.name()?;
        while self.eat_sym(".") {
            name = self.name()?;
        }
        if self.eat_sym("(") {
            // Table-valued function.
            self.expr_list_until_close()?;
            let alias = self.optional_alias()?;
            let scope = self.scope();
            scope.derived = true;
            scope.aliases.insert(alias.unwrap_or(name), None);
            return Ok(());
        }
        let alias = self.optional_alias()?;
        if self.is_cte(&name) {
            let scope = self.scope();
            scope.derived = true;
            scope.aliases.insert(alias.unwrap_or(name), None);
            return Ok(());
        }
        if !self.table_order.contains(&name) {
            self.table_order.push(name.clone());
        }
        let scope = self.scope();
        if !scope.tables.contains(&name) {
            scope.tables.push(name.clone());
        }
        scope.aliases.insert(name.clone(), Some(name.clone()));
        if let Some(a) = alias {
            scope.aliases.insert(a, Some(name));
        }
        Ok(())
    }

    /// Comma-separated expressions up to and including `)`; may be empty.
    fn expr_list_until_close(&mut self) -> PResult<()> {
        if self.eat_sym(")") {
            return Ok(());
        }
        self.eat_kw("distinct");
        loop {
            if !self.eat_sym("*") {
                self.expr()?;
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        if self.peek_kw("order") && self.kw_at(1, "by") {
            self.pos += 2;
            self.ordering_terms()?;
        }
        self.expect_sym(")")
    }

    fn expr(&mut self) -> PResult<()> {
        self.and_expr()?;
        while self.eat_kw("or") {
            self.and_expr()?;
        }
        Ok(())
    }

    fn and_expr(&mut self) -> PResult<()> {
        self.not_expr()?;
        while self.eat_kw("and") {
            self.not_expr()?;
        }
        Ok(())
    }

    fn not_expr(&mut self) -> PResult<()> {
        if self.eat_kw("not") {
            return self.not_expr();
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<()> {
        self.additive()?;
        loop {
            if ["=", "==", "!=", "<>", "<", ">", "<=", ">="].iter().any(|s| self.eat_sym(s)) {
                self.additive()?;
                continue;
            }
            if self.eat_kw("is") {
                self.eat_kw("not");
                if self.eat_kw("distinct") {
                    self.expect_kw("from")?;
                }
                self.additive()?;
                continue;
            }
            if self.eat_kw("isnull") || self.eat_kw("notnull") {
                continue;
            }
            let negated = self.peek_kw("not")
                && ["in", "like", "glob", "regexp", "match", "between"]
                    .iter()
                    .any(|k| self.kw_at(1, k));
            if negated {
                self.pos += 1;
            }
            if self.eat_kw("in") {
                if self.eat_sym("(") {
                    if self.starts_query() {
                        self.query()?;
                        self.expect_sym(")")?;
                    } else {
                        self.expr_list_until_close()?;
                    }
                } else {
                    self.table_ref_in_expr()?;
                }
            } else if self.eat_kw("like") || self.eat_kw("glob") || self.eat_kw("regexp") || self.eat_kw("match") {
                self.additive()?;
                if self.eat_kw("escape") {
                    self.additive()?;
                }
            } else if self.eat_kw("between") {
                self.additive()?;
                self.expect_kw("and")?;
                self.additive()?;
            } else if negated {
                return self.fail("dangling NOT");
            } else {
                return Ok(());
            }
        }
    }

    /// `x IN table`: SQLite shorthand for a subquery over a table.
    fn table_ref_in_expr(&mut self) -> PResult<()> {
        let mut name = self.name()?;
        while self.eat_sym(".") {
            name = self.name()?;
        }
        if !self.is_cte(&name) && !self.table_order.contains(&name) {
            self.table_order.push(name);
        }
        Ok(())
    }

    fn additive(&mut self) -> PResult<()> {
        self.multiplicative()?;
        while self.eat_sym("+") || self.eat_sym("-") || self.eat_sym("||") {
            self.multiplicative()?;
        }
        Ok(())
    }

    fn multiplicative(&mut self) -> PResult<()> {
        self.unary()?;
        while self.eat_sym("*") || self.eat_sym("/") || self.eat_sym("%") {
            self.unary()?;
        }
        Ok(())
    }

    fn unary(&mut self) -> PResult<()> {
        if self.eat_sym("-") || self.eat_sym("+") || self.eat_sym("~") {
            return self.unary();
        }
        self.primary()?;
        if self.eat_kw("collate") {
            self.name()?;
        }
        Ok(())
    }

    fn primary(&mut self) -> PResult<()> {
        let Some(tok) = self.peek().cloned() else {
            return self.fail("unexpected end of input");
        };
        match tok {
            Tok::Num | Tok::Str | Tok::Param => {
                self.pos += 1;
                Ok(())
            }
            Tok::Quoted(_, Quote::Double) => {
                self.pos += 1;
                Ok(())
            }
            Tok::Sym("(") => {
                self.pos += 1;
                if self.starts_query() {
                    self.query()?;
                } else {
                    self.expr()?;
                    while self.eat_sym(",") {
                        self.expr()?;
                    }
                }
                self.expect_sym(")")
            }
            Tok::Word(w) if w.eq_ignore_ascii_case("null") => {
                self.pos += 1;
                Ok(())
            }
            Tok::Word(w) if w.eq_ignore_ascii_case("case") => {
                self.pos += 1;
                if !self.peek_kw("when") {
                    self.expr()?;
                }
                while self.eat_kw("when") {
                    self.expr()?;
                    self.expect_kw("then")?;
                    self.expr()?;
                }
                if self.eat_kw("else") {
                    self.expr()?;
                }
                self.expect_kw("end")
            }
            Tok::Word(w) if w.eq_ignore_ascii_case("exists") => {
                self.pos += 1;
                self.expect_sym("(")?;
                self.query()?;
                self.expect_sym(")")
            }
            Tok::Word(w) if w.eq_ignore_ascii_case("cast") && self.peek_at(1) == Some(&Tok::Sym("(")) => {
                self.pos += 2;
                self.expr()?;
                self.expect_kw("as")?;
                while matches!(self.peek(), Some(Tok::Word(_))) {
                    self.pos += 1;
                }
                if self.eat_sym("(") {
                    self.expr_list_until_close()?;
                }
                self.expect_sym(")")
            }
            Tok::Word(ref w) if is_reserved(w) => self.fail(format!("unexpected keyword {}", w.to_uppercase())),
            Tok::Word(_) | Tok::Quoted(..) => self.reference(),
            Tok::Sym(s) => self.fail(format!("unexpected `{s}`")),
        }
    }

    /// Column reference, qualified reference, or function call.
    fn reference(&mut self) -> PResult<()> {
        let first = self.name()?;
        if self.eat_sym("(") {
            self.expr_list_until_close()?;
            if self.eat_kw("filter") {
                self.expect_sym("(")?;
                self.expect_kw("where")?;
                self.expr()?;
                self.expect_sym(")")?;
            }
            if self.eat_kw("over") {
                self.window_spec()?;
            }
            return Ok(());
        }
        let mut parts = vec![first];
        while self.eat_sym(".") {
            if self.eat_sym("*") {
                return Ok(());
            }
            parts.push(self.name()?);
        }
        let column = parts.pop().expect("non-empty");
        if parts.is_empty() && ["true", "false", "current_date", "current_time", "current_timestamp"].contains(&column.as_str()) {
            return Ok(());
        }
        let qualifier = parts.pop();
        self.scope().refs.push((qualifier, column));
        Ok(())
    }

    fn window_spec(&mut self) -> PResult<()> {
        if !self.eat_sym("(") {
            self.name()?;
            return Ok(());
        }
        if self.eat_kw("partition") {
            self.expect_kw("by")?;
            self.expr()?;
            while self.eat_sym(",") {
                self.expr()?;
            }
        }
        if self.peek_kw("order") && self.kw_at(1, "by") {
            self.pos += 2;
            self.ordering_terms()?;
        }
        // Frame clauses are skipped token by token.
        let mut depth = 0usize;
        loop {
            match self.peek() {
                None => return self.fail("unterminated window"),
                Some(Tok::Sym("(")) => depth += 1,
                Some(Tok::Sym(")")) if depth == 0 => break,
                Some(Tok::Sym(")")) => depth -= 1,
                _ => {}
            }
            self.pos += 1;
        }
        self.expect_sym(")")
    }
}

// ---------------------------------------------------------------- adaptation

/// One NL2SQL benchmark record (Spider and Bird layouts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub question: String,
    #[serde(alias = "SQL")]
    pub query: String,
    pub db_id: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset is not a JSON record list: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptStats {
    pub total: usize,
    pub kept: usize,
    pub parse_failures: usize,
    pub unknown_database: usize,
    pub unresolved_table: usize,
    pub no_tables: usize,
}

impl AdaptStats {
    pub fn parse_rate(&self) -> f64 {
        if self.total == 0 {
            return 1.0;
        }
        1.0 - self.parse_failures as f64 / self.total as f64
    }
}

enum Outcome {
    Kept(Instance),
    ParseFailure,
    UnknownDatabase,
    UnresolvedTable,
    NoTables,
}

fn adapt_one(record: &DatasetRecord, catalog: &SchemaCatalog) -> Outcome {
    let Some(db) = catalog.resolve_database(&record.db_id) else {
        return Outcome::UnknownDatabase;
    };
    let meta = match parse_metadata(&record.query) {
        Ok(m) => m,
        Err(e) => {
            warn!(db = %record.db_id, error = %e, "query does not parse; excluded");
            return Outcome::ParseFailure;
        }
    };
    if meta.table_order.is_empty() {
        return Outcome::NoTables;
    }
    let mut tables = Vec::with_capacity(meta.table_order.len());
    for t in &meta.table_order {
        match db.table(&normalize(t)) {
            Some(table) => tables.push(table.normalized.clone()),
            None => {
                warn!(db = %db.id, table = %t, "query references a table missing from the catalog; excluded");
                return Outcome::UnresolvedTable;
            }
        }
    }
    Outcome::Kept(Instance {
        question: record.question.clone(),
        database: db.id.clone(),
        tables,
        seed: None,
        questioner: None,
        sql: Some(record.query.clone()),
    })
}

/// Turns benchmark records into routing instances, dropping and counting the
/// ones that cannot be parsed or resolved.
pub fn adapt_dataset(records: &[DatasetRecord], catalog: &SchemaCatalog) -> (Vec<Instance>, AdaptStats) {
    let outcomes: Vec<Outcome> = records.par_iter().map(|r| adapt_one(r, catalog)).collect();
    let mut stats = AdaptStats {
        total: records.len(),
        ..AdaptStats::default()
    };
    let mut out = Vec::new();
    for (record, outcome) in records.iter().zip(outcomes) {
        match outcome {
            Outcome::Kept(inst) => out.push(inst),
            Outcome::ParseFailure => stats.parse_failures += 1,
            Outcome::UnknownDatabase => {
                warn!(db = %record.db_id, "unknown database; instance dropped");
                stats.unknown_database += 1;
            }
            Outcome::UnresolvedTable => stats.unresolved_table += 1,
            Outcome::NoTables => stats.no_tables += 1,
        }
    }
    stats.kept = out.len();
    (out, stats)
}
