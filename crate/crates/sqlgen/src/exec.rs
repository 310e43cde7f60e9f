//! Execution comparison of a predicted query against the gold query on a
//! SQLite database file.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use dbroute::sqlparse::has_top_level_order_by;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use thiserror::Error;

pub const STATEMENT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("cannot open {path}: {reason}")]
    Open { path: String, reason: String },
    #[error("gold query failed: {0}")]
    Gold(String),
}

pub type Rows = Vec<Vec<String>>;

/// Canonical cell text: numbers in shortest round-trip form (so 2 and 2.0
/// agree), text trimmed, blobs in hex.
fn cell(v: ValueRef<'_>) -> String {
    match v {
        ValueRef::Null => "NULL".into(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(r) => {
            if r == 0.0 {
                "0".into()
            } else {
                r.to_string()
            }
        }
        ValueRef::Text(t) => String::from_utf8_lossy(t).trim().to_string(),
        ValueRef::Blob(b) => b.iter().map(|x| format!("{x:02x}")).collect(),
    }
}

pub fn open_readonly(path: &Path) -> Result<Connection, ExecError> {
    Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX).map_err(|e| {
        ExecError::Open {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    })
}

/// Runs one query, aborting it after `timeout`.
pub fn run_query(conn: &Connection, sql: &str, timeout: Duration) -> Result<Rows, String> {
    let start = Instant::now();
    conn.progress_handler(10_000, Some(move || start.elapsed() > timeout));
    let result = (|| {
        let mut stmt = conn.prepare(sql).map_err(|e| e.to_string())?;
        let n = stmt.column_count();
        let mut rows = stmt.query([]).map_err(|e| e.to_string())?;
        let mut out = Vec::new();
        while let Some(row) = rows.next().map_err(|e| e.to_string())? {
            out.push((0..n).map(|i| row.get_ref(i).map(cell).unwrap_or_default()).collect());
        }
        Ok(out)
    })();
    conn.progress_handler(0, None::<fn() -> bool>);
    result
}

fn column(rows: &Rows, i: usize) -> Vec<&str> {
    let mut c: Vec<&str> = rows.iter().map(|r| r[i].as_str()).collect();
    c.sort_unstable();
    c
}

fn permuted(rows: &Rows, perm: &[usize]) -> Rows {
    rows.iter().map(|r| perm.iter().map(|&i| r[i].clone()).collect()).collect()
}

fn multiset(rows: Rows) -> BTreeMap<Vec<String>, usize> {
    let mut m = BTreeMap::new();
    for r in rows {
        *m.entry(r).or_insert(0) += 1;
    }
    m
}

/// True if some column permutation of `pred` equals `gold`, as sequences
/// when `ordered` and as row multisets otherwise.
pub fn results_match(pred: &Rows, gold: &Rows, ordered: bool) -> bool {
    if pred.len() != gold.len() {
        return false;
    }
    let width = gold.first().map_or(0, Vec::len);
    if pred.first().map_or(0, Vec::len) != width {
        return pred.is_empty() && gold.is_empty();
    }
    // Pred columns whose value multiset equals each gold column's.
    let options: Vec<Vec<usize>> = (0..width)
        .map(|g| {
            let target = column(gold, g);
            (0..width).filter(|&p| column(pred, p) == target).collect()
        })
        .collect();
    let gold_set = (!ordered).then(|| multiset(gold.clone()));
    let mut perm = Vec::with_capacity(width);
    let mut used = vec![false; width];
    let mut budget = 10_000usize;
    search(&options, &mut perm, &mut used, &mut budget, &mut |perm| {
        let candidate = permuted(pred, perm);
        match &gold_set {
            Some(g) => multiset(candidate) == *g,
            None => candidate == *gold,
        }
    })
}

fn search(
    options: &[Vec<usize>],
    perm: &mut Vec<usize>,
    used: &mut [bool],
    budget: &mut usize,
    accept: &mut dyn FnMut(&[usize]) -> bool,
) -> bool {
    if perm.len() == options.len() {
        *budget = budget.saturating_sub(1);
        return accept(perm);
    }
    for &p in &options[perm.len()] {
        if used[p] || *budget == 0 {
            continue;
        }
        used[p] = true;
        perm.push(p);
        if search(options, perm, used, budget, accept) {
            return true;
        }
        perm.pop();
        used[p] = false;
    }
    false
}

/// Executes both queries on `db_file`. A failing prediction is a mismatch;
/// a failing gold query is an error so the instance can be excluded.
pub fn execution_match(sql_pred: &str, sql_gold: &str, db_file: &Path) -> Result<bool, ExecError> {
    execution_match_with(sql_pred, sql_gold, db_file, STATEMENT_TIMEOUT)
}

pub fn execution_match_with(sql_pred: &str, sql_gold: &str, db_file: &Path, timeout: Duration) -> Result<bool, ExecError> {
    let conn = open_readonly(db_file)?;
    let gold = run_query(&conn, sql_gold, timeout).map_err(ExecError::Gold)?;
    if sql_pred.trim().is_empty() {
        return Ok(false);
    }
    let Ok(pred) = run_query(&conn, sql_pred, timeout) else {
        return Ok(false);
    };
    Ok(results_match(&pred, &gold, has_top_level_order_by(sql_gold)))
}
