//! Routing metrics and experiment reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::baseline::{bm25_retrieve, index_tables, rank_databases_from_tables, Bm25Index, DEFAULT_TOP};
use crate::catalog::SchemaCatalog;
use crate::router::{Scorer, SchemaRouter};
use crate::synth::Instance;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("score vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("resample count must be at least 1")]
    ZeroResamples,
    #[error("dataset is empty")]
    EmptyDataset,
}

/// |gold ∩ ranked[..k]| / |gold|.
pub fn recall_at_k<T: Ord>(gold: &BTreeSet<T>, ranked: &[T], k: usize) -> Result<f64, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    let mut seen = BTreeSet::new();
    let hits = ranked
        .iter()
        .take(k)
        .filter(|r| gold.contains(*r) && seen.insert(*r))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Mean over gold items of the precision at the rank where each is
/// retrieved; gold items never retrieved contribute 0.
pub fn average_precision<T: Ord>(gold: &BTreeSet<T>, ranked: &[T]) -> Result<f64, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let mut seen = BTreeSet::new();
    let mut terms = Vec::new();
    for (i, r) in ranked.iter().enumerate() {
        if gold.contains(r) && seen.insert(r) {
            terms.push((terms.len() as u128 + 1, i as u128 + 1));
        }
    }
    // Summed as an exact fraction where it fits, so the result is the
    // correctly rounded value of the rational AP.
    Ok(exact_mean(&terms, gold.len() as u128)
        .unwrap_or_else(|| terms.iter().map(|&(h, r)| h as f64 / r as f64).sum::<f64>() / gold.len() as f64))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// (Σ num/den) / count as f64, or `None` on overflow.
fn exact_mean(terms: &[(u128, u128)], count: u128) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for &(n, d) in terms {
        let g = gcd(den, d);
        let lcm = (den / g).checked_mul(d)?;
        num = num.checked_mul(lcm / den)?.checked_add(n.checked_mul(lcm / d)?)?;
        den = lcm;
        let g = gcd(num, den);
        if g > 1 {
            num /= g;
            den /= g;
        }
    }
    den = den.checked_mul(count)?;
    let g = gcd(num, den);
    let (num, den) = (num / g.max(1), den / g.max(1));
    // Both fit in f64's exact integer range: the quotient is correctly rounded.
    (num < 1 << 53 && den < 1 << 53).then(|| num as f64 / den as f64)
}

pub fn mean_average_precision<T: Ord>(judgments: &[(BTreeSet<T>, Vec<T>)]) -> Result<f64, MetricError> {
    if judgments.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let mut total = 0.0;
    for (gold, ranked) in judgments {
        total += average_precision(gold, ranked)?;
    }
    Ok(total / judgments.len() as f64)
}

/// Two-sided paired bootstrap p-value for mean(a) != mean(b), using the
/// shifted-difference null.
pub fn paired_bootstrap(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if resamples == 0 {
        return Err(MetricError::ZeroResamples);
    }
    if a.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let n = a.len();
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = diffs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = diffs.iter().map(|d| d - observed).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-12;
    let mut extreme = 0usize;
    for _ in 0..resamples {
        let mean = (0..n).map(|_| centered[rng.gen_range(0..n)]).sum::<f64>() / n as f64;
        if mean.abs() >= observed.abs() - tol {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (resamples + 1) as f64)
}

/// Ranked output of a routing method for one question.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub databases: Vec<String>,
    /// `(database, table)` pairs, best first.
    pub tables: Vec<(String, String)>,
}

pub trait RoutingMethod: Sync {
    fn name(&self) -> &str;
    fn predict(&self, question: &str) -> Result<Prediction, String>;
}

/// The schema router with a scorer.
pub struct RouterMethod<'a> {
    pub router: &'a SchemaRouter,
    pub scorer: &'a dyn Scorer,
    pub label: String,
}

impl RoutingMethod for RouterMethod<'_> {
    fn name(&self) -> &str {
        &self.label
    }

    fn predict(&self, question: &str) -> Result<Prediction, String> {
        let r = self
            .router
            .route(question, usize::MAX, self.scorer)
            .map_err(|e| e.to_string())?;
        Ok(Prediction {
            databases: r.database_ranking(),
            tables: r.table_ranking(),
        })
    }
}

/// BM25 table retrieval; databases ranked by mean retrieved-table score.
pub struct Bm25Method {
    pub index: Bm25Index,
    pub top: usize,
}

impl RoutingMethod for Bm25Method {
    fn name(&self) -> &str {
        "bm25"
    }

    fn predict(&self, question: &str) -> Result<Prediction, String> {
        let tables = bm25_retrieve(&self.index, question, self.top);
        Ok(Prediction {
            databases: rank_databases_from_tables(&tables).into_iter().map(|(d, _)| d).collect(),
            tables: tables.into_iter().map(|(k, _)| (k.database, k.table)).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub database_ks: Vec<usize>,
    pub table_ks: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            database_ks: vec![1, 5],
            table_ks: vec![5, 15],
        }
    }
}

/// Per-instance metric values, fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub database_recall: Vec<f64>,
    pub table_recall: Vec<f64>,
    pub table_ap: f64,
    pub database_size: Option<usize>,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub instances: usize,
    /// Keyed by k; percentages.
    pub database_recall: BTreeMap<usize, f64>,
    pub table_recall: BTreeMap<usize, f64>,
    pub table_map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBucket {
    pub label: String,
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub mean_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub method: String,
    pub failures: usize,
    pub overall: MetricSummary,
    /// Breakdown by the number of tables in the gold database.
    pub by_database_size: Vec<SizeBucket>,
    pub per_instance: Vec<InstanceScores>,
    /// Wall-clock measurements; excluded from reproducibility comparisons.
    pub timing: Timing,
}

pub const SIZE_BUCKETS: [(&str, usize, usize); 4] = [("<=3", 0, 3), ("4-5", 4, 5), ("6-7", 6, 7), (">=8", 8, usize::MAX)];

fn summarize(scores: &[&InstanceScores], opts: &EvalOptions) -> MetricSummary {
    let n = scores.len().max(1) as f64;
    let mean_pct = |f: &dyn Fn(&InstanceScores) -> f64| 100.0 * scores.iter().map(|s| f(s)).sum::<f64>() / n;
    MetricSummary {
        instances: scores.len(),
        database_recall: opts
            .database_ks
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, mean_pct(&|s| s.database_recall[i])))
            .collect(),
        table_recall: opts
            .table_ks
            .iter()
            .enumerate()
            .map(|(i, &k)| (k, mean_pct(&|s| s.table_recall[i])))
            .collect(),
        table_map: mean_pct(&|s| s.table_ap),
    }
}

fn score_instance(inst: &Instance, pred: Option<&Prediction>, opts: &EvalOptions, size: Option<usize>) -> InstanceScores {
    let gold_db = BTreeSet::from([inst.database.clone()]);
    let gold_tables: BTreeSet<(String, String)> =
        inst.tables.iter().map(|t| (inst.database.clone(), t.clone())).collect();
    let empty = Prediction::default();
    let p = pred.unwrap_or(&empty);
    InstanceScores {
        database_recall: opts.database_ks.iter().map(|&k| recall_at_k(&gold_db, &p.databases, k).unwrap_or(0.0)).collect(),
        table_recall: if gold_tables.is_empty() {
            vec![0.0; opts.table_ks.len()]
        } else {
            opts.table_ks.iter().map(|&k| recall_at_k(&gold_tables, &p.tables, k).unwrap_or(0.0)).collect()
        },
        table_ap: average_precision(&gold_tables, &p.tables).unwrap_or(0.0),
        database_size: size,
        failed: pred.is_none(),
    }
}

/// Runs `method` over `dataset`. A failing instance counts as zero recall.
/// `catalog` supplies database sizes for the breakdown.
pub fn evaluate_routing(
    method: &dyn RoutingMethod,
    dataset: &[Instance],
    catalog: Option<&SchemaCatalog>,
    opts: &EvalOptions,
) -> Result<RoutingReport, MetricError> {
    if dataset.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    if opts.database_ks.iter().chain(&opts.table_ks).any(|&k| k == 0) {
        return Err(MetricError::ZeroK);
    }
    let results: Vec<(InstanceScores, f64)> = dataset
        .par_iter()
        .map(|inst| {
            let start = Instant::now();
            let pred = match method.predict(&inst.question) {
                Ok(p) => Some(p),
                Err(e) => {
                    warn!(method = method.name(), question = %inst.question, error = %e, "routing failed");
                    None
                }
            };
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            let size = catalog
                .and_then(|c| c.resolve_database(&inst.database))
                .map(|d| d.tables.len());
            (score_instance(inst, pred.as_ref(), opts, size), elapsed)
        })
        .collect();
    let mean_latency_ms = results.iter().map(|(_, ms)| ms).sum::<f64>() / results.len() as f64;
    let per_instance: Vec<InstanceScores> = results.into_iter().map(|(s, _)| s).collect();
    let all: Vec<&InstanceScores> = per_instance.iter().collect();
    let by_database_size = if catalog.is_some() {
        SIZE_BUCKETS
            .iter()
            .map(|(label, lo, hi)| {
                let members: Vec<&InstanceScores> = per_instance
                    .iter()
                    .filter(|s| s.database_size.is_some_and(|n| (*lo..=*hi).contains(&n)))
                    .collect();
                SizeBucket {
                    label: label.to_string(),
                    metrics: summarize(&members, opts),
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(RoutingReport {
        method: method.name().to_string(),
        failures: per_instance.iter().filter(|s| s.failed).count(),
        overall: summarize(&all, opts),
        by_database_size,
        per_instance,
        timing: Timing { mean_latency_ms },
    })
}

/// Text table in the layout of the usual routing results table.
pub fn render_reports(reports: &[RoutingReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut out = String::new();
    let mut header = format!("{:<16}", "Method");
    for k in first.overall.database_recall.keys() {
        let _ = write!(header, " {:>9}", format!("DB R@{k}"));
    }
    for k in first.overall.table_recall.keys() {
        let _ = write!(header, " {:>10}", format!("Tbl R@{k}"));
    }
    let _ = write!(header, " {:>8}", "Tbl mAP");
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{}", "-".repeat(header.len()));
    for r in reports {
        let _ = write!(out, "{:<16}", r.method);
        for v in r.overall.database_recall.values() {
            let _ = write!(out, " {v:>9.2}");
        }
        for v in r.overall.table_recall.values() {
            let _ = write!(out, " {v:>10.2}");
        }
        let _ = writeln!(out, " {:>8.2}", r.overall.table_map);
    }
    if reports.iter().any(|r| !r.by_database_size.is_empty()) {
        let _ = writeln!(out, "\nTable mAP by database size");
        let _ = write!(out, "{:<16}", "Method");
        for (label, ..) in SIZE_BUCKETS {
            let _ = write!(out, " {label:>8}");
        }
        let _ = writeln!(out);
        for r in reports {
            let _ = write!(out, "{:<16}", r.method);
            for b in &r.by_database_size {
                if b.metrics.instances == 0 {
                    let _ = write!(out, " {:>8}", "-");
                } else {
                    let _ = write!(out, " {:>8.2}", b.metrics.table_map);
                }
            }
            let _ = writeln!(out);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Tuning {
    pub k1: f64,
    pub b: f64,
    pub table_map: f64,
}

pub const TUNE_K1_GRID: [f64; 6] = [0.6, 0.9, 1.2, 1.5, 1.8, 2.1];
pub const TUNE_B_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Grid search of BM25 `k1` and `b` by table mAP on `dataset`.
pub fn tune_bm25(
    catalog: &SchemaCatalog,
    dataset: &[Instance],
    k1_grid: &[f64],
    b_grid: &[f64],
) -> Result<Bm25Tuning, MetricError> {
    let opts = EvalOptions::default();
    let mut best: Option<Bm25Tuning> = None;
    for &k1 in k1_grid {
        for &b in b_grid {
            let method = Bm25Method {
                index: index_tables(catalog, k1, b),
                top: DEFAULT_TOP,
            };
            let map = evaluate_routing(&method, dataset, None, &opts)?.overall.table_map;
            if best.map_or(true, |t| map > t.table_map) {
                best = Some(Bm25Tuning { k1, b, table_map: map });
            }
        }
    }
    best.ok_or(MetricError::EmptyDataset)
}
