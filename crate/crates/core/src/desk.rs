//! Desk-scale routing comparison: the fitted router against BM25 on the
//! seeded synthetic catalog, with template questions from disjoint seeds.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::baseline::{index_tables, DEFAULT_B, DEFAULT_K1, DEFAULT_TOP};
use crate::eval::{evaluate_routing, Bm25Method, EvalOptions, RouterMethod, RoutingReport};
use crate::fixtures::desk_catalog;
use crate::graph::{build_graph, DEFAULT_JOIN_THRESHOLD};
use crate::router::{fit_scorer, DecodeConfig, FitParams, NaiveBayesScorer, SchemaRouter};
use crate::synth::{synthesize_corpus, CorpusConfig, Lexicon, TemplateQuestioner, DEFAULT_MAX_TABLES, DEFAULT_SYNONYM_RATE};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskConfig {
    pub catalog_seed: u64,
    pub train_size: usize,
    pub train_seed: u64,
    pub test_size: usize,
    pub test_seed: u64,
    pub synonym_rate: f64,
    pub fit: FitParams,
    pub decode: DecodeConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            catalog_seed: 7,
            train_size: 6000,
            train_seed: 1,
            test_size: 600,
            test_seed: 2,
            synonym_rate: DEFAULT_SYNONYM_RATE,
            fit: FitParams::default(),
            decode: DecodeConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskOutcome {
    pub router: RoutingReport,
    pub bm25: RoutingReport,
    pub elapsed: Duration,
}

impl DeskOutcome {
    /// Router minus BM25 database R@1, in points.
    pub fn database_r1_gap(&self) -> f64 {
        self.router.overall.database_recall[&1] - self.bm25.overall.database_recall[&1]
    }

    /// Router minus BM25 table R@5, in points.
    pub fn table_r5_gap(&self) -> f64 {
        self.router.overall.table_recall[&5] - self.bm25.overall.table_recall[&5]
    }

    /// Router mAP drop from the smallest to the largest size bucket,
    /// divided by the BM25 drop.
    pub fn degradation_ratio(&self) -> f64 {
        drop(&self.router) / drop(&self.bm25)
    }
}

/// Table mAP of the `<=3` bucket minus that of the `>=8` bucket.
pub fn drop(report: &RoutingReport) -> f64 {
    let first = &report.by_database_size.first().expect("size buckets").metrics;
    let last = &report.by_database_size.last().expect("size buckets").metrics;
    first.table_map - last.table_map
}

#[derive(Debug, thiserror::Error)]
#[error("desk experiment: {0}")]
pub struct DeskError(String);

pub fn run_desk(cfg: &DeskConfig) -> Result<DeskOutcome, DeskError> {
    let err = |e: &dyn std::fmt::Display| DeskError(e.to_string());
    let start = Instant::now();
    let catalog = desk_catalog(cfg.catalog_seed);
    let graph = build_graph(&catalog, DEFAULT_JOIN_THRESHOLD);
    let questioner = TemplateQuestioner::new(&catalog, Lexicon::builtin(), cfg.synonym_rate);
    let corpus = |n, seed| {
        synthesize_corpus(
            &graph,
            &catalog,
            CorpusConfig {
                n,
                max_tables: DEFAULT_MAX_TABLES,
                seed,
            },
            &questioner,
        )
    };
    let train = corpus(cfg.train_size, cfg.train_seed).map_err(|e| err(&e))?;
    let test = corpus(cfg.test_size, cfg.test_seed).map_err(|e| err(&e))?;

    let vocab = Vocabulary::from_catalog(&catalog);
    let model = fit_scorer(&train, cfg.fit).map_err(|e| err(&e))?;
    let scorer = NaiveBayesScorer::new(model, &vocab, &graph);
    let router = SchemaRouter::new(graph.clone(), vocab, cfg.decode).map_err(|e| err(&e))?;
    let opts = EvalOptions::default();
    let method = RouterMethod {
        router: &router,
        scorer: &scorer,
        label: "router".into(),
    };
    let ours = evaluate_routing(&method, &test, Some(&catalog), &opts).map_err(|e| err(&e))?;
    let bm25 = Bm25Method {
        index: index_tables(&catalog, DEFAULT_K1, DEFAULT_B),
        top: DEFAULT_TOP,
    };
    let theirs = evaluate_routing(&bm25, &test, Some(&catalog), &opts).map_err(|e| err(&e))?;
    Ok(DeskOutcome {
        router: ours,
        bm25: theirs,
        elapsed: start.elapsed(),
    })
}
