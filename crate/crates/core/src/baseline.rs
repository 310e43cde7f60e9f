//! Okapi BM25 over one document per table (normalized table name plus
//! column names), and database ranking by mean retrieved-table score.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{normalize, SchemaCatalog};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;
/// Tables retrieved before ranking databases.
pub const DEFAULT_TOP: usize = 100;

/// Normalization followed by splitting on `_` and whitespace.
pub fn analyze(text: &str) -> Vec<String> {
    normalize(text)
        .split('_')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TableKey {
    pub database: String,
    pub table: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    pub k1: f64,
    pub b: f64,
    docs: Vec<TableKey>,
    lengths: Vec<f64>,
    avgdl: f64,
    /// term -> (doc index, term frequency), doc order.
    postings: HashMap<String, Vec<(usize, u32)>>,
}

impl Bm25Index {
    /// Index over arbitrary `(key, text)` documents.
    pub fn from_documents(documents: Vec<(TableKey, String)>, k1: f64, b: f64) -> Self {
        let mut docs = Vec::with_capacity(documents.len());
        let mut lengths = Vec::with_capacity(documents.len());
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        for (i, (key, text)) in documents.into_iter().enumerate() {
            let terms = analyze(&text);
            lengths.push(terms.len() as f64);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i, n));
            }
            docs.push(key);
        }
        let avgdl = if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().sum::<f64>() / lengths.len() as f64
        };
        Self {
            k1,
            b,
            docs,
            lengths,
            avgdl,
            postings,
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.document_frequency(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Scores of every document with at least one query term.
    fn scores(&self, query: &str) -> HashMap<usize, f64> {
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for term in analyze(query) {
            let Some(list) = self.postings.get(&term) else { continue };
            let idf = self.idf(&term);
            for &(doc, tf) in list {
                let tf = tf as f64;
                let norm = if self.avgdl > 0.0 {
                    1.0 - self.b + self.b * self.lengths[doc] / self.avgdl
                } else {
                    1.0
                };
                *acc.entry(doc).or_insert(0.0) += idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm);
            }
        }
        acc
    }

    pub fn score(&self, query: &str, key: &TableKey) -> f64 {
        let Some(i) = self.docs.iter().position(|k| k == key) else {
            return 0.0;
        };
        self.scores(query).get(&i).copied().unwrap_or(0.0)
    }
}

/// One document per table: the table name followed by its column names.
pub fn index_tables(catalog: &SchemaCatalog, k1: f64, b: f64) -> Bm25Index {
    let docs = catalog
        .databases()
        .iter()
        .flat_map(|db| {
            db.tables.iter().map(|t| {
                let mut text = t.normalized.clone();
                for c in &t.columns {
                    text.push(' ');
                    text.push_str(&c.normalized);
                }
                (
                    TableKey {
                        database: db.id.clone(),
                        table: t.normalized.clone(),
                    },
                    text,
                )
            })
        })
        .collect();
    Bm25Index::from_documents(docs, k1, b)
}

/// Best `top` documents with positive score; ties by key.
pub fn bm25_retrieve(index: &Bm25Index, query: &str, top: usize) -> Vec<(TableKey, f64)> {
    let mut hits: Vec<(TableKey, f64)> = index
        .scores(query)
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(i, s)| (index.docs[i].clone(), s))
        .collect();
    hits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    hits.truncate(top);
    hits
}

/// Databases ranked by the mean score of their retrieved tables.
pub fn rank_databases_from_tables(tables: &[(TableKey, f64)]) -> Vec<(String, f64)> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (key, score) in tables {
        let e = sums.entry(key.database.as_str()).or_insert((0.0, 0));
        e.0 += score;
        e.1 += 1;
    }
    let mut out: Vec<(String, f64)> = sums
        .into_iter()
        .map(|(db, (sum, n))| (db.to_string(), sum / n as f64))
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn key(db: &str, t: &str) -> TableKey {
        TableKey {
            database: db.into(),
            table: t.into(),
        }
    }

    fn two_docs(b: f64) -> Bm25Index {
        Bm25Index::from_documents(
            vec![(key("x", "d1"), "singer concert".into()), (key("x", "d2"), "river state".into())],
            1.2,
            b,
        )
    }

    #[test]
    fn two_document_example() {
        let idx = two_docs(0.75);
        let hits = bm25_retrieve(&idx, "singer", 10);
        assert_eq!(hits.len(), 1);
        // IDF = ln((2 - 1 + 0.5) / (1 + 0.5) + 1) = ln 2; the tf factor is 1.
        assert!((hits[0].1 - 2f64.ln()).abs() < 1e-12);
        assert_eq!(idx.score("singer", &key("x", "d2")), 0.0);
        assert!(bm25_retrieve(&idx, "volcano", 10).is_empty());
    }

    #[test]
    fn single_document_avgdl() {
        let idx = Bm25Index::from_documents(vec![(key("x", "t"), "a b c".into())], DEFAULT_K1, DEFAULT_B);
        assert_eq!(idx.avgdl(), 3.0);
    }

    #[test]
    fn database_ranking_by_mean() {
        let ranked = rank_databases_from_tables(&[(key("dbA", "t1"), 2.0), (key("dbA", "t2"), 1.0), (key("dbB", "t3"), 1.8)]);
        assert_eq!(ranked, vec![("dbB".to_string(), 1.8), ("dbA".to_string(), 1.5)]);
        assert!(rank_databases_from_tables(&[]).is_empty());
    }

    #[test]
    fn catalog_index() {
        let cat = fixtures::toy_catalog();
        let idx = index_tables(&cat, DEFAULT_K1, DEFAULT_B);
        assert_eq!(idx.len(), cat.table_count());
        assert_eq!(idx, index_tables(&cat, DEFAULT_K1, DEFAULT_B));
        let top = bm25_retrieve(&idx, "singer song name", 1);
        assert_eq!(top[0].0, key("concert_singer", "singer"));
    }
}
