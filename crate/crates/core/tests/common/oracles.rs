//! Brute-force reference implementations shared by the integration and
//! acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};

use dbroute::catalog::normalize;
use dbroute::graph::{QuerySchema, SchemaGraph};
use dbroute::router::{Scorer, SchemaRouter};
use dbroute::vocab::{TokenId, Vocabulary, EOS, SEP};

/// Every complete token sequence the decoding rule admits: a database, then
/// up to `max_tables` distinct tables each adjacent to an earlier one.
pub fn valid_sequences(graph: &SchemaGraph, vocab: &Vocabulary, max_tables: usize) -> Vec<Vec<TokenId>> {
    fn extend(
        graph: &SchemaGraph,
        vocab: &Vocabulary,
        db: &str,
        chosen: &mut Vec<String>,
        prefix: &mut Vec<TokenId>,
        max_tables: usize,
        out: &mut Vec<Vec<TokenId>>,
    ) {
        if !chosen.is_empty() {
            let mut done = prefix.clone();
            done.push(EOS);
            out.push(done);
        }
        if chosen.len() == max_tables {
            return;
        }
        let tables: Vec<String> = graph.tables(db).map(str::to_string).collect();
        for t in tables {
            if chosen.contains(&t) {
                continue;
            }
            if !chosen.is_empty() && !chosen.iter().any(|c| graph.table_edge(db, c, &t).is_some()) {
                continue;
            }
            let mark = prefix.len();
            prefix.extend(vocab.encode(&t));
            prefix.push(SEP);
            chosen.push(t);
            extend(graph, vocab, db, chosen, prefix, max_tables, out);
            chosen.pop();
            prefix.truncate(mark);
        }
    }

    let mut out = Vec::new();
    for db in graph.databases() {
        let mut prefix = vocab.encode(&normalize(db));
        prefix.push(SEP);
        extend(graph, vocab, db, &mut Vec::new(), &mut prefix, max_tables, &mut out);
    }
    out
}

/// Next tokens of admitted sequences that start with `prefix`.
pub fn allowed_by_enumeration(sequences: &[Vec<TokenId>], prefix: &[TokenId]) -> BTreeSet<TokenId> {
    sequences
        .iter()
        .filter(|s| s.len() > prefix.len() && s.starts_with(prefix))
        .map(|s| s[prefix.len()])
        .collect()
}

fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - z).collect()
}

/// Plain beam search of width `beams` over the router's constraint:
/// finished hypotheses stay in the pool; ties break on the token sequence.
pub fn beam_search(router: &SchemaRouter, question: &str, scorer: &dyn Scorer, beams: usize) -> Vec<(Vec<TokenId>, f64)> {
    let mut session = scorer.session(question).unwrap();
    // (tokens, score, finished)
    let mut pool: Vec<(Vec<TokenId>, f64, bool)> = vec![(Vec::new(), 0.0, false)];
    for _ in 0..router.config().max_steps {
        if pool.iter().all(|h| h.2) {
            break;
        }
        let mut next = Vec::new();
        for (tokens, score, finished) in &pool {
            if *finished {
                next.push((tokens.clone(), *score, true));
                continue;
            }
            let state = router.state_from_tokens(tokens).unwrap();
            let allowed: Vec<TokenId> = router.allowed_continuations(&state).into_iter().collect();
            let lp = log_softmax(&session.score(tokens, &allowed).unwrap());
            for (&t, l) in allowed.iter().zip(lp) {
                let mut seq = tokens.clone();
                seq.push(t);
                next.push((seq, score + l, t == EOS));
            }
        }
        next.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        next.truncate(beams);
        pool = next;
    }
    let mut done: Vec<(Vec<TokenId>, f64)> = pool.into_iter().filter(|h| h.2).map(|h| (h.0, h.1)).collect();
    done.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    done
}

/// Every table order reachable by the randomized stack DFS, found by
/// exploring each possible successor permutation of the stack algorithm.
pub fn dfs_orders(graph: &SchemaGraph, schema: &QuerySchema) -> BTreeSet<Vec<String>> {
    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.is_empty() {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, head);
                out.push(p);
            }
        }
        out
    }

    let tables: Vec<&String> = schema.tables.iter().collect();
    let n = tables.len();
    let adjacent = |a: usize, b: usize| graph.table_edge(&schema.database, tables[a], tables[b]).is_some();
    // Stack entries: None is the database node, Some(i) a table.
    type State = (Vec<Option<usize>>, Vec<usize>, bool);
    let mut seen: HashSet<State> = HashSet::new();
    let mut work: Vec<State> = vec![(vec![None], Vec::new(), false)];
    let mut out = BTreeSet::new();
    while let Some(state) = work.pop() {
        if !seen.insert(state.clone()) {
            continue;
        }
        let (mut stack, mut visited, mut db_seen) = state;
        let Some(top) = stack.pop() else { continue };
        let successors: Vec<usize> = match top {
            None if db_seen => {
                work.push((stack, visited, db_seen));
                continue;
            }
            None => {
                db_seen = true;
                (0..n).collect()
            }
            Some(t) if visited.contains(&t) => {
                work.push((stack, visited, db_seen));
                continue;
            }
            Some(t) => {
                visited.push(t);
                (0..n).filter(|&u| u != t && adjacent(t, u)).collect()
            }
        };
        if visited.len() == n {
            out.insert(visited.iter().map(|&i| tables[i].clone()).collect());
            continue;
        }
        let fresh: Vec<usize> = successors.into_iter().filter(|u| !visited.contains(u)).collect();
        for p in permutations(&fresh) {
            let mut s = stack.clone();
            s.extend(p.into_iter().map(Some));
            work.push((s, visited.clone(), db_seen));
        }
    }
    out
}

/// Recall@k straight from the definition.
pub fn recall_oracle(gold: &BTreeSet<u32>, ranked: &[u32], k: usize) -> f64 {
    let hits = gold.iter().filter(|g| ranked.iter().take(k).any(|r| r == *g)).count();
    hits as f64 / gold.len() as f64
}

/// Average precision straight from the definition, precision recounted at
/// every relevant rank.
pub fn ap_oracle(gold: &BTreeSet<u32>, ranked: &[u32]) -> f64 {
    let mut total = 0.0;
    for i in 0..ranked.len() {
        if gold.contains(&ranked[i]) {
            let relevant = ranked[..=i].iter().filter(|r| gold.contains(r)).count();
            total += relevant as f64 / (i + 1) as f64;
        }
    }
    total / gold.len() as f64
}

/// Okapi BM25 over whitespace/underscore-split documents, recomputing
/// every statistic per query.
pub fn bm25_oracle(docs: &[&str], query: &str, k1: f64, b: f64) -> Vec<f64> {
    let split = |s: &str| -> Vec<String> {
        s.to_lowercase()
            .split(|c: char| c == '_' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    };
    let docs: Vec<Vec<String>> = docs.iter().map(|d| split(d)).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    docs.iter()
        .map(|doc| {
            let mut score = 0.0;
            for term in split(query) {
                let df = docs.iter().filter(|d| d.contains(&term)).count() as f64;
                let tf = doc.iter().filter(|t| **t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avgdl));
            }
            score
        })
        .collect()
}
