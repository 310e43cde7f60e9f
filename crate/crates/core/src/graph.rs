//! The three-tier schema graph: a root node, one node per database and one
//! node per table, with inclusion edges down the hierarchy and symmetric
//! table-relation edges inside each database.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::catalog::{Column, SchemaCatalog};

pub const DEFAULT_JOIN_THRESHOLD: f64 = 0.85;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("graph text line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("identifier `{0}` cannot be written to the text format")]
    Unexportable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeId {
    Root,
    Database(String),
    Table { database: String, table: String },
}

impl NodeId {
    pub fn database(id: &str) -> Self {
        NodeId::Database(id.to_string())
    }

    pub fn table(database: &str, table: &str) -> Self {
        NodeId::Table {
            database: database.to_string(),
            table: table.to_string(),
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Root => f.write_str("@"),
            NodeId::Database(d) => f.write_str(d),
            NodeId::Table { database, table } => write!(f, "{database}/{table}"),
        }
    }
}

/// Edge kinds ordered by increasing strength for table relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Includes,
    Joinable,
    ForeignForeign,
    PrimaryForeign,
}

impl EdgeKind {
    pub const TABLE_RELATIONS: [EdgeKind; 3] =
        [EdgeKind::PrimaryForeign, EdgeKind::ForeignForeign, EdgeKind::Joinable];

    pub fn is_table_relation(self) -> bool {
        self != EdgeKind::Includes
    }

    fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Includes => "includes",
            EdgeKind::PrimaryForeign => "primary_foreign",
            EdgeKind::ForeignForeign => "foreign_foreign",
            EdgeKind::Joinable => "joinable",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "includes" => EdgeKind::Includes,
            "primary_foreign" => EdgeKind::PrimaryForeign,
            "foreign_foreign" => EdgeKind::ForeignForeign,
            "joinable" => EdgeKind::Joinable,
            _ => return None,
        })
    }
}

/// The routing target: one database and a non-empty set of its tables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuerySchema {
    pub database: String,
    pub tables: BTreeSet<String>,
}

impl QuerySchema {
    pub fn new<I, S>(database: &str, tables: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            database: database.to_string(),
            tables: tables.into_iter().map(Into::into).collect(),
        }
    }
}

impl fmt::Display for QuerySchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⟨{}, {{", self.database)?;
        for (i, t) in self.tables.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(t)?;
        }
        f.write_str("}⟩")
    }
}

type TableEdges = BTreeMap<String, EdgeKind>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SchemaGraph {
    // database -> table -> neighbouring table -> kind; every table edge is
    // stored in both directions.
    databases: BTreeMap<String, BTreeMap<String, TableEdges>>,
}

impl SchemaGraph {
    pub fn databases(&self) -> impl Iterator<Item = &str> {
        self.databases.keys().map(String::as_str)
    }

    pub fn database_count(&self) -> usize {
        self.databases.len()
    }

    pub fn has_database(&self, db: &str) -> bool {
        self.databases.contains_key(db)
    }

    pub fn tables(&self, db: &str) -> impl Iterator<Item = &str> {
        self.databases
            .get(db)
            .into_iter()
            .flat_map(|t| t.keys().map(String::as_str))
    }

    pub fn table_count(&self, db: &str) -> usize {
        self.databases.get(db).map_or(0, BTreeMap::len)
    }

    pub fn has_table(&self, db: &str, table: &str) -> bool {
        self.databases.get(db).is_some_and(|t| t.contains_key(table))
    }

    /// Table-relation neighbours of `table`, in lexicographic order.
    pub fn table_neighbors(&self, db: &str, table: &str) -> impl Iterator<Item = (&str, EdgeKind)> {
        self.databases
            .get(db)
            .and_then(|t| t.get(table))
            .into_iter()
            .flat_map(|edges| edges.iter().map(|(n, k)| (n.as_str(), *k)))
    }

    pub fn table_edge(&self, db: &str, a: &str, b: &str) -> Option<EdgeKind> {
        self.databases.get(db)?.get(a)?.get(b).copied()
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        match node {
            NodeId::Root => true,
            NodeId::Database(d) => self.has_database(d),
            NodeId::Table { database, table } => self.has_table(database, table),
        }
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        let mut out = vec![NodeId::Root];
        for (db, tables) in &self.databases {
            out.push(NodeId::database(db));
            out.extend(tables.keys().map(|t| NodeId::table(db, t)));
        }
        out.sort();
        out
    }

    /// Every directed edge, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId, EdgeKind)> {
        let mut out = Vec::new();
        for (db, tables) in &self.databases {
            out.push((NodeId::Root, NodeId::database(db), EdgeKind::Includes));
            for (t, edges) in tables {
                out.push((NodeId::database(db), NodeId::table(db, t), EdgeKind::Includes));
                for (n, k) in edges {
                    out.push((NodeId::table(db, t), NodeId::table(db, n), *k));
                }
            }
        }
        out.sort();
        out
    }

    /// Nodes one edge away from `node` via any of `kinds`, sorted by key.
    pub fn neighbors(&self, node: &NodeId, kinds: &BTreeSet<EdgeKind>) -> Result<Vec<NodeId>, GraphError> {
        if !self.contains(node) {
            return Err(GraphError::UnknownNode(node.clone()));
        }
        let mut out = match node {
            NodeId::Root if kinds.contains(&EdgeKind::Includes) => self.databases().map(NodeId::database).collect(),
            NodeId::Database(db) if kinds.contains(&EdgeKind::Includes) => {
                self.tables(db).map(|t| NodeId::table(db, t)).collect()
            }
            NodeId::Table { database, table } => self
                .table_neighbors(database, table)
                .filter(|(_, k)| kinds.contains(k))
                .map(|(n, _)| NodeId::table(database, n))
                .collect(),
            _ => Vec::new(),
        };
        out.sort();
        Ok(out)
    }

    /// True iff every table exists under the database and the tables induce a
    /// connected subgraph under table-relation edges.
    pub fn is_valid_schema(&self, schema: &QuerySchema) -> bool {
        let Some(tables) = self.databases.get(&schema.database) else {
            return false;
        };
        if schema.tables.is_empty() || !schema.tables.iter().all(|t| tables.contains_key(t)) {
            return false;
        }
        let start = schema.tables.iter().next().unwrap();
        let mut seen = BTreeSet::from([start.as_str()]);
        let mut stack = vec![start.as_str()];
        while let Some(t) = stack.pop() {
            for n in tables[t].keys() {
                if schema.tables.contains(n) && seen.insert(n.as_str()) {
                    stack.push(n);
                }
            }
        }
        seen.len() == schema.tables.len()
    }

    fn add_database(&mut self, db: &str) {
        self.databases.entry(db.to_string()).or_default();
    }

    fn add_table(&mut self, db: &str, table: &str) {
        self.databases
            .entry(db.to_string())
            .or_default()
            .entry(table.to_string())
            .or_default();
    }

    /// Inserts a symmetric table edge, keeping the stronger kind on conflict.
    fn relate(&mut self, db: &str, a: &str, b: &str, kind: EdgeKind) {
        debug_assert!(kind.is_table_relation() && a != b);
        let tables = self.databases.get_mut(db).expect("database present");
        for (x, y) in [(a, b), (b, a)] {
            let slot = tables.get_mut(x).expect("table present").entry(y.to_string()).or_insert(kind);
            *slot = (*slot).max(kind);
        }
    }

    /// Line-oriented dump: `node <id>` and `edge <from> <to> <kind>` records,
    /// with `@` for the root and `db/table` for tables.
    pub fn to_text(&self) -> Result<String, GraphError> {
        let check = |s: &str| {
            if s.is_empty() || s == "@" || s.contains(|c: char| c.is_whitespace() || c == '/') {
                Err(GraphError::Unexportable(s.to_string()))
            } else {
                Ok(())
            }
        };
        for (db, tables) in &self.databases {
            check(db)?;
            tables.keys().try_for_each(|t| check(t))?;
        }
        let mut out = String::new();
        for n in self.nodes() {
            writeln!(out, "node {n}").unwrap();
        }
        for (a, b, k) in self.edges() {
            writeln!(out, "edge {a} {b} {}", k.as_str()).unwrap();
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self, GraphError> {
        let mut graph = SchemaGraph::default();
        let parse_node = |s: &str, line: usize| -> Result<NodeId, GraphError> {
            match s.split_once('/') {
                _ if s == "@" => Ok(NodeId::Root),
                Some((d, t)) if !d.is_empty() && !t.is_empty() => Ok(NodeId::table(d, t)),
                Some(_) => Err(GraphError::Parse {
                    line,
                    reason: format!("bad node `{s}`"),
                }),
                None => Ok(NodeId::database(s)),
            }
        };
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let fields: Vec<&str> = raw.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                ["node", id] => match parse_node(id, line)? {
                    NodeId::Root => {}
                    NodeId::Database(d) => graph.add_database(&d),
                    NodeId::Table { database, table } => graph.add_table(&database, &table),
                },
                ["edge", a, b, kind] => {
                    let kind = EdgeKind::parse(kind).ok_or_else(|| GraphError::Parse {
                        line,
                        reason: format!("unknown edge kind `{kind}`"),
                    })?;
                    edges.push((line, parse_node(a, line)?, parse_node(b, line)?, kind));
                }
                _ => {
                    return Err(GraphError::Parse {
                        line,
                        reason: format!("unrecognized record `{raw}`"),
                    })
                }
            }
        }
        for (line, a, b, kind) in edges {
            let err = |reason: &str| GraphError::Parse {
                line,
                reason: reason.to_string(),
            };
            match (&a, &b, kind) {
                (NodeId::Root, NodeId::Database(d), EdgeKind::Includes) if graph.has_database(d) => {}
                (NodeId::Database(d), NodeId::Table { database, table }, EdgeKind::Includes)
                    if d == database && graph.has_table(d, table) => {}
                (
                    NodeId::Table { database: da, table: ta },
                    NodeId::Table { database: db, table: tb },
                    k,
                ) if k.is_table_relation() && da == db && ta != tb => {
                    if !graph.has_table(da, ta) || !graph.has_table(db, tb) {
                        return Err(err("edge endpoint not declared"));
                    }
                    graph.relate(da, ta, tb, k);
                }
                _ => return Err(err("edge violates the root/database/table hierarchy")),
            }
        }
        Ok(graph)
    }
}

/// Exact-match Jaccard overlap test between two profiled columns.
///
/// Columns without a value profile are never joinable.
pub fn jaccard_joinable(a: &Column, b: &Column, threshold: f64) -> bool {
    match (&a.values, &b.values) {
        (Some(x), Some(y)) => jaccard(x, y).is_some_and(|j| j > threshold),
        _ => false,
    }
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Option<f64> {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if large.is_empty() {
        return None;
    }
    let inter = small.iter().filter(|v| large.contains(*v)).count();
    let union = a.len() + b.len() - inter;
    Some(inter as f64 / union as f64)
}

/// Builds the schema graph, attaching the strongest applicable relation to
/// each pair of tables in the same database.
pub fn build_graph(catalog: &SchemaCatalog, join_threshold: f64) -> SchemaGraph {
    let mut graph = SchemaGraph::default();
    let profiled = catalog.has_profiles();
    if !profiled {
        info!("no value profiles in catalog; joinable detection skipped");
    }
    for db in catalog.databases() {
        graph.add_database(&db.id);
        for t in &db.tables {
            graph.add_table(&db.id, &t.normalized);
        }
        let name = |i: usize| db.tables[i].normalized.as_str();

        for fk in &db.foreign_keys {
            if fk.from.table != fk.to.table {
                graph.relate(&db.id, name(fk.from.table), name(fk.to.table), EdgeKind::PrimaryForeign);
            }
        }

        // Tables that reference the same column of a third table.
        let mut referrers: HashMap<_, BTreeSet<usize>> = HashMap::new();
        for fk in &db.foreign_keys {
            if fk.from.table != fk.to.table {
                referrers.entry(fk.to).or_default().insert(fk.from.table);
            }
        }
        let mut targets: Vec<_> = referrers.into_iter().collect();
        targets.sort();
        for (_, tables) in targets {
            let tables: Vec<usize> = tables.into_iter().collect();
            for (i, &a) in tables.iter().enumerate() {
                for &b in &tables[i + 1..] {
                    graph.relate(&db.id, name(a), name(b), EdgeKind::ForeignForeign);
                }
            }
        }

        if !profiled {
            continue;
        }
        for t in &db.tables {
            if t.columns.iter().all(|c| c.values.is_none()) {
                warn!(db = %db.id, table = %t.normalized, "table has no value profiles; joinability not assessed");
            }
        }
        for (i, a) in db.tables.iter().enumerate() {
            for (j, b) in db.tables.iter().enumerate().skip(i + 1) {
                if graph.table_edge(&db.id, name(i), name(j)).is_some() {
                    continue;
                }
                let joinable = a.columns.iter().any(|ca| {
                    b.columns
                        .iter()
                        .any(|cb| ca.type_tag == cb.type_tag && jaccard_joinable(ca, cb, join_threshold))
                });
                if joinable {
                    graph.relate(&db.id, &a.normalized, &b.normalized, EdgeKind::Joinable);
                }
            }
        }
    }
    graph
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{ColumnRef, Database, ForeignKey, Table, TypeTag};

    fn col(name: &str, values: Option<&[&str]>) -> Column {
        let mut c = Column::new(name, TypeTag::Text);
        c.values = values.map(|v| v.iter().map(|s| s.to_string()).collect());
        c
    }

    #[test]
    fn jaccard_examples() {
        let abc = col("x", Some(&["a", "b", "c"]));
        let abcd = col("y", Some(&["a", "b", "c", "d"]));
        assert!(jaccard_joinable(&abc, &abc.clone(), 0.85));
        assert!(!jaccard_joinable(&abc, &abcd, 0.85));

        let letters: Vec<String> = ('a'..='t').map(|c| c.to_string()).collect();
        let first: Vec<&str> = letters.iter().map(String::as_str).collect();
        let mut second: Vec<&str> = first[1..].to_vec();
        second.push("zz");
        // |A ∩ B| = 19 and |A ∪ B| = 21, counted by hand.
        let (a, b) = (col("a", Some(&first)), col("b", Some(&second)));
        assert_eq!(jaccard(a.values.as_ref().unwrap(), b.values.as_ref().unwrap()), Some(19.0 / 21.0));
        assert!(jaccard_joinable(&a, &b, 0.85));
    }

    #[test]
    fn absent_or_empty_profiles_not_joinable() {
        assert!(!jaccard_joinable(&col("a", None), &col("b", Some(&["x"])), 0.0));
        assert!(!jaccard_joinable(&col("a", Some(&[])), &col("b", Some(&[])), 0.0));
    }

    fn single_table_catalog() -> SchemaCatalog {
        SchemaCatalog::new(vec![Database {
            id: "solo".into(),
            tables: vec![Table::new("only", vec![Column::new("id", TypeTag::Number)])],
            foreign_keys: vec![],
        }])
        .unwrap()
    }

    #[test]
    fn single_table_graph() {
        let g = build_graph(&single_table_catalog(), DEFAULT_JOIN_THRESHOLD);
        assert_eq!(g.nodes().len(), 3);
        let edges = g.edges();
        assert_eq!(edges.len(), 2);
        assert!(edges.iter().all(|e| e.2 == EdgeKind::Includes));
    }

    #[test]
    fn neighbors_lookup() {
        let g = build_graph(&single_table_catalog(), DEFAULT_JOIN_THRESHOLD);
        let inc = BTreeSet::from([EdgeKind::Includes]);
        assert_eq!(g.neighbors(&NodeId::Root, &inc).unwrap(), vec![NodeId::database("solo")]);
        assert!(g.neighbors(&NodeId::Root, &BTreeSet::new()).unwrap().is_empty());
        assert_eq!(
            g.neighbors(&NodeId::database("nope"), &inc),
            Err(GraphError::UnknownNode(NodeId::database("nope")))
        );
    }

    #[test]
    fn strongest_kind_wins() {
        // a.x -> c.id and b.x -> c.id give a~b foreign-foreign; a.y -> b.id
        // upgrades a~b to primary-foreign.
        let t = |n: &str, cols: &[&str]| Table::new(n, cols.iter().map(|c| Column::new(c, TypeTag::Number)).collect());
        let r = |table, column| ColumnRef { table, column };
        let db = Database {
            id: "d".into(),
            tables: vec![t("a", &["x", "y"]), t("b", &["id", "x"]), t("c", &["id"])],
            foreign_keys: vec![
                ForeignKey { from: r(0, 0), to: r(2, 0) },
                ForeignKey { from: r(1, 1), to: r(2, 0) },
            ],
        };
        let cat = SchemaCatalog::new(vec![db.clone()]).unwrap();
        let g = build_graph(&cat, 0.85);
        assert_eq!(g.table_edge("d", "a", "b"), Some(EdgeKind::ForeignForeign));

        let mut db2 = db;
        db2.foreign_keys.push(ForeignKey { from: r(0, 1), to: r(1, 0) });
        let g2 = build_graph(&SchemaCatalog::new(vec![db2]).unwrap(), 0.85);
        assert_eq!(g2.table_edge("d", "a", "b"), Some(EdgeKind::PrimaryForeign));
        assert_eq!(g2.table_edge("d", "b", "a"), Some(EdgeKind::PrimaryForeign));
    }

    #[test]
    fn joinable_requires_matching_type_tags() {
        let mut a = col("k", Some(&["1", "2", "3"]));
        let mut b = col("k", Some(&["1", "2", "3"]));
        a.type_tag = TypeTag::Number;
        b.type_tag = TypeTag::Text;
        let cat = SchemaCatalog::new(vec![Database {
            id: "d".into(),
            tables: vec![Table::new("p", vec![a]), Table::new("q", vec![b])],
            foreign_keys: vec![],
        }])
        .unwrap();
        assert_eq!(build_graph(&cat, 0.5).table_edge("d", "p", "q"), None);
    }

    #[test]
    fn text_format_round_trip() {
        let g = build_graph(&single_table_catalog(), DEFAULT_JOIN_THRESHOLD);
        let text = g.to_text().unwrap();
        assert_eq!(text, "node @\nnode solo\nnode solo/only\nedge @ solo includes\nedge solo solo/only includes\n");
        assert_eq!(SchemaGraph::from_text(&text).unwrap(), g);
    }

    #[test]
    fn text_format_rejects_cross_tier_edges() {
        let bad = "node @\nnode d\nnode d/t\nedge @ d/t includes\n";
        assert!(matches!(SchemaGraph::from_text(bad), Err(GraphError::Parse { line: 4, .. })));
    }
}
