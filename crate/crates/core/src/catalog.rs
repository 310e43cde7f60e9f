//! Multi-database schema catalogs.
//!
//! Catalogs are read from Spider-style `tables.json` documents and can be
//! enriched with per-column value profiles read from SQLite files.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

/// Default cap on distinct values kept per column profile.
pub const DEFAULT_MAX_DISTINCT: usize = 10_000;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read catalog {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed catalog: {0}")]
    Malformed(String),
    #[error("malformed catalog entry for database `{db_id}`: {reason}")]
    MalformedDatabase { db_id: String, reason: String },
    #[error("duplicate database id `{0}`")]
    DuplicateDatabase(String),
}

/// Lowercases `raw` and collapses every run of non-alphanumeric characters
/// into a single `_`, trimming leading and trailing separators.
pub fn normalize(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(ch.to_ascii_lowercase());
        } else {
            pending_sep = true;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    Text,
    Number,
    Time,
    Boolean,
    Other,
}

impl TypeTag {
    /// Best-effort mapping from a declared column type.
    pub fn from_declared(declared: &str) -> Self {
        let t = declared.trim().to_ascii_lowercase();
        if t.is_empty() {
            return TypeTag::Other;
        }
        if t == "text" || t.contains("char") || t.contains("clob") || t == "string" {
            TypeTag::Text
        } else if t == "number"
            || t.contains("int")
            || t.contains("real")
            || t.contains("float")
            || t.contains("double")
            || t.contains("numeric")
            || t.contains("decimal")
        {
            TypeTag::Number
        } else if t == "time" || t.contains("date") || t.contains("time") || t.contains("year") {
            TypeTag::Time
        } else if t.starts_with("bool") {
            TypeTag::Boolean
        } else {
            TypeTag::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub normalized: String,
    pub type_tag: TypeTag,
    /// Distinct non-null cell values, when profiled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<BTreeSet<String>>,
}

impl Column {
    pub fn new(name: &str, type_tag: TypeTag) -> Self {
        Self {
            name: name.to_string(),
            normalized: normalize(name),
            type_tag,
            values: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub normalized: String,
    pub columns: Vec<Column>,
    pub primary_key: BTreeSet<usize>,
}

impl Table {
    pub fn new(name: &str, columns: Vec<Column>) -> Self {
        Self {
            name: name.to_string(),
            normalized: normalize(name),
            columns,
            primary_key: BTreeSet::new(),
        }
    }

    pub fn column(&self, normalized: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.normalized == normalized)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: usize,
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub from: ColumnRef,
    pub to: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Database {
    pub id: String,
    pub tables: Vec<Table>,
    pub foreign_keys: Vec<ForeignKey>,
}

impl Database {
    pub fn table(&self, normalized: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.normalized == normalized)
    }

    pub fn table_index(&self, normalized: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.normalized == normalized)
    }

    pub fn column_count(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaCatalog {
    databases: Vec<Database>,
    index: HashMap<String, usize>,
}

impl SchemaCatalog {
    /// Validates the invariants and builds the lookup index.
    pub fn new(databases: Vec<Database>) -> Result<Self, CatalogError> {
        if databases.is_empty() {
            return Err(CatalogError::Malformed("catalog contains no databases".into()));
        }
        let mut index = HashMap::with_capacity(databases.len());
        let mut normalized_ids = HashSet::new();
        for (i, db) in databases.iter().enumerate() {
            if index.insert(db.id.clone(), i).is_some() || !normalized_ids.insert(normalize(&db.id)) {
                return Err(CatalogError::DuplicateDatabase(db.id.clone()));
            }
            validate_database(db)?;
        }
        Ok(Self { databases, index })
    }

    pub fn databases(&self) -> &[Database] {
        &self.databases
    }

    pub fn database(&self, id: &str) -> Option<&Database> {
        self.index.get(id).map(|&i| &self.databases[i])
    }

    /// Resolves a database by exact id or by its normalized form.
    pub fn resolve_database(&self, name: &str) -> Option<&Database> {
        self.database(name).or_else(|| {
            let wanted = normalize(name);
            self.databases.iter().find(|d| normalize(&d.id) == wanted)
        })
    }

    pub fn table_count(&self) -> usize {
        self.databases.iter().map(|d| d.tables.len()).sum()
    }

    pub fn column_count(&self) -> usize {
        self.databases.iter().map(Database::column_count).sum()
    }

    pub fn has_profiles(&self) -> bool {
        self.databases
            .iter()
            .flat_map(|d| &d.tables)
            .flat_map(|t| &t.columns)
            .any(|c| c.values.is_some())
    }
}

fn validate_database(db: &Database) -> Result<(), CatalogError> {
    let bad = |reason: String| CatalogError::MalformedDatabase {
        db_id: db.id.clone(),
        reason,
    };
    if db.id.trim().is_empty() {
        return Err(bad("empty database id".into()));
    }
    let mut names = HashSet::new();
    for table in &db.tables {
        if table.normalized.is_empty() {
            return Err(bad(format!("table `{}` normalizes to an empty name", table.name)));
        }
        if !names.insert(table.normalized.as_str()) {
            return Err(bad(format!("duplicate table `{}`", table.normalized)));
        }
        let mut cols = HashSet::new();
        for col in &table.columns {
            if col.normalized.is_empty() {
                return Err(bad(format!("column `{}` normalizes to an empty name", col.name)));
            }
            if !cols.insert(col.normalized.as_str()) {
                return Err(bad(format!(
                    "duplicate column `{}` in table `{}`",
                    col.normalized, table.normalized
                )));
            }
        }
        if let Some(&pk) = table.primary_key.iter().find(|&&pk| pk >= table.columns.len()) {
            return Err(bad(format!("primary key index {pk} out of range in `{}`", table.normalized)));
        }
    }
    for fk in &db.foreign_keys {
        for end in [fk.from, fk.to] {
            let ok = db
                .tables
                .get(end.table)
                .is_some_and(|t| end.column < t.columns.len());
            if !ok {
                return Err(bad(format!("foreign key endpoint {end:?} does not resolve")));
            }
        }
    }
    Ok(())
}

// Spider `tables.json` layout.

#[derive(Deserialize)]
struct RawDatabase {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    #[serde(default)]
    column_types: Vec<String>,
    #[serde(default)]
    primary_keys: Vec<RawKey>,
    #[serde(default)]
    foreign_keys: Vec<(usize, usize)>,
}

/// Primary keys are plain column indices in Spider and may be nested lists
/// (composite keys) in BIRD.
#[derive(Deserialize)]
#[serde(untagged)]
enum RawKey {
    Single(usize),
    Composite(Vec<usize>),
}

/// Gives `name` a unique normalized form within `seen`, suffixing `_2`, `_3`, ...
fn unique_normalized(name: &str, seen: &mut HashSet<String>, context: &str) -> String {
    let base = match normalize(name) {
        n if n.is_empty() => "x".to_string(),
        n => n,
    };
    if seen.insert(base.clone()) {
        return base;
    }
    let mut i = 2;
    loop {
        let candidate = format!("{base}_{i}");
        if seen.insert(candidate.clone()) {
            warn!(name, %candidate, context, "normalized name collision; suffix appended");
            return candidate;
        }
        i += 1;
    }
}

fn convert(raw: RawDatabase) -> Result<Database, CatalogError> {
    let bad = |reason: String| CatalogError::MalformedDatabase {
        db_id: raw.db_id.clone(),
        reason,
    };
    let mut seen_tables = HashSet::new();
    let mut tables: Vec<Table> = raw
        .table_names_original
        .iter()
        .map(|name| {
            let mut t = Table::new(name, Vec::new());
            t.normalized = unique_normalized(name, &mut seen_tables, &raw.db_id);
            t
        })
        .collect();
    let mut seen_cols: Vec<HashSet<String>> = vec![HashSet::new(); tables.len()];

    // Global column index -> (table, local column) for every non-`*` column.
    let mut global: Vec<Option<ColumnRef>> = Vec::with_capacity(raw.column_names_original.len());
    for (gi, (table_idx, name)) in raw.column_names_original.iter().enumerate() {
        if *table_idx < 0 {
            global.push(None);
            continue;
        }
        let t = *table_idx as usize;
        let table = tables
            .get_mut(t)
            .ok_or_else(|| bad(format!("column `{name}` refers to missing table {t}")))?;
        let declared = raw.column_types.get(gi).map(String::as_str).unwrap_or("");
        let mut col = Column::new(name, TypeTag::from_declared(declared));
        col.normalized = unique_normalized(name, &mut seen_cols[t], &table.normalized);
        global.push(Some(ColumnRef {
            table: t,
            column: table.columns.len(),
        }));
        table.columns.push(col);
    }
    let resolve = |gi: usize| -> Result<ColumnRef, CatalogError> {
        global
            .get(gi)
            .copied()
            .flatten()
            .ok_or_else(|| bad(format!("column index {gi} does not resolve")))
    };
    for key in &raw.primary_keys {
        let cols = match key {
            RawKey::Single(c) => vec![*c],
            RawKey::Composite(cs) => cs.clone(),
        };
        for gi in cols {
            let r = resolve(gi)?;
            tables[r.table].primary_key.insert(r.column);
        }
    }
    let mut foreign_keys = Vec::with_capacity(raw.foreign_keys.len());
    for &(from, to) in &raw.foreign_keys {
        let fk = ForeignKey {
            from: resolve(from)?,
            to: resolve(to)?,
        };
        if !foreign_keys.contains(&fk) {
            foreign_keys.push(fk);
        }
    }
    Ok(Database {
        id: raw.db_id,
        tables,
        foreign_keys,
    })
}

/// Parses a Spider-compatible catalog document.
pub fn parse_catalog(text: &str) -> Result<SchemaCatalog, CatalogError> {
    let items: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| CatalogError::Malformed(e.to_string()))?;
    let mut databases = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        let db_id = item
            .get("db_id")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .unwrap_or_else(|| format!("#{i}"));
        let raw: RawDatabase = serde_json::from_value(item).map_err(|e| CatalogError::MalformedDatabase {
            db_id: db_id.clone(),
            reason: e.to_string(),
        })?;
        databases.push(convert(raw)?);
    }
    SchemaCatalog::new(databases)
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<SchemaCatalog, CatalogError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_catalog(&text)
}

/// Renders a catalog back into the Spider document layout.
pub fn to_spider_json(catalog: &SchemaCatalog) -> serde_json::Value {
    let dbs = catalog
        .databases()
        .iter()
        .map(|db| {
            let mut columns = vec![serde_json::json!([-1, "*"])];
            let mut types = vec!["text".to_string()];
            let mut offsets = Vec::with_capacity(db.tables.len());
            for (ti, t) in db.tables.iter().enumerate() {
                offsets.push(columns.len());
                for c in &t.columns {
                    columns.push(serde_json::json!([ti, c.name]));
                    types.push(
                        match c.type_tag {
                            TypeTag::Text => "text",
                            TypeTag::Number => "number",
                            TypeTag::Time => "time",
                            TypeTag::Boolean => "boolean",
                            TypeTag::Other => "others",
                        }
                        .to_string(),
                    );
                }
            }
            let global = |r: ColumnRef| offsets[r.table] + r.column;
            let pks: Vec<usize> = db
                .tables
                .iter()
                .enumerate()
                .flat_map(|(ti, t)| t.primary_key.iter().map(move |&c| (ti, c)))
                .map(|(ti, c)| global(ColumnRef { table: ti, column: c }))
                .collect();
            let fks: Vec<[usize; 2]> = db
                .foreign_keys
                .iter()
                .map(|fk| [global(fk.from), global(fk.to)])
                .collect();
            serde_json::json!({
                "db_id": db.id,
                "table_names_original": db.tables.iter().map(|t| &t.name).collect::<Vec<_>>(),
                "table_names": db.tables.iter().map(|t| t.normalized.replace('_', " ")).collect::<Vec<_>>(),
                "column_names_original": columns,
                "column_types": types,
                "primary_keys": pks,
                "foreign_keys": fks,
            })
        })
        .collect();
    serde_json::Value::Array(dbs)
}

fn database_file(data_dir: &Path, db_id: &str) -> Option<PathBuf> {
    [
        data_dir.join(db_id).join(format!("{db_id}.sqlite")),
        data_dir.join(format!("{db_id}.sqlite")),
        data_dir.join(format!("{db_id}.db")),
    ]
    .into_iter()
    .find(|p| p.is_file())
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn cell_to_string(value: rusqlite::types::ValueRef<'_>) -> Option<String> {
    use rusqlite::types::ValueRef;
    match value {
        ValueRef::Null => None,
        ValueRef::Integer(i) => Some(i.to_string()),
        ValueRef::Real(f) => Some(f.to_string()),
        ValueRef::Text(t) => Some(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(_) => None,
    }
}

fn profile_database(db: &mut Database, file: &Path, max_distinct: usize) -> rusqlite::Result<()> {
    let conn = rusqlite::Connection::open_with_flags(file, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY)?;
    let mut profiles: BTreeMap<(usize, usize), BTreeSet<String>> = BTreeMap::new();
    for (ti, table) in db.tables.iter().enumerate() {
        for (ci, col) in table.columns.iter().enumerate() {
            let sql = format!(
                "SELECT DISTINCT {c} FROM {t} WHERE {c} IS NOT NULL LIMIT {max_distinct}",
                c = quote_ident(&col.name),
                t = quote_ident(&table.name),
            );
            let mut stmt = match conn.prepare(&sql) {
                Ok(s) => s,
                Err(e) => {
                    warn!(db = %db.id, table = %table.name, column = %col.name, error = %e, "column not profiled");
                    continue;
                }
            };
            let mut values = BTreeSet::new();
            let mut rows = stmt.query([])?;
            while let Some(row) = rows.next()? {
                if let Some(v) = cell_to_string(row.get_ref(0)?) {
                    values.insert(v);
                }
                if values.len() >= max_distinct {
                    break;
                }
            }
            profiles.insert((ti, ci), values);
        }
    }
    for ((ti, ci), values) in profiles {
        db.tables[ti].columns[ci].values = Some(values);
    }
    Ok(())
}

/// Fills column value profiles from one SQLite file per database.
///
/// Databases whose file is missing or unreadable keep absent profiles.
pub fn profile_values(mut catalog: SchemaCatalog, data_dir: Option<&Path>, max_distinct: usize) -> SchemaCatalog {
    let Some(data_dir) = data_dir else {
        return catalog;
    };
    for db in &mut catalog.databases {
        let Some(file) = database_file(data_dir, &db.id) else {
            warn!(db = %db.id, dir = %data_dir.display(), "no database file; profiles left absent");
            continue;
        };
        let mut updated = db.clone();
        match profile_database(&mut updated, &file, max_distinct) {
            Ok(()) => *db = updated,
            Err(e) => warn!(db = %db.id, error = %e, "database unreadable; profiles left absent"),
        }
    }
    catalog
}

impl fmt::Display for SchemaCatalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} databases, {} tables, {} columns",
            self.databases.len(),
            self.table_count(),
            self.column_count()
        )
    }
}
