//! Threshold-batched loader.
//!
//! Rows are staged per table and written as one multi-row insert when a
//! buffer reaches the configured threshold (the insert command limit). A
//! failed batch is retried row by row inside the same transaction so the
//! offending rows can be classified and logged without losing the rest.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::db::{Db, DbError, Value};
use crate::error::{Error, Result};
use crate::record::CitationRecord;
use crate::schema::{index_statements, Dialect, SchemaModel, TableDef, CITATION_TABLE};

/// Behavior on primary-key collisions; fixed for a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DuplicatePolicy {
    /// Drop the colliding row, log it, keep going. Makes restarts convergent.
    #[default]
    Skip,
    /// Last write wins.
    Replace,
    /// A collision aborts the run.
    Fail,
}

impl std::str::FromStr for DuplicatePolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "skip" => Ok(DuplicatePolicy::Skip),
            "replace" => Ok(DuplicatePolicy::Replace),
            "fail" => Ok(DuplicatePolicy::Fail),
            other => Err(Error::Config(format!(
                "unknown duplicate policy '{other}' (expected skip|replace|fail)"
            ))),
        }
    }
}

/// The four-way error taxonomy. Every native database error maps to exactly
/// one code; anything unrecognized is `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCode {
    FieldTooLong,
    DuplicateKey,
    StorageFull,
    Other,
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ErrorCode::FieldTooLong => "FieldTooLong",
            ErrorCode::DuplicateKey => "DuplicateKey",
            ErrorCode::StorageFull => "StorageFull",
            ErrorCode::Other => "Other",
        };
        f.write_str(s)
    }
}

/// One structured error event, as written to the error log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadError {
    pub code: ErrorCode,
    pub table: String,
    pub pmid: Option<i64>,
    pub field: Option<String>,
    pub message: String,
    pub at: DateTime<Utc>,
}

// MySQL server error codes, recognized so errors relayed from a server
// deployment classify identically.
const MYSQL_DATA_TOO_LONG: i32 = 1406;
const MYSQL_DUP_ENTRY: i32 = 1062;
const MYSQL_TABLE_FULL: i32 = 1114;

// SQLite extended result codes.
const SQLITE_FULL: i32 = 13;
const SQLITE_CONSTRAINT_CHECK: i32 = 275;
const SQLITE_CONSTRAINT_PRIMARYKEY: i32 = 1555;
const SQLITE_CONSTRAINT_UNIQUE: i32 = 2067;

fn known_tables() -> &'static Vec<&'static str> {
    static TABLES: OnceLock<Vec<&'static str>> = OnceLock::new();
    TABLES.get_or_init(|| SchemaModel::medline().table_names())
}

/// Splits a `ck_<table>_<column>` constraint name against the known roster.
fn split_check_constraint(name: &str) -> (Option<String>, Option<String>) {
    let rest = match name.strip_prefix("ck_") {
        Some(r) => r,
        None => return (None, None),
    };
    for table in known_tables() {
        if let Some(field) = rest.strip_prefix(&format!("{table}_")) {
            return (Some(table.to_string()), Some(field.to_string()));
        }
    }
    (None, None)
}

fn quoted_segment(message: &str) -> Option<String> {
    let start = message.find('\'')? + 1;
    let end = message[start..].find('\'')? + start;
    Some(message[start..end].to_string())
}

/// Total mapping of a native database error onto the taxonomy. Table and
/// field are extracted when the native message exposes them; the loader
/// enriches them from row context afterwards.
pub fn classify_error(err: &DbError) -> LoadError {
    let msg = err.message.as_str();
    let lower = msg.to_lowercase();
    let (mut code, mut table, mut field) = (ErrorCode::Other, None, None);

    match err.code {
        Some(MYSQL_DATA_TOO_LONG) => {
            code = ErrorCode::FieldTooLong;
            // "Data too long for column 'initials' at row 1"
            field = quoted_segment(msg);
        }
        Some(MYSQL_DUP_ENTRY) | Some(SQLITE_CONSTRAINT_PRIMARYKEY)
        | Some(SQLITE_CONSTRAINT_UNIQUE) => {
            code = ErrorCode::DuplicateKey;
            // "UNIQUE constraint failed: medline_author.pmid, ..."
            if let Some(qualified) = lower.split(':').nth(1) {
                if let Some(t) = qualified.trim().split('.').next() {
                    let t = t.trim();
                    if known_tables().contains(&t) {
                        table = Some(t.to_string());
                    }
                }
            }
        }
        Some(MYSQL_TABLE_FULL) | Some(SQLITE_FULL) => code = ErrorCode::StorageFull,
        Some(SQLITE_CONSTRAINT_CHECK) => {
            // "CHECK constraint failed: ck_medline_author_initials"
            if let Some(name) = lower.split(':').nth(1) {
                let (t, f) = split_check_constraint(name.trim());
                if f.is_some() {
                    code = ErrorCode::FieldTooLong;
                    table = t;
                    field = f;
                }
            }
        }
        _ => {
            // Message-based fallback for errors relayed without a code.
            if lower.contains("data too long") {
                code = ErrorCode::FieldTooLong;
                field = quoted_segment(msg);
            } else if lower.contains("duplicate entry") || lower.contains("unique constraint") {
                code = ErrorCode::DuplicateKey;
            } else if lower.contains("is full") {
                code = ErrorCode::StorageFull;
            }
        }
    }

    LoadError {
        code,
        table: table.unwrap_or_default(),
        pmid: None,
        field,
        message: msg.to_string(),
        at: Utc::now(),
    }
}

/// Append-only, line-delimited error log:
/// `timestamp \t code \t table \t pmid \t field \t message`.
pub struct ErrorLog {
    out: Option<BufWriter<std::fs::File>>,
    counts: BTreeMap<ErrorCode, u64>,
    entries: u64,
}

impl ErrorLog {
    pub fn to_file(path: &Path) -> Result<ErrorLog> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ErrorLog {
            out: Some(BufWriter::new(file)),
            counts: BTreeMap::new(),
            entries: 0,
        })
    }

    /// Counting-only log for tests and ad-hoc loads.
    pub fn in_memory() -> ErrorLog {
        ErrorLog {
            out: None,
            counts: BTreeMap::new(),
            entries: 0,
        }
    }

    pub fn record(&mut self, e: &LoadError) {
        *self.counts.entry(e.code).or_insert(0) += 1;
        self.entries += 1;
        if let Some(out) = &mut self.out {
            let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.at.to_rfc3339(),
                e.code,
                e.table,
                e.pmid.map(|p| p.to_string()).unwrap_or_default(),
                e.field.as_deref().unwrap_or_default(),
                clean(&e.message),
            );
            let _ = out.flush();
        }
    }

    pub fn counts(&self) -> &BTreeMap<ErrorCode, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.entries
    }
}

/// Per-run loader statistics.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadStats {
    pub rows_staged: u64,
    pub rows_written: u64,
    pub rows_rejected: u64,
    pub statements_by_table: BTreeMap<String, u64>,
    pub rows_by_table: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlushOutcome {
    /// Row staged; buffer below threshold.
    Buffered,
    /// Staging hit the threshold; the buffer was written out.
    Flushed(usize),
    /// Row-fatal overflow under the reject policy; logged, not staged.
    Rejected,
}

/// Single logical writer owning the connection and all buffers.
pub struct Loader {
    db: Db,
    model: SchemaModel,
    dialect: Dialect,
    threshold: usize,
    policy: DuplicatePolicy,
    truncate_overflow: bool,
    buffers: BTreeMap<&'static str, Vec<Vec<Value>>>,
    pub errors: ErrorLog,
    stats: LoadStats,
}

impl Loader {
    pub fn new(
        db: Db,
        model: SchemaModel,
        threshold: usize,
        policy: DuplicatePolicy,
        truncate_overflow: bool,
        errors: ErrorLog,
    ) -> Loader {
        Loader {
            db,
            model,
            dialect: Dialect::Sqlite,
            threshold: threshold.max(1),
            policy,
            truncate_overflow,
            buffers: BTreeMap::new(),
            errors,
            stats: LoadStats::default(),
        }
    }

    pub fn db(&self) -> &Db {
        &self.db
    }

    pub fn stats(&self) -> &LoadStats {
        &self.stats
    }

    pub fn model(&self) -> &SchemaModel {
        &self.model
    }

    fn table_def(&self, table: &str) -> Result<&TableDef> {
        self.model
            .table(table)
            .ok_or_else(|| Error::InvalidSchema(format!("unknown table {table}")))
    }

    /// Stages one row; flushes the table's buffer when it reaches the
    /// threshold. Overlong text fields are rejected (or truncated under
    /// `truncate_overflow`) before they reach the database.
    pub fn stage_row(&mut self, table: &str, mut row: Vec<Value>) -> Result<FlushOutcome> {
        let def = self.table_def(table)?;
        if row.len() != def.columns.len() {
            return Err(Error::RowArity {
                table: table.to_string(),
                expected: def.columns.len(),
                got: row.len(),
            });
        }
        let table_name = def.name;
        let caps: Vec<(usize, &'static str, usize)> = def
            .columns
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.max_len().map(|m| (i, c.name, m as usize)))
            .collect();

        for (i, col_name, max) in caps {
            let text = match &row[i] {
                // A byte length within the cap implies the char count is too.
                Value::Text(s) if s.len() > max => s,
                _ => continue,
            };
            let chars = text.chars().count();
            if chars <= max {
                continue;
            }
            if self.truncate_overflow {
                let truncated: String = text.chars().take(max).collect();
                tracing::warn!(
                    table = table_name,
                    field = col_name,
                    chars,
                    max,
                    "overlong value truncated"
                );
                row[i] = Value::Text(truncated);
            } else {
                let e = LoadError {
                    code: ErrorCode::FieldTooLong,
                    table: table_name.to_string(),
                    pmid: row[0].as_int(),
                    field: Some(col_name.to_string()),
                    message: format!("value of {chars} chars exceeds {max}-char column"),
                    at: Utc::now(),
                };
                self.errors.record(&e);
                self.stats.rows_rejected += 1;
                return Ok(FlushOutcome::Rejected);
            }
        }

        let buffer = self.buffers.entry(table_name).or_default();
        buffer.push(row);
        self.stats.rows_staged += 1;
        if buffer.len() >= self.threshold {
            let written = self.flush_table(table_name)?;
            Ok(FlushOutcome::Flushed(written))
        } else {
            Ok(FlushOutcome::Buffered)
        }
    }

    /// Stages every row a citation expands to, across all 13 tables.
    pub fn stage_citation(&mut self, rec: &CitationRecord) -> Result<()> {
        for (table, row) in project_citation(rec) {
            self.stage_row(table, row)?;
        }
        Ok(())
    }

    /// Drains every non-empty buffer, `medline_citation` first.
    pub fn flush_all(&mut self) -> Result<u64> {
        let mut total = 0u64;
        for table in self.model.table_names() {
            total += self.flush_table(table)? as u64;
        }
        Ok(total)
    }

    fn bump_statement(&mut self, table: &str) {
        *self
            .stats
            .statements_by_table
            .entry(table.to_string())
            .or_insert(0) += 1;
    }

    fn insert_verb(&self) -> &'static str {
        match (self.policy, self.dialect) {
            (DuplicatePolicy::Replace, Dialect::Sqlite) => "INSERT OR REPLACE INTO",
            (DuplicatePolicy::Replace, Dialect::MySql) => "REPLACE INTO",
            _ => "INSERT INTO",
        }
    }

    fn column_list(&self, def: &TableDef) -> String {
        def.columns
            .iter()
            .map(|c| self.dialect.quote_ident(c.name))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// One statement carrying every buffered row as a literal value group.
    /// Literals sidestep the engine's bind-parameter cap at wide-table
    /// thresholds.
    fn multi_insert_sql(&self, def: &TableDef, rows: &[Vec<Value>]) -> String {
        let mut sql = String::with_capacity(rows.len() * 64);
        sql.push_str(&format!(
            "{} {} ({}) VALUES ",
            self.insert_verb(),
            self.dialect.quote_ident(def.name),
            self.column_list(def)
        ));
        for (i, row) in rows.iter().enumerate() {
            if i > 0 {
                sql.push(',');
            }
            sql.push('(');
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    sql.push(',');
                }
                match v {
                    Value::Null => sql.push_str("NULL"),
                    Value::Int(n) => sql.push_str(&n.to_string()),
                    Value::Text(s) => {
                        sql.push('\'');
                        sql.push_str(&self.dialect.escape_text(s));
                        sql.push('\'');
                    }
                }
            }
            sql.push(')');
        }
        sql.push(';');
        sql
    }

    fn single_insert_sql(&self, def: &TableDef) -> String {
        let placeholders = vec!["?"; def.columns.len()].join(", ");
        format!(
            "{} {} ({}) VALUES ({})",
            self.insert_verb(),
            self.dialect.quote_ident(def.name),
            self.column_list(def),
            placeholders
        )
    }

    /// Converts a row-level database error into a logged LoadError; returns
    /// Err only for run-aborting conditions.
    fn handle_row_error(&mut self, table: &str, pmid: Option<i64>, err: DbError) -> Result<()> {
        let mut le = classify_error(&err);
        le.table = table.to_string();
        le.pmid = pmid;
        let code = le.code;
        self.errors.record(&le);
        match code {
            ErrorCode::StorageFull => Err(Error::StorageFull(err.message)),
            ErrorCode::DuplicateKey if self.policy == DuplicatePolicy::Fail => Err(Error::Db(err)),
            // FieldTooLong, DuplicateKey under Skip, and Other are row-fatal
            // but run-survivable.
            _ => Ok(()),
        }
    }

    fn flush_table(&mut self, table: &str) -> Result<usize> {
        let rows = match self.buffers.get_mut(table) {
            Some(b) if !b.is_empty() => std::mem::take(b),
            _ => return Ok(0),
        };
        let def = self.table_def(table)?.clone();
        let mut written = 0usize;

        self.db.begin()?;
        let multi = self.multi_insert_sql(&def, &rows);
        self.bump_statement(table);
        match self.db.execute(&multi) {
            Ok(_) => written = rows.len(),
            Err(_) => {
                // Retry row by row inside the same transaction to isolate
                // the offending rows.
                let single = self.single_insert_sql(&def);
                for row in &rows {
                    self.bump_statement(table);
                    match self.db.insert_row(&single, row) {
                        Ok(_) => written += 1,
                        Err(e) => {
                            if let Err(fatal) = self.handle_row_error(table, row[0].as_int(), e) {
                                let _ = self.db.rollback();
                                return Err(fatal);
                            }
                        }
                    }
                }
            }
        }
        self.db.commit()?;
        self.stats.rows_written += written as u64;
        *self
            .stats
            .rows_by_table
            .entry(table.to_string())
            .or_insert(0) += written as u64;
        Ok(written)
    }

    /// Removes one PMID from every table in a single transaction. Buffers
    /// are drained first so staged rows cannot resurrect it.
    pub fn delete_citation(&mut self, pmid: i64) -> Result<BTreeMap<String, u64>> {
        self.flush_all()?;
        let mut counts = BTreeMap::new();
        self.db.begin()?;
        for table in self.model.table_names() {
            let sql = format!(
                "DELETE FROM {} WHERE {} = ?",
                self.dialect.quote_ident(table),
                self.dialect.quote_ident("pmid")
            );
            match self.db.execute_params(&sql, &[Value::Int(pmid)]) {
                Ok(n) => {
                    counts.insert(table.to_string(), n as u64);
                }
                Err(e) => {
                    let _ = self.db.rollback();
                    let mut le = classify_error(&e);
                    le.table = table.to_string();
                    le.pmid = Some(pmid);
                    self.errors.record(&le);
                    return Err(Error::Db(e));
                }
            }
        }
        self.db.commit()?;
        Ok(counts)
    }

    /// Applies the deferred index statements; returns how many indexes were
    /// actually created. Idempotent.
    pub fn apply_indexes(&mut self) -> Result<usize> {
        let before = self.db.index_names()?.len();
        for stmt in index_statements(&self.model, self.dialect)? {
            self.db.execute(&stmt)?;
        }
        let after = self.db.index_names()?.len();
        Ok(after - before)
    }
}

// === record projection ================================================

fn opt_text(v: &Option<String>) -> Value {
    Value::from_opt_text(v.as_deref())
}

fn date_value(d: &Option<chrono::NaiveDate>) -> Value {
    match d {
        Some(d) => Value::Text(d.format("%Y-%m-%d").to_string()),
        None => Value::Null,
    }
}

fn bool_value(b: bool) -> Value {
    Value::Int(b as i64)
}

/// Expands one record into `(table, row)` pairs, in model table order, with
/// `pmid` always the first column.
pub fn project_citation(rec: &CitationRecord) -> Vec<(&'static str, Vec<Value>)> {
    let pmid = Value::Int(rec.pmid);
    let mut rows: Vec<(&'static str, Vec<Value>)> = Vec::with_capacity(rec.total_rows());

    rows.push((
        CITATION_TABLE,
        vec![
            pmid.clone(),
            date_value(&rec.dates.created),
            date_value(&rec.dates.completed),
            date_value(&rec.dates.revised),
            opt_text(&rec.article_title),
            opt_text(&rec.abstract_text),
            opt_text(&rec.journal.title),
            opt_text(&rec.journal.iso_abbrev),
            opt_text(&rec.journal.issn),
            opt_text(&rec.journal.volume),
            opt_text(&rec.journal.issue),
            Value::from_opt_int(rec.journal.pub_year.map(i64::from)),
            Value::from_opt_int(rec.journal.pub_month.map(i64::from)),
            Value::from_opt_int(rec.journal.pub_day.map(i64::from)),
            opt_text(&rec.journal.medline_date_raw),
            opt_text(&rec.pagination),
            opt_text(&rec.language),
            opt_text(&rec.country),
            opt_text(&rec.nlm_unique_id),
            opt_text(&rec.status),
        ],
    ));

    for a in &rec.authors {
        rows.push((
            "medline_author",
            vec![
                pmid.clone(),
                Value::Int(a.ordinal as i64),
                opt_text(&a.last_name),
                opt_text(&a.fore_name),
                opt_text(&a.initials),
                opt_text(&a.suffix),
                opt_text(&a.collective_name),
                opt_text(&a.affiliation),
            ],
        ));
    }

    for (i, c) in rec.chemicals.iter().enumerate() {
        rows.push((
            "medline_chemical_list",
            vec![
                pmid.clone(),
                Value::Int(i as i64 + 1),
                opt_text(&c.registry_number),
                Value::Text(c.name_of_substance.clone()),
            ],
        ));
    }

    // One row per (descriptor, qualifier) pair; a bare descriptor gets a
    // single null-qualifier row.
    let mut mesh_ord = 0i64;
    for m in &rec.mesh {
        if m.qualifiers.is_empty() {
            mesh_ord += 1;
            rows.push((
                "medline_mesh",
                vec![
                    pmid.clone(),
                    Value::Int(mesh_ord),
                    Value::Text(m.descriptor.clone()),
                    bool_value(m.descriptor_major),
                    Value::Null,
                    Value::Null,
                ],
            ));
        } else {
            for (q, q_major) in &m.qualifiers {
                mesh_ord += 1;
                rows.push((
                    "medline_mesh",
                    vec![
                        pmid.clone(),
                        Value::Int(mesh_ord),
                        Value::Text(m.descriptor.clone()),
                        bool_value(m.descriptor_major),
                        Value::Text(q.clone()),
                        bool_value(*q_major),
                    ],
                ));
            }
        }
    }

    for (i, k) in rec.keywords.iter().enumerate() {
        rows.push((
            "medline_keyword_list",
            vec![
                pmid.clone(),
                Value::Int(i as i64 + 1),
                Value::Text(k.keyword.clone()),
                bool_value(k.major_topic),
            ],
        ));
    }

    for (i, g) in rec.grants.iter().enumerate() {
        rows.push((
            "medline_grant",
            vec![
                pmid.clone(),
                Value::Int(i as i64 + 1),
                opt_text(&g.grant_id),
                opt_text(&g.acronym),
                opt_text(&g.agency),
                opt_text(&g.country),
            ],
        ));
    }

    for (i, p) in rec.publication_types.iter().enumerate() {
        rows.push((
            "medline_publication_type",
            vec![
                pmid.clone(),
                Value::Int(i as i64 + 1),
                Value::Text(p.clone()),
            ],
        ));
    }

    let mut bank_ord = 0i64;
    for b in &rec.data_banks {
        if b.accession_numbers.is_empty() {
            bank_ord += 1;
            rows.push((
                "medline_data_bank",
                vec![
                    pmid.clone(),
                    Value::Int(bank_ord),
                    Value::Text(b.name.clone()),
                    Value::Null,
                ],
            ));
        } else {
            for acc in &b.accession_numbers {
                bank_ord += 1;
                rows.push((
                    "medline_data_bank",
                    vec![
                        pmid.clone(),
                        Value::Int(bank_ord),
                        Value::Text(b.name.clone()),
                        Value::Text(acc.clone()),
                    ],
                ));
            }
        }
    }

    for (i, g) in rec.gene_symbols.iter().enumerate() {
        rows.push((
            "medline_gene_symbol",
            vec![
                pmid.clone(),
                Value::Int(i as i64 + 1),
                Value::Text(g.clone()),
            ],
        ));
    }

    for (i, cc) in rec.comments_corrections.iter().enumerate() {
        rows.push((
            "medline_comments_corrections",
            vec![
                pmid.clone(),
                Value::Int(i as i64 + 1),
                opt_text(&cc.ref_type),
                Value::from_opt_int(cc.ref_pmid),
                opt_text(&cc.note),
            ],
        ));
    }

    for (i, p) in rec.personal_name_subjects.iter().enumerate() {
        rows.push((
            "medline_personal_name_subject",
            vec![
                pmid.clone(),
                Value::Int(i as i64 + 1),
                opt_text(&p.last_name),
                opt_text(&p.fore_name),
                opt_text(&p.initials),
                opt_text(&p.suffix),
            ],
        ));
    }

    for (i, p) in rec.investigators.iter().enumerate() {
        rows.push((
            "medline_investigator",
            vec![
                pmid.clone(),
                Value::Int(i as i64 + 1),
                opt_text(&p.last_name),
                opt_text(&p.fore_name),
                opt_text(&p.initials),
                opt_text(&p.suffix),
                opt_text(&p.affiliation),
            ],
        ));
    }

    for (i, s) in rec.citation_subsets.iter().enumerate() {
        rows.push((
            "medline_citation_subset",
            vec![
                pmid.clone(),
                Value::Int(i as i64 + 1),
                Value::Text(s.clone()),
            ],
        ));
    }

    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ensure_database, pmid_index_name};

    fn test_loader(threshold: usize, policy: DuplicatePolicy) -> Loader {
        let db = Db::open_in_memory().unwrap();
        let model = SchemaModel::medline();
        ensure_database(&db, &model).unwrap();
        Loader::new(db, model, threshold, policy, false, ErrorLog::in_memory())
    }

    fn gene_row(pmid: i64, ord: i64) -> Vec<Value> {
        vec![
            Value::Int(pmid),
            Value::Int(ord),
            Value::Text(format!("GENE{pmid}_{ord}")),
        ]
    }

    fn citation_row(pmid: i64) -> Vec<Value> {
        let mut row = vec![Value::Int(pmid)];
        row.extend(std::iter::repeat_with(|| Value::Null).take(10));
        row.push(Value::Int(2015)); // pub_date_year
        row.extend(std::iter::repeat_with(|| Value::Null).take(8));
        row
    }

    fn statements_for(loader: &Loader, table: &str) -> u64 {
        loader
            .stats()
            .statements_by_table
            .get(table)
            .copied()
            .unwrap_or(0)
    }

    #[test]
    fn rows_buffer_until_threshold() {
        let mut loader = test_loader(3, DuplicatePolicy::Skip);
        assert_eq!(
            loader
                .stage_row("medline_gene_symbol", gene_row(1, 1))
                .unwrap(),
            FlushOutcome::Buffered
        );
        assert_eq!(
            loader
                .stage_row("medline_gene_symbol", gene_row(1, 2))
                .unwrap(),
            FlushOutcome::Buffered
        );
        assert_eq!(statements_for(&loader, "medline_gene_symbol"), 0);
        assert_eq!(
            loader
                .stage_row("medline_gene_symbol", gene_row(1, 3))
                .unwrap(),
            FlushOutcome::Flushed(3)
        );
        assert_eq!(statements_for(&loader, "medline_gene_symbol"), 1);
        assert_eq!(
            loader
                .db()
                .query_i64("SELECT COUNT(*) FROM medline_gene_symbol")
                .unwrap(),
            3
        );
    }

    #[test]
    fn threshold_one_flushes_every_row() {
        let mut loader = test_loader(1, DuplicatePolicy::Skip);
        for ord in 1..=4 {
            assert_eq!(
                loader
                    .stage_row("medline_gene_symbol", gene_row(2, ord))
                    .unwrap(),
                FlushOutcome::Flushed(1)
            );
        }
        assert_eq!(statements_for(&loader, "medline_gene_symbol"), 4);
    }

    #[test]
    fn flush_all_drains_every_buffer() {
        let mut loader = test_loader(100, DuplicatePolicy::Skip);
        assert_eq!(loader.flush_all().unwrap(), 0);
        assert!(loader.stats().statements_by_table.is_empty());

        for ord in 1..=2 {
            loader
                .stage_row("medline_gene_symbol", gene_row(3, ord))
                .unwrap();
        }
        for pmid in 10..15 {
            loader.stage_row(CITATION_TABLE, citation_row(pmid)).unwrap();
        }
        assert_eq!(loader.flush_all().unwrap(), 7);
        assert_eq!(statements_for(&loader, "medline_gene_symbol"), 1);
        assert_eq!(statements_for(&loader, CITATION_TABLE), 1);
    }

    #[test]
    fn duplicate_under_skip_drops_row_and_logs() {
        let mut loader = test_loader(100, DuplicatePolicy::Skip);
        loader.stage_row(CITATION_TABLE, citation_row(7)).unwrap();
        loader.stage_row(CITATION_TABLE, citation_row(7)).unwrap();
        loader.stage_row(CITATION_TABLE, citation_row(8)).unwrap();
        let written = loader.flush_all().unwrap();
        assert_eq!(written, 2);
        assert_eq!(
            loader.errors.counts().get(&ErrorCode::DuplicateKey).copied(),
            Some(1)
        );
        assert_eq!(
            loader
                .db()
                .query_i64("SELECT COUNT(*) FROM medline_citation")
                .unwrap(),
            2
        );
    }

    #[test]
    fn duplicate_under_replace_wins_silently() {
        let mut loader = test_loader(1, DuplicatePolicy::Replace);
        let mut row = citation_row(9);
        row[4] = Value::Text("first".into());
        loader.stage_row(CITATION_TABLE, row).unwrap();
        let mut row = citation_row(9);
        row[4] = Value::Text("second".into());
        loader.stage_row(CITATION_TABLE, row).unwrap();
        assert_eq!(loader.errors.total(), 0);
        let rows = loader
            .db()
            .query_rows(
                "SELECT article_title FROM medline_citation WHERE pmid = 9",
                &[],
            )
            .unwrap();
        assert_eq!(rows, vec![vec![Value::Text("second".into())]]);
    }

    #[test]
    fn duplicate_under_fail_aborts() {
        let mut loader = test_loader(1, DuplicatePolicy::Fail);
        loader.stage_row(CITATION_TABLE, citation_row(5)).unwrap();
        let err = loader
            .stage_row(CITATION_TABLE, citation_row(5))
            .unwrap_err();
        assert!(matches!(err, Error::Db(_)));
    }

    #[test]
    fn overlong_field_rejected_and_attributed() {
        let mut loader = test_loader(10, DuplicatePolicy::Skip);
        let row = vec![
            Value::Int(1),
            Value::Int(1),
            Value::Text("Doe".into()),
            Value::Null,
            Value::Text("X".repeat(65)), // initials over the 64-char cap
            Value::Null,
            Value::Null,
            Value::Null,
        ];
        let outcome = loader.stage_row("medline_author", row).unwrap();
        assert_eq!(outcome, FlushOutcome::Rejected);
        assert_eq!(loader.stats().rows_rejected, 1);
        assert_eq!(
            loader.errors.counts().get(&ErrorCode::FieldTooLong).copied(),
            Some(1)
        );
    }

    #[test]
    fn overlong_field_truncated_when_opted_in() {
        let db = Db::open_in_memory().unwrap();
        let model = SchemaModel::medline();
        ensure_database(&db, &model).unwrap();
        let mut loader = Loader::new(
            db,
            model,
            1,
            DuplicatePolicy::Skip,
            true,
            ErrorLog::in_memory(),
        );
        let row = vec![
            Value::Int(1),
            Value::Int(1),
            Value::Text("Doe".into()),
            Value::Null,
            Value::Text("X".repeat(80)),
            Value::Null,
            Value::Null,
            Value::Null,
        ];
        assert_eq!(
            loader.stage_row("medline_author", row).unwrap(),
            FlushOutcome::Flushed(1)
        );
        // Truncation is a logged warning, not an error-log event.
        assert_eq!(loader.errors.total(), 0);
        let rows = loader
            .db()
            .query_rows("SELECT length(initials) FROM medline_author", &[])
            .unwrap();
        assert_eq!(rows, vec![vec![Value::Int(64)]]);
    }

    #[test]
    fn multibyte_length_cap_counts_chars_not_bytes() {
        let mut loader = test_loader(1, DuplicatePolicy::Skip);
        let row = vec![
            Value::Int(1),
            Value::Int(1),
            Value::Text("Doe".into()),
            Value::Null,
            Value::Text("\u{e9}".repeat(64)), // 128 bytes but 64 chars: fits
            Value::Null,
            Value::Null,
            Value::Null,
        ];
        assert_eq!(
            loader.stage_row("medline_author", row).unwrap(),
            FlushOutcome::Flushed(1)
        );
        assert_eq!(loader.errors.total(), 0);
    }

    #[test]
    fn arity_mismatch_is_an_error() {
        let mut loader = test_loader(10, DuplicatePolicy::Skip);
        let err = loader
            .stage_row("medline_gene_symbol", vec![Value::Int(1)])
            .unwrap_err();
        assert!(matches!(err, Error::RowArity { .. }));
    }

    #[test]
    fn classify_mysql_codes() {
        let e = classify_error(&DbError::new(
            Some(1406),
            "Data too long for column 'initials' at row 1",
        ));
        assert_eq!(e.code, ErrorCode::FieldTooLong);
        assert_eq!(e.field.as_deref(), Some("initials"));

        let e = classify_error(&DbError::new(
            Some(1062),
            "Duplicate entry '12345' for key 'PRIMARY'",
        ));
        assert_eq!(e.code, ErrorCode::DuplicateKey);

        let e = classify_error(&DbError::new(
            Some(1114),
            "The table 'medline_author' is full",
        ));
        assert_eq!(e.code, ErrorCode::StorageFull);

        let e = classify_error(&DbError::new(Some(9999), "server on fire"));
        assert_eq!(e.code, ErrorCode::Other);
    }

    #[test]
    fn classify_native_sqlite_errors() {
        let db = Db::open_in_memory().unwrap();
        let model = SchemaModel::medline();
        ensure_database(&db, &model).unwrap();
        db.execute("INSERT INTO medline_citation (pmid) VALUES (1)")
            .unwrap();

        let dup = db
            .execute("INSERT INTO medline_citation (pmid) VALUES (1)")
            .unwrap_err();
        let e = classify_error(&dup);
        assert_eq!(e.code, ErrorCode::DuplicateKey);
        assert_eq!(e.table, "medline_citation");

        let long = "X".repeat(80);
        let check = db
            .execute(&format!(
                "INSERT INTO medline_author (pmid, ord, last_name, initials) \
                 VALUES (1, 1, 'A', '{long}')"
            ))
            .unwrap_err();
        let e = classify_error(&check);
        assert_eq!(e.code, ErrorCode::FieldTooLong);
        assert_eq!(e.table, "medline_author");
        assert_eq!(e.field.as_deref(), Some("initials"));
    }

    #[test]
    fn delete_citation_removes_all_rows_idempotently() {
        let mut loader = test_loader(100, DuplicatePolicy::Skip);
        let rec = CitationRecord {
            pmid: 77,
            article_title: Some("T".into()),
            authors: vec![crate::record::AuthorEntry {
                ordinal: 1,
                last_name: Some("A".into()),
                ..Default::default()
            }],
            gene_symbols: vec!["G1".into(), "G2".into()],
            citation_subsets: vec!["IM".into()],
            ..Default::default()
        };
        loader.stage_citation(&rec).unwrap();
        // Rows are still buffered: delete must flush first.
        let counts = loader.delete_citation(77).unwrap();
        assert_eq!(counts["medline_citation"], 1);
        assert_eq!(counts["medline_author"], 1);
        assert_eq!(counts["medline_gene_symbol"], 2);
        assert_eq!(counts["medline_citation_subset"], 1);
        assert_eq!(counts.values().sum::<u64>(), 5);
        assert_eq!(
            loader
                .db()
                .query_i64("SELECT COUNT(*) FROM medline_gene_symbol")
                .unwrap(),
            0
        );

        let again = loader.delete_citation(77).unwrap();
        assert_eq!(again.values().sum::<u64>(), 0);
    }

    #[test]
    fn apply_indexes_creates_pmid_index_everywhere_then_noops() {
        let mut loader = test_loader(10, DuplicatePolicy::Skip);
        let created = loader.apply_indexes().unwrap();
        assert!(created >= 13);
        let names = loader.db().index_names().unwrap();
        for t in loader.model().table_names() {
            assert!(
                names.contains(&pmid_index_name(t)),
                "missing pmid index on {t}"
            );
        }
        assert_eq!(loader.apply_indexes().unwrap(), 0);
    }

    #[test]
    fn indexed_query_equivalent_and_not_slower_on_100k_rows() {
        let mut loader = test_loader(5000, DuplicatePolicy::Skip);
        for pmid in 0..100_000i64 {
            loader
                .stage_row("medline_gene_symbol", gene_row(pmid, 1))
                .unwrap();
        }
        loader.flush_all().unwrap();
        let query = "SELECT gene_symbol FROM medline_gene_symbol WHERE pmid = 73561";

        let reps = 200;
        let started = std::time::Instant::now();
        let mut unindexed_rows = Vec::new();
        for _ in 0..reps {
            unindexed_rows = loader.db().query_rows(query, &[]).unwrap();
        }
        let unindexed = started.elapsed();

        loader.apply_indexes().unwrap();

        let started = std::time::Instant::now();
        let mut indexed_rows = Vec::new();
        for _ in 0..reps {
            indexed_rows = loader.db().query_rows(query, &[]).unwrap();
        }
        let indexed = started.elapsed();

        assert_eq!(unindexed_rows, indexed_rows);
        assert_eq!(indexed_rows.len(), 1);
        assert!(
            indexed <= unindexed,
            "indexed {indexed:?} should not exceed unindexed {unindexed:?}"
        );
    }

    #[test]
    fn error_log_accounting_matches_rows() {
        let mut loader = test_loader(4, DuplicatePolicy::Skip);
        // 6 staged rows, 2 of them colliding with already-written ones.
        for pmid in [1, 2, 3, 1, 2, 4] {
            loader.stage_row(CITATION_TABLE, citation_row(pmid)).unwrap();
        }
        loader.flush_all().unwrap();
        let attempted = loader.stats().rows_staged;
        let written = loader.stats().rows_written;
        let failed = loader.errors.total();
        assert_eq!(attempted, written + failed);
        assert_eq!(written, 4);
        assert_eq!(failed, 2);
    }

    #[test]
    fn statement_count_within_bound() {
        let mut loader = test_loader(10, DuplicatePolicy::Skip);
        let rows = 95u64;
        for pmid in 0..rows {
            loader
                .stage_row(CITATION_TABLE, citation_row(pmid as i64))
                .unwrap();
        }
        loader.flush_all().unwrap();
        let statements = statements_for(&loader, CITATION_TABLE);
        let bound = rows.div_ceil(10) + 1;
        assert!(statements <= bound, "{statements} statements > bound {bound}");
    }

    #[test]
    fn batch_size_invariance_on_fixed_rows() {
        let contents = |threshold: usize| {
            let mut loader = test_loader(threshold, DuplicatePolicy::Skip);
            for pmid in 0..137i64 {
                loader.stage_row(CITATION_TABLE, citation_row(pmid)).unwrap();
                loader
                    .stage_row("medline_gene_symbol", gene_row(pmid, 1))
                    .unwrap();
            }
            loader.flush_all().unwrap();
            let mut out = loader
                .db()
                .query_rows("SELECT pmid FROM medline_citation ORDER BY pmid", &[])
                .unwrap();
            out.extend(
                loader
                    .db()
                    .query_rows(
                        "SELECT pmid, gene_symbol FROM medline_gene_symbol ORDER BY pmid",
                        &[],
                    )
                    .unwrap(),
            );
            out
        };
        let a = contents(1);
        let b = contents(7);
        let c = contents(5000);
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn projection_arity_matches_schema() {
        let model = SchemaModel::medline();
        let rec = CitationRecord {
            pmid: 1,
            article_title: Some("T".into()),
            authors: vec![Default::default()],
            mesh: vec![crate::record::MeshEntry {
                descriptor: "D".into(),
                descriptor_major: false,
                qualifiers: vec![("q".into(), true)],
            }],
            chemicals: vec![crate::record::ChemicalEntry {
                registry_number: None,
                name_of_substance: "S".into(),
            }],
            keywords: vec![Default::default()],
            grants: vec![crate::record::GrantEntry {
                grant_id: Some("G".into()),
                ..Default::default()
            }],
            publication_types: vec!["PT".into()],
            data_banks: vec![crate::record::DataBankEntry {
                name: "B".into(),
                accession_numbers: vec![],
            }],
            gene_symbols: vec!["G".into()],
            comments_corrections: vec![Default::default()],
            personal_name_subjects: vec![Default::default()],
            investigators: vec![Default::default()],
            citation_subsets: vec!["IM".into()],
            ..Default::default()
        };
        let rows = project_citation(&rec);
        assert_eq!(rows.len(), rec.total_rows());
        for (table, row) in rows {
            let def = model.table(table).expect("projected into unknown table");
            assert_eq!(row.len(), def.columns.len(), "arity mismatch for {table}");
            assert_eq!(row[0], Value::Int(1), "pmid must be first in {table}");
        }
    }
}
