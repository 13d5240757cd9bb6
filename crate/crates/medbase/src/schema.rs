//! Relational model: thirteen tables keyed by PMID, DDL emission with
//! optional index deferral, and database initialization.

use crate::db::Db;
use crate::error::{Error, Result};

/// Semantic column type, mapped per dialect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqlType {
    /// 64-bit integer.
    Int,
    /// Bounded text; the limit is enforced in characters.
    Text(u32),
    /// Unbounded text (abstracts).
    LongText,
    /// Calendar date, stored as ISO `YYYY-MM-DD` on the embedded engine.
    Date,
    /// Boolean flag stored as 0/1.
    Bool,
}

#[derive(Debug, Clone)]
pub struct ColumnDef {
    pub name: &'static str,
    pub sql_type: SqlType,
    pub nullable: bool,
}

impl ColumnDef {
    const fn new(name: &'static str, sql_type: SqlType, nullable: bool) -> Self {
        ColumnDef {
            name,
            sql_type,
            nullable,
        }
    }

    /// Character cap for bounded text columns.
    pub fn max_len(&self) -> Option<u32> {
        match self.sql_type {
            SqlType::Text(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TableDef {
    pub name: &'static str,
    pub columns: Vec<ColumnDef>,
    /// Primary key columns. `medline_citation` keys on `pmid` alone; child
    /// tables key on `(pmid, ord)` so that re-inserting the same citation is
    /// detectable per row.
    pub key_columns: Vec<&'static str>,
    pub indexed_columns: Vec<&'static str>,
    /// Whether `pmid` references `medline_citation(pmid)`.
    pub references_citation: bool,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<&'static str> {
        self.columns.iter().map(|c| c.name).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SchemaModel {
    pub tables: Vec<TableDef>,
    pub version: String,
}

pub const CITATION_TABLE: &str = "medline_citation";

/// Identity-like short fields (initials, suffixes, registry numbers).
const LEN_IDENT: u32 = 64;
/// Names, descriptors, single-line values.
const LEN_NAME: u32 = 255;
/// Titles.
const LEN_TITLE: u32 = 4000;

fn child_table(
    name: &'static str,
    extra: Vec<ColumnDef>,
    extra_indexes: Vec<&'static str>,
) -> TableDef {
    let mut columns = vec![
        ColumnDef::new("pmid", SqlType::Int, false),
        ColumnDef::new("ord", SqlType::Int, false),
    ];
    columns.extend(extra);
    let mut indexed = vec!["pmid"];
    indexed.extend(extra_indexes);
    TableDef {
        name,
        columns,
        key_columns: vec!["pmid", "ord"],
        indexed_columns: indexed,
        references_citation: true,
    }
}

impl SchemaModel {
    /// The thirteen-table MEDLINE model.
    pub fn medline() -> SchemaModel {
        use SqlType::*;
        let citation = TableDef {
            name: CITATION_TABLE,
            columns: vec![
                ColumnDef::new("pmid", Int, false),
                ColumnDef::new("date_created", Date, true),
                ColumnDef::new("date_completed", Date, true),
                ColumnDef::new("date_revised", Date, true),
                ColumnDef::new("article_title", Text(LEN_TITLE), true),
                ColumnDef::new("abstract_text", LongText, true),
                ColumnDef::new("journal_title", Text(LEN_TITLE), true),
                ColumnDef::new("journal_iso_abbrev", Text(LEN_NAME), true),
                ColumnDef::new("issn", Text(LEN_IDENT), true),
                ColumnDef::new("volume", Text(LEN_IDENT), true),
                ColumnDef::new("issue", Text(LEN_IDENT), true),
                ColumnDef::new("pub_date_year", Int, true),
                ColumnDef::new("pub_date_month", Int, true),
                ColumnDef::new("pub_date_day", Int, true),
                ColumnDef::new("medline_date_raw", Text(LEN_NAME), true),
                ColumnDef::new("pagination", Text(LEN_NAME), true),
                ColumnDef::new("language", Text(LEN_IDENT), true),
                ColumnDef::new("country", Text(LEN_NAME), true),
                ColumnDef::new("nlm_unique_id", Text(LEN_IDENT), true),
                ColumnDef::new("citation_status", Text(LEN_IDENT), true),
            ],
            key_columns: vec!["pmid"],
            indexed_columns: vec!["pmid", "pub_date_year"],
            references_citation: false,
        };

        let tables = vec![
            citation,
            child_table(
                "medline_author",
                vec![
                    ColumnDef::new("last_name", Text(LEN_NAME), true),
                    ColumnDef::new("fore_name", Text(LEN_NAME), true),
                    ColumnDef::new("initials", Text(LEN_IDENT), true),
                    ColumnDef::new("suffix", Text(LEN_IDENT), true),
                    ColumnDef::new("collective_name", Text(LEN_NAME), true),
                    ColumnDef::new("affiliation", Text(LEN_TITLE), true),
                ],
                vec![],
            ),
            child_table(
                "medline_chemical_list",
                vec![
                    ColumnDef::new("registry_number", Text(LEN_IDENT), true),
                    ColumnDef::new("name_of_substance", Text(LEN_NAME), true),
                ],
                vec!["name_of_substance"],
            ),
            child_table(
                "medline_mesh",
                vec![
                    ColumnDef::new("descriptor", Text(LEN_NAME), true),
                    ColumnDef::new("descriptor_major", SqlType::Bool, true),
                    ColumnDef::new("qualifier", Text(LEN_NAME), true),
                    ColumnDef::new("qualifier_major", SqlType::Bool, true),
                ],
                vec!["descriptor"],
            ),
            child_table(
                "medline_keyword_list",
                vec![
                    ColumnDef::new("keyword", Text(LEN_NAME), true),
                    ColumnDef::new("major_topic", SqlType::Bool, true),
                ],
                vec![],
            ),
            child_table(
                "medline_grant",
                vec![
                    ColumnDef::new("grant_id", Text(LEN_NAME), true),
                    ColumnDef::new("acronym", Text(LEN_IDENT), true),
                    ColumnDef::new("agency", Text(LEN_NAME), true),
                    ColumnDef::new("country", Text(LEN_NAME), true),
                ],
                vec![],
            ),
            child_table(
                "medline_publication_type",
                vec![ColumnDef::new("publication_type", Text(LEN_NAME), true)],
                vec![],
            ),
            child_table(
                "medline_data_bank",
                vec![
                    ColumnDef::new("data_bank_name", Text(LEN_NAME), true),
                    ColumnDef::new("accession_number", Text(LEN_NAME), true),
                ],
                vec![],
            ),
            child_table(
                "medline_gene_symbol",
                vec![ColumnDef::new("gene_symbol", Text(LEN_NAME), true)],
                vec![],
            ),
            child_table(
                "medline_comments_corrections",
                vec![
                    ColumnDef::new("ref_type", Text(LEN_IDENT), true),
                    ColumnDef::new("ref_pmid", SqlType::Int, true),
                    ColumnDef::new("note", Text(LEN_TITLE), true),
                ],
                vec![],
            ),
            child_table(
                "medline_personal_name_subject",
                vec![
                    ColumnDef::new("last_name", Text(LEN_NAME), true),
                    ColumnDef::new("fore_name", Text(LEN_NAME), true),
                    ColumnDef::new("initials", Text(LEN_IDENT), true),
                    ColumnDef::new("suffix", Text(LEN_IDENT), true),
                ],
                vec![],
            ),
            child_table(
                "medline_investigator",
                vec![
                    ColumnDef::new("last_name", Text(LEN_NAME), true),
                    ColumnDef::new("fore_name", Text(LEN_NAME), true),
                    ColumnDef::new("initials", Text(LEN_IDENT), true),
                    ColumnDef::new("suffix", Text(LEN_IDENT), true),
                    ColumnDef::new("affiliation", Text(LEN_TITLE), true),
                ],
                vec![],
            ),
            child_table(
                "medline_citation_subset",
                vec![ColumnDef::new("citation_subset", Text(LEN_IDENT), true)],
                vec![],
            ),
        ];

        SchemaModel {
            tables,
            version: "medline-2017".to_string(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_names(&self) -> Vec<&'static str> {
        self.tables.iter().map(|t| t.name).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tables.len() != 13 {
            return Err(Error::InvalidSchema(format!(
                "expected 13 tables, found {}",
                self.tables.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.tables {
            if !seen.insert(t.name) {
                return Err(Error::InvalidSchema(format!("duplicate table name {}", t.name)));
            }
            if t.column("pmid").is_none() {
                return Err(Error::InvalidSchema(format!("table {} lacks pmid", t.name)));
            }
            if !t.indexed_columns.contains(&"pmid") {
                return Err(Error::InvalidSchema(format!(
                    "table {} does not index pmid",
                    t.name
                )));
            }
            for key in &t.key_columns {
                if t.column(key).is_none() {
                    return Err(Error::InvalidSchema(format!(
                        "table {} keys on unknown column {key}",
                        t.name
                    )));
                }
            }
        }
        let pk_tables: Vec<_> = self
            .tables
            .iter()
            .filter(|t| t.key_columns == ["pmid"])
            .collect();
        if pk_tables.len() != 1 || pk_tables[0].name != CITATION_TABLE {
            return Err(Error::InvalidSchema(
                "exactly one table (medline_citation) must key on pmid alone".to_string(),
            ));
        }
        if self.tables[0].name != CITATION_TABLE {
            return Err(Error::InvalidSchema(
                "medline_citation must come first in dependency order".to_string(),
            ));
        }
        for t in &self.tables {
            if t.name != CITATION_TABLE && !t.references_citation {
                return Err(Error::InvalidSchema(format!(
                    "table {} must reference medline_citation",
                    t.name
                )));
            }
        }
        Ok(())
    }
}

/// Target DDL dialect. The embedded dialect is what this build executes;
/// the server dialect exists for `schema dump` exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    /// Embedded engine (SQLite). Length caps become named CHECK constraints.
    Sqlite,
    /// MySQL/MariaDB-compatible server DDL.
    MySql,
}

impl Dialect {
    pub fn quote_ident(&self, ident: &str) -> String {
        match self {
            Dialect::Sqlite => format!("\"{ident}\""),
            Dialect::MySql => format!("`{ident}`"),
        }
    }

    fn type_name(&self, t: SqlType) -> String {
        match (self, t) {
            (Dialect::Sqlite, SqlType::Int) => "INTEGER".into(),
            (Dialect::Sqlite, SqlType::Text(_)) => "TEXT".into(),
            (Dialect::Sqlite, SqlType::LongText) => "TEXT".into(),
            (Dialect::Sqlite, SqlType::Date) => "TEXT".into(),
            (Dialect::Sqlite, SqlType::Bool) => "INTEGER".into(),
            (Dialect::MySql, SqlType::Int) => "BIGINT".into(),
            (Dialect::MySql, SqlType::Text(n)) => format!("VARCHAR({n})"),
            (Dialect::MySql, SqlType::LongText) => "LONGTEXT".into(),
            (Dialect::MySql, SqlType::Date) => "DATE".into(),
            (Dialect::MySql, SqlType::Bool) => "TINYINT(1)".into(),
        }
    }

    /// Escapes a text literal for inline SQL.
    pub fn escape_text(&self, s: &str) -> String {
        // Both dialects double single quotes; MySQL additionally needs
        // backslashes doubled because of its default escape syntax.
        let mut out = String::with_capacity(s.len() + 2);
        for ch in s.chars() {
            match ch {
                '\'' => out.push_str("''"),
                '\\' if *self == Dialect::MySql => out.push_str("\\\\"),
                c => out.push(c),
            }
        }
        out
    }
}

/// Name of the per-table PMID index.
pub fn pmid_index_name(table: &str) -> String {
    format!("idx_{table}_pmid")
}

fn index_name(table: &str, column: &str) -> String {
    format!("idx_{table}_{column}")
}

fn check_constraint_name(table: &str, column: &str) -> String {
    format!("ck_{table}_{column}")
}

fn create_table_sql(table: &TableDef, dialect: Dialect) -> String {
    let mut lines: Vec<String> = Vec::new();
    for col in &table.columns {
        let mut line = format!(
            "  {} {}",
            dialect.quote_ident(col.name),
            dialect.type_name(col.sql_type)
        );
        if !col.nullable {
            line.push_str(" NOT NULL");
        }
        if dialect == Dialect::Sqlite {
            if let Some(n) = col.max_len() {
                line.push_str(&format!(
                    " CONSTRAINT {} CHECK ({} IS NULL OR length({}) <= {n})",
                    check_constraint_name(table.name, col.name),
                    dialect.quote_ident(col.name),
                    dialect.quote_ident(col.name),
                ));
            }
        }
        lines.push(line);
    }
    let keys: Vec<String> = table
        .key_columns
        .iter()
        .map(|k| dialect.quote_ident(k))
        .collect();
    lines.push(format!("  PRIMARY KEY ({})", keys.join(", ")));
    if table.references_citation {
        lines.push(format!(
            "  FOREIGN KEY ({}) REFERENCES {} ({})",
            dialect.quote_ident("pmid"),
            dialect.quote_ident(CITATION_TABLE),
            dialect.quote_ident("pmid"),
        ));
    }
    format!(
        "CREATE TABLE IF NOT EXISTS {} (\n{}\n);",
        dialect.quote_ident(table.name),
        lines.join(",\n")
    )
}

/// CREATE statements in dependency order, `medline_citation` first.
/// With `defer_indexes` no index statements are included; bulk loads apply
/// them afterwards via [`index_statements`].
pub fn ddl_statements(model: &SchemaModel, dialect: Dialect, defer_indexes: bool) -> Result<Vec<String>> {
    model.validate()?;
    let mut stmts: Vec<String> = model
        .tables
        .iter()
        .map(|t| create_table_sql(t, dialect))
        .collect();
    if !defer_indexes {
        stmts.extend(index_statements(model, dialect)?);
    }
    Ok(stmts)
}

/// Deferred index statements, one per indexed column per table, in
/// create-if-absent form so re-application is a no-op.
pub fn index_statements(model: &SchemaModel, dialect: Dialect) -> Result<Vec<String>> {
    model.validate()?;
    let mut stmts = Vec::new();
    for table in &model.tables {
        for col in &table.indexed_columns {
            // MySQL proper lacks IF NOT EXISTS on CREATE INDEX; the emitted
            // form follows MariaDB, which accepts it.
            stmts.push(format!(
                "CREATE INDEX IF NOT EXISTS {} ON {} ({});",
                dialect.quote_ident(&index_name(table.name, col)),
                dialect.quote_ident(table.name),
                dialect.quote_ident(col),
            ));
        }
    }
    Ok(stmts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsureOutcome {
    Created,
    Exists,
}

/// Creates the model's tables if absent (indexes deferred); verifies them if
/// present. Tables outside the model (the tool's own ledger) are ignored.
pub fn ensure_database(db: &Db, model: &SchemaModel) -> Result<EnsureOutcome> {
    model.validate()?;
    let existing = db.table_names()?;
    let present: Vec<&str> = model
        .table_names()
        .into_iter()
        .filter(|n| existing.iter().any(|e| e == n))
        .collect();
    if present.is_empty() {
        for stmt in ddl_statements(model, Dialect::Sqlite, true)? {
            db.execute(&stmt)?;
        }
        return Ok(EnsureOutcome::Created);
    }
    if present.len() == model.tables.len() {
        return Ok(EnsureOutcome::Exists);
    }
    let missing: Vec<&str> = model
        .table_names()
        .into_iter()
        .filter(|n| !present.contains(n))
        .collect();
    Err(Error::SchemaMismatch(format!(
        "database has {} of {} model tables; missing: {}",
        present.len(),
        model.tables.len(),
        missing.join(", ")
    )))
}
