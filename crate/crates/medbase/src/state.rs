//! Processed-file ledger and run reporting.
//!
//! The ledger lives in a tool-owned table (`medoc_ledger`) in the same
//! database as the data, so a file's completion mark and its rows share one
//! durability domain. Marking a file done is a write-ahead step: it commits
//! before the local source files are deleted.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::db::{Db, Value};
use crate::error::{Error, Result};
use crate::fetch::Repository;
use crate::load::ErrorCode;

pub const LEDGER_TABLE: &str = "medoc_ledger";

/// Record of one fully processed archive file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub file_name: String,
    pub repository: Repository,
    pub completed_at: DateTime<Utc>,
    pub rows_loaded: u64,
    pub errors: u64,
    pub duration_seconds: f64,
}

/// The persistent skip list keyed by archive file name.
pub struct Ledger {
    entries: HashMap<String, LedgerEntry>,
}

impl Ledger {
    /// Creates the ledger table if needed and loads existing entries.
    pub fn open(db: &Db) -> Result<Ledger> {
        db.execute(&format!(
            "CREATE TABLE IF NOT EXISTS {LEDGER_TABLE} (
              file_name TEXT PRIMARY KEY,
              repository TEXT NOT NULL,
              completed_at TEXT NOT NULL,
              rows_loaded INTEGER NOT NULL,
              errors INTEGER NOT NULL,
              duration_seconds REAL NOT NULL
            )"
        ))
        .map_err(|e| Error::Persistence(e.to_string()))?;

        let rows = db
            .query_rows(
                &format!(
                    "SELECT file_name, repository, completed_at, rows_loaded, errors, \
                     duration_seconds FROM {LEDGER_TABLE}"
                ),
                &[],
            )
            .map_err(|e| Error::Persistence(e.to_string()))?;

        let mut entries = HashMap::new();
        for row in rows {
            let file_name = row[0].as_text().unwrap_or_default().to_string();
            let repository = match row[1].as_text() {
                Some("daily_update") => Repository::DailyUpdate,
                _ => Repository::Baseline,
            };
            let completed_at = row[2]
                .as_text()
                .and_then(|t| DateTime::parse_from_rfc3339(t).ok())
                .map(|t| t.with_timezone(&Utc))
                .unwrap_or_else(Utc::now);
            let rows_loaded = row[3].as_int().unwrap_or(0) as u64;
            let errors = row[4].as_int().unwrap_or(0) as u64;
            let duration_seconds = row[5]
                .as_text()
                .and_then(|t| t.parse().ok())
                .or_else(|| row[5].as_int().map(|n| n as f64))
                .unwrap_or(0.0);
            entries.insert(
                file_name.clone(),
                LedgerEntry {
                    file_name,
                    repository,
                    completed_at,
                    rows_loaded,
                    errors,
                    duration_seconds,
                },
            );
        }
        Ok(Ledger { entries })
    }

    pub fn is_done(&self, file_name: &str) -> bool {
        self.entries.contains_key(file_name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Durably records a completed file. Re-marking a file replaces its
    /// entry. A persistence failure is run-aborting: continuing past it
    /// would risk double-loading on restart.
    pub fn mark_done(&mut self, db: &Db, entry: LedgerEntry) -> Result<()> {
        let repo = match entry.repository {
            Repository::Baseline => "baseline",
            Repository::DailyUpdate => "daily_update",
        };
        db.execute_params(
            &format!(
                "INSERT OR REPLACE INTO {LEDGER_TABLE} \
                 (file_name, repository, completed_at, rows_loaded, errors, duration_seconds) \
                 VALUES (?, ?, ?, ?, ?, ?)"
            ),
            &[
                Value::Text(entry.file_name.clone()),
                Value::Text(repo.to_string()),
                Value::Text(entry.completed_at.to_rfc3339()),
                Value::Int(entry.rows_loaded as i64),
                Value::Int(entry.errors as i64),
                Value::Text(entry.duration_seconds.to_string()),
            ],
        )
        .map_err(|e| Error::Persistence(e.to_string()))?;
        self.entries.insert(entry.file_name.clone(), entry);
        Ok(())
    }

    /// The only erasure path; backs the CLI `--reset` flag.
    pub fn reset(&mut self, db: &Db) -> Result<()> {
        db.execute(&format!("DELETE FROM {LEDGER_TABLE}"))
            .map_err(|e| Error::Persistence(e.to_string()))?;
        self.entries.clear();
        Ok(())
    }

    /// Plain-text snapshot: one file name per line, sorted.
    pub fn export_snapshot(&self, path: &Path) -> Result<()> {
        let mut names: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        names.sort_unstable();
        let mut out = names.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = &LedgerEntry> {
        self.entries.values()
    }
}

/// Per-file slice of a run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileReport {
    pub file_name: String,
    pub repository: Repository,
    pub compressed_bytes: u64,
    pub citations: u64,
    pub deletions: u64,
    pub rows_loaded: u64,
    pub errors: u64,
    pub seconds: f64,
    /// Set when the file was abandoned (bad checksum, corrupt archive,
    /// malformed XML); the file is retried on the next run.
    pub failed: Option<String>,
}

/// Machine-readable summary of one pipeline run. Serialized as JSON at
/// `--report-path`; the documented key set is this struct.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub wall_seconds: f64,
    pub files_processed: u64,
    pub files_skipped: u64,
    pub files_failed: u64,
    pub citations_loaded: u64,
    pub deletions_applied: u64,
    pub rows_written: u64,
    pub errors_by_code: BTreeMap<ErrorCode, u64>,
    pub error_log_lines: u64,
    pub unknown_elements: u64,
    pub indexes_created: Option<u64>,
    pub per_file: Vec<FileReport>,
    /// Present when the run ended on an aborting error; the report is then
    /// partial.
    pub aborted: Option<String>,
}

impl RunReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Persistence(format!("report serialization: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<RunReport> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse report {}: {e}", path.display())))
    }

    /// Human-readable summary, one block per run.
    pub fn human_summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "files: {} processed, {} skipped, {} failed\n",
            self.files_processed, self.files_skipped, self.files_failed
        ));
        out.push_str(&format!(
            "citations: {} loaded, {} deletions applied, {} rows written\n",
            self.citations_loaded, self.deletions_applied, self.rows_written
        ));
        if self.errors_by_code.is_empty() {
            out.push_str("errors: none\n");
        } else {
            let codes = self
                .errors_by_code
                .iter()
                .map(|(c, n)| format!("{c}={n}"))
                .collect::<Vec<_>>()
                .join(", ");
            out.push_str(&format!("errors: {codes}\n"));
        }
        if let Some(ix) = self.indexes_created {
            out.push_str(&format!("indexes created: {ix}\n"));
        }
        out.push_str(&format!("wall time: {:.2}s\n", self.wall_seconds));
        if let Some(reason) = &self.aborted {
            out.push_str(&format!("ABORTED: {reason}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ensure_database, SchemaModel};

    fn entry(name: &str) -> LedgerEntry {
        LedgerEntry {
            file_name: name.to_string(),
            repository: Repository::Baseline,
            completed_at: Utc::now(),
            rows_loaded: 10,
            errors: 0,
            duration_seconds: 1.25,
        }
    }

    #[test]
    fn mark_done_then_is_done() {
        let db = Db::open_in_memory().unwrap();
        let mut ledger = Ledger::open(&db).unwrap();
        assert!(!ledger.is_done("medline17n0001.xml.gz"));
        ledger.mark_done(&db, entry("medline17n0001.xml.gz")).unwrap();
        assert!(ledger.is_done("medline17n0001.xml.gz"));
        assert!(!ledger.is_done("medline17n0002.xml.gz"));
    }

    #[test]
    fn ledger_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let url = dir.path().join("db.sqlite").display().to_string();
        {
            let db = Db::open(&url).unwrap();
            let mut ledger = Ledger::open(&db).unwrap();
            ledger.mark_done(&db, entry("a.xml.gz")).unwrap();
        }
        let db = Db::open(&url).unwrap();
        let ledger = Ledger::open(&db).unwrap();
        assert!(ledger.is_done("a.xml.gz"));
        assert_eq!(ledger.len(), 1);
    }

    #[test]
    fn duplicate_mark_done_replaces() {
        let db = Db::open_in_memory().unwrap();
        let mut ledger = Ledger::open(&db).unwrap();
        ledger.mark_done(&db, entry("a.xml.gz")).unwrap();
        let mut second = entry("a.xml.gz");
        second.rows_loaded = 99;
        ledger.mark_done(&db, second).unwrap();
        assert_eq!(ledger.len(), 1);
        let stored = ledger.entries().next().unwrap();
        assert_eq!(stored.rows_loaded, 99);
    }

    #[test]
    fn ledger_coexists_with_schema_check() {
        let db = Db::open_in_memory().unwrap();
        let model = SchemaModel::medline();
        ensure_database(&db, &model).unwrap();
        let mut ledger = Ledger::open(&db).unwrap();
        ledger.mark_done(&db, entry("a.xml.gz")).unwrap();
        // The tool-owned table must not trip the model verification.
        assert_eq!(
            ensure_database(&db, &model).unwrap(),
            crate::schema::EnsureOutcome::Exists
        );
    }

    #[test]
    fn snapshot_is_sorted() {
        let db = Db::open_in_memory().unwrap();
        let mut ledger = Ledger::open(&db).unwrap();
        for name in ["b.xml.gz", "a.xml.gz", "c.xml.gz"] {
            ledger.mark_done(&db, entry(name)).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.txt");
        ledger.export_snapshot(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a.xml.gz\nb.xml.gz\nc.xml.gz\n");
    }

    #[test]
    fn reset_clears_everything() {
        let db = Db::open_in_memory().unwrap();
        let mut ledger = Ledger::open(&db).unwrap();
        ledger.mark_done(&db, entry("a.xml.gz")).unwrap();
        ledger.reset(&db).unwrap();
        assert!(ledger.is_empty());
        let reloaded = Ledger::open(&db).unwrap();
        assert!(reloaded.is_empty());
    }

    #[test]
    fn persistence_failure_is_surfaced() {
        let dir = tempfile::tempdir().unwrap();
        let url = dir.path().join("db.sqlite").display().to_string();
        {
            let db = Db::open(&url).unwrap();
            Ledger::open(&db).unwrap();
        }
        let db = Db::open_read_only(&url).unwrap();
        let mut ledger = Ledger::open(&db).unwrap_or_else(|_| Ledger {
            entries: HashMap::new(),
        });
        let err = ledger.mark_done(&db, entry("a.xml.gz")).unwrap_err();
        assert!(matches!(err, Error::Persistence(_)));
    }

    #[test]
    fn report_round_trips_through_json() {
        let mut report = RunReport {
            files_processed: 2,
            citations_loaded: 100,
            wall_seconds: 3.5,
            ..Default::default()
        };
        report.errors_by_code.insert(ErrorCode::DuplicateKey, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        report.write_json(&path).unwrap();
        let back = RunReport::read_json(&path).unwrap();
        assert_eq!(back.files_processed, 2);
        assert_eq!(back.errors_by_code.get(&ErrorCode::DuplicateKey), Some(&4));
        assert!(back.human_summary().contains("DuplicateKey=4"));
    }
}
