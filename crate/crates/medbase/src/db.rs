//! Thin wrapper around the embedded SQL engine.
//!
//! The loader and schema modules talk to this instead of rusqlite directly so
//! that native errors carry the vendor code and message needed by the error
//! taxonomy.

use std::fmt;
use std::path::Path;

use rusqlite::types::ToSqlOutput;
use rusqlite::{Connection, OpenFlags, ToSql};

use crate::error::{Error, Result};

/// A column value as staged by the loader.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Int(i64),
    Text(String),
}

impl Value {
    pub fn from_opt_text(t: Option<&str>) -> Value {
        match t {
            Some(s) => Value::Text(s.to_string()),
            None => Value::Null,
        }
    }

    pub fn from_opt_int(v: Option<i64>) -> Value {
        match v {
            Some(n) => Value::Int(n),
            None => Value::Null,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }
}

impl ToSql for Value {
    fn to_sql(&self) -> rusqlite::Result<ToSqlOutput<'_>> {
        Ok(match self {
            Value::Null => ToSqlOutput::Owned(rusqlite::types::Value::Null),
            Value::Int(n) => ToSqlOutput::Owned(rusqlite::types::Value::Integer(*n)),
            Value::Text(s) => ToSqlOutput::Borrowed(rusqlite::types::ValueRef::Text(s.as_bytes())),
        })
    }
}

/// Native database error with the vendor code preserved.
#[derive(Debug, Clone)]
pub struct DbError {
    /// Vendor error code. SQLite extended result codes for the embedded
    /// engine; MySQL server codes (1406, 1062, 1114, ...) when classifying
    /// errors relayed from a remote server.
    pub code: Option<i32>,
    pub message: String,
}

impl DbError {
    pub fn new(code: Option<i32>, message: impl Into<String>) -> Self {
        DbError {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for DbError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.code {
            Some(c) => write!(f, "database error {c}: {}", self.message),
            None => write!(f, "database error: {}", self.message),
        }
    }
}

impl std::error::Error for DbError {}

impl From<rusqlite::Error> for DbError {
    fn from(e: rusqlite::Error) -> Self {
        match &e {
            rusqlite::Error::SqliteFailure(ffi, msg) => DbError {
                code: Some(ffi.extended_code),
                message: msg.clone().unwrap_or_else(|| ffi.to_string()),
            },
            other => DbError {
                code: None,
                message: other.to_string(),
            },
        }
    }
}

/// An open connection to the target database.
pub struct Db {
    conn: Connection,
}

impl Db {
    /// Opens the database named by `url`.
    ///
    /// Accepted forms: `sqlite:PATH`, `sqlite://PATH`, a bare filesystem
    /// path, or `:memory:`.
    pub fn open(url: &str) -> Result<Db> {
        let path = sqlite_path(url)?;
        let conn = if path == ":memory:" {
            Connection::open_in_memory()
                .map_err(|e| Error::Connection(format!("in-memory open failed: {e}")))?
        } else {
            Connection::open(Path::new(&path))
                .map_err(|e| Error::Connection(format!("cannot open {path}: {e}")))?
        };
        let db = Db { conn };
        db.configure()?;
        Ok(db)
    }

    pub fn open_in_memory() -> Result<Db> {
        Db::open(":memory:")
    }

    /// Opens read-only; used by reporting paths and tests.
    pub fn open_read_only(url: &str) -> Result<Db> {
        let path = sqlite_path(url)?;
        let conn = Connection::open_with_flags(
            Path::new(&path),
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
        .map_err(|e| Error::Connection(format!("cannot open {path}: {e}")))?;
        Ok(Db { conn })
    }

    fn configure(&self) -> Result<()> {
        // WAL keeps committed batches durable across a process kill without
        // paying fsync-per-statement costs.
        self.conn
            .pragma_update(None, "journal_mode", "WAL")
            .map_err(DbError::from)?;
        self.conn
            .pragma_update(None, "synchronous", "NORMAL")
            .map_err(DbError::from)?;
        // The batch schedule flushes each table when its own buffer fills,
        // so child rows can reach the database before their citation row.
        // The pmid references stay declared in the DDL; they are not
        // enforced during bulk load.
        self.conn
            .pragma_update(None, "foreign_keys", "OFF")
            .map_err(DbError::from)?;
        Ok(())
    }

    pub fn execute(&self, sql: &str) -> Result<usize, DbError> {
        let stmt = sql.trim_end().trim_end_matches(';');
        self.conn.execute(stmt, []).map_err(DbError::from)
    }

    pub fn execute_params(&self, sql: &str, params: &[Value]) -> Result<usize, DbError> {
        let stmt = sql.trim_end().trim_end_matches(';');
        self.conn
            .execute(stmt, rusqlite::params_from_iter(params.iter()))
            .map_err(DbError::from)
    }

    pub fn query_i64(&self, sql: &str) -> Result<i64, DbError> {
        self.conn
            .query_row(sql.trim_end().trim_end_matches(';'), [], |r| r.get(0))
            .map_err(DbError::from)
    }

    pub fn query_i64_params(&self, sql: &str, params: &[Value]) -> Result<i64, DbError> {
        self.conn
            .query_row(
                sql.trim_end().trim_end_matches(';'),
                rusqlite::params_from_iter(params.iter()),
                |r| r.get(0),
            )
            .map_err(DbError::from)
    }

    /// All rows of a query, each cell read back as a [`Value`].
    pub fn query_rows(&self, sql: &str, params: &[Value]) -> Result<Vec<Vec<Value>>, DbError> {
        let mut stmt = self
            .conn
            .prepare(sql.trim_end().trim_end_matches(';'))
            .map_err(DbError::from)?;
        let ncols = stmt.column_count();
        let rows = stmt
            .query_map(rusqlite::params_from_iter(params.iter()), |row| {
                let mut out = Vec::with_capacity(ncols);
                for i in 0..ncols {
                    let v = match row.get_ref(i)? {
                        rusqlite::types::ValueRef::Null => Value::Null,
                        rusqlite::types::ValueRef::Integer(n) => Value::Int(n),
                        rusqlite::types::ValueRef::Real(f) => Value::Text(f.to_string()),
                        rusqlite::types::ValueRef::Text(t) => {
                            Value::Text(String::from_utf8_lossy(t).into_owned())
                        }
                        rusqlite::types::ValueRef::Blob(b) => {
                            Value::Text(format!("<blob {} bytes>", b.len()))
                        }
                    };
                    out.push(v);
                }
                Ok(out)
            })
            .map_err(DbError::from)?
            .collect::<Result<Vec<_>, rusqlite::Error>>()
            .map_err(DbError::from)?;
        Ok(rows)
    }

    pub fn table_names(&self) -> Result<Vec<String>, DbError> {
        let rows = self.query_rows(
            "SELECT name FROM sqlite_master WHERE type = 'table' ORDER BY name",
            &[],
        )?;
        Ok(rows
            .into_iter()
            .filter_map(|r| r.into_iter().next().and_then(|v| v.as_text().map(String::from)))
            .collect())
    }

    pub fn index_names(&self) -> Result<Vec<String>, DbError> {
        let rows = self.query_rows(
            "SELECT name FROM sqlite_master WHERE type = 'index' ORDER BY name",
            &[],
        )?;
        Ok(rows
            .into_iter()
            .filter_map(|r| r.into_iter().next().and_then(|v| v.as_text().map(String::from)))
            .collect())
    }

    pub fn begin(&self) -> Result<(), DbError> {
        self.conn
            .execute_batch("BEGIN IMMEDIATE")
            .map_err(DbError::from)
    }

    pub fn commit(&self) -> Result<(), DbError> {
        self.conn.execute_batch("COMMIT").map_err(DbError::from)
    }

    pub fn rollback(&self) -> Result<(), DbError> {
        self.conn.execute_batch("ROLLBACK").map_err(DbError::from)
    }

    /// Prepared single-row insert; used by the row-isolation retry path.
    pub fn insert_row(&self, sql: &str, row: &[Value]) -> Result<usize, DbError> {
        self.execute_params(sql, row)
    }
}

/// Extracts a filesystem path (or `:memory:`) from a db-url.
fn sqlite_path(url: &str) -> Result<String> {
    if url == ":memory:" || url == "sqlite::memory:" {
        return Ok(":memory:".to_string());
    }
    for prefix in ["sqlite://", "sqlite:"] {
        if let Some(rest) = url.strip_prefix(prefix) {
            return Ok(rest.to_string());
        }
    }
    if let Some(scheme_end) = url.find("://") {
        let scheme = &url[..scheme_end];
        return Err(Error::Config(format!(
            "unsupported db-url scheme '{scheme}'; this build targets the embedded engine \
             (use sqlite:PATH or a filesystem path)"
        )));
    }
    Ok(url.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_forms() {
        assert_eq!(sqlite_path(":memory:").unwrap(), ":memory:");
        assert_eq!(sqlite_path("sqlite:/tmp/x.db").unwrap(), "/tmp/x.db");
        assert_eq!(sqlite_path("sqlite:///tmp/x.db").unwrap(), "/tmp/x.db");
        assert_eq!(sqlite_path("/tmp/x.db").unwrap(), "/tmp/x.db");
        assert!(sqlite_path("mysql://host/db").is_err());
    }

    #[test]
    fn execute_and_query() {
        let db = Db::open_in_memory().unwrap();
        db.execute("CREATE TABLE t (a INTEGER, b TEXT);").unwrap();
        db.execute_params(
            "INSERT INTO t (a, b) VALUES (?, ?)",
            &[Value::Int(1), Value::Text("x".into())],
        )
        .unwrap();
        assert_eq!(db.query_i64("SELECT COUNT(*) FROM t").unwrap(), 1);
        let rows = db.query_rows("SELECT a, b FROM t", &[]).unwrap();
        assert_eq!(rows, vec![vec![Value::Int(1), Value::Text("x".into())]]);
    }

    #[test]
    fn native_error_carries_code() {
        let db = Db::open_in_memory().unwrap();
        db.execute("CREATE TABLE t (a INTEGER PRIMARY KEY)").unwrap();
        db.execute("INSERT INTO t (a) VALUES (1)").unwrap();
        let err = db.execute("INSERT INTO t (a) VALUES (1)").unwrap_err();
        assert!(err.code.is_some());
        assert!(err.message.to_lowercase().contains("unique"));
    }
}
