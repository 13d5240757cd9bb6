//! Crate-wide error type.

use std::path::PathBuf;

use crate::db::DbError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    /// Database exists but its table set does not match the model.
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("connection failed: {0}")]
    Connection(String),

    #[error("could not parse remote listing: {0}")]
    ListingParse(String),

    #[error("checksum mismatch for {name}: expected {expected}, got {actual}")]
    Checksum {
        name: String,
        expected: String,
        actual: String,
    },

    #[error("disk full while writing {0}")]
    DiskFull(PathBuf),

    #[error("corrupt archive {path}: {detail}")]
    CorruptArchive { path: PathBuf, detail: String },

    #[error("xml syntax error at byte {position}: {detail}")]
    XmlSyntax { position: u64, detail: String },

    /// A citation element without a usable PMID. Recoverable: the caller
    /// logs it and moves on to the next citation.
    #[error("citation without PMID near byte {position}")]
    MissingPmid { position: u64 },

    #[error("ledger persistence failed: {0}")]
    Persistence(String),

    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("row for table {table} has {got} values, expected {expected}")]
    RowArity {
        table: String,
        expected: usize,
        got: usize,
    },

    /// Run-aborting storage exhaustion reported by the database.
    #[error("storage full: {0}")]
    StorageFull(String),

    #[error(transparent)]
    Db(#[from] DbError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code contract: 0 success, 1 aborting error, 2 configuration error.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) => 2,
            _ => 1,
        }
    }
}
