//! Build a local relational mirror of MEDLINE-style citation archives.
//!
//! The pipeline downloads compressed citation XML from a baseline/daily-update
//! repository, streams it into typed records, and bulk-loads a 13-table
//! database keyed by PMID, with threshold-batched inserts, deferred index
//! creation, a structured error log, and a ledger of processed files that
//! makes interrupted runs resumable.

pub mod config;
pub mod corpusgen;
pub mod db;
pub mod error;
pub mod faults;
pub mod fetch;
pub mod load;
pub mod parse;
pub mod pipeline;
pub mod record;
pub mod schema;
pub mod state;
pub mod verify;

pub use error::{Error, Result};
