use std::path::PathBuf;

use crate::config::Violation;
use crate::date::Date;
use crate::model::{BusinessKey, Sk};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot parse {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("invalid config: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("feed {0:?} is not defined in the config")]
    UnknownFeed(String),

    #[error("target {0:?} is not defined in the config")]
    UnknownTarget(String),

    #[error("feed {feed}:{line}: tx_date {tx_date} is after batch date {batch_date}")]
    FutureDate {
        feed: String,
        line: u64,
        tx_date: Date,
        batch_date: Date,
    },

    #[error("table {0} not found")]
    TableNotFound(String),

    #[error("store corruption in {table}: {message}")]
    StoreCorruption { table: String, message: String },

    #[error("cannot persist {}: {source}", .path.display())]
    Persistence {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invariant violated in {table}: {message}")]
    InvariantViolation { table: String, message: String },

    #[error("snapshot {0:?} not found")]
    SnapshotNotFound(String),

    #[error("{target} row {bk}: missing foreign key value for {fk_column}")]
    MissingFkValue {
        target: String,
        bk: BusinessKey,
        fk_column: String,
    },

    #[error("{target}: no history row for sk {sk} with begin date {bd}")]
    HistoryRowNotFound { target: String, sk: Sk, bd: Date },

    #[error("{target}: no static row for sk {sk}")]
    StaticRowNotFound { target: String, sk: Sk },

    #[error("{target}: static row already exists for sk {sk} / bk {bk}")]
    DuplicateStatic {
        target: String,
        sk: Sk,
        bk: BusinessKey,
    },

    #[error("{target}: unknown column {column:?}")]
    UnknownColumn { target: String, column: String },

    #[error("feed {feed} missing: {}", .path.display())]
    FeedMissing { feed: String, path: PathBuf },

    #[error("{phase} of {target} failed: {source}")]
    PhaseFailure {
        phase: String,
        target: String,
        #[source]
        source: Box<Error>,
    },

    #[error("no staged level-1 data for batch {0}")]
    Lv1Missing(Date),

    #[error("batch order: {0}")]
    BatchOrder(String),

    #[error("injected failure while loading {target} after {after} records")]
    InjectedFault { target: String, after: usize },

    #[error("states cover different targets: {left:?} vs {right:?}")]
    TargetSetMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },
}

impl Error {
    /// Stable machine-readable name of the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ConfigParse { .. } => "ConfigParse",
            Error::Validation(_) => "ValidationError",
            Error::Parse { .. } => "ParseError",
            Error::UnknownFeed(_) => "UnknownFeed",
            Error::UnknownTarget(_) => "UnknownTarget",
            Error::FutureDate { .. } => "FutureDate",
            Error::TableNotFound(_) => "TableNotFound",
            Error::StoreCorruption { .. } => "StoreCorruption",
            Error::Persistence { .. } => "PersistenceError",
            Error::InvariantViolation { .. } => "InvariantViolation",
            Error::SnapshotNotFound(_) => "SnapshotNotFound",
            Error::MissingFkValue { .. } => "MissingFkValue",
            Error::HistoryRowNotFound { .. } => "HistoryRowNotFound",
            Error::StaticRowNotFound { .. } => "StaticRowNotFound",
            Error::DuplicateStatic { .. } => "DuplicateStatic",
            Error::UnknownColumn { .. } => "UnknownColumn",
            Error::FeedMissing { .. } => "FeedMissing",
            Error::PhaseFailure { .. } => "PhaseFailure",
            Error::Lv1Missing(_) => "Lv1Missing",
            Error::BatchOrder(_) => "BatchOrder",
            Error::InjectedFault { .. } => "InjectedFault",
            Error::TargetSetMismatch { .. } => "TargetSetMismatch",
        }
    }

    /// The innermost error, looking through phase wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::PhaseFailure { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn persistence(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Persistence {
            path: path.into(),
            source,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
