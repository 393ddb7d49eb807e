//! Batch ETL engine that stages transaction change feeds in two levels
//! before loading a versioned system of record (SOR).
//!
//! Pipeline per batch: [`extract`] feeds into SSA level 1, [`transform`]
//! them into warehouse-shaped level-2 rows tagged with operation codes,
//! resolve foreign keys in [`keys`] (creating placeholders for
//! early-arriving references), then apply the rows to the SOR in [`load`].
//! [`orchestrator`] schedules those jobs per table; [`dds`] extracts
//! dimension and fact sets downstream; [`oracle`] is an independent
//! replay model used to check the pipeline.

pub mod config;
pub mod date;
pub mod error;
pub mod model;
pub mod storage;
pub mod extract;
pub mod transform;
pub mod keys;
pub mod load;
pub mod dds;
pub mod orchestrator;
pub mod oracle;

pub use config::{load_config, validate_config, MappingConfig, TargetMapping};
pub use date::Date;
pub use error::{Error, Result};
pub use storage::Store;
