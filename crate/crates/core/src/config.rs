//! Declarative mapping configuration: source feeds, target tables and the
//! classification of every target column.
//!
//! The file format is TOML. A complete example lives in
//! `tests/fixtures/running_example/config.toml`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::date::Date;
use crate::error::{Error, Result};

/// Control columns of the staging and SOR tables; user columns may not reuse them.
pub const RESERVED_COLUMNS: &[&str] = &[
    "OP",
    "SK",
    "SOR_BD",
    "ED",
    "NEW_BD",
    "AF",
    "BD",
    "LAST_TX_TYPE",
    "LAST_TX_DATE",
];

/// Columns every change feed carries besides its declared ones.
pub const FEED_TX_TYPE: &str = "tx_type";
pub const FEED_TX_DATE: &str = "tx_date";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchFrequency {
    #[default]
    Daily,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    #[serde(default)]
    pub batch_frequency: BatchFrequency,
    /// Zero-pad width used when writing surrogate keys; 0 disables padding.
    #[serde(default)]
    pub sk_digits: usize,
    #[serde(default, rename = "feeds")]
    pub source_feeds: Vec<FeedSpec>,
    #[serde(default)]
    pub targets: Vec<TargetMapping>,
    /// Directory feed paths are resolved against (the config file's directory).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedSpec {
    pub id: String,
    /// Path pattern; `{batch_date}` is replaced with the batch date.
    pub path: String,
    /// Business-key columns of the source table, in order.
    pub key: Vec<String>,
    /// All data columns of the feed, key columns included.
    pub columns: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetMapping {
    pub name: String,
    pub bk_columns: Vec<String>,
    #[serde(default)]
    pub static_attrs: Vec<String>,
    #[serde(default)]
    pub dynamic_attrs: Vec<String>,
    #[serde(default, rename = "fk")]
    pub fk_defs: Vec<FkDef>,
    #[serde(default, rename = "sources")]
    pub source_mappings: Vec<SourceMapping>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_start: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkDef {
    /// Column holding the referenced business value.
    pub column: String,
    pub references: String,
    /// Column holding the resolved surrogate key; defaults to `<column>_SK`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_column: Option<String>,
}

impl FkDef {
    pub fn key_column(&self) -> String {
        self.key_column
            .clone()
            .unwrap_or_else(|| format!("{}_SK", self.column))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceMapping {
    pub feed: String,
    /// Source column to target column.
    pub columns: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ViolationCode {
    NoTargets,
    DuplicateTarget,
    DuplicateFeed,
    EmptyBusinessKey,
    EmptyFeedKey,
    DanglingReference,
    CompositeReference,
    OverlapViolation,
    DuplicateColumn,
    ReservedColumn,
    UnknownFeed,
    UnknownSourceColumn,
    UnknownTargetColumn,
    UncoveredBusinessKey,
    FeedKeyMismatch,
}

/// One failed config invariant, located by `target.field` or `feed.field`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub location: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.code {
            ViolationCode::NoTargets => f.write_str("no targets"),
            ViolationCode::DanglingReference => {
                write!(f, "{} → {} undefined", self.location, self.detail)
            }
            _ => write!(f, "{:?} at {}: {}", self.code, self.location, self.detail),
        }
    }
}

impl MappingConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: MappingConfig = toml::from_str(text).map_err(|e| Error::ConfigParse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        cfg.base_dir = base_dir.into();
        let violations = validate_config(&cfg);
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Validation(violations))
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    pub fn target(&self, name: &str) -> Result<&TargetMapping> {
        self.targets
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTarget(name.to_string()))
    }

    pub fn feed(&self, id: &str) -> Result<&FeedSpec> {
        self.source_feeds
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| Error::UnknownFeed(id.to_string()))
    }

    pub fn feed_path(&self, feed: &FeedSpec, batch_date: Date) -> PathBuf {
        let rel = feed.path.replace("{batch_date}", &batch_date.to_string());
        let p = Path::new(&rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn target_names(&self) -> Vec<String> {
        self.targets.iter().map(|t| t.name.clone()).collect()
    }
}

impl TargetMapping {
    pub fn fk_columns(&self) -> impl Iterator<Item = &str> {
        self.fk_defs.iter().map(|f| f.column.as_str())
    }

    /// Static then dynamic attribute columns, in config order.
    pub fn data_columns(&self) -> impl Iterator<Item = &str> {
        self.static_attrs
            .iter()
            .chain(self.dynamic_attrs.iter())
            .map(String::as_str)
    }

    pub fn referenced_targets(&self) -> BTreeSet<&str> {
        self.fk_defs.iter().map(|f| f.references.as_str()).collect()
    }

    pub fn is_data_column(&self, col: &str) -> bool {
        self.data_columns().any(|c| c == col)
    }

    pub fn is_fk_column(&self, col: &str) -> bool {
        self.fk_columns().any(|c| c == col)
    }
}

/// Reads and validates the config file at `path`.
pub fn load_config(path: impl AsRef<Path>) -> Result<MappingConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::ConfigParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    MappingConfig::from_toml_str(&text, base).map_err(|e| match e {
        Error::ConfigParse { message, .. } => Error::ConfigParse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Checks every config invariant; an empty result means the config is usable.
pub fn validate_config(cfg: &MappingConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, location: String, detail: String| {
        out.push(Violation {
            code,
            location,
            detail,
        })
    };

    if cfg.targets.is_empty() {
        push(ViolationCode::NoTargets, String::new(), String::new());
    }

    let mut feed_ids = BTreeSet::new();
    for feed in &cfg.source_feeds {
        if !feed_ids.insert(feed.id.as_str()) {
            push(ViolationCode::DuplicateFeed, feed.id.clone(), "feed id repeated".into());
        }
        if feed.key.is_empty() {
            push(ViolationCode::EmptyFeedKey, format!("{}.key", feed.id), "empty".into());
        }
        let mut seen = BTreeSet::new();
        for c in &feed.columns {
            if !seen.insert(c.as_str()) {
                push(ViolationCode::DuplicateColumn, format!("{}.{c}", feed.id), "listed twice".into());
            }
            if c == FEED_TX_TYPE || c == FEED_TX_DATE {
                push(ViolationCode::ReservedColumn, format!("{}.{c}", feed.id), "implicit feed column".into());
            }
        }
        for k in &feed.key {
            if !feed.columns.contains(k) {
                push(ViolationCode::UnknownSourceColumn, format!("{}.key", feed.id), format!("{k} not in columns"));
            }
        }
    }

    let mut names = BTreeSet::new();
    for t in &cfg.targets {
        if !names.insert(t.name.as_str()) {
            push(ViolationCode::DuplicateTarget, t.name.clone(), "target name repeated".into());
        }
    }

    for t in &cfg.targets {
        if t.bk_columns.is_empty() {
            push(ViolationCode::EmptyBusinessKey, format!("{}.bk_columns", t.name), "empty".into());
        }

        // Every column must belong to exactly one class.
        let mut class_of: BTreeMap<&str, &str> = BTreeMap::new();
        let key_cols: Vec<String> = t.fk_defs.iter().map(FkDef::key_column).collect();
        let classes: [(&str, Vec<&str>); 5] = [
            ("bk_columns", t.bk_columns.iter().map(String::as_str).collect()),
            ("static_attrs", t.static_attrs.iter().map(String::as_str).collect()),
            ("dynamic_attrs", t.dynamic_attrs.iter().map(String::as_str).collect()),
            ("fk", t.fk_columns().collect()),
            ("key_column", key_cols.iter().map(String::as_str).collect()),
        ];
        for (class, cols) in &classes {
            for c in cols {
                if RESERVED_COLUMNS.contains(c) {
                    push(ViolationCode::ReservedColumn, format!("{}.{c}", t.name), "control column name".into());
                }
                match class_of.get(c) {
                    Some(prev) if prev == class => push(
                        ViolationCode::DuplicateColumn,
                        format!("{}.{c}", t.name),
                        format!("listed twice in {class}"),
                    ),
                    Some(prev) => push(
                        ViolationCode::OverlapViolation,
                        format!("{}.{c}", t.name),
                        format!("in both {prev} and {class}"),
                    ),
                    None => {
                        class_of.insert(c, class);
                    }
                }
            }
        }

        for fk in &t.fk_defs {
            match cfg.targets.iter().find(|r| r.name == fk.references) {
                None => push(
                    ViolationCode::DanglingReference,
                    format!("{}.{}", t.name, fk.column),
                    fk.references.clone(),
                ),
                Some(r) if r.bk_columns.len() != 1 => push(
                    ViolationCode::CompositeReference,
                    format!("{}.{}", t.name, fk.column),
                    format!("{} has a composite business key", r.name),
                ),
                Some(_) => {}
            }
        }

        for (i, sm) in t.source_mappings.iter().enumerate() {
            let loc = format!("{}.sources[{i}]", t.name);
            let Some(feed) = cfg.source_feeds.iter().find(|f| f.id == sm.feed) else {
                push(ViolationCode::UnknownFeed, loc, sm.feed.clone());
                continue;
            };
            for (src, dst) in &sm.columns {
                if !feed.columns.contains(src) {
                    push(ViolationCode::UnknownSourceColumn, loc.clone(), format!("{src} not in feed {}", feed.id));
                }
                let known = t.bk_columns.contains(dst) || t.is_data_column(dst) || t.is_fk_column(dst);
                if !known {
                    push(ViolationCode::UnknownTargetColumn, loc.clone(), format!("{dst} not declared on {}", t.name));
                }
            }
            let mut mapped_bk = Vec::new();
            for bk in &t.bk_columns {
                let srcs: Vec<&String> = sm
                    .columns
                    .iter()
                    .filter(|(_, d)| *d == bk)
                    .map(|(s, _)| s)
                    .collect();
                match srcs.as_slice() {
                    [one] => mapped_bk.push((*one).clone()),
                    [] => push(ViolationCode::UncoveredBusinessKey, loc.clone(), format!("{bk} not mapped")),
                    _ => push(ViolationCode::DuplicateColumn, loc.clone(), format!("{bk} mapped more than once")),
                }
            }
            if mapped_bk.len() == t.bk_columns.len() {
                let a: BTreeSet<_> = mapped_bk.iter().collect();
                let b: BTreeSet<_> = feed.key.iter().collect();
                if a != b {
                    push(
                        ViolationCode::FeedKeyMismatch,
                        loc.clone(),
                        format!("business key maps from {mapped_bk:?}, feed key is {:?}", feed.key),
                    );
                }
            }
            let mut dsts = BTreeSet::new();
            for dst in sm.columns.values() {
                if !dsts.insert(dst) {
                    push(ViolationCode::DuplicateColumn, loc.clone(), format!("{dst} mapped more than once"));
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}
