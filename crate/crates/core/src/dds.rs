//! Downstream extraction of dimension and fact record sets from the SOR.

use crate::date::Date;
use crate::error::{Error, Result};
use crate::model::{SorHistoryRecord, Sk, TxType};
use crate::storage::{SorTables, Store, TargetSchema};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Extract {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Surrogate key of each row, parallel to `rows`.
    pub sks: Vec<Sk>,
}

impl Extract {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Static rows touched on or after `since`, joined with history.
///
/// Without `scd` deleted entities are dropped and only the open version is
/// joined; with `scd` every version is emitted. An entity without any
/// version yields one row with blank version columns.
pub fn dimension_rows(schema: &TargetSchema, sor: &SorTables, since: Date, scd: bool) -> Extract {
    let skip = 1 + schema.target.bk_columns.len();
    let version_header: Vec<String> = schema.history_header().split_off(skip);
    let mut header = schema.static_header();
    header.extend(version_header.iter().cloned());
    let blank = vec![String::new(); version_header.len()];

    let mut out = Extract {
        header,
        ..Default::default()
    };
    for s in sor.statics() {
        if s.last_tx_date.is_none_or(|d| d < since) {
            continue;
        }
        let versions: Vec<&SorHistoryRecord> = if scd {
            sor.versions(s.sk).collect()
        } else {
            if s.last_tx_type == Some(TxType::Delete) {
                continue;
            }
            sor.open_version(s.sk).into_iter().collect()
        };
        let base = schema.static_row(s);
        if versions.is_empty() {
            out.rows.push([base.clone(), blank.clone()].concat());
            out.sks.push(s.sk);
        }
        for v in versions {
            let mut row = base.clone();
            row.extend(schema.history_row(v).split_off(skip));
            out.rows.push(row);
            out.sks.push(s.sk);
        }
    }
    out
}

fn affected_value(v: &SorHistoryRecord, column: &str) -> Option<Date> {
    match column {
        "BD" => Some(v.bd),
        "ED" => Some(v.ed),
        _ => v.dynamic_attrs.get(column).and_then(|s| s.parse().ok()),
    }
}

/// History rows whose `column` date is on or after `since`.
///
/// With `rebuild`, each affected entity also contributes the version just
/// before its earliest affected one, the baseline a recomputation starts
/// from.
pub fn fact_rows(schema: &TargetSchema, sor: &SorTables, column: &str, since: Date, rebuild: bool) -> Result<Extract> {
    let t = schema.target;
    if column != "BD" && column != "ED" && !t.dynamic_attrs.iter().any(|c| c == column) {
        return Err(Error::UnknownColumn {
            target: t.name.clone(),
            column: column.to_string(),
        });
    }
    let mut out = Extract {
        header: schema.history_header(),
        ..Default::default()
    };
    for s in sor.statics() {
        let versions: Vec<&SorHistoryRecord> = sor.versions(s.sk).collect();
        let hit: Vec<bool> = versions
            .iter()
            .map(|v| affected_value(v, column).is_some_and(|d| d >= since))
            .collect();
        let baseline = if rebuild {
            hit.iter().position(|h| *h).and_then(|i| i.checked_sub(1))
        } else {
            None
        };
        for (i, v) in versions.iter().enumerate() {
            if hit[i] || Some(i) == baseline {
                out.rows.push(schema.history_row(v));
                out.sks.push(v.sk);
            }
        }
    }
    Ok(out)
}

pub fn extract_dimension(store: &Store, target: &str, since: Date, scd: bool) -> Result<Extract> {
    let schema = store.schema(target)?;
    let sor = store.sor(target)?;
    let sor = sor.read().expect("lock poisoned");
    Ok(dimension_rows(&schema, &sor, since, scd))
}

pub fn extract_fact(store: &Store, target: &str, column: &str, since: Date, rebuild: bool) -> Result<Extract> {
    let schema = store.schema(target)?;
    let sor = store.sor(target)?;
    let sor = sor.read().expect("lock poisoned");
    fact_rows(&schema, &sor, column, since, rebuild)
}
