//! Change detection: turns level-1 rows into level-2 rows carrying an
//! operation code, a surrogate key and warehouse-shaped columns.
//!
//! Per row, looked up by business key:
//!
//! | in SOR | tx   | placeholder | result                                  |
//! |--------|------|-------------|-----------------------------------------|
//! | yes    | D    | any         | `E`, close the open version             |
//! | yes    | I/U  | yes         | `DA`, fill the placeholder              |
//! | yes    | I/U  | no          | `EB`, close the open version, open anew |
//! | no     | I/U  | -           | `B`, reuse a staged sk or draw a new one |
//! | no     | D    | -           | skipped                                 |

use serde::{Deserialize, Serialize};

use crate::config::{FeedSpec, SourceMapping, TargetMapping};
use crate::date::Date;
use crate::error::{Error, Result};
use crate::model::{BusinessKey, Lv1Record, OpCode, OpCounts, Sk, SorHistoryRecord, StagingRecord, TxType, Values};
use crate::storage::{Lv2Table, SorTables, Store};

/// Source of fresh surrogate keys per table.
pub trait KeySource {
    fn next_key(&self, table: &str) -> Result<Sk>;
}

impl KeySource for Store {
    fn next_key(&self, table: &str) -> Result<Sk> {
        self.next_surrogate_key(table)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransformOutcome {
    Staged(StagingRecord),
    /// Delete of an entity the warehouse never saw.
    Skipped,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformStats {
    pub rows_processed: usize,
    pub skipped: usize,
    /// Rows that merged into an already staged row.
    pub merged: usize,
    /// Op codes of the staged rows after the job, placeholders excluded.
    pub ops: OpCounts,
}

/// Maps a source-shaped row onto the target's columns.
pub fn transpose(
    row: &Lv1Record,
    feed: &FeedSpec,
    target: &TargetMapping,
    mapping: &SourceMapping,
) -> Result<(BusinessKey, Values, Values)> {
    let source_value = |src: &str| -> Option<String> {
        match feed.key.iter().position(|k| k == src) {
            Some(i) => row.bk.0.get(i).cloned(),
            None => row.values.get(src).cloned(),
        }
    };
    let mut bk = Vec::with_capacity(target.bk_columns.len());
    for col in &target.bk_columns {
        let src = mapping
            .columns
            .iter()
            .find(|(_, d)| *d == col)
            .map(|(s, _)| s)
            .ok_or_else(|| Error::UnknownColumn {
                target: target.name.clone(),
                column: col.clone(),
            })?;
        bk.push(source_value(src).unwrap_or_default());
    }
    let mut data = Values::new();
    let mut fks = Values::new();
    for (src, dst) in &mapping.columns {
        let Some(v) = source_value(src) else { continue };
        if target.is_data_column(dst) {
            data.insert(dst.clone(), v);
        } else if target.is_fk_column(dst) {
            fks.insert(dst.clone(), v);
        }
    }
    Ok((BusinessKey(bk), data, fks))
}

/// Closing date for `open`, the day before the new transaction.
fn close_at(target: &str, open: &SorHistoryRecord, tx_date: Date) -> Result<Date> {
    if tx_date <= open.bd {
        return Err(Error::InvariantViolation {
            table: format!("sor/{target}_history"),
            message: format!(
                "transaction dated {tx_date} does not postdate open version {} of sk {}",
                open.bd, open.sk
            ),
        });
    }
    day_before(target, tx_date)
}

fn day_before(target: &str, d: Date) -> Result<Date> {
    d.pred().ok_or_else(|| Error::InvariantViolation {
        table: format!("ssa2/{target}"),
        message: format!("no day before {d}"),
    })
}

/// Classifies one deduplicated level-1 row and upserts the result into `lv2`.
#[allow(clippy::too_many_arguments)]
pub fn transform_record(
    row: &Lv1Record,
    feed: &FeedSpec,
    target: &TargetMapping,
    mapping: &SourceMapping,
    batch_date: Date,
    sor: &SorTables,
    lv2: &mut Lv2Table,
    keys: &dyn KeySource,
) -> Result<TransformOutcome> {
    if row.tx_date > batch_date {
        return Err(Error::FutureDate {
            feed: feed.id.clone(),
            line: 0,
            tx_date: row.tx_date,
            batch_date,
        });
    }
    let (bk, data, fk_values) = transpose(row, feed, target, mapping)?;
    let base = |op, sk| StagingRecord {
        op,
        sk,
        bk: bk.clone(),
        sor_bd: None,
        ed: None,
        new_bd: None,
        af: false,
        data: Values::new(),
        fk_values: Values::new(),
        resolved_keys: Default::default(),
    };

    let rec = match (sor.static_by_bk(&bk), row.tx_type) {
        (Some(found), TxType::Delete) => {
            let mut r = base(OpCode::E, found.sk);
            if let Some(open) = sor.open_version(found.sk) {
                r.sor_bd = Some(open.bd);
                r.ed = Some(close_at(&target.name, open, row.tx_date)?);
            }
            r
        }
        (Some(found), _) if found.af => StagingRecord {
            new_bd: Some(row.tx_date),
            data,
            fk_values,
            ..base(OpCode::DA, found.sk)
        },
        (Some(found), _) => {
            let mut r = StagingRecord {
                new_bd: Some(row.tx_date),
                data,
                fk_values,
                ..base(OpCode::EB, found.sk)
            };
            if let Some(open) = sor.open_version(found.sk) {
                r.sor_bd = Some(open.bd);
                r.ed = Some(close_at(&target.name, open, row.tx_date)?);
            }
            r
        }
        (None, TxType::Delete) => return Ok(TransformOutcome::Skipped),
        (None, _) => {
            let sk = match lv2.get(&bk) {
                Some(staged) => staged.sk,
                None => keys.next_key(&target.name)?,
            };
            StagingRecord {
                new_bd: Some(row.tx_date),
                data,
                fk_values,
                ..base(OpCode::B, sk)
            }
        }
    };

    let stored = lv2.upsert(rec).map_err(|message| Error::InvariantViolation {
        table: format!("ssa2/{}", target.name),
        message,
    })?;
    Ok(TransformOutcome::Staged(stored))
}

/// Runs change detection over every level-1 row mapped to `target`.
///
/// The level-2 table is left untouched if any row fails.
pub fn transform_table(store: &Store, target: &str, batch_date: Date) -> Result<TransformStats> {
    let cfg = store.config();
    let t = cfg.target(target)?;
    if store.lv1_batch() != Some(batch_date) && !t.source_mappings.is_empty() {
        return Err(Error::Lv1Missing(batch_date));
    }
    let mut inputs = Vec::new();
    for m in &t.source_mappings {
        let feed = cfg.feed(&m.feed)?;
        let mut rows = store.read_lv1(feed)?;
        rows.sort_by(|a, b| a.bk.cmp(&b.bk));
        inputs.push((feed, m, rows));
    }

    let lv2 = store.lv2(target)?;
    let sor = store.sor(target)?;
    let mut lv2 = lv2.write().expect("lock poisoned");
    let sor = sor.read().expect("lock poisoned");
    let before = lv2.clone();

    let mut stats = TransformStats::default();
    let run = |lv2: &mut Lv2Table, stats: &mut TransformStats| -> Result<()> {
        for (feed, mapping, rows) in &inputs {
            for row in rows {
                stats.rows_processed += 1;
                let existed = {
                    let (bk, _, _) = transpose(row, feed, t, mapping)?;
                    lv2.get(&bk).is_some()
                };
                match transform_record(row, feed, t, mapping, batch_date, &sor, lv2, store)? {
                    TransformOutcome::Skipped => stats.skipped += 1,
                    TransformOutcome::Staged(_) if existed => stats.merged += 1,
                    TransformOutcome::Staged(_) => {}
                }
            }
        }
        Ok(())
    };
    if let Err(e) = run(&mut lv2, &mut stats) {
        *lv2 = before;
        return Err(e);
    }
    for r in lv2.iter() {
        if r.op != OpCode::A {
            stats.ops.add(r.op);
        }
    }
    store.save_lv2(target, &lv2)?;
    log::info!("transformed {target}: {stats:?}");
    Ok(stats)
}
