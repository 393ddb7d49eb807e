//! Applies level-2 rows to a target's static and history tables.

use serde::{Deserialize, Serialize};

use crate::config::TargetMapping;
use crate::date::Date;
use crate::error::{Error, Result};
use crate::model::{overlay, OpCode, OpCounts, SorHistoryRecord, SorStaticRecord, StagingRecord, TxType, Values};
use crate::storage::{SorTables, Store};

/// Makes `load_table` fail after applying a number of rows of one target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailPoint {
    pub target: String,
    pub after_records: usize,
}

/// Row-count changes caused by one staged row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadEffect {
    pub statics_inserted: usize,
    pub versions_inserted: usize,
    pub versions_closed: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub ops: OpCounts,
    pub statics_inserted: usize,
    pub versions_inserted: usize,
    pub versions_closed: usize,
}

fn split(target: &TargetMapping, data: &Values) -> (Values, Values) {
    let pick = |cols: &[String]| -> Values {
        cols.iter()
            .filter_map(|c| data.get(c).map(|v| (c.clone(), v.clone())))
            .collect()
    };
    (pick(&target.static_attrs), pick(&target.dynamic_attrs))
}

fn close(sor: &mut SorTables, target: &TargetMapping, rec: &StagingRecord) -> Result<usize> {
    let (Some(bd), Some(ed)) = (rec.sor_bd, rec.ed) else {
        return Ok(0);
    };
    let version = sor.history_mut(rec.sk, bd).ok_or_else(|| Error::HistoryRowNotFound {
        target: target.name.clone(),
        sk: rec.sk,
        bd,
    })?;
    version.ed = ed;
    Ok(1)
}

fn open(sor: &mut SorTables, target: &TargetMapping, rec: &StagingRecord, dynamic: Values) -> Result<usize> {
    let bd = rec.new_bd.expect("checked row carries NEW_BD");
    // Attributes the row leaves blank keep the latest known value.
    let mut attrs = sor
        .versions(rec.sk)
        .last()
        .map(|v| v.dynamic_attrs.clone())
        .unwrap_or_default();
    overlay(&mut attrs, &dynamic);
    sor.insert_history(SorHistoryRecord {
        sk: rec.sk,
        bk: rec.bk.clone(),
        bd,
        ed: Date::OPEN_END,
        dynamic_attrs: attrs,
        resolved_keys: rec.resolved_keys.clone(),
    })
    .map_err(|message| Error::InvariantViolation {
        table: format!("sor/{}_history", target.name),
        message,
    })?;
    Ok(1)
}

fn insert_static(sor: &mut SorTables, target: &TargetMapping, rec: SorStaticRecord) -> Result<()> {
    if sor.static_by_sk(rec.sk).is_some() || sor.static_by_bk(&rec.bk).is_some() {
        return Err(Error::DuplicateStatic {
            target: target.name.clone(),
            sk: rec.sk,
            bk: rec.bk,
        });
    }
    sor.insert_static(rec).expect("uniqueness checked");
    Ok(())
}

/// Applies one row. `batch_date` stamps every static row it touches.
pub fn load_record(
    rec: &StagingRecord,
    target: &TargetMapping,
    sor: &mut SorTables,
    batch_date: Date,
) -> Result<LoadEffect> {
    rec.check().map_err(|message| Error::InvariantViolation {
        table: format!("ssa2/{}", target.name),
        message: format!("{}: {message}", rec.bk),
    })?;
    let (statics, dynamics) = split(target, &rec.data);
    let mut effect = LoadEffect::default();
    let missing = || Error::StaticRowNotFound {
        target: target.name.clone(),
        sk: rec.sk,
    };

    match rec.op {
        OpCode::B => {
            insert_static(
                sor,
                target,
                SorStaticRecord {
                    sk: rec.sk,
                    bk: rec.bk.clone(),
                    static_attrs: statics,
                    last_tx_type: Some(TxType::Insert),
                    last_tx_date: Some(batch_date),
                    af: false,
                },
            )?;
            effect.statics_inserted = 1;
            effect.versions_inserted = open(sor, target, rec, dynamics)?;
        }
        OpCode::A => {
            insert_static(
                sor,
                target,
                SorStaticRecord {
                    sk: rec.sk,
                    bk: rec.bk.clone(),
                    static_attrs: Values::new(),
                    last_tx_type: None,
                    last_tx_date: Some(batch_date),
                    af: true,
                },
            )?;
            effect.statics_inserted = 1;
        }
        OpCode::EB | OpCode::DA => {
            let s = sor.static_mut(rec.sk).ok_or_else(missing)?;
            overlay(&mut s.static_attrs, &statics);
            s.last_tx_type = Some(if rec.op == OpCode::EB { TxType::Update } else { TxType::Insert });
            s.last_tx_date = Some(batch_date);
            s.af = false;
            effect.versions_closed = close(sor, target, rec)?;
            effect.versions_inserted = open(sor, target, rec, dynamics)?;
        }
        OpCode::E => {
            let s = sor.static_mut(rec.sk).ok_or_else(missing)?;
            s.last_tx_type = Some(TxType::Delete);
            s.last_tx_date = Some(batch_date);
            effect.versions_closed = close(sor, target, rec)?;
        }
    }
    Ok(effect)
}

/// Loads every staged row of `target`: placeholders first, then the rest in
/// business-key order. The staged table is archived under the batch date.
///
/// On failure the SOR tables are left as they were.
pub fn load_table(store: &Store, target: &str, batch_date: Date, fail: Option<&FailPoint>) -> Result<LoadStats> {
    let cfg = store.config();
    let t = cfg.target(target)?;
    let lv2 = store.lv2(target)?;
    let sor = store.sor(target)?;
    let lv2 = lv2.read().expect("lock poisoned");
    let mut sor = sor.write().expect("lock poisoned");

    let mut rows: Vec<&StagingRecord> = lv2.iter().collect();
    rows.sort_by_key(|r| r.op != OpCode::A);

    let before = sor.clone();
    let mut stats = LoadStats::default();
    let fail_after = fail.filter(|f| f.target == target).map(|f| f.after_records);
    let mut apply = || -> Result<()> {
        for (i, rec) in rows.iter().enumerate() {
            if fail_after == Some(i) {
                return Err(Error::InjectedFault {
                    target: target.to_string(),
                    after: i,
                });
            }
            let e = load_record(rec, t, &mut sor, batch_date)?;
            stats.ops.add(rec.op);
            stats.statics_inserted += e.statics_inserted;
            stats.versions_inserted += e.versions_inserted;
            stats.versions_closed += e.versions_closed;
        }
        Ok(())
    };
    let result = apply();
    if let Err(e) = result {
        *sor = before;
        return Err(e);
    }
    store.save_sor(target, &sor)?;
    store.archive_lv2(target, batch_date, &lv2)?;
    log::info!("loaded {target}: {stats:?}");
    Ok(stats)
}
