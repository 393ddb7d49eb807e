//! Foreign-key resolution for staged rows.
//!
//! A business value is looked up in the referenced target's SOR, then in its
//! level-2 table; failing both, a placeholder row (`A`) is staged there with
//! a freshly drawn key so the referencing row can load without waiting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::TargetMapping;
use crate::error::{Error, Result};
use crate::model::{BusinessKey, OpCode, StagingRecord};
use crate::storage::{Lv2Table, SorTables, Store};
use crate::transform::KeySource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resolution {
    Sor,
    Staged,
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Resolved {
    pub fk_column: String,
    pub references: String,
    pub value: String,
    pub via: Resolution,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordKeys {
    pub record: StagingRecord,
    /// Placeholder rows created, with the target each went to.
    pub augments: Vec<(String, StagingRecord)>,
    pub lookups: Vec<Resolved>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyStats {
    pub rows_validated: usize,
    /// Lookups answered by the referenced SOR.
    pub from_sor: usize,
    /// Distinct (reference, value) pairs answered by the referenced SOR.
    pub distinct_from_sor: usize,
    pub from_lv2: usize,
    pub augments_created: usize,
}

/// Resolves every foreign key of `rec`.
///
/// `sor` holds the referenced SOR tables; `lv2` the referenced level-2
/// tables, which receive any new placeholders. `rec` itself is not written
/// back.
pub fn validate_keys_record(
    rec: &StagingRecord,
    target: &TargetMapping,
    sor: &BTreeMap<String, &SorTables>,
    lv2: &mut BTreeMap<String, &mut Lv2Table>,
    keys: &dyn KeySource,
) -> Result<RecordKeys> {
    let mut out = RecordKeys {
        record: rec.clone(),
        augments: Vec::new(),
        lookups: Vec::new(),
    };
    if matches!(rec.op, OpCode::E | OpCode::A) {
        return Ok(out);
    }
    for fk in &target.fk_defs {
        let value = rec.fk_values.get(&fk.column).ok_or_else(|| Error::MissingFkValue {
            target: target.name.clone(),
            bk: rec.bk.clone(),
            fk_column: fk.column.clone(),
        })?;
        let bk = BusinessKey::single(value.clone());
        let staged = lv2
            .get_mut(&fk.references)
            .ok_or_else(|| Error::TableNotFound(format!("ssa2/{}", fk.references)))?;
        let (sk, via) = if let Some(s) = sor.get(&fk.references).and_then(|t| t.static_by_bk(&bk)) {
            (s.sk, Resolution::Sor)
        } else if let Some(r) = staged.get(&bk) {
            (r.sk, Resolution::Staged)
        } else if fk.references == target.name && rec.bk == bk {
            (rec.sk, Resolution::Staged)
        } else {
            let sk = keys.next_key(&fk.references)?;
            let aug = StagingRecord::augment(sk, bk);
            staged.upsert(aug.clone()).map_err(|message| Error::InvariantViolation {
                table: format!("ssa2/{}", fk.references),
                message,
            })?;
            out.augments.push((fk.references.clone(), aug));
            (sk, Resolution::Augmented)
        };
        out.record.resolved_keys.insert(fk.column.clone(), sk);
        out.lookups.push(Resolved {
            fk_column: fk.column.clone(),
            references: fk.references.clone(),
            value: value.clone(),
            via,
        });
    }
    Ok(out)
}

/// Resolves the keys of every staged row of `target`, in business-key order.
///
/// All level-2 tables touched are left unchanged if any row fails.
pub fn validate_keys_table(store: &Store, target: &str) -> Result<KeyStats> {
    let cfg = store.config();
    let t = cfg.target(target)?;
    let refs: BTreeSet<&str> = t.referenced_targets();
    let mut lv2_names: BTreeSet<&str> = refs.clone();
    lv2_names.insert(target);

    // Lock order: level-2 tables, then SOR tables, each by name.
    let lv2_arcs = lv2_names
        .iter()
        .map(|n| Ok((n.to_string(), store.lv2(n)?)))
        .collect::<Result<Vec<_>>>()?;
    let sor_arcs = refs
        .iter()
        .map(|n| Ok((n.to_string(), store.sor(n)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut lv2_guards: Vec<_> = lv2_arcs
        .iter()
        .map(|(n, a)| (n.clone(), a.write().expect("lock poisoned")))
        .collect();
    let sor_guards: Vec<_> = sor_arcs
        .iter()
        .map(|(n, a)| (n.clone(), a.read().expect("lock poisoned")))
        .collect();
    let sor: BTreeMap<String, &SorTables> = sor_guards.iter().map(|(n, g)| (n.clone(), &**g)).collect();
    let before: Vec<Lv2Table> = lv2_guards.iter().map(|(_, g)| (**g).clone()).collect();

    let mut lv2: BTreeMap<String, &mut Lv2Table> =
        lv2_guards.iter_mut().map(|(n, g)| (n.clone(), &mut **g)).collect();
    let result = resolve_all(t, &sor, &mut lv2, store);
    drop(lv2);

    match result {
        Ok(stats) => {
            for (n, g) in &lv2_guards {
                store.save_lv2(n, g)?;
            }
            log::info!("validated keys of {target}: {stats:?}");
            Ok(stats)
        }
        Err(e) => {
            for ((_, g), old) in lv2_guards.iter_mut().zip(before) {
                **g = old;
            }
            Err(e)
        }
    }
}

fn resolve_all(
    t: &TargetMapping,
    sor: &BTreeMap<String, &SorTables>,
    lv2: &mut BTreeMap<String, &mut Lv2Table>,
    keys: &dyn KeySource,
) -> Result<KeyStats> {
    let mut stats = KeyStats::default();
    let mut sor_values = BTreeSet::new();
    let rows: Vec<StagingRecord> = lv2[&t.name]
        .iter()
        .filter(|r| matches!(r.op, OpCode::B | OpCode::EB | OpCode::DA))
        .cloned()
        .collect();
    for rec in &rows {
        let res = validate_keys_record(rec, t, sor, lv2, keys)?;
        stats.rows_validated += 1;
        stats.augments_created += res.augments.len();
        for l in &res.lookups {
            match l.via {
                Resolution::Sor => {
                    stats.from_sor += 1;
                    sor_values.insert((l.references.clone(), l.value.clone()));
                }
                Resolution::Staged => stats.from_lv2 += 1,
                Resolution::Augmented => {}
            }
        }
        let own = lv2.get_mut(&t.name).expect("own table locked");
        own.replace(res.record).map_err(|message| Error::InvariantViolation {
            table: format!("ssa2/{}", t.name),
            message,
        })?;
    }
    stats.distinct_from_sor = sor_values.len();
    Ok(stats)
}
