use std::collections::{BTreeMap, HashMap};

use crate::date::Date;
use crate::model::{
    overlay, BusinessKey, OpCode, SorHistoryRecord, SorStaticRecord, Sk, StagingRecord,
};

/// One target's SSA level-2 table, keyed by business key.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lv2Table {
    rows: BTreeMap<BusinessKey, StagingRecord>,
    by_sk: HashMap<Sk, BusinessKey>,
}

impl Lv2Table {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, bk: &BusinessKey) -> Option<&StagingRecord> {
        self.rows.get(bk)
    }

    /// Rows in business-key order.
    pub fn iter(&self) -> impl Iterator<Item = &StagingRecord> {
        self.rows.values()
    }

    /// Rows in surrogate-key order (the serialization order).
    pub fn rows_by_sk(&self) -> Vec<&StagingRecord> {
        let mut v: Vec<_> = self.rows.values().collect();
        v.sort_by_key(|r| r.sk);
        v
    }

    pub fn business_keys(&self) -> Vec<BusinessKey> {
        self.rows.keys().cloned().collect()
    }

    pub fn clear(&mut self) {
        self.rows.clear();
        self.by_sk.clear();
    }

    /// Inserts a row whose bk is not present yet. Used when decoding files.
    pub(crate) fn insert_new(&mut self, rec: StagingRecord) -> Result<(), String> {
        if self.rows.contains_key(&rec.bk) {
            return Err(format!("business key {} present twice", rec.bk));
        }
        if let Some(other) = self.by_sk.get(&rec.sk) {
            return Err(format!("surrogate key {} used by {} and {}", rec.sk, other, rec.bk));
        }
        self.by_sk.insert(rec.sk, rec.bk.clone());
        self.rows.insert(rec.bk.clone(), rec);
        Ok(())
    }

    /// Inserts `rec`, or merges it into the row with the same business key.
    ///
    /// Merge rule: present fields of `rec` win, `op` is replaced by `rec.op`,
    /// and the augment flag follows the resulting op (only `A` rows carry it),
    /// so real data merged onto a placeholder yields an ordinary `B` row.
    /// An `E` row replaces the stored row wholesale since it carries no data.
    pub fn upsert(&mut self, rec: StagingRecord) -> Result<StagingRecord, String> {
        let merged = match self.rows.get(&rec.bk) {
            None => rec,
            Some(cur) => {
                if cur.sk != rec.sk {
                    return Err(format!(
                        "business key {} staged with sk {} cannot merge sk {}",
                        rec.bk, cur.sk, rec.sk
                    ));
                }
                merge(cur, rec)
            }
        };
        merged.check().map_err(|m| format!("{}: {m}", merged.bk))?;
        if let Some(other) = self.by_sk.get(&merged.sk) {
            if *other != merged.bk {
                return Err(format!(
                    "surrogate key {} already used by {}",
                    merged.sk, other
                ));
            }
        }
        self.by_sk.insert(merged.sk, merged.bk.clone());
        self.rows.insert(merged.bk.clone(), merged.clone());
        Ok(merged)
    }

    /// Overwrites the stored row for `rec.bk` without merging.
    pub fn replace(&mut self, rec: StagingRecord) -> Result<(), String> {
        rec.check().map_err(|m| format!("{}: {m}", rec.bk))?;
        match self.rows.get(&rec.bk) {
            Some(cur) if cur.sk == rec.sk => {
                self.rows.insert(rec.bk.clone(), rec);
                Ok(())
            }
            Some(cur) => Err(format!("sk change {} -> {} for {}", cur.sk, rec.sk, rec.bk)),
            None => Err(format!("no staged row for {}", rec.bk)),
        }
    }
}

fn merge(cur: &StagingRecord, rec: StagingRecord) -> StagingRecord {
    if rec.op == OpCode::E {
        return rec;
    }
    let mut out = cur.clone();
    out.op = rec.op;
    out.af = rec.op == OpCode::A;
    if rec.sor_bd.is_some() || rec.ed.is_some() {
        out.sor_bd = rec.sor_bd;
        out.ed = rec.ed;
    }
    if rec.new_bd.is_some() {
        out.new_bd = rec.new_bd;
    }
    overlay(&mut out.data, &rec.data);
    overlay(&mut out.fk_values, &rec.fk_values);
    for (k, v) in rec.resolved_keys {
        out.resolved_keys.insert(k, v);
    }
    out
}

/// A target's SOR pair: the static table and its history table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SorTables {
    statics: BTreeMap<Sk, SorStaticRecord>,
    by_bk: HashMap<BusinessKey, Sk>,
    history: BTreeMap<(Sk, Date), SorHistoryRecord>,
}

impl SorTables {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn static_by_bk(&self, bk: &BusinessKey) -> Option<&SorStaticRecord> {
        self.by_bk.get(bk).and_then(|sk| self.statics.get(sk))
    }

    pub fn static_by_sk(&self, sk: Sk) -> Option<&SorStaticRecord> {
        self.statics.get(&sk)
    }

    pub fn static_mut(&mut self, sk: Sk) -> Option<&mut SorStaticRecord> {
        self.statics.get_mut(&sk)
    }

    pub fn statics(&self) -> impl Iterator<Item = &SorStaticRecord> {
        self.statics.values()
    }

    /// History rows ordered by (sk, begin date).
    pub fn history(&self) -> impl Iterator<Item = &SorHistoryRecord> {
        self.history.values()
    }

    pub fn static_len(&self) -> usize {
        self.statics.len()
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn insert_static(&mut self, rec: SorStaticRecord) -> Result<(), String> {
        if self.statics.contains_key(&rec.sk) {
            return Err(format!("surrogate key {} present twice", rec.sk));
        }
        if self.by_bk.contains_key(&rec.bk) {
            return Err(format!("business key {} present twice", rec.bk));
        }
        self.by_bk.insert(rec.bk.clone(), rec.sk);
        self.statics.insert(rec.sk, rec);
        Ok(())
    }

    pub fn versions(&self, sk: Sk) -> impl Iterator<Item = &SorHistoryRecord> {
        self.history
            .range((sk, Date::MIN)..=(sk, Date::OPEN_END))
            .map(|(_, v)| v)
    }

    pub fn open_version(&self, sk: Sk) -> Option<&SorHistoryRecord> {
        self.versions(sk).find(|v| v.is_open())
    }

    pub fn history_mut(&mut self, sk: Sk, bd: Date) -> Option<&mut SorHistoryRecord> {
        self.history.get_mut(&(sk, bd))
    }

    pub fn insert_history(&mut self, rec: SorHistoryRecord) -> Result<(), String> {
        let key = (rec.sk, rec.bd);
        if self.history.contains_key(&key) {
            return Err(format!("history row ({}, {}) present twice", rec.sk, rec.bd));
        }
        self.history.insert(key, rec);
        Ok(())
    }
}
