//! Invariant walk over every table of a store.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::{Lv2Table, SorTables, Store};
use crate::config::MappingConfig;
use crate::error::Result;
use crate::model::TxType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum CheckCode {
    BadInterval,
    OverlappingVersions,
    MultipleOpenVersions,
    OrphanHistory,
    BusinessKeyMismatch,
    DeletedButOpen,
    AugmentNotBlank,
    AugmentHasHistory,
    DanglingKey,
    MissingKey,
    BadStagingRow,
    SequenceBehind,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct StoreViolation {
    pub code: CheckCode,
    pub location: String,
    pub detail: String,
}

impl fmt::Display for StoreViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {} {}", self.code, self.location, self.detail)
    }
}

pub fn verify(store: &Store) -> Result<Vec<StoreViolation>> {
    let cfg = store.config();
    let mut sor = BTreeMap::new();
    let mut lv2 = BTreeMap::new();
    for t in &cfg.targets {
        sor.insert(t.name.clone(), store.sor(&t.name)?.read().expect("lock").clone());
        lv2.insert(t.name.clone(), store.lv2(&t.name)?.read().expect("lock").clone());
    }
    Ok(verify_tables(cfg, &sor, &lv2, &store.sequences()))
}

pub fn verify_tables(
    cfg: &MappingConfig,
    sor: &BTreeMap<String, SorTables>,
    lv2: &BTreeMap<String, Lv2Table>,
    sequences: &BTreeMap<String, u64>,
) -> Vec<StoreViolation> {
    let mut out = Vec::new();
    let mut push = |code, location: String, detail: String| {
        out.push(StoreViolation {
            code,
            location,
            detail,
        })
    };
    let empty = SorTables::new();

    for t in &cfg.targets {
        let tables = sor.get(&t.name).unwrap_or(&empty);
        for s in tables.statics() {
            let loc = format!("sor/{}_static sk={}", t.name, s.sk);
            if s.af && !s.static_attrs.is_empty() {
                push(CheckCode::AugmentNotBlank, loc.clone(), format!("{:?}", s.static_attrs));
            }
            if s.af && tables.versions(s.sk).next().is_some() {
                push(CheckCode::AugmentHasHistory, loc.clone(), String::new());
            }
            let open = tables.versions(s.sk).filter(|v| v.is_open()).count();
            if open > 1 {
                push(CheckCode::MultipleOpenVersions, loc.clone(), format!("{open} open"));
            }
            if s.last_tx_type == Some(TxType::Delete) && open > 0 {
                push(CheckCode::DeletedButOpen, loc.clone(), String::new());
            }
            let versions: Vec<_> = tables.versions(s.sk).collect();
            for w in versions.windows(2) {
                if w[1].bd <= w[0].ed {
                    push(
                        CheckCode::OverlappingVersions,
                        loc.clone(),
                        format!("[{}, {}] and [{}, {}]", w[0].bd, w[0].ed, w[1].bd, w[1].ed),
                    );
                }
            }
        }
        for h in tables.history() {
            let loc = format!("sor/{}_history sk={} bd={}", t.name, h.sk, h.bd);
            if h.bd > h.ed {
                push(CheckCode::BadInterval, loc.clone(), format!("ed {}", h.ed));
            }
            match tables.static_by_sk(h.sk) {
                None => push(CheckCode::OrphanHistory, loc.clone(), String::new()),
                Some(s) if s.bk != h.bk => push(
                    CheckCode::BusinessKeyMismatch,
                    loc.clone(),
                    format!("static has {}", s.bk),
                ),
                Some(_) => {}
            }
            for fk in &t.fk_defs {
                match h.resolved_keys.get(&fk.column) {
                    None => push(CheckCode::MissingKey, loc.clone(), fk.column.clone()),
                    Some(sk) => {
                        let found = sor
                            .get(&fk.references)
                            .and_then(|r| r.static_by_sk(*sk))
                            .is_some();
                        if !found {
                            push(
                                CheckCode::DanglingKey,
                                loc.clone(),
                                format!("{} = {} not in {}", fk.column, sk, fk.references),
                            );
                        }
                    }
                }
            }
        }

        let next = sequences.get(&t.name).copied().unwrap_or(1);
        let max_static = tables.statics().map(|s| s.sk.0).max();
        let staged = lv2.get(&t.name);
        let max_lv2 = staged.and_then(|l| l.iter().map(|r| r.sk.0).max());
        if let Some(max) = max_static.max(max_lv2) {
            if next <= max {
                push(
                    CheckCode::SequenceBehind,
                    format!("sequence {}", t.name),
                    format!("next {next} <= max key {max}"),
                );
            }
        }
        if let Some(staged) = staged {
            for r in staged.iter() {
                if let Err(m) = r.check() {
                    push(CheckCode::BadStagingRow, format!("ssa2/{} bk={}", t.name, r.bk), m);
                }
            }
        }
    }
    out.sort();
    out
}
