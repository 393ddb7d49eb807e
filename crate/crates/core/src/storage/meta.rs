use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::date::Date;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchOutcome {
    Running,
    Success,
    Aborted,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    /// SOR snapshot taken before the batch touched anything.
    pub snapshot: String,
    pub outcome: BatchOutcome,
}

/// Contents of `meta.json`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub(crate) struct Meta {
    /// Next surrogate key to hand out, per target.
    pub sequences: BTreeMap<String, u64>,
    /// Batch whose feeds are currently held in `ssa1/`.
    pub lv1_batch: Option<Date>,
    /// Batch whose rows are currently held in `ssa2/`.
    pub lv2_batch: Option<Date>,
    pub snapshot_counter: u64,
    pub batches: BTreeMap<String, BatchRecord>,
}

impl Meta {
    pub fn to_json(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec_pretty(self).expect("meta serializes");
        v.push(b'\n');
        v
    }
}
