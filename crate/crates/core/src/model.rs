//! Row types shared by the staging areas and the system of record.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::date::Date;

/// Column name to value. Blank values are never stored: an absent entry is blank.
pub type Values = BTreeMap<String, String>;

/// Ordered business-key tuple as found in the source system.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BusinessKey(pub Vec<String>);

impl BusinessKey {
    pub fn single(value: impl Into<String>) -> Self {
        BusinessKey(vec![value.into()])
    }

    pub fn parts(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for BusinessKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("|"))
    }
}

impl From<&str> for BusinessKey {
    fn from(s: &str) -> Self {
        BusinessKey::single(s)
    }
}

/// Warehouse-assigned surrogate key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sk(pub u64);

impl Sk {
    /// Renders the key zero-padded to `digits` (0 means no padding).
    pub fn render(self, digits: usize) -> String {
        format!("{:0width$}", self.0, width = digits)
    }
}

impl fmt::Display for Sk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Sk {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().parse::<u64>() {
            Ok(0) | Err(_) => Err(format!("invalid surrogate key {s:?}")),
            Ok(v) => Ok(Sk(v)),
        }
    }
}

/// Source-side action marker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxType {
    #[serde(rename = "I")]
    Insert,
    #[serde(rename = "U")]
    Update,
    #[serde(rename = "D")]
    Delete,
}

impl TxType {
    pub fn code(self) -> &'static str {
        match self {
            TxType::Insert => "I",
            TxType::Update => "U",
            TxType::Delete => "D",
        }
    }
}

impl FromStr for TxType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "I" => Ok(TxType::Insert),
            "U" => Ok(TxType::Update),
            "D" => Ok(TxType::Delete),
            other => Err(format!("invalid tx type {other:?}: expected I, U or D")),
        }
    }
}

impl fmt::Display for TxType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Warehouse-side operation assigned by change detection or key validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpCode {
    /// Begin: a new entity gets a fresh surrogate key.
    B,
    /// End-begin: close the current version and open a new one.
    EB,
    /// End: close the current version, no successor.
    E,
    /// Augment: blank placeholder for an early-arriving reference.
    A,
    /// Deactivate augment: real data arrives for a placeholder.
    DA,
}

impl OpCode {
    pub const ALL: [OpCode; 5] = [OpCode::B, OpCode::EB, OpCode::E, OpCode::A, OpCode::DA];

    pub fn code(self) -> &'static str {
        match self {
            OpCode::B => "B",
            OpCode::EB => "EB",
            OpCode::E => "E",
            OpCode::A => "A",
            OpCode::DA => "DA",
        }
    }
}

impl FromStr for OpCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "B" => Ok(OpCode::B),
            "EB" => Ok(OpCode::EB),
            "E" => Ok(OpCode::E),
            "A" => Ok(OpCode::A),
            "DA" => Ok(OpCode::DA),
            other => Err(format!("invalid operation code {other:?}")),
        }
    }
}

impl fmt::Display for OpCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Per-op-code counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub b: usize,
    pub eb: usize,
    pub e: usize,
    pub a: usize,
    pub da: usize,
}

impl OpCounts {
    pub fn add(&mut self, op: OpCode) {
        *self.slot(op) += 1;
    }

    pub fn get(&self, op: OpCode) -> usize {
        match op {
            OpCode::B => self.b,
            OpCode::EB => self.eb,
            OpCode::E => self.e,
            OpCode::A => self.a,
            OpCode::DA => self.da,
        }
    }

    fn slot(&mut self, op: OpCode) -> &mut usize {
        match op {
            OpCode::B => &mut self.b,
            OpCode::EB => &mut self.eb,
            OpCode::E => &mut self.e,
            OpCode::A => &mut self.a,
            OpCode::DA => &mut self.da,
        }
    }

    pub fn total(&self) -> usize {
        self.b + self.eb + self.e + self.a + self.da
    }

    /// Counts excluding augment rows, which key validation creates.
    pub fn without_augments(&self) -> OpCounts {
        OpCounts { a: 0, ..*self }
    }
}

/// Source-shaped staged row in SSA level 1.
///
/// `values` holds every non-key feed column under its source name; foreign
/// key business values are ordinary columns until transposition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lv1Record {
    pub bk: BusinessKey,
    pub tx_type: TxType,
    pub tx_date: Date,
    pub values: Values,
}

/// Warehouse-shaped row in SSA level 2.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagingRecord {
    pub op: OpCode,
    pub sk: Sk,
    pub bk: BusinessKey,
    pub sor_bd: Option<Date>,
    pub ed: Option<Date>,
    pub new_bd: Option<Date>,
    pub af: bool,
    pub data: Values,
    pub fk_values: Values,
    /// FK column to the surrogate key it resolved to.
    pub resolved_keys: BTreeMap<String, Sk>,
}

impl StagingRecord {
    pub fn augment(sk: Sk, bk: BusinessKey) -> Self {
        StagingRecord {
            op: OpCode::A,
            sk,
            bk,
            sor_bd: None,
            ed: None,
            new_bd: None,
            af: true,
            data: Values::new(),
            fk_values: Values::new(),
            resolved_keys: BTreeMap::new(),
        }
    }

    /// Checks the field constraints that depend on the operation code.
    ///
    /// `sor_bd`/`ed` are optional on EB and E together: they are absent when
    /// the matched entity has no open history version (a revived delete or a
    /// placeholder being deleted).
    pub fn check(&self) -> Result<(), String> {
        let closes = match (self.sor_bd, self.ed) {
            (Some(bd), Some(ed)) => {
                if bd > ed {
                    return Err(format!("SOR_BD {bd} after ED {ed}"));
                }
                Some(ed)
            }
            (None, None) => None,
            _ => return Err("SOR_BD and ED must be both present or both absent".into()),
        };
        match self.op {
            OpCode::EB => {
                let new_bd = self.new_bd.ok_or("EB requires NEW_BD")?;
                if let Some(ed) = closes {
                    if ed >= new_bd {
                        return Err(format!("ED {ed} not before NEW_BD {new_bd}"));
                    }
                }
            }
            OpCode::E => {
                if self.new_bd.is_some() {
                    return Err("E must not carry NEW_BD".into());
                }
                if !self.data.is_empty() || !self.fk_values.is_empty() {
                    return Err("E must not carry data".into());
                }
            }
            OpCode::B | OpCode::DA => {
                if self.new_bd.is_none() {
                    return Err(format!("{} requires NEW_BD", self.op));
                }
                if closes.is_some() {
                    return Err(format!("{} must not carry SOR_BD/ED", self.op));
                }
            }
            OpCode::A => {
                if !self.af {
                    return Err("augment row must have AF set".into());
                }
                if self.new_bd.is_some()
                    || closes.is_some()
                    || !self.data.is_empty()
                    || !self.fk_values.is_empty()
                    || !self.resolved_keys.is_empty()
                {
                    return Err("augment row may only carry SK and BK".into());
                }
            }
        }
        if self.op != OpCode::A && self.af {
            return Err(format!("AF set on a {} row", self.op));
        }
        Ok(())
    }
}

/// Non-versioned SOR row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SorStaticRecord {
    pub sk: Sk,
    pub bk: BusinessKey,
    pub static_attrs: Values,
    pub last_tx_type: Option<TxType>,
    /// Batch date of the last load that touched this entity.
    pub last_tx_date: Option<Date>,
    pub af: bool,
}

/// Versioned SOR row; `ed == Date::OPEN_END` marks the current version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SorHistoryRecord {
    pub sk: Sk,
    pub bk: BusinessKey,
    pub bd: Date,
    pub ed: Date,
    pub dynamic_attrs: Values,
    pub resolved_keys: BTreeMap<String, Sk>,
}

impl SorHistoryRecord {
    pub fn is_open(&self) -> bool {
        self.ed.is_open_end()
    }
}

/// In-memory image of a whole SOR, used to compare runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SorState {
    pub targets: BTreeMap<String, TargetState>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetState {
    /// FK column to the target its keys point into.
    pub key_refs: BTreeMap<String, String>,
    pub statics: Vec<SorStaticRecord>,
    pub history: Vec<SorHistoryRecord>,
}

/// Copies `src` over `dst` key by key; absent (blank) entries in `src` leave
/// `dst` untouched.
pub fn overlay(dst: &mut Values, src: &Values) {
    for (k, v) in src {
        dst.insert(k.clone(), v.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Date {
        s.parse().unwrap()
    }

    fn eb() -> StagingRecord {
        StagingRecord {
            op: OpCode::EB,
            sk: Sk(1),
            bk: "BK1".into(),
            sor_bd: Some(d("20141001")),
            ed: Some(d("20141007")),
            new_bd: Some(d("20141008")),
            af: false,
            data: Values::new(),
            fk_values: Values::new(),
            resolved_keys: BTreeMap::new(),
        }
    }

    #[test]
    fn eb_date_order_enforced() {
        assert!(eb().check().is_ok());
        let mut r = eb();
        r.ed = Some(d("20141008"));
        assert!(r.check().is_err());
        let mut r = eb();
        r.sor_bd = Some(d("20141009"));
        assert!(r.check().is_err());
        let mut r = eb();
        r.new_bd = None;
        assert!(r.check().is_err());
        let mut r = eb();
        r.ed = None;
        assert!(r.check().is_err());
    }

    #[test]
    fn augment_shape() {
        let a = StagingRecord::augment(Sk(613), "Z".into());
        assert!(a.check().is_ok());
        let mut bad = a.clone();
        bad.data.insert("Data1".into(), "x".into());
        assert!(bad.check().is_err());
        let mut bad = a;
        bad.af = false;
        assert!(bad.check().is_err());
    }

    #[test]
    fn codes_parse() {
        for op in OpCode::ALL {
            assert_eq!(op.code().parse::<OpCode>().unwrap(), op);
        }
        assert!("X".parse::<OpCode>().is_err());
        assert!("D".parse::<OpCode>().is_err());
        assert_eq!("U".parse::<TxType>().unwrap(), TxType::Update);
        assert!("X".parse::<TxType>().is_err());
    }

    #[test]
    fn sk_render_pads() {
        assert_eq!(Sk(5).render(3), "005");
        assert_eq!(Sk(613).render(3), "613");
        assert_eq!(Sk(5).render(0), "5");
        assert_eq!("005".parse::<Sk>().unwrap(), Sk(5));
        assert!("0".parse::<Sk>().is_err());
    }

    #[test]
    fn op_counts() {
        let mut c = OpCounts::default();
        for op in [OpCode::B, OpCode::B, OpCode::A, OpCode::E] {
            c.add(op);
        }
        assert_eq!((c.get(OpCode::B), c.total()), (2, 4));
        assert_eq!(c.without_augments().total(), 3);
    }
}
