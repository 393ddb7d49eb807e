//! Reference model: replays source transactions straight onto an in-memory
//! SOR, with no staging, and compares SOR states up to key renaming.
//!
//! Only the data types are shared with the pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::{FeedSpec, MappingConfig, SourceMapping, TargetMapping};
use crate::date::Date;
use crate::error::{Error, Result};
use crate::model::{
    BusinessKey, Lv1Record, SorHistoryRecord, SorState, SorStaticRecord, Sk, TargetState, TxType, Values,
};

#[derive(Default)]
struct Entity {
    sk: u64,
    statics: Values,
    last: Option<TxType>,
    last_date: Option<Date>,
    placeholder: bool,
    /// (bd, ed, dynamics, resolved keys), ascending by bd.
    versions: Vec<(Date, Date, Values, BTreeMap<String, Sk>)>,
}

#[derive(Default)]
struct Model {
    entities: BTreeMap<String, BTreeMap<BusinessKey, Entity>>,
    next: BTreeMap<String, u64>,
}

impl Model {
    fn fresh(&mut self, target: &str) -> u64 {
        let n = self.next.entry(target.to_string()).or_insert(0);
        *n += 1;
        *n
    }
}

fn mapped(feed: &FeedSpec, rec: &Lv1Record, t: &TargetMapping, m: &SourceMapping) -> (BusinessKey, Values, Values) {
    let source = |col: &str| -> Option<String> {
        if let Some(i) = feed.key.iter().position(|k| k == col) {
            return rec.bk.0.get(i).cloned();
        }
        rec.values.get(col).cloned()
    };
    let inverse: BTreeMap<&str, &str> = m.columns.iter().map(|(s, d)| (d.as_str(), s.as_str())).collect();
    let bk = t
        .bk_columns
        .iter()
        .map(|c| inverse.get(c.as_str()).and_then(|s| source(s)).unwrap_or_default())
        .collect();
    let mut attrs = Values::new();
    let mut fks = Values::new();
    for (s, d) in &m.columns {
        if let Some(v) = source(s) {
            if t.static_attrs.contains(d) || t.dynamic_attrs.contains(d) {
                attrs.insert(d.clone(), v);
            } else if t.fk_defs.iter().any(|f| &f.column == d) {
                fks.insert(d.clone(), v);
            }
        }
    }
    (BusinessKey(bk), attrs, fks)
}

fn pick(attrs: &Values, cols: &[String]) -> Values {
    attrs.iter().filter(|(k, _)| cols.contains(k)).map(|(k, v)| (k.clone(), v.clone())).collect()
}

/// Applies the whole feed history day by day and returns the final SOR.
///
/// Per day the latest transaction per (feed, key) survives. Entity changes
/// are applied first, in history order; foreign keys of the versions opened
/// that day are then resolved against the end-of-day state, creating
/// placeholders for anything still unknown.
pub fn replay_naive(history: &[(String, Lv1Record)], cfg: &MappingConfig) -> SorState {
    let mut days: BTreeMap<Date, BTreeMap<(String, BusinessKey), usize>> = BTreeMap::new();
    for (i, (feed, rec)) in history.iter().enumerate() {
        days.entry(rec.tx_date).or_default().insert((feed.clone(), rec.bk.clone()), i);
    }
    let mut model = Model::default();
    for t in &cfg.targets {
        model.entities.insert(t.name.clone(), BTreeMap::new());
    }

    for (day, latest) in days {
        let mut todays: Vec<usize> = latest.into_values().collect();
        todays.sort_unstable();
        let mut opened: Vec<(String, BusinessKey, Values)> = Vec::new();

        for i in todays {
            let (feed_id, rec) = &history[i];
            let Some(feed) = cfg.source_feeds.iter().find(|f| &f.id == feed_id) else {
                continue;
            };
            for t in &cfg.targets {
                for m in t.source_mappings.iter().filter(|m| &m.feed == feed_id) {
                    let (bk, attrs, fks) = mapped(feed, rec, t, m);
                    if apply(&mut model, t, bk.clone(), rec.tx_type, day, &attrs) {
                        opened.push((t.name.clone(), bk, fks));
                    }
                }
            }
        }

        for (target, bk, fks) in opened {
            let t = cfg.targets.iter().find(|t| t.name == target).expect("known target");
            let mut keys = BTreeMap::new();
            for fk in &t.fk_defs {
                let v = BusinessKey(vec![fks.get(&fk.column).cloned().unwrap_or_default()]);
                let existing = model.entities[&fk.references].get(&v).map(|e| e.sk);
                let sk = match existing {
                    Some(sk) => sk,
                    None => {
                        let sk = model.fresh(&fk.references);
                        model.entities.get_mut(&fk.references).expect("known").insert(
                            v,
                            Entity {
                                sk,
                                placeholder: true,
                                last_date: Some(day),
                                ..Default::default()
                            },
                        );
                        sk
                    }
                };
                keys.insert(fk.column.clone(), Sk(sk));
            }
            let e = model.entities.get_mut(&target).and_then(|m| m.get_mut(&bk)).expect("opened entity");
            let v = e.versions.last_mut().expect("opened version");
            v.3 = keys;
        }
    }

    let mut out = SorState::default();
    for t in &cfg.targets {
        let mut st = TargetState {
            key_refs: t.fk_defs.iter().map(|f| (f.column.clone(), f.references.clone())).collect(),
            ..Default::default()
        };
        for (bk, e) in &model.entities[&t.name] {
            st.statics.push(SorStaticRecord {
                sk: Sk(e.sk),
                bk: bk.clone(),
                static_attrs: e.statics.clone(),
                last_tx_type: e.last,
                last_tx_date: e.last_date,
                af: e.placeholder,
            });
            for (bd, ed, dynamics, keys) in &e.versions {
                st.history.push(SorHistoryRecord {
                    sk: Sk(e.sk),
                    bk: bk.clone(),
                    bd: *bd,
                    ed: *ed,
                    dynamic_attrs: dynamics.clone(),
                    resolved_keys: keys.clone(),
                });
            }
        }
        st.statics.sort_by_key(|s| s.sk);
        st.history.sort_by_key(|h| (h.sk, h.bd));
        out.targets.insert(t.name.clone(), st);
    }
    out
}

/// One transaction against one target. Returns whether a version was opened.
fn apply(model: &mut Model, t: &TargetMapping, bk: BusinessKey, tx: TxType, day: Date, attrs: &Values) -> bool {
    let statics = pick(attrs, &t.static_attrs);
    let dynamics = pick(attrs, &t.dynamic_attrs);
    let known = model.entities[&t.name].contains_key(&bk);
    let yesterday = day.pred().expect("valid day");

    if tx == TxType::Delete {
        if let Some(e) = model.entities.get_mut(&t.name).and_then(|m| m.get_mut(&bk)) {
            e.last = Some(TxType::Delete);
            e.last_date = Some(day);
            if let Some(v) = e.versions.last_mut().filter(|v| v.1 == Date::OPEN_END) {
                v.1 = yesterday;
            }
        }
        return false;
    }

    if !known {
        let sk = model.fresh(&t.name);
        model.entities.get_mut(&t.name).expect("known").insert(
            bk,
            Entity {
                sk,
                statics,
                last: Some(TxType::Insert),
                last_date: Some(day),
                placeholder: false,
                versions: vec![(day, Date::OPEN_END, dynamics, BTreeMap::new())],
            },
        );
        return true;
    }

    let e = model.entities.get_mut(&t.name).and_then(|m| m.get_mut(&bk)).expect("known");
    e.statics.extend(statics);
    e.last = Some(if e.placeholder { TxType::Insert } else { TxType::Update });
    e.last_date = Some(day);
    e.placeholder = false;
    let mut carried = e.versions.last().map(|v| v.2.clone()).unwrap_or_default();
    carried.extend(dynamics);
    match e.versions.last_mut() {
        Some(v) if v.0 == day => v.2 = carried,
        Some(v) => {
            if v.1 == Date::OPEN_END {
                v.1 = yesterday;
            }
            e.versions.push((day, Date::OPEN_END, carried, BTreeMap::new()));
        }
        None => e.versions.push((day, Date::OPEN_END, carried, BTreeMap::new())),
    }
    true
}

/// Parses a JSON-lines history: `{"feed", "tx_type", "tx_date", "values"}`
/// per line, `values` holding every feed column including the key.
pub fn parse_history(cfg: &MappingConfig, text: &str, source_name: &str) -> Result<Vec<(String, Lv1Record)>> {
    #[derive(Deserialize)]
    struct Line {
        feed: String,
        tx_type: String,
        tx_date: String,
        #[serde(default)]
        values: BTreeMap<String, String>,
    }
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: n as u64 + 1,
            message,
        };
        let l: Line = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let feed = cfg.feed(&l.feed)?;
        let tx_type: TxType = l.tx_type.parse().map_err(err)?;
        let tx_date: Date = l.tx_date.parse().map_err(|e: crate::date::InvalidDate| err(e.to_string()))?;
        let bk = BusinessKey(feed.key.iter().map(|k| l.values.get(k).cloned().unwrap_or_default()).collect());
        let values = l
            .values
            .into_iter()
            .filter(|(k, v)| !feed.key.contains(k) && !v.is_empty())
            .collect();
        out.push((l.feed, Lv1Record { bk, tx_type, tx_date, values }));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Difference {
    pub target: String,
    pub table: &'static str,
    pub key: String,
    pub detail: String,
}

impl fmt::Display for Difference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ({}): {}", self.target, self.table, self.key, self.detail)
    }
}

/// Renumbers surrogate keys per target by business-key order, starting at 1,
/// and rewrites resolved keys to match. Keys pointing nowhere are left as-is.
pub fn canonicalize(state: &SorState) -> SorState {
    let maps: BTreeMap<&str, BTreeMap<Sk, Sk>> = state
        .targets
        .iter()
        .map(|(name, t)| {
            let mut by_bk: Vec<&SorStaticRecord> = t.statics.iter().collect();
            by_bk.sort_by(|a, b| a.bk.cmp(&b.bk));
            let m = by_bk.iter().enumerate().map(|(i, s)| (s.sk, Sk(i as u64 + 1))).collect();
            (name.as_str(), m)
        })
        .collect();
    let mut out = SorState::default();
    for (name, t) in &state.targets {
        let own = &maps[name.as_str()];
        let relabel = |sk: Sk| own.get(&sk).copied().unwrap_or(sk);
        let mut statics: Vec<SorStaticRecord> = t
            .statics
            .iter()
            .map(|s| SorStaticRecord {
                sk: relabel(s.sk),
                ..s.clone()
            })
            .collect();
        statics.sort_by_key(|s| s.sk);
        let mut history: Vec<SorHistoryRecord> = t
            .history
            .iter()
            .map(|h| SorHistoryRecord {
                sk: relabel(h.sk),
                resolved_keys: h
                    .resolved_keys
                    .iter()
                    .map(|(col, sk)| {
                        let mapped = t
                            .key_refs
                            .get(col)
                            .and_then(|r| maps.get(r.as_str()))
                            .and_then(|m| m.get(sk))
                            .copied()
                            .unwrap_or(*sk);
                        (col.clone(), mapped)
                    })
                    .collect(),
                ..h.clone()
            })
            .collect();
        history.sort_by_key(|h| (h.sk, h.bd));
        out.targets.insert(
            name.clone(),
            TargetState {
                key_refs: t.key_refs.clone(),
                statics,
                history,
            },
        );
    }
    out
}

/// Row-level differences between two states after canonicalization; empty
/// iff they are equivalent.
pub fn compare_states(a: &SorState, b: &SorState) -> Result<Vec<Difference>> {
    let names = |s: &SorState| s.targets.keys().cloned().collect::<Vec<_>>();
    if names(a) != names(b) {
        return Err(Error::TargetSetMismatch {
            left: names(a),
            right: names(b),
        });
    }
    let (a, b) = (canonicalize(a), canonicalize(b));
    let mut out = Vec::new();
    for (name, ta) in &a.targets {
        let tb = &b.targets[name];
        let sa: BTreeMap<&BusinessKey, &SorStaticRecord> = ta.statics.iter().map(|s| (&s.bk, s)).collect();
        let sb: BTreeMap<&BusinessKey, &SorStaticRecord> = tb.statics.iter().map(|s| (&s.bk, s)).collect();
        diff_maps(&mut out, name, "static", &sa, &sb, |k| k.to_string());
        let ha: BTreeMap<(&BusinessKey, Date), &SorHistoryRecord> =
            ta.history.iter().map(|h| ((&h.bk, h.bd), h)).collect();
        let hb: BTreeMap<(&BusinessKey, Date), &SorHistoryRecord> =
            tb.history.iter().map(|h| ((&h.bk, h.bd), h)).collect();
        diff_maps(&mut out, name, "history", &ha, &hb, |(bk, bd)| format!("{bk}, {bd}"));
    }
    out.sort();
    Ok(out)
}

fn diff_maps<K: Ord, V: PartialEq + fmt::Debug>(
    out: &mut Vec<Difference>,
    target: &str,
    table: &'static str,
    a: &BTreeMap<K, V>,
    b: &BTreeMap<K, V>,
    key: impl Fn(&K) -> String,
) {
    let keys: BTreeSet<&K> = a.keys().chain(b.keys()).collect();
    for k in keys {
        let detail = match (a.get(k), b.get(k)) {
            (Some(x), Some(y)) if x == y => continue,
            (Some(x), Some(y)) => format!("{x:?} != {y:?}"),
            (Some(_), None) => "missing on right".to_string(),
            (None, Some(_)) => "missing on left".to_string(),
            (None, None) => unreachable!(),
        };
        out.push(Difference {
            target: target.to_string(),
            table,
            key: key(k),
            detail,
        });
    }
}
