//! Canonical CSV encoding of every table kind.
//!
//! All files are UTF-8, comma separated, `\n` terminated, with a header row.
//! Blank and absent values are empty fields. Fields are quoted only when
//! they contain a delimiter, quote or newline.

use std::collections::BTreeMap;

use crate::config::{FeedSpec, TargetMapping, FEED_TX_DATE, FEED_TX_TYPE};
use crate::date::Date;
use crate::error::{Error, Result};
use crate::model::{
    BusinessKey, Lv1Record, OpCode, SorHistoryRecord, SorStaticRecord, Sk, StagingRecord, TxType,
    Values,
};

pub(crate) fn encode(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Parses CSV bytes into (line number, fields) pairs after checking the header.
pub(crate) fn decode(
    bytes: &[u8],
    table: &str,
    expected: &[String],
) -> Result<Vec<(u64, Vec<String>)>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(bytes);
    let corrupt = |message: String| Error::StoreCorruption {
        table: table.to_string(),
        message,
    };
    let header: Vec<String> = r
        .headers()
        .map_err(|e| corrupt(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != expected {
        return Err(corrupt(format!(
            "header {header:?} does not match expected {expected:?}"
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| corrupt(e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

pub(crate) fn fmt_date(d: Option<Date>) -> String {
    d.map(|d| d.to_string()).unwrap_or_default()
}

pub(crate) fn fmt_flag(b: bool) -> String {
    if b { "Y" } else { "N" }.to_string()
}

fn parse_flag(s: &str) -> Result<bool, String> {
    match s {
        "Y" | "1" => Ok(true),
        "N" | "0" | "" => Ok(false),
        other => Err(format!("invalid flag {other:?}")),
    }
}

fn parse_opt_date(s: &str) -> Result<Option<Date>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e: crate::date::InvalidDate| e.to_string())
    }
}

fn parse_opt_sk(s: &str) -> Result<Option<Sk>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

/// Column layouts derived from one target mapping.
pub struct TargetSchema<'a> {
    pub target: &'a TargetMapping,
    pub sk_digits: usize,
}

impl<'a> TargetSchema<'a> {
    pub fn new(target: &'a TargetMapping, sk_digits: usize) -> Self {
        TargetSchema { target, sk_digits }
    }

    fn sk(&self, sk: Sk) -> String {
        sk.render(self.sk_digits)
    }

    fn key_columns(&self) -> Vec<String> {
        self.target.fk_defs.iter().map(|f| f.key_column()).collect()
    }

    pub fn lv2_header(&self) -> Vec<String> {
        let t = self.target;
        let mut h = vec!["OP".to_string(), "SK".to_string()];
        h.extend(t.bk_columns.iter().cloned());
        h.extend(["SOR_BD", "ED", "NEW_BD", "AF"].map(String::from));
        h.extend(t.data_columns().map(String::from));
        h.extend(t.fk_columns().map(String::from));
        h.extend(self.key_columns());
        h
    }

    pub fn static_header(&self) -> Vec<String> {
        let t = self.target;
        let mut h = vec!["SK".to_string()];
        h.extend(t.bk_columns.iter().cloned());
        h.extend(t.static_attrs.iter().cloned());
        h.extend(["LAST_TX_TYPE", "LAST_TX_DATE", "AF"].map(String::from));
        h
    }

    pub fn history_header(&self) -> Vec<String> {
        let t = self.target;
        let mut h = vec!["SK".to_string()];
        h.extend(t.bk_columns.iter().cloned());
        h.extend(["BD", "ED"].map(String::from));
        h.extend(t.dynamic_attrs.iter().cloned());
        h.extend(self.key_columns());
        h
    }

    fn values_row(cols: impl Iterator<Item = impl AsRef<str>>, values: &Values) -> Vec<String> {
        cols.map(|c| values.get(c.as_ref()).cloned().unwrap_or_default())
            .collect()
    }

    fn keys_row(&self, keys: &BTreeMap<String, Sk>) -> Vec<String> {
        self.target
            .fk_defs
            .iter()
            .map(|f| keys.get(&f.column).map(|k| self.sk(*k)).unwrap_or_default())
            .collect()
    }

    pub fn lv2_row(&self, r: &StagingRecord) -> Vec<String> {
        let mut row = vec![r.op.code().to_string(), self.sk(r.sk)];
        row.extend(r.bk.0.iter().cloned());
        row.push(fmt_date(r.sor_bd));
        row.push(fmt_date(r.ed));
        row.push(fmt_date(r.new_bd));
        row.push(fmt_flag(r.af));
        row.extend(Self::values_row(self.target.data_columns(), &r.data));
        row.extend(Self::values_row(self.target.fk_columns(), &r.fk_values));
        row.extend(self.keys_row(&r.resolved_keys));
        row
    }

    pub fn static_row(&self, r: &SorStaticRecord) -> Vec<String> {
        let mut row = vec![self.sk(r.sk)];
        row.extend(r.bk.0.iter().cloned());
        row.extend(Self::values_row(self.target.static_attrs.iter(), &r.static_attrs));
        row.push(r.last_tx_type.map(|t| t.code().to_string()).unwrap_or_default());
        row.push(fmt_date(r.last_tx_date));
        row.push(fmt_flag(r.af));
        row
    }

    pub fn history_row(&self, r: &SorHistoryRecord) -> Vec<String> {
        let mut row = vec![self.sk(r.sk)];
        row.extend(r.bk.0.iter().cloned());
        row.push(r.bd.to_string());
        row.push(r.ed.to_string());
        row.extend(Self::values_row(self.target.dynamic_attrs.iter(), &r.dynamic_attrs));
        row.extend(self.keys_row(&r.resolved_keys));
        row
    }

    fn split<'r>(&self, fields: &'r [String]) -> (&'r str, BusinessKey, &'r [String]) {
        let n = self.target.bk_columns.len();
        let bk = BusinessKey(fields[1..1 + n].to_vec());
        (&fields[0], bk, &fields[1 + n..])
    }

    fn take_values<'r>(
        cols: impl Iterator<Item = impl AsRef<str>>,
        fields: &mut impl Iterator<Item = &'r String>,
    ) -> Values {
        let mut v = Values::new();
        for c in cols {
            let f = fields.next().expect("field count checked by csv reader");
            if !f.is_empty() {
                v.insert(c.as_ref().to_string(), f.clone());
            }
        }
        v
    }

    fn take_keys<'r>(
        &self,
        fields: &mut impl Iterator<Item = &'r String>,
    ) -> Result<BTreeMap<String, Sk>, String> {
        let mut keys = BTreeMap::new();
        for fk in &self.target.fk_defs {
            let f = fields.next().expect("field count checked by csv reader");
            if let Some(sk) = parse_opt_sk(f)? {
                keys.insert(fk.column.clone(), sk);
            }
        }
        Ok(keys)
    }

    pub fn parse_lv2(&self, fields: &[String]) -> Result<StagingRecord, String> {
        let op: OpCode = fields[0].parse()?;
        let (sk, bk, rest) = self.split(&fields[1..]);
        let sk: Sk = sk.parse()?;
        let sor_bd = parse_opt_date(&rest[0])?;
        let ed = parse_opt_date(&rest[1])?;
        let new_bd = parse_opt_date(&rest[2])?;
        let af = parse_flag(&rest[3])?;
        let mut it = rest[4..].iter();
        let data = Self::take_values(self.target.data_columns(), &mut it);
        let fk_values = Self::take_values(self.target.fk_columns(), &mut it);
        let resolved_keys = self.take_keys(&mut it)?;
        Ok(StagingRecord {
            op,
            sk,
            bk,
            sor_bd,
            ed,
            new_bd,
            af,
            data,
            fk_values,
            resolved_keys,
        })
    }

    pub fn parse_static(&self, fields: &[String]) -> Result<SorStaticRecord, String> {
        let (sk, bk, rest) = self.split(fields);
        let sk: Sk = sk.parse()?;
        let mut it = rest.iter();
        let static_attrs = Self::take_values(self.target.static_attrs.iter(), &mut it);
        let tail: Vec<&String> = it.collect();
        let last_tx_type = match tail[0].as_str() {
            "" => None,
            s => Some(s.parse::<TxType>()?),
        };
        Ok(SorStaticRecord {
            sk,
            bk,
            static_attrs,
            last_tx_type,
            last_tx_date: parse_opt_date(tail[1])?,
            af: parse_flag(tail[2])?,
        })
    }

    pub fn parse_history(&self, fields: &[String]) -> Result<SorHistoryRecord, String> {
        let (sk, bk, rest) = self.split(fields);
        let sk: Sk = sk.parse()?;
        let bd = parse_opt_date(&rest[0])?.ok_or("missing BD")?;
        let ed = parse_opt_date(&rest[1])?.ok_or("missing ED")?;
        let mut it = rest[2..].iter();
        let dynamic_attrs = Self::take_values(self.target.dynamic_attrs.iter(), &mut it);
        let resolved_keys = self.take_keys(&mut it)?;
        Ok(SorHistoryRecord {
            sk,
            bk,
            bd,
            ed,
            dynamic_attrs,
            resolved_keys,
        })
    }
}

pub(crate) fn lv1_header(feed: &FeedSpec) -> Vec<String> {
    let mut h = vec![FEED_TX_TYPE.to_string(), FEED_TX_DATE.to_string()];
    h.extend(feed.columns.iter().cloned());
    h
}

pub(crate) fn lv1_row(feed: &FeedSpec, r: &Lv1Record) -> Vec<String> {
    let mut row = vec![r.tx_type.code().to_string(), r.tx_date.to_string()];
    for c in &feed.columns {
        match feed.key.iter().position(|k| k == c) {
            Some(i) => row.push(r.bk.0[i].clone()),
            None => row.push(r.values.get(c).cloned().unwrap_or_default()),
        }
    }
    row
}

/// Builds a record from fields laid out as `lv1_header(feed)`.
pub(crate) fn parse_lv1(feed: &FeedSpec, fields: &[String]) -> Result<Lv1Record, String> {
    let tx_type: TxType = fields[0].parse()?;
    let tx_date: Date = fields[1]
        .parse()
        .map_err(|e: crate::date::InvalidDate| e.to_string())?;
    let mut bk = vec![String::new(); feed.key.len()];
    let mut values = Values::new();
    for (c, v) in feed.columns.iter().zip(&fields[2..]) {
        match feed.key.iter().position(|k| k == c) {
            Some(i) => {
                if v.is_empty() {
                    return Err(format!("empty business key column {c}"));
                }
                bk[i] = v.clone();
            }
            None if !v.is_empty() => {
                values.insert(c.clone(), v.clone());
            }
            None => {}
        }
    }
    Ok(Lv1Record {
        bk: BusinessKey(bk),
        tx_type,
        tx_date,
        values,
    })
}
