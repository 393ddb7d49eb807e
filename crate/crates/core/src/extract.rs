//! Change-feed ingestion into SSA level 1.
//!
//! A feed may carry several actions for one business key within a batch;
//! only the latest survives, ordered by `(tx_date, line number)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{FeedSpec, FEED_TX_DATE, FEED_TX_TYPE};
use crate::date::Date;
use crate::error::{Error, Result};
use crate::model::{BusinessKey, Lv1Record, TxType, Values};
use crate::storage::Store;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_superseded: usize,
}

/// Parses feed bytes. Rows come back in file order with their line numbers.
pub fn parse_feed(
    feed: &FeedSpec,
    bytes: &[u8],
    source_name: &str,
    batch_date: Date,
) -> Result<Vec<(u64, Lv1Record)>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(bytes);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    let position = |name: &str| header.iter().position(|h| h == name);
    let tx_type_at = position(FEED_TX_TYPE).ok_or_else(|| parse_err(1, format!("missing column {FEED_TX_TYPE}")))?;
    let tx_date_at = position(FEED_TX_DATE).ok_or_else(|| parse_err(1, format!("missing column {FEED_TX_DATE}")))?;
    let mut column_at = Vec::with_capacity(feed.columns.len());
    for c in &feed.columns {
        column_at.push(position(c).ok_or_else(|| parse_err(1, format!("missing column {c}")))?);
    }
    for h in &header {
        if h != FEED_TX_TYPE && h != FEED_TX_DATE && !feed.columns.contains(h) {
            return Err(parse_err(1, format!("unexpected column {h}")));
        }
    }

    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let tx_type: TxType = rec[tx_type_at].parse().map_err(|m| parse_err(line, m))?;
        let tx_date: Date = rec[tx_date_at]
            .parse()
            .map_err(|e: crate::date::InvalidDate| parse_err(line, e.to_string()))?;
        if tx_date > batch_date {
            return Err(Error::FutureDate {
                feed: feed.id.clone(),
                line,
                tx_date,
                batch_date,
            });
        }
        let mut bk = Vec::with_capacity(feed.key.len());
        for k in &feed.key {
            let i = column_at[feed.columns.iter().position(|c| c == k).expect("validated key")];
            let v = &rec[i];
            if v.is_empty() {
                return Err(parse_err(line, format!("empty business key column {k}")));
            }
            bk.push(v.to_string());
        }
        let mut values = Values::new();
        for (c, &i) in feed.columns.iter().zip(&column_at) {
            if !feed.key.contains(c) && !rec[i].is_empty() {
                values.insert(c.clone(), rec[i].to_string());
            }
        }
        out.push((
            line,
            Lv1Record {
                bk: BusinessKey(bk),
                tx_type,
                tx_date,
                values,
            },
        ));
    }
    Ok(out)
}

/// Keeps the latest action per business key, returned in business-key order.
pub fn latest_per_key(rows: Vec<(u64, Lv1Record)>) -> Vec<Lv1Record> {
    let mut best: BTreeMap<BusinessKey, (Date, u64, Lv1Record)> = BTreeMap::new();
    for (line, r) in rows {
        match best.get(&r.bk) {
            Some((d, l, _)) if (*d, *l) > (r.tx_date, line) => {}
            _ => {
                best.insert(r.bk.clone(), (r.tx_date, line, r));
            }
        }
    }
    best.into_values().map(|(_, _, r)| r).collect()
}

/// Ingests the feed file at `path`, replacing the feed's level-1 table.
pub fn ingest_file(store: &Store, feed_id: &str, path: &Path, batch_date: Date) -> Result<IngestStats> {
    let feed = store.config().feed(feed_id)?.clone();
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::FeedMissing {
                feed: feed_id.to_string(),
                path: path.to_path_buf(),
            })
        }
        Err(e) => return Err(Error::persistence(path, e)),
    };
    let rows = parse_feed(&feed, &bytes, &path.display().to_string(), batch_date)?;
    let rows_read = rows.len();
    let kept = latest_per_key(rows);
    store.write_lv1(&feed, batch_date, &kept)?;
    log::info!("ingested {feed_id}: {rows_read} read, {} kept", kept.len());
    Ok(IngestStats {
        rows_read,
        rows_kept: kept.len(),
        rows_superseded: rows_read - kept.len(),
    })
}

/// Ingests the configured feed for `batch_date`.
pub fn ingest_change_feed(store: &Store, feed_id: &str, batch_date: Date) -> Result<IngestStats> {
    let cfg = store.config();
    let feed = cfg.feed(feed_id)?;
    let path = cfg.feed_path(feed, batch_date);
    ingest_file(store, feed_id, &path, batch_date)
}
