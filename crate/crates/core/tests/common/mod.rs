#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tempfile::TempDir;

use etl_core::model::{BusinessKey, Lv1Record, TxType};
use etl_core::orchestrator::{run_batch, BatchReport, RunOptions};
use etl_core::storage::verify::{verify, StoreViolation};
use etl_core::{load_config, Date, MappingConfig, Store};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/running_example")
}

pub fn d(s: &str) -> Date {
    s.parse().unwrap()
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dst = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_tree(&e.path(), &dst);
        } else {
            fs::copy(e.path(), dst).unwrap();
        }
    }
}

/// Running example: config, feeds and the pre-batch SOR in a scratch dir.
pub struct RunningExample {
    pub dir: TempDir,
    pub store: Store,
}

impl RunningExample {
    pub const BATCH: &'static str = "20141008";

    pub fn open() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fx = fixture_dir();
        fs::copy(fx.join("config.toml"), dir.path().join("config.toml")).unwrap();
        copy_tree(&fx.join("feeds"), &dir.path().join("feeds"));
        copy_tree(&fx.join("seed/sor"), &dir.path().join("data/sor"));
        let cfg = load_config(dir.path().join("config.toml")).unwrap();
        let store = Store::open(dir.path().join("data"), Arc::new(cfg)).unwrap();
        RunningExample { dir, store }
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.path().join("config.toml")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dir.path().join("data")
    }
}

pub fn expected(rel: &str) -> String {
    fs::read_to_string(fixture_dir().join("expected").join(rel)).unwrap()
}

pub fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

pub fn violations(store: &Store) -> Vec<StoreViolation> {
    verify(store).unwrap()
}

// ---- randomized workloads ----

pub const WORKLOAD_CONFIG: &str = r#"
batch_frequency = "daily"
sk_digits = 4

[[feeds]]
id = "region_src"
path = "feeds/{batch_date}/region_src.csv"
key = ["code"]
columns = ["code", "name", "manager"]

[[feeds]]
id = "shop_src"
path = "feeds/{batch_date}/shop_src.csv"
key = ["code"]
columns = ["code", "opened", "size", "region"]

[[feeds]]
id = "sale_src"
path = "feeds/{batch_date}/sale_src.csv"
key = ["id"]
columns = ["id", "channel", "amount", "shop"]

[[targets]]
name = "Region"
bk_columns = ["Code"]
static_attrs = ["Name"]
dynamic_attrs = ["Manager"]
[[targets.sources]]
feed = "region_src"
columns = { code = "Code", name = "Name", manager = "Manager" }

[[targets]]
name = "Shop"
bk_columns = ["Code"]
static_attrs = ["Opened"]
dynamic_attrs = ["Size"]
fk = [{ column = "Region", references = "Region" }]
[[targets.sources]]
feed = "shop_src"
columns = { code = "Code", opened = "Opened", size = "Size", region = "Region" }

[[targets]]
name = "Sale"
bk_columns = ["Id"]
static_attrs = ["Channel"]
dynamic_attrs = ["Amount"]
fk = [{ column = "Shop", references = "Shop" }]
[[targets.sources]]
feed = "sale_src"
columns = { id = "Id", channel = "Channel", amount = "Amount", shop = "Shop" }
"#;

/// Feed id, key column, attribute columns, optional (fk column, referenced feed).
type FeedShape = (&'static str, &'static str, [&'static str; 2], Option<(&'static str, &'static str)>);

const FEEDS: [FeedShape; 3] = [
    ("region_src", "code", ["name", "manager"], None),
    ("shop_src", "code", ["opened", "size"], Some(("region", "region_src"))),
    ("sale_src", "id", ["channel", "amount"], Some(("shop", "shop_src"))),
];

#[derive(Clone, Debug)]
pub struct WorkloadParams {
    pub entities: usize,
    pub days: usize,
    pub rows_per_feed: usize,
    /// Percent of I, U (D is the rest).
    pub insert_pct: u32,
    pub update_pct: u32,
    pub early_pct: u32,
    pub blank_pct: u32,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            entities: 50,
            days: 10,
            rows_per_feed: 20,
            insert_pct: 50,
            update_pct: 35,
            early_pct: 20,
            blank_pct: 10,
        }
    }
}

/// One raw feed row.
#[derive(Clone, Debug)]
pub struct FeedRow {
    pub tx_type: TxType,
    pub tx_date: Date,
    pub values: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct Workload {
    pub seed: u64,
    pub config: String,
    /// Per day, per feed, rows in file order.
    pub days: Vec<(Date, BTreeMap<String, Vec<FeedRow>>)>,
}

fn pool(feed: &str, n: usize) -> Vec<String> {
    let p = &feed[..2];
    (0..n).map(|i| format!("{p}{i:03}")).collect()
}

impl Workload {
    pub fn generate(seed: u64, p: &WorkloadParams) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let start = d("20240101");
        // Business keys ever sent with I/U per feed, up to the previous day.
        let mut seen: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        let mut days = Vec::new();
        for day_no in 0..p.days {
            let date = start.add_days(day_no as i64).unwrap();
            let mut today: BTreeMap<String, Vec<FeedRow>> = BTreeMap::new();
            let mut sent: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
            for (feed, key, attrs, fk) in FEEDS {
                let keys = pool(feed, p.entities);
                let mut rows = Vec::new();
                for _ in 0..p.rows_per_feed {
                    let bk = keys[rng.gen_range(0..keys.len())].clone();
                    let roll = rng.gen_range(0..100);
                    let tx = if roll < p.insert_pct {
                        TxType::Insert
                    } else if roll < p.insert_pct + p.update_pct {
                        TxType::Update
                    } else {
                        TxType::Delete
                    };
                    let mut values = BTreeMap::new();
                    values.insert(key.to_string(), bk.clone());
                    if tx != TxType::Delete {
                        for a in attrs {
                            if rng.gen_range(0..100) >= p.blank_pct {
                                values.insert(a.to_string(), format!("{a}{}", rng.gen_range(0..1000)));
                            }
                        }
                        if let Some((col, ref_feed)) = fk {
                            let known = seen.get(ref_feed).cloned().unwrap_or_default();
                            let all = pool(ref_feed, p.entities);
                            let unknown: Vec<&String> = all.iter().filter(|k| !known.contains(*k)).collect();
                            let early = rng.gen_range(0..100) < p.early_pct || known.is_empty();
                            let v = if early && !unknown.is_empty() {
                                unknown[rng.gen_range(0..unknown.len())].clone()
                            } else {
                                let k: Vec<&String> = known.iter().collect();
                                k[rng.gen_range(0..k.len())].clone()
                            };
                            values.insert(col.to_string(), v);
                        }
                        sent.entry(feed).or_default().insert(bk);
                    }
                    rows.push(FeedRow {
                        tx_type: tx,
                        tx_date: date,
                        values,
                    });
                }
                today.insert(feed.to_string(), rows);
            }
            for (f, ks) in sent {
                seen.entry(f).or_default().extend(ks);
            }
            days.push((date, today));
        }
        Workload {
            seed,
            config: WORKLOAD_CONFIG.to_string(),
            days,
        }
    }

    pub fn cfg(&self) -> MappingConfig {
        MappingConfig::from_toml_str(&self.config, ".").unwrap()
    }

    /// The full source history in global order, as the reference model reads it.
    pub fn history(&self) -> Vec<(String, Lv1Record)> {
        let cfg = self.cfg();
        let mut out = Vec::new();
        for (_, feeds) in &self.days {
            for f in &cfg.source_feeds {
                for r in feeds.get(&f.id).into_iter().flatten() {
                    let bk = BusinessKey(f.key.iter().map(|k| r.values[k].clone()).collect());
                    let values = r
                        .values
                        .iter()
                        .filter(|(k, v)| !f.key.contains(k) && !v.is_empty())
                        .map(|(k, v)| (k.clone(), v.clone()))
                        .collect();
                    out.push((
                        f.id.clone(),
                        Lv1Record {
                            bk,
                            tx_type: r.tx_type,
                            tx_date: r.tx_date,
                            values,
                        },
                    ));
                }
            }
        }
        out
    }

    /// Writes config and all feed files under `dir`.
    pub fn materialize(&self, dir: &Path) {
        fs::write(dir.join("config.toml"), &self.config).unwrap();
        let cfg = self.cfg();
        for (date, feeds) in &self.days {
            let ddir = dir.join("feeds").join(date.to_string());
            fs::create_dir_all(&ddir).unwrap();
            for f in &cfg.source_feeds {
                let mut w = csv::Writer::from_writer(Vec::new());
                let mut header = vec!["tx_type".to_string(), "tx_date".to_string()];
                header.extend(f.columns.iter().cloned());
                w.write_record(&header).unwrap();
                for r in feeds.get(&f.id).into_iter().flatten() {
                    let mut rec = vec![r.tx_type.code().to_string(), r.tx_date.to_string()];
                    rec.extend(f.columns.iter().map(|c| r.values.get(c).cloned().unwrap_or_default()));
                    w.write_record(&rec).unwrap();
                }
                fs::write(ddir.join(format!("{}.csv", f.id)), w.into_inner().unwrap()).unwrap();
            }
        }
    }

    /// History in the line format the `oracle` command reads.
    pub fn history_jsonl(&self) -> String {
        let cfg = self.cfg();
        let mut out = String::new();
        for (_, feeds) in &self.days {
            for f in &cfg.source_feeds {
                for r in feeds.get(&f.id).into_iter().flatten() {
                    let line = serde_json::json!({
                        "feed": f.id,
                        "tx_type": r.tx_type.code(),
                        "tx_date": r.tx_date.to_string(),
                        "values": r.values,
                    });
                    out.push_str(&line.to_string());
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn dates(&self) -> Vec<Date> {
        self.days.iter().map(|(d, _)| *d).collect()
    }
}

/// A workload laid out on disk with an empty store.
pub struct Staged {
    pub dir: TempDir,
    pub store: Store,
}

impl Staged {
    pub fn new(w: &Workload) -> Self {
        let dir = tempfile::tempdir().unwrap();
        w.materialize(dir.path());
        let cfg = load_config(dir.path().join("config.toml")).unwrap();
        let store = Store::open(dir.path().join("data"), Arc::new(cfg)).unwrap();
        Staged { dir, store }
    }

    /// Runs every batch with options chosen per batch index.
    pub fn run_all(&self, w: &Workload, opts: impl Fn(usize) -> RunOptions) -> Vec<BatchReport> {
        w.dates()
            .into_iter()
            .enumerate()
            .map(|(i, date)| {
                run_batch(&self.store, date, &opts(i))
                    .unwrap_or_else(|e| panic!("workload {} batch {date}: {e}", w.seed))
            })
            .collect()
    }
}
