//! File-backed table store for SSA level 1, SSA level 2 and the SOR.
//!
//! Layout under the data directory:
//!
//! ```text
//! meta.json                      sequences, staged batch ids, batch outcomes
//! ssa1/<feed>.csv                level-1 tables, source shaped
//! ssa2/<target>.csv              level-2 tables, warehouse shaped
//! ssa2/archive/<date>/<target>.csv
//! sor/<target>_static.csv
//! sor/<target>_history.csv
//! snapshots/<id>/sor/*.csv       byte copies of sor/
//! snapshots/<id>/sequences.json
//! dds/*.csv
//! ```
//!
//! Tables are cached in memory after first use. Each cached table sits
//! behind its own `RwLock`; jobs lock the tables they touch and call the
//! matching `save_*` before releasing the lock.

mod codec;
mod meta;
mod tables;
pub mod verify;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

pub use meta::{BatchOutcome, BatchRecord};
pub use tables::{Lv2Table, SorTables};

pub use codec::TargetSchema;

use crate::config::{FeedSpec, MappingConfig};
use crate::date::Date;
use crate::error::{Error, Result};
use crate::model::{BusinessKey, Lv1Record, SorState, SorStaticRecord, Sk, StagingRecord, TargetState};
use meta::Meta;

pub type SnapshotId = String;

pub struct Store {
    root: PathBuf,
    cfg: Arc<MappingConfig>,
    meta: Mutex<Meta>,
    lv2: Mutex<HashMap<String, Arc<RwLock<Lv2Table>>>>,
    sor: Mutex<HashMap<String, Arc<RwLock<SorTables>>>>,
}

/// Writes through a temporary file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::persistence(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::persistence(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::persistence(path, e))
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::persistence(path, e)),
    }
}

fn copy_dir_files(from: &Path, to: &Path) -> Result<()> {
    fs::create_dir_all(to).map_err(|e| Error::persistence(to, e))?;
    let entries = match fs::read_dir(from) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::persistence(from, e)),
    };
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::persistence(from, e))?;
        if entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
            names.push(entry.file_name());
        }
    }
    names.sort();
    for name in names {
        let src = from.join(&name);
        let dst = to.join(&name);
        fs::copy(&src, &dst).map_err(|e| Error::persistence(&dst, e))?;
    }
    Ok(())
}

fn remove_dir_files(dir: &Path) -> Result<()> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::persistence(dir, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::persistence(dir, e))?;
        if entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
            fs::remove_file(entry.path()).map_err(|e| Error::persistence(entry.path(), e))?;
        }
    }
    Ok(())
}

impl Store {
    /// Opens (creating if needed) the store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>, cfg: Arc<MappingConfig>) -> Result<Self> {
        let root = root.into();
        for area in ["ssa1", "ssa2", "sor"] {
            let dir = root.join(area);
            fs::create_dir_all(&dir).map_err(|e| Error::persistence(&dir, e))?;
        }
        let meta_path = root.join("meta.json");
        let meta = match read_optional(&meta_path)? {
            Some(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::StoreCorruption {
                table: "meta.json".into(),
                message: e.to_string(),
            })?,
            None => Meta::default(),
        };
        let store = Store {
            root,
            cfg,
            meta: Mutex::new(meta),
            lv2: Mutex::new(HashMap::new()),
            sor: Mutex::new(HashMap::new()),
        };
        store.seed_sequences()?;
        Ok(store)
    }

    /// Starts every unseeded sequence at the configured start, or past any
    /// key already on disk.
    fn seed_sequences(&self) -> Result<()> {
        for t in &self.cfg.targets {
            if self.read_meta(|m| m.sequences.contains_key(&t.name)) {
                continue;
            }
            let floor = self.max_known_sk(&t.name)?.map(|s| s.0 + 1).unwrap_or(1);
            let seed = t.sequence_start.unwrap_or(1).max(floor);
            self.with_meta(|m| {
                m.sequences.insert(t.name.clone(), seed);
            })?;
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &MappingConfig {
        &self.cfg
    }

    pub fn config_arc(&self) -> Arc<MappingConfig> {
        Arc::clone(&self.cfg)
    }

    pub fn lv1_path(&self, feed: &str) -> PathBuf {
        self.root.join("ssa1").join(format!("{feed}.csv"))
    }

    pub fn lv2_path(&self, target: &str) -> PathBuf {
        self.root.join("ssa2").join(format!("{target}.csv"))
    }

    pub fn static_path(&self, target: &str) -> PathBuf {
        self.root.join("sor").join(format!("{target}_static.csv"))
    }

    pub fn history_path(&self, target: &str) -> PathBuf {
        self.root.join("sor").join(format!("{target}_history.csv"))
    }

    fn meta_path(&self) -> PathBuf {
        self.root.join("meta.json")
    }

    pub(crate) fn schema<'a>(&'a self, target: &str) -> Result<TargetSchema<'a>> {
        let t = self
            .cfg
            .target(target)
            .map_err(|_| Error::TableNotFound(target.to_string()))?;
        Ok(TargetSchema::new(t, self.cfg.sk_digits))
    }

    // ---- metadata ----

    fn with_meta<R>(&self, f: impl FnOnce(&mut Meta) -> R) -> Result<R> {
        let mut meta = self.meta.lock().expect("meta lock poisoned");
        let mut next = meta.clone();
        let out = f(&mut next);
        if next != *meta {
            write_atomic(&self.meta_path(), &next.to_json())?;
            *meta = next;
        }
        Ok(out)
    }

    fn read_meta<R>(&self, f: impl FnOnce(&Meta) -> R) -> R {
        f(&self.meta.lock().expect("meta lock poisoned"))
    }

    pub fn lv1_batch(&self) -> Option<Date> {
        self.read_meta(|m| m.lv1_batch)
    }

    pub fn batch_record(&self, date: Date) -> Option<BatchRecord> {
        self.read_meta(|m| m.batches.get(&date.to_string()).cloned())
    }

    pub fn batches(&self) -> BTreeMap<String, BatchRecord> {
        self.read_meta(|m| m.batches.clone())
    }

    pub fn set_batch_record(&self, date: Date, rec: BatchRecord) -> Result<()> {
        self.with_meta(|m| {
            m.batches.insert(date.to_string(), rec);
        })
    }

    /// Current sequence values (next key to hand out) per table.
    pub fn sequences(&self) -> BTreeMap<String, u64> {
        self.read_meta(|m| m.sequences.clone())
    }

    /// Draws the next surrogate key for `target`, persisting the advance
    /// before returning.
    pub fn next_surrogate_key(&self, target: &str) -> Result<Sk> {
        self.with_meta(|m| {
            m.sequences.get_mut(target).map(|next| {
                let out = *next;
                *next += 1;
                Sk(out)
            })
        })?
        .ok_or_else(|| Error::TableNotFound(target.to_string()))
    }

    fn max_known_sk(&self, target: &str) -> Result<Option<Sk>> {
        let sor = self.sor(target)?;
        let lv2 = self.lv2(target)?;
        let a = sor.read().expect("lock").statics().map(|s| s.sk).max();
        let b = lv2.read().expect("lock").iter().map(|r| r.sk).max();
        Ok(a.max(b))
    }

    // ---- level 1 ----

    pub fn write_lv1(&self, feed: &FeedSpec, batch_date: Date, rows: &[Lv1Record]) -> Result<()> {
        let bytes = codec::encode(
            &codec::lv1_header(feed),
            rows.iter().map(|r| codec::lv1_row(feed, r)),
        );
        write_atomic(&self.lv1_path(&feed.id), &bytes)?;
        self.with_meta(|m| m.lv1_batch = Some(batch_date))
    }

    pub fn read_lv1(&self, feed: &FeedSpec) -> Result<Vec<Lv1Record>> {
        let path = self.lv1_path(&feed.id);
        let bytes = read_optional(&path)?
            .ok_or_else(|| Error::TableNotFound(format!("ssa1/{}", feed.id)))?;
        let table = format!("ssa1/{}", feed.id);
        codec::decode(&bytes, &table, &codec::lv1_header(feed))?
            .into_iter()
            .map(|(line, fields)| {
                codec::parse_lv1(feed, &fields).map_err(|message| Error::StoreCorruption {
                    table: format!("{table}:{line}"),
                    message,
                })
            })
            .collect()
    }

    // ---- level 2 ----

    pub fn lv2(&self, target: &str) -> Result<Arc<RwLock<Lv2Table>>> {
        let mut cache = self.lv2.lock().expect("cache lock poisoned");
        if let Some(t) = cache.get(target) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(RwLock::new(self.read_lv2_file(target)?));
        cache.insert(target.to_string(), Arc::clone(&table));
        Ok(table)
    }

    fn read_lv2_file(&self, target: &str) -> Result<Lv2Table> {
        let schema = self.schema(target)?;
        let mut table = Lv2Table::new();
        let name = format!("ssa2/{target}");
        if let Some(bytes) = read_optional(&self.lv2_path(target))? {
            for (line, fields) in codec::decode(&bytes, &name, &schema.lv2_header())? {
                let corrupt = |message| Error::StoreCorruption {
                    table: format!("{name}:{line}"),
                    message,
                };
                let rec = schema.parse_lv2(&fields).map_err(corrupt)?;
                table.insert_new(rec).map_err(corrupt)?;
            }
        }
        Ok(table)
    }

    pub fn encode_lv2(&self, target: &str, table: &Lv2Table) -> Result<Vec<u8>> {
        let schema = self.schema(target)?;
        Ok(codec::encode(
            &schema.lv2_header(),
            table.rows_by_sk().into_iter().map(|r| schema.lv2_row(r)),
        ))
    }

    pub fn save_lv2(&self, target: &str, table: &Lv2Table) -> Result<()> {
        write_atomic(&self.lv2_path(target), &self.encode_lv2(target, table)?)
    }

    pub fn archive_lv2(&self, target: &str, batch_date: Date, table: &Lv2Table) -> Result<()> {
        let path = self
            .root
            .join("ssa2")
            .join("archive")
            .join(batch_date.to_string())
            .join(format!("{target}.csv"));
        write_atomic(&path, &self.encode_lv2(target, table)?)
    }

    pub fn lookup_lv2_by_bk(&self, target: &str, bk: &BusinessKey) -> Result<Option<StagingRecord>> {
        let t = self.lv2(target)?;
        let guard = t.read().expect("lock poisoned");
        Ok(guard.get(bk).cloned())
    }

    /// Inserts or merges one staging row and persists the table.
    pub fn upsert_lv2(&self, target: &str, rec: StagingRecord) -> Result<StagingRecord> {
        let t = self.lv2(target)?;
        let mut guard = t.write().expect("lock poisoned");
        let out = guard.upsert(rec).map_err(|message| Error::InvariantViolation {
            table: format!("ssa2/{target}"),
            message,
        })?;
        self.save_lv2(target, &guard)?;
        Ok(out)
    }

    /// Empties every level-2 table and records the batch they now belong to.
    pub fn reset_staging(&self, batch_date: Date) -> Result<()> {
        for t in &self.cfg.targets {
            let table = self.lv2(&t.name)?;
            let mut g = table.write().expect("lock poisoned");
            g.clear();
            self.save_lv2(&t.name, &g)?;
        }
        self.with_meta(|m| m.lv2_batch = Some(batch_date))
    }

    /// Resets level 2 only if it holds rows of a different batch.
    pub fn begin_staging(&self, batch_date: Date) -> Result<()> {
        if self.read_meta(|m| m.lv2_batch) != Some(batch_date) {
            self.reset_staging(batch_date)?;
        }
        Ok(())
    }

    // ---- SOR ----

    pub fn sor(&self, target: &str) -> Result<Arc<RwLock<SorTables>>> {
        let mut cache = self.sor.lock().expect("cache lock poisoned");
        if let Some(t) = cache.get(target) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(RwLock::new(self.read_sor_files(target)?));
        cache.insert(target.to_string(), Arc::clone(&table));
        Ok(table)
    }

    fn read_sor_files(&self, target: &str) -> Result<SorTables> {
        let schema = self.schema(target)?;
        let mut out = SorTables::new();
        let sname = format!("sor/{target}_static");
        if let Some(bytes) = read_optional(&self.static_path(target))? {
            for (line, fields) in codec::decode(&bytes, &sname, &schema.static_header())? {
                let corrupt = |message| Error::StoreCorruption {
                    table: format!("{sname}:{line}"),
                    message,
                };
                let rec = schema.parse_static(&fields).map_err(corrupt)?;
                out.insert_static(rec).map_err(corrupt)?;
            }
        }
        let hname = format!("sor/{target}_history");
        if let Some(bytes) = read_optional(&self.history_path(target))? {
            for (line, fields) in codec::decode(&bytes, &hname, &schema.history_header())? {
                let corrupt = |message| Error::StoreCorruption {
                    table: format!("{hname}:{line}"),
                    message,
                };
                let rec = schema.parse_history(&fields).map_err(corrupt)?;
                out.insert_history(rec).map_err(corrupt)?;
            }
        }
        Ok(out)
    }

    pub fn save_sor(&self, target: &str, tables: &SorTables) -> Result<()> {
        let schema = self.schema(target)?;
        let statics = codec::encode(
            &schema.static_header(),
            tables.statics().map(|r| schema.static_row(r)),
        );
        let history = codec::encode(
            &schema.history_header(),
            tables.history().map(|r| schema.history_row(r)),
        );
        write_atomic(&self.static_path(target), &statics)?;
        write_atomic(&self.history_path(target), &history)
    }

    pub fn lookup_sor_static_by_bk(
        &self,
        target: &str,
        bk: &BusinessKey,
    ) -> Result<Option<SorStaticRecord>> {
        let t = self.sor(target)?;
        let guard = t.read().expect("lock poisoned");
        Ok(guard.static_by_bk(bk).cloned())
    }

    /// Captures the SOR files and sequence state under a fresh snapshot id.
    pub fn snapshot_sor(&self) -> Result<SnapshotId> {
        // Flush cached tables so the files are current.
        for t in &self.cfg.targets {
            let table = self.sor(&t.name)?;
            let g = table.read().expect("lock poisoned");
            if !self.static_path(&t.name).exists() {
                self.save_sor(&t.name, &g)?;
            }
        }
        let id = self.with_meta(|m| {
            m.snapshot_counter += 1;
            format!("snap-{:06}", m.snapshot_counter)
        })?;
        let dir = self.root.join("snapshots").join(&id);
        copy_dir_files(&self.root.join("sor"), &dir.join("sor"))?;
        let seqs = self.read_meta(|m| serde_json::to_vec_pretty(&m.sequences))
            .expect("sequence map serializes");
        write_atomic(&dir.join("sequences.json"), &seqs)?;
        Ok(id)
    }

    /// Restores the SOR files and sequences captured by `snapshot_sor`.
    ///
    /// Callers must not run jobs concurrently with a restore.
    pub fn restore_sor(&self, id: &str) -> Result<()> {
        let dir = self.root.join("snapshots").join(id);
        let seq_path = dir.join("sequences.json");
        let seqs = read_optional(&seq_path)?.ok_or_else(|| Error::SnapshotNotFound(id.to_string()))?;
        let seqs: BTreeMap<String, u64> =
            serde_json::from_slice(&seqs).map_err(|e| Error::StoreCorruption {
                table: seq_path.display().to_string(),
                message: e.to_string(),
            })?;
        let sor_dir = self.root.join("sor");
        remove_dir_files(&sor_dir)?;
        copy_dir_files(&dir.join("sor"), &sor_dir)?;
        self.with_meta(|m| m.sequences = seqs)?;
        self.reload_sor_cache()
    }

    pub fn snapshot_exists(&self, id: &str) -> bool {
        self.root.join("snapshots").join(id).join("sequences.json").exists()
    }

    /// Deletes every snapshot except `keep`.
    pub fn prune_snapshots(&self, keep: &[&str]) -> Result<()> {
        let dir = self.root.join("snapshots");
        let Ok(entries) = fs::read_dir(&dir) else {
            return Ok(());
        };
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().to_string();
            if !keep.contains(&name.as_str()) {
                fs::remove_dir_all(entry.path()).map_err(|e| Error::persistence(entry.path(), e))?;
            }
        }
        Ok(())
    }

    fn reload_sor_cache(&self) -> Result<()> {
        let cache = self.sor.lock().expect("cache lock poisoned");
        for (name, table) in cache.iter() {
            let fresh = self.read_sor_files(name)?;
            *table.write().expect("lock poisoned") = fresh;
        }
        Ok(())
    }

    /// Drops cached tables so the next access rereads the files.
    pub fn reload(&self) -> Result<()> {
        self.reload_sor_cache()?;
        let cache = self.lv2.lock().expect("cache lock poisoned");
        for (name, table) in cache.iter() {
            let fresh = self.read_lv2_file(name)?;
            *table.write().expect("lock poisoned") = fresh;
        }
        drop(cache);
        let meta = match read_optional(&self.meta_path())? {
            Some(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::StoreCorruption {
                table: "meta.json".into(),
                message: e.to_string(),
            })?,
            None => Meta::default(),
        };
        *self.meta.lock().expect("meta lock poisoned") = meta;
        Ok(())
    }

    /// Copies the whole SOR into memory.
    pub fn sor_state(&self) -> Result<SorState> {
        let mut out = SorState::default();
        for t in &self.cfg.targets {
            let table = self.sor(&t.name)?;
            let g = table.read().expect("lock poisoned");
            out.targets.insert(
                t.name.clone(),
                TargetState {
                    key_refs: t
                        .fk_defs
                        .iter()
                        .map(|f| (f.column.clone(), f.references.clone()))
                        .collect(),
                    statics: g.statics().cloned().collect(),
                    history: g.history().cloned().collect(),
                },
            );
        }
        Ok(out)
    }

    /// Writes an extract to `dds/<name>.csv`.
    pub fn write_dds(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.root.join("dds").join(format!("{name}.csv"));
        write_atomic(&path, &codec::encode(header, rows.iter().cloned()))?;
        Ok(path)
    }

    /// Raw bytes of every file under `sor/`, keyed by file name.
    pub fn sor_bytes(&self) -> Result<BTreeMap<String, Vec<u8>>> {
        let dir = self.root.join("sor");
        let mut out = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::persistence(&dir, e))? {
            let entry = entry.map_err(|e| Error::persistence(&dir, e))?;
            let bytes = fs::read(entry.path()).map_err(|e| Error::persistence(entry.path(), e))?;
            out.insert(entry.file_name().to_string_lossy().to_string(), bytes);
        }
        Ok(out)
    }
}
