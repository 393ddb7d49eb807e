//! Batch lifecycle and per-table job scheduling.
//!
//! Each target contributes three jobs: transform, validate (key
//! resolution) and load. Validating `T` must precede loading `T` and every
//! target `T` references, because it may stage placeholders there. Jobs
//! whose table sets overlap are never dispatched together; everything else
//! may run in any order or concurrently.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::date::Date;
use crate::error::{Error, Result};
use crate::extract::{ingest_change_feed, IngestStats};
use crate::keys::{validate_keys_table, KeyStats};
use crate::load::{load_table, FailPoint, LoadStats};
use crate::storage::{BatchOutcome, BatchRecord, Store};
use crate::transform::{transform_table, TransformStats};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub parallelism: usize,
    /// With one worker, picks among ready jobs at random from this seed
    /// instead of the canonical order.
    pub order_seed: Option<u64>,
    pub fail_point: Option<FailPoint>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            parallelism: 1,
            order_seed: None,
            fail_point: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Transform,
    Validate,
    Load,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Transform => "transform",
            Phase::Validate => "validate",
            Phase::Load => "load",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Job {
    pub phase: Phase,
    pub target: String,
}

impl std::fmt::Display for Job {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}({})", self.phase.name(), self.target)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetReport {
    pub rows_ingested: usize,
    pub transform: TransformStats,
    pub keys: KeyStats,
    pub load: LoadStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub batch_date: Date,
    pub outcome: BatchOutcome,
    pub snapshot: String,
    pub feeds: BTreeMap<String, IngestStats>,
    pub targets: BTreeMap<String, TargetReport>,
    /// Seconds from the first job of a phase starting to the last finishing.
    pub phase_seconds: BTreeMap<String, f64>,
    /// Jobs in the order they started.
    pub job_order: Vec<Job>,
}

impl BatchReport {
    /// Every staged row loaded exactly once, placeholders aside.
    pub fn counts_consistent(&self) -> bool {
        self.targets
            .values()
            .all(|t| t.transform.ops == t.load.ops.without_augments())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

struct Plan {
    jobs: Vec<Job>,
    deps: Vec<BTreeSet<usize>>,
    /// Tables each job locks, as ("lv2" | "sor", name).
    tables: Vec<BTreeSet<(&'static str, String)>>,
}

fn plan(store: &Store) -> Plan {
    let cfg = store.config();
    let mut jobs = Vec::new();
    for phase in [Phase::Transform, Phase::Validate, Phase::Load] {
        for t in &cfg.targets {
            jobs.push(Job {
                phase,
                target: t.name.clone(),
            });
        }
    }
    let index = |phase, target: &str| {
        jobs.iter()
            .position(|j| j.phase == phase && j.target == target)
            .expect("job exists")
    };
    let mut deps = vec![BTreeSet::new(); jobs.len()];
    let mut tables = vec![BTreeSet::new(); jobs.len()];
    for t in &cfg.targets {
        let (tr, va, lo) = (
            index(Phase::Transform, &t.name),
            index(Phase::Validate, &t.name),
            index(Phase::Load, &t.name),
        );
        deps[va].insert(tr);
        deps[lo].insert(va);
        tables[tr].insert(("lv2", t.name.clone()));
        tables[tr].insert(("sor", t.name.clone()));
        tables[va].insert(("lv2", t.name.clone()));
        tables[lo].insert(("lv2", t.name.clone()));
        tables[lo].insert(("sor", t.name.clone()));
        for r in t.referenced_targets() {
            deps[index(Phase::Load, r)].insert(va);
            tables[va].insert(("lv2", r.to_string()));
            tables[va].insert(("sor", r.to_string()));
        }
    }
    Plan { jobs, deps, tables }
}

struct Sched {
    done: BTreeSet<usize>,
    running: BTreeSet<usize>,
    failed: Option<Error>,
    rng: Option<StdRng>,
    order: Vec<Job>,
}

impl Plan {
    fn ready(&self, s: &Sched) -> Vec<usize> {
        (0..self.jobs.len())
            .filter(|i| !s.done.contains(i) && !s.running.contains(i))
            .filter(|i| self.deps[*i].is_subset(&s.done))
            .filter(|i| s.running.iter().all(|r| self.tables[*i].is_disjoint(&self.tables[*r])))
            .collect()
    }
}

/// Results collected from jobs.
#[derive(Default)]
struct Outputs {
    targets: BTreeMap<String, TargetReport>,
    spans: BTreeMap<Phase, (Instant, Instant)>,
}

fn run_job(store: &Store, job: &Job, batch_date: Date, opts: &RunOptions, out: &Mutex<Outputs>) -> Result<()> {
    let start = Instant::now();
    let wrap = |e: Error| Error::PhaseFailure {
        phase: job.phase.name().to_string(),
        target: job.target.clone(),
        source: Box::new(e),
    };
    let target = job.target.as_str();
    match job.phase {
        Phase::Transform => {
            let s = transform_table(store, target, batch_date).map_err(wrap)?;
            out.lock().expect("lock").targets.entry(job.target.clone()).or_default().transform = s;
        }
        Phase::Validate => {
            let s = validate_keys_table(store, target).map_err(wrap)?;
            out.lock().expect("lock").targets.entry(job.target.clone()).or_default().keys = s;
        }
        Phase::Load => {
            let s = load_table(store, target, batch_date, opts.fail_point.as_ref()).map_err(wrap)?;
            out.lock().expect("lock").targets.entry(job.target.clone()).or_default().load = s;
        }
    }
    let end = Instant::now();
    let mut o = out.lock().expect("lock");
    let span = o.spans.entry(job.phase).or_insert((start, end));
    span.0 = span.0.min(start);
    span.1 = span.1.max(end);
    Ok(())
}

/// Runs every transform, validate and load job of the batch.
fn run_jobs(store: &Store, batch_date: Date, opts: &RunOptions) -> Result<(Outputs, Vec<Job>)> {
    let plan = plan(store);
    let sched = Mutex::new(Sched {
        done: BTreeSet::new(),
        running: BTreeSet::new(),
        failed: None,
        rng: opts.order_seed.map(StdRng::seed_from_u64),
        order: Vec::new(),
    });
    let wake = Condvar::new();
    let out = Mutex::new(Outputs::default());

    let worker = || {
        let mut s = sched.lock().expect("lock");
        loop {
            if s.failed.is_some() || s.done.len() == plan.jobs.len() {
                return;
            }
            let ready = plan.ready(&s);
            if ready.is_empty() && s.running.is_empty() {
                s.failed = Some(Error::InvariantViolation {
                    table: "schedule".into(),
                    message: "no runnable job".into(),
                });
                wake.notify_all();
                return;
            }
            if ready.is_empty() {
                s = wake.wait(s).expect("lock");
                continue;
            }
            let pick = match s.rng.as_mut() {
                Some(rng) => ready[rng.gen_range(0..ready.len())],
                None => ready[0],
            };
            s.running.insert(pick);
            let job = plan.jobs[pick].clone();
            s.order.push(job.clone());
            drop(s);
            log::debug!("start {job}");
            let result = run_job(store, &job, batch_date, opts, &out);
            s = sched.lock().expect("lock");
            s.running.remove(&pick);
            match result {
                Ok(()) => {
                    s.done.insert(pick);
                }
                Err(e) => {
                    if s.failed.is_none() {
                        s.failed = Some(e);
                    }
                }
            }
            wake.notify_all();
        }
    };

    let workers = opts.parallelism.max(1).min(plan.jobs.len().max(1));
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(worker);
            }
        });
    }
    let s = sched.into_inner().expect("lock");
    match s.failed {
        Some(e) => Err(e),
        None => Ok((out.into_inner().expect("lock"), s.order)),
    }
}

fn check_order(store: &Store, batch_date: Date) -> Result<()> {
    let key = batch_date.to_string();
    for (date, rec) in store.batches() {
        if date == key {
            return Err(Error::BatchOrder(match rec.outcome {
                BatchOutcome::Success => format!("batch {key} already completed"),
                _ => format!("batch {key} did not complete; rerun it"),
            }));
        }
        if rec.outcome != BatchOutcome::Success {
            return Err(Error::BatchOrder(format!("batch {date} did not complete; rerun it first")));
        }
        if date > key {
            return Err(Error::BatchOrder(format!("batch {date} is later than {key}")));
        }
    }
    Ok(())
}

fn finish(
    store: &Store,
    batch_date: Date,
    snapshot: String,
    opts: &RunOptions,
    feeds: BTreeMap<String, IngestStats>,
    mut phase_seconds: BTreeMap<String, f64>,
) -> Result<BatchReport> {
    let result = run_jobs(store, batch_date, opts);
    let (outputs, order) = match result {
        Ok(v) => v,
        Err(e) => {
            log::warn!("batch {batch_date} failed: {e}; restoring {snapshot}");
            store.restore_sor(&snapshot)?;
            // Staged rows hold keys drawn after the snapshot.
            store.reset_staging(batch_date)?;
            store.set_batch_record(
                batch_date,
                BatchRecord {
                    snapshot,
                    outcome: BatchOutcome::Aborted,
                },
            )?;
            return Err(e);
        }
    };
    store.set_batch_record(
        batch_date,
        BatchRecord {
            snapshot: snapshot.clone(),
            outcome: BatchOutcome::Success,
        },
    )?;
    store.prune_snapshots(&[&snapshot])?;

    let cfg = store.config();
    let mut targets = outputs.targets;
    for t in &cfg.targets {
        let r = targets.entry(t.name.clone()).or_default();
        r.rows_ingested = t
            .source_mappings
            .iter()
            .filter_map(|m| feeds.get(&m.feed))
            .map(|f| f.rows_kept)
            .sum();
    }
    for (phase, (a, b)) in outputs.spans {
        phase_seconds.insert(phase.name().to_string(), (b - a).as_secs_f64());
    }
    Ok(BatchReport {
        batch_date,
        outcome: BatchOutcome::Success,
        snapshot,
        feeds,
        targets,
        phase_seconds,
        job_order: order,
    })
}

/// Ingests the batch's feeds and runs it to completion, or restores the SOR
/// to its pre-batch state on failure.
pub fn run_batch(store: &Store, batch_date: Date, opts: &RunOptions) -> Result<BatchReport> {
    check_order(store, batch_date)?;
    let cfg = store.config();
    for f in &cfg.source_feeds {
        let path = cfg.feed_path(f, batch_date);
        if !path.is_file() {
            return Err(Error::FeedMissing {
                feed: f.id.clone(),
                path,
            });
        }
    }
    let snapshot = store.snapshot_sor()?;
    store.set_batch_record(
        batch_date,
        BatchRecord {
            snapshot: snapshot.clone(),
            outcome: BatchOutcome::Running,
        },
    )?;

    let start = Instant::now();
    let mut feeds = BTreeMap::new();
    let ingest = (|| -> Result<()> {
        for f in &cfg.source_feeds {
            let s = ingest_change_feed(store, &f.id, batch_date).map_err(|e| Error::PhaseFailure {
                phase: "extract".into(),
                target: f.id.clone(),
                source: Box::new(e),
            })?;
            feeds.insert(f.id.clone(), s);
        }
        store.reset_staging(batch_date)
    })();
    if let Err(e) = ingest {
        store.set_batch_record(
            batch_date,
            BatchRecord {
                snapshot,
                outcome: BatchOutcome::Aborted,
            },
        )?;
        return Err(e);
    }
    let phases = BTreeMap::from([("extract".to_string(), start.elapsed().as_secs_f64())]);
    finish(store, batch_date, snapshot, opts, feeds, phases)
}

/// Reruns a batch from the level-1 data it left behind, starting from the
/// SOR as it was before the batch.
pub fn rerun_batch(store: &Store, batch_date: Date, opts: &RunOptions) -> Result<BatchReport> {
    if store.lv1_batch() != Some(batch_date) {
        return Err(Error::Lv1Missing(batch_date));
    }
    let rec = store
        .batch_record(batch_date)
        .ok_or_else(|| Error::SnapshotNotFound(format!("batch {batch_date}")))?;
    if !store.snapshot_exists(&rec.snapshot) {
        return Err(Error::SnapshotNotFound(rec.snapshot));
    }
    let key = batch_date.to_string();
    if let Some(later) = store.batches().keys().find(|d| **d > key) {
        return Err(Error::BatchOrder(format!("batch {later} ran after {key}")));
    }
    store.restore_sor(&rec.snapshot)?;
    store.set_batch_record(
        batch_date,
        BatchRecord {
            snapshot: rec.snapshot.clone(),
            outcome: BatchOutcome::Running,
        },
    )?;
    store.reset_staging(batch_date)?;
    let cfg = store.config();
    let mut feeds = BTreeMap::new();
    for f in &cfg.source_feeds {
        let rows = store.read_lv1(f)?.len();
        feeds.insert(
            f.id.clone(),
            IngestStats {
                rows_read: rows,
                rows_kept: rows,
                rows_superseded: 0,
            },
        );
    }
    finish(store, batch_date, rec.snapshot, opts, feeds, BTreeMap::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MappingConfig;
    use std::sync::Arc;

    const CFG: &str = r#"
[[targets]]
name = "Fact"
bk_columns = ["id"]
fk = [{ column = "m", references = "Mid" }]

[[targets]]
name = "Mid"
bk_columns = ["id"]
fk = [{ column = "r", references = "Root" }]

[[targets]]
name = "Root"
bk_columns = ["id"]
"#;

    fn store(dir: &std::path::Path) -> Store {
        let cfg = MappingConfig::from_toml_str(CFG, dir).unwrap();
        Store::open(dir.join("data"), Arc::new(cfg)).unwrap()
    }

    #[test]
    fn plan_respects_reference_order() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let p = plan(&s);
        let at = |phase, t: &str| p.jobs.iter().position(|j| j.phase == phase && j.target == t).unwrap();
        assert!(p.deps[at(Phase::Load, "Mid")].contains(&at(Phase::Validate, "Fact")));
        assert!(p.deps[at(Phase::Load, "Root")].contains(&at(Phase::Validate, "Mid")));
        assert!(!p.deps[at(Phase::Validate, "Fact")].contains(&at(Phase::Transform, "Mid")));
        assert!(!p.tables[at(Phase::Validate, "Fact")].is_disjoint(&p.tables[at(Phase::Transform, "Mid")]));
    }

    #[test]
    fn every_order_is_topological() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        s.reset_staging(Date::from_yyyymmdd(20240101).unwrap()).unwrap();
        let p = plan(&s);
        for seed in 0..20 {
            let opts = RunOptions {
                order_seed: Some(seed),
                ..Default::default()
            };
            let (_, order) = run_jobs(&s, Date::from_yyyymmdd(20240101).unwrap(), &opts).unwrap();
            assert_eq!(order.len(), p.jobs.len());
            let pos = |j: &Job| order.iter().position(|o| o == j).unwrap();
            for (i, deps) in p.deps.iter().enumerate() {
                for d in deps {
                    assert!(pos(&p.jobs[*d]) < pos(&p.jobs[i]), "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn missing_feed_aborts_before_anything() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            "{CFG}\n[[feeds]]\nid = \"f\"\npath = \"in/{{batch_date}}.csv\"\nkey = [\"id\"]\ncolumns = [\"id\"]\n"
        );
        let cfg = MappingConfig::from_toml_str(&text, dir.path()).unwrap();
        let s = Store::open(dir.path().join("data"), Arc::new(cfg)).unwrap();
        let err = run_batch(&s, Date::from_yyyymmdd(20240101).unwrap(), &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::FeedMissing { .. }));
        assert!(s.batches().is_empty());
    }

    #[test]
    fn rerun_without_level1_fails() {
        let dir = tempfile::tempdir().unwrap();
        let s = store(dir.path());
        let err = rerun_batch(&s, Date::from_yyyymmdd(20240101).unwrap(), &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Lv1Missing(_)));
    }
}
