//! One check per acceptance criterion, each reported on its own line.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::*;
use etl_core::dds::extract_dimension;
use etl_core::extract::ingest_change_feed;
use etl_core::keys::validate_keys_table;
use etl_core::load::{load_table, FailPoint};
use etl_core::model::{OpCode, Sk, TxType};
use etl_core::oracle::{compare_states, replay_naive};
use etl_core::orchestrator::{rerun_batch, run_batch, RunOptions};
use etl_core::storage::verify::StoreViolation;
use etl_core::transform::transform_table;
use etl_core::Store;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Check = Result<(), String>;
type Criterion = (&'static str, fn(&mut Audit) -> Check);

/// Collects store violations seen by every check.
#[derive(Default)]
struct Audit {
    stores: usize,
    found: Vec<StoreViolation>,
}

impl Audit {
    fn check(&mut self, store: &Store) {
        self.stores += 1;
        self.found.extend(violations(store));
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Check {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

const EXAMPLE_TARGETS: [&str; 3] = ["RefA", "RefB", "T"];

fn stage_example(ex: &RunningExample) -> Check {
    let date = d(RunningExample::BATCH);
    let e = |e: etl_core::Error| e.to_string();
    ingest_change_feed(&ex.store, "t_src", date).map_err(e)?;
    ex.store.begin_staging(date).map_err(e)?;
    for t in EXAMPLE_TARGETS {
        transform_table(&ex.store, t, date).map_err(e)?;
    }
    for t in EXAMPLE_TARGETS {
        validate_keys_table(&ex.store, t).map_err(e)?;
    }
    Ok(())
}

fn staging_golden(audit: &mut Audit) -> Check {
    let start = Instant::now();
    let ex = RunningExample::open();
    stage_example(&ex)?;
    let elapsed = start.elapsed();
    for t in EXAMPLE_TARGETS {
        let got = read(ex.store.lv2_path(t));
        let want = expected(&format!("ssa2/{t}.csv"));
        ensure(got == want, || format!("ssa2/{t} differs:\n{got}\nexpected:\n{want}"))?;
    }
    audit.check(&ex.store);
    within(elapsed, Duration::from_secs(1))
}

fn loading_golden(audit: &mut Audit) -> Check {
    let ex = RunningExample::open();
    stage_example(&ex)?;
    let date = d(RunningExample::BATCH);
    let start = Instant::now();
    let mut statics = 0;
    for t in EXAMPLE_TARGETS {
        statics += load_table(&ex.store, t, date, None).map_err(|e| e.to_string())?.statics_inserted;
    }
    let elapsed = start.elapsed();
    ensure(statics == 2, || format!("{statics} static rows inserted"))?;
    for t in EXAMPLE_TARGETS {
        for kind in ["static", "history"] {
            let name = format!("{t}_{kind}.csv");
            let got = read(ex.data_dir().join("sor").join(&name));
            let want = expected(&format!("sor/{name}"));
            ensure(got == want, || format!("sor/{name} differs:\n{got}\nexpected:\n{want}"))?;
        }
    }
    audit.check(&ex.store);
    within(elapsed, Duration::from_secs(1))
}

fn workload(seed: u64) -> Workload {
    Workload::generate(seed, &WorkloadParams::default())
}

fn run_or_report(s: &Staged, w: &Workload, opts: impl Fn(usize) -> RunOptions) -> Check {
    for (i, date) in w.dates().into_iter().enumerate() {
        run_batch(&s.store, date, &opts(i)).map_err(|e| format!("workload {} batch {date}: {e}", w.seed))?;
    }
    Ok(())
}

fn oracle_equivalence(audit: &mut Audit) -> Check {
    let start = Instant::now();
    for seed in 0..200 {
        let w = workload(seed);
        let s = Staged::new(&w);
        run_or_report(&s, &w, |_| RunOptions::default())?;
        let oracle = replay_naive(&w.history(), &w.cfg());
        let diffs = compare_states(&s.store.sor_state().unwrap(), &oracle).map_err(|e| e.to_string())?;
        ensure(diffs.is_empty(), || format!("workload {seed}: {} differences, first {:?}", diffs.len(), diffs[0]))?;
        audit.check(&s.store);
    }
    within(start.elapsed(), Duration::from_secs(60))
}

fn order_independence(audit: &mut Audit) -> Check {
    let mut rng = StdRng::seed_from_u64(0x0dde);
    for seed in 1000..1020 {
        let w = workload(seed);
        let base = Staged::new(&w);
        run_or_report(&base, &w, |_| RunOptions::default())?;
        let reference = base.store.sor_state().unwrap();
        audit.check(&base.store);
        for _ in 0..5 {
            let seeds: Vec<u64> = w.dates().iter().map(|_| rng.gen()).collect();
            let s = Staged::new(&w);
            run_or_report(&s, &w, |i| RunOptions {
                order_seed: Some(seeds[i]),
                ..Default::default()
            })?;
            let diffs = compare_states(&s.store.sor_state().unwrap(), &reference).map_err(|e| e.to_string())?;
            ensure(diffs.is_empty(), || format!("workload {seed} orders {seeds:?}: {:?}", diffs[0]))?;
            audit.check(&s.store);
        }
    }
    Ok(())
}

fn rerun_determinism(audit: &mut Audit) -> Check {
    let mut rng = StdRng::seed_from_u64(0x5e1f);
    let targets = ["Region", "Shop", "Sale"];
    for seed in 2000..2020 {
        let w = workload(seed);
        let dates = w.dates();
        let failing = rng.gen_range(0..dates.len());
        let fail = FailPoint {
            target: targets[rng.gen_range(0..targets.len())].to_string(),
            after_records: rng.gen_range(0..3),
        };
        let s = Staged::new(&w);
        for (i, &date) in dates.iter().enumerate() {
            if i == failing {
                let opts = RunOptions {
                    fail_point: Some(fail.clone()),
                    ..Default::default()
                };
                match run_batch(&s.store, date, &opts) {
                    Err(e) if e.root().code() == "InjectedFault" => {}
                    other => return Err(format!("workload {seed}: injected fault did not fire: {other:?}")),
                }
                audit.check(&s.store);
                rerun_batch(&s.store, date, &RunOptions::default()).map_err(|e| e.to_string())?;
            } else {
                run_batch(&s.store, date, &RunOptions::default()).map_err(|e| e.to_string())?;
            }
        }
        let pristine = Staged::new(&w);
        run_or_report(&pristine, &w, |_| RunOptions::default())?;
        let (a, b) = (s.store.sor_state().unwrap(), pristine.store.sor_state().unwrap());
        ensure(a == b, || format!("workload {seed}: rerun state differs from uninterrupted run"))?;
        for t in w.cfg().target_names() {
            ensure(read(s.store.history_path(&t)) == read(pristine.store.history_path(&t)), || {
                format!("workload {seed}: {t} history file differs")
            })?;
        }
        audit.check(&s.store);
    }
    Ok(())
}

fn same_day_dedup(audit: &mut Audit) -> Check {
    let w = Workload::generate(
        3000,
        &WorkloadParams {
            days: 1,
            ..Default::default()
        },
    );
    let s = Staged::new(&w);
    let date = w.dates()[0];
    std::fs::write(
        s.dir.path().join(format!("feeds/{date}/region_src.csv")),
        format!("tx_type,tx_date,code,name,manager\nI,{date},new1,North,Ann\nU,{date},new1,,Bob\n"),
    )
    .unwrap();
    let r = run_batch(&s.store, date, &RunOptions::default()).map_err(|e| e.to_string())?;
    let lv2 = read(s.store.root().join("ssa2/archive").join(date.to_string()).join("Region.csv"));
    let rows: Vec<&str> = lv2.lines().filter(|l| l.contains(",new1,")).collect();
    ensure(rows.len() == 1 && rows[0].starts_with(&format!("{},", OpCode::B.code())), || {
        format!("staged rows for new1: {rows:?}")
    })?;
    let ops = &r.targets["Region"].transform.ops;
    ensure(ops.eb == 0, || format!("{} EB rows", ops.eb))?;
    let state = s.store.sor_state().unwrap();
    let n = state.targets["Region"].statics.iter().filter(|x| x.bk.parts() == ["new1"]).count();
    ensure(n == 1, || format!("{n} static rows for new1"))?;
    audit.check(&s.store);
    Ok(())
}

fn dds_rules(audit: &mut Audit) -> Check {
    let ex = RunningExample::open();
    let date = d(RunningExample::BATCH);
    run_batch(&ex.store, date, &RunOptions::default()).map_err(|e| e.to_string())?;
    let dim = extract_dimension(&ex.store, "T", date, false).map_err(|e| e.to_string())?;
    ensure(!dim.sks.contains(&Sk(4)), || "deleted sk 004 extracted".into())?;
    let refb = extract_dimension(&ex.store, "RefB", date, false).map_err(|e| e.to_string())?;
    ensure(refb.sks.contains(&Sk(613)), || "placeholder 613 missing".into())?;
    audit.check(&ex.store);

    let w = workload(4000);
    let s = Staged::new(&w);
    run_or_report(&s, &w, |_| RunOptions::default())?;
    let state = s.store.sor_state().unwrap();
    let mut rng = StdRng::seed_from_u64(0xdd5);
    let first = d("20231225");
    for _ in 0..100 {
        let (a, b) = (rng.gen_range(0..20), rng.gen_range(0..20));
        let lo = first.add_days(a.min(b)).unwrap();
        let hi = first.add_days(a.max(b)).unwrap();
        for t in w.cfg().target_names() {
            let wide = extract_dimension(&s.store, &t, lo, false).unwrap();
            let narrow = extract_dimension(&s.store, &t, hi, false).unwrap();
            ensure(narrow.rows.iter().all(|r| wide.rows.contains(r)), || {
                format!("{t}: extract since {hi} not within extract since {lo}")
            })?;
            let deleted = wide.sks.iter().any(|sk| {
                state.targets[&t]
                    .statics
                    .iter()
                    .any(|x| x.sk == *sk && x.last_tx_type == Some(TxType::Delete))
            });
            ensure(!deleted, || format!("{t}: deleted entity extracted since {lo}"))?;
        }
    }
    audit.check(&s.store);
    Ok(())
}

#[test]
fn acceptance() {
    let mut audit = Audit::default();
    let checks: [Criterion; 7] = [
        ("1 staging golden", staging_golden),
        ("2 loading golden", loading_golden),
        ("3 oracle equivalence, 200 workloads", oracle_equivalence),
        ("4 job order independence, 20 workloads x 5 orders", order_independence),
        ("6 rerun after injected load failure, 20 workloads", rerun_determinism),
        ("7 same-day insert then update", same_day_dedup),
        ("8 dimension and fact extraction rules", dds_rules),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout().lock();
    let mut report = |name: &str, result: &Check, took: Duration| {
        let status = if result.is_ok() { "PASS" } else { "FAIL" };
        writeln!(out, "{status} criterion {name} ({:.2}s)", took.as_secs_f64()).unwrap();
        if let Err(msg) = result {
            writeln!(out, "     {msg}").unwrap();
        }
    };
    for (name, check) in checks {
        let start = Instant::now();
        let result = check(&mut audit);
        report(name, &result, start.elapsed());
        if result.is_err() {
            failed.push(name);
        }
    }
    let verified = ensure(audit.found.is_empty(), || {
        format!("{} violations, first {}", audit.found.len(), audit.found[0])
    });
    report(
        &format!("5 store invariants after every check, {} stores", audit.stores),
        &verified,
        Duration::ZERO,
    );
    if verified.is_err() {
        failed.push("5");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
