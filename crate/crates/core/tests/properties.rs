mod common;

use std::collections::BTreeMap;

use common::*;
use etl_core::dds::{extract_dimension, extract_fact};
use etl_core::model::TxType;
use etl_core::oracle::compare_states;
use etl_core::orchestrator::{run_batch, RunOptions};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = WorkloadParams> {
    (4usize..20, 1usize..5, 1usize..12, 0u32..60, 0u32..40, 0u32..50, 0u32..40).prop_map(
        |(entities, days, rows_per_feed, insert_pct, update_pct, early_pct, blank_pct)| WorkloadParams {
            entities,
            days,
            rows_per_feed,
            insert_pct,
            update_pct,
            early_pct,
            blank_pct,
        },
    )
}

fn sizes(s: &etl_core::Store) -> BTreeMap<String, (usize, usize)> {
    s.sor_state()
        .unwrap()
        .targets
        .into_iter()
        .map(|(n, t)| (n, (t.statics.len(), t.history.len())))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn batches_keep_store_consistent(seed in any::<u64>(), p in params()) {
        let w = Workload::generate(seed, &p);
        let s = Staged::new(&w);
        for date in w.dates() {
            let before = sizes(&s.store);
            let r = run_batch(&s.store, date, &RunOptions::default()).unwrap();
            prop_assert!(r.counts_consistent());
            let after = sizes(&s.store);
            for (name, tr) in &r.targets {
                let l = &tr.load;
                prop_assert_eq!(after[name].0 - before[name].0, l.statics_inserted);
                prop_assert_eq!(after[name].1 - before[name].1, l.versions_inserted);
                prop_assert_eq!(l.statics_inserted, l.ops.b + l.ops.a);
                prop_assert_eq!(l.versions_inserted, l.ops.b + l.ops.eb + l.ops.da);
                prop_assert!(l.versions_closed <= l.ops.eb + l.ops.e);
            }
            let v = violations(&s.store);
            prop_assert!(v.is_empty(), "{:?}", v);
        }
    }

    #[test]
    fn job_order_does_not_change_outcome(seed in any::<u64>(), order in any::<u64>(), p in params()) {
        let w = Workload::generate(seed, &p);
        let canonical = Staged::new(&w);
        canonical.run_all(&w, |_| RunOptions::default());
        let shuffled = Staged::new(&w);
        shuffled.run_all(&w, |i| RunOptions { order_seed: Some(order.wrapping_add(i as u64)), ..Default::default() });
        let diffs = compare_states(&shuffled.store.sor_state().unwrap(), &canonical.store.sor_state().unwrap()).unwrap();
        prop_assert!(diffs.is_empty(), "{:?}", diffs);
    }

    #[test]
    fn dimension_extracts_are_monotone_and_skip_deletes(seed in any::<u64>(), a in 0i64..12, b in 0i64..12) {
        let w = Workload::generate(seed, &WorkloadParams { entities: 10, days: 6, rows_per_feed: 8, ..Default::default() });
        let s = Staged::new(&w);
        s.run_all(&w, |_| RunOptions::default());
        let start = d("20231231");
        let (lo, hi) = (start.add_days(a.min(b)).unwrap(), start.add_days(a.max(b)).unwrap());
        let state = s.store.sor_state().unwrap();
        for t in w.cfg().target_names() {
            let wide = extract_dimension(&s.store, &t, lo, false).unwrap();
            let narrow = extract_dimension(&s.store, &t, hi, false).unwrap();
            prop_assert!(narrow.rows.iter().all(|r| wide.rows.contains(r)));
            let ts = &state.targets[&t];
            for sk in &wide.sks {
                let st = ts.statics.iter().find(|x| x.sk == *sk).unwrap();
                prop_assert_ne!(st.last_tx_type, Some(TxType::Delete));
            }
            let scd = extract_dimension(&s.store, &t, lo, true).unwrap();
            prop_assert!(scd.len() >= wide.len());
            let f_wide = extract_fact(&s.store, &t, "BD", lo, false).unwrap();
            let f_narrow = extract_fact(&s.store, &t, "BD", hi, false).unwrap();
            prop_assert!(f_narrow.rows.iter().all(|r| f_wide.rows.contains(r)));
        }
    }
}
