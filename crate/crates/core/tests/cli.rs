mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use serde_json::Value;

fn etl(config: &Path, data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etl"))
        .arg("--config")
        .arg(config)
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> Vec<Value> {
    assert!(
        out.status.success(),
        "status {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn error_code(out: &Output) -> String {
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn step_by_step_commands_reproduce_golden() {
    let ex = RunningExample::open();
    let (cfg, data) = (ex.config_path(), ex.data_dir());
    let b = ["--batch-date", RunningExample::BATCH];
    let s = ok(&etl(&cfg, &data, &[&["extract"][..], &b].concat()));
    assert_eq!(s[0]["stats"]["rows_kept"], 5);
    ok(&etl(&cfg, &data, &[&["transform"][..], &b].concat()));
    let k = ok(&etl(&cfg, &data, &["validate-keys", "--target", "T"]));
    assert_eq!(k[0]["stats"]["from_sor"], 7);
    let shown = etl(&cfg, &data, &["inspect", "ssa2/T"]);
    assert_eq!(String::from_utf8_lossy(&shown.stdout), expected("ssa2/T.csv"));
    ok(&etl(&cfg, &data, &["validate-keys"]));
    ok(&etl(&cfg, &data, &[&["load"][..], &b].concat()));
    for t in ["T", "RefA", "RefB"] {
        for kind in ["static", "history"] {
            let shown = etl(&cfg, &data, &["inspect", &format!("sor/{t}_{kind}")]);
            assert_eq!(String::from_utf8_lossy(&shown.stdout), expected(&format!("sor/{t}_{kind}.csv")));
        }
    }
    let v = ok(&etl(&cfg, &data, &["verify"]));
    assert_eq!(v[0]["violations"].as_array().unwrap().len(), 0);

    let dim = ok(&etl(&cfg, &data, &["dds", "--dimension", "T", "--since", "20141008"]));
    assert_eq!(dim[0]["rows"], 4);
    assert!(data.join("dds/T_dimension.csv").is_file());
    let fact = ok(&etl(&cfg, &data, &["dds", "--fact", "T", "--affected-col", "BD", "--since", "20141008", "--rebuild"]));
    assert_eq!(fact[0]["rows"], 6);
}

#[test]
fn run_and_rerun_report_json() {
    let ex = RunningExample::open();
    let (cfg, data) = (ex.config_path(), ex.data_dir());
    let r = ok(&etl(&cfg, &data, &["--batch-date", RunningExample::BATCH, "--parallelism", "2", "run"]));
    assert_eq!(r[0]["outcome"], "success");
    assert_eq!(r[0]["targets"]["T"]["rows_ingested"], 5);
    let again = etl(&cfg, &data, &["--batch-date", RunningExample::BATCH, "run"]);
    assert_eq!(error_code(&again), "BatchOrder");
    let r = ok(&etl(&cfg, &data, &["--batch-date", RunningExample::BATCH, "rerun"]));
    assert_eq!(r[0]["outcome"], "success");
    let shown = etl(&cfg, &data, &["inspect", "sor/T_history"]);
    assert_eq!(String::from_utf8_lossy(&shown.stdout), expected("sor/T_history.csv"));
}

#[test]
fn errors_exit_with_codes() {
    let ex = RunningExample::open();
    let (cfg, data) = (ex.config_path(), ex.data_dir());
    assert_eq!(error_code(&etl(&cfg, &data, &["--batch-date", "20141009", "run"])), "FeedMissing");
    assert_eq!(error_code(&etl(&cfg, &data, &["inspect", "sor/Nope_static"])), "TableNotFound");
    assert_eq!(error_code(&etl(&cfg, &data, &["inspect", "../etc"])), "TableNotFound");
    assert_eq!(error_code(&etl(&cfg, &data, &["validate-keys", "--target", "Nope"])), "UnknownTarget");
    assert_eq!(
        error_code(&etl(&cfg, &data, &["dds", "--fact", "T", "--affected-col", "Data1", "--since", "20141001"])),
        "UnknownColumn"
    );
    assert_eq!(error_code(&etl(Path::new("/nonexistent.toml"), &data, &["verify"])), "ConfigParse");
    let usage = etl(&cfg, &data, &["dds", "--since", "20141001"]);
    assert_eq!(usage.status.code(), Some(2));
}

#[test]
fn oracle_command_compares_with_store() {
    let w = Workload::generate(11, &WorkloadParams { entities: 10, days: 3, rows_per_feed: 6, ..Default::default() });
    let s = Staged::new(&w);
    s.run_all(&w, |_| Default::default());
    let hist = s.dir.path().join("history.jsonl");
    std::fs::write(&hist, w.history_jsonl()).unwrap();
    let cfg = s.dir.path().join("config.toml");
    let data = s.dir.path().join("data");
    let h = hist.to_str().unwrap();
    let out = ok(&etl(&cfg, &data, &["oracle", "--history", h, "--compare"]));
    assert_eq!(out[0]["differences"].as_array().unwrap().len(), 0);

    // Drop the last day: the store is now ahead of the replayed history.
    let text = w.history_jsonl();
    let last = w.dates().last().unwrap().to_string();
    let partial: String = text.lines().filter(|l| !l.contains(&last)).map(|l| format!("{l}\n")).collect();
    std::fs::write(&hist, partial).unwrap();
    let out = etl(&cfg, &data, &["oracle", "--history", h, "--compare"]);
    assert_eq!(out.status.code(), Some(3));

    let full = etl(&cfg, &data, &["oracle", "--history", h]);
    let state: Value = serde_json::from_slice(&full.stdout).unwrap();
    assert!(state["targets"]["Region"].is_object());
}
