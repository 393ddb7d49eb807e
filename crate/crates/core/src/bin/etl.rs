use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde_json::json;

use etl_core::dds::{extract_dimension, extract_fact};
use etl_core::extract::ingest_change_feed;
use etl_core::keys::validate_keys_table;
use etl_core::load::load_table;
use etl_core::oracle::{compare_states, parse_history, replay_naive};
use etl_core::orchestrator::{rerun_batch, run_batch, RunOptions};
use etl_core::storage::verify::verify;
use etl_core::transform::transform_table;
use etl_core::{load_config, Date, Error, Store};

#[derive(Parser)]
#[command(name = "etl", version, about = "Two-level staging batch ETL")]
struct Cli {
    #[arg(long, global = true, default_value = "etl.toml")]
    config: PathBuf,
    #[arg(long, global = true, default_value = "./etl-data")]
    data_dir: PathBuf,
    #[arg(long, global = true)]
    batch_date: Option<Date>,
    #[arg(long, global = true, default_value_t = 1)]
    parallelism: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, transform, validate and load one batch.
    Run,
    /// Rerun a batch from its level-1 data.
    Rerun,
    /// Ingest feeds into level 1.
    Extract {
        #[arg(long)]
        feed: Option<String>,
    },
    /// Change detection into level 2.
    Transform(TargetArg),
    /// Resolve foreign keys of staged rows.
    ValidateKeys(TargetArg),
    /// Apply staged rows to the SOR.
    Load(TargetArg),
    /// Extract dimension or fact rows into dds/.
    Dds(DdsArgs),
    /// Print a table, e.g. `sor/T_static`, `ssa2/T`, `ssa1/feed` or `meta`.
    Inspect { table: String },
    /// Check every storage invariant.
    Verify,
    /// Replay a transaction history with the reference model.
    Oracle {
        #[arg(long)]
        history: PathBuf,
        /// Compare against the SOR in the data directory.
        #[arg(long)]
        compare: bool,
    },
}

#[derive(Args)]
struct TargetArg {
    #[arg(long)]
    target: Option<String>,
}

#[derive(Args)]
#[group(skip)]
#[command(group = ArgGroup::new("kind").required(true).args(["dimension", "fact"]))]
struct DdsArgs {
    #[arg(long)]
    dimension: Option<String>,
    #[arg(long, requires = "affected_col")]
    fact: Option<String>,
    #[arg(long)]
    affected_col: Option<String>,
    #[arg(long)]
    since: Date,
    #[arg(long)]
    scd: bool,
    #[arg(long)]
    rebuild: bool,
}

fn open(cli: &Cli) -> Result<Store, Error> {
    let cfg = load_config(&cli.config)?;
    Store::open(&cli.data_dir, Arc::new(cfg))
}

fn batch_date(cli: &Cli) -> Result<Date, Error> {
    cli.batch_date
        .ok_or_else(|| Error::BatchOrder("--batch-date is required".into()))
}

fn targets(store: &Store, one: &Option<String>) -> Result<Vec<String>, Error> {
    match one {
        Some(t) => {
            store.config().target(t)?;
            Ok(vec![t.clone()])
        }
        None => Ok(store.config().target_names()),
    }
}

fn table_path(root: &Path, table: &str) -> Option<PathBuf> {
    if table == "meta" {
        return Some(root.join("meta.json"));
    }
    let parts: Vec<&str> = table.split('/').collect();
    let ok = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-');
    match parts.as_slice() {
        [area, name] if ["sor", "ssa1", "ssa2", "dds"].contains(area) && ok(name) => {
            Some(root.join(area).join(format!("{name}.csv")))
        }
        _ => None,
    }
}

fn execute(cli: &Cli) -> Result<i32, Error> {
    let opts = RunOptions {
        parallelism: cli.parallelism.max(1),
        ..Default::default()
    };
    match &cli.command {
        Command::Run => {
            let store = open(cli)?;
            let report = run_batch(&store, batch_date(cli)?, &opts)?;
            println!("{}", report.to_json());
        }
        Command::Rerun => {
            let store = open(cli)?;
            let report = rerun_batch(&store, batch_date(cli)?, &opts)?;
            println!("{}", report.to_json());
        }
        Command::Extract { feed } => {
            let store = open(cli)?;
            let date = batch_date(cli)?;
            let feeds = match feed {
                Some(f) => vec![f.clone()],
                None => store.config().source_feeds.iter().map(|f| f.id.clone()).collect(),
            };
            for f in feeds {
                let s = ingest_change_feed(&store, &f, date)?;
                println!("{}", json!({"feed": f, "stats": s}));
            }
        }
        Command::Transform(t) => {
            let store = open(cli)?;
            let date = batch_date(cli)?;
            store.begin_staging(date)?;
            for name in targets(&store, &t.target)? {
                let s = transform_table(&store, &name, date)?;
                println!("{}", json!({"target": name, "stats": s}));
            }
        }
        Command::ValidateKeys(t) => {
            let store = open(cli)?;
            for name in targets(&store, &t.target)? {
                let s = validate_keys_table(&store, &name)?;
                println!("{}", json!({"target": name, "stats": s}));
            }
        }
        Command::Load(t) => {
            let store = open(cli)?;
            let date = batch_date(cli)?;
            for name in targets(&store, &t.target)? {
                let s = load_table(&store, &name, date, None)?;
                println!("{}", json!({"target": name, "stats": s}));
            }
        }
        Command::Dds(a) => {
            let store = open(cli)?;
            let (name, extract) = match (&a.dimension, &a.fact) {
                (Some(t), _) => (format!("{t}_dimension"), extract_dimension(&store, t, a.since, a.scd)?),
                (None, Some(t)) => {
                    let col = a.affected_col.as_deref().unwrap_or_default();
                    (format!("{t}_fact"), extract_fact(&store, t, col, a.since, a.rebuild)?)
                }
                (None, None) => unreachable!("clap enforces one of --dimension/--fact"),
            };
            let path = store.write_dds(&name, &extract.header, &extract.rows)?;
            println!("{}", json!({"path": path, "rows": extract.len()}));
        }
        Command::Inspect { table } => {
            let path = table_path(&cli.data_dir, table).ok_or_else(|| Error::TableNotFound(table.clone()))?;
            match std::fs::read_to_string(&path) {
                Ok(text) => print!("{text}"),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::TableNotFound(table.clone())),
                Err(e) => return Err(Error::Persistence { path, source: e }),
            }
        }
        Command::Verify => {
            let store = open(cli)?;
            let violations = verify(&store)?;
            println!("{}", json!({"violations": violations}));
            if !violations.is_empty() {
                return Ok(3);
            }
        }
        Command::Oracle { history, compare } => {
            let cfg = load_config(&cli.config)?;
            let text = std::fs::read_to_string(history).map_err(|e| Error::Persistence {
                path: history.clone(),
                source: e,
            })?;
            let replayed = replay_naive(&parse_history(&cfg, &text, &history.display().to_string())?, &cfg);
            if *compare {
                let store = Store::open(&cli.data_dir, Arc::new(cfg))?;
                let diffs = compare_states(&store.sor_state()?, &replayed)?;
                println!("{}", json!({"differences": diffs}));
                if !diffs.is_empty() {
                    return Ok(3);
                }
            } else {
                println!("{}", serde_json::to_string_pretty(&replayed).expect("state serializes"));
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let line = json!({"error": e.root().code(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}
