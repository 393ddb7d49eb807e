//! C interface to the batch engine.
//!
//! A pipeline is an opaque handle opened from a config file and a data
//! directory. Calls return an [`EtlStatus`]; on failure the message is
//! available from [`etl_last_error`] on the same thread. Strings handed out
//! by the library are released with [`etl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use etl_core::orchestrator::{rerun_batch, run_batch, RunOptions};
use etl_core::storage::verify::verify;
use etl_core::{load_config, Date, Error, Store};

/// Result of every call. Values other than `Ok` name the failing error kind.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtlStatus {
    Ok = 0,
    InvalidArgument = 1,
    Panic = 2,
    ConfigParse = 10,
    ValidationError = 11,
    ParseError = 12,
    UnknownFeed = 13,
    UnknownTarget = 14,
    FutureDate = 15,
    TableNotFound = 16,
    StoreCorruption = 17,
    PersistenceError = 18,
    InvariantViolation = 19,
    SnapshotNotFound = 20,
    MissingFkValue = 21,
    HistoryRowNotFound = 22,
    StaticRowNotFound = 23,
    DuplicateStatic = 24,
    UnknownColumn = 25,
    FeedMissing = 26,
    PhaseFailure = 27,
    Lv1Missing = 28,
    BatchOrder = 29,
    InjectedFault = 30,
    TargetSetMismatch = 31,
}

impl From<&Error> for EtlStatus {
    fn from(e: &Error) -> Self {
        match e.root() {
            Error::ConfigParse { .. } => EtlStatus::ConfigParse,
            Error::Validation(_) => EtlStatus::ValidationError,
            Error::Parse { .. } => EtlStatus::ParseError,
            Error::UnknownFeed(_) => EtlStatus::UnknownFeed,
            Error::UnknownTarget(_) => EtlStatus::UnknownTarget,
            Error::FutureDate { .. } => EtlStatus::FutureDate,
            Error::TableNotFound(_) => EtlStatus::TableNotFound,
            Error::StoreCorruption { .. } => EtlStatus::StoreCorruption,
            Error::Persistence { .. } => EtlStatus::PersistenceError,
            Error::InvariantViolation { .. } => EtlStatus::InvariantViolation,
            Error::SnapshotNotFound(_) => EtlStatus::SnapshotNotFound,
            Error::MissingFkValue { .. } => EtlStatus::MissingFkValue,
            Error::HistoryRowNotFound { .. } => EtlStatus::HistoryRowNotFound,
            Error::StaticRowNotFound { .. } => EtlStatus::StaticRowNotFound,
            Error::DuplicateStatic { .. } => EtlStatus::DuplicateStatic,
            Error::UnknownColumn { .. } => EtlStatus::UnknownColumn,
            Error::FeedMissing { .. } => EtlStatus::FeedMissing,
            Error::PhaseFailure { .. } => EtlStatus::PhaseFailure,
            Error::Lv1Missing(_) => EtlStatus::Lv1Missing,
            Error::BatchOrder(_) => EtlStatus::BatchOrder,
            Error::InjectedFault { .. } => EtlStatus::InjectedFault,
            Error::TargetSetMismatch { .. } => EtlStatus::TargetSetMismatch,
        }
    }
}

/// Opaque pipeline handle.
pub struct EtlPipeline {
    store: Store,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(EtlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(EtlStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(EtlStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EtlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EtlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            EtlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not UTF-8")))
}

unsafe fn handle<'a>(p: *mut EtlPipeline) -> Result<&'a EtlPipeline, Failure> {
    p.as_ref().ok_or_else(|| invalid("pipeline is null"))
}

unsafe fn date_arg(p: *const c_char) -> Result<Date, Failure> {
    let s = str_arg(p, "batch_date")?;
    s.parse().map_err(|_| invalid(&format!("bad batch date {s:?}")))
}

fn hand_out(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    if !out.is_null() {
        let s = CString::new(text).map_err(|_| invalid("output contains nul"))?;
        // SAFETY: caller passed a writable location or null.
        unsafe { *out = s.into_raw() };
    }
    Ok(())
}

/// Opens a pipeline. On success `*out` receives a handle owned by the caller.
///
/// # Safety
/// `config_path` and `data_dir` must be valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn etl_pipeline_open(
    config_path: *const c_char,
    data_dir: *const c_char,
    out: *mut *mut EtlPipeline,
) -> EtlStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = ptr::null_mut();
        let cfg = load_config(str_arg(config_path, "config_path")?)?;
        let store = Store::open(str_arg(data_dir, "data_dir")?, Arc::new(cfg))?;
        *out = Box::into_raw(Box::new(EtlPipeline { store }));
        Ok(())
    })
}

fn options(parallelism: u32) -> RunOptions {
    RunOptions {
        parallelism: parallelism.max(1) as usize,
        ..Default::default()
    }
}

/// Runs one batch (`YYYYMMDD`). If `report_json` is not null it receives the
/// batch report, to be freed with `etl_string_free`.
///
/// # Safety
/// `pipeline` must come from `etl_pipeline_open`; `batch_date` must be a
/// valid C string; `report_json` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn etl_pipeline_run(
    pipeline: *mut EtlPipeline,
    batch_date: *const c_char,
    parallelism: u32,
    report_json: *mut *mut c_char,
) -> EtlStatus {
    guard(|| {
        let p = handle(pipeline)?;
        let report = run_batch(&p.store, date_arg(batch_date)?, &options(parallelism))?;
        hand_out(report_json, report.to_json())
    })
}

/// Reruns a batch from its level-1 data.
///
/// # Safety
/// Same contract as `etl_pipeline_run`.
#[no_mangle]
pub unsafe extern "C" fn etl_pipeline_rerun(
    pipeline: *mut EtlPipeline,
    batch_date: *const c_char,
    parallelism: u32,
    report_json: *mut *mut c_char,
) -> EtlStatus {
    guard(|| {
        let p = handle(pipeline)?;
        let report = rerun_batch(&p.store, date_arg(batch_date)?, &options(parallelism))?;
        hand_out(report_json, report.to_json())
    })
}

/// Checks every storage invariant. `*count` receives the number of
/// violations; `violations_json`, if not null, their JSON list.
///
/// # Safety
/// `pipeline` must come from `etl_pipeline_open`; `count` must be writable;
/// `violations_json` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn etl_pipeline_verify(
    pipeline: *mut EtlPipeline,
    count: *mut usize,
    violations_json: *mut *mut c_char,
) -> EtlStatus {
    guard(|| {
        let p = handle(pipeline)?;
        if count.is_null() {
            return Err(invalid("count is null"));
        }
        let v = verify(&p.store)?;
        *count = v.len();
        hand_out(violations_json, serde_json::to_string(&v).expect("violations serialize"))
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn etl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn etl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `pipeline` must be null or a handle from `etl_pipeline_open`, freed once.
#[no_mangle]
pub unsafe extern "C" fn etl_pipeline_free(pipeline: *mut EtlPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}
