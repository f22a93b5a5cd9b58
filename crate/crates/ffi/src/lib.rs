//! C ABI for loading corpora, training, predicting and evaluating.
//!
//! Every fallible function returns a [`CardcorrStatus`]. On failure the
//! message is kept per thread and read with [`cardcorr_last_error_message`].
//! Handles are opaque and must be released with their `_free` function;
//! strings returned through out-parameters are released with
//! [`cardcorr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cardcorr::artifact::ModelArtifact;
use cardcorr::eval::EvalReport;
use cardcorr::pipeline::{self, EvalSplit, TrainConfig};
use cardcorr::synthgen::{self, GenSpec};
use cardcorr::trace::{GroupMapping, TraceCorpus};
use cardcorr::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CardcorrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    Io = 5,
    VersionMismatch = 6,
    Data = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CardcorrSplit {
    Test = 0,
    Validation = 1,
    All = 2,
}

/// A loaded trace corpus.
pub struct CardcorrCorpus(TraceCorpus);

/// A trained model artifact.
pub struct CardcorrModel(ModelArtifact);

/// An evaluation report; row 0 is always the native estimate.
pub struct CardcorrReport(EvalReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CardcorrStatus {
    match e {
        Error::MalformedPlan { .. } | Error::NumberParse { .. } | Error::Json(_) => CardcorrStatus::Parse,
        Error::Io { .. } => CardcorrStatus::Io,
        Error::VersionMismatch { .. } => CardcorrStatus::VersionMismatch,
        Error::InvalidArgument(_) | Error::KExceedsReference { .. } => CardcorrStatus::InvalidArgument,
        Error::InFile { source, .. } => status_of(source),
        _ => CardcorrStatus::Data,
    }
}

struct Failure(CardcorrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CardcorrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CardcorrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CardcorrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(CardcorrStatus::NullPointer, format!("{name} is null")));
    }
    // SAFETY: the caller passes a nul-terminated string that outlives the call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(CardcorrStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: non-null handles come from this library and are still live.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(CardcorrStatus::NullPointer, format!("{name} is null")))
}

fn out_ptr<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(CardcorrStatus::NullPointer, "output pointer is null".into()));
    }
    Ok(())
}

fn emit<T>(out: *mut *mut T, value: T) {
    // SAFETY: `out` was checked non-null by `out_ptr`.
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

fn emit_string(out: *mut *mut c_char, s: Vec<u8>) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(CardcorrStatus::Data, "output contains a nul byte".into()))?;
    // SAFETY: `out` was checked non-null by `out_ptr`.
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cardcorr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Q-error of one estimate, with both sides floored at 1.
#[no_mangle]
pub extern "C" fn cardcorr_qerror(est: f64, act: f64) -> f64 {
    cardcorr::eval::qerror(est, act)
}

/// Parses a canonical corpus JSON document.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_corpus_from_json(json: *const c_char, out: *mut *mut CardcorrCorpus) -> CardcorrStatus {
    guard(|| {
        out_ptr(out)?;
        let text = unsafe { str_arg(json, "json") }?;
        emit(out, CardcorrCorpus(TraceCorpus::from_json_slice(text.as_bytes())?));
        Ok(())
    })
}

/// Loads a corpus JSON file or an EXPLAIN manifest directory.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_corpus_load(path: *const c_char, out: *mut *mut CardcorrCorpus) -> CardcorrStatus {
    guard(|| {
        out_ptr(out)?;
        let path = unsafe { str_arg(path, "path") }?;
        emit(out, CardcorrCorpus(TraceCorpus::load(path)?));
        Ok(())
    })
}

/// Generates a synthetic corpus with default settings.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_corpus_generate(n_executions: usize, seed: u64, out: *mut *mut CardcorrCorpus) -> CardcorrStatus {
    guard(|| {
        out_ptr(out)?;
        let spec = GenSpec {
            n_executions,
            seed,
            ..GenSpec::default()
        };
        emit(out, CardcorrCorpus(synthgen::generate(&spec)?));
        Ok(())
    })
}

/// Number of executions, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_corpus_len(corpus: *const CardcorrCorpus) -> usize {
    unsafe { corpus.as_ref() }.map_or(0, |c| c.0.traces.len())
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_corpus_free(corpus: *mut CardcorrCorpus) {
    if !corpus.is_null() {
        drop(unsafe { Box::from_raw(corpus) });
    }
}

/// Trains a model. `config_json` holds training settings as JSON (missing
/// keys take defaults) and may be null for all defaults.
///
/// # Safety
/// `corpus` must be a live handle, `config_json` null or nul-terminated,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_model_train(
    corpus: *const CardcorrCorpus,
    config_json: *const c_char,
    out: *mut *mut CardcorrModel,
) -> CardcorrStatus {
    guard(|| {
        out_ptr(out)?;
        let corpus = unsafe { handle(corpus, "corpus") }?;
        let config: TrainConfig = if config_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(unsafe { str_arg(config_json, "config_json") }?).map_err(Error::from)?
        };
        emit(out, CardcorrModel(pipeline::train(&corpus.0, &config, &GroupMapping::default())?));
        Ok(())
    })
}

/// # Safety
/// `path` must be nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_model_load(path: *const c_char, out: *mut *mut CardcorrModel) -> CardcorrStatus {
    guard(|| {
        out_ptr(out)?;
        let path = unsafe { str_arg(path, "path") }?;
        emit(out, CardcorrModel(ModelArtifact::load(path)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_model_save(model: *const CardcorrModel, path: *const c_char) -> CardcorrStatus {
    guard(|| {
        let model = unsafe { handle(model, "model") }?;
        let path = unsafe { str_arg(path, "path") }?;
        model.0.save(path)?;
        Ok(())
    })
}

/// The artifact as JSON; free the string with [`cardcorr_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_model_to_json(model: *const CardcorrModel, out: *mut *mut c_char) -> CardcorrStatus {
    guard(|| {
        out_ptr(out)?;
        let model = unsafe { handle(model, "model") }?;
        emit_string(out, model.0.to_json_bytes()?)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_model_free(model: *mut CardcorrModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Corrects every trace with the model's stored policy and returns the
/// corrected corpus as canonical JSON.
///
/// # Safety
/// `model` and `corpus` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_predict(
    model: *const CardcorrModel,
    corpus: *const CardcorrCorpus,
    out: *mut *mut c_char,
) -> CardcorrStatus {
    guard(|| {
        out_ptr(out)?;
        let model = unsafe { handle(model, "model") }?;
        let corpus = unsafe { handle(corpus, "corpus") }?;
        let traces: Vec<_> = corpus.0.traces.iter().collect();
        let (corrected, _) = pipeline::correct_traces(&model.0, &traces, &model.0.policy, &GroupMapping::default())?;
        let plans = TraceCorpus::new(corrected.iter().map(|c| c.corrected_plan()).collect());
        emit_string(out, plans.to_canonical_json())
    })
}

/// Evaluates native estimates and the model on a split.
///
/// # Safety
/// `model` and `corpus` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_evaluate(
    model: *const CardcorrModel,
    corpus: *const CardcorrCorpus,
    split: CardcorrSplit,
    out: *mut *mut CardcorrReport,
) -> CardcorrStatus {
    guard(|| {
        out_ptr(out)?;
        let model = unsafe { handle(model, "model") }?;
        let corpus = unsafe { handle(corpus, "corpus") }?;
        let split = match split {
            CardcorrSplit::Test => EvalSplit::Test,
            CardcorrSplit::Validation => EvalSplit::Validation,
            CardcorrSplit::All => EvalSplit::All,
        };
        let name = model.0.header.model.to_string();
        let report = pipeline::evaluate_models(&corpus.0, &[(name, &model.0)], split, None, &GroupMapping::default())?;
        emit(out, CardcorrReport(report));
        Ok(())
    })
}

/// Number of rows (native plus models) in the report.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_report_rows(report: *const CardcorrReport) -> usize {
    unsafe { report.as_ref() }.map_or(0, |r| r.0.models.len())
}

/// P90 Q-error of report row `row`.
///
/// # Safety
/// `report` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_report_p90(report: *const CardcorrReport, row: usize, out: *mut f64) -> CardcorrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(CardcorrStatus::NullPointer, "output pointer is null".into()));
        }
        let report = unsafe { handle(report, "report") }?;
        let m = report.0.models.get(row).ok_or_else(|| {
            Failure(
                CardcorrStatus::InvalidArgument,
                format!("row {row} out of range ({} rows)", report.0.models.len()),
            )
        })?;
        unsafe { *out = m.stats.p90 };
        Ok(())
    })
}

/// The full report as JSON; free the string with [`cardcorr_string_free`].
///
/// # Safety
/// `report` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_report_to_json(report: *const CardcorrReport, out: *mut *mut c_char) -> CardcorrStatus {
    guard(|| {
        out_ptr(out)?;
        let report = unsafe { handle(report, "report") }?;
        emit_string(out, serde_json::to_vec_pretty(&report.0).map_err(Error::from)?)
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_report_free(report: *mut CardcorrReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cardcorr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
