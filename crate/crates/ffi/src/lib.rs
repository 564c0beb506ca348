//! C bindings for the autocurriculum simulator.
//!
//! Every fallible call returns an [`AcStatus`]. On failure the message is kept
//! per thread and can be read with [`ac_last_error_message`]. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use autocurriculum::harness::{run_point, ExperimentConfig, RunKind};
use autocurriculum::schedule::{build_weight_table, Ratio, Regime, WeightTable};
use autocurriculum::world::{build_world, ModelId, World, WorldConfig};
use autocurriculum::Error;

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidParameter = 3,
    Capacity = 4,
    Configuration = 5,
    Reconciliation = 6,
    Parse = 7,
    Io = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// A routing weight table.
pub struct AcWeightTable(WeightTable);

/// A synthetic world with its teacher.
pub struct AcWorld(World);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: AcStatus, msg: impl Into<String>) -> AcStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> AcStatus {
    let status = match &e {
        Error::Parameter { .. } => AcStatus::InvalidParameter,
        Error::Capacity(_) => AcStatus::Capacity,
        Error::Configuration { .. } => AcStatus::Configuration,
        Error::Reconciliation(_) => AcStatus::Reconciliation,
        Error::Parse(_) => AcStatus::Parse,
        Error::Io(_) => AcStatus::Io,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> AcStatus) -> AcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(AcStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, AcStatus> {
    if s.is_null() {
        return Err(fail(AcStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(AcStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn regime(err_num: u64, err_den: u64, thr_num: u64, thr_den: u64) -> Result<Regime, AcStatus> {
    let err_star = Ratio::new(err_num, err_den).map_err(from_error)?;
    let threshold = Ratio::new(thr_num, thr_den).map_err(from_error)?;
    Ok(Regime { err_star, threshold })
}

/// Message for the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds the weight table for `k` phases, per-phase error
/// `err_num/err_den` and acceptance threshold `thr_num/thr_den`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ac_weight_table_new(
    k: usize,
    err_num: u64,
    err_den: u64,
    thr_num: u64,
    thr_den: u64,
    out: *mut *mut AcWeightTable,
) -> AcStatus {
    guard(|| {
        if out.is_null() {
            return fail(AcStatus::NullPointer, "null output pointer");
        }
        let regime = match regime(err_num, err_den, thr_num, thr_den) {
            Ok(r) => r,
            Err(s) => return s,
        };
        match build_weight_table(k, regime) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(AcWeightTable(t)));
                AcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `table` must be null or a handle from [`ac_weight_table_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_weight_table_free(table: *mut AcWeightTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Number of phases the table was built for.
///
/// # Safety
/// `table` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ac_weight_table_phases(table: *const AcWeightTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.k)
}

/// Routing weight for phase `j` and rank `r`, with `j < k` and `r <= j`.
///
/// # Safety
/// `table` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_weight_table_alpha(
    table: *const AcWeightTable,
    j: usize,
    r: usize,
    out: *mut f64,
) -> AcStatus {
    guard(|| {
        let (Some(t), false) = (table.as_ref(), out.is_null()) else {
            return fail(AcStatus::NullPointer, "null handle or output pointer");
        };
        match t.0.alpha.get(j).and_then(|row| row.get(r)) {
            Some(&a) => {
                *out = a;
                AcStatus::Ok
            }
            None => fail(AcStatus::OutOfRange, format!("no weight at phase {j}, rank {r}")),
        }
    })
}

/// Largest routing weight in phase `j`.
///
/// # Safety
/// `table` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_weight_table_alpha_max(table: *const AcWeightTable, j: usize, out: *mut f64) -> AcStatus {
    guard(|| {
        let (Some(t), false) = (table.as_ref(), out.is_null()) else {
            return fail(AcStatus::NullPointer, "null handle or output pointer");
        };
        match t.0.alpha_max.get(j) {
            Some(&a) => {
                *out = a;
                AcStatus::Ok
            }
            None => fail(AcStatus::OutOfRange, format!("no phase {j}")),
        }
    })
}

/// Probability that a prompt of rank `r` is accepted in phase `j`.
///
/// # Safety
/// `table` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_weight_table_acceptance(
    table: *const AcWeightTable,
    j: usize,
    r: usize,
    out: *mut f64,
) -> AcStatus {
    guard(|| {
        let (Some(t), false) = (table.as_ref(), out.is_null()) else {
            return fail(AcStatus::NullPointer, "null handle or output pointer");
        };
        match t.0.acceptance_prob(j, r) {
            Ok(p) => {
                *out = p;
                AcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Builds a world from a TOML table with at least `alphabet_size`, `horizon`
/// and `dim`. Other fields take their defaults.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_world_new(toml: *const c_char, out: *mut *mut AcWorld) -> AcStatus {
    guard(|| {
        if out.is_null() {
            return fail(AcStatus::NullPointer, "null output pointer");
        }
        let text = match read_str(toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let config = match WorldConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        match build_world(&config) {
            Ok(w) => {
                *out = Box::into_raw(Box::new(AcWorld(w)));
                AcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `world` must be null or a handle from [`ac_world_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_world_free(world: *mut AcWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Number of prompts in the world.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ac_world_prompt_count(world: *const AcWorld) -> usize {
    world.as_ref().map_or(0, |w| w.0.prompt_count())
}

/// Bit key of the teacher model.
///
/// # Safety
/// `world` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ac_world_teacher_key(world: *const AcWorld) -> u32 {
    world.as_ref().map_or(0, |w| w.0.teacher_key())
}

/// Probability of prompt `x` under the prompt distribution.
///
/// # Safety
/// `world` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_world_prompt_mass(world: *const AcWorld, x: u32, out: *mut f64) -> AcStatus {
    guard(|| {
        let (Some(w), false) = (world.as_ref(), out.is_null()) else {
            return fail(AcStatus::NullPointer, "null handle or output pointer");
        };
        if x as usize >= w.0.prompt_count() {
            return fail(AcStatus::OutOfRange, format!("prompt {x} out of range"));
        }
        *out = w.0.rho(x);
        AcStatus::Ok
    })
}

/// Teacher trace for prompt `x`. Writes up to `cap` tokens into `buf` and
/// the full trace length into `len`.
///
/// # Safety
/// `world` must be a live handle, `buf` valid for `cap` bytes and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_world_teacher_trace(
    world: *const AcWorld,
    x: u32,
    buf: *mut u8,
    cap: usize,
    len: *mut usize,
) -> AcStatus {
    guard(|| {
        let (Some(w), false, false) = (world.as_ref(), buf.is_null() && cap > 0, len.is_null()) else {
            return fail(AcStatus::NullPointer, "null handle or output pointer");
        };
        if x as usize >= w.0.prompt_count() {
            return fail(AcStatus::OutOfRange, format!("prompt {x} out of range"));
        }
        let trace = w.0.teacher_trace(x);
        *len = trace.0.len();
        let n = trace.0.len().min(cap);
        if n > 0 {
            ptr::copy_nonoverlapping(trace.0.as_ptr(), buf, n);
        }
        AcStatus::Ok
    })
}

/// Exact accuracy of a deterministic model with bit key `key`, summed over
/// the prompt distribution. Fails with `AC_STATUS_CONFIGURATION` for worlds
/// that mix the prefix into every step.
///
/// # Safety
/// `world` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_world_accuracy(world: *const AcWorld, key: u32, out: *mut f64) -> AcStatus {
    guard(|| {
        let (Some(w), false) = (world.as_ref(), out.is_null()) else {
            return fail(AcStatus::NullPointer, "null handle or output pointer");
        };
        let model = ModelId::deterministic(key);
        let Some(classes) = w.0.answer_classes() else {
            return fail(AcStatus::Configuration, "exact accuracy is unavailable for this world");
        };
        let mut acc = 0.0;
        for (x, mass) in classes {
            acc += mass * w.0.analytic_accuracy(&model, x).unwrap_or(0.0);
        }
        *out = acc;
        AcStatus::Ok
    })
}

/// Runs one experiment point. `config` is an experiment TOML document, `kind`
/// one of `det-sft`, `stoch-sft`, `rl`, `baseline-ntp`, `baseline-rlft`. On
/// success `out` receives the JSON run record, to be released with
/// [`ac_string_free`].
///
/// # Safety
/// `config` and `kind` must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_run_experiment(
    config: *const c_char,
    kind: *const c_char,
    seed: u64,
    out: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        if out.is_null() {
            return fail(AcStatus::NullPointer, "null output pointer");
        }
        let run = || -> Result<String, AcStatus> {
            let config = ExperimentConfig::from_toml(read_str(config)?).map_err(from_error)?;
            let kind: RunKind = read_str(kind)?.parse().map_err(from_error)?;
            run_point(&config, kind, seed)
                .and_then(|r| r.to_json())
                .map_err(from_error)
        };
        match run() {
            Ok(json) => {
                *out = CString::new(json).unwrap_or_default().into_raw();
                AcStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
