//! C ABI over `ztrust-core`.
//!
//! Objects cross the boundary as opaque handles created by `zt_*_new`-style
//! constructors and released with the matching `*_free`. Every fallible call
//! returns a [`ZtStatus`]; on failure a message is available from
//! [`zt_last_error`] on the same thread. Strings returned as `char *` are
//! owned by the caller and must be released with [`zt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ztrust_core::ledger::{ChainValidity, Ledger};
use ztrust_core::sim::metrics::{mean, oscillation};
use ztrust_core::sim::{run_scenario, ScenarioConfig, ScenarioRun};
use ztrust_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZtStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Io = 3,
    Format = 4,
    Argument = 5,
    Shape = 6,
    InvalidUtf8 = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// A parsed, validated scenario configuration.
pub struct ZtScenario {
    config: ScenarioConfig,
}

/// The outcome of running a scenario: metrics, ledger and metadata.
pub struct ZtRun {
    run: ScenarioRun,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: impl Into<Vec<u8>>) {
    let mut bytes = message.into();
    bytes.retain(|&b| b != 0);
    let text = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

fn status_of(e: &Error) -> ZtStatus {
    match e {
        Error::Config { .. } => ZtStatus::Config,
        Error::Io(_) => ZtStatus::Io,
        Error::Format(_) => ZtStatus::Format,
        Error::Argument(_) => ZtStatus::Argument,
        Error::Shape { .. } => ZtStatus::Shape,
    }
}

fn fail(status: ZtStatus, message: impl Into<Vec<u8>>) -> ZtStatus {
    set_last_error(message);
    status
}

/// Runs `body`, converting panics into [`ZtStatus::Panic`] and clearing the
/// last error on success.
fn guard(body: impl FnOnce() -> Result<(), ZtStatus>) -> ZtStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            ZtStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(ZtStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: ztrust_core::Result<T>) -> Result<T, ZtStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, ZtStatus> {
    if ptr.is_null() {
        return Err(fail(ZtStatus::NullPointer, format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(ZtStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn non_null<T>(ptr: *const T, what: &str) -> Result<(), ZtStatus> {
    if ptr.is_null() {
        Err(fail(ZtStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(std::ptr::null_mut(), CString::into_raw)
}

/// Message for the most recent failure on this thread; empty after a
/// successful call. The pointer stays valid until the next call on this
/// thread.
#[no_mangle]
pub extern "C" fn zt_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn zt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML scenario.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn zt_scenario_from_toml(toml: *const c_char, out: *mut *mut ZtScenario) -> ZtStatus {
    guard(|| {
        non_null(out, "out")?;
        let text = unsafe { read_str(toml, "toml") }?;
        let config = lift(ScenarioConfig::from_toml_str(text))?;
        unsafe { *out = Box::into_raw(Box::new(ZtScenario { config })) };
        Ok(())
    })
}

/// Reads and parses a TOML scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn zt_scenario_from_file(path: *const c_char, out: *mut *mut ZtScenario) -> ZtStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = unsafe { read_str(path, "path") }?;
        let config = lift(ScenarioConfig::from_file(Path::new(path)))?;
        unsafe { *out = Box::into_raw(Box::new(ZtScenario { config })) };
        Ok(())
    })
}

/// Replaces the master seed.
///
/// # Safety
/// `scenario` must be a live handle from a `zt_scenario_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn zt_scenario_set_seed(scenario: *mut ZtScenario, seed: u64) -> ZtStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        unsafe { (*scenario).config.master_seed = seed };
        Ok(())
    })
}

/// The scenario as TOML with every default written out.
///
/// # Safety
/// `scenario` must be a live handle; the result is freed with
/// [`zt_string_free`].
#[no_mangle]
pub unsafe extern "C" fn zt_scenario_to_toml(scenario: *const ZtScenario) -> *mut c_char {
    if scenario.is_null() {
        set_last_error("scenario is null");
        return std::ptr::null_mut();
    }
    into_c_string(unsafe { &*scenario }.config.to_toml_string())
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zt_scenario_free(scenario: *mut ZtScenario) {
    if !scenario.is_null() {
        drop(unsafe { Box::from_raw(scenario) });
    }
}

/// Runs every round of `scenario`.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn zt_run(scenario: *const ZtScenario, out: *mut *mut ZtRun) -> ZtStatus {
    guard(|| {
        non_null(scenario, "scenario")?;
        non_null(out, "out")?;
        let run = lift(run_scenario(&unsafe { &*scenario }.config))?;
        unsafe { *out = Box::into_raw(Box::new(ZtRun { run })) };
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zt_run_free(run: *mut ZtRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}

/// Number of completed rounds; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zt_run_rounds(run: *const ZtRun) -> u64 {
    if run.is_null() {
        return 0;
    }
    unsafe { &*run }.run.metrics.len() as u64
}

/// Held-out accuracy and simulated delay of round `round`.
///
/// # Safety
/// `run` must be a live handle; `accuracy` and `delay_s` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn zt_run_round(
    run: *const ZtRun,
    round: u64,
    accuracy: *mut f64,
    delay_s: *mut f64,
    degenerate: *mut bool,
) -> ZtStatus {
    guard(|| {
        non_null(run, "run")?;
        non_null(accuracy, "accuracy")?;
        non_null(delay_s, "delay_s")?;
        non_null(degenerate, "degenerate")?;
        let metrics = &unsafe { &*run }.run.metrics;
        let m = usize::try_from(round)
            .ok()
            .and_then(|i| metrics.get(i))
            .ok_or_else(|| fail(ZtStatus::OutOfRange, format!("round {round} of {}", metrics.len())))?;
        unsafe {
            *accuracy = m.accuracy;
            *delay_s = m.delay_s;
            *degenerate = m.degenerate;
        }
        Ok(())
    })
}

/// Trust of `device` after round `round`.
///
/// # Safety
/// `run` must be a live handle and `trust` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn zt_run_trust(run: *const ZtRun, round: u64, device: u32, trust: *mut f64) -> ZtStatus {
    guard(|| {
        non_null(run, "run")?;
        non_null(trust, "trust")?;
        let metrics = &unsafe { &*run }.run.metrics;
        let value = usize::try_from(round)
            .ok()
            .and_then(|i| metrics.get(i))
            .and_then(|m| m.trust.get(device as usize))
            .ok_or_else(|| {
                fail(
                    ZtStatus::OutOfRange,
                    format!("no trust for round {round}, device {device}"),
                )
            })?;
        unsafe { *trust = *value };
        Ok(())
    })
}

/// Run-level summary: final accuracy, mean delay and oscillation.
///
/// # Safety
/// `run` must be a live handle; the outputs valid pointers.
#[no_mangle]
pub unsafe extern "C" fn zt_run_summary(
    run: *const ZtRun,
    final_accuracy: *mut f64,
    mean_delay_s: *mut f64,
    oscillation_out: *mut f64,
) -> ZtStatus {
    guard(|| {
        non_null(run, "run")?;
        non_null(final_accuracy, "final_accuracy")?;
        non_null(mean_delay_s, "mean_delay_s")?;
        non_null(oscillation_out, "oscillation")?;
        let run = &unsafe { &*run }.run;
        let acc = run.accuracies();
        unsafe {
            *final_accuracy = acc.last().copied().unwrap_or(0.0);
            *mean_delay_s = mean(run.metrics.iter().map(|m| m.delay_s));
            *oscillation_out = oscillation(&acc);
        }
        Ok(())
    })
}

/// The metrics CSV. Free with [`zt_string_free`].
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn zt_run_metrics_csv(run: *const ZtRun) -> *mut c_char {
    if run.is_null() {
        set_last_error("run is null");
        return std::ptr::null_mut();
    }
    into_c_string(unsafe { &*run }.run.metrics_csv())
}

/// The ledger export (JSON lines). Free with [`zt_string_free`].
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn zt_run_ledger_export(run: *const ZtRun) -> *mut c_char {
    if run.is_null() {
        set_last_error("run is null");
        return std::ptr::null_mut();
    }
    into_c_string(unsafe { &*run }.run.ledger.export())
}

/// Writes metrics.csv, ledger.export and metadata.toml into `dir`.
///
/// # Safety
/// `run` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn zt_run_write_artifacts(run: *const ZtRun, dir: *const c_char) -> ZtStatus {
    guard(|| {
        non_null(run, "run")?;
        let dir = unsafe { read_str(dir, "dir") }?;
        lift(unsafe { &*run }.run.write_artifacts(Path::new(dir)))
    })
}

/// Checks an exported ledger. On success `first_bad_index` is -1 for a valid
/// chain, otherwise the index of the first invalid block.
///
/// # Safety
/// `export` must be a NUL-terminated string and `first_bad_index` valid.
#[no_mangle]
pub unsafe extern "C" fn zt_ledger_validate(export: *const c_char, first_bad_index: *mut i64) -> ZtStatus {
    guard(|| {
        non_null(first_bad_index, "first_bad_index")?;
        let text = unsafe { read_str(export, "export") }?;
        let ledger = lift(Ledger::import(text))?;
        let index = match ledger.validate() {
            ChainValidity::Valid => -1,
            ChainValidity::Invalid { first_bad_index } => i64::try_from(first_bad_index).unwrap_or(i64::MAX),
        };
        unsafe { *first_bad_index = index };
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a pointer returned by a `zt_*` function documented as
/// caller-owned, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
