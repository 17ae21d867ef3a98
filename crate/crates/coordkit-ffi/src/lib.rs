//! C ABI for the coordination toolkit.
//!
//! Scenarios are opaque handles created by `ck_scenario_load` /
//! `ck_scenario_load_json` and released with `ck_scenario_free`. Every
//! fallible call returns a [`CkStatus`]; on failure a human-readable
//! message is available from `ck_last_error` until the next call on the
//! same thread. The generated header lives in `include/coordkit.h`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::path::Path;

use coordkit::feasibility::{assemble, feasibility_report, Feasibility, RANK_TOL};
use coordkit::output::{build_report, log_to_csv, write_report};
use coordkit::scenario::{
    builtin_scenarios, load_scenario, load_scenario_str, split_constraints, Scenario,
};
use coordkit::sim::{monitor, prepare_initial_state, run, Pipeline};
use coordkit::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CkStatus {
    /// Success.
    CkOk = 0,
    /// A pointer argument was null or not valid UTF-8.
    CkInvalidArgument = 1,
    /// The scenario could not be loaded (unknown name, schema or parse
    /// error, infeasible initial state).
    CkScenarioError = 2,
    /// The rank test declared the coordination task infeasible.
    CkInfeasible = 3,
    /// The simulation aborted (infeasible system or no admissible
    /// virtual input at some time).
    CkRuntimeError = 4,
    /// Writing an output file failed.
    CkIoError = 5,
}

/// An opaque, validated scenario.
pub struct CkScenario {
    inner: Scenario,
}

/// Feasibility verdict with the ranks behind it.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CkFeasibility {
    /// 1 when rank(Omega) = rank([Omega | T]).
    pub feasible: c_int,
    pub rank_omega: usize,
    pub rank_augmented: usize,
    /// Null-space dimension (count of virtual inputs).
    pub kappa: usize,
}

/// Summary statistics of a finished run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CkRunStats {
    pub samples: usize,
    /// Constraint-row samples above the tolerance.
    pub violations: usize,
    pub cone_failures: usize,
    pub max_eq_residual: f64,
    /// 1 when the run finished with no violations.
    pub clean: c_int,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let cstring = CString::new(msg).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = cstring);
}

fn status_of(e: &Error) -> CkStatus {
    match e {
        Error::Io(_) => CkStatus::CkIoError,
        Error::AtTime { .. } | Error::InfeasibleSystem { .. } | Error::NoFeasibleVirtualInput => {
            CkStatus::CkRuntimeError
        }
        _ => CkStatus::CkScenarioError,
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ck_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ck_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Newline-separated builtin scenario names; free with `ck_string_free`.
#[no_mangle]
pub extern "C" fn ck_builtin_scenarios() -> *mut c_char {
    let joined = builtin_scenarios().join("\n");
    CString::new(joined).unwrap().into_raw()
}

/// Free a string returned by this library.
///
/// # Safety
/// `s` must be a pointer previously returned by `ck_builtin_scenarios`
/// (or null), not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ck_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, CkStatus> {
    if ptr.is_null() {
        set_error("null pointer argument");
        return Err(CkStatus::CkInvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        CkStatus::CkInvalidArgument
    })
}

fn emit(out: *mut *mut CkScenario, scenario: Scenario) -> CkStatus {
    let boxed = Box::new(CkScenario { inner: scenario });
    unsafe { *out = Box::into_raw(boxed) };
    CkStatus::CkOk
}

/// Load a builtin scenario by name, or a scenario JSON file by path.
///
/// # Safety
/// `name_or_path` must be a valid NUL-terminated string; `out` must be a
/// valid, writable pointer. On success `*out` owns the scenario and must
/// be released with `ck_scenario_free`.
#[no_mangle]
pub unsafe extern "C" fn ck_scenario_load(
    name_or_path: *const c_char,
    out: *mut *mut CkScenario,
) -> CkStatus {
    if out.is_null() {
        set_error("null output pointer");
        return CkStatus::CkInvalidArgument;
    }
    let name = match read_str(name_or_path) {
        Ok(s) => s,
        Err(status) => return status,
    };
    match load_scenario(name) {
        Ok(s) => emit(out, s),
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Parse and validate a scenario from JSON text.
///
/// # Safety
/// As [`ck_scenario_load`].
#[no_mangle]
pub unsafe extern "C" fn ck_scenario_load_json(
    json: *const c_char,
    out: *mut *mut CkScenario,
) -> CkStatus {
    if out.is_null() {
        set_error("null output pointer");
        return CkStatus::CkInvalidArgument;
    }
    let text = match read_str(json) {
        Ok(s) => s,
        Err(status) => return status,
    };
    match load_scenario_str(text, "scenario") {
        Ok(s) => emit(out, s),
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Release a scenario handle.
///
/// # Safety
/// `scenario` must come from `ck_scenario_load`/`ck_scenario_load_json`
/// and not have been freed already; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ck_scenario_free(scenario: *mut CkScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Decide coordination feasibility at the scenario's initial state and
/// report the ranks and null-space dimension.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be valid and writable.
#[no_mangle]
pub unsafe extern "C" fn ck_check(
    scenario: *const CkScenario,
    out: *mut CkFeasibility,
) -> CkStatus {
    if scenario.is_null() || out.is_null() {
        set_error("null pointer argument");
        return CkStatus::CkInvalidArgument;
    }
    let s = &(*scenario).inner;
    let pipeline = Pipeline {
        models: &s.models,
        constraints: &s.constraints,
        policy: &s.policy,
        mode: &s.mode,
    };
    let state = match prepare_initial_state(&pipeline, &s.initial, &s.sim) {
        Ok(state) => state,
        Err(e) => {
            set_error(e.to_string());
            return status_of(&e);
        }
    };
    let (equality, inequality) = split_constraints(s);
    let stack = match assemble(&s.models, &equality, &inequality, &state, 0.0, s.sim.eps_act) {
        Ok(stack) => stack,
        Err(e) => {
            set_error(e.to_string());
            return status_of(&e);
        }
    };
    let report = feasibility_report(&stack, RANK_TOL);
    *out = CkFeasibility {
        feasible: (report.verdict == Feasibility::Feasible) as c_int,
        rank_omega: report.rank_omega,
        rank_augmented: report.rank_augmented,
        kappa: report.kappa,
    };
    match report.verdict {
        Feasibility::Feasible => CkStatus::CkOk,
        Feasibility::Infeasible => {
            set_error("rank test failed: rank(Omega) < rank([Omega | T])");
            CkStatus::CkInfeasible
        }
    }
}

/// Simulate a scenario; optionally write the trajectory CSV and report
/// JSON (pass null paths to skip). `tolerance` is the monitor's violation
/// threshold. Statistics land in `out` even when the run aborts early.
///
/// # Safety
/// `scenario` must be a live handle; `csv_path`/`report_path` must be
/// null or valid NUL-terminated paths; `out` must be valid and writable.
#[no_mangle]
pub unsafe extern "C" fn ck_run(
    scenario: *const CkScenario,
    csv_path: *const c_char,
    report_path: *const c_char,
    tolerance: f64,
    out: *mut CkRunStats,
) -> CkStatus {
    if scenario.is_null() || out.is_null() {
        set_error("null pointer argument");
        return CkStatus::CkInvalidArgument;
    }
    let s = &(*scenario).inner;
    let pipeline = Pipeline {
        models: &s.models,
        constraints: &s.constraints,
        policy: &s.policy,
        mode: &s.mode,
    };
    let outcome = run(&pipeline, &s.initial, &s.sim);
    let violation_report = monitor(&outcome.log, tolerance);
    let violations: usize = violation_report.rows.iter().map(|r| r.violations).sum();
    let max_eq_residual = outcome
        .log
        .samples
        .iter()
        .map(|r| r.eq_residual)
        .fold(0.0f64, f64::max);
    *out = CkRunStats {
        samples: outcome.log.samples.len(),
        violations,
        cone_failures: violation_report.cone_failures,
        max_eq_residual,
        clean: (outcome.error.is_none() && violation_report.is_clean()) as c_int,
    };

    if !csv_path.is_null() {
        let path = match read_str(csv_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        if let Err(e) = std::fs::write(Path::new(path), log_to_csv(s, &outcome.log)) {
            set_error(e.to_string());
            return CkStatus::CkIoError;
        }
    }
    if !report_path.is_null() {
        let path = match read_str(report_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let report = build_report(s, &outcome.log, &violation_report, None, outcome.error.as_ref());
        if let Err(e) = write_report(Path::new(path), &report) {
            set_error(e.to_string());
            return CkStatus::CkIoError;
        }
    }

    match outcome.error {
        Some(e) => {
            set_error(e.to_string());
            CkStatus::CkRuntimeError
        }
        None => CkStatus::CkOk,
    }
}

/// Number of samples a run of this scenario will produce.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ck_scenario_sample_count(scenario: *const CkScenario) -> usize {
    if scenario.is_null() {
        return 0;
    }
    let s = &(*scenario).inner;
    (s.sim.duration / s.sim.h).floor() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn cstr(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    #[test]
    fn load_check_run_roundtrip() {
        unsafe {
            let mut handle: *mut CkScenario = ptr::null_mut();
            let status = ck_scenario_load(cstr("two_unicycles_distance").as_ptr(), &mut handle);
            assert_eq!(status, CkStatus::CkOk);
            assert!(!handle.is_null());

            let mut feas = CkFeasibility {
                feasible: 0,
                rank_omega: 0,
                rank_augmented: 0,
                kappa: 0,
            };
            assert_eq!(ck_check(handle, &mut feas), CkStatus::CkOk);
            assert_eq!(feas.feasible, 1);
            assert_eq!(feas.kappa, 3);

            let dir = tempfile::tempdir().unwrap();
            let csv = cstr(dir.path().join("t.csv").to_str().unwrap());
            let mut stats = CkRunStats {
                samples: 0,
                violations: 0,
                cone_failures: 0,
                max_eq_residual: 0.0,
                clean: 0,
            };
            assert_eq!(
                ck_run(handle, csv.as_ptr(), ptr::null(), 1e-3, &mut stats),
                CkStatus::CkOk
            );
            assert_eq!(stats.clean, 1);
            assert_eq!(stats.samples, ck_scenario_sample_count(handle));
            assert!(dir.path().join("t.csv").exists());

            ck_scenario_free(handle);
        }
    }

    #[test]
    fn error_paths_report_messages() {
        unsafe {
            let mut handle: *mut CkScenario = ptr::null_mut();
            let status = ck_scenario_load(cstr("nope").as_ptr(), &mut handle);
            assert_eq!(status, CkStatus::CkScenarioError);
            let msg = CStr::from_ptr(ck_last_error()).to_str().unwrap();
            assert!(msg.contains("nope"), "{msg}");

            let status = ck_scenario_load(ptr::null(), &mut handle);
            assert_eq!(status, CkStatus::CkInvalidArgument);

            let bad_json = cstr(r#"{"vehicles": []}"#);
            let status = ck_scenario_load_json(bad_json.as_ptr(), &mut handle);
            assert_eq!(status, CkStatus::CkScenarioError);
        }
    }

    #[test]
    fn infeasible_scenario_reports_ranks() {
        unsafe {
            let json = cstr(
                r#"{
                "vehicles": [{"kind": "unicycle", "initial": [0, 0, 0]}],
                "constraints": [
                    {"id": "r1", "family": "velocity_track", "vehicle": 0,
                     "params": {"v_r": 1.0, "u_r": 0.0}},
                    {"id": "r2", "family": "velocity_track", "vehicle": 0,
                     "params": {"v_r": 2.0, "u_r": 0.0}}
                ]
            }"#,
            );
            let mut handle: *mut CkScenario = ptr::null_mut();
            assert_eq!(
                ck_scenario_load_json(json.as_ptr(), &mut handle),
                CkStatus::CkOk
            );
            let mut feas = CkFeasibility {
                feasible: 0,
                rank_omega: 0,
                rank_augmented: 0,
                kappa: 0,
            };
            assert_eq!(ck_check(handle, &mut feas), CkStatus::CkInfeasible);
            assert_eq!(feas.feasible, 0);
            assert!(feas.rank_augmented > feas.rank_omega);
            ck_scenario_free(handle);
        }
    }

    #[test]
    fn builtin_list_and_version() {
        unsafe {
            let list = ck_builtin_scenarios();
            let text = CStr::from_ptr(list).to_str().unwrap().to_string();
            assert_eq!(text.lines().count(), 6);
            ck_string_free(list);
            let version = CStr::from_ptr(ck_version()).to_str().unwrap();
            assert!(!version.is_empty());
        }
    }
}
