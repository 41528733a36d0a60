//! C ABI for the ctrends library.
//!
//! All functions return a `ctrends_status` code; results are written through
//! out-pointers. Handles are opaque and must be released with the matching
//! `_free` function. Error details for the last failing call on the current
//! thread are available via `ctrends_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ctrends::detrend::DetMode;
use ctrends::error::CtError;
use ctrends::fdata::{make_basis, project, BasisKind, FunctionalSeries, RawSeries};
use ctrends::gev::VrConfig;
use ctrends::limits::TableStore;
use ctrends::procedures::{
    eig_ratio_estimator, lrs_estimator, sequential_bu, sequential_td, sequential_ud, KRule,
};
use ctrends::runner::{run_eigen, run_test};
use nalgebra::DMatrix;

pub const CTRENDS_OK: c_int = 0;
pub const CTRENDS_ERR_NULL_POINTER: c_int = 1;
pub const CTRENDS_ERR_INVALID_ARGUMENT: c_int = 2;
pub const CTRENDS_ERR_COMPUTATION: c_int = 3;
pub const CTRENDS_ERR_NO_DECISION: c_int = 4;
pub const CTRENDS_ERR_PANIC: c_int = 5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_for(err: &CtError) -> c_int {
    match err {
        CtError::NoDecision { .. } => CTRENDS_ERR_NO_DECISION,
        CtError::Config(_) | CtError::Parameter(_) => CTRENDS_ERR_INVALID_ARGUMENT,
        _ => CTRENDS_ERR_COMPUTATION,
    }
}

fn fail(err: &CtError) -> c_int {
    set_error(&err.to_string());
    code_for(err)
}

/// Opaque handle to a coordinate time series.
pub struct CtSeries(FunctionalSeries);

/// Opaque handle to a critical-value table store.
pub struct CtStore(TableStore);

/// Result of a single hypothesis test.
#[repr(C)]
pub struct CtTestResult {
    pub statistic: c_double,
    pub critical_value: c_double,
    pub p_lower: c_double,
    pub p_upper: c_double,
    /// 1 if the null is rejected at the requested level, else 0.
    pub reject: c_int,
    pub h_l: c_int,
    pub h_r: c_int,
}

fn det_from(det: c_int) -> Option<DetMode> {
    match det {
        0 => Some(DetMode::None),
        1 => Some(DetMode::Intercept),
        2 => Some(DetMode::Trend),
        _ => None,
    }
}

fn guard<F: FnOnce() -> c_int>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            CTRENDS_ERR_PANIC
        }
    }
}

/// Returns the error message for the last failing call on this thread.
/// The pointer is valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ctrends_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a series from a row-major T×p array of coordinates.
#[no_mangle]
pub unsafe extern "C" fn ctrends_series_new(
    values: *const c_double,
    t: usize,
    p: usize,
    out: *mut *mut CtSeries,
) -> c_int {
    guard(|| {
        if values.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CTRENDS_ERR_NULL_POINTER;
        }
        let data = std::slice::from_raw_parts(values, t * p);
        let mat = DMatrix::from_row_slice(t, p, data);
        let series = RawSeries::new(mat, None, None)
            .and_then(|raw| {
                let basis = make_basis(BasisKind::RawCoordinates, p, None)?;
                project(&raw, &basis)
            });
        match series {
            Ok(s) => {
                *out = Box::into_raw(Box::new(CtSeries(s)));
                CTRENDS_OK
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ctrends_series_free(series: *mut CtSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Opens a table store. `dir` may be NULL to use the CTRENDS_TABLE_DIR
/// environment variable (tables are simulated on demand when absent).
#[no_mangle]
pub unsafe extern "C" fn ctrends_store_new(dir: *const c_char, out: *mut *mut CtStore) -> c_int {
    guard(|| {
        if out.is_null() {
            set_error("null pointer argument");
            return CTRENDS_ERR_NULL_POINTER;
        }
        let path = if dir.is_null() {
            None
        } else {
            match CStr::from_ptr(dir).to_str() {
                Ok(s) => Some(PathBuf::from(s)),
                Err(_) => {
                    set_error("table directory is not valid UTF-8");
                    return CTRENDS_ERR_INVALID_ARGUMENT;
                }
            }
        };
        *out = Box::into_raw(Box::new(CtStore(TableStore::new(path).quiet())));
        CTRENDS_OK
    })
}

#[no_mangle]
pub unsafe extern "C" fn ctrends_store_free(store: *mut CtStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

fn config_for(test: c_int, d0: usize, det: DetMode) -> Result<VrConfig, CtError> {
    match test {
        0 => Ok(VrConfig::vr21(d0, det)),
        1 => Ok(VrConfig::vr_d0_right(2, d0, det, true)),
        2 => Ok(VrConfig::vr_d0_right(1, d0, det, true)),
        3 => Ok(VrConfig::inverse(d0, det)),
        _ => Err(CtError::Parameter(format!("unknown test code {test}"))),
    }
}

/// Runs a variance-ratio test. `test`: 0 = VR(2,1), 1 = VR(2,0), 2 = VR(1,0),
/// 3 = inverse VR. `det`: 0 = none, 1 = intercept, 2 = trend. `k` = 0 keeps
/// the default projection rank d0+2.
#[no_mangle]
pub unsafe extern "C" fn ctrends_vr_test(
    series: *const CtSeries,
    store: *const CtStore,
    test: c_int,
    d0: usize,
    k: usize,
    det: c_int,
    alpha: c_double,
    out: *mut CtTestResult,
) -> c_int {
    guard(|| {
        if series.is_null() || store.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CTRENDS_ERR_NULL_POINTER;
        }
        let Some(det) = det_from(det) else {
            set_error("det must be 0 (none), 1 (intercept) or 2 (trend)");
            return CTRENDS_ERR_INVALID_ARGUMENT;
        };
        let mut cfg = match config_for(test, d0, det) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        };
        if k > 0 {
            cfg.k = k;
        }
        match run_test(&(*series).0, &cfg, alpha, &(*store).0) {
            Ok((_, rep)) => {
                *out = CtTestResult {
                    statistic: rep.statistic,
                    critical_value: rep.critical_value_used,
                    p_lower: rep.p_bracket.0,
                    p_upper: rep.p_bracket.1,
                    reject: rep.reject as c_int,
                    h_l: rep.h_l as c_int,
                    h_r: rep.h_r as c_int,
                };
                CTRENDS_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Estimates the number of common stochastic trends. `method`: 0 = top-down
/// sequence of VR(2,1) tests, 1 = bottom-up sequence of inverse VR tests,
/// 2 = combined up-down procedure, 3 = eigenvalue-ratio estimator,
/// 4 = stationary-subspace eigenvalue estimator.
#[no_mangle]
pub unsafe extern "C" fn ctrends_estimate_dim(
    series: *const CtSeries,
    store: *const CtStore,
    method: c_int,
    det: c_int,
    d_max: usize,
    alpha: c_double,
    out: *mut usize,
) -> c_int {
    guard(|| {
        if series.is_null() || store.is_null() || out.is_null() {
            set_error("null pointer argument");
            return CTRENDS_ERR_NULL_POINTER;
        }
        let Some(det) = det_from(det) else {
            set_error("det must be 0 (none), 1 (intercept) or 2 (trend)");
            return CTRENDS_ERR_INVALID_ARGUMENT;
        };
        let s = &(*series).0;
        let st = &(*store).0;
        let p = s.dim();
        let d_max = if d_max == 0 { p.saturating_sub(1).min(8) } else { d_max };
        let rule = KRule::PerStep(2);
        let result = match method {
            0 => sequential_td(s, &VrConfig::vr21(1, det), d_max, rule, alpha, st)
                .map(|r| r.estimate),
            1 => sequential_bu(s, &VrConfig::inverse(0, det), p.saturating_sub(1), rule, alpha, st)
                .map(|r| r.estimate),
            2 => sequential_ud(
                s,
                &VrConfig::inverse(0, det),
                &VrConfig::vr21(1, det),
                5,
                rule,
                alpha,
                st,
            )
            .map(|r| r.estimate),
            3 => {
                let mut cfg = VrConfig::vr21(1, det);
                cfg.k = (d_max + 1).min(p);
                run_eigen(s, &cfg).and_then(|g| eig_ratio_estimator(&g.mu, d_max))
            }
            4 => ctrends::detrend::adjust(s, det)
                .and_then(|adj| {
                    ctrends::extractor::slack_extractor(
                        &adj,
                        (d_max + 1).min(p),
                        false,
                        ctrends::lrcov::KernelKind::TukeyHanning,
                        &ctrends::lrcov::BandwidthSpec::Fixed(0),
                    )
                })
                .and_then(|proj| lrs_estimator(&proj.source_eigenvalues, 1e-4, d_max)),
            _ => Err(CtError::Parameter(format!("unknown method code {method}"))),
        };
        match result {
            Ok(d) => {
                *out = d;
                CTRENDS_OK
            }
            Err(e) => fail(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn walk_data(t: usize, p: usize) -> Vec<f64> {
        // single random walk observed with independent noise, driven by an LCG
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut uniform = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut data = vec![0.0; t * p];
        let mut level = 0.0;
        for i in 0..t {
            level += uniform();
            for j in 0..p {
                data[i * p + j] = level + 0.1 * uniform();
            }
        }
        data
    }

    #[test]
    fn round_trip_test_call() {
        let t = 300;
        let p = 4;
        let data = walk_data(t, p);
        unsafe {
            let mut series = ptr::null_mut();
            assert_eq!(ctrends_series_new(data.as_ptr(), t, p, &mut series), CTRENDS_OK);
            let mut store = ptr::null_mut();
            let dir = CString::new(std::env::temp_dir().join("ctrends-ffi-tables").to_str().unwrap())
                .unwrap();
            assert_eq!(ctrends_store_new(dir.as_ptr(), &mut store), CTRENDS_OK);

            let mut result = std::mem::zeroed::<CtTestResult>();
            let code = ctrends_vr_test(series, store, 0, 1, 0, 1, 0.05, &mut result);
            assert_eq!(code, CTRENDS_OK);
            assert!(result.statistic.is_finite());
            assert!(result.critical_value > 0.0);
            assert!(result.p_lower <= result.p_upper);

            let mut d = usize::MAX;
            assert_eq!(ctrends_estimate_dim(series, store, 3, 1, 3, 0.05, &mut d), CTRENDS_OK);
            assert_eq!(d, 1);

            ctrends_series_free(series);
            ctrends_store_free(store);
        }
    }

    #[test]
    fn null_pointer_and_bad_codes() {
        unsafe {
            let mut out = ptr::null_mut();
            assert_eq!(
                ctrends_series_new(ptr::null(), 10, 2, &mut out),
                CTRENDS_ERR_NULL_POINTER
            );
            let msg = CStr::from_ptr(ctrends_last_error()).to_str().unwrap();
            assert!(msg.contains("null"));

            let data = walk_data(50, 2);
            let mut series = ptr::null_mut();
            assert_eq!(ctrends_series_new(data.as_ptr(), 50, 2, &mut series), CTRENDS_OK);
            let mut store = ptr::null_mut();
            assert_eq!(ctrends_store_new(ptr::null(), &mut store), CTRENDS_OK);

            let mut result = std::mem::zeroed::<CtTestResult>();
            assert_eq!(
                ctrends_vr_test(series, store, 9, 1, 0, 1, 0.05, &mut result),
                CTRENDS_ERR_INVALID_ARGUMENT
            );
            assert_eq!(
                ctrends_vr_test(series, store, 0, 1, 0, 7, 0.05, &mut result),
                CTRENDS_ERR_INVALID_ARGUMENT
            );

            ctrends_series_free(series);
            ctrends_store_free(store);
        }
    }
}
