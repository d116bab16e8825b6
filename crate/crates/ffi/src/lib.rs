//! C ABI over the online calibrator and the backtest statistics.
//!
//! Every function returns an [`RwcStatus`]. On failure the message is kept
//! per thread and can be read with [`rwc_last_error_message`]. Calibrators are
//! opaque handles created by [`rwc_calibrator_new`] and released with
//! [`rwc_calibrator_free`]; a handle must not be used from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rwc_core::calibrators::{compute_score, Issued, OnlineCalibrator, Step};
use rwc_core::data::{Method, RunConfig};
use rwc_core::evaluation::{christoffersen, kupiec_uc};
use rwc_core::wquantile::{conformal_pvalue, weighted_quantile};
use rwc_core::{Error, ErrorClass};

/// Result code of every call. Values 2-4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RwcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    InvalidConfig = 2,
    DataError = 3,
    NumericError = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RwcMethod {
    Swc = 0,
    Twc = 1,
    Rwc = 2,
    Aci = 3,
}

impl From<RwcMethod> for Method {
    fn from(m: RwcMethod) -> Self {
        match m {
            RwcMethod::Swc => Method::Swc,
            RwcMethod::Twc => Method::Twc,
            RwcMethod::Rwc => Method::Rwc,
            RwcMethod::Aci => Method::Aci,
        }
    }
}

/// Calibrator settings. `h = INFINITY` disables the regime kernel and
/// `n_min = 0` disables the effective-sample-size safeguard.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RwcConfig {
    pub method: RwcMethod,
    pub alpha: f64,
    pub m: usize,
    pub lambda: f64,
    pub h: f64,
    pub n_min: usize,
    pub finite_sample_correction: bool,
    pub aci_gamma: f64,
    pub aci_clip_min: f64,
    pub aci_clip_max: f64,
}

impl From<RwcConfig> for RunConfig {
    fn from(c: RwcConfig) -> Self {
        RunConfig {
            calibrator: c.method.into(),
            alpha: c.alpha,
            m: c.m,
            lambda: c.lambda,
            h: c.h,
            n_min: (c.n_min > 0).then_some(c.n_min),
            finite_sample_correction: c.finite_sample_correction,
            aci_gamma: c.aci_gamma,
            aci_clip: (c.aci_clip_min, c.aci_clip_max),
            ..RunConfig::default()
        }
    }
}

/// An issued bound. `alpha_t` is NaN except for ACI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwcBound {
    pub index: usize,
    pub qhat: f64,
    pub chat: f64,
    pub upper: f64,
    pub n_eff: f64,
    pub tau: f64,
    pub fallback_used: bool,
    pub alpha_t: f64,
    pub n_eff_kernel: f64,
}

impl From<Issued> for RwcBound {
    fn from(i: Issued) -> Self {
        RwcBound {
            index: i.index,
            qhat: i.qhat,
            chat: i.chat,
            upper: i.upper,
            n_eff: i.n_eff,
            tau: i.tau,
            fallback_used: i.fallback_used,
            alpha_t: i.alpha_t.unwrap_or(f64::NAN),
            n_eff_kernel: i.n_eff_kernel,
        }
    }
}

/// A bound together with the realized loss.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwcStep {
    pub bound: RwcBound,
    pub loss: f64,
    pub score: f64,
    pub exceed: bool,
}

impl From<Step> for RwcStep {
    fn from(s: Step) -> Self {
        RwcStep {
            bound: s.issued.into(),
            loss: s.loss,
            score: s.score,
            exceed: s.exceed,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwcChristoffersen {
    pub n00: usize,
    pub n01: usize,
    pub n10: usize,
    pub n11: usize,
    pub lr_uc: f64,
    pub lr_ind: f64,
    pub p_ind: f64,
    pub lr_cc: f64,
    pub p_cc: f64,
}

/// Opaque calibrator handle.
pub struct RwcCalibrator {
    inner: OnlineCalibrator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RwcStatus {
    match err.class() {
        ErrorClass::Config => RwcStatus::InvalidConfig,
        ErrorClass::Data => RwcStatus::DataError,
        ErrorClass::Numeric => RwcStatus::NumericError,
    }
}

struct Fail(RwcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RwcStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RwcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RwcStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RwcStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn live<'a>(h: *mut RwcCalibrator) -> Result<&'a mut RwcCalibrator, Fail> {
    h.as_mut().ok_or_else(|| null("calibrator"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rwc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn rwc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default settings for `method` at level `alpha = 0.01`.
#[no_mangle]
pub extern "C" fn rwc_config_default(method: RwcMethod) -> RwcConfig {
    let d = RunConfig::default();
    RwcConfig {
        method,
        alpha: d.alpha,
        m: d.m,
        lambda: d.lambda,
        h: d.h,
        n_min: d.n_min.unwrap_or(0),
        finite_sample_correction: d.finite_sample_correction,
        aci_gamma: d.aci_gamma,
        aci_clip_min: d.aci_clip.0,
        aci_clip_max: d.aci_clip.1,
    }
}

/// Creates a calibrator. On success `*out_handle` owns a new handle.
///
/// # Safety
/// `config` must point to a valid `RwcConfig`; `out_handle` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rwc_calibrator_new(config: *const RwcConfig, out_handle: *mut *mut RwcCalibrator) -> RwcStatus {
    guard(|| {
        let cfg = *config.as_ref().ok_or_else(|| null("config"))?;
        let slot = out(out_handle, "out_handle")?;
        let inner = OnlineCalibrator::new(cfg.into())?;
        *slot = Box::into_raw(Box::new(RwcCalibrator { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from `rwc_calibrator_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rwc_calibrator_free(handle: *mut RwcCalibrator) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Adds a historical score `loss - qhat` with regime features `(z0, z1)`
/// without issuing a bound. Indices must increase strictly.
///
/// # Safety
/// `handle` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rwc_calibrator_prime(handle: *mut RwcCalibrator, index: usize, score: f64, z0: f64, z1: f64) -> RwcStatus {
    guard(|| {
        live(handle)?.inner.prime(index, score, [z0, z1])?;
        Ok(())
    })
}

/// Issues the calibrated bound for step `t` from the base forecast `qhat`.
///
/// # Safety
/// `handle` must be a live handle; `out_bound` may be null.
#[no_mangle]
pub unsafe extern "C" fn rwc_calibrator_issue(
    handle: *mut RwcCalibrator,
    t: usize,
    qhat: f64,
    z0: f64,
    z1: f64,
    out_bound: *mut RwcBound,
) -> RwcStatus {
    guard(|| {
        let issued = live(handle)?.inner.issue(t, qhat, [z0, z1])?;
        if let Some(o) = out_bound.as_mut() {
            *o = issued.into();
        }
        Ok(())
    })
}

/// Records the realized loss for the pending bound.
///
/// # Safety
/// `handle` must be a live handle; `out_step` may be null.
#[no_mangle]
pub unsafe extern "C" fn rwc_calibrator_observe(handle: *mut RwcCalibrator, loss: f64, out_step: *mut RwcStep) -> RwcStatus {
    guard(|| {
        let step = live(handle)?.inner.observe(loss)?;
        if let Some(o) = out_step.as_mut() {
            *o = step.into();
        }
        Ok(())
    })
}

/// Number of scores currently in the calibration buffer.
///
/// # Safety
/// `handle` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rwc_calibrator_len(handle: *const RwcCalibrator, out_len: *mut usize) -> RwcStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("calibrator"))?;
        *out(out_len, "out_len")? = h.inner.buffer().len();
        Ok(())
    })
}

/// Nonconformity score `loss - qhat`.
#[no_mangle]
pub extern "C" fn rwc_score(loss: f64, qhat: f64) -> f64 {
    compute_score(loss, qhat)
}

/// Smallest value whose cumulative normalized weight reaches `level`.
///
/// # Safety
/// `values` and `weights` must each hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn rwc_weighted_quantile(
    values: *const f64,
    weights: *const f64,
    len: usize,
    level: f64,
    out_value: *mut f64,
) -> RwcStatus {
    guard(|| {
        let v = slice(values, len, "values")?;
        let w = slice(weights, len, "weights")?;
        *out(out_value, "out_value")? = weighted_quantile(v, w, level)?;
        Ok(())
    })
}

/// Randomized weighted conformal p-value of `s_test` against `scores`.
///
/// # Safety
/// `scores` and `weights` must each hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn rwc_conformal_pvalue(
    scores: *const f64,
    weights: *const f64,
    len: usize,
    s_test: f64,
    w_test: f64,
    u: f64,
    out_p: *mut f64,
) -> RwcStatus {
    guard(|| {
        let s = slice(scores, len, "scores")?;
        let w = slice(weights, len, "weights")?;
        *out(out_p, "out_p")? = conformal_pvalue(s, w, s_test, w_test, u);
        Ok(())
    })
}

/// Kupiec unconditional-coverage statistic and p-value for `x` exceedances in `n`.
///
/// # Safety
/// `out_lr` and `out_p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rwc_kupiec(n: usize, x: usize, alpha: f64, out_lr: *mut f64, out_p: *mut f64) -> RwcStatus {
    guard(|| {
        let lr_slot = out(out_lr, "out_lr")?;
        let p_slot = out(out_p, "out_p")?;
        (*lr_slot, *p_slot) = kupiec_uc(n, x, alpha)?;
        Ok(())
    })
}

/// Christoffersen independence and conditional-coverage tests on 0/1 indicators.
///
/// # Safety
/// `indicators` must hold `len` bytes; nonzero means exceedance.
#[no_mangle]
pub unsafe extern "C" fn rwc_christoffersen(
    indicators: *const u8,
    len: usize,
    alpha: f64,
    out_result: *mut RwcChristoffersen,
) -> RwcStatus {
    guard(|| {
        let ind: Vec<bool> = slice(indicators, len, "indicators")?.iter().map(|b| *b != 0).collect();
        let c = christoffersen(&ind, alpha)?;
        *out(out_result, "out_result")? = RwcChristoffersen {
            n00: c.n00,
            n01: c.n01,
            n10: c.n10,
            n11: c.n11,
            lr_uc: c.lr_uc,
            lr_ind: c.lr_ind,
            p_ind: c.p_ind,
            lr_cc: c.lr_cc,
            p_cc: c.p_cc,
        };
        Ok(())
    })
}
