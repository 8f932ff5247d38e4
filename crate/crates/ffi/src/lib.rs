//! C ABI for the `wncs` analysis and simulation library.
//!
//! Objects cross the boundary as opaque handles created by `wncs_*_new` /
//! `wncs_*_load` style functions and released with the matching `*_free`.
//! Every fallible function returns a [`WncsStatus`]; the message of the most
//! recent failure on the calling thread is available from
//! [`wncs_last_error_message`]. Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use wncs::config::ConfigFile;
use wncs::markov::{matrix_from_rows, StochasticMatrix};
use wncs::model::build_z_chain;
use wncs::simulator::{monte_carlo, Mode};
use wncs::stability::{certify_with, PlantMargins, StabilityReport, UForm};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WncsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    AnalysisError = 4,
    SimulationError = 5,
    Panic = 6,
}

/// Which matrix `F` is used to assemble `U`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WncsUForm {
    StationaryWeighted = 0,
    TimeReversal = 1,
}

impl From<WncsUForm> for UForm {
    fn from(f: WncsUForm) -> Self {
        match f {
            WncsUForm::StationaryWeighted => UForm::StationaryWeighted,
            WncsUForm::TimeReversal => UForm::TimeReversal,
        }
    }
}

/// Closed-loop mode of a simulation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WncsMode {
    DualBuffer = 0,
    SingleBufferBaseline = 1,
}

/// Parsed configuration file.
pub struct WncsConfig {
    inner: ConfigFile,
}

/// Stability certificate with its supporting matrices.
pub struct WncsReport {
    inner: StabilityReport,
}

/// Headline numbers of a [`WncsReport`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WncsCertificate {
    pub states_total: usize,
    pub states_transient: usize,
    pub states_recurrent: usize,
    pub states_s0: usize,
    pub max_r: f64,
    pub lambda_max_u: f64,
    pub lambda_max_u_time_reversal: f64,
    pub omega_prime: f64,
    pub omega: f64,
    pub omega_time_reversal: f64,
    /// `omega_prime < 1`.
    pub stable_loose: bool,
    /// `omega < 1`.
    pub stable_tight: bool,
}

/// Aggregate of a Monte-Carlo run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WncsSimSummary {
    pub seeds: usize,
    pub failures: usize,
    pub mean_norm: f64,
    pub max_norm: f64,
    pub open_loop_fraction: f64,
    /// Fitted slope of `ln E[Ξ(n)]`; NaN when margins are absent or too few
    /// cycles completed.
    pub xi_decay_rate: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: WncsStatus, msg: impl ToString) -> WncsStatus {
    set_error(msg.to_string());
    status
}

fn guard(f: impl FnOnce() -> WncsStatus) -> WncsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == WncsStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(WncsStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, WncsStatus> {
    if p.is_null() {
        return Err(fail(WncsStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(WncsStatus::InvalidArgument, "string is not UTF-8"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wncs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL,
/// so a caller can size the buffer; `buf` may be null to query only.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn wncs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wncs_config_load(path: *const c_char, out: *mut *mut WncsConfig) -> WncsStatus {
    guard(|| {
        if out.is_null() {
            return fail(WncsStatus::NullPointer, "null output handle");
        }
        *out = ptr::null_mut();
        let path = match c_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ConfigFile::load(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(WncsConfig { inner }));
                WncsStatus::Ok
            }
            Err(e) => fail(WncsStatus::ConfigError, e),
        }
    })
}

/// Parses configuration text; relative paths inside resolve against
/// `base_dir` (null for the current directory).
///
/// # Safety
/// `text` and non-null `base_dir` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wncs_config_parse(
    text: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut WncsConfig,
) -> WncsStatus {
    guard(|| {
        if out.is_null() {
            return fail(WncsStatus::NullPointer, "null output handle");
        }
        *out = ptr::null_mut();
        let text = match c_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let base = if base_dir.is_null() {
            "."
        } else {
            match c_str(base_dir) {
                Ok(b) => b,
                Err(s) => return s,
            }
        };
        match ConfigFile::parse(text, Path::new(base)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(WncsConfig { inner }));
                WncsStatus::Ok
            }
            Err(e) => fail(WncsStatus::ConfigError, e),
        }
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wncs_config_free(cfg: *mut WncsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Replaces the C-A drop probability of the configured network.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn wncs_config_set_gamma_bar(cfg: *mut WncsConfig, gamma_bar: f64) -> WncsStatus {
    guard(|| {
        let Some(cfg) = cfg.as_mut() else {
            return fail(WncsStatus::NullPointer, "null config");
        };
        let Some(net) = cfg.inner.network.as_ref() else {
            return fail(WncsStatus::ConfigError, "configuration has no [network] section");
        };
        match net.with_ca_drop(gamma_bar) {
            Ok(n) => {
                cfg.inner.network = Some(n);
                WncsStatus::Ok
            }
            Err(e) => fail(WncsStatus::InvalidArgument, e),
        }
    })
}

fn store_report(out: *mut *mut WncsReport, r: Result<StabilityReport, String>) -> WncsStatus {
    match r {
        Ok(inner) => {
            // SAFETY: callers checked `out` for null.
            unsafe { *out = Box::into_raw(Box::new(WncsReport { inner })) };
            WncsStatus::Ok
        }
        Err(e) => fail(WncsStatus::AnalysisError, e),
    }
}

/// Builds the chain described by the configuration and certifies it.
///
/// # Safety
/// `cfg` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wncs_analyze(
    cfg: *const WncsConfig,
    form: WncsUForm,
    out: *mut *mut WncsReport,
) -> WncsStatus {
    guard(|| {
        if out.is_null() {
            return fail(WncsStatus::NullPointer, "null output handle");
        }
        *out = ptr::null_mut();
        let Some(cfg) = cfg.as_ref() else {
            return fail(WncsStatus::NullPointer, "null config");
        };
        let cfg = &cfg.inner;
        let margins = match cfg.require_margins() {
            Ok(m) => m,
            Err(e) => return fail(WncsStatus::ConfigError, e),
        };
        let (chain, s0) = if let Some(raw) = &cfg.raw_chain {
            (raw.chain.clone(), raw.s0.clone())
        } else {
            let net = match cfg.require_network() {
                Ok(n) => n,
                Err(e) => return fail(WncsStatus::ConfigError, e),
            };
            if let Err(e) = net.check_analyzable() {
                return fail(WncsStatus::ConfigError, e);
            }
            match build_z_chain(net) {
                Ok(z) => {
                    let (s0, _) = z.split_s0();
                    (z.matrix, s0)
                }
                Err(e) => return fail(WncsStatus::AnalysisError, e),
            }
        };
        store_report(
            out,
            certify_with(&chain, &s0, margins, form.into()).map_err(|e| e.to_string()),
        )
    })
}

/// Certifies a row-major `n × n` stochastic matrix with closed-loop states
/// `s0[0..s0_len]`.
///
/// # Safety
/// `values` must hold `n * n` doubles, `s0` `s0_len` indices; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wncs_certify_matrix(
    values: *const f64,
    n: usize,
    s0: *const usize,
    s0_len: usize,
    rho: f64,
    alpha: f64,
    form: WncsUForm,
    out: *mut *mut WncsReport,
) -> WncsStatus {
    guard(|| {
        if out.is_null() {
            return fail(WncsStatus::NullPointer, "null output handle");
        }
        *out = ptr::null_mut();
        if values.is_null() || (s0.is_null() && s0_len > 0) {
            return fail(WncsStatus::NullPointer, "null matrix or S0 pointer");
        }
        let Some(len) = n.checked_mul(n) else {
            return fail(WncsStatus::InvalidArgument, "matrix dimension overflows");
        };
        let flat = slice::from_raw_parts(values, len);
        let rows: Vec<Vec<f64>> = flat.chunks(n.max(1)).map(<[f64]>::to_vec).collect();
        let s0 = if s0_len == 0 {
            &[][..]
        } else {
            slice::from_raw_parts(s0, s0_len)
        };
        let margins = match PlantMargins::new(rho, alpha) {
            Ok(m) => m,
            Err(e) => return fail(WncsStatus::InvalidArgument, e),
        };
        let labels = (0..n).map(|i| format!("s{i}")).collect();
        let chain = match matrix_from_rows(&rows).and_then(|m| StochasticMatrix::with_labels(labels, m)) {
            Ok(c) => c,
            Err(e) => return fail(WncsStatus::InvalidArgument, e),
        };
        store_report(
            out,
            certify_with(&chain, s0, margins, form.into()).map_err(|e| e.to_string()),
        )
    })
}

/// Fills `out` with the headline numbers of `report`.
///
/// # Safety
/// `report` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wncs_report_certificate(
    report: *const WncsReport,
    out: *mut WncsCertificate,
) -> WncsStatus {
    guard(|| {
        let (Some(r), false) = (report.as_ref(), out.is_null()) else {
            return fail(WncsStatus::NullPointer, "null report or output");
        };
        let r = &r.inner;
        *out = WncsCertificate {
            states_total: r.counts.total,
            states_transient: r.counts.transient,
            states_recurrent: r.counts.recurrent,
            states_s0: r.counts.s0,
            max_r: r.max_r,
            lambda_max_u: r.lambda_max_u,
            lambda_max_u_time_reversal: r.lambda_max_u_time_reversal,
            omega_prime: r.omega_prime,
            omega: r.omega,
            omega_time_reversal: r.omega_time_reversal,
            stable_loose: r.verdict_loose,
            stable_tight: r.verdict_tight,
        };
        WncsStatus::Ok
    })
}

/// Full report as a newly allocated JSON string, released with
/// [`wncs_string_free`]. Returns null on failure.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn wncs_report_to_json(report: *const WncsReport) -> *mut c_char {
    let mut result = ptr::null_mut();
    guard(|| {
        let Some(r) = report.as_ref() else {
            return fail(WncsStatus::NullPointer, "null report");
        };
        match CString::new(r.inner.to_json()) {
            Ok(s) => {
                result = s.into_raw();
                WncsStatus::Ok
            }
            Err(e) => fail(WncsStatus::AnalysisError, e),
        }
    });
    result
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `report` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wncs_report_free(report: *mut WncsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wncs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs seeds `1..=seeds` of the configured simulation in `mode`.
///
/// # Safety
/// `cfg` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wncs_simulate(
    cfg: *const WncsConfig,
    seeds: u64,
    mode: WncsMode,
    out: *mut WncsSimSummary,
) -> WncsStatus {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(WncsStatus::NullPointer, "null config or output");
        };
        if seeds == 0 {
            return fail(WncsStatus::InvalidArgument, "at least one seed is required");
        }
        let sim = match cfg.inner.sim_config(1) {
            Ok(s) => s.with_mode(match mode {
                WncsMode::DualBuffer => Mode::DualBuffer,
                WncsMode::SingleBufferBaseline => Mode::SingleBufferBaseline,
            }),
            Err(e) => return fail(WncsStatus::ConfigError, e),
        };
        let seed_list: Vec<u64> = (1..=seeds).collect();
        match monte_carlo(&sim, &seed_list) {
            Ok(r) => {
                *out = WncsSimSummary {
                    seeds: r.per_seed.len(),
                    failures: r.failures.len(),
                    mean_norm: r.mean_norm,
                    max_norm: r.max_norm,
                    open_loop_fraction: r.open_loop_fraction,
                    xi_decay_rate: r.xi_decay_rate.unwrap_or(f64::NAN),
                };
                WncsStatus::Ok
            }
            Err(e) => fail(WncsStatus::SimulationError, e),
        }
    })
}
