//! C interface to the onevision simulator.
//!
//! Every fallible function returns an [`OvStatus`]; on failure the message
//! is available from [`ov_last_error`] on the same thread until the next
//! call. Handles are opaque and freed with their `_free` function; freeing
//! NULL is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use onevision::optim::{solve_dare, DareOptions};
use onevision::sim::{
    load_config, parse_config, run_simulation, serialize_config, set_config_value, RunConfig,
    RunLog,
};
use onevision::timeline::Tick;
use onevision::Error;

use nalgebra::DMatrix;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    UnknownId = 4,
    Run = 5,
    Io = 6,
    Panic = 7,
}

/// Run configuration handle.
pub struct OvConfig(RunConfig);

/// Finished run handle.
pub struct OvRunLog(RunLog);

/// Summary metrics of a run; fields that do not apply to the task are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvMetrics {
    pub avg_regret: f64,
    pub log_loss: f64,
    pub avg_distance: f64,
    pub avg_deviation: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: OvStatus, msg: &str) -> OvStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> OvStatus {
    let status = match e {
        Error::Config { .. } => OvStatus::Config,
        Error::UnknownId { .. } => OvStatus::UnknownId,
        Error::Io(_) => OvStatus::Io,
        Error::InvalidDelay(_)
        | Error::InexactTicks { .. }
        | Error::InvalidWeights(_)
        | Error::InvalidModel(_) => OvStatus::InvalidArgument,
        _ => OvStatus::Run,
    };
    fail(status, &e.to_string())
}

/// Runs `f`, turning panics into [`OvStatus::Panic`].
fn guard(f: impl FnOnce() -> OvStatus) -> OvStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(OvStatus::Panic, &msg)
        }
    }
}

unsafe fn text_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, OvStatus> {
    if p.is_null() {
        return Err(fail(OvStatus::NullArgument, &format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(OvStatus::InvalidArgument, &format!("{what} is not UTF-8")))
}

macro_rules! non_null {
    ($p:expr, $what:expr) => {
        if $p.is_null() {
            return fail(OvStatus::NullArgument, concat!($what, " is NULL"));
        }
    };
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ov_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ov_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration holding the defaults.
#[no_mangle]
pub extern "C" fn ov_config_default() -> *mut OvConfig {
    Box::into_raw(Box::new(OvConfig(RunConfig::default())))
}

/// Parses run-config text into a new handle stored in `*out`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ov_config_parse(text: *const c_char, out: *mut *mut OvConfig) -> OvStatus {
    guard(|| {
        non_null!(out, "out");
        let t = match text_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_config(t) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(OvConfig(cfg)));
                OvStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Loads a run-config file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ov_config_load(path: *const c_char, out: *mut *mut OvConfig) -> OvStatus {
    guard(|| {
        non_null!(out, "out");
        let p = match text_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_config(std::path::Path::new(p)) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(OvConfig(cfg)));
                OvStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Sets one key from its config-file value text, e.g. `"delay.comm_ms"`,
/// `"300"`. Strings need quotes: `"\"formation-driving\""`. The handle is
/// unchanged on failure.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ov_config_set(
    cfg: *mut OvConfig,
    key: *const c_char,
    value: *const c_char,
) -> OvStatus {
    guard(|| {
        non_null!(cfg, "cfg");
        let (k, v) = match (text_arg(key, "key"), text_arg(value, "value")) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match set_config_value(&mut (*cfg).0, k, v) {
            Ok(()) => OvStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Seed of the noise realization.
///
/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn ov_config_set_seed(cfg: *mut OvConfig, seed: u64) -> OvStatus {
    guard(|| {
        non_null!(cfg, "cfg");
        (*cfg).0.seed = seed;
        OvStatus::Ok
    })
}

/// Config-file text of the handle; release with [`ov_string_free`].
/// Returns NULL if `cfg` is NULL.
///
/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn ov_config_serialize(cfg: *const OvConfig) -> *mut c_char {
    if cfg.is_null() {
        set_error("cfg is NULL");
        return ptr::null_mut();
    }
    CString::new(serialize_config(&(*cfg).0))
        .expect("config text has no NULs")
        .into_raw()
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ov_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `cfg` must come from this library or be NULL, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ov_config_free(cfg: *mut OvConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configured simulation; the log goes to `*out`.
///
/// # Safety
/// `cfg` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ov_run(cfg: *const OvConfig, out: *mut *mut OvRunLog) -> OvStatus {
    guard(|| {
        non_null!(cfg, "cfg");
        non_null!(out, "out");
        match run_simulation(&(*cfg).0) {
            Ok(log) => {
                *out = Box::into_raw(Box::new(OvRunLog(log)));
                OvStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `log` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ov_runlog_metrics(log: *const OvRunLog, out: *mut OvMetrics) -> OvStatus {
    guard(|| {
        non_null!(log, "log");
        non_null!(out, "out");
        let m = (*log).0.metrics;
        *out = OvMetrics {
            avg_regret: m.avg_regret,
            log_loss: m.log_loss,
            avg_distance: m.avg_distance.unwrap_or(f64::NAN),
            avg_deviation: m.avg_deviation.unwrap_or(f64::NAN),
        };
        OvStatus::Ok
    })
}

/// Number of simulated ticks, 0 for NULL.
///
/// # Safety
/// `log` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ov_runlog_ticks(log: *const OvRunLog) -> usize {
    if log.is_null() {
        return 0;
    }
    (*log).0.n_ticks()
}

/// Fleet state dimension, 0 for NULL.
///
/// # Safety
/// `log` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ov_runlog_state_dim(log: *const OvRunLog) -> usize {
    if log.is_null() {
        return 0;
    }
    (*log).0.layout.fleet_state_dim()
}

/// Number of times an agent read data it could not have had.
///
/// # Safety
/// `log` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn ov_runlog_causality_violations(log: *const OvRunLog) -> u64 {
    if log.is_null() {
        return 0;
    }
    (*log).0.stats.causality_violations
}

/// Copies the true fleet state at `tick` into `buf`, which holds `len`
/// doubles and must fit [`ov_runlog_state_dim`] of them.
///
/// # Safety
/// `log` must come from this library and `buf` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ov_runlog_state(
    log: *const OvRunLog,
    tick: u64,
    buf: *mut f64,
    len: usize,
) -> OvStatus {
    guard(|| {
        non_null!(log, "log");
        non_null!(buf, "buf");
        let log = &(*log).0;
        let Some(x) = log.x.get(Tick(tick)) else {
            return fail(
                OvStatus::InvalidArgument,
                &format!("tick {tick} outside the run of {} ticks", log.n_ticks()),
            );
        };
        if len < x.len() {
            return fail(
                OvStatus::InvalidArgument,
                &format!("buffer holds {len} values, state has {}", x.len()),
            );
        }
        std::slice::from_raw_parts_mut(buf, x.len()).copy_from_slice(x);
        OvStatus::Ok
    })
}

/// Writes the binary run log to `path`.
///
/// # Safety
/// `log` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ov_runlog_write(log: *const OvRunLog, path: *const c_char) -> OvStatus {
    guard(|| {
        non_null!(log, "log");
        let p = match text_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let result = std::fs::File::create(p)
            .map_err(Error::from)
            .and_then(|f| (*log).0.write_to(std::io::BufWriter::new(f)));
        match result {
            Ok(()) => OvStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `log` must come from this library or be NULL, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ov_runlog_free(log: *mut OvRunLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Solves the discrete algebraic Riccati equation for `A` (n×n), `B`
/// (n×m), `Q` (n×n), `R` (m×m), all row-major, and writes the gain
/// `K` (m×n, row-major) with `u = −Kx`.
///
/// # Safety
/// Each pointer must reference the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ov_dare(
    a: *const f64,
    b: *const f64,
    q: *const f64,
    r: *const f64,
    n: usize,
    m: usize,
    k_out: *mut f64,
) -> OvStatus {
    guard(|| {
        for (p, name) in [(a, "a"), (b, "b"), (q, "q"), (r, "r")] {
            if p.is_null() {
                return fail(OvStatus::NullArgument, &format!("{name} is NULL"));
            }
        }
        non_null!(k_out, "k_out");
        if n == 0 || m == 0 {
            return fail(OvStatus::InvalidArgument, "dimensions must be positive");
        }
        let mat = |p: *const f64, rows: usize, cols: usize| {
            DMatrix::from_row_slice(rows, cols, std::slice::from_raw_parts(p, rows * cols))
        };
        match solve_dare(
            &mat(a, n, n),
            &mat(b, n, m),
            &mat(q, n, n),
            &mat(r, m, m),
            &DareOptions::default(),
        ) {
            Ok(sol) => {
                let out = std::slice::from_raw_parts_mut(k_out, m * n);
                for i in 0..m {
                    for j in 0..n {
                        out[i * n + j] = sol.k[(i, j)];
                    }
                }
                OvStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(ov_last_error()) }
            .to_str()
            .unwrap()
            .to_string()
    }

    #[test]
    fn config_handles() {
        unsafe {
            let cfg = ov_config_default();
            assert_eq!(
                ov_config_set(cfg, c("delay.comm_ms").as_ptr(), c("300").as_ptr()),
                OvStatus::Ok
            );
            assert_eq!(
                ov_config_set(cfg, c("delay.comm_ms").as_ptr(), c("33").as_ptr()),
                OvStatus::Config
            );
            assert!(last_error().contains("delay.comm_ms"));
            assert_eq!(
                ov_config_set(cfg, c("run.task").as_ptr(), c("\"nope\"").as_ptr()),
                OvStatus::Config
            );
            let text = ov_config_serialize(cfg);
            let mut back = ptr::null_mut();
            assert_eq!(ov_config_parse(text, &mut back), OvStatus::Ok);
            assert_eq!((*back).0, (*cfg).0);
            assert_eq!((*back).0.comm_ms, 300.0);
            ov_string_free(text);
            ov_config_free(back);
            ov_config_free(cfg);
            ov_config_free(ptr::null_mut());
        }
    }

    #[test]
    fn null_arguments_are_reported() {
        unsafe {
            let mut out = ptr::null_mut();
            assert_eq!(
                ov_config_parse(ptr::null(), &mut out),
                OvStatus::NullArgument
            );
            assert!(last_error().contains("text"));
            assert_eq!(
                ov_run(ptr::null(), &mut ptr::null_mut()),
                OvStatus::NullArgument
            );
            assert_eq!(ov_runlog_ticks(ptr::null()), 0);
            assert!(ov_config_serialize(ptr::null()).is_null());
        }
    }

    #[test]
    fn run_and_read_back() {
        unsafe {
            let cfg = ov_config_default();
            for (k, v) in [("run.duration_s", "2"), ("run.framework", "\"naive\"")] {
                assert_eq!(
                    ov_config_set(cfg, c(k).as_ptr(), c(v).as_ptr()),
                    OvStatus::Ok,
                    "{}",
                    last_error()
                );
            }
            let mut log = ptr::null_mut();
            assert_eq!(ov_run(cfg, &mut log), OvStatus::Ok);
            assert_eq!(ov_runlog_ticks(log), 200);
            assert_eq!(ov_runlog_causality_violations(log), 0);
            let mut m = OvMetrics {
                avg_regret: 0.0,
                log_loss: 0.0,
                avg_distance: 0.0,
                avg_deviation: 0.0,
            };
            assert_eq!(ov_runlog_metrics(log, &mut m), OvStatus::Ok);
            assert!(m.avg_regret > 0.0 && m.avg_distance.is_finite() && m.avg_deviation.is_nan());
            let dim = ov_runlog_state_dim(log);
            let mut x = vec![0.0; dim];
            assert_eq!(ov_runlog_state(log, 0, x.as_mut_ptr(), dim), OvStatus::Ok);
            assert_eq!(x, (*log).0.x.at(Tick(0)));
            assert_eq!(
                ov_runlog_state(log, 200, x.as_mut_ptr(), dim),
                OvStatus::InvalidArgument
            );
            assert_eq!(
                ov_runlog_state(log, 0, x.as_mut_ptr(), 1),
                OvStatus::InvalidArgument
            );
            let dir = std::env::temp_dir().join(format!("ov-ffi-{}", std::process::id()));
            std::fs::create_dir_all(&dir).unwrap();
            let path = dir.join("run.ovlog");
            let p = c(path.to_str().unwrap());
            assert_eq!(ov_runlog_write(log, p.as_ptr()), OvStatus::Ok);
            let back = RunLog::read_from(std::fs::File::open(&path).unwrap()).unwrap();
            assert_eq!(back, (*log).0);
            std::fs::remove_dir_all(&dir).unwrap();
            ov_runlog_free(log);
            ov_config_free(cfg);
        }
    }

    #[test]
    fn scalar_dare_gain() {
        let (a, b, q, r) = (1.0, 1.0, 1.0, 1.0);
        let mut k = 0.0;
        let s = unsafe { ov_dare(&a, &b, &q, &r, 1, 1, &mut k) };
        assert_eq!(s, OvStatus::Ok);
        // P = (1 + √5) / 2, K = P / (1 + P)
        let p = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((k - p / (1.0 + p)).abs() < 1e-9);
        let s = unsafe { ov_dare(&a, &b, &q, &r, 0, 1, &mut k) };
        assert_eq!(s, OvStatus::InvalidArgument);
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(ov_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
