//! C ABI over the fitting library.
//!
//! Episodes and fit reports are opaque heap handles; everything structured
//! crosses the boundary as JSON in the same schemas the CLI reads and
//! writes. Every fallible call returns an [`ImabStatus`]; on failure a
//! human-readable message is stored per thread and can be read back with
//! [`imab_last_error_message`]. Strings returned as `char*` are owned by
//! the caller and must be released with [`imab_string_free`]; handles have
//! their own `_free` functions. No call ever unwinds across the boundary.
//!
//! The generated header lives in `include/imab.h`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_int};
use std::panic::{catch_unwind, AssertUnwindSafe};

use imab::io::{EpisodeFile, ReportFile};
use imab::model::{BanditSpec, Episode};
use imab::pipeline::{fit, lower_bound_only, FitOptions};
use imab::relax::SolverOptions;
use imab::Error;

/// Result codes. Anything but `Ok` leaves a message for
/// [`imab_last_error_message`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImabStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A JSON document failed to parse or violated its schema.
    ParseError = 3,
    /// Inputs were structurally valid but semantically rejected
    /// (dimension mismatches, out-of-range values, bad depth, ...).
    InvalidInput = 4,
    /// The optimizer reported a failure it could not recover from.
    OptimizerFailure = 5,
    /// Serialization or other I/O failed.
    IoError = 6,
    /// A panic was caught at the boundary; this is a bug in the library.
    InternalError = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    // Interior NULs would truncate the C string; make them visible instead.
    let msg = msg.replace('\0', "\\0");
    let cstr = CString::new(msg).expect("NULs were just escaped");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstr));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn fail(status: ImabStatus, msg: String) -> ImabStatus {
    set_last_error(msg);
    status
}

fn status_for(err: &Error) -> ImabStatus {
    match err {
        Error::InvalidEpisode(_) | Error::InvalidInput(_) | Error::DegenerateRow(_) => {
            ImabStatus::InvalidInput
        }
        Error::OptimizerFailure { .. } => ImabStatus::OptimizerFailure,
        Error::Io(_) => ImabStatus::IoError,
    }
}

/// Runs `body` with panics converted to `InternalError` so nothing unwinds
/// into the caller.
fn guarded(body: impl FnOnce() -> ImabStatus) -> ImabStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(ImabStatus::InternalError, format!("internal panic: {msg}"))
        }
    }
}

/// SAFETY-helper: view a caller string. Returns an error status via `Err`.
unsafe fn read_c_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, ImabStatus> {
    if ptr.is_null() {
        return Err(fail(ImabStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller promises `ptr` is a NUL-terminated string that
    // outlives this call.
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(s),
        Err(e) => Err(fail(ImabStatus::InvalidUtf8, format!("{what}: {e}"))),
    }
}

fn into_c_string(s: String) -> *mut c_char {
    let s = s.replace('\0', "\\0");
    CString::new(s).expect("NULs were just escaped").into_raw()
}

/// An episode plus its problem dimensions, ready to fit.
pub struct ImabEpisode {
    episode: Episode,
    spec: BanditSpec,
}

/// A finished fit: recovered parameters, bounds, certificate, diagnostics.
pub struct ImabReport {
    file: ReportFile,
}

/// Library version as a static NUL-terminated string. Never freed.
#[no_mangle]
pub extern "C" fn imab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or null if the last
/// call succeeded. The pointer is valid until the next library call on the
/// same thread; copy it if you need it longer.
#[no_mangle]
pub extern "C" fn imab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow().as_ref().map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Parses an episode document (the same JSON the CLI consumes) and returns
/// a handle through `out`.
///
/// # Safety
/// `json` must be a NUL-terminated string. `out` must be a valid pointer;
/// on `Ok` it receives a handle that must be released with
/// [`imab_episode_free`].
#[no_mangle]
pub unsafe extern "C" fn imab_episode_from_json(
    json: *const c_char,
    out: *mut *mut ImabEpisode,
) -> ImabStatus {
    guarded(|| {
        if out.is_null() {
            return fail(ImabStatus::NullPointer, "out is null".into());
        }
        let text = match unsafe { read_c_str(json, "json") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let file: EpisodeFile = match serde_json::from_str(text) {
            Ok(f) => f,
            Err(e) => return fail(ImabStatus::ParseError, format!("episode json: {e}")),
        };
        match file.to_episode() {
            Ok((episode, spec)) => {
                clear_last_error();
                let handle = Box::new(ImabEpisode { episode, spec });
                // SAFETY: `out` was checked non-null above.
                unsafe { *out = Box::into_raw(handle) };
                ImabStatus::Ok
            }
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}

/// Releases an episode handle. Null is a no-op.
///
/// # Safety
/// `episode` must be a handle from [`imab_episode_from_json`] that has not
/// already been freed.
#[no_mangle]
pub unsafe extern "C" fn imab_episode_free(episode: *mut ImabEpisode) {
    if !episode.is_null() {
        // SAFETY: per the contract this is an unfreed Box we allocated.
        drop(unsafe { Box::from_raw(episode) });
    }
}

/// Number of trials, or 0 if `episode` is null.
#[no_mangle]
pub extern "C" fn imab_episode_trials(episode: *const ImabEpisode) -> usize {
    // SAFETY: null is handled; otherwise the caller promises a live handle.
    unsafe { episode.as_ref() }.map_or(0, |e| e.episode.n())
}

/// Number of arms, or 0 if `episode` is null.
#[no_mangle]
pub extern "C" fn imab_episode_arms(episode: *const ImabEpisode) -> usize {
    // SAFETY: as above.
    unsafe { episode.as_ref() }.map_or(0, |e| e.episode.m())
}

/// Number of reward subsignals, or 0 if `episode` is null.
#[no_mangle]
pub extern "C" fn imab_episode_subsignals(episode: *const ImabEpisode) -> usize {
    // SAFETY: as above.
    unsafe { episode.as_ref() }.map_or(0, |e| e.episode.k())
}

/// Default fit options as a JSON document the caller may edit and pass to
/// [`imab_fit`]. Free with [`imab_string_free`]. Returns null only if
/// serialization fails (it cannot).
#[no_mangle]
pub extern "C" fn imab_fit_options_default_json() -> *mut c_char {
    match serde_json::to_string_pretty(&FitOptions::default()) {
        Ok(s) => into_c_string(s),
        Err(_) => std::ptr::null_mut(),
    }
}

/// Fits one episode. `options_json` selects the method and all knobs; pass
/// null for the defaults (sequential pipeline, full depth). The options
/// document must be complete — start from
/// [`imab_fit_options_default_json`] and edit fields.
///
/// # Safety
/// `episode` must be a live handle. `options_json`, if non-null, must be a
/// NUL-terminated string. `out` must be a valid pointer; on `Ok` it
/// receives a handle that must be released with [`imab_report_free`].
#[no_mangle]
pub unsafe extern "C" fn imab_fit(
    episode: *const ImabEpisode,
    options_json: *const c_char,
    out: *mut *mut ImabReport,
) -> ImabStatus {
    guarded(|| {
        if out.is_null() {
            return fail(ImabStatus::NullPointer, "out is null".into());
        }
        // SAFETY: null is rejected; otherwise the caller promises a live handle.
        let Some(handle) = (unsafe { episode.as_ref() }) else {
            return fail(ImabStatus::NullPointer, "episode is null".into());
        };
        let opts = if options_json.is_null() {
            FitOptions::default()
        } else {
            let text = match unsafe { read_c_str(options_json, "options_json") } {
                Ok(s) => s,
                Err(status) => return status,
            };
            match serde_json::from_str::<FitOptions>(text) {
                Ok(o) => o,
                Err(e) => return fail(ImabStatus::ParseError, format!("options json: {e}")),
            }
        };
        match fit(&handle.episode, &handle.spec, &opts) {
            Ok(report) => {
                clear_last_error();
                let file = ReportFile::from_report(&report, &opts);
                // SAFETY: `out` was checked non-null above.
                unsafe { *out = Box::into_raw(Box::new(ImabReport { file })) };
                ImabStatus::Ok
            }
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}

/// Computes only the relaxed lower bound at the given history depth
/// (0 means full depth) with default solver settings, writing it to
/// `out_j_lb`. The bound is only valid for the unrestricted model class at
/// full depth.
///
/// # Safety
/// `episode` must be a live handle and `out_j_lb` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn imab_lower_bound(
    episode: *const ImabEpisode,
    depth: usize,
    out_j_lb: *mut f64,
) -> ImabStatus {
    guarded(|| {
        if out_j_lb.is_null() {
            return fail(ImabStatus::NullPointer, "out_j_lb is null".into());
        }
        // SAFETY: null is rejected; otherwise the caller promises a live handle.
        let Some(handle) = (unsafe { episode.as_ref() }) else {
            return fail(ImabStatus::NullPointer, "episode is null".into());
        };
        let depth = if depth == 0 { None } else { Some(depth) };
        match lower_bound_only(&handle.episode, &handle.spec, depth, &SolverOptions::default()) {
            Ok(relax) => {
                clear_last_error();
                // SAFETY: `out_j_lb` was checked non-null above.
                unsafe { *out_j_lb = relax.j_lb };
                ImabStatus::Ok
            }
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}

/// Releases a report handle. Null is a no-op.
///
/// # Safety
/// `report` must be a handle from [`imab_fit`] that has not already been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn imab_report_free(report: *mut ImabReport) {
    if !report.is_null() {
        // SAFETY: per the contract this is an unfreed Box we allocated.
        drop(unsafe { Box::from_raw(report) });
    }
}

/// Serializes the full report (parameters, bounds, certificate,
/// diagnostics, resolved options) to JSON. Free the string with
/// [`imab_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn imab_report_to_json(
    report: *const ImabReport,
    out: *mut *mut c_char,
) -> ImabStatus {
    guarded(|| {
        if out.is_null() {
            return fail(ImabStatus::NullPointer, "out is null".into());
        }
        // SAFETY: null is rejected; otherwise the caller promises a live handle.
        let Some(handle) = (unsafe { report.as_ref() }) else {
            return fail(ImabStatus::NullPointer, "report is null".into());
        };
        match serde_json::to_string_pretty(&handle.file) {
            Ok(s) => {
                clear_last_error();
                // SAFETY: `out` was checked non-null above.
                unsafe { *out = into_c_string(s) };
                ImabStatus::Ok
            }
            Err(e) => fail(ImabStatus::IoError, format!("report json: {e}")),
        }
    })
}

/// Achieved negative log-likelihood, or NaN if `report` is null.
#[no_mangle]
pub extern "C" fn imab_report_j_ub(report: *const ImabReport) -> f64 {
    // SAFETY: null is handled; otherwise the caller promises a live handle.
    unsafe { report.as_ref() }.map_or(f64::NAN, |r| r.file.j_ub)
}

/// Relaxed lower bound, or NaN if absent (direct method) or `report` is
/// null.
#[no_mangle]
pub extern "C" fn imab_report_j_lb(report: *const ImabReport) -> f64 {
    // SAFETY: as above.
    unsafe { report.as_ref() }
        .and_then(|r| r.file.relax.as_ref())
        .map_or(f64::NAN, |relax| relax.j_lb)
}

/// Optimality gap `j_ub - j_lb`, or NaN if no bound exists or `report` is
/// null.
#[no_mangle]
pub extern "C" fn imab_report_gap(report: *const ImabReport) -> f64 {
    // SAFETY: as above.
    unsafe { report.as_ref() }.and_then(|r| r.file.gap).unwrap_or(f64::NAN)
}

/// 1 if the fit carries a global-optimality certificate, 0 if not, -1 if
/// `report` is null.
#[no_mangle]
pub extern "C" fn imab_report_certified(report: *const ImabReport) -> c_int {
    // SAFETY: as above.
    match unsafe { report.as_ref() } {
        None => -1,
        Some(r) => r.file.certificate.as_ref().is_some_and(|c| c.certified) as c_int,
    }
}

/// Writes the recovered parameter dimensions: rows (subsignals) and
/// columns (arms). Either out-pointer may be null to skip it.
///
/// # Safety
/// `report` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn imab_report_dims(
    report: *const ImabReport,
    out_subsignals: *mut usize,
    out_arms: *mut usize,
) -> ImabStatus {
    guarded(|| {
        // SAFETY: null is rejected; otherwise the caller promises a live handle.
        let Some(handle) = (unsafe { report.as_ref() }) else {
            return fail(ImabStatus::NullPointer, "report is null".into());
        };
        let k = handle.file.params.alpha.len();
        let m = handle.file.params.alpha.first().map_or(0, |row| row.len());
        // SAFETY: the caller promises non-null out-pointers are writable.
        unsafe {
            if !out_subsignals.is_null() {
                *out_subsignals = k;
            }
            if !out_arms.is_null() {
                *out_arms = m;
            }
        }
        clear_last_error();
        ImabStatus::Ok
    })
}

/// Copies the recovered parameters into caller buffers, row-major with one
/// row per subsignal and one column per arm (`len` doubles as an overrun
/// check and must equal subsignals * arms). Either matrix pointer may be
/// null to skip that matrix.
///
/// # Safety
/// `report` must be a live handle; non-null buffers must hold `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn imab_report_params(
    report: *const ImabReport,
    alpha: *mut f64,
    beta: *mut f64,
    len: usize,
) -> ImabStatus {
    guarded(|| {
        // SAFETY: null is rejected; otherwise the caller promises a live handle.
        let Some(handle) = (unsafe { report.as_ref() }) else {
            return fail(ImabStatus::NullPointer, "report is null".into());
        };
        let block = &handle.file.params;
        let k = block.alpha.len();
        let m = block.alpha.first().map_or(0, |row| row.len());
        if len != k * m {
            return fail(
                ImabStatus::InvalidInput,
                format!("len is {len}, parameters are {k}x{m} = {} entries", k * m),
            );
        }
        let fill = |dst: *mut f64, rows: &[Vec<f64>]| {
            if dst.is_null() {
                return;
            }
            // SAFETY: the caller promises `dst` holds `len` = k*m doubles.
            let out = unsafe { std::slice::from_raw_parts_mut(dst, len) };
            for (i, row) in rows.iter().enumerate() {
                out[i * m..(i + 1) * m].copy_from_slice(row);
            }
        };
        fill(alpha, &block.alpha);
        fill(beta, &block.beta);
        clear_last_error();
        ImabStatus::Ok
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must have come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn imab_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: per the contract this is an unfreed CString we allocated.
        drop(unsafe { CString::from_raw(s) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use imab::io::EPISODE_FORMAT;
    use imab::sim::{random_params, simulate_episode, EnvSpec};

    fn episode_json() -> CString {
        let env = EnvSpec::two_arm();
        let params = random_params(&env, 7).unwrap();
        let sim = simulate_episode(&env, &params, 60, 7).unwrap();
        let file = EpisodeFile::from_simulated(&sim, &env);
        CString::new(serde_json::to_string(&file).unwrap()).unwrap()
    }

    fn make_episode() -> *mut ImabEpisode {
        let json = episode_json();
        let mut handle: *mut ImabEpisode = std::ptr::null_mut();
        let status = unsafe { imab_episode_from_json(json.as_ptr(), &mut handle) };
        assert_eq!(status, ImabStatus::Ok);
        assert!(!handle.is_null());
        handle
    }

    #[test]
    fn version_is_a_c_string() {
        let ptr = imab_version();
        assert!(!ptr.is_null());
        let v = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn episode_round_trip_and_dims() {
        let ep = make_episode();
        assert_eq!(imab_episode_trials(ep), 60);
        assert_eq!(imab_episode_arms(ep), 2);
        assert_eq!(imab_episode_subsignals(ep), 1);
        unsafe { imab_episode_free(ep) };
    }

    #[test]
    fn null_and_garbage_inputs_are_rejected() {
        let mut handle: *mut ImabEpisode = std::ptr::null_mut();
        let status = unsafe { imab_episode_from_json(std::ptr::null(), &mut handle) };
        assert_eq!(status, ImabStatus::NullPointer);
        assert!(!imab_last_error_message().is_null());

        let garbage = CString::new("{\"format\": \"nope\"").unwrap();
        let status = unsafe { imab_episode_from_json(garbage.as_ptr(), &mut handle) };
        assert_eq!(status, ImabStatus::ParseError);
        let msg = unsafe { CStr::from_ptr(imab_last_error_message()) };
        assert!(!msg.to_str().unwrap().is_empty());

        let bad_tag = CString::new(format!(
            "{{\"format\":\"not-{EPISODE_FORMAT}\",\"version\":1,\"m\":2,\
             \"actions\":[0],\"signals\":[[[0.0,0.0]]]}}"
        ))
        .unwrap();
        let status = unsafe { imab_episode_from_json(bad_tag.as_ptr(), &mut handle) };
        assert_eq!(status, ImabStatus::InvalidInput);

        let json = episode_json();
        let status = unsafe { imab_episode_from_json(json.as_ptr(), std::ptr::null_mut()) };
        assert_eq!(status, ImabStatus::NullPointer);

        // Frees of null are no-ops.
        unsafe {
            imab_episode_free(std::ptr::null_mut());
            imab_report_free(std::ptr::null_mut());
            imab_string_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn fit_produces_bounds_params_and_json() {
        let ep = make_episode();
        let mut report: *mut ImabReport = std::ptr::null_mut();
        let status = unsafe { imab_fit(ep, std::ptr::null(), &mut report) };
        assert_eq!(status, ImabStatus::Ok);
        assert!(!report.is_null());

        let j_ub = imab_report_j_ub(report);
        let j_lb = imab_report_j_lb(report);
        let gap = imab_report_gap(report);
        assert!(j_ub.is_finite() && j_lb.is_finite());
        assert!(gap >= -1e-9, "gap {gap} should be nonnegative");
        assert!((j_ub - j_lb - gap).abs() < 1e-9);
        assert!(imab_report_certified(report) >= 0);

        let (mut k, mut m) = (0usize, 0usize);
        let status = unsafe { imab_report_dims(report, &mut k, &mut m) };
        assert_eq!(status, ImabStatus::Ok);
        assert_eq!((k, m), (1, 2));

        let mut alpha = vec![f64::NAN; k * m];
        let mut beta = vec![f64::NAN; k * m];
        let status = unsafe {
            imab_report_params(report, alpha.as_mut_ptr(), beta.as_mut_ptr(), k * m)
        };
        assert_eq!(status, ImabStatus::Ok);
        assert!(alpha.iter().all(|a| (0.0..=1.0).contains(a)));
        assert!(beta.iter().all(|b| *b >= 0.0));

        let status = unsafe { imab_report_params(report, alpha.as_mut_ptr(), beta.as_mut_ptr(), 5) };
        assert_eq!(status, ImabStatus::InvalidInput);

        let mut json: *mut c_char = std::ptr::null_mut();
        let status = unsafe { imab_report_to_json(report, &mut json) };
        assert_eq!(status, ImabStatus::Ok);
        let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
        unsafe { imab_string_free(json) };
        let parsed: ReportFile = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.j_ub.to_bits(), j_ub.to_bits());

        unsafe {
            imab_report_free(report);
            imab_episode_free(ep);
        }
    }

    #[test]
    fn fit_accepts_edited_default_options() {
        let raw = imab_fit_options_default_json();
        assert!(!raw.is_null());
        let text = unsafe { CStr::from_ptr(raw) }.to_str().unwrap().to_owned();
        unsafe { imab_string_free(raw) };
        let mut opts: serde_json::Value = serde_json::from_str(&text).unwrap();
        opts["method"] = "direct".into();
        opts["restarts"] = 2.into();

        let ep = make_episode();
        let json = CString::new(opts.to_string()).unwrap();
        let mut report: *mut ImabReport = std::ptr::null_mut();
        let status = unsafe { imab_fit(ep, json.as_ptr(), &mut report) };
        assert_eq!(status, ImabStatus::Ok);
        // Direct fits carry no bound, so the accessors report NaN.
        assert!(imab_report_j_lb(report).is_nan());
        assert!(imab_report_gap(report).is_nan());
        assert!(imab_report_j_ub(report).is_finite());
        unsafe {
            imab_report_free(report);
            imab_episode_free(ep);
        }
    }

    #[test]
    fn lower_bound_matches_sequential_report() {
        let ep = make_episode();
        let mut j_lb = f64::NAN;
        let status = unsafe { imab_lower_bound(ep, 0, &mut j_lb) };
        assert_eq!(status, ImabStatus::Ok);
        assert!(j_lb.is_finite());

        let mut report: *mut ImabReport = std::ptr::null_mut();
        let status = unsafe { imab_fit(ep, std::ptr::null(), &mut report) };
        assert_eq!(status, ImabStatus::Ok);
        assert!((imab_report_j_lb(report) - j_lb).abs() < 1e-9);

        // Out-of-range depth is rejected with a message.
        let status = unsafe { imab_lower_bound(ep, 10_000, &mut j_lb) };
        assert_eq!(status, ImabStatus::InvalidInput);
        assert!(!imab_last_error_message().is_null());

        unsafe {
            imab_report_free(report);
            imab_episode_free(ep);
        }
    }

    #[test]
    fn accessors_tolerate_null_handles() {
        assert_eq!(imab_episode_trials(std::ptr::null()), 0);
        assert!(imab_report_j_ub(std::ptr::null()).is_nan());
        assert!(imab_report_j_lb(std::ptr::null()).is_nan());
        assert!(imab_report_gap(std::ptr::null()).is_nan());
        assert_eq!(imab_report_certified(std::ptr::null()), -1);
        let status = unsafe { imab_report_dims(std::ptr::null(), std::ptr::null_mut(), std::ptr::null_mut()) };
        assert_eq!(status, ImabStatus::NullPointer);
        let status = unsafe { imab_report_params(std::ptr::null(), std::ptr::null_mut(), std::ptr::null_mut(), 0) };
        assert_eq!(status, ImabStatus::NullPointer);
    }
}
