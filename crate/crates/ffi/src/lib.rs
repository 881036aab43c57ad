//! C ABI for the ddsmpc toolkit.
//!
//! All functions return a status code (`DDSMPC_OK` on success); failure
//! details are retrievable per thread via [`ddsmpc_last_error`]. Handles
//! are opaque; every `*_new`/`*_load` has a matching `*_free`. A
//! controller borrows its artifact: the artifact must outlive every
//! controller created from it, and a controller must only be used from
//! one thread at a time (create one controller per closed-loop session).

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DVector;

use ddsmpc::controller::{ControllerArtifact, OnlineController, StepOutcome};
use ddsmpc::error::Error;

/// Success.
pub const DDSMPC_OK: c_int = 0;
/// The step problem is infeasible for this measurement (not an error).
pub const DDSMPC_INFEASIBLE: c_int = 1;
/// A null pointer or mismatched dimension was passed.
pub const DDSMPC_ERR_INVALID: c_int = -1;
/// Text input failed to parse.
pub const DDSMPC_ERR_PARSE: c_int = -2;
/// A numerical procedure failed.
pub const DDSMPC_ERR_NUMERICAL: c_int = -3;
/// Any other library error.
pub const DDSMPC_ERR_INTERNAL: c_int = -4;
/// A panic was caught at the boundary.
pub const DDSMPC_ERR_PANIC: c_int = -5;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(cleaned).unwrap_or_default());
}

fn code_of(err: &Error) -> c_int {
    match err {
        Error::Parse(_) | Error::Io(_) => DDSMPC_ERR_PARSE,
        Error::Numerical(_) | Error::RankDeficient(_) => DDSMPC_ERR_NUMERICAL,
        Error::Dimension { .. } | Error::Input(_) | Error::Config(_) => DDSMPC_ERR_INVALID,
        _ => DDSMPC_ERR_INTERNAL,
    }
}

fn fail(err: Error) -> c_int {
    let code = code_of(&err);
    set_error(&err.to_string());
    code
}

fn guarded(f: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("panic caught at the FFI boundary");
            DDSMPC_ERR_PANIC
        }
    }
}

/// Opaque frozen offline-synthesis output.
pub struct DdsmpcArtifact {
    inner: ControllerArtifact,
}

/// Opaque per-session online solver (holds warm-start state).
pub struct DdsmpcController {
    // Borrows the artifact passed to `ddsmpc_controller_new`; the caller
    // guarantees the artifact outlives this controller.
    inner: OnlineController<'static>,
}

/// Last error message of the current thread. Valid until the next
/// failing call on this thread; never null.
#[no_mangle]
pub extern "C" fn ddsmpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parse an artifact from its text serialization.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_artifact_from_text(
    text: *const c_char,
    out: *mut *mut DdsmpcArtifact,
) -> c_int {
    guarded(|| {
        if text.is_null() || out.is_null() {
            set_error("null pointer");
            return DDSMPC_ERR_INVALID;
        }
        let text = match unsafe { CStr::from_ptr(text) }.to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("artifact text is not valid UTF-8");
                return DDSMPC_ERR_PARSE;
            }
        };
        match ControllerArtifact::from_text(text) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(DdsmpcArtifact { inner })) };
                DDSMPC_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Load an artifact from a file path.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_artifact_load(
    path: *const c_char,
    out: *mut *mut DdsmpcArtifact,
) -> c_int {
    guarded(|| {
        if path.is_null() || out.is_null() {
            set_error("null pointer");
            return DDSMPC_ERR_INVALID;
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(t) => t,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return DDSMPC_ERR_INVALID;
            }
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                set_error(&format!("cannot read {path}: {e}"));
                return DDSMPC_ERR_PARSE;
            }
        };
        match ControllerArtifact::from_text(&text) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(DdsmpcArtifact { inner })) };
                DDSMPC_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Release an artifact. Safe on null. All controllers created from it
/// must already be freed.
///
/// # Safety
/// `artifact` must be null or a pointer from a ddsmpc constructor, not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_artifact_free(artifact: *mut DdsmpcArtifact) {
    if !artifact.is_null() {
        drop(unsafe { Box::from_raw(artifact) });
    }
}

/// Query the artifact dimensions (any output pointer may be null).
///
/// # Safety
/// `artifact` must be a live artifact handle.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_artifact_dims(
    artifact: *const DdsmpcArtifact,
    n: *mut usize,
    m: *mut usize,
    horizon: *mut usize,
) -> c_int {
    guarded(|| {
        if artifact.is_null() {
            set_error("null artifact");
            return DDSMPC_ERR_INVALID;
        }
        let a = unsafe { &(*artifact).inner };
        unsafe {
            if !n.is_null() {
                *n = a.n;
            }
            if !m.is_null() {
                *m = a.m;
            }
            if !horizon.is_null() {
                *horizon = a.horizon;
            }
        }
        DDSMPC_OK
    })
}

/// Create an online controller bound to an artifact. The artifact must
/// outlive the controller; use one controller per closed-loop session.
///
/// # Safety
/// `artifact` must be a live artifact handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_controller_new(
    artifact: *const DdsmpcArtifact,
    out: *mut *mut DdsmpcController,
) -> c_int {
    guarded(|| {
        if artifact.is_null() || out.is_null() {
            set_error("null pointer");
            return DDSMPC_ERR_INVALID;
        }
        // Lifetime erasure: validity is the caller's contract (above).
        let a: &'static ControllerArtifact = unsafe { &(*artifact).inner };
        match OnlineController::new(a) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(DdsmpcController { inner })) };
                DDSMPC_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Release a controller. Safe on null.
///
/// # Safety
/// `controller` must be null or a live controller handle, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_controller_free(controller: *mut DdsmpcController) {
    if !controller.is_null() {
        drop(unsafe { Box::from_raw(controller) });
    }
}

/// Enable or disable warm starting (enabled by default); disabling also
/// clears the stored warm-start state.
///
/// # Safety
/// `controller` must be a live controller handle.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_controller_set_warm_start(
    controller: *mut DdsmpcController,
    enabled: c_int,
) -> c_int {
    guarded(|| {
        if controller.is_null() {
            set_error("null controller");
            return DDSMPC_ERR_INVALID;
        }
        unsafe { &mut (*controller).inner }.set_warm_start(enabled != 0);
        DDSMPC_OK
    })
}

/// Solve one online step for the measured state `x` (length `n`).
/// On `DDSMPC_OK`, writes the first input block to `u0` (length `m`) and
/// the solved objective to `objective` (nullable). Returns
/// `DDSMPC_INFEASIBLE` (without touching the outputs) when no feasible
/// input sequence exists for this measurement.
///
/// # Safety
/// `controller` must be a live handle; `x` must point to `n` doubles and
/// `u0` to `m` doubles matching the artifact dimensions.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_controller_step(
    controller: *mut DdsmpcController,
    x: *const c_double,
    n: usize,
    u0: *mut c_double,
    m: usize,
    objective: *mut c_double,
) -> c_int {
    guarded(|| {
        if controller.is_null() || x.is_null() || u0.is_null() {
            set_error("null pointer");
            return DDSMPC_ERR_INVALID;
        }
        let ctrl = unsafe { &mut (*controller).inner };
        if n != ctrl.artifact().n || m != ctrl.artifact().m {
            set_error("state or input dimension mismatch");
            return DDSMPC_ERR_INVALID;
        }
        let x = DVector::from_column_slice(unsafe { std::slice::from_raw_parts(x, n) });
        match ctrl.online_step(&x) {
            Ok(StepOutcome::Feasible(dec)) => {
                unsafe {
                    ptr::copy_nonoverlapping(dec.u0.as_ptr(), u0, m);
                    if !objective.is_null() {
                        *objective = dec.objective;
                    }
                }
                DDSMPC_OK
            }
            Ok(StepOutcome::Infeasible { .. }) => DDSMPC_INFEASIBLE,
            Err(e) => fail(e),
        }
    })
}

/// Phase-1 feasibility test for a measured state: writes 1 or 0 to
/// `feasible`.
///
/// # Safety
/// `controller` must be a live handle; `x` must point to `n` doubles;
/// `feasible` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_controller_feasible(
    controller: *const DdsmpcController,
    x: *const c_double,
    n: usize,
    feasible: *mut c_int,
) -> c_int {
    guarded(|| {
        if controller.is_null() || x.is_null() || feasible.is_null() {
            set_error("null pointer");
            return DDSMPC_ERR_INVALID;
        }
        let ctrl = unsafe { &(*controller).inner };
        if n != ctrl.artifact().n {
            set_error("state dimension mismatch");
            return DDSMPC_ERR_INVALID;
        }
        let x = DVector::from_column_slice(unsafe { std::slice::from_raw_parts(x, n) });
        match ctrl.feasible_check(&x) {
            Ok(ok) => {
                unsafe { *feasible = ok as c_int };
                DDSMPC_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Serialize an artifact to its text format. The returned string must be
/// released with [`ddsmpc_string_free`].
///
/// # Safety
/// `artifact` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_artifact_to_text(
    artifact: *const DdsmpcArtifact,
    out: *mut *mut c_char,
) -> c_int {
    guarded(|| {
        if artifact.is_null() || out.is_null() {
            set_error("null pointer");
            return DDSMPC_ERR_INVALID;
        }
        let text = unsafe { &(*artifact).inner }.to_text();
        match CString::new(text) {
            Ok(s) => {
                unsafe { *out = s.into_raw() };
                DDSMPC_OK
            }
            Err(_) => {
                set_error("artifact text contains a NUL byte");
                return DDSMPC_ERR_INTERNAL;
            }
        }
    })
}

/// Release a string returned by this library. Safe on null.
///
/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddsmpc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
