//! C ABI over `ivp-core`.
//!
//! Conventions:
//! * every fallible function returns an [`IvpStatus`] and writes results through out-pointers;
//! * systems and structures are opaque handles released with their `*_free` function;
//! * node indices are 0-based;
//! * after a non-OK status, [`ivp_last_error_message`] describes the failure on that thread;
//! * panics never cross the boundary and surface as [`IvpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ivp_core::dp::{self, DpBudget};
use ivp_core::generic::{self, GenericSampler};
use ivp_core::intrinsic::{self, Condition};
use ivp_core::sysmodel::{self, DisclosureSet, LinearSystem, NetworkStructure, NoiseModel};
use ivp_core::Error;
use nalgebra as na;

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Input failed validation (dimensions, domains, file contents).
    Invalid = 2,
    /// A numerical failure: non-finite values, conditioning, singular covariance.
    Numerical = 3,
    /// A file could not be read.
    Io = 4,
    /// The library panicked; this is a bug.
    Panic = 5,
}

/// Opaque time-invariant system.
pub struct IvpSystem(LinearSystem);

/// Opaque network structure.
pub struct IvpStructure(NetworkStructure);

/// Differential-privacy budget: `(epsilon, delta)`, adjacency radius `d`, `n_traj`
/// trajectories of horizon `horizon`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IvpBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub d: f64,
    pub n_traj: usize,
    pub horizon: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let text = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn fail(status: IvpStatus, message: impl Into<String>) -> IvpStatus {
    set_last_error(message.into());
    status
}

impl From<Error> for IvpStatus {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => IvpStatus::Io,
            _ if e.exit_code() == 3 => IvpStatus::Numerical,
            _ => IvpStatus::Invalid,
        };
        fail(status, e.to_string())
    }
}

/// Runs `f`, converting panics into [`IvpStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), IvpStatus>) -> IvpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IvpStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            fail(IvpStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, IvpStatus> {
    p.as_ref().ok_or_else(|| fail(IvpStatus::NullPointer, format!("{name} is null")))
}

unsafe fn write<T>(out: *mut T, value: T, name: &str) -> Result<(), IvpStatus> {
    if out.is_null() {
        return Err(fail(IvpStatus::NullPointer, format!("{name} is null")));
    }
    out.write(value);
    Ok(())
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, IvpStatus> {
    if p.is_null() {
        return Err(fail(IvpStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(IvpStatus::Invalid, format!("{name} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], IvpStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(IvpStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn disclosure(public: *const usize, len: usize, n: usize) -> Result<DisclosureSet, IvpStatus> {
    let idx = slice(public, len, "public")?;
    Ok(DisclosureSet::new(idx.to_vec(), n)?)
}

/// Message for the last failure on the calling thread, or null. Valid until the next call
/// into this library on the same thread.
#[no_mangle]
pub extern "C" fn ivp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a system JSON file (`n`, `m`, `A`, `C`, optional `noise`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_system_load(path: *const c_char, out: *mut *mut IvpSystem) -> IvpStatus {
    guard(|| {
        let sys = sysmodel::load_lti(string(path, "path")?)?;
        write(out, Box::into_raw(Box::new(IvpSystem(sys))), "out")
    })
}

/// Parses a system from a JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_system_from_json(json: *const c_char, out: *mut *mut IvpSystem) -> IvpStatus {
    guard(|| {
        let sys = match sysmodel::parse_system(string(json, "json")?)? {
            sysmodel::LoadedSystem::Lti(sys) => sys,
            sysmodel::LoadedSystem::TimeVarying(_) => {
                return Err(fail(IvpStatus::Invalid, "time-varying systems are not supported here"))
            }
        };
        write(out, Box::into_raw(Box::new(IvpSystem(sys))), "out")
    })
}

/// Builds a system from row-major `A` (`n x n`) and `C` (`m x n`) with i.i.d. noise.
///
/// # Safety
/// `a` must hold `n * n` values, `c` must hold `m * n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_system_from_matrices(
    n: usize,
    m: usize,
    a: *const f64,
    c: *const f64,
    sigma_nu: f64,
    sigma_omega: f64,
    out: *mut *mut IvpSystem,
) -> IvpStatus {
    guard(|| {
        if n == 0 || m == 0 {
            return Err(fail(IvpStatus::Invalid, "n and m must be positive"));
        }
        let a = na::DMatrix::from_row_slice(n, n, slice(a, n * n, "a")?);
        let c = na::DMatrix::from_row_slice(m, n, slice(c, m * n, "c")?);
        let sys = LinearSystem::new(a, c, NoiseModel::iid(sigma_nu, sigma_omega)?)?;
        write(out, Box::into_raw(Box::new(IvpSystem(sys))), "out")
    })
}

/// Releases a system. Null is ignored.
///
/// # Safety
/// `sys` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ivp_system_free(sys: *mut IvpSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State and output dimensions.
///
/// # Safety
/// `sys` must be a live handle; `n` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_system_dims(sys: *const IvpSystem, n: *mut usize, m: *mut usize) -> IvpStatus {
    guard(|| {
        let sys = &deref(sys, "sys")?.0;
        write(n, sys.n(), "n")?;
        write(m, sys.m(), "m")
    })
}

/// Whether the whole initial state is private (the pair is unobservable).
///
/// # Safety
/// `sys` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_whole_vector_private(sys: *const IvpSystem, out: *mut bool) -> IvpStatus {
    guard(|| {
        let v = intrinsic::whole_vector_private(&deref(sys, "sys")?.0)?;
        write(out, v.private, "out")
    })
}

/// Whether `node` stays private when the nodes in `public[0..public_len]` are disclosed.
///
/// # Safety
/// `sys` must be a live handle; `public` must hold `public_len` indices; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_node_private(
    sys: *const IvpSystem,
    node: usize,
    public: *const usize,
    public_len: usize,
    out: *mut bool,
) -> IvpStatus {
    guard(|| {
        let sys = &deref(sys, "sys")?.0;
        let p = disclosure(public, public_len, sys.n())?;
        let v = intrinsic::node_private(sys, node, &p, Condition::All)?;
        write(out, v.private, "out")
    })
}

/// Network privacy index `n - rank(O_ob) - 1`.
///
/// # Safety
/// `sys` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_privacy_index(sys: *const IvpSystem, out: *mut i64) -> IvpStatus {
    guard(|| {
        let r = intrinsic::privacy_index(&deref(sys, "sys")?.0)?;
        write(out, r.index, "out")
    })
}

/// Standard normal upper tail probability.
#[no_mangle]
pub extern "C" fn ivp_q_function(w: f64) -> f64 {
    dp::q_function(w)
}

/// Inverse of the upper tail on `(0, 0.5]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_q_inverse(p: f64, out: *mut f64) -> IvpStatus {
    guard(|| write(out, dp::q_inverse(p)?, "out"))
}

/// Gaussian-mechanism calibration constant.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_kappa(epsilon: f64, delta: f64, out: *mut f64) -> IvpStatus {
    guard(|| write(out, dp::kappa(epsilon, delta)?, "out"))
}

unsafe fn budget(b: *const IvpBudget) -> Result<DpBudget, IvpStatus> {
    let b = deref(b, "budget")?;
    Ok(DpBudget::new(b.epsilon, b.delta, b.d, b.n_traj, b.horizon)?)
}

/// Smallest i.i.d. measurement-noise standard deviation certifying the budget.
///
/// # Safety
/// `sys` and `budget` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_calibrate(sys: *const IvpSystem, budget_ptr: *const IvpBudget, out: *mut f64) -> IvpStatus {
    guard(|| {
        let cal = dp::calibrate_sigma_omega(&deref(sys, "sys")?.0, &budget(budget_ptr)?)?;
        write(out, cal.sigma_omega_floor, "out")
    })
}

/// Evaluates the sufficient DP condition for the system's own noise. `lhs` and `rhs` may be
/// null; otherwise they receive the two sides of the plain condition.
///
/// # Safety
/// `sys` and `budget` must be valid; `satisfied` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_check_dp(
    sys: *const IvpSystem,
    budget_ptr: *const IvpBudget,
    refined: bool,
    satisfied: *mut bool,
    lhs: *mut f64,
    rhs: *mut f64,
) -> IvpStatus {
    guard(|| {
        let v = dp::check_dp(&deref(sys, "sys")?.0, &budget(budget_ptr)?, refined)?;
        write(satisfied, v.satisfied, "satisfied")?;
        if !lhs.is_null() {
            lhs.write(v.lhs);
        }
        if !rhs.is_null() {
            rhs.write(v.rhs);
        }
        Ok(())
    })
}

/// Loads a structure JSON file (`n`, `m`, `structure.edges`, `structure.sensor_edges`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_structure_load(path: *const c_char, out: *mut *mut IvpStructure) -> IvpStatus {
    guard(|| {
        let s = sysmodel::load_structure(string(path, "path")?)?;
        write(out, Box::into_raw(Box::new(IvpStructure(s))), "out")
    })
}

/// Parses a structure from a JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_structure_from_json(json: *const c_char, out: *mut *mut IvpStructure) -> IvpStatus {
    guard(|| {
        let s = sysmodel::parse_structure(string(json, "json")?)?;
        write(out, Box::into_raw(Box::new(IvpStructure(s))), "out")
    })
}

/// Releases a structure. Null is ignored.
///
/// # Safety
/// `structure` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ivp_structure_free(structure: *mut IvpStructure) {
    if !structure.is_null() {
        drop(Box::from_raw(structure));
    }
}

/// Whether `node` is private for almost all weight configurations of the structure.
///
/// # Safety
/// `structure` must be a live handle; `public` must hold `public_len` indices; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_generic_node_privacy(
    structure: *const IvpStructure,
    node: usize,
    public: *const usize,
    public_len: usize,
    samples: usize,
    seed: u64,
    out: *mut bool,
) -> IvpStatus {
    guard(|| {
        let s = &deref(structure, "structure")?.0;
        let p = disclosure(public, public_len, s.n())?;
        let sampler = GenericSampler::new(samples, seed)?;
        let v = generic::generic_node_privacy(s, node, &p, &sampler)?;
        write(out, v.generically_private, "out")
    })
}

/// Generic network privacy index of the structure.
///
/// # Safety
/// `structure` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_generic_privacy_index(
    structure: *const IvpStructure,
    samples: usize,
    seed: u64,
    out: *mut i64,
) -> IvpStatus {
    guard(|| {
        let s = &deref(structure, "structure")?.0;
        let r = generic::generic_privacy_index(s, &GenericSampler::new(samples, seed)?)?;
        write(out, r.report.index, "out")
    })
}

/// JSON report with the whole-vector verdict and the privacy index. Release the string with
/// [`ivp_string_free`].
///
/// # Safety
/// `sys` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivp_audit_json(sys: *const IvpSystem, out: *mut *mut c_char) -> IvpStatus {
    guard(|| {
        let sys = &deref(sys, "sys")?.0;
        let report = serde_json::json!({
            "whole_vector": intrinsic::whole_vector_private(sys)?,
            "index": intrinsic::privacy_index(sys)?,
        });
        let text = CString::new(report.to_string()).expect("JSON has no NUL bytes");
        write(out, text.into_raw(), "out")
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ivp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
