//! C ABI over `oncolyap`.
//!
//! Conventions:
//! - every fallible function returns an [`OlStatus`]; on failure a message
//!   is kept per thread and read with [`ol_last_error_message`];
//! - handles (`OlParams`, `OlTrajectory`, `OlCertificate`) are opaque,
//!   created by the library and released with their `_free` function;
//! - outputs go through caller-provided pointers and are written only on
//!   success;
//! - strings returned by the library are released with [`ol_string_free`].
//!
//! Equilibria are selected by index: 0 for the trivial point, 1 for the
//! tumor-only point, 2 for the tumor-free point.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use oncolyap::lyapunov::{self, CertificateOptions};
use oncolyap::model::{self, DrugSchedule, ModelParams, SystemState};
use oncolyap::multipoint::{self, MultipointSpec};
use oncolyap::sim::{self, Trajectory};
use oncolyap::stability::{self, Equilibrium, LocalLabel};
use oncolyap::{Error, LyapunovCertificate, Matrix3, Tolerance};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    /// Integration failure: singularity, step underflow or divergence.
    Integration = 4,
    /// Linear algebra failure or an equilibrium that is not stable.
    Stability = 5,
    /// Certificate search found no clean radius.
    Certificate = 6,
    /// Multipoint solver failure (including infeasible solutions).
    Solver = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OlLabel {
    Stable = 0,
    Unstable = 1,
    NonHyperbolic = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OlMethod {
    Picard = 0,
    Newton = 1,
}

/// Validated model parameters.
pub struct OlParams(ModelParams);

/// Dense trajectory of `(x1, x2, x3, u)`.
pub struct OlTrajectory(Trajectory);

/// Quadratic Lyapunov certificate around a boundary equilibrium.
pub struct OlCertificate(LyapunovCertificate);

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> OlStatus {
    match e {
        Error::Domain(_) | Error::InvalidParams(_) | Error::MissingDimensional => OlStatus::InvalidArgument,
        Error::Json(_) | Error::Io(_) => OlStatus::Parse,
        Error::Singularity { .. } | Error::StepSizeUnderflow { .. } | Error::Diverged { .. } => OlStatus::Integration,
        Error::NoUniqueSolution(..) | Error::NotPositiveDefinite(_) | Error::NotStable(_) => OlStatus::Stability,
        Error::EmptyCertificate | Error::InsufficientCoverage { .. } => OlStatus::Certificate,
        Error::NonContraction { .. } | Error::Infeasible { .. } | Error::SingularNewton | Error::NoProgress { .. } => {
            OlStatus::Solver
        }
    }
}

struct Fail(OlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Fail {
    Fail(OlStatus::NullPointer, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(OlStatus::InvalidArgument, msg.into())
}

/// Run `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OlStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            OlStatus::Panic
        }
    }
}

unsafe fn read<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn read_array<const N: usize>(p: *const f64, name: &str) -> Result<[f64; N], Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    let mut out = [0.0; N];
    out.copy_from_slice(std::slice::from_raw_parts(p, N));
    Ok(out)
}

unsafe fn write_array(p: *mut f64, values: &[f64], name: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    std::slice::from_raw_parts_mut(p, values.len()).copy_from_slice(values);
    Ok(())
}

unsafe fn write_out<T>(p: *mut T, v: T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(v);
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(Box::into_raw(Box::new(v)));
    Ok(())
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(OlStatus::Parse, format!("{name} is not UTF-8")))
}

fn pick(params: &ModelParams, dose: f64, which: u32) -> Result<Equilibrium, Fail> {
    let eqs = stability::boundary_equilibria(params, dose)?;
    eqs.get(which as usize).copied().ok_or_else(|| invalid(format!("equilibrium index {which} out of range 0..=2")))
}

fn boxed_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s).map(CString::into_raw).map_err(|_| invalid("string contains NUL"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ol_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the calling thread's last error message, or NULL when the last
/// call succeeded. Release with [`ol_string_free`].
#[no_mangle]
pub extern "C" fn ol_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_deref() {
        Some(m) => CString::new(m.replace('\0', " ")).map(CString::into_raw).unwrap_or(std::ptr::null_mut()),
        None => std::ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ol_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse and validate parameters from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ol_params_from_json(json: *const c_char, out: *mut *mut OlParams) -> OlStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        let p = ModelParams::from_json(text).map_err(|e| match e {
            Error::Json(_) => Fail(OlStatus::Parse, e.to_string()),
            e => Fail::from(e),
        })?;
        put_handle(out, OlParams(p))
    })
}

/// The shipped illustrative parameter set.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ol_params_illustrative(out: *mut *mut OlParams) -> OlStatus {
    guard(|| put_handle(out, OlParams(ModelParams::illustrative())))
}

/// # Safety
/// `p` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ol_params_free(p: *mut OlParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Fractional kills `g_1..g_3` at drug amount `u` into `out[3]`.
///
/// # Safety
/// `params` must be a live handle and `out` point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ol_response_eval(params: *const OlParams, u: f64, out: *mut f64) -> OlStatus {
    guard(|| {
        let p = read(params, "params")?;
        let g = model::response_eval(&p.0.response, u)?;
        write_array(out, &g, "out")
    })
}

/// Right-hand side at `state[4] = (x1, x2, x3, u)` with infusion `v`.
///
/// # Safety
/// `state` and `out` must each point to 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn ol_vector_field(params: *const OlParams, state: *const f64, v: f64, out: *mut f64) -> OlStatus {
    guard(|| {
        let p = read(params, "params")?;
        let y = read_array::<4>(state, "state")?;
        let f = model::vector_field(&SystemState::from_array(y), &p.0, v)?;
        write_array(out, &f, "out")
    })
}

/// Cell-block Jacobian at `x[3]` and drug amount `u`, row-major into `out[9]`.
///
/// # Safety
/// `x` must point to 3 doubles and `out` to 9.
#[no_mangle]
pub unsafe extern "C" fn ol_jacobian(params: *const OlParams, x: *const f64, u: f64, out: *mut f64) -> OlStatus {
    guard(|| {
        let p = read(params, "params")?;
        let x = read_array::<3>(x, "x")?;
        let j = model::jacobian(&SystemState::from_cells(x, u), &p.0, u)?;
        let rows: Vec<f64> = (0..3).flat_map(|r| (0..3).map(move |c| j[(r, c)])).collect();
        write_array(out, &rows, "out")
    })
}

/// Integrate from `y0[4]` over `[t0, tf]` under constant infusion `v`.
///
/// # Safety
/// `y0` must point to 4 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ol_integrate(
    params: *const OlParams,
    y0: *const f64,
    t0: f64,
    tf: f64,
    v: f64,
    abs_tol: f64,
    rel_tol: f64,
    out: *mut *mut OlTrajectory,
) -> OlStatus {
    guard(|| {
        let p = read(params, "params")?;
        let y = read_array::<4>(y0, "y0")?;
        let schedule = if v == 0.0 { DrugSchedule::Zero } else { DrugSchedule::constant(v) };
        let traj = sim::integrate(&SystemState::from_array(y), &p.0, &schedule, (t0, tf), Tolerance::new(abs_tol, rel_tol))?;
        put_handle(out, OlTrajectory(traj))
    })
}

/// Number of accepted steps including the initial point; 0 for NULL.
///
/// # Safety
/// `traj` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ol_trajectory_len(traj: *const OlTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.len())
}

/// Time and state of step `i`.
///
/// # Safety
/// `traj` must be live, `t` writable and `state` point to 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn ol_trajectory_point(traj: *const OlTrajectory, i: usize, t: *mut f64, state: *mut f64) -> OlStatus {
    guard(|| {
        let tr = &read(traj, "traj")?.0;
        if t.is_null() || state.is_null() {
            return Err(null(if t.is_null() { "t" } else { "state" }));
        }
        if i >= tr.len() {
            return Err(invalid(format!("index {i} out of range (len {})", tr.len())));
        }
        write_out(t, tr.times()[i], "t")?;
        write_array(state, &tr.state(i).to_array(), "state")
    })
}

/// Dense-output state at time `t` inside the integrated span.
///
/// # Safety
/// `traj` must be live and `state` point to 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn ol_trajectory_state_at(traj: *const OlTrajectory, t: f64, state: *mut f64) -> OlStatus {
    guard(|| {
        let tr = &read(traj, "traj")?.0;
        if !(t >= tr.start_time() && t <= tr.end_time()) {
            return Err(invalid(format!("t = {t} outside [{}, {}]", tr.start_time(), tr.end_time())));
        }
        write_array(state, &tr.state_at(t).to_array(), "state")
    })
}

/// # Safety
/// `traj` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ol_trajectory_free(traj: *mut OlTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// The three boundary equilibria at constant infusion `dose`: points into
/// `points[9]` (row per equilibrium) and feasibility flags into
/// `feasible[3]`.
///
/// # Safety
/// `points` must point to 9 doubles and `feasible` to 3 bytes.
#[no_mangle]
pub unsafe extern "C" fn ol_boundary_equilibria(
    params: *const OlParams,
    dose: f64,
    points: *mut f64,
    feasible: *mut u8,
) -> OlStatus {
    guard(|| {
        let p = read(params, "params")?;
        if feasible.is_null() {
            return Err(null("feasible"));
        }
        let eqs = stability::boundary_equilibria(&p.0, dose)?;
        let flat: Vec<f64> = eqs.iter().flat_map(|e| e.point).collect();
        write_array(points, &flat, "points")?;
        for (i, e) in eqs.iter().enumerate() {
            feasible.add(i).write(u8::from(e.feasible));
        }
        Ok(())
    })
}

/// Local classification of boundary equilibrium `which`. Eigenvalues go to
/// `eigs[6]` as `(re, im)` pairs sorted by descending real part.
///
/// # Safety
/// `eigs` must point to 6 doubles and `label` be writable.
#[no_mangle]
pub unsafe extern "C" fn ol_classify(
    params: *const OlParams,
    dose: f64,
    which: u32,
    eps_eig: f64,
    eigs: *mut f64,
    label: *mut OlLabel,
) -> OlStatus {
    guard(|| {
        let p = read(params, "params")?;
        if label.is_null() || eigs.is_null() {
            return Err(null(if label.is_null() { "label" } else { "eigs" }));
        }
        let eq = pick(&p.0, dose, which)?;
        let report = stability::classify(&eq, &p.0, dose, eps_eig)?;
        let flat: Vec<f64> = report.eigenvalues.iter().flatten().copied().collect();
        write_array(eigs, &flat, "eigs")?;
        label.write(match report.label {
            LocalLabel::LocallyAsymptoticallyStable => OlLabel::Stable,
            LocalLabel::Unstable => OlLabel::Unstable,
            LocalLabel::NonHyperbolic => OlLabel::NonHyperbolic,
        });
        Ok(())
    })
}

/// Solve `B A + Aᵀ B = -I` for row-major `a[9]` into `b[9]`.
///
/// # Safety
/// `a` and `b` must each point to 9 doubles.
#[no_mangle]
pub unsafe extern "C" fn ol_solve_lyapunov(a: *const f64, b: *mut f64) -> OlStatus {
    guard(|| {
        let a = read_array::<9>(a, "a")?;
        let m = Matrix3::from_row_slice(&a);
        let sol = lyapunov::solve_lyapunov(&m)?;
        let rows: Vec<f64> = (0..3).flat_map(|r| (0..3).map(move |c| sol[(r, c)])).collect();
        write_array(b, &rows, "b")
    })
}

/// Build a certificate for boundary equilibrium `which` inside the box
/// `[0, box_bounds[i]]`.
///
/// # Safety
/// `box_bounds` must point to 3 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ol_certificate_build(
    params: *const OlParams,
    dose: f64,
    which: u32,
    box_bounds: *const f64,
    budget: usize,
    seed: u64,
    out: *mut *mut OlCertificate,
) -> OlStatus {
    guard(|| {
        let p = read(params, "params")?;
        let box_bounds = read_array::<3>(box_bounds, "box_bounds")?;
        let eq = pick(&p.0, dose, which)?;
        let opts = CertificateOptions { box_bounds, budget, seed, ..Default::default() };
        let cert = lyapunov::build_certificate_with(&eq, &p.0, dose, &opts)?;
        put_handle(out, OlCertificate(cert))
    })
}

/// Radius `r` and level `C` of a certificate.
///
/// # Safety
/// `cert` must be live; `r` and `c` writable.
#[no_mangle]
pub unsafe extern "C" fn ol_certificate_level(cert: *const OlCertificate, r: *mut f64, c: *mut f64) -> OlStatus {
    guard(|| {
        let cert = &read(cert, "cert")?.0;
        if c.is_null() {
            return Err(null("c"));
        }
        write_out(r, cert.r, "r")?;
        write_out(c, cert.c, "c")
    })
}

/// Whether `x[3]` lies in the certified set.
///
/// # Safety
/// `x` must point to 3 doubles; `inside` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ol_certificate_contains(cert: *const OlCertificate, x: *const f64, inside: *mut u8) -> OlStatus {
    guard(|| {
        let cert = &read(cert, "cert")?.0;
        let x = read_array::<3>(x, "x")?;
        write_out(inside, u8::from(lyapunov::level_set_contains(cert, &x)), "inside")
    })
}

/// JSON form of a certificate. Release with [`ol_string_free`].
///
/// # Safety
/// `cert` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ol_certificate_to_json(cert: *const OlCertificate, out: *mut *mut c_char) -> OlStatus {
    guard(|| {
        let cert = &read(cert, "cert")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(boxed_string(cert.to_json()?)?);
        Ok(())
    })
}

/// # Safety
/// `cert` must be NULL or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn ol_certificate_free(cert: *mut OlCertificate) {
    if !cert.is_null() {
        drop(Box::from_raw(cert));
    }
}

/// Solve a multipoint problem given as JSON
/// (`{"t0", "T", "nodes", "alpha", "x0", "u0"}`) under constant infusion
/// `v`. Writes the initial cell state to `y[3]` and the final residual.
///
/// # Safety
/// `spec_json` must be NUL-terminated; `y` must point to 3 doubles and
/// `residual` be writable.
#[no_mangle]
pub unsafe extern "C" fn ol_multipoint_solve(
    params: *const OlParams,
    spec_json: *const c_char,
    v: f64,
    method: OlMethod,
    tol: f64,
    max_iter: usize,
    y: *mut f64,
    residual: *mut f64,
) -> OlStatus {
    guard(|| {
        let p = read(params, "params")?;
        if residual.is_null() {
            return Err(null("residual"));
        }
        let spec: MultipointSpec = serde_json::from_str(read_str(spec_json, "spec_json")?)
            .map_err(|e| Fail(OlStatus::Parse, e.to_string()))?;
        let schedule = if v == 0.0 { DrugSchedule::Zero } else { DrugSchedule::constant(v) };
        let sol = match method {
            OlMethod::Picard => multipoint::solve_picard(&spec, &p.0, &schedule, tol, max_iter),
            OlMethod::Newton => multipoint::solve_newton(&spec, &p.0, &schedule, tol, max_iter),
        }?;
        write_array(y, &sol.y, "y")?;
        write_out(residual, sol.residual, "residual")
    })
}

