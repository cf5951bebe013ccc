//! C ABI over the simulator: capacitance kernels, transport distances and a
//! steppable density flow behind opaque handles.
//!
//! Every fallible function returns a [`CmStatus`]; on failure the message is
//! available from [`cm_last_error_message`] on the same thread. Panics are
//! caught at the boundary and reported as [`CmStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use chiplet_meanfield::cli::{parse_config_str, RunConfig};
use chiplet_meanfield::grid::{DensityField, Point};
use chiplet_meanfield::meanfield::{energy, explicit_fd_step, jko_step, Stepper};
use chiplet_meanfield::model::{CapacitanceModel, ErfTerm, InteractionModel, KernelRole};
use chiplet_meanfield::transport::{exact_w2, sinkhorn_w2, DiscreteMeasure};
use chiplet_meanfield::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Convergence = 4,
    Numerical = 5,
    Capacity = 6,
    Io = 7,
    Panic = 8,
}

/// Which interaction a capacitance kernel describes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmKernelRole {
    ChipletChiplet = 0,
    ChipletElectrode = 1,
}

/// Opaque capacitance kernel.
pub struct CmCapacitance(CapacitanceModel);

/// Opaque density flow built from a JSON run config.
pub struct CmFlow {
    model: InteractionModel,
    stepper: Stepper,
    beta: f64,
    density: DensityField,
    t: f64,
    step: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CmStatus {
    match err {
        Error::Config { .. } | Error::Json(_) => CmStatus::Config,
        Error::Domain(_) | Error::Validation(_) => CmStatus::InvalidArgument,
        Error::Convergence { .. } => CmStatus::Convergence,
        Error::Numerical(_) | Error::NumericalBlowup { .. } => CmStatus::Numerical,
        Error::Capacity { .. } => CmStatus::Capacity,
        Error::Io(_) => CmStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Run `f`, translating errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CmStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            CmStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_last_error(msg);
            CmStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            CmStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller promises `len` readable doubles at `ptr`.
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

fn out_ptr<'a, T>(ptr: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: non-null output pointers must be valid for writes per the API contract.
    unsafe { ptr.as_mut() }.ok_or(Failure::Null(what))
}

unsafe fn measure(xy: *const f64, w: *const f64, n: usize, what: &'static str) -> Result<DiscreteMeasure, Failure> {
    let xy = unsafe { slice(xy, 2 * n, what)? };
    let w = unsafe { slice(w, n, what)? };
    let pts: Vec<Point> = xy.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    Ok(DiscreteMeasure::new(pts, w.to_vec())?)
}

/// Message of the last failed call on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn cm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build a kernel from `n` explicit `(a[k], c[k])` terms.
///
/// # Safety
/// `a` and `c` must point to `n` doubles; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cm_capacitance_new(
    a: *const f64,
    c: *const f64,
    n: usize,
    delta: f64,
    role: CmKernelRole,
    out: *mut *mut CmCapacitance,
) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let a = unsafe { slice(a, n, "a")? };
        let c = unsafe { slice(c, n, "c")? };
        let terms = a.iter().zip(c).map(|(&a, &c)| ErfTerm { a, c }).collect();
        let role = match role {
            CmKernelRole::ChipletChiplet => KernelRole::ChipletChiplet,
            CmKernelRole::ChipletElectrode => KernelRole::ChipletElectrode,
        };
        let model = CapacitanceModel::new(terms, delta, role)?;
        *out = Box::into_raw(Box::new(CmCapacitance(model)));
        Ok(())
    })
}

/// Sample the chiplet-chiplet and chiplet-electrode kernels from one seed.
///
/// # Safety
/// `cc_out` and `ce_out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cm_capacitance_sample(
    seed: u64,
    terms: usize,
    delta: f64,
    cc_out: *mut *mut CmCapacitance,
    ce_out: *mut *mut CmCapacitance,
) -> CmStatus {
    guard(|| {
        let cc_out = out_ptr(cc_out, "cc_out")?;
        let ce_out = out_ptr(ce_out, "ce_out")?;
        let (cc, ce) = CapacitanceModel::sample_pair(seed, terms, delta)?;
        *cc_out = Box::into_raw(Box::new(CmCapacitance(cc)));
        *ce_out = Box::into_raw(Box::new(CmCapacitance(ce)));
        Ok(())
    })
}

/// Kernel value at separation `r >= 0` (mm).
///
/// # Safety
/// `handle` must come from this library and not be freed; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cm_capacitance_value(handle: *const CmCapacitance, r: f64, out: *mut f64) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let h = unsafe { handle.as_ref() }.ok_or(Failure::Null("handle"))?;
        *out = chiplet_meanfield::model::capacitance(&h.0, r)?;
        Ok(())
    })
}

/// Number of erf terms in a kernel, or 0 for NULL.
///
/// # Safety
/// `handle` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cm_capacitance_term_count(handle: *const CmCapacitance) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.0.terms().len())
}

/// Release a kernel. NULL is ignored.
///
/// # Safety
/// `handle` must be NULL or a handle from this library that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cm_capacitance_free(handle: *mut CmCapacitance) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Exact 2-Wasserstein distance between two small weighted point clouds.
///
/// Points are interleaved `x0, y0, x1, y1, ...`; weights must each sum to one.
/// Instances with more than 64 coupling entries return `Capacity`.
///
/// # Safety
/// `xy_a` holds `2 n_a` doubles and `w_a` holds `n_a` (likewise for `b`); `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cm_exact_w2(
    xy_a: *const f64,
    w_a: *const f64,
    n_a: usize,
    xy_b: *const f64,
    w_b: *const f64,
    n_b: usize,
    out: *mut f64,
) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let a = unsafe { measure(xy_a, w_a, n_a, "a")? };
        let b = unsafe { measure(xy_b, w_b, n_b, "b")? };
        *out = exact_w2(&a, &b)?.0;
        Ok(())
    })
}

/// Entropic transport cost `sum P_ij |x_i - y_j|^2` (a squared distance).
///
/// # Safety
/// Same layout as [`cm_exact_w2`].
#[no_mangle]
pub unsafe extern "C" fn cm_sinkhorn_w2(
    xy_a: *const f64,
    w_a: *const f64,
    n_a: usize,
    xy_b: *const f64,
    w_b: *const f64,
    n_b: usize,
    eps: f64,
    tol: f64,
    max_iter: usize,
    out: *mut f64,
) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let a = unsafe { measure(xy_a, w_a, n_a, "a")? };
        let b = unsafe { measure(xy_b, w_b, n_b, "b")? };
        *out = sinkhorn_w2(&a, &b, eps, tol, max_iter)?.0;
        Ok(())
    })
}

/// Create a flow from JSON config text (`"{}"` gives the defaults).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cm_flow_new(config_json: *const c_char, out: *mut *mut CmFlow) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if config_json.is_null() {
            return Err(Failure::Null("config_json"));
        }
        let text = unsafe { CStr::from_ptr(config_json) }
            .to_str()
            .map_err(|e| Failure::Invalid(format!("config is not UTF-8: {e}")))?;
        let cfg: RunConfig = parse_config_str(text)?;
        let model = cfg.build_model()?;
        let density = cfg.initial_density(*model.grid())?;
        let stepper = cfg.stepper(&model)?;
        *out = Box::into_raw(Box::new(CmFlow {
            stepper,
            beta: cfg.beta(),
            density,
            t: 0.0,
            step: 0,
            model,
        }));
        Ok(())
    })
}

fn flow_mut<'a>(handle: *mut CmFlow) -> Result<&'a mut CmFlow, Failure> {
    // SAFETY: handles are only created by `cm_flow_new`.
    unsafe { handle.as_mut() }.ok_or(Failure::Null("handle"))
}

fn flow_ref<'a>(handle: *const CmFlow) -> Result<&'a CmFlow, Failure> {
    // SAFETY: as above.
    unsafe { handle.as_ref() }.ok_or(Failure::Null("handle"))
}

/// Advance the flow by `steps` steps. On failure the state stays at the last good step.
///
/// # Safety
/// `handle` must be a live flow handle.
#[no_mangle]
pub unsafe extern "C" fn cm_flow_step(handle: *mut CmFlow, steps: usize) -> CmStatus {
    guard(|| {
        let f = flow_mut(handle)?;
        let dt = f.stepper.dt();
        for _ in 0..steps {
            let next = match &f.stepper {
                Stepper::Jko(cfg) => jko_step(&f.density, &f.model, f.t, f.beta, cfg)?.density,
                Stepper::ExplicitFd { dt } => explicit_fd_step(&f.density, &f.model, f.t, f.beta, *dt)?.density,
            };
            f.density = next;
            f.step += 1;
            f.t = f.step as f64 * dt;
        }
        Ok(())
    })
}

/// Total free energy of the current density.
///
/// # Safety
/// `handle` must be a live flow handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cm_flow_energy(handle: *const CmFlow, out: *mut f64) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let f = flow_ref(handle)?;
        *out = energy(&f.model.context(f.density.clone(), f.t)?, f.beta).total;
        Ok(())
    })
}

/// Current time.
///
/// # Safety
/// `handle` must be a live flow handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn cm_flow_time(handle: *const CmFlow, out: *mut f64) -> CmStatus {
    guard(|| {
        *out_ptr(out, "out")? = flow_ref(handle)?.t;
        Ok(())
    })
}

/// Grid shape `nx`, `ny`; the density buffer has `nx * ny` entries, x fastest.
///
/// # Safety
/// `handle` must be a live flow handle; `nx` and `ny` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cm_flow_grid_shape(handle: *const CmFlow, nx: *mut usize, ny: *mut usize) -> CmStatus {
    guard(|| {
        let g = *flow_ref(handle)?.model.grid();
        *out_ptr(nx, "nx")? = g.nx();
        *out_ptr(ny, "ny")? = g.ny();
        Ok(())
    })
}

/// Copy the nodal density values into `buf`, which must hold exactly `nx * ny` doubles.
///
/// # Safety
/// `handle` must be a live flow handle; `buf` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn cm_flow_density(handle: *const CmFlow, buf: *mut f64, len: usize) -> CmStatus {
    guard(|| {
        let f = flow_ref(handle)?;
        let values = f.density.values();
        if len != values.len() {
            return Err(Failure::Invalid(format!("buffer holds {len} values, density has {}", values.len())));
        }
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        // SAFETY: checked non-null, and the caller guarantees `len` writable doubles.
        unsafe { std::slice::from_raw_parts_mut(buf, len) }.copy_from_slice(values);
        Ok(())
    })
}

/// Release a flow. NULL is ignored.
///
/// # Safety
/// `handle` must be NULL or a flow handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cm_flow_free(handle: *mut CmFlow) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}
