//! C ABI over `barrier_ext`.
//!
//! Every fallible function returns a [`BxStatus`]; results travel through
//! out-pointers. On failure a message is kept per thread and can be copied
//! out with [`bx_last_error_message`]. Handles are opaque and must be
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use barrier_ext::barrier::{self, BarrierSchedule, HandlerKind};
use barrier_ext::segbench;
use barrier_ext::verify::{self, ConvexQp, GapCertificate};
use barrier_ext::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BxStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument outside a function's domain, e.g. the standard barrier at `z >= 0`.
    Domain = 2,
    InvalidArgument = 3,
    /// The numerical minimization behind a certificate did not converge.
    Certification = 4,
    Internal = 5,
}

/// Constraint handlers, in the same order as the Rust enum.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BxHandler {
    QuadraticPenalty = 0,
    ReluPenalty = 1,
    StandardLogBarrier = 2,
    LogBarrierExtension = 3,
}

impl From<BxHandler> for HandlerKind {
    fn from(h: BxHandler) -> Self {
        match h {
            BxHandler::QuadraticPenalty => HandlerKind::QuadraticPenalty,
            BxHandler::ReluPenalty => HandlerKind::ReluPenalty,
            BxHandler::StandardLogBarrier => HandlerKind::StandardLogBarrier,
            BxHandler::LogBarrierExtension => HandlerKind::LogBarrierExtension,
        }
    }
}

/// Opaque barrier hardness schedule.
pub struct BxSchedule(BarrierSchedule);

/// Opaque convex quadratic program `min ||θ - c||²  s.t.  Aθ <= b`.
pub struct BxQp {
    qp: ConvexQp,
    /// Strictly feasible point, when known.
    interior: Option<Vec<f64>>,
}

/// Scalar summary of a duality-gap certificate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BxCertificate {
    pub t: f64,
    pub n: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// `N / t`
    pub bound: f64,
    pub stationarity: f64,
    pub feasible: bool,
    /// Constraint counts in `f <= -1/t²`, `-1/t² < f <= 0`, `f > 0`.
    pub cases: [usize; 3],
    pub passed: bool,
}

impl From<&GapCertificate> for BxCertificate {
    fn from(c: &GapCertificate) -> Self {
        Self {
            t: c.t,
            n: c.n,
            primal: c.primal,
            dual: c.dual,
            gap: c.gap,
            bound: c.bound,
            stationarity: c.stationarity,
            feasible: c.feasible,
            cases: c.cases,
            passed: c.passed(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> BxStatus {
    match e {
        Error::Domain { .. } => BxStatus::Domain,
        Error::Certification(_) => BxStatus::Certification,
        _ => BxStatus::InvalidArgument,
    }
}

/// Run `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (BxStatus, String)>) -> BxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BxStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            BxStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (BxStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (BxStatus, String) {
    (BxStatus::NullPointer, format!("{what} is null"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (BxStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (BxStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// NUL-terminated library version.
#[no_mangle]
pub extern "C" fn bx_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(s) => s,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn bx_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Log-barrier extension value at `z` (defined for every real `z`).
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bx_psi_ext(z: f64, t: f64, out: *mut f64) -> BxStatus {
    bx_handler_value(BxHandler::LogBarrierExtension, z, t, out)
}

/// Derivative of the extension; equals the implicit dual variable.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bx_psi_ext_grad(z: f64, t: f64, out: *mut f64) -> BxStatus {
    bx_handler_grad(BxHandler::LogBarrierExtension, z, t, out)
}

/// Standard log barrier `-(1/t) log(-z)`; `BX_STATUS_DOMAIN` for `z >= 0`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bx_psi_std(z: f64, t: f64, out: *mut f64) -> BxStatus {
    bx_handler_value(BxHandler::StandardLogBarrier, z, t, out)
}

/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bx_implicit_dual(z: f64, t: f64, out: *mut f64) -> BxStatus {
    guard(|| {
        check_t(t)?;
        *out_ref(out, "out")? = barrier::implicit_dual(z, t);
        Ok(())
    })
}

fn check_t(t: f64) -> Result<(), (BxStatus, String)> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err((BxStatus::InvalidArgument, format!("t must be positive, got {t}")))
    }
}

/// Handler value `P(z)` at hardness `t` (ignored by the quadratic penalty).
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bx_handler_value(handler: BxHandler, z: f64, t: f64, out: *mut f64) -> BxStatus {
    guard(|| {
        check_t(t)?;
        *out_ref(out, "out")? = HandlerKind::from(handler).value(z, t).map_err(lib_err)?;
        Ok(())
    })
}

/// Handler derivative `P'(z)`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bx_handler_grad(handler: BxHandler, z: f64, t: f64, out: *mut f64) -> BxStatus {
    guard(|| {
        check_t(t)?;
        *out_ref(out, "out")? = HandlerKind::from(handler).grad(z, t).map_err(lib_err)?;
        Ok(())
    })
}

/// New schedule starting at `t0` and multiplied by `mu` per step.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bx_schedule_new(t0: f64, mu: f64, out: *mut *mut BxSchedule) -> BxStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let s = BarrierSchedule::new(t0, mu).map_err(lib_err)?;
        *slot = Box::into_raw(Box::new(BxSchedule(s)));
        Ok(())
    })
}

/// # Safety
/// `schedule` must come from [`bx_schedule_new`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn bx_schedule_t(schedule: *const BxSchedule, out: *mut f64) -> BxStatus {
    guard(|| {
        let s = schedule.as_ref().ok_or_else(|| null("schedule"))?;
        *out_ref(out, "out")? = s.0.t();
        Ok(())
    })
}

/// Advance by one step (one epoch).
///
/// # Safety
/// `schedule` must come from [`bx_schedule_new`].
#[no_mangle]
pub unsafe extern "C" fn bx_schedule_step(schedule: *mut BxSchedule) -> BxStatus {
    guard(|| {
        let s = schedule.as_mut().ok_or_else(|| null("schedule"))?;
        s.0 = s.0.step();
        Ok(())
    })
}

/// # Safety
/// `schedule` must be null or come from [`bx_schedule_new`], and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn bx_schedule_free(schedule: *mut BxSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// QP with objective center `center[dim]`, row-major constraint matrix
/// `rows[n * dim]` and bounds `rhs[n]`.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bx_qp_new(
    dim: usize,
    n: usize,
    center: *const f64,
    rows: *const f64,
    rhs: *const f64,
    out: *mut *mut BxQp,
) -> BxStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let center = slice(center, dim, "center")?.to_vec();
        let flat = slice(rows, n * dim, "rows")?;
        let rhs = slice(rhs, n, "rhs")?.to_vec();
        let rows = if dim == 0 { vec![Vec::new(); n] } else { flat.chunks(dim).map(<[f64]>::to_vec).collect() };
        let qp = ConvexQp::new(center, rows, rhs).map_err(lib_err)?;
        *slot = Box::into_raw(Box::new(BxQp { qp, interior: None }));
        Ok(())
    })
}

/// Random QP of the certification suite, with a known interior point.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bx_qp_random(seed: u64, index: usize, out: *mut *mut BxQp) -> BxStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let cfg = verify::SuiteConfig { seed, ..verify::SuiteConfig::default() };
        let (qp, interior) = verify::suite_instance(&cfg, index);
        *slot = Box::into_raw(Box::new(BxQp { qp, interior: Some(interior) }));
        Ok(())
    })
}

/// # Safety
/// `qp` must come from a `bx_qp_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn bx_qp_dims(qp: *const BxQp, dim: *mut usize, n: *mut usize) -> BxStatus {
    guard(|| {
        let q = qp.as_ref().ok_or_else(|| null("qp"))?;
        *out_ref(dim, "dim")? = q.qp.dim();
        *out_ref(n, "n")? = q.qp.n_constraints();
        Ok(())
    })
}

/// # Safety
/// `qp` must be null or come from a `bx_qp_*` constructor, and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn bx_qp_free(qp: *mut BxQp) {
    if !qp.is_null() {
        drop(Box::from_raw(qp));
    }
}

unsafe fn certify(
    qp: *const BxQp,
    start: *const f64,
    t: f64,
    tol: f64,
    out: *mut BxCertificate,
    theta_out: *mut f64,
    prop1: bool,
) -> BxStatus {
    guard(|| {
        let q = qp.as_ref().ok_or_else(|| null("qp"))?;
        let slot = out_ref(out, "out")?;
        let dim = q.qp.dim();
        let start: Vec<f64> = if start.is_null() {
            match (&q.interior, prop1) {
                (Some(p), true) => p.clone(),
                (_, false) => q.qp.center().to_vec(),
                (None, true) => return Err(null("start (no known interior point)")),
            }
        } else {
            slice(start, dim, "start")?.to_vec()
        };
        let cert = if prop1 {
            verify::certify_prop1(&q.qp, &start, t, tol)
        } else {
            verify::certify_prop2(&q.qp, &start, t, tol)
        }
        .map_err(lib_err)?;
        if !theta_out.is_null() {
            std::ptr::copy_nonoverlapping(cert.theta.as_ptr(), theta_out, dim);
        }
        *slot = BxCertificate::from(&cert);
        Ok(())
    })
}

/// Standard-barrier certificate (gap equals `N/t`) from a strictly feasible
/// `start[dim]`; null `start` uses the known interior point of a random QP.
/// `theta_out[dim]` may be null.
///
/// # Safety
/// Non-null pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn bx_certify_prop1(
    qp: *const BxQp,
    start: *const f64,
    t: f64,
    tol: f64,
    out: *mut BxCertificate,
    theta_out: *mut f64,
) -> BxStatus {
    certify(qp, start, t, tol, out, theta_out, true)
}

/// Extension certificate (gap at most `N/t`) from any `start[dim]`; null
/// `start` uses the objective center.
///
/// # Safety
/// Non-null pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn bx_certify_prop2(
    qp: *const BxQp,
    start: *const f64,
    t: f64,
    tol: f64,
    out: *mut BxCertificate,
    theta_out: *mut f64,
) -> BxStatus {
    certify(qp, start, t, tol, out, theta_out, false)
}

/// Dice index of two binary masks (nonzero bytes are foreground); 1 when
/// both are empty.
///
/// # Safety
/// `pred` and `gt` must be valid for `len` bytes; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bx_dice(pred: *const u8, gt: *const u8, len: usize, out: *mut f64) -> BxStatus {
    guard(|| {
        let slot = out_ref(out, "out")?;
        let p: Vec<bool> = slice(pred, len, "pred")?.iter().map(|&b| b != 0).collect();
        let g: Vec<bool> = slice(gt, len, "gt")?.iter().map(|&b| b != 0).collect();
        *slot = segbench::dice(&p, &g).map_err(lib_err)?;
        Ok(())
    })
}
