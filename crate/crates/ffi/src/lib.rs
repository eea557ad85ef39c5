//! C ABI over `rsb-core`.
//!
//! Every function returns an [`RsbStatus`]; results go through out-pointers. Model and
//! solution objects are opaque handles created by `rsb_*_new` / `rsb_solve` and released
//! with the matching `*_free`. The message of the last failure on the calling thread is
//! available from [`rsb_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rsb_core::solver::{model_map, model_pressure, solve_multistart, SolverOptions};
use rsb_core::{
    HopfieldParams, ModelParams, QuadratureSpec, RsbAnsatz, RsbError, SkParams, SolveReport,
};

/// Status codes. `RSB_STATUS_OK` is zero; everything else is a failure.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    OrderingViolation = 3,
    RangeViolation = 4,
    ShapeMismatch = 5,
    NonFiniteIntegrand = 6,
    BudgetExceeded = 7,
    SusceptibilityDivergence = 8,
    DomainError = 9,
    BracketViolation = 10,
    IndexOutOfRange = 11,
    Panic = 12,
}

impl From<&RsbError> for RsbStatus {
    fn from(e: &RsbError) -> Self {
        match e {
            RsbError::OrderingViolation(_) => RsbStatus::OrderingViolation,
            RsbError::RangeViolation(_) => RsbStatus::RangeViolation,
            RsbError::ShapeMismatch(_) => RsbStatus::ShapeMismatch,
            RsbError::NonFiniteIntegrand(_) => RsbStatus::NonFiniteIntegrand,
            RsbError::BudgetExceeded { .. } => RsbStatus::BudgetExceeded,
            RsbError::SusceptibilityDivergence { .. } => RsbStatus::SusceptibilityDivergence,
            RsbError::DomainError(_) | RsbError::DomainAtIterate { .. } => RsbStatus::DomainError,
            RsbError::BracketViolation(_) => RsbStatus::BracketViolation,
            RsbError::InvalidParameter(_) => RsbStatus::InvalidParameter,
        }
    }
}

/// Opaque model: parameters plus quadrature and solver settings.
pub struct RsbModel {
    params: ModelParams,
    spec: QuadratureSpec,
    opts: SolverOptions,
}

/// Opaque list of converged branches, highest pressure first.
pub struct RsbSolution {
    k: usize,
    branches: Vec<SolveReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: RsbStatus, msg: String) -> RsbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn guard<F: FnOnce() -> Result<(), (RsbStatus, String)>>(f: F) -> RsbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RsbStatus::Ok,
        Ok(Err((s, m))) => fail(s, m),
        Err(_) => fail(RsbStatus::Panic, "internal panic".into()),
    }
}

fn core_err(e: RsbError) -> (RsbStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (RsbStatus, String) {
    (RsbStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model_ref<'a>(m: *const RsbModel) -> Result<&'a RsbModel, (RsbStatus, String)> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (RsbStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ansatz(model: &RsbModel, k: usize, m: f64, qs: *const f64, thetas: *const f64) -> Result<RsbAnsatz, (RsbStatus, String)> {
    let qs = slice(qs, k + 1, "qs")?.to_vec();
    let thetas = slice(thetas, k, "thetas")?.to_vec();
    Ok(match model.params {
        ModelParams::Sk(_) => RsbAnsatz::sk(m, qs, thetas),
        ModelParams::Hopfield(_) => RsbAnsatz::hopfield(m, qs, vec![0.0; k + 1], thetas),
    })
}

fn boxed_model(params: ModelParams, out: *mut *mut RsbModel) -> Result<(), (RsbStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    let model = RsbModel { params, spec: QuadratureSpec::default(), opts: SolverOptions::default() };
    // SAFETY: checked non-null above; caller guarantees it is writable
    unsafe { *out = Box::into_raw(Box::new(model)) };
    Ok(())
}

/// Create an SK model with inverse temperature `beta`, signal `j0` and noise scale `j`.
///
/// # Safety
/// `out` must be a valid, writable pointer. The handle written there must be released
/// with [`rsb_model_free`].
#[no_mangle]
pub unsafe extern "C" fn rsb_model_new_sk(beta: f64, j0: f64, j: f64, out: *mut *mut RsbModel) -> RsbStatus {
    guard(|| {
        let p = SkParams::new(beta, j0, j).map_err(core_err)?;
        boxed_model(ModelParams::Sk(p), out)
    })
}

/// Create a Hopfield model with inverse temperature `beta` and load `alpha`.
///
/// # Safety
/// Same contract as [`rsb_model_new_sk`].
#[no_mangle]
pub unsafe extern "C" fn rsb_model_new_hopfield(beta: f64, alpha: f64, out: *mut *mut RsbModel) -> RsbStatus {
    guard(|| {
        let p = HopfieldParams::new(beta, alpha).map_err(core_err)?;
        boxed_model(ModelParams::Hopfield(p), out)
    })
}

/// Set the quadrature nodes per Gaussian level.
///
/// # Safety
/// `model` must be a live handle from `rsb_model_new_*`.
#[no_mangle]
pub unsafe extern "C" fn rsb_model_set_nodes(model: *mut RsbModel, nodes: usize) -> RsbStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let spec = QuadratureSpec { nodes_per_level: nodes, ..m.spec.clone() };
        spec.validate().map_err(core_err)?;
        m.spec = spec;
        Ok(())
    })
}

/// Set damping, tolerance and iteration cap of the fixed-point solver.
///
/// # Safety
/// `model` must be a live handle from `rsb_model_new_*`.
#[no_mangle]
pub unsafe extern "C" fn rsb_model_set_solver(model: *mut RsbModel, damping: f64, tol: f64, max_iter: usize) -> RsbStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let opts = SolverOptions { damping, tol, max_iter, ..m.opts.clone() };
        opts.validate().map_err(core_err)?;
        m.opts = opts;
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from `rsb_model_new_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rsb_model_free(model: *mut RsbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Quenched pressure at level `k` for magnetization `m`, overlaps `qs` (k+1 values) and
/// Parisi parameters `thetas` (k values). Hopfield `p`s follow from the `q`s.
///
/// # Safety
/// `model` must be live; `qs` must point to k+1 and `thetas` to k readable doubles
/// (`thetas` may be null when k = 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsb_pressure(
    model: *const RsbModel,
    k: usize,
    m: f64,
    qs: *const f64,
    thetas: *const f64,
    out: *mut f64,
) -> RsbStatus {
    guard(|| {
        let model = model_ref(model)?;
        let a = ansatz(model, k, m, qs, thetas)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = model_pressure(&model.params, &a, &model.spec).map_err(core_err)?;
        Ok(())
    })
}

/// One application of the self-consistency map. Writes m' to `out_m` and the k+1
/// values q' to `out_qs`.
///
/// # Safety
/// As for [`rsb_pressure`]; `out_m` must be writable and `out_qs` must have room for
/// k+1 doubles.
#[no_mangle]
pub unsafe extern "C" fn rsb_sce_map(
    model: *const RsbModel,
    k: usize,
    m: f64,
    qs: *const f64,
    thetas: *const f64,
    out_m: *mut f64,
    out_qs: *mut f64,
) -> RsbStatus {
    guard(|| {
        let model = model_ref(model)?;
        let a = ansatz(model, k, m, qs, thetas)?;
        if out_m.is_null() || out_qs.is_null() {
            return Err(null("output buffer"));
        }
        let next = model_map(&model.params, &a, &model.spec).map_err(core_err)?;
        *out_m = next.m;
        std::slice::from_raw_parts_mut(out_qs, k + 1).copy_from_slice(&next.qs);
        Ok(())
    })
}

/// Solve from the default starts at level `k` with fixed `thetas` (k values). The
/// converged branches, highest pressure first, go into a new solution handle; zero
/// branches is not an error.
///
/// # Safety
/// `model` must be live, `thetas` must point to k readable doubles (null allowed when
/// k = 0) and `out` must be writable. Release the result with [`rsb_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn rsb_solve(
    model: *const RsbModel,
    k: usize,
    thetas: *const f64,
    out: *mut *mut RsbSolution,
) -> RsbStatus {
    guard(|| {
        let model = model_ref(model)?;
        let thetas = slice(thetas, k, "thetas")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut branches = Vec::new();
        let mut first_err = None;
        for r in solve_multistart(&model.params, thetas, &model.spec, &model.opts) {
            match r {
                Ok(r) if r.converged => branches.push(r),
                Ok(_) => {}
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        // input errors fail every start the same way; report them rather than an empty list
        if branches.is_empty() {
            if let Some(e @ (RsbError::InvalidParameter(_) | RsbError::ShapeMismatch(_) | RsbError::OrderingViolation(_) | RsbError::RangeViolation(_))) = first_err {
                return Err(core_err(e));
            }
        }
        branches.sort_by(|a, b| b.pressure.total_cmp(&a.pressure));
        *out = Box::into_raw(Box::new(RsbSolution { k, branches }));
        Ok(())
    })
}

/// Number of converged branches.
///
/// # Safety
/// `solution` must be a live handle from [`rsb_solve`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rsb_solution_count(solution: *const RsbSolution, out: *mut usize) -> RsbStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = s.branches.len();
        Ok(())
    })
}

/// Read branch `index`: magnetization, k+1 overlaps, pressure and final residual.
///
/// # Safety
/// `solution` must be live; `out_m`, `out_pressure` and `out_residual` must be
/// writable and `out_qs` must have room for k+1 doubles.
#[no_mangle]
pub unsafe extern "C" fn rsb_solution_branch(
    solution: *const RsbSolution,
    index: usize,
    out_m: *mut f64,
    out_qs: *mut f64,
    out_pressure: *mut f64,
    out_residual: *mut f64,
) -> RsbStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        let b = s.branches.get(index).ok_or_else(|| {
            (RsbStatus::IndexOutOfRange, format!("branch {index} of {}", s.branches.len()))
        })?;
        if out_m.is_null() || out_qs.is_null() || out_pressure.is_null() || out_residual.is_null() {
            return Err(null("output buffer"));
        }
        *out_m = b.ansatz.m;
        std::slice::from_raw_parts_mut(out_qs, s.k + 1).copy_from_slice(&b.ansatz.qs);
        *out_pressure = b.pressure;
        *out_residual = b.residual;
        Ok(())
    })
}

/// Release a solution. Null is ignored.
///
/// # Safety
/// `solution` must be null or a handle from [`rsb_solve`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rsb_solution_free(solution: *mut RsbSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Copy the last error message of this thread into `buf` (NUL-terminated, truncated
/// to `len - 1` bytes). Returns the full message length in bytes, excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rsb_last_error_message(buf: *mut c_char, len: usize) -> usize {
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

static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
    Ok(s) => s,
    Err(_) => panic!("version string"),
};

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rsb_version() -> *const c_char {
    VERSION.as_ptr()
}
