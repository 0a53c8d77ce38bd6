//! C ABI over the thermocloak library.
//!
//! Every fallible call returns a [`TcStatus`]. On failure the message is kept
//! per thread and can be read with [`tc_last_error`]. Handles are opaque and
//! must be released with their `_free` function; passing NULL to a `_free`
//! function is allowed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use thermocloak::config;
use thermocloak::geometry::{build_cell_mesh, UnitCellGeometry};
use thermocloak::homogenization::{self, CellMaterialField, CellSolver, EffectiveTensor};
use thermocloak::levelset::{self, LevelSetField};
use thermocloak::optimizer::Optimizer;
use thermocloak::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Solver = 4,
    Io = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TcStatus {
    if e.is_config_error() {
        TcStatus::Config
    } else if e.is_solver_failure() {
        TcStatus::Solver
    } else {
        match e {
            Error::Io(_) | Error::Checkpoint { .. } => TcStatus::Io,
            _ => TcStatus::InvalidInput,
        }
    }
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TcStatus::Panic
        }
    }
}

struct Failure(TcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(TcStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(TcStatus::InvalidInput, msg.into())
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Smoothed characteristic function of a level-set value.
#[no_mangle]
pub extern "C" fn tc_characteristic(phi: f64, d: f64) -> f64 {
    levelset::characteristic(phi, d)
}

/// Principal values and angle (degrees) of a symmetric 2×2 tensor.
///
/// # Safety
/// Output pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tc_diagonalize(
    k11: f64,
    k12: f64,
    k22: f64,
    kbar1: *mut f64,
    kbar2: *mut f64,
    theta_deg: *mut f64,
) -> TcStatus {
    guard(|| {
        if ![k11, k12, k22].iter().all(|v| v.is_finite()) {
            return Err(invalid("tensor entries must be finite"));
        }
        let (a, b, t) = homogenization::diagonalize([[k11, k12], [k12, k22]]);
        *out(kbar1, "kbar1")? = a;
        *out(kbar2, "kbar2")? = b;
        *out(theta_deg, "theta_deg")? = t;
        Ok(())
    })
}

/// A structured periodic unit-cell mesh with its factorization pattern.
pub struct TcCell {
    solver: CellSolver,
}

/// Builds a cell with `resolution` elements per side (even, at least 16).
///
/// # Safety
/// `cell` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tc_cell_new(resolution: usize, cell: *mut *mut TcCell) -> TcStatus {
    guard(|| {
        let slot = out(cell, "cell")?;
        let mesh = build_cell_mesh(&UnitCellGeometry::new(resolution))?;
        *slot = Box::into_raw(Box::new(TcCell { solver: CellSolver::new(mesh)? }));
        Ok(())
    })
}

/// # Safety
/// `cell` must come from [`tc_cell_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tc_cell_free(cell: *mut TcCell) {
    if !cell.is_null() {
        drop(Box::from_raw(cell));
    }
}

/// # Safety
/// `cell` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn tc_cell_num_nodes(cell: *const TcCell) -> usize {
    cell.as_ref().map_or(0, |c| c.solver.mesh().num_nodes())
}

/// # Safety
/// `cell` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn tc_cell_num_elements(cell: *const TcCell) -> usize {
    cell.as_ref().map_or(0, |c| c.solver.mesh().num_elements())
}

fn write_tensor(t: &EffectiveTensor, k: &mut [f64]) {
    k.copy_from_slice(&[t.k11, t.k12, t.k22]);
}

/// Effective tensor `(K11, K12, K22)` for element-wise phase fractions `chi`
/// (1 selects `k_a`, 0 selects `k_b`).
///
/// # Safety
/// `chi` must hold `n` values; `k_out` must have room for 3.
#[no_mangle]
pub unsafe extern "C" fn tc_cell_homogenize(
    cell: *const TcCell,
    chi: *const f64,
    n: usize,
    k_a: f64,
    k_b: f64,
    k_out: *mut f64,
) -> TcStatus {
    guard(|| {
        let c = cell.as_ref().ok_or_else(|| null("cell"))?;
        let chi = slice(chi, n, "chi")?;
        if n != c.solver.mesh().num_elements() {
            return Err(invalid(format!("{n} values for {} elements", c.solver.mesh().num_elements())));
        }
        if k_out.is_null() {
            return Err(null("k_out"));
        }
        let sol = c.solver.solve(&CellMaterialField::new(chi.to_vec(), k_a, k_b)?)?;
        write_tensor(&sol.tensor, std::slice::from_raw_parts_mut(k_out, 3));
        Ok(())
    })
}

/// Effective tensor for nodal level-set values `phi` at transition width `d`.
///
/// # Safety
/// `phi` must hold `n` values; `k_out` must have room for 3.
#[no_mangle]
pub unsafe extern "C" fn tc_cell_homogenize_phi(
    cell: *const TcCell,
    phi: *const f64,
    n: usize,
    d: f64,
    k_a: f64,
    k_b: f64,
    k_out: *mut f64,
) -> TcStatus {
    guard(|| {
        let c = cell.as_ref().ok_or_else(|| null("cell"))?;
        let phi = slice(phi, n, "phi")?;
        let mesh = c.solver.mesh();
        if n != mesh.num_nodes() {
            return Err(invalid(format!("{n} values for {} nodes", mesh.num_nodes())));
        }
        if !(d > 0.0 && d < 1.0) {
            return Err(invalid(format!("transition width d = {d} is outside (0, 1)")));
        }
        if k_out.is_null() {
            return Err(null("k_out"));
        }
        let field = LevelSetField { phi: phi.to_vec(), cell_index: 0 };
        let sol = c.solver.solve(&CellMaterialField::new(field.element_chi(mesh, d), k_a, k_b)?)?;
        write_tensor(&sol.tensor, std::slice::from_raw_parts_mut(k_out, 3));
        Ok(())
    })
}

/// An optimization run.
pub struct TcRun {
    opt: Optimizer,
}

fn new_run(run: *mut *mut TcRun, text: &str, origin: &str) -> Result<(), Failure> {
    let slot = unsafe { out(run, "run")? };
    let cfg = config::parse(text, origin)?;
    *slot = Box::into_raw(Box::new(TcRun { opt: Optimizer::new(cfg.scenario)? }));
    Ok(())
}

/// Starts a run from TOML config text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `run` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tc_run_from_config(toml: *const c_char, run: *mut *mut TcRun) -> TcStatus {
    guard(|| new_run(run, &string(toml, "toml")?, "config"))
}

/// Starts a run from a bundled scenario such as `"scenario_w1"`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `run` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tc_run_bundled(name: *const c_char, run: *mut *mut TcRun) -> TcStatus {
    guard(|| {
        let name = string(name, "name")?;
        let text = config::bundled(&name).ok_or_else(|| Failure(TcStatus::Config, format!("no bundled scenario `{name}`")))?;
        new_run(run, text, &name)
    })
}

/// Continues a run from a checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `run` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tc_run_resume(dir: *const c_char, run: *mut *mut TcRun) -> TcStatus {
    guard(|| {
        let dir = string(dir, "dir")?;
        let slot = out(run, "run")?;
        *slot = Box::into_raw(Box::new(TcRun { opt: Optimizer::resume(Path::new(&dir), None)? }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from a `tc_run_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tc_run_free(run: *mut TcRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Caps the run length; useful for short runs from bundled scenarios.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tc_run_set_max_iter(run: *mut TcRun, max_iter: usize) -> TcStatus {
    guard(|| {
        let r = run.as_mut().ok_or_else(|| null("run"))?;
        if max_iter == 0 || max_iter < r.opt.state().iteration {
            return Err(invalid(format!("max_iter = {max_iter} is below the current iteration")));
        }
        if r.opt.state().finished {
            return Err(invalid("the run has already finished"));
        }
        r.opt.scenario.run.max_iter = max_iter;
        Ok(())
    })
}

/// One iteration. `finished` receives 1 once the run is complete.
///
/// # Safety
/// `run` must be a live handle; `finished` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn tc_run_step(run: *mut TcRun, finished: *mut i32) -> TcStatus {
    guard(|| {
        let r = run.as_mut().ok_or_else(|| null("run"))?;
        let done = r.opt.step()?;
        if let Some(f) = finished.as_mut() {
            *f = i32::from(done);
        }
        Ok(())
    })
}

/// Runs to the end, checkpointing into `dir` when it is not NULL.
///
/// # Safety
/// `run` must be a live handle; `dir` is NULL or a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn tc_run_to_end(run: *mut TcRun, dir: *const c_char) -> TcStatus {
    guard(|| {
        let r = run.as_mut().ok_or_else(|| null("run"))?;
        let dir = if dir.is_null() { None } else { Some(string(dir, "dir")?) };
        r.opt.run(dir.as_deref().map(Path::new))?;
        Ok(())
    })
}

/// Writes a checkpoint into `dir`.
///
/// # Safety
/// `run` must be a live handle; `dir` must be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn tc_run_checkpoint(run: *const TcRun, dir: *const c_char) -> TcStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        r.opt.checkpoint(Path::new(&string(dir, "dir")?))?;
        Ok(())
    })
}

/// Latest objectives and their initial values. Before the first step all four are NaN.
///
/// # Safety
/// `run` must be a live handle; `values` must have room for 4 doubles
/// `(J1, J2, J1_init, J2_init)`; `iteration` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn tc_run_objectives(run: *const TcRun, values: *mut f64, iteration: *mut usize) -> TcStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        let s = r.opt.state();
        std::slice::from_raw_parts_mut(values, 4).copy_from_slice(&[s.j1, s.j2, s.j1_init, s.j2_init]);
        if let Some(i) = iteration.as_mut() {
            *i = s.iteration;
        }
        Ok(())
    })
}

/// Current effective tensor `(K11, K12, K22)` of sector `sector` (zero-based).
///
/// # Safety
/// `run` must be a live handle; `k_out` must have room for 3.
#[no_mangle]
pub unsafe extern "C" fn tc_run_tensor(run: *const TcRun, sector: usize, k_out: *mut f64) -> TcStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let t = r.opt.state().tensors.get(sector).ok_or_else(|| invalid(format!("no sector {sector}")))?;
        if k_out.is_null() {
            return Err(null("k_out"));
        }
        write_tensor(t, std::slice::from_raw_parts_mut(k_out, 3));
        Ok(())
    })
}
