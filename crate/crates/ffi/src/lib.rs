//! C ABI over the `drayage` library.
//!
//! Instances, scenarios and policy solutions cross the boundary as opaque
//! handles created from JSON text and released with the matching `*_free`
//! function. Capacity plans are flat `double` arrays, source by source, with
//! `horizon` entries per source. Every fallible call returns a
//! [`DrayageStatus`]; on failure [`drayage_last_error`] describes the cause for
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use drayage::capopt::{self, CapacityObjective, Evaluator, OptimizeConfig};
use drayage::dp::{self, DpSolution};
use drayage::model::{self, CapacityPlan, Instance, Scenario, SystemState};
use drayage::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrayageStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Malformed JSON, inconsistent dimensions or an invalid instance.
    InvalidInput = 3,
    /// A solver failed (infeasible or unbounded program, undefined policy).
    SolverFailure = 4,
    /// The requested state is outside the state grid.
    OutOfRange = 5,
    /// The library panicked; the handle arguments should be considered lost.
    Panic = 6,
}

pub struct DrayageInstance(Instance);

pub struct DrayageScenario(Scenario);

pub struct DrayagePolicy(DpSolution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DrayageStatus, msg: impl Into<String>) -> DrayageStatus {
    set_error(msg);
    status
}

fn from_error(err: Error) -> DrayageStatus {
    let status = match err {
        Error::Lp(_) | Error::UndefinedPolicyState { .. } => DrayageStatus::SolverFailure,
        _ => DrayageStatus::InvalidInput,
    };
    fail(status, err.to_string())
}

fn guard(body: impl FnOnce() -> Result<(), DrayageStatus>) -> DrayageStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DrayageStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DrayageStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, DrayageStatus> {
    if p.is_null() {
        return Err(fail(DrayageStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DrayageStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn ref_arg<'a, T>(p: *const T) -> Result<&'a T, DrayageStatus> {
    p.as_ref().ok_or_else(|| fail(DrayageStatus::NullPointer, "null handle"))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, DrayageStatus> {
    p.as_mut().ok_or_else(|| fail(DrayageStatus::NullPointer, "null output pointer"))
}

unsafe fn plan_arg(inst: &Instance, values: *const f64, len: usize) -> Result<CapacityPlan, DrayageStatus> {
    if values.is_null() {
        return Err(fail(DrayageStatus::NullPointer, "null plan"));
    }
    let (n, tau) = (inst.n_sources(), inst.horizon);
    if len != n * tau {
        return Err(fail(
            DrayageStatus::InvalidInput,
            format!("plan has {len} values, expected {n} x {tau}"),
        ));
    }
    let plan = CapacityPlan::from_flat(std::slice::from_raw_parts(values, len), n, tau);
    plan.check_dims(inst).map_err(from_error)?;
    Ok(plan)
}

unsafe fn state_arg(
    inst: &Instance,
    entry: *const i64,
    n_entry: usize,
    exit: *const i64,
    n_exit: usize,
) -> Result<SystemState, DrayageStatus> {
    if (entry.is_null() && n_entry > 0) || (exit.is_null() && n_exit > 0) {
        return Err(fail(DrayageStatus::NullPointer, "null state"));
    }
    if n_entry != inst.n_entries() || n_exit != inst.n_exits() {
        return Err(fail(DrayageStatus::InvalidInput, "state has the wrong number of components"));
    }
    let slice = |p: *const i64, n: usize| if n == 0 { Vec::new() } else { std::slice::from_raw_parts(p, n).to_vec() };
    Ok(SystemState::new(slice(entry, n_entry), slice(exit, n_exit)))
}

/// Message for the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn drayage_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn drayage_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates an instance.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drayage_instance_from_json(json: *const c_char, out: *mut *mut DrayageInstance) -> DrayageStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let inst = Instance::from_json(str_arg(json)?).map_err(from_error)?;
        *out = Box::into_raw(Box::new(DrayageInstance(inst)));
        Ok(())
    })
}

/// # Safety
/// `inst` must be null or a handle from [`drayage_instance_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn drayage_instance_free(inst: *mut DrayageInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Writes the entry, exit, source and period counts.
///
/// # Safety
/// `inst` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn drayage_instance_dims(
    inst: *const DrayageInstance,
    n_entries: *mut usize,
    n_exits: *mut usize,
    n_sources: *mut usize,
    horizon: *mut usize,
) -> DrayageStatus {
    guard(|| {
        let i = &ref_arg(inst)?.0;
        *out_arg(n_entries)? = i.n_entries();
        *out_arg(n_exits)? = i.n_exits();
        *out_arg(n_sources)? = i.n_sources();
        *out_arg(horizon)? = i.horizon;
        Ok(())
    })
}

/// Number of grid states.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn drayage_state_space_size(inst: *const DrayageInstance, out: *mut u64) -> DrayageStatus {
    guard(|| {
        *out_arg(out)? = model::state_space_size(&ref_arg(inst)?.0).map_err(from_error)?;
        Ok(())
    })
}

/// Parses a scenario; its horizon must match `inst`.
///
/// # Safety
/// `inst` must be a live handle, `json` NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn drayage_scenario_from_json(
    inst: *const DrayageInstance,
    json: *const c_char,
    out: *mut *mut DrayageScenario,
) -> DrayageStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let i = &ref_arg(inst)?.0;
        let sc: Scenario =
            serde_json::from_str(str_arg(json)?).map_err(|e| fail(DrayageStatus::InvalidInput, e.to_string()))?;
        if sc.horizon() != i.horizon {
            return Err(fail(DrayageStatus::InvalidInput, "scenario horizon differs from the instance"));
        }
        *out = Box::into_raw(Box::new(DrayageScenario(sc)));
        Ok(())
    })
}

/// # Safety
/// `sc` must be null or a handle from [`drayage_scenario_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn drayage_scenario_free(sc: *mut DrayageScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Total cost (reservation cost minus the best first-period value) of `plan`
/// on one scenario.
///
/// # Safety
/// Handles must be live; `plan` must point to `plan_len` doubles; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn drayage_total_cost(
    inst: *const DrayageInstance,
    sc: *const DrayageScenario,
    plan: *const f64,
    plan_len: usize,
    out: *mut f64,
) -> DrayageStatus {
    guard(|| {
        let i = &ref_arg(inst)?.0;
        let s = &ref_arg(sc)?.0;
        let plan = plan_arg(i, plan, plan_len)?;
        let obj = CapacityObjective::new(i, Evaluator::ScenarioLp(s.clone()));
        *out_arg(out)? = -capopt::objective(&plan, &obj).map_err(from_error)?;
        Ok(())
    })
}

/// Backward induction on one scenario for a fixed plan.
///
/// # Safety
/// Handles must be live; `plan` must point to `plan_len` doubles; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn drayage_solve_scenario(
    inst: *const DrayageInstance,
    sc: *const DrayageScenario,
    plan: *const f64,
    plan_len: usize,
    out: *mut *mut DrayagePolicy,
) -> DrayageStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let i = &ref_arg(inst)?.0;
        let s = &ref_arg(sc)?.0;
        let plan = plan_arg(i, plan, plan_len)?;
        let sol = dp::solve_scenario(i, s, &plan).map_err(from_error)?;
        *out = Box::into_raw(Box::new(DrayagePolicy(sol)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`drayage_solve_scenario`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn drayage_policy_free(p: *mut DrayagePolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Value of a state at 0-based period `t` (`t == horizon` is terminal).
///
/// # Safety
/// `inst` and `policy` must be live and belong together; state arrays must
/// hold the stated counts; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn drayage_policy_value(
    inst: *const DrayageInstance,
    policy: *const DrayagePolicy,
    t: usize,
    entry: *const i64,
    n_entry: usize,
    exit: *const i64,
    n_exit: usize,
    out: *mut f64,
) -> DrayageStatus {
    guard(|| {
        let i = &ref_arg(inst)?.0;
        let p = &ref_arg(policy)?.0;
        let s = state_arg(i, entry, n_entry, exit, n_exit)?;
        if t > i.horizon {
            return Err(fail(DrayageStatus::OutOfRange, "period out of range"));
        }
        *out_arg(out)? = p
            .values
            .value(t, &s)
            .ok_or_else(|| fail(DrayageStatus::OutOfRange, "state outside the grid"))?;
        Ok(())
    })
}

/// Optimal move volume at 0-based period `t < horizon`. Returns
/// `DRAYAGE_STATUS_SOLVER_FAILURE` where no action is feasible.
///
/// # Safety
/// As [`drayage_policy_value`].
#[no_mangle]
pub unsafe extern "C" fn drayage_policy_action(
    inst: *const DrayageInstance,
    policy: *const DrayagePolicy,
    t: usize,
    entry: *const i64,
    n_entry: usize,
    exit: *const i64,
    n_exit: usize,
    out: *mut i64,
) -> DrayageStatus {
    guard(|| {
        let i = &ref_arg(inst)?.0;
        let p = &ref_arg(policy)?.0;
        let s = state_arg(i, entry, n_entry, exit, n_exit)?;
        if t >= i.horizon || p.values.grid.index(&s).is_none() {
            return Err(fail(DrayageStatus::OutOfRange, "period or state out of range"));
        }
        *out_arg(out)? = p
            .policy
            .action(t, &s)
            .ok_or_else(|| fail(DrayageStatus::SolverFailure, "no feasible action"))?;
        Ok(())
    })
}

/// Capacity search on one scenario from `start`. Writes the best plan into
/// `best` (same layout and length as `start`) and its total cost into
/// `total_cost`. `restarts` extra starts are drawn from `seed`.
///
/// # Safety
/// Handles must be live; `start` and `best` must each hold `len` doubles;
/// `total_cost` valid.
#[no_mangle]
pub unsafe extern "C" fn drayage_optimize_capacity(
    inst: *const DrayageInstance,
    sc: *const DrayageScenario,
    start: *const f64,
    len: usize,
    restarts: usize,
    seed: u64,
    best: *mut f64,
    total_cost: *mut f64,
) -> DrayageStatus {
    guard(|| {
        let i = &ref_arg(inst)?.0;
        let s = &ref_arg(sc)?.0;
        let start = plan_arg(i, start, len)?;
        if best.is_null() {
            return Err(fail(DrayageStatus::NullPointer, "null output plan"));
        }
        let cost = out_arg(total_cost)?;
        let obj = CapacityObjective::new(i, Evaluator::ScenarioLp(s.clone()));
        let config = OptimizeConfig {
            restarts,
            seed,
            ..OptimizeConfig::default()
        };
        let r = capopt::optimize_capacity(&obj, &start, &config).map_err(from_error)?;
        std::slice::from_raw_parts_mut(best, len).copy_from_slice(&r.best_plan.flatten());
        *cost = r.total_cost;
        Ok(())
    })
}
