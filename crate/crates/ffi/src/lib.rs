//! C ABI over the linear cart-pole chain solvers.
//!
//! Every fallible call returns an [`SgoptStatus`]; on failure the calling
//! thread's message is available from [`sgopt_last_error_message`]. Handles
//! are opaque and owned by the caller once returned; free them with the
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sgopt::cartpole::{
    build_ocp_graph, local_linear_dynamics, solution_to_trajectory, Actuation, CartPoleParams, LoadedConfig,
    ProblemConfig, Trajectory,
};
use sgopt::elimination::{min_degree_ordering, solve, structured_ordering};
use sgopt::solvers::{assemble_dense_lti, riccati_lqr};
use sgopt::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgoptStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Infeasible = 3,
    RankDeficient = 4,
    Singular = 5,
    NoProgress = 6,
    Config = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgoptOrdering {
    Structured = 0,
    MinDegree = 1,
}

/// A linear cart-pole chain problem: configuration plus physical parameters.
pub struct SgoptProblem {
    config: ProblemConfig,
    params: CartPoleParams,
}

/// An optimal trajectory and its cost.
pub struct SgoptSolution {
    trajectory: Trajectory,
    cost: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> SgoptStatus {
    match err {
        Error::InfeasibleConstraint { .. } => SgoptStatus::Infeasible,
        Error::RankDeficient { .. } => SgoptStatus::RankDeficient,
        Error::SingularDiagonal { .. }
        | Error::SingularInnovation { .. }
        | Error::SingularKkt
        | Error::UnconstrainedUnboundedVariable(_) => SgoptStatus::Singular,
        Error::NoProgress { .. } => SgoptStatus::NoProgress,
        Error::Config(_) => SgoptStatus::Config,
        Error::DimensionMismatch(_) | Error::InvalidOrdering(_) => SgoptStatus::InvalidArgument,
        Error::UnknownVariable(_) | Error::DuplicateVariable(_) => SgoptStatus::Internal,
    }
}

/// Runs `f`, records its error message and converts panics to `Internal`.
fn guard(f: impl FnOnce() -> Result<(), (SgoptStatus, String)>) -> SgoptStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgoptStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SgoptStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (SgoptStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SgoptStatus, String) {
    (SgoptStatus::NullPointer, format!("{what} is null"))
}

/// Creates a problem with default physical parameters, evenly spaced
/// actuators and a zero initial state.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn sgopt_problem_new(
    n: usize,
    m: usize,
    horizon: usize,
    out: *mut *mut SgoptProblem,
) -> SgoptStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = ProblemConfig::new(n, Actuation::Count(m), horizon);
        config.validate().map_err(lib_err)?;
        let problem = Box::new(SgoptProblem {
            config,
            params: CartPoleParams::default(),
        });
        *out = Box::into_raw(problem);
        Ok(())
    })
}

/// Parses a JSON problem description. Missing keys take the validation
/// scenario's values (N = 3, M = 2, T = 150, 1.15 degree tilt).
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sgopt_problem_from_json(json: *const c_char, out: *mut *mut SgoptProblem) -> SgoptStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (SgoptStatus::InvalidArgument, format!("json is not UTF-8: {e}")))?;
        let loaded = LoadedConfig::from_json_str(LoadedConfig::validation_default(), text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SgoptProblem {
            config: loaded.problem,
            params: loaded.params,
        }));
        Ok(())
    })
}

/// Replaces the initial state; `len` must be `4 n` in `[x, xdot, theta, thetadot]`
/// order per body.
///
/// # Safety
/// `problem` must come from this library; `x0` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgopt_problem_set_initial_state(
    problem: *mut SgoptProblem,
    x0: *const f64,
    len: usize,
) -> SgoptStatus {
    guard(|| {
        let problem = problem.as_mut().ok_or_else(|| null("problem"))?;
        if x0.is_null() {
            return Err(null("x0"));
        }
        let want = 4 * problem.config.n;
        if len != want {
            return Err((SgoptStatus::InvalidArgument, format!("x0 has {len} entries, expected {want}")));
        }
        let values = std::slice::from_raw_parts(x0, len);
        if values.iter().any(|v| !v.is_finite()) {
            return Err((SgoptStatus::InvalidArgument, "x0 has non-finite entries".into()));
        }
        problem.config.x0 = values.to_vec();
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgopt_problem_free(problem: *mut SgoptProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Solves the linear problem by factor-graph elimination.
///
/// # Safety
/// `problem` must come from this library; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sgopt_solve(
    problem: *const SgoptProblem,
    ordering: SgoptOrdering,
    out: *mut *mut SgoptSolution,
) -> SgoptStatus {
    guard(|| {
        let problem = problem.as_ref().ok_or_else(|| null("problem"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = &problem.config;
        let graph = build_ocp_graph(config, &local_linear_dynamics(&problem.params)).map_err(lib_err)?;
        let ord = match ordering {
            SgoptOrdering::Structured => structured_ordering(config),
            SgoptOrdering::MinDegree => min_degree_ordering(&graph),
        };
        let (solution, _) = solve(&graph, &ord).map_err(lib_err)?;
        let trajectory = solution_to_trajectory(config, &solution, None).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SgoptSolution {
            trajectory,
            cost: solution.total_cost,
        }));
        Ok(())
    })
}

/// Solves the same linear problem with the dense Riccati recursion.
///
/// # Safety
/// `problem` must come from this library; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn sgopt_riccati_solve(problem: *const SgoptProblem, out: *mut *mut SgoptSolution) -> SgoptStatus {
    guard(|| {
        let problem = problem.as_ref().ok_or_else(|| null("problem"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let config = &problem.config;
        let model = assemble_dense_lti(config, &local_linear_dynamics(&problem.params)).map_err(lib_err)?;
        let sol = riccati_lqr(&model, config.horizon, &config.x0).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SgoptSolution {
            trajectory: Trajectory {
                states: sol.states,
                controls: sol.controls,
            },
            cost: sol.cost,
        }));
        Ok(())
    })
}

/// Optimal cost, or NaN for a null handle.
///
/// # Safety
/// `solution` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sgopt_solution_cost(solution: *const SgoptSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.cost)
}

/// Horizon, state length and control length of a solution.
///
/// # Safety
/// `solution` must come from this library; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn sgopt_solution_dims(
    solution: *const SgoptSolution,
    horizon: *mut usize,
    state_len: *mut usize,
    control_len: *mut usize,
) -> SgoptStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        let traj = &s.trajectory;
        for (ptr, value) in [
            (horizon, traj.states.len()),
            (state_len, traj.states.first().map_or(0, Vec::len)),
            (control_len, traj.controls.first().map_or(0, Vec::len)),
        ] {
            if let Some(p) = ptr.as_mut() {
                *p = value;
            }
        }
        Ok(())
    })
}

unsafe fn copy_row(rows: &[Vec<f64>], t: usize, out: *mut f64, len: usize, what: &str) -> Result<(), (SgoptStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    let row = rows.get(t).ok_or_else(|| {
        (
            SgoptStatus::InvalidArgument,
            format!("{what} index {t} out of range (have {})", rows.len()),
        )
    })?;
    if len != row.len() {
        return Err((
            SgoptStatus::InvalidArgument,
            format!("{what} has {} entries, buffer holds {len}", row.len()),
        ));
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(row);
    Ok(())
}

/// Copies the state at step `t` (`0 <= t < horizon`) into `out`.
///
/// # Safety
/// `solution` must come from this library; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgopt_solution_state(
    solution: *const SgoptSolution,
    t: usize,
    out: *mut f64,
    len: usize,
) -> SgoptStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        copy_row(&s.trajectory.states, t, out, len, "state")
    })
}

/// Copies the control at step `t` (`0 <= t < horizon - 1`) into `out`.
///
/// # Safety
/// `solution` must come from this library; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sgopt_solution_control(
    solution: *const SgoptSolution,
    t: usize,
    out: *mut f64,
    len: usize,
) -> SgoptStatus {
    guard(|| {
        let s = solution.as_ref().ok_or_else(|| null("solution"))?;
        copy_row(&s.trajectory.controls, t, out, len, "control")
    })
}

/// # Safety
/// `solution` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgopt_solution_free(solution: *mut SgoptSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn sgopt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn sgopt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
