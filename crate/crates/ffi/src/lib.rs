//! C ABI over the `fogas` library.
//!
//! Objects are opaque handles created by `fogas_*_new`-style constructors
//! and released with the matching `*_free`. Every fallible call returns a
//! [`FogasStatus`]; on failure the message is available from
//! [`fogas_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fogas::harness::{BehaviorSpec, OracleContext};
use fogas::oracle::evaluate_policy;
use fogas::solver::{run_fogas, FogasConfig};
use fogas::{ActionDistribution, FogasError, LinearMdp, OfflineDataset, SamplingMode};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FogasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numerical = 4,
    Io = 5,
    Parse = 6,
    MissingTrajectory = 7,
    Panic = 8,
}

/// Opaque linear MDP.
pub struct FogasMdp(LinearMdp);

/// Opaque offline dataset.
pub struct FogasDataset(OfflineDataset);

/// Opaque solver run.
pub struct FogasRun(fogas::FogasRun);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &FogasError) -> FogasStatus {
    match err {
        FogasError::Shape(_) => FogasStatus::Shape,
        FogasError::InvalidArgument(_) => FogasStatus::InvalidArgument,
        FogasError::NotPositiveDefinite | FogasError::Singular(_) | FogasError::NonFinite { .. } => {
            FogasStatus::Numerical
        }
        FogasError::MissingTrajectory => FogasStatus::MissingTrajectory,
        FogasError::Io(_) => FogasStatus::Io,
        FogasError::Parse(_) | FogasError::Json(_) | FogasError::Csv(_) => FogasStatus::Parse,
    }
}

enum Fail {
    Null(&'static str),
    Lib(FogasError),
}

impl From<FogasError> for Fail {
    fn from(e: FogasError) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FogasStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FogasStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FogasStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FogasStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(FogasError::InvalidArgument(format!("{what} is not UTF-8"))))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    *as_mut(out, "out")? = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes, excluding
/// the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fogas_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fogas_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a random linear MDP.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free
/// with [`fogas_mdp_free`].
#[no_mangle]
pub unsafe extern "C" fn fogas_mdp_generate(
    states: usize,
    actions: usize,
    dim: usize,
    gamma: f64,
    seed: u64,
    out: *mut *mut FogasMdp,
) -> FogasStatus {
    guard(|| put(out, FogasMdp(LinearMdp::generate(states, actions, dim, gamma, seed)?)))
}

/// Loads an MDP document.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fogas_mdp_load(path: *const c_char, out: *mut *mut FogasMdp) -> FogasStatus {
    guard(|| put(out, FogasMdp(LinearMdp::load(as_str(path, "path")?)?)))
}

/// Writes an MDP document.
///
/// # Safety
/// `mdp` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fogas_mdp_save(mdp: *const FogasMdp, path: *const c_char) -> FogasStatus {
    guard(|| Ok(as_ref(mdp, "mdp")?.0.save(as_str(path, "path")?)?))
}

/// # Safety
/// `mdp` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fogas_mdp_free(mdp: *mut FogasMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// Number of states, actions and feature dimension.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fogas_mdp_shape(
    mdp: *const FogasMdp,
    states: *mut usize,
    actions: *mut usize,
    dim: *mut usize,
) -> FogasStatus {
    guard(|| {
        let m = &as_ref(mdp, "mdp")?.0;
        *as_mut(states, "states")? = m.num_states();
        *as_mut(actions, "actions")? = m.num_actions();
        *as_mut(dim, "dim")? = m.dim();
        Ok(())
    })
}

/// Normalised return of the optimal policy.
///
/// # Safety
/// `mdp` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fogas_mdp_optimal_return(mdp: *const FogasMdp, out: *mut f64) -> FogasStatus {
    guard(|| {
        let o = OracleContext::new(&as_ref(mdp, "mdp")?.0)?;
        *as_mut(out, "out")? = o.star.return_value;
        Ok(())
    })
}

/// Samples `n` transitions. `behavior` is `"uniform"` or `"eps:<v>"`;
/// `mode` is `"occupancy"` or `"uniform"`.
///
/// # Safety
/// `mdp` must be a live handle, the strings NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fogas_dataset_collect(
    mdp: *const FogasMdp,
    behavior: *const c_char,
    mode: *const c_char,
    n: usize,
    seed: u64,
    out: *mut *mut FogasDataset,
) -> FogasStatus {
    guard(|| {
        let m = &as_ref(mdp, "mdp")?.0;
        let spec: BehaviorSpec = as_str(behavior, "behavior")?.parse()?;
        let mode: SamplingMode = as_str(mode, "mode")?.parse()?;
        let policy = spec.resolve(m)?;
        put(out, FogasDataset(OfflineDataset::collect(m, &policy, n, mode, seed)?))
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fogas_dataset_load(path: *const c_char, out: *mut *mut FogasDataset) -> FogasStatus {
    guard(|| put(out, FogasDataset(OfflineDataset::load(as_str(path, "path")?)?)))
}

/// # Safety
/// `data` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fogas_dataset_save(data: *const FogasDataset, path: *const c_char) -> FogasStatus {
    guard(|| Ok(as_ref(data, "data")?.0.save(as_str(path, "path")?)?))
}

/// Number of transitions, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fogas_dataset_len(data: *const FogasDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fogas_dataset_free(data: *mut FogasDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

unsafe fn solve(
    mdp: *const FogasMdp,
    data: *const FogasDataset,
    out: *mut *mut FogasRun,
    make: impl FnOnce(&LinearMdp, usize) -> Result<FogasConfig, FogasError>,
) -> FogasStatus {
    guard(|| {
        let m = &as_ref(mdp, "mdp")?.0;
        let d = &as_ref(data, "data")?.0;
        as_mut(out, "out")?;
        let cfg = make(m, d.len())?;
        put(out, FogasRun(run_fogas(m.model(), d, &cfg)?))
    })
}

/// Runs the solver with auto-tuned step sizes. `iterations = 0` selects the
/// recommended `T` capped at 20000.
///
/// # Safety
/// Handles must be live and `out` valid; free the result with [`fogas_run_free`].
#[no_mangle]
pub unsafe extern "C" fn fogas_solve_auto(
    mdp: *const FogasMdp,
    data: *const FogasDataset,
    iterations: usize,
    delta: f64,
    seed: u64,
    record_trajectory: bool,
    out: *mut *mut FogasRun,
) -> FogasStatus {
    solve(mdp, data, out, |m, n| {
        let t = if iterations == 0 {
            FogasConfig::recommended_iterations(m.model(), n, delta).min(fogas::harness::DEFAULT_ITERATION_CAP)
        } else {
            iterations
        };
        let (cfg, _) = FogasConfig::auto_tuned(m.model(), n, t, delta, seed)?;
        Ok(cfg.with_trajectory(record_trajectory))
    })
}

/// Runs the solver with manual step sizes. `d_theta <= 0` selects the
/// default radius.
///
/// # Safety
/// Handles must be live and `out` valid; free the result with [`fogas_run_free`].
#[no_mangle]
pub unsafe extern "C" fn fogas_solve_manual(
    mdp: *const FogasMdp,
    data: *const FogasDataset,
    iterations: usize,
    alpha: f64,
    rho: f64,
    eta: f64,
    beta: f64,
    d_theta: f64,
    seed: u64,
    record_trajectory: bool,
    out: *mut *mut FogasRun,
) -> FogasStatus {
    solve(mdp, data, out, |m, _| {
        let radius = (d_theta > 0.0).then_some(d_theta);
        let cfg = FogasConfig::manual(m.model(), iterations, alpha, rho, eta, beta, radius, seed);
        cfg.validate()?;
        Ok(cfg.with_trajectory(record_trajectory))
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fogas_run_free(run: *mut FogasRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// The output index `J` (1-based), or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fogas_run_chosen_index(run: *const FogasRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.chosen_index)
}

/// Copies the output policy parameter `alpha * theta_bar_{J-1}` into `buf`,
/// which must hold exactly `len = dim` values.
///
/// # Safety
/// `run` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fogas_run_policy_param(run: *const FogasRun, buf: *mut f64, len: usize) -> FogasStatus {
    guard(|| {
        let p = as_ref(run, "run")?.0.output_policy.param();
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        if len != p.len() {
            return Err(FogasError::Shape(format!("buffer holds {len} values, parameter has {}", p.len())).into());
        }
        ptr::copy_nonoverlapping(p.as_ptr(), buf, len);
        Ok(())
    })
}

/// Action probabilities of the output policy in `state`; `buf` must hold
/// exactly `len = actions` values.
///
/// # Safety
/// Handles must be live and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fogas_run_action_probs(
    run: *const FogasRun,
    mdp: *const FogasMdp,
    state: usize,
    buf: *mut f64,
    len: usize,
) -> FogasStatus {
    guard(|| {
        let r = &as_ref(run, "run")?.0;
        let m = &as_ref(mdp, "mdp")?.0;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        if state >= m.num_states() || len != m.num_actions() || r.output_policy.param().len() != m.dim() {
            return Err(FogasError::Shape("state, buffer length or dimension does not match the MDP".into()).into());
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        r.output_policy.view(m.features()).fill_probs(state, out);
        Ok(())
    })
}

/// `rho(pi*) - rho(pi_J)` under the true model.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fogas_run_suboptimality(
    run: *const FogasRun,
    mdp: *const FogasMdp,
    out: *mut f64,
) -> FogasStatus {
    guard(|| {
        let r = &as_ref(run, "run")?.0;
        let m = &as_ref(mdp, "mdp")?.0;
        if r.output_policy.param().len() != m.dim() {
            return Err(FogasError::Shape("run and MDP differ in dimension".into()).into());
        }
        let star = OracleContext::new(m)?.star.return_value;
        let ev = evaluate_policy(m, &r.output_policy.materialize(m.features()))?;
        *as_mut(out, "out")? = star - ev.return_value;
        Ok(())
    })
}

/// Writes the run document.
///
/// # Safety
/// `run` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn fogas_run_save(run: *const FogasRun, path: *const c_char) -> FogasStatus {
    guard(|| Ok(as_ref(run, "run")?.0.save(as_str(path, "path")?)?))
}
