//! C ABI over the lobisarl library.
//!
//! Objects cross the boundary as opaque handles created by `lbs_*_new` or
//! `lbs_*_generate`/`lbs_*_run` functions and released with the matching
//! `lbs_*_free`. Every fallible call returns an [`LbsStatus`]; the message of
//! the most recent failure on the calling thread is available through
//! [`lbs_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lobisarl::agents::AgentKind;
use lobisarl::bounds::threshold_z;
use lobisarl::env::{Action, Cell, Generator, GridWorld};
use lobisarl::glm::{mu, mu_inverse};
use lobisarl::harness::{
    emit_outputs, normalize_returns, run_experiment, summarize, ExperimentConfig, ExperimentOutcome, RunRecord,
    SummaryRow,
};
use lobisarl::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Generation = 4,
    Numerical = 5,
    Io = 6,
    Aborted = 7,
    Panic = 8,
}

/// Agent identifiers, in the canonical reporting order.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbsAgent {
    Random = 0,
    Unsafe = 1,
    Linear = 2,
    Instantaneous = 3,
    Lobisarl = 4,
}

impl From<LbsAgent> for AgentKind {
    fn from(a: LbsAgent) -> Self {
        AgentKind::ALL[a as usize]
    }
}

/// Grid actions.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbsAction {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
    Stay = 4,
}

impl From<LbsAction> for Action {
    fn from(a: LbsAction) -> Self {
        Action::ALL[a as usize]
    }
}

/// One evaluation-episode record. `agent` holds an [`LbsAgent`] value.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LbsRecord {
    pub seed: u64,
    pub agent: u32,
    pub episode: u64,
    pub raw_return: f64,
    pub normalized_return: f64,
    pub unsafe_actions: u64,
    pub fallback_events: u64,
    pub min_margin: f64,
    pub wall_time_ms: u64,
}

/// Per-agent aggregate over the evaluation episodes.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LbsSummary {
    pub episodes: u64,
    pub return_mean: f64,
    pub return_std: f64,
    pub unsafe_mean: f64,
    pub unsafe_std: f64,
    pub fallback_total: u64,
    pub seeds_with_violations: u64,
}

/// Experiment configuration handle.
pub struct LbsConfig {
    inner: ExperimentConfig,
}

/// Generated environment handle.
pub struct LbsWorld {
    inner: GridWorld,
}

/// Finished experiment handle: records, normalization and summary.
pub struct LbsExperiment {
    config: ExperimentConfig,
    outcome: ExperimentOutcome,
    records: Vec<RunRecord>,
    excluded: Vec<u64>,
    summary: Vec<SummaryRow>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> LbsStatus {
    match e {
        Error::Domain(_) => LbsStatus::InvalidArgument,
        Error::Singular(_) | Error::Convergence { .. } => LbsStatus::Numerical,
        Error::Generation { .. } => LbsStatus::Generation,
        Error::Aborted { .. } => LbsStatus::Aborted,
        Error::Config(_) | Error::Parse { .. } => LbsStatus::Config,
        Error::Io { .. } => LbsStatus::Io,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (LbsStatus, String)>) -> LbsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LbsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LbsStatus::Panic
        }
    }
}

fn lib<T>(r: lobisarl::Result<T>) -> Result<T, (LbsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (LbsStatus, String) {
    (LbsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (LbsStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (LbsStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn utf8<'a>(p: *const c_char, what: &str) -> Result<&'a str, (LbsStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (LbsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lbs_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Logistic link.
#[no_mangle]
pub extern "C" fn lbs_mu(x: f64) -> f64 {
    mu(x)
}

/// Inverse logistic link for `p` in (0, 1).
///
/// # Safety
/// `out_value` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_mu_inverse(p: f64, out_value: *mut f64) -> LbsStatus {
    guard(|| {
        *out(out_value, "out_value")? = lib(mu_inverse(p))?;
        Ok(())
    })
}

/// Per-step threshold `mu^{-1}((1 - delta)^{1/horizon})`.
///
/// # Safety
/// `out_value` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_threshold_z(delta: f64, horizon: usize, out_value: *mut f64) -> LbsStatus {
    guard(|| {
        *out(out_value, "out_value")? = lib(threshold_z(delta, horizon))?;
        Ok(())
    })
}

/// Default configuration.
///
/// # Safety
/// `out_config` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_config_new(out_config: *mut *mut LbsConfig) -> LbsStatus {
    guard(|| {
        let slot = out(out_config, "out_config")?;
        *slot = Box::into_raw(Box::new(LbsConfig {
            inner: ExperimentConfig::default(),
        }));
        Ok(())
    })
}

/// Configuration parsed from TOML text; missing keys take their defaults.
///
/// # Safety
/// `toml` must be null or a NUL-terminated string; `out_config` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_config_from_toml(toml: *const c_char, out_config: *mut *mut LbsConfig) -> LbsStatus {
    guard(|| {
        let text = utf8(toml, "toml")?;
        let slot = out(out_config, "out_config")?;
        let cfg = lib(ExperimentConfig::from_toml_str(text, Path::new("<ffi>")))?;
        lib(cfg.validate())?;
        *slot = Box::into_raw(Box::new(LbsConfig { inner: cfg }));
        Ok(())
    })
}

/// Releases a configuration. Null is ignored.
///
/// # Safety
/// `config` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lbs_config_free(config: *mut LbsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Generates the world of `seed` under `config`.
///
/// # Safety
/// `config` must be a live handle; `out_world` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_world_generate(
    config: *const LbsConfig,
    seed: u64,
    out_world: *mut *mut LbsWorld,
) -> LbsStatus {
    guard(|| {
        let cfg = &deref(config, "config")?.inner;
        let slot = out(out_world, "out_world")?;
        let world = lib(Generator::new(cfg.generation()).and_then(|g| g.generate(seed)))?;
        *slot = Box::into_raw(Box::new(LbsWorld { inner: world }));
        Ok(())
    })
}

/// Releases a world. Null is ignored.
///
/// # Safety
/// `world` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lbs_world_free(world: *mut LbsWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Grid width, height and horizon.
///
/// # Safety
/// `world` must be a live handle; the out pointers must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_world_shape(
    world: *const LbsWorld,
    out_width: *mut usize,
    out_height: *mut usize,
    out_horizon: *mut usize,
) -> LbsStatus {
    guard(|| {
        let w = &deref(world, "world")?.inner;
        *out(out_width, "out_width")? = w.width();
        *out(out_height, "out_height")? = w.height();
        *out(out_horizon, "out_horizon")? = w.horizon();
        Ok(())
    })
}

fn cell_of(w: &GridWorld, x: usize, y: usize) -> Result<Cell, (LbsStatus, String)> {
    let c = Cell::new(x, y);
    if !w.in_bounds(c) {
        return Err((
            LbsStatus::InvalidArgument,
            format!("cell ({x}, {y}) is outside the grid"),
        ));
    }
    Ok(c)
}

/// True safety function `f*(s, a)` at cell `(x, y)`.
///
/// # Safety
/// `world` must be a live handle; `out_value` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_world_safety(
    world: *const LbsWorld,
    x: usize,
    y: usize,
    action: LbsAction,
    out_value: *mut f64,
) -> LbsStatus {
    guard(|| {
        let w = &deref(world, "world")?.inner;
        let c = cell_of(w, x, y)?;
        *out(out_value, "out_value")? = lib(w.f_star(c, action.into()))?;
        Ok(())
    })
}

/// Expected reward of `(s, a)` at cell `(x, y)`.
///
/// # Safety
/// `world` must be a live handle; `out_value` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_world_reward(
    world: *const LbsWorld,
    x: usize,
    y: usize,
    action: LbsAction,
    out_value: *mut f64,
) -> LbsStatus {
    guard(|| {
        let w = &deref(world, "world")?.inner;
        let c = cell_of(w, x, y)?;
        *out(out_value, "out_value")? = lib(w.reward(c, action.into()))?;
        Ok(())
    })
}

/// Whether cell `(x, y)` is a wall.
///
/// # Safety
/// `world` must be a live handle; `out_wall` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_world_is_wall(
    world: *const LbsWorld,
    x: usize,
    y: usize,
    out_wall: *mut bool,
) -> LbsStatus {
    guard(|| {
        let w = &deref(world, "world")?.inner;
        let c = cell_of(w, x, y)?;
        *out(out_wall, "out_wall")? = w.is_wall(c);
        Ok(())
    })
}

/// Runs every configured agent on seeds `[seed_start, seed_end)` with `jobs`
/// worker threads and normalizes returns against the Unsafe agent.
///
/// # Safety
/// `config` must be a live handle; `out_experiment` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_experiment_run(
    config: *const LbsConfig,
    seed_start: u64,
    seed_end: u64,
    jobs: usize,
    out_experiment: *mut *mut LbsExperiment,
) -> LbsStatus {
    guard(|| {
        let cfg = deref(config, "config")?.inner.clone();
        let slot = out(out_experiment, "out_experiment")?;
        if seed_start >= seed_end || jobs == 0 {
            return Err((
                LbsStatus::InvalidArgument,
                "need seed_start < seed_end and jobs >= 1".into(),
            ));
        }
        let outcome = lib(run_experiment(&cfg, seed_start..seed_end, jobs))?;
        let (records, excluded) = lib(normalize_returns(&outcome.records))?;
        let summary = lib(summarize(&records))?;
        *slot = Box::into_raw(Box::new(LbsExperiment {
            config: cfg,
            outcome,
            records,
            excluded,
            summary,
        }));
        Ok(())
    })
}

/// Releases an experiment. Null is ignored.
///
/// # Safety
/// `experiment` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lbs_experiment_free(experiment: *mut LbsExperiment) {
    if !experiment.is_null() {
        drop(Box::from_raw(experiment));
    }
}

/// Number of records, completed seeds and skipped seeds.
///
/// # Safety
/// `experiment` must be a live handle; the out pointers must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_experiment_counts(
    experiment: *const LbsExperiment,
    out_records: *mut usize,
    out_completed: *mut usize,
    out_skipped: *mut usize,
) -> LbsStatus {
    guard(|| {
        let e = deref(experiment, "experiment")?;
        *out(out_records, "out_records")? = e.records.len();
        *out(out_completed, "out_completed")? = e.outcome.completed_seeds.len();
        *out(out_skipped, "out_skipped")? = e.outcome.skipped.len();
        Ok(())
    })
}

/// Record `index` in seed order.
///
/// # Safety
/// `experiment` must be a live handle; `out_record` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_experiment_record(
    experiment: *const LbsExperiment,
    index: usize,
    out_record: *mut LbsRecord,
) -> LbsStatus {
    guard(|| {
        let e = deref(experiment, "experiment")?;
        let slot = out(out_record, "out_record")?;
        let r = e
            .records
            .get(index)
            .ok_or_else(|| (LbsStatus::InvalidArgument, format!("record index {index} out of range")))?;
        *slot = LbsRecord {
            seed: r.seed,
            agent: r.agent.index() as u32,
            episode: r.episode as u64,
            raw_return: r.raw_return,
            normalized_return: r.normalized_return,
            unsafe_actions: r.unsafe_actions as u64,
            fallback_events: r.fallback_events as u64,
            min_margin: r.min_margin,
            wall_time_ms: r.wall_time_ms,
        };
        Ok(())
    })
}

/// Summary of `agent`; fails with `InvalidArgument` when the agent did not run.
///
/// # Safety
/// `experiment` must be a live handle; `out_summary` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn lbs_experiment_summary(
    experiment: *const LbsExperiment,
    agent: LbsAgent,
    out_summary: *mut LbsSummary,
) -> LbsStatus {
    guard(|| {
        let e = deref(experiment, "experiment")?;
        let slot = out(out_summary, "out_summary")?;
        let kind = AgentKind::from(agent);
        let row = e
            .summary
            .iter()
            .find(|r| r.agent == kind)
            .ok_or_else(|| (LbsStatus::InvalidArgument, format!("agent {kind} was not run")))?;
        *slot = LbsSummary {
            episodes: row.episodes as u64,
            return_mean: row.return_mean,
            return_std: row.return_std,
            unsafe_mean: row.unsafe_mean,
            unsafe_std: row.unsafe_std,
            fallback_total: row.fallback_total as u64,
            seeds_with_violations: row.seeds_with_violations as u64,
        };
        Ok(())
    })
}

/// Writes records, summary and configuration files into directory `dir`.
///
/// # Safety
/// `experiment` must be a live handle; `dir` must be null or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lbs_experiment_write(
    experiment: *const LbsExperiment,
    dir: *const c_char,
    plot: bool,
) -> LbsStatus {
    guard(|| {
        let e = deref(experiment, "experiment")?;
        let dir = utf8(dir, "dir")?;
        lib(emit_outputs(
            Path::new(dir),
            &e.config,
            &e.outcome,
            &e.records,
            &e.excluded,
            &e.summary,
            plot,
        ))?;
        Ok(())
    })
}
