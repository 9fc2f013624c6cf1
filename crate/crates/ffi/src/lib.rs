//! C ABI for `liouville-core`.
//!
//! Objects are opaque handles created by `lv_*_sample` / `lv_clock_compute`
//! and released with the matching `lv_*_free`. Every fallible call returns an
//! [`LvStatus`] and writes its result through an out-pointer; on failure the
//! message is available from [`lv_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use liouville_core::analysis::{kpz_dimension, q_constant, thick_dim_formula};
use liouville_core::clock::{inverse_clock, ClockProcess, ClockSpec, VarianceMode};
use liouville_core::geometry::{DomainKind, DomainSpec, Point};
use liouville_core::gff::{circle_average_variance, CircleAverageEvaluator, ModeBasis, SpectralGff, SquareEmbedding};
use liouville_core::path::BrownianPath;
use liouville_core::rng::StreamKey;
use liouville_core::scaling::zeta;
use liouville_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LvStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    OutsideDomain = 3,
    BoundaryProximity = 4,
    InsufficientModes = 5,
    OutOfRange = 6,
    Numerical = 7,
    Unsupported = 8,
    Panic = 9,
}

/// Values accepted by the `domain` arguments.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LvDomain {
    UnitSquare = 0,
    UnitDisc = 1,
}

/// Values accepted by the `variance_mode` argument.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LvVarianceMode {
    AnalyticModeSum = 0,
    ConformalRadiusFormula = 1,
}

pub struct LvGff(SpectralGff);
pub struct LvPath(BrownianPath);
pub struct LvClock(ClockProcess);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> LvStatus {
    match e {
        Error::InvalidParameter(_) | Error::CoincidentPoints(_) | Error::StartTooClose => LvStatus::InvalidArgument,
        Error::OutsideDomain { .. } => LvStatus::OutsideDomain,
        Error::BoundaryProximity { .. } => LvStatus::BoundaryProximity,
        Error::InsufficientModes(_) => LvStatus::InsufficientModes,
        Error::EpsilonExceedsMargin { .. }
        | Error::DtTooCoarse { .. }
        | Error::NetFinerThanPath { .. }
        | Error::TauOutOfRange { .. }
        | Error::LagOutOfRange { .. }
        | Error::BudgetExceeded { .. } => LvStatus::OutOfRange,
        Error::Pole(_) | Error::NotPositiveSemidefinite { .. } | Error::QuadratureNonconvergence(_) => LvStatus::Numerical,
        Error::UnsupportedDomain(_) | Error::UnsupportedMap(_) => LvStatus::Unsupported,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (LvStatus, String)>) -> LvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LvStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LvStatus::Panic
        }
    }
}

fn core<T>(r: liouville_core::Result<T>) -> Result<T, (LvStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), (LvStatus, String)> {
    if p.is_null() {
        Err((LvStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn domain_kind(domain: u32) -> Result<DomainKind, (LvStatus, String)> {
    match domain {
        0 => Ok(DomainKind::UnitSquare),
        1 => Ok(DomainKind::UnitDisc),
        d => Err((LvStatus::InvalidArgument, format!("unknown domain {d}"))),
    }
}

/// Message of the last failed call on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, NUL-terminated and static.
#[no_mangle]
pub extern "C" fn lv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Samples a spectral field with `n_modes` modes from stream `(seed, replicate)`.
/// Disc fields live on the square `[-1, 1]²`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lv_gff_sample(domain: u32, n_modes: usize, seed: u64, replicate: u64, out: *mut *mut LvGff) -> LvStatus {
    guard(|| {
        non_null(out, "out")?;
        let kind = domain_kind(domain)?;
        let basis = core(ModeBasis::new(n_modes))?;
        let emb = match kind {
            DomainKind::UnitSquare => SquareEmbedding::UNIT,
            DomainKind::UnitDisc => SquareEmbedding::AROUND_DISC,
        };
        let f = SpectralGff::sample(Arc::new(basis), emb, StreamKey::new(seed, replicate));
        *out = Box::into_raw(Box::new(LvGff(f)));
        Ok(())
    })
}

/// # Safety
/// `gff` must come from [`lv_gff_sample`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lv_gff_free(gff: *mut LvGff) {
    if !gff.is_null() {
        drop(Box::from_raw(gff));
    }
}

/// Circle average `h_ε(x, y)`.
///
/// # Safety
/// `gff` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lv_gff_circle_average(gff: *const LvGff, x: f64, y: f64, epsilon: f64, out: *mut f64) -> LvStatus {
    guard(|| {
        non_null(gff, "gff")?;
        non_null(out, "out")?;
        let eval = core(CircleAverageEvaluator::new(&(*gff).0, epsilon))?;
        *out = core(eval.circle_average(Point::new(x, y)))?;
        Ok(())
    })
}

/// Analytic variance of the truncated circle average on the unit square.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lv_circle_average_variance(x: f64, y: f64, epsilon: f64, n_modes: usize, out: *mut f64) -> LvStatus {
    guard(|| {
        non_null(out, "out")?;
        let d = core(DomainSpec::unit_square(0.25))?;
        *out = core(circle_average_variance(&d, Point::new(x, y), epsilon, n_modes))?.value;
        Ok(())
    })
}

/// Brownian path from `(x0, y0)` with step `dt`, stopped within `margin`
/// of the boundary or at `max_time`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lv_path_sample(
    domain: u32,
    margin: f64,
    x0: f64,
    y0: f64,
    dt: f64,
    max_time: f64,
    seed: u64,
    replicate: u64,
    out: *mut *mut LvPath,
) -> LvStatus {
    guard(|| {
        non_null(out, "out")?;
        let d = core(DomainSpec::new(domain_kind(domain)?, margin, 64))?;
        let p = core(BrownianPath::sample(&d, Point::new(x0, y0), dt, max_time, StreamKey::new(seed, replicate)))?;
        *out = Box::into_raw(Box::new(LvPath(p)));
        Ok(())
    })
}

/// # Safety
/// `path` must come from [`lv_path_sample`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lv_path_free(path: *mut LvPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Number of stored positions (stopping index plus one); 0 for null.
///
/// # Safety
/// `path` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lv_path_len(path: *const LvPath) -> usize {
    if path.is_null() {
        0
    } else {
        (*path).0.stop_index + 1
    }
}

/// Copies up to `capacity` positions as interleaved `x, y` pairs into `xy`
/// (which must hold `2 * capacity` doubles) and writes the count to `written`.
///
/// # Safety
/// All pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn lv_path_positions(path: *const LvPath, xy: *mut f64, capacity: usize, written: *mut usize) -> LvStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(xy, "xy")?;
        non_null(written, "written")?;
        let p = &(*path).0;
        let n = (p.stop_index + 1).min(capacity);
        for (i, q) in p.positions[..n].iter().enumerate() {
            *xy.add(2 * i) = q.x;
            *xy.add(2 * i + 1) = q.y;
        }
        *written = n;
        Ok(())
    })
}

/// Stopping time `min(T_r, max_time)` on the grid.
///
/// # Safety
/// `path` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lv_path_duration(path: *const LvPath, out: *mut f64) -> LvStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = (*path).0.duration();
        Ok(())
    })
}

/// Liouville clock `μ_ε` along `path` with `ε = 2^-k`.
///
/// # Safety
/// `gff`, `path` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lv_clock_compute(
    gff: *const LvGff,
    path: *const LvPath,
    gamma: f64,
    k: u32,
    variance_mode: u32,
    out: *mut *mut LvClock,
) -> LvStatus {
    guard(|| {
        non_null(gff, "gff")?;
        non_null(path, "path")?;
        non_null(out, "out")?;
        let mode = match variance_mode {
            0 => VarianceMode::AnalyticModeSum,
            1 => VarianceMode::ConformalRadiusFormula,
            m => return Err((LvStatus::InvalidArgument, format!("unknown variance mode {m}"))),
        };
        let c = core(ClockProcess::build(&(*gff).0, &(*path).0, &ClockSpec::new(gamma, k, mode)))?;
        *out = Box::into_raw(Box::new(LvClock(c)));
        Ok(())
    })
}

/// # Safety
/// `clock` must come from [`lv_clock_compute`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lv_clock_free(clock: *mut LvClock) {
    if !clock.is_null() {
        drop(Box::from_raw(clock));
    }
}

/// `μ_ε` at the stopping time.
///
/// # Safety
/// `clock` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lv_clock_total(clock: *const LvClock, out: *mut f64) -> LvStatus {
    guard(|| {
        non_null(clock, "clock")?;
        non_null(out, "out")?;
        *out = (*clock).0.total();
        Ok(())
    })
}

/// `μ_ε(t)`.
///
/// # Safety
/// `clock` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lv_clock_value_at(clock: *const LvClock, t: f64, out: *mut f64) -> LvStatus {
    guard(|| {
        non_null(clock, "clock")?;
        non_null(out, "out")?;
        *out = (*clock).0.value_at(t);
        Ok(())
    })
}

/// `μ_ε⁻¹(tau)` for `tau` in `[0, total]`.
///
/// # Safety
/// `clock` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn lv_clock_inverse(clock: *const LvClock, tau: f64, out: *mut f64) -> LvStatus {
    guard(|| {
        non_null(clock, "clock")?;
        non_null(out, "out")?;
        *out = core(inverse_clock(&(*clock).0, tau))?;
        Ok(())
    })
}

/// KPZ-transformed dimension of a Euclidean dimension `d0`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lv_kpz_dimension(d0: f64, gamma: f64, out: *mut f64) -> LvStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = core(kpz_dimension(d0, gamma))?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn lv_thick_dim_formula(alpha: f64, gamma: f64) -> f64 {
    thick_dim_formula(alpha, gamma)
}

#[no_mangle]
pub extern "C" fn lv_zeta(q: f64, gamma: f64) -> f64 {
    zeta(q, gamma)
}

/// `Q = γ/2 + 2/γ`.
#[no_mangle]
pub extern "C" fn lv_q_constant(gamma: f64) -> f64 {
    q_constant(gamma)
}
