use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coincident points: |x - y| = {0:e}")]
    CoincidentPoints(f64),

    #[error("point ({x}, {y}) lies outside the domain interior")]
    OutsideDomain { x: f64, y: f64 },

    #[error("insufficient modes: {0}")]
    InsufficientModes(String),

    #[error("map has a pole at the requested point (|1 - conj(a) z| = {0:e})")]
    Pole(f64),

    #[error("unsupported domain: {0}")]
    UnsupportedDomain(&'static str),

    #[error("circle of radius {radius} around ({x}, {y}) leaves the domain")]
    BoundaryProximity { x: f64, y: f64, radius: f64 },

    #[error("start point is within the stopping margin of the boundary")]
    StartTooClose,

    #[error("epsilon {epsilon} exceeds the stopping margin {margin}")]
    EpsilonExceedsMargin { epsilon: f64, margin: f64 },

    #[error("time step {dt:e} is coarser than the admissible {max:e}")]
    DtTooCoarse { dt: f64, max: f64 },

    #[error("net spacing {spacing:e} is finer than the path step {dt:e}")]
    NetFinerThanPath { spacing: f64, dt: f64 },

    #[error("quantum time {tau} outside [0, {max}]")]
    TauOutOfRange { tau: f64, max: f64 },

    #[error("lag {lag} outside [dt, duration] = [{dt}, {duration}]")]
    LagOutOfRange { lag: f64, dt: f64, duration: f64 },

    #[error("covariance is not positive semidefinite: min eigenvalue {min:e}, max {max:e}")]
    NotPositiveSemidefinite { min: f64, max: f64 },

    #[error("quadrature did not converge: successive refinements differ by {0:e}")]
    QuadratureNonconvergence(f64),

    #[error("point budget exceeded: {needed} points, limit {limit}")]
    BudgetExceeded { needed: usize, limit: usize },

    #[error("unsupported conformal map: {0}")]
    UnsupportedMap(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg()))
    }
}
