//! Liouville Brownian motion: planar Brownian motion run on the clock
//! `μ_ε(t) = ∫₀^{t∧T} exp(γ h_ε(B_s) - (γ²/2) Var h_ε(B_s)) ds`, where `h_ε`
//! is the circle-average regularization of a Gaussian Free Field.

pub mod error;
pub mod geometry;
pub mod gff;
pub mod clock;
pub mod path;
pub mod rng;
pub mod scaling;
pub mod analysis;
pub mod ks;
pub mod experiment;

pub use error::{Error, Result};
