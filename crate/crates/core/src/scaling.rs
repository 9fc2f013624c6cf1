//! The exact-scaling auxiliary field `X_ε`, its mollified comparison kernel,
//! the multifractal exponent `ζ(q)` and Monte-Carlo moment estimators.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check, Error, Result};
use crate::geometry::Point;
use crate::rng::{Purpose, StreamKey};

/// Dense factorization regime.
pub const AUX_POINT_BUDGET: usize = 2000;

/// `φ(x) = √((1 - x)₊)`.
pub fn bump(x: f64) -> f64 {
    (1.0 - x).max(0.0).sqrt()
}

fn log_plus_inv(r: f64) -> f64 {
    (-r.ln()).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuxFieldKernel {
    pub epsilon: f64,
}

impl AuxFieldKernel {
    pub fn new(epsilon: f64) -> Result<Self> {
        check(epsilon > 0.0 && epsilon.is_finite(), || format!("epsilon must be positive, got {epsilon}"))?;
        Ok(Self { epsilon })
    }

    /// `c_ε(0, 0)`.
    pub fn sigma_sq(&self) -> f64 {
        aux_covariance(Point::new(0.0, 0.0), Point::new(0.0, 0.0), self.epsilon)
    }

    pub fn covariance(&self, x: Point, y: Point) -> f64 {
        aux_covariance(x, y, self.epsilon)
    }
}

/// `c_ε(x, y) = log₊(1/(|x-y| ∨ ε)) + φ(|x-y|/ε)`.
pub fn aux_covariance(x: Point, y: Point, epsilon: f64) -> f64 {
    let r = x.dist(y);
    log_plus_inv(r.max(epsilon)) + bump(r / epsilon)
}

/// `c_{λε}(λx, λy) - c_ε(x, y) - log(1/λ)`. Zero when `ε ≤ 1` and
/// `|x - y| ≤ 1`; outside that region the `log₊` clamp can act on one side only.
pub fn scaling_residual(x: Point, y: Point, epsilon: f64, lambda: f64) -> f64 {
    let sx = Point::new(lambda * x.x, lambda * x.y);
    let sy = Point::new(lambda * y.x, lambda * y.y);
    aux_covariance(sx, sy, lambda * epsilon) - aux_covariance(x, y, epsilon) + lambda.ln()
}

pub fn aux_covariance_matrix(points: &[Point], epsilon: f64) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| aux_covariance(points[i], points[j], epsilon))
}

/// Draws joint samples of `X_ε` on a fixed point set: `x = F z` with
/// `F Fᵀ = C`.
#[derive(Debug, Clone)]
pub struct AuxFieldSampler {
    factor: DMatrix<f64>,
    /// Smallest eigenvalue found, when the eigen route was taken.
    pub min_eigenvalue: Option<f64>,
    /// Eigenvalue mass removed by clipping, relative to the trace.
    pub clipped_fraction: f64,
}

impl AuxFieldSampler {
    /// Exact covariance; fails on point sets where `c_ε` is indefinite.
    pub fn new(points: &[Point], epsilon: f64) -> Result<Self> {
        Self::check_points(points, epsilon)?;
        Self::from_covariance(aux_covariance_matrix(points, epsilon))
    }

    /// Nearest positive semidefinite covariance (negative eigenvalues set to
    /// zero). `c_ε` is not positive definite in the plane, so dense point
    /// sets need this.
    pub fn nearest_psd(points: &[Point], epsilon: f64) -> Result<Self> {
        Self::check_points(points, epsilon)?;
        let c = aux_covariance_matrix(points, epsilon);
        if let Some(ch) = Cholesky::new(c.clone()) {
            return Ok(Self { factor: ch.unpack(), min_eigenvalue: None, clipped_fraction: 0.0 });
        }
        Ok(Self::clipped(c).0)
    }

    fn check_points(points: &[Point], epsilon: f64) -> Result<()> {
        AuxFieldKernel::new(epsilon)?;
        if points.len() > AUX_POINT_BUDGET {
            return Err(Error::BudgetExceeded { needed: points.len(), limit: AUX_POINT_BUDGET });
        }
        Ok(())
    }

    /// Cholesky when it succeeds, otherwise a symmetric eigendecomposition
    /// with eigenvalues above `-1e-8 · max` clamped to zero.
    pub fn from_covariance(c: DMatrix<f64>) -> Result<Self> {
        if let Some(ch) = Cholesky::new(c.clone()) {
            return Ok(Self { factor: ch.unpack(), min_eigenvalue: None, clipped_fraction: 0.0 });
        }
        let (s, max) = Self::clipped(c);
        let min = s.min_eigenvalue.unwrap();
        if min < -1e-8 * max.abs() {
            return Err(Error::NotPositiveSemidefinite { min, max });
        }
        Ok(s)
    }

    fn clipped(c: DMatrix<f64>) -> (Self, f64) {
        let trace = c.trace();
        let eig = SymmetricEigen::new(c);
        let (min, max) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        let removed: f64 = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
        let scale = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = eig.eigenvectors * DMatrix::from_diagonal(&scale);
        (Self { factor, min_eigenvalue: Some(min), clipped_fraction: removed / trace }, max)
    }

    /// Marginal variances of the sampled field.
    pub fn variances(&self) -> Vec<f64> {
        self.factor.row_iter().map(|r| r.norm_squared()).collect()
    }

    pub fn len(&self) -> usize {
        self.factor.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.len(), |_, _| rng.sample(StandardNormal));
        (&self.factor * z).iter().copied().collect()
    }

    /// `count` draws as the columns of a matrix.
    pub fn draw_many<R: Rng>(&self, rng: &mut R, count: usize) -> DMatrix<f64> {
        let z = DMatrix::from_fn(self.len(), count, |_, _| rng.sample(StandardNormal));
        &self.factor * z
    }
}

pub fn sample_aux_field(points: &[Point], epsilon: f64, seed: u64) -> Result<Vec<f64>> {
    let sampler = AuxFieldSampler::new(points, epsilon)?;
    Ok(sampler.draw(&mut StreamKey::new(seed, 0).rng(Purpose::Aux)))
}

const GL8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

fn gauss_legendre(a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    GL8.iter().map(|&(x, w)| w * (f(m - h * x) + f(m + h * x))).sum::<f64>() * h
}

/// One quadrature level of `(f ⋆ θ_ε)(z)` for `|z| = r`; `level` doubles both
/// the radial panel count and the angular node count.
fn mollified_level(r: f64, epsilon: f64, level: u32) -> f64 {
    let e2 = epsilon * epsilon;
    // Angular mean of exp(-κ(1 - cos φ)) by the periodic trapezoid rule.
    let angular = |rho: f64| -> f64 {
        let kappa = r * rho / e2;
        if kappa == 0.0 {
            return 1.0;
        }
        let n = (16 + 8 * kappa.sqrt().ceil() as usize) << level;
        let s: f64 = (0..n).map(|j| (-kappa * (1.0 - (std::f64::consts::TAU * j as f64 / n as f64).cos())).exp()).sum();
        s / n as f64
    };
    let g = |rho: f64| -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        -rho.ln() * rho / e2 * (-(r - rho).powi(2) / (2.0 * e2)).exp() * angular(rho)
    };
    let lo = (r - 12.0 * epsilon).max(0.0);
    let hi = (r + 12.0 * epsilon).min(1.0);
    if lo >= hi {
        return 0.0;
    }
    let mut total = 0.0;
    let mut a = lo;
    if lo == 0.0 {
        // Geometric panels towards the logarithmic singularity at 0.
        let first = hi.min(epsilon);
        let mut b = first;
        for _ in 0..(30 << level) {
            let next = b * 0.5f64.powf(1.0 / (1u32 << level) as f64);
            total += gauss_legendre(next, b, &g);
            b = next;
        }
        a = first;
    }
    if a < hi {
        let panels = (((hi - a) / (0.5 * epsilon)).ceil() as usize).max(1) << level;
        let h = (hi - a) / panels as f64;
        total += (0..panels).map(|i| gauss_legendre(a + i as f64 * h, a + (i + 1) as f64 * h, &g)).sum::<f64>();
    }
    total
}

/// `(f ⋆ θ_ε)(x - y)` with `f = log₊(1/|·|)` and `θ_ε` the centered Gaussian
/// density of standard deviation `ε`.
pub fn mollified_covariance(x: Point, y: Point, epsilon: f64) -> Result<f64> {
    AuxFieldKernel::new(epsilon)?;
    let r = x.dist(y);
    let coarse = mollified_level(r, epsilon, 0);
    let fine = mollified_level(r, epsilon, 1);
    if (fine - coarse).abs() > 1e-6 {
        return Err(Error::QuadratureNonconvergence((fine - coarse).abs()));
    }
    Ok(fine)
}

/// Empirical constants in `log₊(1/|z|) - c₁ ≤ (f ⋆ θ_ε)(z) ≤ log₊(1/|z|) + c₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichConstants {
    pub epsilon: f64,
    pub c1: f64,
    pub c2: f64,
    pub n_radii: usize,
}

pub fn sandwich_constants(epsilon: f64, radii: &[f64]) -> Result<SandwichConstants> {
    let (mut c1, mut c2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &r in radii {
        let m = mollified_covariance(Point::new(0.0, 0.0), Point::new(r, 0.0), epsilon)?;
        let f = log_plus_inv(r);
        c1 = c1.max(f - m);
        c2 = c2.max(m - f);
    }
    Ok(SandwichConstants { epsilon, c1, c2, n_radii: radii.len() })
}

/// `ζ(q) = q²γ²/2 - q(2 + γ²/2) + 2`.
pub fn zeta(q: f64, gamma: f64) -> f64 {
    let g2 = gamma * gamma / 2.0;
    // Factored form, so that ζ(1) = 0 holds in floating point.
    (q - 1.0) * (q * g2 - 2.0)
}

/// `ζ'(1) = γ²/2 - 2`.
pub fn zeta_prime_at_one(gamma: f64) -> f64 {
    gamma * gamma / 2.0 - 2.0
}

/// Minimizer of `ζ(·, γ)` over `[lo, hi]`.
pub fn zeta_argmin(gamma: f64, lo: f64, hi: f64) -> f64 {
    if gamma == 0.0 {
        return hi;
    }
    let g2 = gamma * gamma / 2.0;
    ((2.0 + g2) / (2.0 * g2)).clamp(lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSpec {
    pub gamma: f64,
    pub q: f64,
    pub epsilon: f64,
    /// Checkerboard depth: subsquares of side `2^{-m}`.
    pub m: u32,
    pub n_replicates: usize,
    pub start: Point,
    /// Time horizon; `None` integrates up to the exit time of `[-1, 2]²`.
    pub horizon: Option<f64>,
}

impl MomentSpec {
    pub fn new(gamma: f64, q: f64, epsilon: f64, m: u32, n_replicates: usize) -> Self {
        Self { gamma, q, epsilon, m, n_replicates, start: Point::new(0.5, 0.5), horizon: None }
    }

    pub fn net_spacing(&self) -> f64 {
        self.epsilon * self.epsilon / 4.0
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.q > 1.0 && self.q < 2.0) {
            v.push(format!("q must lie in (1, 2), got {}", self.q));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.125) {
            v.push(format!("epsilon must lie in (0, 1/8], got {}", self.epsilon));
        }
        if !self.gamma.is_finite() {
            v.push("gamma must be finite".into());
        }
        if self.n_replicates < 2 {
            v.push("at least two replicates are needed".into());
        }
        if !(self.start.x > 0.0 && self.start.x < 1.0 && self.start.y > 0.0 && self.start.y < 1.0) {
            v.push("start must lie in the open unit square".into());
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                v.push(format!("horizon must be positive, got {h}"));
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub gamma: f64,
    pub q: f64,
    pub epsilon: f64,
    pub m: u32,
    /// Estimate of `f_ε(z)`.
    pub value: f64,
    pub stderr: f64,
    pub n_replicates: usize,
    /// `E Σ_i d_i^q` over the subsquares.
    pub diagonal: f64,
    pub diagonal_stderr: f64,
    /// `E Σ_{i≠j} d_i^{q/2} d_j^{q/2}`.
    pub cross: f64,
    pub cross_stderr: f64,
    pub diagonal_share: f64,
    pub cross_share: f64,
    pub max_points: usize,
    /// Largest relative eigenvalue mass clipped from `c_ε` in any replicate.
    pub max_clipped_fraction: f64,
}

/// Net points of one walk from `start` until it leaves `[-1, 2]²` or reaches
/// the horizon, keeping those inside `[0, 1]²`.
fn walk_in_square(spec: &MomentSpec, key: StreamKey) -> Vec<Point> {
    let mut rng = key.rng(Purpose::Path);
    let sd = spec.net_spacing().sqrt();
    let max_steps = spec.horizon.map(|h| (h / spec.net_spacing() + 1e-9).floor() as usize).unwrap_or(usize::MAX);
    let inside = |p: Point| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y);
    let mut p = spec.start;
    let mut out = vec![p];
    for _ in 0..max_steps {
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        p = Point::new(p.x + sd * dx, p.y + sd * dy);
        if !(-1.0..=2.0).contains(&p.x) || !(-1.0..=2.0).contains(&p.y) {
            break;
        }
        if inside(p) {
            out.push(p);
        }
    }
    out
}

struct Replicate {
    total: f64,
    diagonal: f64,
    cross: f64,
    points: usize,
    clipped: f64,
}

fn moment_replicate(spec: &MomentSpec, key: StreamKey) -> Result<Replicate> {
    let points = walk_in_square(spec, key);
    if points.len() > AUX_POINT_BUDGET {
        return Err(Error::BudgetExceeded { needed: points.len(), limit: AUX_POINT_BUDGET });
    }
    let (weights, clipped) = if spec.gamma == 0.0 {
        (vec![1.0; points.len()], 0.0)
    } else {
        let sampler = AuxFieldSampler::nearest_psd(&points, spec.epsilon)?;
        let x = sampler.draw(&mut key.rng(Purpose::Aux));
        // Normalize by the variance actually sampled so that E e^{X̄} = 1.
        let half = spec.gamma * spec.gamma / 2.0;
        let w = x.iter().zip(sampler.variances()).map(|(v, s)| (spec.gamma * v - half * s).exp()).collect();
        (w, sampler.clipped_fraction)
    };
    let dt = spec.net_spacing();
    let side = 1usize << spec.m;
    let mut d = vec![0.0; side * side];
    for (p, w) in points.iter().zip(&weights) {
        let i = ((p.x * side as f64) as usize).min(side - 1);
        let j = ((p.y * side as f64) as usize).min(side - 1);
        d[i * side + j] += dt * w;
    }
    let total: f64 = d.iter().sum();
    let diagonal: f64 = d.iter().map(|v| v.powf(spec.q)).sum();
    let half: f64 = d.iter().map(|v| v.powf(spec.q / 2.0)).sum();
    let cross = (half * half - d.iter().map(|v| v.powf(spec.q)).sum::<f64>()).max(0.0);
    Ok(Replicate { total: total.powf(spec.q), diagonal, cross, points: points.len(), clipped })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte-Carlo estimate of `f_ε(z) = E_z[(∫₀^T e^{X̄_ε(B_s)} 1{B_s ∈ S} ds)^q]`
/// with the integral replaced by a net sum at spacing `ε²/4`.
pub fn moment_estimator(spec: &MomentSpec, seed: u64) -> Result<MomentEstimate> {
    let violations = spec.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidParameter(violations.join("; ")));
    }
    let reps = (0..spec.n_replicates as u64)
        .into_par_iter()
        .map(|r| moment_replicate(spec, StreamKey::new(seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let (value, stderr) = mean_se(&reps.iter().map(|r| r.total).collect::<Vec<_>>());
    let (diagonal, diagonal_stderr) = mean_se(&reps.iter().map(|r| r.diagonal).collect::<Vec<_>>());
    let (cross, cross_stderr) = mean_se(&reps.iter().map(|r| r.cross).collect::<Vec<_>>());
    let denom = diagonal + cross;
    let (diagonal_share, cross_share) = if denom > 0.0 { (diagonal / denom, cross / denom) } else { (0.0, 0.0) };
    Ok(MomentEstimate {
        gamma: spec.gamma,
        q: spec.q,
        epsilon: spec.epsilon,
        m: spec.m,
        value,
        stderr,
        n_replicates: spec.n_replicates,
        diagonal,
        diagonal_stderr,
        cross,
        cross_stderr,
        diagonal_share,
        cross_share,
        max_points: reps.iter().map(|r| r.points).max().unwrap_or(0),
        max_clipped_fraction: reps.iter().map(|r| r.clipped).fold(0.0, f64::max),
    })
}
