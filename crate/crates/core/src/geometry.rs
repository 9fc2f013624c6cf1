//! Planar domains, Green functions, conformal radii and conformal self-maps.
//!
//! Green functions use the normalization `G(x, y) ~ -log|x - y|` on the
//! diagonal, i.e. `2π` times the Green function of `-Δ` with Dirichlet
//! boundary values. The unit square is `[0, 1]²`; the unit disc is centered at
//! the origin.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Point on the segment from `self` to `other`, `s ∈ [0, 1]`.
    pub fn lerp(self, other: Point, s: f64) -> Point {
        Point::new(self.x + s * (other.x - self.x), self.y + s * (other.y - self.y))
    }
}

impl From<Complex64> for Point {
    fn from(z: Complex64) -> Self {
        Point::new(z.re, z.im)
    }
}

impl From<Point> for Complex64 {
    fn from(p: Point) -> Self {
        Complex64::new(p.x, p.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    UnitSquare,
    UnitDisc,
}

/// Simulation domain together with the stopping margin `r` and the grid
/// resolution used for exports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub kind: DomainKind,
    pub inner_margin: f64,
    pub grid_n: usize,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, inner_margin: f64, grid_n: usize) -> Result<Self> {
        check(inner_margin > 0.0 && inner_margin < 0.5, || {
            format!("inner_margin must lie in (0, 1/2), got {inner_margin}")
        })?;
        check(grid_n >= 16, || format!("grid_n must be at least 16, got {grid_n}"))?;
        Ok(Self { kind, inner_margin, grid_n })
    }

    pub fn unit_square(inner_margin: f64) -> Result<Self> {
        Self::new(DomainKind::UnitSquare, inner_margin, 64)
    }

    pub fn unit_disc(inner_margin: f64) -> Result<Self> {
        Self::new(DomainKind::UnitDisc, inner_margin, 64)
    }

    /// Euclidean distance to the boundary; negative outside.
    pub fn dist_to_boundary(&self, p: Point) -> f64 {
        match self.kind {
            DomainKind::UnitSquare => p.x.min(1.0 - p.x).min(p.y).min(1.0 - p.y),
            DomainKind::UnitDisc => 1.0 - p.norm(),
        }
    }

    pub fn is_interior(&self, p: Point) -> bool {
        self.dist_to_boundary(p) > 0.0
    }

    fn require_interior(&self, p: Point) -> Result<()> {
        if self.is_interior(p) && p.x.is_finite() && p.y.is_finite() {
            Ok(())
        } else {
            Err(Error::OutsideDomain { x: p.x, y: p.y })
        }
    }
}

/// Green function with `G(x, y) ~ -log|x - y|` near the diagonal.
///
/// On the square the double eigenfunction sum `2π Σ e_i(x) e_i(y) / λ_i` is
/// evaluated with its inner sum done in closed form, which leaves a single
/// sine series decaying like `exp(-mπ Δ)`; `n_modes` caps the number of terms.
pub fn green_function(domain: &DomainSpec, x: Point, y: Point, n_modes: usize) -> Result<f64> {
    domain.require_interior(x)?;
    domain.require_interior(y)?;
    let d = x.dist(y);
    if d < 1e-14 {
        return Err(Error::CoincidentPoints(d));
    }
    match domain.kind {
        DomainKind::UnitDisc => {
            let (zx, zy) = (Complex64::from(x), Complex64::from(y));
            Ok((Complex64::new(1.0, 0.0) - zx * zy.conj()).norm().ln() - d.ln())
        }
        DomainKind::UnitSquare => square_green_series(x, y, n_modes),
    }
}

fn square_green_series(p: Point, q: Point, max_terms: usize) -> Result<f64> {
    // Expand along the axis with the smaller separation so the other axis
    // controls the exponential decay.
    let (a1, a2, b1, b2) = if (p.y - q.y).abs() >= (p.x - q.x).abs() {
        (p.x, q.x, p.y, q.y)
    } else {
        (p.y, q.y, p.x, q.x)
    };
    let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
    let gap = hi - lo;
    let decay = (-PI * gap).exp();
    let mut sum = 0.0;
    let mut geom = 1.0;
    let mut m = 0usize;
    loop {
        m += 1;
        if m > max_terms {
            return Err(Error::InsufficientModes(format!(
                "Green series needs more than {max_terms} terms at separation {gap:e}"
            )));
        }
        geom *= decay;
        let mf = m as f64;
        let k = mf * PI;
        let u = (-2.0 * k * lo).exp();
        let v = (-2.0 * k * (1.0 - hi)).exp();
        let w = (-2.0 * k).exp();
        let profile = geom * (1.0 - u) * (1.0 - v) / (1.0 - w);
        sum += 2.0 / mf * (k * a1).sin() * (k * a2).sin() * profile;
        // Remaining terms are bounded by a geometric tail.
        if 2.0 / mf * geom / (1.0 - decay) < 1e-17 {
            break;
        }
    }
    Ok(sum)
}

/// Conformal radius `R(z; D)`.
///
/// The disc uses `1 - |z|²`. On the square, `G(z, z ± δ e) + log δ` is
/// evaluated at `δ ∈ {2⁻⁷, 2⁻⁸, 2⁻⁹}` (scaled down near the boundary), the
/// symmetric average removes the odd terms, and one Richardson step removes
/// the `δ²` term.
pub fn conformal_radius(domain: &DomainSpec, z: Point, n_modes: usize) -> Result<f64> {
    domain.require_interior(z)?;
    match domain.kind {
        DomainKind::UnitDisc => Ok(1.0 - (z.x * z.x + z.y * z.y)),
        DomainKind::UnitSquare => {
            let base = (2f64).powi(-7).min(0.5 * domain.dist_to_boundary(z));
            let deltas = [base, base / 2.0, base / 4.0];
            let mut f = [0.0; 3];
            for (fi, &d) in f.iter_mut().zip(&deltas) {
                let up = square_green_series(z, Point::new(z.x, z.y + d), n_modes)?;
                let down = square_green_series(z, Point::new(z.x, z.y - d), n_modes)?;
                *fi = 0.5 * (up + down) + d.ln();
            }
            let coarse = (4.0 * f[1] - f[0]) / 3.0;
            let fine = (4.0 * f[2] - f[1]) / 3.0;
            if (coarse - fine).abs() > 0.02 {
                return Err(Error::InsufficientModes(format!(
                    "Richardson extrapolants differ by {:e}",
                    (coarse - fine).abs()
                )));
            }
            Ok(fine.exp())
        }
    }
}

/// `log R(z; [0,1]²)` from the closed-form diagonal limit of the Green series:
/// `log(2 sin(πx)/π) + Σ_m (1 - cos 2mπx)(F_m(y) - 1)/m`, where `F_m` carries
/// the boundary factors in `y`. Converges like `exp(-2mπ dist(z, ∂S))`.
pub fn log_conformal_radius_square(z: Point) -> f64 {
    debug_assert!(z.x > 0.0 && z.x < 1.0 && z.y > 0.0 && z.y < 1.0);
    // Put the larger boundary distance on the series axis.
    let (x, y) = if z.x.min(1.0 - z.x) > z.y.min(1.0 - z.y) { (z.y, z.x) } else { (z.x, z.y) };
    let mut sum = 0.0;
    let rate = (-2.0 * PI * y.min(1.0 - y)).exp();
    let mut m = 0usize;
    loop {
        m += 1;
        let mf = m as f64;
        let k = 2.0 * PI * mf;
        let u = (-k * y).exp();
        let v = (-k * (1.0 - y)).exp();
        let f_minus_one = (2.0 * u * v - u - v) / (1.0 - u * v);
        sum += (1.0 - (k * x).cos()) * f_minus_one / mf;
        if 2.0 * rate.powi(m as i32) / (mf * (1.0 - rate)) < 1e-17 || m > 100_000 {
            break;
        }
    }
    (2.0 * (PI * x).sin() / PI).ln() + sum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Inverse,
}

/// Conformal self-maps with exact derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConformalMap {
    /// `φ(z) = e^{iθ}(z - a)/(1 - conj(a) z)`, `|a| < 1`.
    DiscAutomorphism { a: (f64, f64), theta: f64 },
    /// `φ(z) = scale · e^{i·rotation} · z + translation`.
    Affine { scale: f64, rotation: f64, translation: (f64, f64) },
}

impl ConformalMap {
    pub fn disc_automorphism(a: Complex64, theta: f64) -> Result<Self> {
        check(a.norm() < 1.0, || format!("automorphism parameter must satisfy |a| < 1, got {a}"))?;
        Ok(Self::DiscAutomorphism { a: (a.re, a.im), theta })
    }

    pub fn rotation(theta: f64) -> Self {
        Self::DiscAutomorphism { a: (0.0, 0.0), theta }
    }

    pub fn affine(scale: f64, rotation: f64, translation: Complex64) -> Result<Self> {
        check(scale > 0.0 && scale.is_finite(), || format!("affine scale must be positive, got {scale}"))?;
        Ok(Self::Affine { scale, rotation, translation: (translation.re, translation.im) })
    }

    /// Rotation angle when the map is a rotation about the origin.
    pub fn rotation_angle(&self) -> Option<f64> {
        match *self {
            Self::DiscAutomorphism { a: (0.0, 0.0), theta } => Some(theta),
            Self::Affine { scale: 1.0, rotation, translation: (0.0, 0.0) } => Some(rotation),
            _ => None,
        }
    }

    /// True when `|φ'| ≡ 1`.
    pub fn is_isometry(&self) -> bool {
        match *self {
            Self::DiscAutomorphism { a, .. } => a == (0.0, 0.0),
            Self::Affine { scale, .. } => scale == 1.0,
        }
    }
}

pub fn map_apply(map: &ConformalMap, z: Point, direction: Direction) -> Result<Point> {
    let z = Complex64::from(z);
    let w = match (*map, direction) {
        (ConformalMap::DiscAutomorphism { a, theta }, Direction::Forward) => {
            let a = Complex64::new(a.0, a.1);
            let den = Complex64::new(1.0, 0.0) - a.conj() * z;
            pole_check(den)?;
            Complex64::from_polar(1.0, theta) * (z - a) / den
        }
        (ConformalMap::DiscAutomorphism { a, theta }, Direction::Inverse) => {
            let a = Complex64::new(a.0, a.1);
            let u = Complex64::from_polar(1.0, -theta) * z;
            let den = Complex64::new(1.0, 0.0) + a.conj() * u;
            pole_check(den)?;
            (u + a) / den
        }
        (ConformalMap::Affine { scale, rotation, translation }, Direction::Forward) => {
            Complex64::from_polar(scale, rotation) * z + Complex64::new(translation.0, translation.1)
        }
        (ConformalMap::Affine { scale, rotation, translation }, Direction::Inverse) => {
            (z - Complex64::new(translation.0, translation.1)) * Complex64::from_polar(1.0 / scale, -rotation)
        }
    };
    Ok(w.into())
}

pub fn map_derivative_modulus(map: &ConformalMap, z: Point, direction: Direction) -> Result<f64> {
    let z = Complex64::from(z);
    match (*map, direction) {
        (ConformalMap::DiscAutomorphism { a, .. }, Direction::Forward) => {
            let a = Complex64::new(a.0, a.1);
            let den = Complex64::new(1.0, 0.0) - a.conj() * z;
            pole_check(den)?;
            Ok((1.0 - a.norm_sqr()) / den.norm_sqr())
        }
        (ConformalMap::DiscAutomorphism { a, theta }, Direction::Inverse) => {
            let a = Complex64::new(a.0, a.1);
            let den = Complex64::new(1.0, 0.0) + a.conj() * Complex64::from_polar(1.0, -theta) * z;
            pole_check(den)?;
            Ok((1.0 - a.norm_sqr()) / den.norm_sqr())
        }
        (ConformalMap::Affine { scale, .. }, Direction::Forward) => Ok(scale),
        (ConformalMap::Affine { scale, .. }, Direction::Inverse) => Ok(1.0 / scale),
    }
}

fn pole_check(den: Complex64) -> Result<()> {
    if den.norm() < 1e-12 {
        Err(Error::Pole(den.norm()))
    } else {
        Ok(())
    }
}
