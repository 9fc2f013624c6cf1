//! Spectral Gaussian Free Field on the unit square.
//!
//! The field is `h = Σ X_i f_i` with `f_i = √(2π/λ_i) e_i`, where
//! `e_{mn}(x, y) = 2 sin(mπx) sin(nπy)` are the Dirichlet eigenfunctions of
//! `-Δ` with eigenvalues `λ_{mn} = π²(m² + n²)`. With this scaling the
//! covariance is the Green function normalized as `-log|x - y|`.
//!
//! A radius-ε circle average of an eigenfunction is `J₀(√λ ε)` times its
//! value at the center, so circle averages of the truncated field are exact.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check, Error, Result};
use crate::geometry::{log_conformal_radius_square, DomainKind, DomainSpec, Point};
use crate::rng::{Purpose, StreamKey};

/// Tail threshold on the truncated variance above which a warning is raised.
pub const TAIL_WARNING: f64 = 0.02;

const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub m: u32,
    pub n: u32,
    pub lambda: f64,
}

/// The first `n_modes` eigenmodes ordered by `(λ, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeBasis {
    modes: Vec<Mode>,
    m_max: usize,
    n_max: usize,
}

impl ModeBasis {
    pub fn new(n_modes: usize) -> Result<Self> {
        check(n_modes >= 1, || "n_modes must be positive".into())?;
        // Quarter-disc |(m, n)| ≤ radius holds ≈ π radius²/4 lattice points.
        let mut radius = (4.0 * n_modes as f64 / PI).sqrt().ceil() as u64 + 2;
        let mut pairs: Vec<(u64, u32, u32)> = loop {
            let r2 = radius * radius;
            let v: Vec<(u64, u32, u32)> = (1..=radius)
                .flat_map(|m| (1..=radius).map(move |n| (m * m + n * n, m as u32, n as u32)))
                .filter(|&(s, _, _)| s <= r2)
                .collect();
            if v.len() >= n_modes {
                break v;
            }
            radius += 4;
        };
        pairs.sort_unstable_by_key(|&(s, m, _)| (s, m));
        pairs.truncate(n_modes);
        Ok(Self::from_pairs(pairs.into_iter().map(|(_, m, n)| (m, n))))
    }

    fn from_pairs(pairs: impl Iterator<Item = (u32, u32)>) -> Self {
        let modes: Vec<Mode> = pairs
            .map(|(m, n)| Mode { m, n, lambda: PI * PI * (m as f64 * m as f64 + n as f64 * n as f64) })
            .collect();
        let m_max = modes.iter().map(|md| md.m as usize).max().unwrap_or(0);
        let n_max = modes.iter().map(|md| md.n as usize).max().unwrap_or(0);
        Self { modes, m_max, n_max }
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn max_lambda(&self) -> f64 {
        self.modes.last().map_or(0.0, |m| m.lambda)
    }

    fn prefix(&self, n: usize) -> Self {
        Self::from_pairs(self.modes[..n].iter().map(|m| (m.m, m.n)))
    }

    /// Per-mode circle-average factors `J₀(√λ ε)` for a radius in unit-square units.
    pub fn attenuation(&self, epsilon: f64) -> Vec<f64> {
        self.modes.iter().map(|m| libm::j0(m.lambda.sqrt() * epsilon)).collect()
    }

    /// Heuristic variance tail beyond the truncation for a circle average of
    /// radius `epsilon`: `1/(π ε √Λ)`, from `J₀(x)² ≈ 1/(πx)` on average and
    /// a mode density of `1/(4π)` per unit of λ.
    pub fn variance_tail(&self, epsilon: f64) -> f64 {
        1.0 / (PI * epsilon * self.max_lambda().sqrt())
    }
}

/// Affine placement of the unit square in simulation coordinates:
/// `p = origin + side · u` with `u ∈ [0, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareEmbedding {
    pub origin: Point,
    pub side: f64,
}

impl SquareEmbedding {
    pub const UNIT: Self = Self { origin: Point::new(0.0, 0.0), side: 1.0 };

    /// The square `[-1, 1]²`, which contains the unit disc.
    pub const AROUND_DISC: Self = Self { origin: Point::new(-1.0, -1.0), side: 2.0 };

    pub fn for_domain(domain: &DomainSpec) -> Self {
        match domain.kind {
            DomainKind::UnitSquare => Self::UNIT,
            DomainKind::UnitDisc => Self::AROUND_DISC,
        }
    }

    pub fn to_unit(&self, p: Point) -> Point {
        Point::new((p.x - self.origin.x) / self.side, (p.y - self.origin.y) / self.side)
    }

    /// Distance from `p` to the square boundary, in simulation units.
    pub fn dist_to_boundary(&self, p: Point) -> f64 {
        let u = self.to_unit(p);
        self.side * u.x.min(1.0 - u.x).min(u.y).min(1.0 - u.y)
    }

    /// `log R(p; square)` in simulation units.
    pub fn log_conformal_radius(&self, p: Point) -> f64 {
        self.side.ln() + log_conformal_radius_square(self.to_unit(p))
    }
}

/// One realization of the truncated field.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGff {
    basis: Arc<ModeBasis>,
    embedding: SquareEmbedding,
    coeffs: Vec<f64>,
    pub seed: u64,
    pub replicate: u64,
}

/// Samples a field on the unit square from stream `(seed, 0)`.
pub fn sample_gff(domain: &DomainSpec, n_modes: usize, seed: u64) -> Result<SpectralGff> {
    if domain.kind != DomainKind::UnitSquare {
        return Err(Error::UnsupportedDomain(
            "fields are sampled on squares; use SpectralGff::sample with SquareEmbedding::AROUND_DISC for the disc",
        ));
    }
    check(n_modes >= 64, || format!("n_modes must be at least 64, got {n_modes}"))?;
    let basis = Arc::new(ModeBasis::new(n_modes)?);
    Ok(SpectralGff::sample(basis, SquareEmbedding::UNIT, StreamKey::new(seed, 0)))
}

impl SpectralGff {
    pub fn sample(basis: Arc<ModeBasis>, embedding: SquareEmbedding, key: StreamKey) -> Self {
        let mut rng = key.rng(Purpose::Field);
        let coeffs = basis
            .modes
            .iter()
            .map(|m| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x * (2.0 * PI / m.lambda).sqrt()
            })
            .collect();
        Self { basis, embedding, coeffs, seed: key.seed, replicate: key.replicate }
    }

    /// Field with explicit coefficients, in basis order.
    pub fn from_coefficients(basis: Arc<ModeBasis>, embedding: SquareEmbedding, coeffs: Vec<f64>) -> Result<Self> {
        check(coeffs.len() == basis.len(), || {
            format!("expected {} coefficients, got {}", basis.len(), coeffs.len())
        })?;
        Ok(Self { basis, embedding, coeffs, seed: 0, replicate: 0 })
    }

    pub fn basis(&self) -> &Arc<ModeBasis> {
        &self.basis
    }

    pub fn embedding(&self) -> SquareEmbedding {
        self.embedding
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    /// Pointwise values of the truncated field (no averaging).
    pub fn values(&self, points: &[Point]) -> Vec<f64> {
        let weights = self.weights(None);
        contract(&self.basis, &self.embedding, points, weights.view(), false)
    }

    fn weights(&self, attenuation: Option<&[f64]>) -> Array2<f64> {
        let mut w = Array2::zeros((self.basis.m_max, self.basis.n_max));
        for (i, (md, c)) in self.basis.modes.iter().zip(&self.coeffs).enumerate() {
            let a = attenuation.map_or(1.0, |a| a[i]);
            w[[md.m as usize - 1, md.n as usize - 1]] = 2.0 * c * a;
        }
        w
    }
}

/// Circle averages `h_ε(z)` of one field at a fixed radius.
#[derive(Debug, Clone)]
pub struct CircleAverageEvaluator<'a> {
    field: &'a SpectralGff,
    epsilon: f64,
    attenuation: Vec<f64>,
}

impl<'a> CircleAverageEvaluator<'a> {
    /// `epsilon` is in simulation units.
    pub fn new(field: &'a SpectralGff, epsilon: f64) -> Result<Self> {
        check(epsilon > 0.0 && epsilon.is_finite(), || format!("epsilon must be positive, got {epsilon}"))?;
        let attenuation = field.basis.attenuation(epsilon / field.embedding.side);
        Ok(Self { field, epsilon, attenuation })
    }

    /// Reuses attenuation factors computed for the same basis and radius.
    pub fn with_attenuation(field: &'a SpectralGff, epsilon: f64, attenuation: Vec<f64>) -> Result<Self> {
        check(attenuation.len() == field.n_modes(), || "attenuation length mismatch".into())?;
        Ok(Self { field, epsilon, attenuation })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn attenuation(&self) -> &[f64] {
        &self.attenuation
    }

    pub fn circle_average(&self, z: Point) -> Result<f64> {
        Ok(self.circle_averages(&[z])?[0])
    }

    pub fn circle_averages(&self, points: &[Point]) -> Result<Vec<f64>> {
        for &p in points {
            self.check_inside(p)?;
        }
        let w = self.field.weights(Some(&self.attenuation));
        Ok(contract(&self.field.basis, &self.field.embedding, points, w.view(), false))
    }

    fn check_inside(&self, p: Point) -> Result<()> {
        if self.field.embedding.dist_to_boundary(p) > self.epsilon {
            Ok(())
        } else {
            Err(Error::BoundaryProximity { x: p.x, y: p.y, radius: self.epsilon })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub value: f64,
    pub tail_estimate: f64,
    pub truncation_warning: bool,
}

/// Analytic variance of the truncated circle average:
/// `Σ (2π/λ) J₀(√λ ε)² e(z)²`.
pub fn circle_average_variance(domain: &DomainSpec, z: Point, epsilon: f64, n_modes: usize) -> Result<VarianceEstimate> {
    if domain.kind != DomainKind::UnitSquare {
        return Err(Error::UnsupportedDomain("analytic circle-average variance is defined for the unit square"));
    }
    check(epsilon > 0.0, || format!("epsilon must be positive, got {epsilon}"))?;
    if domain.dist_to_boundary(z) <= epsilon {
        return Err(Error::BoundaryProximity { x: z.x, y: z.y, radius: epsilon });
    }
    let basis = ModeBasis::new(n_modes)?;
    let value = variances_along(&basis, &SquareEmbedding::UNIT, &[z], epsilon)[0];
    let tail_estimate = basis.variance_tail(epsilon);
    Ok(VarianceEstimate { value, tail_estimate, truncation_warning: tail_estimate > TAIL_WARNING })
}

/// Batched analytic variances at many points for one radius (simulation units).
pub fn variances_along(basis: &ModeBasis, embedding: &SquareEmbedding, points: &[Point], epsilon: f64) -> Vec<f64> {
    let att = basis.attenuation(epsilon / embedding.side);
    let mut w = Array2::zeros((basis.m_max, basis.n_max));
    for (md, a) in basis.modes.iter().zip(&att) {
        w[[md.m as usize - 1, md.n as usize - 1]] = 4.0 * (2.0 * PI / md.lambda) * a * a;
    }
    contract(basis, embedding, points, w.view(), true)
}

/// Orthogonal projection onto the first `n` basis functions.
pub fn project_field(field: &SpectralGff, n: usize) -> Result<SpectralGff> {
    check(n >= 1 && n <= field.n_modes(), || {
        format!("projection size must lie in [1, {}], got {n}", field.n_modes())
    })?;
    if n == field.n_modes() {
        return Ok(field.clone());
    }
    Ok(SpectralGff {
        basis: Arc::new(field.basis.prefix(n)),
        embedding: field.embedding,
        coeffs: field.coeffs[..n].to_vec(),
        seed: field.seed,
        replicate: field.replicate,
    })
}

/// Values on a `grid_n × grid_n` lattice of cell centers of the embedding
/// square: `h` itself when `epsilon` is `None`, else `h_ε` where the circle
/// fits (other cells are skipped).
pub fn grid_values(field: &SpectralGff, grid_n: usize, epsilon: Option<f64>) -> Result<Vec<(Point, f64)>> {
    let emb = field.embedding;
    let pts: Vec<Point> = (0..grid_n)
        .flat_map(|i| (0..grid_n).map(move |j| (i, j)))
        .map(|(i, j)| {
            Point::new(
                emb.origin.x + emb.side * (i as f64 + 0.5) / grid_n as f64,
                emb.origin.y + emb.side * (j as f64 + 0.5) / grid_n as f64,
            )
        })
        .collect();
    match epsilon {
        None => Ok(pts.iter().copied().zip(field.values(&pts)).collect()),
        Some(eps) => {
            let eval = CircleAverageEvaluator::new(field, eps)?;
            let inside: Vec<Point> = pts.into_iter().filter(|p| emb.dist_to_boundary(*p) > eps).collect();
            let vals = eval.circle_averages(&inside)?;
            Ok(inside.into_iter().zip(vals).collect())
        }
    }
}

/// `out_p = s_x(p)ᵀ W s_y(p)` with `s_x(p)_m = sin(mπx)`, or with squared
/// sines when `squared`. Evaluated in chunks as one matrix product per chunk.
fn contract(basis: &ModeBasis, emb: &SquareEmbedding, points: &[Point], w: ArrayView2<f64>, squared: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len());
    if basis.is_empty() {
        out.resize(points.len(), 0.0);
        return out;
    }
    for chunk in points.chunks(CHUNK) {
        let unit: Vec<Point> = chunk.iter().map(|&p| emb.to_unit(p)).collect();
        let sx = sine_table(unit.iter().map(|p| p.x), unit.len(), basis.m_max, squared);
        let sy = sine_table(unit.iter().map(|p| p.y), unit.len(), basis.n_max, squared);
        let t = sx.dot(&w);
        out.extend(t.rows().into_iter().zip(sy.rows()).map(|(a, b)| a.dot(&b)));
    }
    out
}

/// Rows `sin(mπx)` for m = 1..=cols, by the Chebyshev three-term recurrence.
fn sine_table(xs: impl Iterator<Item = f64>, rows: usize, cols: usize, squared: bool) -> Array2<f64> {
    let mut t = Array2::zeros((rows, cols));
    for (mut row, x) in t.rows_mut().into_iter().zip(xs) {
        let theta = PI * x;
        let c2 = 2.0 * theta.cos();
        let (mut prev, mut cur) = (0.0, theta.sin());
        for v in row.iter_mut() {
            *v = if squared { cur * cur } else { cur };
            let next = c2 * cur - prev;
            prev = cur;
            cur = next;
        }
    }
    t
}

/// Analytic `Var h_ε(z)` approximation `-log ε + log R(z)` for fields
/// embedded via `emb`.
pub fn conformal_variance(emb: &SquareEmbedding, z: Point, epsilon: f64) -> f64 {
    -epsilon.ln() + emb.log_conformal_radius(z)
}
