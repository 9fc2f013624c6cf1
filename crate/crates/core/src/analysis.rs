//! Dimension formulas, the thick-point cover of quantum time and the
//! rotation check of the clock law.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::clock::{ClockProcess, ClockSpec, Transport, VarianceMode};
use crate::error::{check, Error, Result};
use crate::geometry::{ConformalMap, Direction, DomainSpec, Point};
use crate::gff::{variances_along, CircleAverageEvaluator, ModeBasis, SpectralGff, SquareEmbedding};
use crate::ks::{ks_two_sample, KsResult};
use crate::path::BrownianPath;
use crate::rng::StreamKey;

/// Smaller root of `d₀ + d²γ²/2 - d(2 + γ²/2) = 0`.
pub fn kpz_dimension(d0: f64, gamma: f64) -> Result<f64> {
    check((0.0..=2.0).contains(&d0), || format!("d0 must lie in [0, 2], got {d0}"))?;
    check((0.0..2.0).contains(&gamma), || format!("gamma must lie in [0, 2), got {gamma}"))?;
    let a = gamma * gamma / 2.0;
    let b = 2.0 + a;
    // 2d₀ / (b + √(b² - 4ad₀)) avoids cancellation and covers γ = 0.
    let disc = b * b - 4.0 * a * d0;
    let d = 2.0 * d0 / (b + disc.sqrt());
    assert!((0.0..=1.0 + 1e-12).contains(&d), "KPZ root {d} outside [0, 1]");
    Ok(d)
}

/// `(2 - α²/2) / (2 - αγ + γ²/2)`, clamped below at 0.
pub fn thick_dim_formula(alpha: f64, gamma: f64) -> f64 {
    let num = 2.0 - alpha * alpha / 2.0;
    if num <= 0.0 {
        return 0.0;
    }
    // Same denominator, written so that α = γ gives num/num.
    num / (num + (alpha - gamma).powi(2) / 2.0)
}

/// Dimension of the `α`-thick points of the field, `(2 - α²/2) ∨ 0`.
pub fn hmp_dimension(alpha: f64) -> f64 {
    (2.0 - alpha * alpha / 2.0).max(0.0)
}

/// `Q = γ/2 + 2/γ`.
pub fn q_constant(gamma: f64) -> f64 {
    gamma / 2.0 + 2.0 / gamma
}

/// `Σ_j P(N(0, V_j) ≥ threshold)`.
pub fn gaussian_tail_expectation(variances: &[f64], threshold: f64) -> f64 {
    variances.iter().map(|&v| 0.5 * libm::erfc(threshold / (2.0 * v).sqrt())).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThickParams {
    pub alpha: f64,
    pub delta: f64,
    pub eta: f64,
    pub n_min: u32,
    pub n_max: u32,
    /// Replaces `K = 3/(η(2 - α²/2))`; required when `α ≥ 2`.
    pub k_override: Option<f64>,
}

impl ThickParams {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, delta: 0.05, eta: 0.5, n_min: 2, n_max: 6, k_override: None }
    }

    pub fn k_exponent(&self) -> Result<f64> {
        if let Some(k) = self.k_override {
            check(k > 0.0 && k.is_finite(), || format!("K must be positive, got {k}"))?;
            return Ok(k);
        }
        let denom = self.eta * (2.0 - self.alpha * self.alpha / 2.0);
        check(denom > 0.0, || format!("K = 3/(η(2 - α²/2)) is undefined for α = {}; set K explicitly", self.alpha))?;
        Ok(3.0 / denom)
    }

    pub fn radius(&self, n: u32) -> Result<f64> {
        Ok((n as f64).powf(-self.k_exponent()?))
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            v.push(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if !(self.delta > 0.0) {
            v.push(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.eta > 0.0) {
            v.push(format!("eta must be positive, got {}", self.eta));
        }
        if self.n_min < 2 || self.n_min > self.n_max {
            v.push(format!("n range must satisfy 2 ≤ n_min ≤ n_max, got {}..={}", self.n_min, self.n_max));
        }
        if let Err(e) = self.k_exponent() {
            v.push(e.to_string());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThickLevel {
    pub n: u32,
    pub r: f64,
    /// `⌊1/r_n²⌋`.
    pub full_net_size: usize,
    /// Net times inside the covered prefix.
    pub net_size: usize,
    /// Net points whose circle of radius `r_n` leaves the domain.
    pub dropped: usize,
    pub threshold: f64,
    /// Selected `j` (times `t_{nj} = j r_n²`).
    pub selected: Vec<usize>,
    /// `[μ(t_{nj} - r_n²), μ(t_{nj} + r_n²)]` per selected `j`.
    pub intervals: Vec<(f64, f64)>,
    /// Expected `|I_n|` given the path, from the exact variance of the truncated field.
    pub expected_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThickPointCover {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub k_exponent: f64,
    pub levels: Vec<ThickLevel>,
    /// The nets were cut at the end of the path before time 1.
    pub partial: bool,
}

impl ThickPointCover {
    pub fn is_empty(&self) -> bool {
        self.levels.iter().all(|l| l.selected.is_empty())
    }

    pub fn diameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.levels.iter().flat_map(|l| l.intervals.iter().map(|(a, b)| b - a))
    }
}

fn dist_inside(field: &SpectralGff, path: &BrownianPath, p: Point) -> f64 {
    let d = field.embedding().dist_to_boundary(p);
    match &path.domain {
        Some(dom) => d.min(dom.dist_to_boundary(p)),
        None => d,
    }
}

pub fn build_thick_cover(
    field: &SpectralGff,
    path: &BrownianPath,
    clock: &ClockProcess,
    params: &ThickParams,
) -> Result<ThickPointCover> {
    let violations = params.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidParameter(violations.join("; ")));
    }
    let k_exponent = params.k_exponent()?;
    let end = 1f64.min(path.duration()).min(clock.end_time());
    let mut levels = Vec::new();
    for n in params.n_min..=params.n_max {
        let r = params.radius(n)?;
        let spacing = r * r;
        if spacing < path.dt * (1.0 - 1e-12) {
            return Err(Error::NetFinerThanPath { spacing, dt: path.dt });
        }
        let full_net_size = (1.0 / spacing + 1e-9).floor() as usize;
        let threshold = (params.alpha - params.delta) * (1.0 / r).ln();
        let mut js = Vec::new();
        let mut points = Vec::new();
        let mut net_size = 0;
        let mut dropped = 0;
        for j in 1..=full_net_size {
            let t = j as f64 * spacing;
            if t > end + 1e-12 {
                break;
            }
            net_size += 1;
            let p = path.position_at(t);
            if dist_inside(field, path, p) > r {
                js.push(j);
                points.push(p);
            } else {
                dropped += 1;
            }
        }
        let h = CircleAverageEvaluator::new(field, r)?.circle_averages(&points)?;
        let variances = variances_along(field.basis(), &field.embedding(), &points, r);
        let expected_count = gaussian_tail_expectation(&variances, threshold);
        let mut selected = Vec::new();
        let mut intervals = Vec::new();
        for (&j, &v) in js.iter().zip(&h) {
            if v >= threshold {
                let t = j as f64 * spacing;
                selected.push(j);
                intervals.push((clock.value_at(t - spacing), clock.value_at(t + spacing)));
            }
        }
        levels.push(ThickLevel { n, r, full_net_size, net_size, dropped, threshold, selected, intervals, expected_count });
    }
    Ok(ThickPointCover {
        alpha: params.alpha,
        gamma: clock.gamma,
        delta: params.delta,
        eta: params.eta,
        k_exponent,
        levels,
        partial: end < 1.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverDimension {
    pub estimate: f64,
    pub empty: bool,
    /// Whether some `q` on the grid brought the sum below the threshold.
    pub reached: bool,
    /// `(q, Σ diam^q)` over the grid.
    pub sums: Vec<(f64, f64)>,
}

/// Smallest `q` on the grid with `Σ_n Σ_{j ∈ I_n} diam([a_nj, b_nj])^q < threshold`.
/// When no grid value gets there the largest `q` is returned with `reached = false`.
pub fn cover_dimension_estimate(cover: &ThickPointCover, q_grid: &[f64], threshold: f64) -> CoverDimension {
    let mut grid = q_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    if cover.is_empty() || grid.is_empty() {
        return CoverDimension { estimate: 0.0, empty: cover.is_empty(), reached: false, sums: Vec::new() };
    }
    let sums: Vec<(f64, f64)> = grid.iter().map(|&q| (q, cover.diameters().map(|d| d.powf(q)).sum())).collect();
    match sums.iter().find(|(_, s)| *s < threshold) {
        Some(&(q, _)) => CoverDimension { estimate: q, empty: false, reached: true, sums },
        None => CoverDimension { estimate: *grid.last().unwrap(), empty: false, reached: false, sums },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformalCheckSpec {
    pub gamma: f64,
    pub k: u32,
    pub theta: f64,
    pub n_replicates: usize,
    pub seed: u64,
    pub start: Point,
    pub margin: f64,
    pub n_modes: usize,
    /// Sample (ii) reuses the streams of sample (i).
    pub shared_seeds: bool,
}

impl ConformalCheckSpec {
    pub fn new(gamma: f64, k: u32, theta: f64, n_replicates: usize, seed: u64) -> Self {
        Self {
            gamma,
            k,
            theta,
            n_replicates,
            seed,
            start: Point::new(0.3, 0.0),
            margin: 0.1,
            n_modes: 256 * 256,
            shared_seeds: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformalReport {
    pub gamma: f64,
    pub k: u32,
    pub theta: f64,
    pub q: f64,
    pub ks: KsResult,
    pub direct: Vec<f64>,
    pub transported: Vec<f64>,
}

/// Total clock from `z₀` against the total clock of a path started at
/// `e^{iθ} z₀` whose field is pulled back by the rotation `ψ(w) = e^{-iθ} w`.
pub fn conformal_clock_check(spec: &ConformalCheckSpec) -> Result<ConformalReport> {
    check(spec.gamma > 0.0 && spec.gamma < 2.0, || format!("gamma must lie in (0, 2), got {}", spec.gamma))?;
    check(spec.n_replicates >= 1, || "need at least one replicate".into())?;
    let domain = DomainSpec::unit_disc(spec.margin)?;
    check(domain.is_interior(spec.start) && domain.dist_to_boundary(spec.start) > spec.margin, || {
        "start must lie inside the stopped region".into()
    })?;
    let eps = 2f64.powi(-(spec.k as i32));
    let dt = eps * eps / 16.0;
    let basis = Arc::new(ModeBasis::new(spec.n_modes)?);
    let (s, c) = spec.theta.sin_cos();
    let rotated_start = Point::new(c * spec.start.x - s * spec.start.y, s * spec.start.x + c * spec.start.y);
    let q = q_constant(spec.gamma);
    let transport = Transport { map: ConformalMap::rotation(-spec.theta), direction: Direction::Forward, q };
    let n = spec.n_replicates as u64;
    let run = |key: StreamKey, start: Point, transport: Option<Transport>| -> Result<f64> {
        let field = SpectralGff::sample(basis.clone(), SquareEmbedding::AROUND_DISC, key);
        let path = BrownianPath::sample(&domain, start, dt, 100.0, key)?;
        let cs = ClockSpec { transport, ..ClockSpec::new(spec.gamma, spec.k, VarianceMode::AnalyticModeSum) };
        Ok(ClockProcess::build(&field, &path, &cs)?.total())
    };
    let direct = (0..n).into_par_iter().map(|i| run(StreamKey::new(spec.seed, i), spec.start, None)).collect::<Result<Vec<_>>>()?;
    let transported = (0..n)
        .into_par_iter()
        .map(|i| {
            let rep = if spec.shared_seeds { i } else { n + i };
            run(StreamKey::new(spec.seed, rep), rotated_start, Some(transport))
        })
        .collect::<Result<Vec<_>>>()?;
    let ks = ks_two_sample(&direct, &transported);
    Ok(ConformalReport { gamma: spec.gamma, k: spec.k, theta: spec.theta, q, ks, direct, transported })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::clock_process;
    use crate::path::sample_path;

    #[test]
    fn kpz_examples() {
        for g in [0.0, 0.5, 1.0, 1.5, 1.99] {
            assert_eq!(kpz_dimension(0.0, g).unwrap(), 0.0);
        }
        for g in [0.5, 1.0, 1.5, 1.9] {
            assert!((kpz_dimension(2.0, g).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((kpz_dimension(1.4, 0.0).unwrap() - 0.7).abs() < 1e-15);
        assert!(kpz_dimension(2.5, 1.0).is_err());
        assert!(kpz_dimension(1.0, 2.0).is_err());
    }

    #[test]
    fn kpz_monotone_and_invertible() {
        for g in [0.3, 1.0, 1.7] {
            let mut last = -1.0;
            for i in 0..=8 {
                let d0 = 0.25 * i as f64;
                let d = kpz_dimension(d0, g).unwrap();
                assert!(d > last);
                last = d;
                let back = d * (2.0 + g * g / 2.0) - d * d * g * g / 2.0;
                assert!((back - d0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn thick_and_hmp_examples() {
        for i in 1..20 {
            let g = i as f64 / 10.0;
            assert_eq!(thick_dim_formula(g, g), 1.0);
        }
        assert_eq!(thick_dim_formula(2.0, 1.0), 0.0);
        assert_eq!(thick_dim_formula(3.0, 1.0), 0.0);
        assert!((thick_dim_formula(1.0, 0.5) - 1.5 / 1.625).abs() < 1e-15);
        assert!((thick_dim_formula(1.3, 1.0) - 1.155 / 1.2).abs() < 1e-12);
        assert_eq!(hmp_dimension(0.0), 2.0);
        assert_eq!(hmp_dimension(2.0), 0.0);
        assert_eq!(hmp_dimension(1.0), 1.5);
        assert_eq!(q_constant(1.0), 2.5);
        assert_eq!(q_constant(2.0), 2.0);
    }

    struct Setup {
        field: SpectralGff,
        path: BrownianPath,
        clock: ClockProcess,
    }

    fn setup(seed: u64, gamma: f64) -> Setup {
        let domain = DomainSpec::unit_square(0.1).unwrap();
        let path = sample_path(&domain, Point::new(0.5, 0.5), 1.0 / 16384.0, 1.0, seed).unwrap();
        let basis = Arc::new(ModeBasis::new(128 * 128).unwrap());
        let field = SpectralGff::sample(basis, SquareEmbedding::UNIT, StreamKey::new(seed, 0));
        let clock = clock_process(&field, &path, gamma, 5, VarianceMode::AnalyticModeSum).unwrap();
        Setup { field, path, clock }
    }

    fn params(alpha: f64) -> ThickParams {
        ThickParams { eta: 1.0, ..ThickParams::new(alpha) }
    }

    #[test]
    fn cover_structure() {
        let s = setup(1, 1.0);
        let cover = build_thick_cover(&s.field, &s.path, &s.clock, &params(1.2)).unwrap();
        assert!(cover.partial);
        let mut last_r = f64::INFINITY;
        for l in &cover.levels {
            assert!(l.r < last_r);
            last_r = l.r;
            assert!(l.selected.len() <= l.full_net_size);
            assert!(l.net_size <= l.full_net_size);
            for (a, b) in &l.intervals {
                assert!(a <= b);
            }
        }
    }

    #[test]
    fn huge_alpha_gives_empty_cover() {
        let s = setup(2, 1.0);
        let p = ThickParams { delta: 0.1, k_override: Some(2.0), ..ThickParams::new(10.0) };
        let cover = build_thick_cover(&s.field, &s.path, &s.clock, &p).unwrap();
        assert!(cover.is_empty());
        let d = cover_dimension_estimate(&cover, &[0.5, 1.0], 1.0);
        assert!(d.empty && d.estimate == 0.0);
        assert!(build_thick_cover(&s.field, &s.path, &s.clock, &ThickParams::new(10.0)).is_err());
    }

    #[test]
    fn selection_monotone_in_alpha() {
        let s = setup(3, 1.0);
        let lo = build_thick_cover(&s.field, &s.path, &s.clock, &ThickParams { k_override: Some(2.0), ..params(0.8) }).unwrap();
        let hi = build_thick_cover(&s.field, &s.path, &s.clock, &ThickParams { k_override: Some(2.0), ..params(1.2) }).unwrap();
        for (a, b) in lo.levels.iter().zip(&hi.levels) {
            assert!(b.selected.iter().all(|j| a.selected.contains(j)));
        }
    }

    #[test]
    fn alpha_zero_selects_about_half() {
        let mut frac = Vec::new();
        for seed in 0..20 {
            let s = setup(10 + seed, 0.5);
            let p = ThickParams { k_override: Some(2.0), ..ThickParams::new(0.0) };
            let cover = build_thick_cover(&s.field, &s.path, &s.clock, &p).unwrap();
            for l in &cover.levels {
                let kept = l.net_size - l.dropped;
                if kept >= 20 {
                    frac.push(l.selected.len() as f64 / kept as f64);
                }
            }
        }
        let mean = frac.iter().sum::<f64>() / frac.len() as f64;
        assert!(mean > 0.4 && mean < 1.0, "{mean}");
    }

    #[test]
    fn expected_count_matches_monte_carlo() {
        // Fixed path, fresh fields: |I_n| averages to the Gaussian-tail sum.
        let domain = DomainSpec::unit_square(0.1).unwrap();
        let path = sample_path(&domain, Point::new(0.5, 0.5), 1.0 / 16384.0, 1.0, 5).unwrap();
        let basis = Arc::new(ModeBasis::new(64 * 64).unwrap());
        let p = ThickParams { k_override: Some(2.0), ..params(1.2) };
        let counts: Vec<Vec<f64>> = (0..200)
            .map(|r| {
                let field = SpectralGff::sample(basis.clone(), SquareEmbedding::UNIT, StreamKey::new(5, r));
                let clock = clock_process(&field, &path, 0.0, 5, VarianceMode::AnalyticModeSum).unwrap();
                let c = build_thick_cover(&field, &path, &clock, &p).unwrap();
                c.levels.iter().map(|l| l.selected.len() as f64).collect()
            })
            .collect();
        let field = SpectralGff::sample(basis, SquareEmbedding::UNIT, StreamKey::new(5, 0));
        let clock = clock_process(&field, &path, 0.0, 5, VarianceMode::AnalyticModeSum).unwrap();
        let expected: Vec<f64> = build_thick_cover(&field, &path, &clock, &p).unwrap().levels.iter().map(|l| l.expected_count).collect();
        for (i, e) in expected.iter().enumerate() {
            let xs: Vec<f64> = counts.iter().map(|c| c[i]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt();
            let se = sd / (xs.len() as f64).sqrt();
            assert!((m - e).abs() <= 4.0 * se + 1e-3, "level {i}: {m} vs {e} (se {se})");
        }
    }

    #[test]
    fn cover_sums() {
        let s = setup(4, 1.0);
        let cover = build_thick_cover(&s.field, &s.path, &s.clock, &ThickParams { k_override: Some(2.0), ..params(0.5) }).unwrap();
        assert!(!cover.is_empty());
        let d = cover_dimension_estimate(&cover, &[0.25, 0.5, 0.75, 1.0], 1.0);
        let (_, s1) = d.sums[3];
        let total_len: f64 = cover.diameters().sum();
        assert!((s1 - total_len).abs() < 1e-12);
        // Each level's intervals lie in [0, μ(T)], overlapping by at most a factor two.
        for l in &cover.levels {
            let sum: f64 = l.intervals.iter().map(|(a, b)| b - a).sum();
            assert!(sum <= 2.0 * s.clock.total() + 1e-12);
        }
        // Normalized diameters ≤ 1 give sums nonincreasing in q.
        let max = cover.diameters().fold(0.0, f64::max);
        let norm: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|&q| cover.diameters().map(|x| (x / max).powf(q)).sum()).collect();
        assert!(norm.windows(2).all(|w| w[1] <= w[0]));
        // Higher thresholds give smaller estimates.
        let grid: Vec<f64> = (1..=20).map(|i| i as f64 / 20.0).collect();
        let mut last = f64::INFINITY;
        for th in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let e = cover_dimension_estimate(&cover, &grid, th).estimate;
            assert!(e <= last);
            last = e;
        }
    }

    #[test]
    fn rotation_check_shared_seeds_theta_zero() {
        let spec = ConformalCheckSpec { shared_seeds: true, n_modes: 64 * 64, ..ConformalCheckSpec::new(1.0, 4, 0.0, 5, 1) };
        let r = conformal_clock_check(&spec).unwrap();
        assert_eq!(r.direct, r.transported);
        assert_eq!(r.ks.statistic, 0.0);
        assert_eq!(r.q, 2.5);
    }
}
