//! The Liouville clock `μ_ε`, its inverse, and the time-changed path
//! `Z_ε(t) = B(μ_ε⁻¹(t))`.

use serde::{Deserialize, Serialize};

use crate::error::{check, Error, Result};
use crate::geometry::{map_apply, map_derivative_modulus, ConformalMap, Direction, Point};
use crate::gff::{conformal_variance, variances_along, CircleAverageEvaluator, SpectralGff};
use crate::path::BrownianPath;

/// How `Var h_ε(B_s)` in the integrand is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// Exact variance of the truncated field (mode sum). Makes the integrand
    /// have mean one at every point regardless of truncation.
    AnalyticModeSum,
    /// `-log ε + log R(B_s; D)`.
    ConformalRadiusFormula,
}

/// Transport of the field through a conformal map `ψ : D̃ → D`: the path
/// lives in `D̃`, the field is read at `ψ(B̃_s)` and the exponent gains
/// `γ Q log|ψ'(B̃_s)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transport {
    pub map: ConformalMap,
    pub direction: Direction,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockSpec {
    pub gamma: f64,
    pub k: u32,
    pub variance_mode: VarianceMode,
    /// Use every `stride`-th path sample (plus the stopping sample).
    pub stride: usize,
    pub transport: Option<Transport>,
}

impl ClockSpec {
    pub fn new(gamma: f64, k: u32, variance_mode: VarianceMode) -> Self {
        Self { gamma, k, variance_mode, stride: 1, transport: None }
    }

    pub fn epsilon(&self) -> f64 {
        2f64.powi(-(self.k as i32))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClockProcess {
    pub gamma: f64,
    pub epsilon: f64,
    pub variance_mode: VarianceMode,
    /// Euclidean sample times, starting at 0 and ending at the stopping time.
    pub times: Vec<f64>,
    /// `μ_ε(times[i])`; nondecreasing with `values[0] = 0`.
    pub values: Vec<f64>,
}

pub fn clock_process(
    field: &SpectralGff,
    path: &BrownianPath,
    gamma: f64,
    k: u32,
    variance_mode: VarianceMode,
) -> Result<ClockProcess> {
    ClockProcess::build(field, path, &ClockSpec::new(gamma, k, variance_mode))
}

fn check_gamma(gamma: f64) -> Result<()> {
    check((0.0..2.0).contains(&gamma), || format!("gamma must lie in [0, 2), got {gamma}"))
}

fn sample_indices(stop: usize, stride: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..=stop).step_by(stride).collect();
    if *idx.last().unwrap() != stop {
        idx.push(stop);
    }
    idx
}

/// `exp(γ h_ε(p) - (γ²/2) V(p) + shift)` at the given path points.
fn integrand(field: &SpectralGff, points: &[Point], spec: &ClockSpec) -> Result<Vec<f64>> {
    let gamma = spec.gamma;
    if gamma == 0.0 {
        return Ok(vec![1.0; points.len()]);
    }
    let eps = spec.epsilon();
    let (field_points, shift): (Vec<Point>, Vec<f64>) = match spec.transport {
        None => (points.to_vec(), vec![0.0; points.len()]),
        Some(t) => {
            if !t.map.is_isometry() {
                return Err(Error::UnsupportedMap("field transport requires |ψ'| ≡ 1"));
            }
            let mut fp = Vec::with_capacity(points.len());
            let mut sh = Vec::with_capacity(points.len());
            for &p in points {
                fp.push(map_apply(&t.map, p, t.direction)?);
                sh.push(gamma * t.q * map_derivative_modulus(&t.map, p, t.direction)?.ln());
            }
            (fp, sh)
        }
    };
    let h = CircleAverageEvaluator::new(field, eps)?.circle_averages(&field_points)?;
    let var = match spec.variance_mode {
        VarianceMode::AnalyticModeSum => variances_along(field.basis(), &field.embedding(), &field_points, eps),
        VarianceMode::ConformalRadiusFormula => {
            let emb = field.embedding();
            field_points.iter().map(|&p| conformal_variance(&emb, p, eps)).collect()
        }
    };
    let half = 0.5 * gamma * gamma;
    Ok(h.iter().zip(&var).zip(&shift).map(|((h, v), s)| (gamma * h - half * v + s).exp()).collect())
}

/// Integrand along a path prefix. A stopped path's final sample overshoots
/// the margin, so there the previous value is held.
fn path_integrand(field: &SpectralGff, points: &[Point], spec: &ClockSpec, stopped: bool) -> Result<Vec<f64>> {
    if !stopped || points.len() < 2 {
        return integrand(field, points, spec);
    }
    let mut w = integrand(field, &points[..points.len() - 1], spec)?;
    w.push(*w.last().unwrap());
    Ok(w)
}

/// Compensated cumulative trapezoid.
fn cumulative_trapezoid(times: &[f64], w: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    out.push(0.0);
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for i in 1..times.len() {
        let inc = 0.5 * (times[i] - times[i - 1]) * (w[i] + w[i - 1]);
        let t = sum + inc;
        if sum.abs() >= inc.abs() {
            comp += (sum - t) + inc;
        } else {
            comp += (inc - t) + sum;
        }
        sum = t;
        out.push(sum + comp);
    }
    out
}

impl ClockProcess {
    pub fn build(field: &SpectralGff, path: &BrownianPath, spec: &ClockSpec) -> Result<Self> {
        check_gamma(spec.gamma)?;
        check(spec.stride >= 1, || "stride must be at least 1".into())?;
        let eps = spec.epsilon();
        if let Some(margin) = path.margin {
            if eps > margin {
                return Err(Error::EpsilonExceedsMargin { epsilon: eps, margin });
            }
        }
        let step = spec.stride as f64 * path.dt;
        let max = eps * eps / 16.0;
        if step > max * (1.0 + 1e-9) {
            return Err(Error::DtTooCoarse { dt: step, max });
        }
        let idx = sample_indices(path.stop_index, spec.stride);
        let times: Vec<f64> = idx.iter().map(|&i| i as f64 * path.dt).collect();
        let points: Vec<Point> = idx.iter().map(|&i| path.positions[i]).collect();
        let w = path_integrand(field, &points, spec, path.stopped())?;
        let values = cumulative_trapezoid(&times, &w);
        Ok(Self { gamma: spec.gamma, epsilon: eps, variance_mode: spec.variance_mode, times, values })
    }

    /// `μ_ε` at the stopping time.
    pub fn total(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// `μ_ε(t)` by linear interpolation; constant after the stopping time.
    pub fn value_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= self.end_time() {
            return self.total();
        }
        let i = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// `μ_ε⁻¹(τ) = inf{s : μ_ε(s) > τ}` for the piecewise-linear clock.
pub fn inverse_clock(clock: &ClockProcess, tau: f64) -> Result<f64> {
    let total = clock.total();
    if !(0.0..=total).contains(&tau) {
        return Err(Error::TauOutOfRange { tau, max: total });
    }
    let i = clock.values.partition_point(|&v| v <= tau);
    if i == clock.values.len() {
        return Ok(clock.end_time());
    }
    // values[i - 1] ≤ tau < values[i]
    let (v0, v1) = (clock.values[i - 1], clock.values[i]);
    let (t0, t1) = (clock.times[i - 1], clock.times[i]);
    Ok(t0 + (t1 - t0) * (tau - v0) / (v1 - v0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbmTrajectory {
    pub quantum_dt: f64,
    /// `Z_ε(j · quantum_dt)` for `j · quantum_dt ≤ total_quantum_time`.
    pub points: Vec<Point>,
    /// Euclidean times `μ_ε⁻¹(j · quantum_dt)`.
    pub euclidean_times: Vec<f64>,
    pub total_quantum_time: f64,
}

pub fn lbm_trajectory(path: &BrownianPath, clock: &ClockProcess, quantum_dt: f64) -> Result<LbmTrajectory> {
    check(quantum_dt > 0.0 && quantum_dt.is_finite(), || format!("quantum_dt must be positive, got {quantum_dt}"))?;
    let total = clock.total();
    let n = (total / quantum_dt + 1e-12).floor() as usize;
    let mut points = Vec::with_capacity(n + 1);
    let mut euclidean_times = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let s = inverse_clock(clock, (j as f64 * quantum_dt).min(total))?;
        euclidean_times.push(s);
        points.push(path.position_at(s));
    }
    Ok(LbmTrajectory { quantum_dt, points, euclidean_times, total_quantum_time: total })
}

/// Normalized clocks `α_k` at `ε = 2^{-k}` and their successive differences.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyDiagnostic {
    pub k_min: u32,
    /// `α_k` for `k = k_min..=k_max + 1`.
    pub alphas: Vec<f64>,
    /// `|α_{k+1} - α_k|` for `k = k_min..=k_max`.
    pub differences: Vec<f64>,
}

/// Each `α_k` is the full clock (conformal-radius normalization) over the
/// path, sampled at the coarsest admissible stride `⌊ε_k²/(16 dt)⌋`.
pub fn cauchy_diagnostic(
    field: &SpectralGff,
    path: &BrownianPath,
    gamma: f64,
    k_min: u32,
    k_max: u32,
) -> Result<CauchyDiagnostic> {
    check(k_min <= k_max, || format!("k_min {k_min} exceeds k_max {k_max}"))?;
    let alphas = (k_min..=k_max + 1)
        .map(|k| {
            let eps = 2f64.powi(-(k as i32));
            let stride = ((eps * eps / 16.0) / path.dt * (1.0 + 1e-9)).floor().max(1.0) as usize;
            let spec = ClockSpec { stride, ..ClockSpec::new(gamma, k, VarianceMode::ConformalRadiusFormula) };
            Ok(ClockProcess::build(field, path, &spec)?.total())
        })
        .collect::<Result<Vec<f64>>>()?;
    let differences = alphas.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Ok(CauchyDiagnostic { k_min, alphas, differences })
}

/// Riemann-net sums `X_k(s)` and `Y_k(s)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetEstimate {
    pub x: f64,
    pub y: f64,
    pub net_size: usize,
    pub partial: bool,
}

/// `X_k(s) = 2^{-2k} Σ_{t ∈ S_k^s} e^{h̄_k(B_t)}` and `Y_k(s)` likewise at
/// `ε = 2^{-(k+1)}`, over `[0, 1 ∧ T]`, with the integrand linearly
/// interpolated between path samples. The normalization is the
/// conformal-radius one, matching [`cauchy_diagnostic`].
pub fn net_estimators(field: &SpectralGff, path: &BrownianPath, gamma: f64, k: u32, s_offset: f64) -> Result<NetEstimate> {
    let spacing = 4f64.powi(-(k as i32));
    if spacing < path.dt * (1.0 - 1e-12) {
        return Err(Error::NetFinerThanPath { spacing, dt: path.dt });
    }
    check((0.0..spacing).contains(&s_offset), || format!("s_offset must lie in [0, {spacing}), got {s_offset}"))?;
    let integrands = net_integrands(field, path, gamma, k)?;
    Ok(net_sums(path, &integrands, spacing, s_offset))
}

/// Integrand samples at `ε_k` and `ε_{k+1}` on all path points in `[0, 1 ∧ T]`.
pub(crate) fn net_integrands(field: &SpectralGff, path: &BrownianPath, gamma: f64, k: u32) -> Result<[Vec<f64>; 2]> {
    check_gamma(gamma)?;
    let end = ((1.0 / path.dt) + 1e-9).floor() as usize;
    let last = path.stop_index.min(end);
    let points = &path.positions[..=last];
    let mut out = [Vec::new(), Vec::new()];
    for (slot, kk) in out.iter_mut().zip([k, k + 1]) {
        let spec = ClockSpec::new(gamma, kk, VarianceMode::ConformalRadiusFormula);
        if let Some(margin) = path.margin {
            if spec.epsilon() > margin {
                return Err(Error::EpsilonExceedsMargin { epsilon: spec.epsilon(), margin });
            }
        }
        *slot = path_integrand(field, points, &spec, path.stopped() && last == path.stop_index)?;
    }
    Ok(out)
}

pub(crate) fn net_sums(path: &BrownianPath, w: &[Vec<f64>; 2], spacing: f64, s_offset: f64) -> NetEstimate {
    let last = w[0].len() - 1;
    let end = last as f64 * path.dt;
    let interp = |v: &[f64], t: f64| {
        let s = t / path.dt;
        let i = (s.floor() as usize).min(last);
        if i == last {
            v[last]
        } else {
            v[i] + (v[i + 1] - v[i]) * (s - i as f64)
        }
    };
    let (mut x, mut y, mut n) = (0.0, 0.0, 0usize);
    let mut j = 0usize;
    loop {
        let t = s_offset + j as f64 * spacing;
        if t > end + 1e-12 {
            break;
        }
        x += interp(&w[0], t);
        y += interp(&w[1], t);
        n += 1;
        j += 1;
    }
    NetEstimate { x: x * spacing, y: y * spacing, net_size: n, partial: path.duration() < 1.0 }
}
