//! Experiment runner behind the `liouville` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    build_thick_cover, conformal_clock_check, cover_dimension_estimate, hmp_dimension, kpz_dimension,
    thick_dim_formula, ConformalCheckSpec, ThickParams,
};
use crate::clock::{cauchy_diagnostic, lbm_trajectory, ClockProcess, ClockSpec, VarianceMode};
use crate::error::{Error, Result};
use crate::geometry::{DomainKind, DomainSpec, Point};
use crate::gff::{grid_values, variances_along, CircleAverageEvaluator, ModeBasis, SpectralGff, SquareEmbedding};
use crate::path::{pair_count, BrownianPath};
use crate::rng::{StreamKey, GENERATOR};
use crate::scaling::{moment_estimator, MomentSpec};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    FieldStats,
    ClockMean,
    Converge,
    Positivity,
    ConformalCheck,
    ThickDim,
    KpzTable,
    Moments,
    PairCount,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::FieldStats => "field-stats",
            Command::ClockMean => "clock-mean",
            Command::Converge => "converge",
            Command::Positivity => "positivity",
            Command::ConformalCheck => "conformal-check",
            Command::ThickDim => "thick-dim",
            Command::KpzTable => "kpz-table",
            Command::Moments => "moments",
            Command::PairCount => "pair-count",
        }
    }

    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown command `{s}`"))
    }
}

/// Flat run configuration. Every field has a default, so a config file only
/// needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    pub gamma: f64,
    /// Clock scale `ε = 2^{-k}`.
    pub k: u32,
    pub k_min: u32,
    pub k_max: u32,
    pub n_modes: usize,
    /// Path step; derived from the finest scale when absent.
    pub dt: Option<f64>,
    pub margin: f64,
    pub n_replicates: usize,
    pub seed: u64,
    /// `unit-square`, or `unit-disc` (default for conformal-check).
    pub domain: Option<DomainKind>,
    pub output_dir: String,
    /// Euclidean time horizon.
    pub t: f64,
    pub start: Option<[f64; 2]>,
    pub variance_mode: VarianceMode,
    pub alpha: f64,
    pub delta: f64,
    pub eta: f64,
    /// Overrides `K = 3/(η(2 - α²/2))`.
    pub k_exponent: Option<f64>,
    pub n_min: u32,
    pub n_max: u32,
    pub q_grid: Vec<f64>,
    pub cover_threshold: f64,
    pub q: f64,
    pub m: u32,
    pub epsilon: f64,
    pub moment_horizon: Option<f64>,
    pub theta: f64,
    pub d0: Vec<f64>,
    /// Net `2^{-2 net_k} ℤ` for the positivity check.
    pub net_k: u32,
    /// Net offsets tried per scale in pair-count.
    pub n_offsets: usize,
    pub export_path: bool,
    pub quantum_dt: Option<f64>,
    pub export_grid: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            command: Command::KpzTable,
            gamma: 1.0,
            k: 5,
            k_min: 4,
            k_max: 6,
            n_modes: 256 * 256,
            dt: None,
            margin: 0.1,
            n_replicates: 100,
            seed: 0,
            domain: None,
            output_dir: "runs".into(),
            t: 0.05,
            start: None,
            variance_mode: VarianceMode::AnalyticModeSum,
            alpha: 1.3,
            delta: 0.05,
            eta: 1.0,
            k_exponent: None,
            n_min: 2,
            n_max: 6,
            q_grid: (1..=20).map(|i| i as f64 / 20.0).collect(),
            cover_threshold: 1.0,
            q: 1.2,
            m: 1,
            epsilon: 0.125,
            moment_horizon: None,
            theta: std::f64::consts::FRAC_PI_3,
            d0: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            net_k: 6,
            n_offsets: 4,
            export_path: false,
            quantum_dt: None,
            export_grid: None,
        }
    }
}

fn eps_of(k: u32) -> f64 {
    2f64.powi(-(k as i32))
}

impl ExperimentConfig {
    /// Accepts a flat config, or a run manifest (its `config` object).
    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let v: Value = serde_json::from_str(text).map_err(|e| format!("config is not valid JSON: {e}"))?;
        let v = match v.get("config") {
            Some(c) if v.get("generator").is_some() => c.clone(),
            _ => v,
        };
        serde_json::from_value(v).map_err(|e| format!("invalid config: {e}"))
    }

    pub fn domain_kind(&self) -> DomainKind {
        self.domain.unwrap_or(match self.command {
            Command::ConformalCheck => DomainKind::UnitDisc,
            _ => DomainKind::UnitSquare,
        })
    }

    pub fn start_point(&self) -> Point {
        match (self.start, self.command, self.domain_kind()) {
            (Some([x, y]), _, _) => Point::new(x, y),
            (None, Command::ConformalCheck, _) => Point::new(0.3, 0.0),
            (None, _, DomainKind::UnitSquare) => Point::new(0.5, 0.5),
            (None, _, DomainKind::UnitDisc) => Point::new(0.0, 0.0),
        }
    }

    fn thick_params(&self) -> ThickParams {
        ThickParams {
            alpha: self.alpha,
            delta: self.delta,
            eta: self.eta,
            n_min: self.n_min,
            n_max: self.n_max,
            k_override: self.k_exponent,
        }
    }

    /// Path step actually used by the command.
    pub fn effective_dt(&self) -> f64 {
        if let Some(dt) = self.dt {
            return dt;
        }
        match self.command {
            Command::Converge => eps_of(self.k_max + 1).powi(2) / 16.0,
            Command::PairCount => 4f64.powi(-(self.k_max as i32)) / 4.0,
            Command::ThickDim => {
                let base = eps_of(self.k).powi(2) / 16.0;
                match self.thick_params().radius(self.n_max) {
                    Ok(r) if r * r < base => r * r,
                    _ => base,
                }
            }
            _ => eps_of(self.k).powi(2) / 16.0,
        }
    }

    /// Every violated precondition, in a stable order.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let cmd = self.command;
        let uses_field = !matches!(cmd, Command::KpzTable | Command::Moments | Command::PairCount);
        let uses_clock = matches!(cmd, Command::ClockMean | Command::Positivity | Command::ConformalCheck | Command::ThickDim);
        let gamma_ok = if cmd == Command::ConformalCheck { self.gamma > 0.0 && self.gamma < 2.0 } else { (0.0..2.0).contains(&self.gamma) };
        if !gamma_ok && cmd != Command::Moments && cmd != Command::PairCount && cmd != Command::FieldStats {
            v.push(format!("gamma {} outside the admissible range", self.gamma));
        }
        if !(self.margin > 0.0 && self.margin < 0.5) {
            v.push(format!("margin must lie in (0, 1/2), got {}", self.margin));
        }
        if uses_field && self.n_modes < 64 {
            v.push(format!("n_modes must be at least 64, got {}", self.n_modes));
        }
        let min_reps = if matches!(cmd, Command::ClockMean | Command::Moments | Command::FieldStats) { 2 } else { 1 };
        if cmd != Command::KpzTable && self.n_replicates < min_reps {
            v.push(format!("n_replicates must be at least {min_reps}, got {}", self.n_replicates));
        }
        if uses_clock && eps_of(self.k) > self.margin {
            v.push(format!("epsilon 2^-{} = {} exceeds the margin {}", self.k, eps_of(self.k), self.margin));
        }
        let dt = self.effective_dt();
        if !(dt > 0.0 && dt.is_finite()) {
            v.push(format!("dt must be positive, got {dt}"));
        } else {
            if uses_clock && dt > eps_of(self.k).powi(2) / 16.0 * (1.0 + 1e-9) {
                v.push(format!("dt {dt:e} exceeds epsilon²/16 = {:e}", eps_of(self.k).powi(2) / 16.0));
            }
            if cmd == Command::Converge && dt > eps_of(self.k_max + 1).powi(2) / 16.0 * (1.0 + 1e-9) {
                v.push(format!("dt {dt:e} exceeds epsilon²/16 at the finest scale k_max + 1"));
            }
            if cmd == Command::Positivity && 4f64.powi(-(self.net_k as i32)) < dt * (1.0 - 1e-12) {
                v.push(format!("net spacing 2^-{} is finer than dt", 2 * self.net_k));
            }
            if cmd == Command::PairCount && 4f64.powi(-(self.k_max as i32)) < dt * (1.0 - 1e-12) {
                v.push(format!("net spacing 2^-{} is finer than dt", 2 * self.k_max));
            }
        }
        if matches!(cmd, Command::FieldStats | Command::Converge | Command::PairCount) && self.k_min > self.k_max {
            v.push(format!("k_min {} exceeds k_max {}", self.k_min, self.k_max));
        }
        if cmd == Command::Converge && eps_of(self.k_min) > self.margin {
            v.push(format!("epsilon 2^-{} exceeds the margin {}", self.k_min, self.margin));
        }
        if cmd == Command::PairCount && self.n_offsets == 0 {
            v.push("n_offsets must be positive".into());
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            v.push(format!("t must be positive, got {}", self.t));
        }
        if uses_field {
            let domain = DomainSpec::new(self.domain_kind(), self.margin.clamp(1e-9, 0.49), 64).unwrap();
            let z = self.start_point();
            if !domain.is_interior(z) || domain.dist_to_boundary(z) <= self.margin {
                v.push(format!("start ({}, {}) is not inside the stopped region", z.x, z.y));
            }
            if cmd == Command::FieldStats && domain.dist_to_boundary(z) <= eps_of(self.k_min) {
                v.push("the coarsest circle around start leaves the domain".into());
            }
        }
        if cmd == Command::ConformalCheck && self.domain_kind() != DomainKind::UnitDisc {
            v.push("conformal-check runs on the unit disc".into());
        }
        if cmd == Command::ConformalCheck && !self.theta.is_finite() {
            v.push("theta must be finite".into());
        }
        if cmd == Command::ThickDim {
            v.extend(self.thick_params().validate());
            if self.q_grid.is_empty() || self.q_grid.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
                v.push("q_grid must be a nonempty list of values in (0, 1]".into());
            }
            if !(self.cover_threshold > 0.0) {
                v.push("cover_threshold must be positive".into());
            }
            if let Ok(r) = self.thick_params().radius(self.n_max) {
                if r * r < dt * (1.0 - 1e-12) {
                    v.push(format!("net spacing r_{}² = {:e} is finer than dt {dt:e}", self.n_max, r * r));
                }
            }
        }
        if cmd == Command::KpzTable {
            if !(0.0..2.0).contains(&self.gamma) {
                v.push(format!("gamma {} outside [0, 2)", self.gamma));
            }
            if self.d0.is_empty() || self.d0.iter().any(|d| !(0.0..=2.0).contains(d)) {
                v.push("d0 must be a nonempty list of values in [0, 2]".into());
            }
        }
        if cmd == Command::Moments {
            v.extend(self.moment_spec().validate());
        }
        if self.quantum_dt.is_some_and(|q| !(q > 0.0)) {
            v.push("quantum_dt must be positive".into());
        }
        if self.export_grid.is_some_and(|g| g < 2) {
            v.push("export_grid must be at least 2".into());
        }
        v
    }

    fn moment_spec(&self) -> MomentSpec {
        let mut s = MomentSpec::new(self.gamma, self.q, self.epsilon, self.m, self.n_replicates);
        if let Some([x, y]) = self.start {
            s.start = Point::new(x, y);
        }
        s.horizon = self.moment_horizon;
        s
    }

    fn domain_spec(&self) -> Result<DomainSpec> {
        DomainSpec::new(self.domain_kind(), self.margin, 64)
    }
}

/// One CSV value.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Real(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.into())
    }
}

/// Reals with 17 significant digits.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(i) => i.to_string(),
                    Cell::Real(x) => format_real(*x),
                    Cell::Text(s) => s.clone(),
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Tables and summary produced by one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub results: Table,
    pub summary: Value,
    /// Additional CSV files by name.
    pub extra: Vec<(String, Table)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: u8,
    pub run_dir: Option<PathBuf>,
    pub messages: Vec<String>,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    domain: DomainSpec,
    basis: Arc<ModeBasis>,
    emb: SquareEmbedding,
}

impl Ctx<'_> {
    fn field(&self, replicate: u64) -> SpectralGff {
        SpectralGff::sample(self.basis.clone(), self.emb, StreamKey::new(self.cfg.seed, replicate))
    }

    fn path(&self, replicate: u64, dt: f64, max_time: f64) -> Result<BrownianPath> {
        BrownianPath::sample(&self.domain, self.cfg.start_point(), dt, max_time, StreamKey::new(self.cfg.seed, replicate))
    }

    fn clock(&self, field: &SpectralGff, path: &BrownianPath) -> Result<ClockProcess> {
        ClockProcess::build(field, path, &ClockSpec::new(self.cfg.gamma, self.cfg.k, self.cfg.variance_mode))
    }
}

fn reps(n: usize) -> impl IndexedParallelIterator<Item = u64> {
    (0..n).into_par_iter().map(|r| r as u64)
}

fn field_stats(ctx: &Ctx) -> Result<Outputs> {
    let cfg = ctx.cfg;
    let z = cfg.start_point();
    let ks: Vec<u32> = (cfg.k_min..=cfg.k_max).collect();
    let samples: Vec<Vec<f64>> = reps(cfg.n_replicates)
        .map(|r| {
            let f = ctx.field(r);
            ks.iter().map(|&k| CircleAverageEvaluator::new(&f, eps_of(k))?.circle_average(z)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(&[
        "k",
        "epsilon",
        "analytic_variance",
        "empirical_variance",
        "analytic_plus_log_epsilon",
        "log_conformal_radius",
        "tail_estimate",
    ]);
    let log_r = ctx.emb.log_conformal_radius(z);
    let mut analytic = Vec::new();
    for (i, &k) in ks.iter().enumerate() {
        let eps = eps_of(k);
        let a = variances_along(&ctx.basis, &ctx.emb, &[z], eps)[0];
        let emp = samples.iter().map(|s| s[i] * s[i]).sum::<f64>() / samples.len() as f64;
        let tail = ctx.basis.variance_tail(eps / ctx.emb.side);
        analytic.push(a);
        t.push(vec![k.into(), eps.into(), a.into(), emp.into(), (a + eps.ln()).into(), log_r.into(), tail.into()]);
    }
    let diffs: Vec<f64> = analytic.windows(2).map(|w| w[1] - w[0]).collect();
    let offsets: Vec<f64> = ks.iter().zip(&analytic).map(|(&k, a)| a + eps_of(k).ln()).collect();
    let spread = offsets.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)) - offsets.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let max_tail = ks.iter().map(|&k| ctx.basis.variance_tail(eps_of(k) / ctx.emb.side)).fold(0.0, f64::max);
    let mut extra = Vec::new();
    if let Some(g) = cfg.export_grid {
        let mut grid = Table::new(&["x", "y", "h"]);
        for (p, h) in grid_values(&ctx.field(0), g, None)? {
            grid.push(vec![p.x.into(), p.y.into(), h.into()]);
        }
        extra.push(("field_grid.csv".into(), grid));
    }
    let summary = json!({
        "point": [z.x, z.y],
        "successive_differences": diffs,
        "max_abs_difference_minus_log2": diffs.iter().map(|d| (d - std::f64::consts::LN_2).abs()).fold(0.0, f64::max),
        "variance_plus_log_epsilon_spread": spread,
        "log_conformal_radius": log_r,
        "truncation_warning": max_tail > crate::gff::TAIL_WARNING,
    });
    Ok(Outputs { results: t, summary, extra })
}

fn clock_mean(ctx: &Ctx) -> Result<Outputs> {
    let cfg = ctx.cfg;
    let path = ctx.path(0, cfg.effective_dt(), cfg.t)?;
    let clocks: Vec<ClockProcess> = reps(cfg.n_replicates).map(|r| ctx.clock(&ctx.field(r), &path)).collect::<Result<_>>()?;
    let totals: Vec<f64> = clocks.iter().map(|c| c.total()).collect();
    let mut t = Table::new(&["replicate", "clock"]);
    for (r, v) in totals.iter().enumerate() {
        t.push(vec![r.into(), (*v).into()]);
    }
    let target = path.duration();
    let (mean, se) = mean_se(&totals);
    let identity = (cfg.gamma == 0.0).then(|| {
        let c = &clocks[0];
        let dev = c.values.iter().zip(&c.times).map(|(v, s)| (v - s).abs()).fold(0.0, f64::max);
        if dev < 1e-12 { "pass" } else { "fail" }
    });
    let mut extra = Vec::new();
    if cfg.export_path {
        let mut p = Table::new(&["index", "t", "x", "y"]);
        for (i, q) in path.positions.iter().enumerate() {
            p.push(vec![i.into(), (i as f64 * path.dt).into(), q.x.into(), q.y.into()]);
        }
        extra.push(("path.csv".into(), p));
        let mut c = Table::new(&["t", "clock"]);
        for (s, v) in clocks[0].times.iter().zip(&clocks[0].values) {
            c.push(vec![(*s).into(), (*v).into()]);
        }
        extra.push(("clock.csv".into(), c));
    }
    if let Some(qdt) = cfg.quantum_dt {
        let z = lbm_trajectory(&path, &clocks[0], qdt)?;
        let mut tr = Table::new(&["quantum_time", "euclidean_time", "x", "y"]);
        for (j, (p, s)) in z.points.iter().zip(&z.euclidean_times).enumerate() {
            tr.push(vec![(j as f64 * qdt).into(), (*s).into(), p.x.into(), p.y.into()]);
        }
        extra.push(("trajectory.csv".into(), tr));
    }
    let summary = json!({
        "t": cfg.t,
        "stopped": path.stopped(),
        "target": target,
        "mean_clock": mean,
        "stderr": se,
        "relative_error": (mean - target) / target,
        "z_score": (mean - target) / se,
        "within_5_percent": ((mean - target) / target).abs() <= 0.05,
        "within_3_stderr": (mean - target).abs() <= 3.0 * se,
        "gamma-zero-identity": identity,
    });
    Ok(Outputs { results: t, summary, extra })
}

fn converge(ctx: &Ctx) -> Result<Outputs> {
    let cfg = ctx.cfg;
    let dt = cfg.effective_dt();
    let diags = reps(cfg.n_replicates)
        .map(|r| {
            let path = ctx.path(r, dt, cfg.t)?;
            cauchy_diagnostic(&ctx.field(r), &path, cfg.gamma, cfg.k_min, cfg.k_max)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(&["replicate", "k", "alpha_k", "alpha_k_plus_1", "difference"]);
    for (r, d) in diags.iter().enumerate() {
        for (i, diff) in d.differences.iter().enumerate() {
            let k = cfg.k_min + i as u32;
            t.push(vec![r.into(), k.into(), d.alphas[i].into(), d.alphas[i + 1].into(), (*diff).into()]);
        }
    }
    let medians: Vec<f64> = (0..=(cfg.k_max - cfg.k_min) as usize)
        .map(|i| median(&diags.iter().map(|d| d.differences[i]).collect::<Vec<_>>()))
        .collect();
    let ratios: Vec<f64> = medians.windows(2).map(|w| w[1] / w[0]).collect();
    let summary = json!({
        "k": (cfg.k_min..=cfg.k_max).collect::<Vec<_>>(),
        "median_differences": medians,
        "successive_ratios": ratios,
        "strictly_decreasing": medians.windows(2).all(|w| w[1] < w[0]),
        "max_ratio": ratios.iter().fold(0.0f64, |m, &x| m.max(x)),
    });
    Ok(Outputs { results: t, summary, extra: Vec::new() })
}

fn positivity(ctx: &Ctx) -> Result<Outputs> {
    let cfg = ctx.cfg;
    let dt = cfg.effective_dt();
    let spacing = 4f64.powi(-(cfg.net_k as i32));
    let rows = reps(cfg.n_replicates)
        .map(|r| {
            let path = ctx.path(r, dt, cfg.t)?;
            let c = ctx.clock(&ctx.field(r), &path)?;
            let end = c.end_time();
            let mut min_inc = f64::INFINITY;
            let mut j = 1usize;
            while j as f64 * spacing <= end + 1e-12 {
                min_inc = min_inc.min(c.value_at(j as f64 * spacing) - c.value_at((j - 1) as f64 * spacing));
                j += 1;
            }
            Ok((c.total(), min_inc, j - 1))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(&["replicate", "total_clock", "min_net_increment", "net_intervals", "strictly_increasing"]);
    for (r, &(total, inc, n)) in rows.iter().enumerate() {
        t.push(vec![r.into(), total.into(), inc.into(), n.into(), (inc > 0.0).into()]);
    }
    let n = rows.len() as f64;
    let summary = json!({
        "fraction_positive": rows.iter().filter(|r| r.0 > 1e-8).count() as f64 / n,
        "fraction_strictly_increasing": rows.iter().filter(|r| r.1 > 0.0).count() as f64 / n,
        "min_total_clock": rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        "net_spacing": spacing,
    });
    Ok(Outputs { results: t, summary, extra: Vec::new() })
}

fn conformal_check(ctx: &Ctx) -> Result<Outputs> {
    let cfg = ctx.cfg;
    let z = cfg.start_point();
    let spec = ConformalCheckSpec {
        start: z,
        margin: cfg.margin,
        n_modes: cfg.n_modes,
        ..ConformalCheckSpec::new(cfg.gamma, cfg.k, cfg.theta, cfg.n_replicates, cfg.seed)
    };
    let rep = conformal_clock_check(&spec)?;
    let mut t = Table::new(&["sample", "replicate", "total_clock"]);
    for (r, v) in rep.direct.iter().enumerate() {
        t.push(vec!["direct".into(), r.into(), (*v).into()]);
    }
    for (r, v) in rep.transported.iter().enumerate() {
        t.push(vec!["transported".into(), r.into(), (*v).into()]);
    }
    let summary = json!({
        "gamma": rep.gamma,
        "k": rep.k,
        "theta": rep.theta,
        "Q": rep.q,
        "ks_statistic": rep.ks.statistic,
        "p_value": rep.ks.p_value,
        "critical_value_5pct": rep.ks.critical_5pct,
        "reject_5pct": rep.ks.reject_5pct,
    });
    Ok(Outputs { results: t, summary, extra: Vec::new() })
}

fn thick_dim(ctx: &Ctx) -> Result<Outputs> {
    let cfg = ctx.cfg;
    let dt = cfg.effective_dt();
    let params = cfg.thick_params();
    let covers = reps(cfg.n_replicates)
        .map(|r| {
            let field = ctx.field(r);
            let path = ctx.path(r, dt, 1.0)?;
            let clock = ctx.clock(&field, &path)?;
            build_thick_cover(&field, &path, &clock, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut header = vec!["replicate", "n", "r", "net_size", "dropped", "selected", "expected_selected", "sum_diam"];
    let qcols: Vec<String> = cfg.q_grid.iter().map(|q| format!("sum_diam_q{q}")).collect();
    header.extend(qcols.iter().map(|s| s.as_str()));
    let mut t = Table::new(&header);
    let mut estimates = Vec::new();
    for (r, c) in covers.iter().enumerate() {
        for l in &c.levels {
            let diam: Vec<f64> = l.intervals.iter().map(|(a, b)| b - a).collect();
            let mut row: Vec<Cell> = vec![
                r.into(),
                l.n.into(),
                l.r.into(),
                l.net_size.into(),
                l.dropped.into(),
                l.selected.len().into(),
                l.expected_count.into(),
                diam.iter().sum::<f64>().into(),
            ];
            row.extend(cfg.q_grid.iter().map(|&q| Cell::Real(diam.iter().map(|d| d.powf(q)).sum())));
            t.push(row);
        }
        estimates.push(cover_dimension_estimate(c, &cfg.q_grid, cfg.cover_threshold));
    }
    let values: Vec<f64> = estimates.iter().map(|e| e.estimate).collect();
    let levels: Vec<Value> = (0..covers[0].levels.len())
        .map(|i| {
            let l0 = &covers[0].levels[i];
            let sel: Vec<f64> = covers.iter().map(|c| c.levels[i].selected.len() as f64).collect();
            let exp: Vec<f64> = covers.iter().map(|c| c.levels[i].expected_count).collect();
            json!({
                "n": l0.n,
                "r": l0.r,
                "mean_selected": mean_se(&sel).0,
                "mean_expected_selected": mean_se(&exp).0,
                "power_law_reference": l0.r.powf(-2.0 + (cfg.alpha - cfg.delta).powi(2) / 2.0),
            })
        })
        .collect();
    let summary = json!({
        "alpha": cfg.alpha,
        "gamma": cfg.gamma,
        "K": covers[0].k_exponent,
        "estimates": values,
        "mean_estimate": mean_se(&values).0,
        "fraction_below_one": values.iter().filter(|&&v| v < 1.0).count() as f64 / values.len() as f64,
        "empty_covers": estimates.iter().filter(|e| e.empty).count(),
        "unreached": estimates.iter().filter(|e| !e.empty && !e.reached).count(),
        "thick_dim_formula": thick_dim_formula(cfg.alpha, cfg.gamma),
        "hmp_dimension": hmp_dimension(cfg.alpha),
        "partial_paths": covers.iter().filter(|c| c.partial).count(),
        "levels": levels,
    });
    Ok(Outputs { results: t, summary, extra: Vec::new() })
}

fn kpz_table(cfg: &ExperimentConfig) -> Result<Outputs> {
    let mut t = Table::new(&["d0", "d"]);
    for &d0 in &cfg.d0 {
        t.push(vec![d0.into(), kpz_dimension(d0, cfg.gamma)?.into()]);
    }
    let summary = json!({ "gamma": cfg.gamma, "rows": cfg.d0.len() });
    Ok(Outputs { results: t, summary, extra: Vec::new() })
}

fn moments(cfg: &ExperimentConfig) -> Result<Outputs> {
    let e = moment_estimator(&cfg.moment_spec(), cfg.seed)?;
    let mut t = Table::new(&["gamma", "q", "epsilon", "m", "estimate", "stderr", "diagonal", "cross", "diagonal_share", "cross_share"]);
    t.push(vec![
        e.gamma.into(),
        e.q.into(),
        e.epsilon.into(),
        e.m.into(),
        e.value.into(),
        e.stderr.into(),
        e.diagonal.into(),
        e.cross.into(),
        e.diagonal_share.into(),
        e.cross_share.into(),
    ]);
    let summary = json!({
        "gamma": e.gamma,
        "q": e.q,
        "epsilon": e.epsilon,
        "m": e.m,
        "estimate": e.value,
        "stderr": e.stderr,
        "diagonal_share": e.diagonal_share,
        "cross_share": e.cross_share,
        "n_replicates": e.n_replicates,
        "seed": cfg.seed,
        "zeta": crate::scaling::zeta(e.q, e.gamma),
        "max_points": e.max_points,
        "max_clipped_fraction": e.max_clipped_fraction,
    });
    Ok(Outputs { results: t, summary, extra: Vec::new() })
}

fn pair_counts(cfg: &ExperimentConfig) -> Result<Outputs> {
    let dt = cfg.effective_dt();
    let start = cfg.start.map(|[x, y]| Point::new(x, y)).unwrap_or(Point::new(0.0, 0.0));
    let ks: Vec<u32> = (cfg.k_min..=cfg.k_max).collect();
    let rows = reps(cfg.n_replicates)
        .map(|r| {
            let path = BrownianPath::free(start, dt, 1.0, StreamKey::new(cfg.seed, r))?;
            ks.iter()
                .map(|&k| {
                    let spacing = 4f64.powi(-(k as i32));
                    let mut best = 0u64;
                    for j in 0..cfg.n_offsets {
                        let s = (j as f64 * spacing / cfg.n_offsets as f64 / dt).floor() * dt;
                        best = best.max(pair_count(&path, k, s)?.count);
                    }
                    Ok(best)
                })
                .collect::<Result<Vec<u64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let norm = |k: u32, c: u64| c as f64 / (4f64.powi(k as i32) * (k as f64).powi(3));
    let mut t = Table::new(&["replicate", "k", "max_pair_count", "normalized"]);
    for (r, counts) in rows.iter().enumerate() {
        for (&k, &c) in ks.iter().zip(counts) {
            t.push(vec![r.into(), k.into(), c.into(), norm(k, c).into()]);
        }
    }
    let max_norm: Vec<f64> =
        ks.iter().enumerate().map(|(i, &k)| rows.iter().map(|c| norm(k, c[i])).fold(0.0, f64::max)).collect();
    let summary = json!({
        "k": ks,
        "max_normalized": max_norm,
        "growth_first_to_last": max_norm.last().unwrap() / max_norm[0],
    });
    Ok(Outputs { results: t, summary, extra: Vec::new() })
}

/// Runs the command in memory, without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outputs> {
    let violations = cfg.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidParameter(violations.join("; ")));
    }
    match cfg.command {
        Command::KpzTable => return kpz_table(cfg),
        Command::Moments => return moments(cfg),
        Command::PairCount => return pair_counts(cfg),
        _ => {}
    }
    let domain = cfg.domain_spec()?;
    let ctx = Ctx { cfg, domain, basis: Arc::new(ModeBasis::new(cfg.n_modes)?), emb: SquareEmbedding::for_domain(&domain) };
    match cfg.command {
        Command::FieldStats => field_stats(&ctx),
        Command::ClockMean => clock_mean(&ctx),
        Command::Converge => converge(&ctx),
        Command::Positivity => positivity(&ctx),
        Command::ConformalCheck => conformal_check(&ctx),
        Command::ThickDim => thick_dim(&ctx),
        Command::KpzTable | Command::Moments | Command::PairCount => unreachable!(),
    }
}

fn threads_from_env() -> Option<usize> {
    std::env::var("LIOUVILLE_THREADS").ok().and_then(|s| s.trim().parse().ok()).filter(|&n| n > 0)
}

fn create_run_dir(base: &Path, command: Command) -> std::io::Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    fs::create_dir_all(base)?;
    for i in 0.. {
        let name = if i == 0 { format!("{}-{stamp}", command.name()) } else { format!("{}-{stamp}-{i}", command.name()) };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn manifest(cfg: &ExperimentConfig, threads: usize, started: &str, wall: f64, status: &str) -> Value {
    json!({
        "config": cfg,
        "generator": GENERATOR,
        "versions": {
            "liouville-core": env!("CARGO_PKG_VERSION"),
            "manifest_format": 1,
        },
        "threads": threads,
        "started_at": started,
        "wall_time_s": wall,
        "status": status,
    })
}

/// Validates, runs and writes `manifest.json`, `results.csv` and
/// `summary.json` under `<output_dir>/<command>-<timestamp>/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> RunOutcome {
    let violations = cfg.validate();
    if !violations.is_empty() {
        return RunOutcome { exit_code: EXIT_VALIDATION, run_dir: None, messages: violations };
    }
    let io_fail = |e: std::io::Error, dir: Option<PathBuf>| RunOutcome {
        exit_code: EXIT_NUMERICAL,
        run_dir: dir,
        messages: vec![format!("cannot write outputs: {e}")],
    };
    let dir = match create_run_dir(Path::new(&cfg.output_dir), cfg.command) {
        Ok(d) => d,
        Err(e) => return io_fail(e, None),
    };
    let started = chrono::Utc::now().to_rfc3339();
    let clock = Instant::now();
    let (result, threads) = match threads_from_env() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => (pool.install(|| execute(cfg)), n),
            Err(e) => return RunOutcome { exit_code: EXIT_NUMERICAL, run_dir: Some(dir), messages: vec![e.to_string()] },
        },
        None => (execute(cfg), rayon::current_num_threads()),
    };
    let wall = clock.elapsed().as_secs_f64();
    let written = match &result {
        Ok(out) => (|| -> std::io::Result<()> {
            fs::write(dir.join("manifest.json"), pretty(&manifest(cfg, threads, &started, wall, "ok")))?;
            fs::write(dir.join("results.csv"), out.results.to_csv())?;
            fs::write(dir.join("summary.json"), pretty(&out.summary))?;
            for (name, table) in &out.extra {
                fs::write(dir.join(name), table.to_csv())?;
            }
            Ok(())
        })(),
        Err(e) => (|| -> std::io::Result<()> {
            let q = dir.join("quarantine");
            fs::create_dir_all(&q)?;
            fs::write(q.join("manifest.json"), pretty(&manifest(cfg, threads, &started, wall, "numerical-error")))?;
            fs::write(q.join("error.json"), pretty(&json!({ "error": e.to_string(), "detail": format!("{e:?}") })))?;
            Ok(())
        })(),
    };
    match (result, written) {
        (_, Err(e)) => io_fail(e, Some(dir)),
        (Ok(_), Ok(())) => RunOutcome { exit_code: EXIT_OK, run_dir: Some(dir), messages: Vec::new() },
        (Err(e), Ok(())) => RunOutcome { exit_code: EXIT_NUMERICAL, run_dir: Some(dir), messages: vec![e.to_string()] },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(command: Command) -> ExperimentConfig {
        ExperimentConfig { command, ..Default::default() }
    }

    #[test]
    fn kpz_table_has_forced_endpoint() {
        let out = execute(&cfg(Command::KpzTable)).unwrap();
        let csv = out.results.to_csv();
        assert!(csv.starts_with("d0,d\n"));
        let last = out.results.rows.last().unwrap();
        assert_eq!(last[0], Cell::Real(2.0));
        match last[1] {
            Cell::Real(d) => assert!((d - 1.0).abs() < 1e-12),
            _ => panic!(),
        }
    }

    #[test]
    fn validation_lists_every_violation() {
        let bad = ExperimentConfig {
            gamma: 2.5,
            margin: 0.7,
            k: 2,
            n_modes: 10,
            ..cfg(Command::ClockMean)
        };
        let v = bad.validate();
        assert!(v.len() >= 4, "{v:?}");
        let out = run_experiment(&bad);
        assert_eq!(out.exit_code, EXIT_VALIDATION);
        assert!(out.run_dir.is_none());
    }

    #[test]
    fn every_command_default_is_valid() {
        for c in [
            Command::FieldStats,
            Command::ClockMean,
            Command::Converge,
            Command::Positivity,
            Command::ConformalCheck,
            Command::ThickDim,
            Command::KpzTable,
            Command::Moments,
            Command::PairCount,
        ] {
            assert!(cfg(c).validate().is_empty(), "{}: {:?}", c.name(), cfg(c).validate());
            assert_eq!(Command::parse(c.name()).unwrap(), c);
        }
        assert!(Command::parse("nope").is_err());
    }

    #[test]
    fn gamma_zero_clock_mean_reports_identity() {
        let c = ExperimentConfig { gamma: 0.0, n_modes: 1024, n_replicates: 3, ..cfg(Command::ClockMean) };
        let out = execute(&c).unwrap();
        assert_eq!(out.summary["gamma-zero-identity"], "pass");
        let target = out.summary["target"].as_f64().unwrap();
        assert_eq!(out.summary["mean_clock"].as_f64().unwrap(), target);
    }

    #[test]
    fn config_round_trip_and_manifest() {
        let c = ExperimentConfig { gamma: 0.7, seed: 9, domain: Some(DomainKind::UnitDisc), ..cfg(Command::Converge) };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        let m = manifest(&c, 1, "now", 0.0, "ok");
        assert_eq!(ExperimentConfig::from_json(&m.to_string()).unwrap(), c);
        let partial = ExperimentConfig::from_json(r#"{"command": "moments", "q": 1.5}"#).unwrap();
        assert_eq!(partial.q, 1.5);
        assert_eq!(partial.gamma, 1.0);
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn real_format() {
        assert_eq!(format_real(0.1), "1.0000000000000001e-1");
        assert_eq!(format_real(2.0), "2.0000000000000000e0");
        assert_eq!(format_real(-0.5).parse::<f64>().unwrap(), -0.5);
        for x in [std::f64::consts::PI, 1e-300, 123456.789] {
            assert_eq!(format_real(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn numerical_error_is_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        // The horizon puts far more than 2000 net points in the square.
        let c = ExperimentConfig {
            output_dir: dir.path().to_string_lossy().into(),
            epsilon: 2f64.powi(-6),
            moment_horizon: Some(2.0),
            n_replicates: 2,
            ..cfg(Command::Moments)
        };
        let out = run_experiment(&c);
        assert_eq!(out.exit_code, EXIT_NUMERICAL);
        let run = out.run_dir.unwrap();
        assert!(run.join("quarantine/error.json").exists());
        assert!(!run.join("results.csv").exists());
    }
}
