//! Discretized planar Brownian paths stopped at the margin `r` from the boundary.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{check, Error, Result};
use crate::geometry::{DomainSpec, Point};
use crate::rng::{Purpose, StreamKey};

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    pub start: Point,
    pub dt: f64,
    /// `B(i·dt)` for `i = 0..=stop_index`.
    pub positions: Vec<Point>,
    /// First grid index within the margin, or `n_steps` if never reached.
    pub stop_index: usize,
    /// Planned number of steps, `⌊max_time/dt⌋`.
    pub n_steps: usize,
    /// Stopping margin; `None` for an unstopped path.
    pub margin: Option<f64>,
    pub domain: Option<DomainSpec>,
    pub seed: u64,
    pub replicate: u64,
}

/// Stopped path from stream `(seed, 0)`.
pub fn sample_path(domain: &DomainSpec, start: Point, dt: f64, max_time: f64, seed: u64) -> Result<BrownianPath> {
    BrownianPath::sample(domain, start, dt, max_time, StreamKey::new(seed, 0))
}

fn steps_for(dt: f64, max_time: f64) -> Result<usize> {
    check(dt > 0.0 && dt.is_finite(), || format!("dt must be positive, got {dt}"))?;
    check(max_time >= 0.0 && max_time.is_finite(), || format!("max_time must be nonnegative, got {max_time}"))?;
    Ok((max_time / dt + 1e-9).floor() as usize)
}

impl BrownianPath {
    /// Stopped at the first grid time with `dist(B, ∂D) ≤ inner_margin`.
    pub fn sample(domain: &DomainSpec, start: Point, dt: f64, max_time: f64, key: StreamKey) -> Result<Self> {
        let n_steps = steps_for(dt, max_time)?;
        if domain.dist_to_boundary(start) <= domain.inner_margin {
            return Err(Error::StartTooClose);
        }
        let mut rng = key.rng(Purpose::Path);
        let sd = dt.sqrt();
        let mut positions = Vec::with_capacity(n_steps.min(1 << 22) + 1);
        positions.push(start);
        let mut cur = start;
        let mut stop_index = n_steps;
        for i in 1..=n_steps {
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            cur = Point::new(cur.x + sd * dx, cur.y + sd * dy);
            positions.push(cur);
            if domain.dist_to_boundary(cur) <= domain.inner_margin {
                stop_index = i;
                break;
            }
        }
        Ok(Self {
            start,
            dt,
            positions,
            stop_index,
            n_steps,
            margin: Some(domain.inner_margin),
            domain: Some(*domain),
            seed: key.seed,
            replicate: key.replicate,
        })
    }

    /// Planar Brownian motion without stopping.
    pub fn free(start: Point, dt: f64, max_time: f64, key: StreamKey) -> Result<Self> {
        let n_steps = steps_for(dt, max_time)?;
        let mut rng = key.rng(Purpose::Path);
        let sd = dt.sqrt();
        let mut positions = Vec::with_capacity(n_steps + 1);
        positions.push(start);
        let mut cur = start;
        for _ in 0..n_steps {
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            cur = Point::new(cur.x + sd * dx, cur.y + sd * dy);
            positions.push(cur);
        }
        Ok(Self {
            start,
            dt,
            positions,
            stop_index: n_steps,
            n_steps,
            margin: None,
            domain: None,
            seed: key.seed,
            replicate: key.replicate,
        })
    }

    /// Path built from given positions (synthetic inputs, imports).
    pub fn from_positions(positions: Vec<Point>, dt: f64) -> Result<Self> {
        check(!positions.is_empty(), || "a path needs at least one position".into())?;
        check(dt > 0.0, || format!("dt must be positive, got {dt}"))?;
        let n = positions.len() - 1;
        Ok(Self {
            start: positions[0],
            dt,
            positions,
            stop_index: n,
            n_steps: n,
            margin: None,
            domain: None,
            seed: 0,
            replicate: 0,
        })
    }

    /// True when the margin was hit before `max_time`.
    pub fn stopped(&self) -> bool {
        self.stop_index < self.n_steps
    }

    /// Euclidean time `stop_index · dt` (the discrete `T ∧ max_time`).
    pub fn duration(&self) -> f64 {
        self.stop_index as f64 * self.dt
    }

    /// Linear interpolation of the stored positions; clamps outside `[0, duration]`.
    pub fn position_at(&self, t: f64) -> Point {
        let s = (t / self.dt).max(0.0);
        let i = s.floor() as usize;
        if i >= self.stop_index {
            return self.positions[self.stop_index];
        }
        self.positions[i].lerp(self.positions[i + 1], s - i as f64)
    }

    /// Same path rotated by `theta` about its start.
    pub fn rotated(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let o = self.start;
        let positions = self
            .positions
            .iter()
            .map(|p| {
                let (dx, dy) = (p.x - o.x, p.y - o.y);
                Point::new(o.x + c * dx - s * dy, o.y + s * dx + c * dy)
            })
            .collect();
        Self { positions, ..self.clone() }
    }
}

/// Pair count over the time net `S_k^s = [0, 1] ∩ (s + 2^{-2k} ℤ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCount {
    /// Ordered pairs `(t, t')` with `|B_t - B_t'| ≤ 2^{-k}`, diagonal included.
    pub count: u64,
    pub net_size: usize,
    /// The path ends before time 1, so only the covered part of the net is used.
    pub partial: bool,
}

/// Net times in `[0, min(1, duration)]`.
fn net_times(path: &BrownianPath, spacing: f64, s_offset: f64) -> (Vec<f64>, bool) {
    let end = path.duration().min(1.0);
    let partial = path.duration() < 1.0;
    let mut times = Vec::new();
    let mut j = 0usize;
    loop {
        let t = s_offset + j as f64 * spacing;
        if t > end + 1e-12 {
            break;
        }
        times.push(t.min(end));
        j += 1;
    }
    (times, partial)
}

fn net_positions(path: &BrownianPath, k: u32, s_offset: f64) -> Result<(Vec<Point>, bool)> {
    let spacing = 4f64.powi(-(k as i32));
    if spacing < path.dt * (1.0 - 1e-12) {
        return Err(Error::NetFinerThanPath { spacing, dt: path.dt });
    }
    check((0.0..spacing).contains(&s_offset), || format!("s_offset must lie in [0, {spacing}), got {s_offset}"))?;
    let (times, partial) = net_times(path, spacing, s_offset);
    Ok((times.into_iter().map(|t| path.position_at(t)).collect(), partial))
}

/// Counts close pairs on the net with a uniform cell grid of side `2^{-k}`.
pub fn pair_count(path: &BrownianPath, k: u32, s_offset: f64) -> Result<PairCount> {
    let (pts, partial) = net_positions(path, k, s_offset)?;
    let r = 2f64.powi(-(k as i32));
    let cell = |p: &Point| ((p.x / r).floor() as i64, (p.y / r).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let r2 = r * r;
    let mut count = 0u64;
    for p in &pts {
        let (cx, cy) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = grid.get(&(cx + dx, cy + dy)) {
                    count += bucket
                        .iter()
                        .filter(|&&j| {
                            let q = pts[j];
                            let (ex, ey) = (p.x - q.x, p.y - q.y);
                            ex * ex + ey * ey <= r2
                        })
                        .count() as u64;
                }
            }
        }
    }
    Ok(PairCount { count, net_size: pts.len(), partial })
}

/// `sup_i |B((i + L)dt) - B(i dt)|` with `L = ⌊lag/dt⌋`.
pub fn modulus_of_continuity(path: &BrownianPath, lag: f64) -> Result<f64> {
    let duration = path.duration();
    if !(lag >= path.dt * (1.0 - 1e-12) && lag <= duration * (1.0 + 1e-12)) {
        return Err(Error::LagOutOfRange { lag, dt: path.dt, duration });
    }
    let l = ((lag / path.dt) + 1e-9).floor() as usize;
    let pos = &path.positions[..=path.stop_index];
    Ok(pos.iter().zip(&pos[l..]).map(|(a, b)| a.dist(*b)).fold(0.0, f64::max))
}
