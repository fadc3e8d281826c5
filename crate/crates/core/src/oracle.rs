//! Brute-force ground truth for low-dimensional posteriors.
//!
//! A grid oracle evaluates the log target at cell midpoints and normalizes
//! with log-sum-exp. Grids and weighted sample sets share one interface for
//! ball masses and marginal ECDFs so that runs can be scored against oracles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemSpec;
use crate::variational::log_sum_exp;

/// Ball radius (problem units) used to attribute mass to a mode.
pub const MODE_RADIUS: f64 = 0.5;
/// Minimum ball mass for a mode to count as found.
pub const MODE_MASS_FLOOR: f64 = 0.02;
pub const MIN_RESOLUTION: usize = 16;
pub const MAX_GRID_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GridOracle {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: Vec<usize>,
    /// Raw log target at the cell midpoints, first dimension slowest.
    pub log_values: Vec<f64>,
    pub cell_mass: Vec<f64>,
}

impl GridOracle {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cell_mass.len()
    }

    pub fn cell_width(&self, i: usize) -> f64 {
        (self.hi[i] - self.lo[i]) / self.resolution[i] as f64
    }

    pub fn index_to_multi(&self, mut idx: usize) -> Vec<usize> {
        let d = self.dim();
        let mut out = vec![0; d];
        for i in (0..d).rev() {
            out[i] = idx % self.resolution[i];
            idx /= self.resolution[i];
        }
        out
    }

    pub fn multi_to_index(&self, m: &[usize]) -> usize {
        m.iter().zip(&self.resolution).fold(0, |acc, (j, r)| acc * r + j)
    }

    pub fn midpoint(&self, idx: usize) -> Vec<f64> {
        self.index_to_multi(idx)
            .iter()
            .enumerate()
            .map(|(i, &j)| self.lo[i] + (j as f64 + 0.5) * self.cell_width(i))
            .collect()
    }

    /// Marginal cell masses along dimension `dim`.
    pub fn marginal_masses(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.resolution[dim]];
        let inner: usize = self.resolution[dim + 1..].iter().product();
        let r = self.resolution[dim];
        for (idx, m) in self.cell_mass.iter().enumerate() {
            out[(idx / inner) % r] += m;
        }
        out
    }

    pub fn marginal_mean(&self, dim: usize) -> f64 {
        let w = self.cell_width(dim);
        self.marginal_masses(dim)
            .iter()
            .enumerate()
            .map(|(j, m)| m * (self.lo[dim] + (j as f64 + 0.5) * w))
            .sum()
    }

    /// Marginal mean and variance along `dim`.
    pub fn marginal_moments(&self, dim: usize) -> (f64, f64) {
        let w = self.cell_width(dim);
        let mm = self.marginal_masses(dim);
        let x = |j: usize| self.lo[dim] + (j as f64 + 0.5) * w;
        let mean: f64 = mm.iter().enumerate().map(|(j, m)| m * x(j)).sum();
        let var = mm.iter().enumerate().map(|(j, m)| m * (x(j) - mean).powi(2)).sum();
        (mean, var)
    }
}

/// Grid oracle over the problem's hard box.
pub fn grid_posterior(p: &ProblemSpec, resolution: usize) -> Result<GridOracle> {
    grid_posterior_in(p, &p.hard_lb, &p.hard_ub, resolution)
}

/// Grid oracle over an arbitrary sub-box `[lo, hi]`.
pub fn grid_posterior_in(p: &ProblemSpec, lo: &[f64], hi: &[f64], resolution: usize) -> Result<GridOracle> {
    let d = p.dim;
    if d > MAX_GRID_DIM {
        return Err(Error::invalid(format!("grid oracle supports d <= {MAX_GRID_DIM}, got {d}")));
    }
    if resolution < MIN_RESOLUTION {
        return Err(Error::invalid(format!("grid resolution must be >= {MIN_RESOLUTION}, got {resolution}")));
    }
    if lo.len() != d || hi.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: lo.len().min(hi.len()) });
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(Error::invalid("grid box requires lo < hi"));
    }
    let mut g = GridOracle {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        resolution: vec![resolution; d],
        log_values: Vec::new(),
        cell_mass: Vec::new(),
    };
    let n = resolution.pow(d as u32);
    g.log_values = (0..n).into_par_iter().map(|idx| p.eval(&g.midpoint(idx))).collect();
    let z = log_sum_exp(&g.log_values);
    if !z.is_finite() {
        return Err(Error::invalid("log target is -inf (or non-finite) on every grid cell"));
    }
    g.cell_mass = g.log_values.iter().map(|v| (v - z).exp()).collect();
    Ok(g)
}

/// Strict local maxima of the cell mass (all `3^d - 1` neighbors) whose
/// surrounding ball of radius [`MODE_RADIUS`] holds at least `mass_floor`.
/// Locations are returned by decreasing ball mass.
pub fn mode_count(g: &GridOracle, mass_floor: f64) -> (usize, Vec<Vec<f64>>) {
    mode_count_with_radius(g, mass_floor, MODE_RADIUS)
}

pub fn mode_count_with_radius(g: &GridOracle, mass_floor: f64, radius: f64) -> (usize, Vec<Vec<f64>>) {
    let d = g.dim();
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(d as u32))
        .map(|c| {
            let mut c = c;
            (0..d)
                .map(|_| {
                    let o = (c % 3) as i64 - 1;
                    c /= 3;
                    o
                })
                .collect::<Vec<i64>>()
        })
        .filter(|o| o.iter().any(|&v| v != 0))
        .collect();
    let mut found: Vec<(f64, Vec<f64>)> = Vec::new();
    for idx in 0..g.n_cells() {
        let m = g.cell_mass[idx];
        if m <= 0.0 {
            continue;
        }
        let mi = g.index_to_multi(idx);
        let strict = offsets.iter().all(|o| {
            let mut nb = Vec::with_capacity(d);
            for i in 0..d {
                let j = mi[i] as i64 + o[i];
                if j < 0 || j >= g.resolution[i] as i64 {
                    return true;
                }
                nb.push(j as usize);
            }
            g.cell_mass[g.multi_to_index(&nb)] < m
        });
        if !strict {
            continue;
        }
        let c = g.midpoint(idx);
        let ball = g.mass_in_ball(&c, radius);
        if ball >= mass_floor {
            found.push((ball, c));
        }
    }
    found.sort_by(|a, b| b.0.total_cmp(&a.0));
    (found.len(), found.into_iter().map(|(_, c)| c).collect())
}

/// Piecewise-linear (grid) or right-continuous step (samples) marginal CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    pub xs: Vec<f64>,
    pub fs: Vec<f64>,
    pub linear: bool,
}

impl Ecdf {
    fn locate(&self, x: f64) -> usize {
        self.xs.partition_point(|&v| v <= x)
    }

    /// `F(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let j = self.locate(x);
        if j == 0 {
            return 0.0;
        }
        if j == self.xs.len() || !self.linear {
            return self.fs[j - 1];
        }
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let t = (x - x0) / (x1 - x0);
        self.fs[j - 1] + t * (self.fs[j] - self.fs[j - 1])
    }

    /// `F(x-)`.
    pub fn eval_left(&self, x: f64) -> f64 {
        if self.linear {
            return self.eval(x);
        }
        let j = self.xs.partition_point(|&v| v < x);
        if j == 0 {
            0.0
        } else {
            self.fs[j - 1]
        }
    }
}

/// Common view of grid oracles and weighted sample sets.
pub trait Distribution {
    fn dim(&self) -> usize;
    fn mass_in_ball(&self, center: &[f64], radius: f64) -> f64;
    fn marginal_ecdf(&self, dim: usize) -> Ecdf;
}

impl Distribution for GridOracle {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn mass_in_ball(&self, center: &[f64], radius: f64) -> f64 {
        let d = self.lo.len();
        let r2 = radius * radius;
        // only visit cells whose index range can intersect the ball
        let ranges: Vec<(usize, usize)> = (0..d)
            .map(|i| {
                let w = self.cell_width(i);
                let a = ((center[i] - radius - self.lo[i]) / w).floor().max(0.0) as usize;
                let b = (((center[i] + radius - self.lo[i]) / w).ceil().max(0.0) as usize).min(self.resolution[i]);
                (a.min(self.resolution[i]), b)
            })
            .collect();
        if ranges.iter().any(|(a, b)| a >= b) {
            return 0.0;
        }
        let mut total = 0.0;
        let mut m: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        loop {
            let mut dist2 = 0.0;
            for i in 0..d {
                let x = self.lo[i] + (m[i] as f64 + 0.5) * self.cell_width(i);
                dist2 += (x - center[i]).powi(2);
            }
            if dist2 <= r2 {
                total += self.cell_mass[self.multi_to_index(&m)];
            }
            let mut i = d;
            loop {
                if i == 0 {
                    return total.min(1.0);
                }
                i -= 1;
                m[i] += 1;
                if m[i] < ranges[i].1 {
                    break;
                }
                m[i] = ranges[i].0;
            }
        }
    }

    fn marginal_ecdf(&self, dim: usize) -> Ecdf {
        let w = self.cell_width(dim);
        let mm = self.marginal_masses(dim);
        let mut xs = Vec::with_capacity(mm.len() + 1);
        let mut fs = Vec::with_capacity(mm.len() + 1);
        xs.push(self.lo[dim]);
        fs.push(0.0);
        let mut acc = 0.0;
        for (j, m) in mm.iter().enumerate() {
            acc += m;
            xs.push(self.lo[dim] + (j as f64 + 1.0) * w);
            fs.push(acc.min(1.0));
        }
        *fs.last_mut().expect("non-empty") = 1.0;
        Ecdf { xs, fs, linear: true }
    }
}

/// Weighted empirical distribution (weights normalized on construction).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSamples {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl WeightedSamples {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(Error::invalid("need a non-empty sample set with one weight per point"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("sample weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("sample weights sum to zero"));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(WeightedSamples { points, weights })
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0; n])
    }

    /// Per-dimension mean and coefficient of variation (sd / |mean|).
    pub fn mean_cov(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.points[0].len();
        let mut mean = vec![0.0; d];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for i in 0..d {
                mean[i] += w * p[i];
            }
        }
        let mut var = vec![0.0; d];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for i in 0..d {
                var[i] += w * (p[i] - mean[i]).powi(2);
            }
        }
        let cov = var.iter().zip(&mean).map(|(v, m)| v.sqrt() / m.abs()).collect();
        (mean, cov)
    }
}

impl Distribution for WeightedSamples {
    fn dim(&self) -> usize {
        self.points[0].len()
    }

    fn mass_in_ball(&self, center: &[f64], radius: f64) -> f64 {
        let r2 = radius * radius;
        let m: f64 = self
            .points
            .iter()
            .zip(&self.weights)
            .filter(|(p, _)| p.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>() <= r2)
            .map(|(_, w)| w)
            .sum();
        m.min(1.0)
    }

    fn marginal_ecdf(&self, dim: usize) -> Ecdf {
        let mut pairs: Vec<(f64, f64)> = self.points.iter().map(|p| p[dim]).zip(self.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut xs: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut fs: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut acc = 0.0;
        for (x, w) in pairs {
            acc += w;
            if xs.last() == Some(&x) {
                *fs.last_mut().expect("non-empty") = acc.min(1.0);
            } else {
                xs.push(x);
                fs.push(acc.min(1.0));
            }
        }
        *fs.last_mut().expect("non-empty") = 1.0;
        Ecdf { xs, fs, linear: false }
    }
}

pub fn mass_in_ball(dist: &dyn Distribution, center: &[f64], radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(Error::invalid("radius must be positive"));
    }
    if center.len() != dist.dim() {
        return Err(Error::DimensionMismatch { expected: dist.dim(), got: center.len() });
    }
    Ok(dist.mass_in_ball(center, radius))
}

pub fn marginal_ecdf(dist: &dyn Distribution, dim: usize) -> Result<Ecdf> {
    if dim >= dist.dim() {
        return Err(Error::invalid(format!("dimension index {dim} out of range")));
    }
    Ok(dist.marginal_ecdf(dim))
}

/// `sup_x |F_a(x) - F_b(x)|`, using both one-sided limits at every breakpoint.
pub fn sup_ecdf_distance(a: &Ecdf, b: &Ecdf) -> f64 {
    let mut best: f64 = 0.0;
    for x in a.xs.iter().chain(&b.xs) {
        best = best.max((a.eval(*x) - b.eval(*x)).abs());
        best = best.max((a.eval_left(*x) - b.eval_left(*x)).abs());
    }
    best.min(1.0)
}
