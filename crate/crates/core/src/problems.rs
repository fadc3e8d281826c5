//! Benchmark posteriors, forward models and initial designs.

use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::Rng;

/// Log unnormalized posterior (log prior + log likelihood).
pub type LogTarget = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ProblemSpec {
    pub label: String,
    pub dim: usize,
    pub log_target: LogTarget,
    pub hard_lb: Vec<f64>,
    pub hard_ub: Vec<f64>,
    pub plb: Vec<f64>,
    pub pub_: Vec<f64>,
    pub true_modes: Option<Vec<Vec<f64>>>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("hard_lb", &self.hard_lb)
            .field("hard_ub", &self.hard_ub)
            .field("plb", &self.plb)
            .field("pub_", &self.pub_)
            .field("true_modes", &self.true_modes)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Builds a problem whose plausible box is the hard box shrunk by 5% of
    /// its width on each side.
    pub fn new(label: &str, lb: Vec<f64>, ub: Vec<f64>, log_target: LogTarget) -> Result<Self> {
        let dim = lb.len();
        let (plb, pub_) = shrink_box(&lb, &ub, 0.05);
        let p = ProblemSpec {
            label: label.to_string(),
            dim,
            log_target,
            hard_lb: lb,
            hard_ub: ub,
            plb,
            pub_,
            true_modes: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if d == 0 {
            return Err(Error::invalid("problem dimension must be >= 1"));
        }
        for v in [&self.hard_lb, &self.hard_ub, &self.plb, &self.pub_] {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
        }
        for i in 0..d {
            let ok = self.hard_lb[i] <= self.plb[i]
                && self.plb[i] < self.pub_[i]
                && self.pub_[i] <= self.hard_ub[i]
                && self.hard_lb[i].is_finite()
                && self.hard_ub[i].is_finite();
            if !ok {
                return Err(Error::invalid(format!("inconsistent bounds in dimension {i}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.log_target)(x)
    }

    pub fn in_hard_box(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.hard_lb).zip(&self.hard_ub).all(|((v, lo), hi)| v >= lo && v <= hi)
    }
}

fn shrink_box(lb: &[f64], ub: &[f64], frac: f64) -> (Vec<f64>, Vec<f64>) {
    let plb = lb.iter().zip(ub).map(|(l, u)| l + frac * (u - l)).collect();
    let pub_ = lb.iter().zip(ub).map(|(l, u)| u - frac * (u - l)).collect();
    (plb, pub_)
}

fn inside(x: &[f64], lb: &[f64], ub: &[f64]) -> bool {
    x.len() == lb.len() && x.iter().zip(lb).zip(ub).all(|((v, l), u)| v > l && v < u)
}

pub fn himmelblau(x: f64, y: f64) -> f64 {
    (x * x + y - 11.0).powi(2) + (x + y * y - 7.0).powi(2)
}

pub const HIMMELBLAU_MODES: [[f64; 2]; 4] =
    [[3.0, 2.0], [-2.805, 3.131], [-3.779, -3.283], [3.584, -1.848]];

pub fn himmelblau_problem() -> ProblemSpec {
    let lb = vec![-5.0, -5.0];
    let ub = vec![5.0, 5.0];
    let (l2, u2) = (lb.clone(), ub.clone());
    let f: LogTarget = Arc::new(move |x: &[f64]| {
        if x.len() != 2 || x.iter().zip(&l2).zip(&u2).any(|((v, l), u)| !(v >= l && v <= u)) {
            return f64::NEG_INFINITY;
        }
        -himmelblau(x[0], x[1])
    });
    let mut p = ProblemSpec::new("himmelblau", lb, ub, f).expect("static bounds");
    p.true_modes = Some(HIMMELBLAU_MODES.iter().map(|m| m.to_vec()).collect());
    p
}

/// Natural circular frequencies (rad/s) of the fixed-free two-mass chain,
/// ascending.
pub fn two_dof_frequencies(m1: f64, m2: f64, k1: f64, k2: f64) -> Result<(f64, f64)> {
    if !(m1 > 0.0 && m2 > 0.0 && k1 > 0.0 && k2 > 0.0) {
        return Err(Error::invalid("masses and stiffnesses must be positive"));
    }
    let (l1, l2) = two_dof_eigenvalues(m1, m2, k1, k2);
    Ok((l1.max(0.0).sqrt(), l2.max(0.0).sqrt()))
}

/// Eigenvalues of `M^-1 K`, ascending. Valid for `k2 = 0` as well.
pub(crate) fn two_dof_eigenvalues(m1: f64, m2: f64, k1: f64, k2: f64) -> (f64, f64) {
    // symmetric form M^-1/2 K M^-1/2
    let a = (k1 + k2) / m1;
    let c = k2 / m2;
    let b = -k2 / (m1 * m2).sqrt();
    let half_tr = 0.5 * (a + c);
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let hi = half_tr + disc;
    // det / hi avoids cancellation in the small root
    let det = a * c - b * b;
    let lo = if hi > 0.0 { det / hi } else { half_tr - disc };
    (lo, hi)
}

pub const SPRING_M1: f64 = 16.531e3;
pub const SPRING_M2: f64 = 16.131e3;
pub const SPRING_K: f64 = 29.7e6;
/// Relative standard deviation of the observed frequencies.
pub const SPRING_REL_SD: f64 = 0.02;

/// Two-storey shear frame with stiffness multipliers `θ`; bimodal because
/// two stiffness configurations reproduce the same pair of frequencies.
pub fn multimodal_spring_problem(theta_true: &[f64]) -> Result<ProblemSpec> {
    let lb = vec![0.01, 0.01];
    let ub = vec![3.0, 3.0];
    if !inside(theta_true, &lb, &ub) {
        return Err(Error::invalid("theta_true must lie inside (0.01, 3)^2"));
    }
    let (w1, w2) =
        two_dof_frequencies(SPRING_M1, SPRING_M2, SPRING_K * theta_true[0], SPRING_K * theta_true[1])?;
    let (s1, s2) = (SPRING_REL_SD * w1, SPRING_REL_SD * w2);
    let log_norm = -(2.0 * std::f64::consts::PI * s1 * s2).ln() - (2.99f64 * 2.99).ln();
    let (l2, u2) = (lb.clone(), ub.clone());
    let f: LogTarget = Arc::new(move |x: &[f64]| {
        if !inside(x, &l2, &u2) {
            return f64::NEG_INFINITY;
        }
        let (lo, hi) = two_dof_eigenvalues(SPRING_M1, SPRING_M2, SPRING_K * x[0], SPRING_K * x[1]);
        let (p1, p2) = (lo.max(0.0).sqrt(), hi.max(0.0).sqrt());
        log_norm - 0.5 * ((p1 - w1) / s1).powi(2) - 0.5 * ((p2 - w2) / s2).powi(2)
    });
    let mut p = ProblemSpec::new("spring_multimodal", lb, ub, f)?;
    p.true_modes = Some(spring_equivalent_configs(theta_true));
    Ok(p)
}

/// Both stiffness configurations sharing the frequencies of `theta`.
///
/// Trace and determinant of `M^-1 K` fix `θ1 θ2` and `θ1/m1 + θ2 (1/m1 + 1/m2)`,
/// which leaves a quadratic in `θ2`.
pub fn spring_equivalent_configs(theta: &[f64]) -> Vec<Vec<f64>> {
    let (m1, m2) = (SPRING_M1, SPRING_M2);
    let prod = theta[0] * theta[1];
    let a = 1.0 / m1 + 1.0 / m2;
    let s = theta[0] / m1 + theta[1] * a;
    let disc = (s * s - 4.0 * a * prod / m1).max(0.0).sqrt();
    let mut out: Vec<Vec<f64>> = [(s + disc) / (2.0 * a), (s - disc) / (2.0 * a)]
        .iter()
        .map(|&t2| vec![prod / t2, t2])
        .collect();
    out.sort_by(|u, v| u[0].total_cmp(&v[0]));
    if (out[0][0] - out[1][0]).abs() < 1e-12 {
        out.truncate(1);
    }
    out
}

pub const UNIMODAL_MASS: f64 = 0.5;
pub const UNIMODAL_K: f64 = 0.6;
pub const UNIMODAL_K12: f64 = 1.0;
pub const UNIMODAL_N_MEAS: usize = 15;
/// Default seed for the synthetic measurements.
pub const UNIMODAL_DATA_SEED: u64 = 2021;

/// Undamped frequencies of the symmetric two-mass system with coupling spring.
pub fn unimodal_frequencies(k: f64, k12: f64) -> (f64, f64) {
    ((k / UNIMODAL_MASS).sqrt(), ((k + 2.0 * k12) / UNIMODAL_MASS).sqrt())
}

/// Noise levels used to synthesize the measurements: 10% of the true frequencies.
pub fn unimodal_true_sigmas() -> (f64, f64) {
    let (w1, w2) = unimodal_frequencies(UNIMODAL_K, UNIMODAL_K12);
    (0.1 * w1, 0.1 * w2)
}

/// Draws the 15 measured frequency pairs.
pub fn unimodal_measurements(seed: u64) -> Vec<(f64, f64)> {
    let mut rng = crate::rng_from_seed(seed);
    let (w1, w2) = unimodal_frequencies(UNIMODAL_K, UNIMODAL_K12);
    let (s1, s2) = unimodal_true_sigmas();
    let n1 = Normal::new(0.0, s1).expect("positive sd");
    let n2 = Normal::new(0.0, s2).expect("positive sd");
    (0..UNIMODAL_N_MEAS).map(|_| (w1 + n1.sample(&mut rng), w2 + n2.sample(&mut rng))).collect()
}

/// Parameters `(k, k12, σ1, σ2)` with uniform priors.
pub fn unimodal_spring_problem(seed: u64) -> ProblemSpec {
    unimodal_spring_from_data(unimodal_measurements(seed))
}

pub fn unimodal_spring_from_data(data: Vec<(f64, f64)>) -> ProblemSpec {
    let lb = vec![0.1, 0.1, 1e-5, 1e-5];
    let ub = vec![4.0, 4.0, 1.0, 1.0];
    let log_prior = -((3.9f64).ln() * 2.0 + (1.0f64 - 1e-5).ln() * 2.0);
    let (l2, u2) = (lb.clone(), ub.clone());
    let n = data.len() as f64;
    let f: LogTarget = Arc::new(move |x: &[f64]| {
        if !inside(x, &l2, &u2) {
            return f64::NEG_INFINITY;
        }
        let (w1, w2) = unimodal_frequencies(x[0], x[1]);
        let (s1, s2) = (x[2], x[3]);
        let mut ss1 = 0.0;
        let mut ss2 = 0.0;
        for (a, b) in &data {
            ss1 += (a - w1) * (a - w1);
            ss2 += (b - w2) * (b - w2);
        }
        log_prior - n * (2.0 * std::f64::consts::PI * s1 * s2).ln()
            - ss1 / (2.0 * s1 * s1)
            - ss2 / (2.0 * s2 * s2)
    });
    let mut p = ProblemSpec::new("spring_unimodal", lb, ub, f).expect("static bounds");
    let (s1, s2) = unimodal_true_sigmas();
    p.true_modes = Some(vec![vec![UNIMODAL_K, UNIMODAL_K12, s1, s2]]);
    p
}

/// Latin hypercube design: one point per stratum in every dimension.
pub fn lhs(n: usize, lo: &[f64], hi: &[f64], rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("lhs needs at least one point"));
    }
    if lo.len() != hi.len() {
        return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(Error::invalid("lhs requires lo < hi"));
    }
    let d = lo.len();
    let mut pts = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for i in 0..d {
        strata.shuffle(rng);
        let w = (hi[i] - lo[i]) / n as f64;
        for (p, &s) in pts.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            p[i] = (lo[i] + w * (s as f64 + u)).min(hi[i]);
        }
    }
    Ok(pts)
}
