//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the crate's kernel, Cholesky or quadrature code.
#![allow(dead_code)]

pub mod criteria;

use cvbmc::{GpHyperparams, MixturePosterior, TrainingSet};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Squared-exponential kernel with the Gaussian-density normalization
/// `(2π)^{d/2} ∏ l_i`, written out directly.
pub fn kernel(a: &[f64], b: &[f64], h: &GpHyperparams) -> f64 {
    let d = a.len() as f64;
    let mut norm = (2.0 * std::f64::consts::PI).powf(d / 2.0);
    let mut q = 0.0;
    for i in 0..a.len() {
        let l = h.log_input_scales[i].exp();
        norm *= l;
        q += ((a[i] - b[i]) / l).powi(2);
    }
    (2.0 * h.log_output_scale).exp() * norm * (-0.5 * q).exp()
}

pub fn mean_fn(a: &[f64], h: &GpHyperparams) -> f64 {
    let mut q = 0.0;
    for i in 0..a.len() {
        let r = h.log_mean_scales[i].exp();
        q += ((a[i] - h.mean_loc[i]) / r).powi(2);
    }
    h.mean_max - 0.5 * q
}

/// GP posterior evaluated with an explicit inverse of the noisy Gram matrix.
pub struct DenseGp {
    pub inputs: Vec<Vec<f64>>,
    pub hyper: GpHyperparams,
    pub k_inv: DMatrix<f64>,
    pub alpha: DVector<f64>,
}

impl DenseGp {
    pub fn new(ts: &TrainingSet, h: &GpHyperparams) -> Self {
        let n = ts.len();
        let base = (2.0 * h.log_base_noise).exp();
        let gram = DMatrix::from_fn(n, n, |i, j| {
            let k = kernel(&ts.inputs[i], &ts.inputs[j], h);
            if i == j {
                k + ts.obs_noise[i].powi(2) + base
            } else {
                k
            }
        });
        let k_inv = gram.clone().lu().try_inverse().expect("invertible Gram matrix");
        let resid = DVector::from_fn(n, |i, _| ts.targets_raw[i] - mean_fn(&ts.inputs[i], h));
        let alpha = &k_inv * resid;
        DenseGp { inputs: ts.inputs.clone(), hyper: h.clone(), k_inv, alpha }
    }

    fn cross(&self, a: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.inputs.len(), |i, _| kernel(a, &self.inputs[i], &self.hyper))
    }

    pub fn mean(&self, a: &[f64]) -> f64 {
        mean_fn(a, &self.hyper) + self.cross(a).dot(&self.alpha)
    }

    pub fn cov(&self, a: &[f64], b: &[f64]) -> f64 {
        let ka = self.cross(a);
        let kb = self.cross(b);
        kernel(a, b, &self.hyper) - ka.dot(&(&self.k_inv * kb))
    }

    pub fn predict(&self, a: &[f64]) -> (f64, f64) {
        (self.mean(a), self.cov(a, a))
    }
}

/// One draw from a diagonal Gaussian mixture, by ancestral sampling.
pub fn mixture_draw(q: &MixturePosterior, rng: &mut cvbmc::Rng) -> Vec<f64> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut k = q.weights.len() - 1;
    for (j, w) in q.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            k = j;
            break;
        }
    }
    q.means[k]
        .iter()
        .zip(&q.length_scales)
        .map(|(m, l)| m + q.scales[k] * l * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Monte Carlo estimate of `E_q[f]` and `Var[E_q[f]]` for `f` distributed as
/// the GP posterior: the mean integrates the posterior mean over `n` draws;
/// the variance integrates the posterior covariance over `n` independent pairs.
pub fn mc_expected_log_joint(gp: &DenseGp, q: &MixturePosterior, n: usize, rng: &mut cvbmc::Rng) -> (f64, f64) {
    let mut mean = 0.0;
    let mut var = 0.0;
    for _ in 0..n {
        let a = mixture_draw(q, rng);
        let b = mixture_draw(q, rng);
        mean += gp.mean(&a);
        var += gp.cov(&a, &b);
    }
    (mean / n as f64, var / n as f64)
}

/// Entropy of a single diagonal Gaussian with standard deviations `sd`.
pub fn gaussian_entropy(sd: &[f64]) -> f64 {
    let d = sd.len() as f64;
    0.5 * d * (1.0 + (2.0 * std::f64::consts::PI).ln()) + sd.iter().map(|s| s.ln()).sum::<f64>()
}

/// Central finite differences of `f` at `x`.
pub fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + step;
        let up = f(&y);
        y[i] = x[i] - step;
        let down = f(&y);
        y[i] = x[i];
        g[i] = (up - down) / (2.0 * step);
    }
    g
}

/// Random GP instance in `[-2, 2]^d` with `n` observations of a smooth
/// negative-definite log density.
pub fn random_gp_instance(d: usize, n: usize, rng: &mut cvbmc::Rng) -> (TrainingSet, GpHyperparams) {
    let mut ts = TrainingSet::new(d);
    while ts.len() < n {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h = -3.0 - 0.5 * x.iter().map(|v| v * v).sum::<f64>() + 0.3 * (2.0 * x[0]).sin();
        let _ = ts.push(x, h, 1e-3);
    }
    let hyper = GpHyperparams {
        log_input_scales: (0..d).map(|_| rng.random_range(-0.5f64..0.7)).collect(),
        log_output_scale: rng.random_range(-0.5..0.5),
        log_base_noise: rng.random_range(-4.0..-2.0),
        mean_max: rng.random_range(-6.0..-3.0),
        mean_loc: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        log_mean_scales: (0..d).map(|_| rng.random_range(0.0..1.0)).collect(),
    };
    (ts, hyper)
}

/// Random diagonal mixture overlapping `[-2, 2]^d`.
pub fn random_mixture(d: usize, k: usize, rng: &mut cvbmc::Rng) -> MixturePosterior {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    MixturePosterior::new(
        raw.iter().map(|w| w / total).collect(),
        (0..k).map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()).collect(),
        (0..k).map(|_| rng.random_range(0.4..1.0)).collect(),
        (0..d).map(|_| rng.random_range(0.5..1.2)).collect(),
    )
    .expect("valid mixture")
}
