use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{HyperPrior, TrainingSet};
use crate::linalg::CholFactor;

/// GP hyperparameters, `3d + 3` values in total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub log_input_scales: Vec<f64>,
    pub log_output_scale: f64,
    pub log_base_noise: f64,
    pub mean_max: f64,
    pub mean_loc: Vec<f64>,
    pub log_mean_scales: Vec<f64>,
}

impl GpHyperparams {
    pub fn dim(&self) -> usize {
        self.log_input_scales.len()
    }

    pub fn n_params(&self) -> usize {
        3 * self.dim() + 3
    }

    /// Packs as `[log l (d), log σ_f, log σ_obs, m_0, θ_max (d), log r (d)]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(&self.log_input_scales);
        v.push(self.log_output_scale);
        v.push(self.log_base_noise);
        v.push(self.mean_max);
        v.extend_from_slice(&self.mean_loc);
        v.extend_from_slice(&self.log_mean_scales);
        v
    }

    pub fn from_vec(d: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), 3 * d + 3, "packed hyperparameter length");
        GpHyperparams {
            log_input_scales: v[..d].to_vec(),
            log_output_scale: v[d],
            log_base_noise: v[d + 1],
            mean_max: v[d + 2],
            mean_loc: v[d + 3..2 * d + 3].to_vec(),
            log_mean_scales: v[2 * d + 3..].to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    pub fn base_noise_var(&self) -> f64 {
        (2.0 * self.log_base_noise).exp()
    }

    #[inline]
    pub fn mean_at(&self, a: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((x, c), lr) in a.iter().zip(&self.mean_loc).zip(&self.log_mean_scales) {
            let diff = x - c;
            q += diff * diff * (-2.0 * lr).exp();
        }
        self.mean_max - 0.5 * q
    }

    /// Starting point derived from the data.
    pub fn initial(ts: &TrainingSet, prior: &HyperPrior, plb: &[f64], pub_: &[f64]) -> Self {
        let d = ts.dim();
        let widths: Vec<f64> = plb.iter().zip(pub_).map(|(l, u)| u - l).collect();
        let n = ts.len().max(1) as f64;
        let mean_h = ts.targets_raw.iter().sum::<f64>() / n;
        let var_h = ts.targets_raw.iter().map(|h| (h - mean_h).powi(2)).sum::<f64>() / n;
        let log_l: Vec<f64> = widths.iter().map(|w| ((d as f64 / 6.0).sqrt() * w).ln()).collect();
        let log_lambda = 0.5 * d as f64 * (2.0 * PI).ln() + log_l.iter().sum::<f64>();
        let best = ts.argmax();
        let mut h = GpHyperparams {
            log_output_scale: 0.5 * (var_h.max(1e-2).ln() - log_lambda),
            log_input_scales: log_l,
            log_base_noise: 1e-5f64.sqrt().ln(),
            mean_max: best.map(|i| ts.targets_raw[i]).unwrap_or(0.0),
            mean_loc: best
                .map(|i| ts.inputs[i].clone())
                .unwrap_or_else(|| plb.iter().zip(pub_).map(|(l, u)| 0.5 * (l + u)).collect()),
            log_mean_scales: widths.iter().map(|w| w.ln()).collect(),
        };
        let mut v = h.to_vec();
        prior.clamp(&mut v);
        h = GpHyperparams::from_vec(d, &v);
        h
    }

    /// Rescales output-related hyperparameters after the targets were multiplied by `ratio`.
    pub fn rescaled_outputs(&self, ratio: f64) -> Self {
        let mut h = self.clone();
        h.log_output_scale += ratio.ln();
        h.mean_max *= ratio;
        for r in &mut h.log_mean_scales {
            *r -= 0.5 * ratio.ln();
        }
        h
    }
}

/// Caches the per-dimension squared distances of a training set and the
/// latest Gram factorization so that updates of mean-function parameters
/// only cost a triangular solve.
pub struct HyperObjective<'a> {
    ts: &'a TrainingSet,
    prior: &'a HyperPrior,
    sqdist: Vec<DMatrix<f64>>,
    cache: Option<(Vec<f64>, Option<CholFactor>)>,
}

impl<'a> HyperObjective<'a> {
    pub fn new(ts: &'a TrainingSet, prior: &'a HyperPrior) -> Self {
        let n = ts.len();
        let sqdist = (0..ts.dim())
            .map(|i| DMatrix::from_fn(n, n, |a, b| (ts.inputs[a][i] - ts.inputs[b][i]).powi(2)))
            .collect();
        HyperObjective { ts, prior, sqdist, cache: None }
    }

    pub fn dim(&self) -> usize {
        3 * self.ts.dim() + 3
    }

    fn kernel_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.ts.dim();
        let n = self.ts.len();
        let log_amp = 2.0 * x[d] + 0.5 * d as f64 * (2.0 * PI).ln() + x[..d].iter().sum::<f64>();
        let inv_l2: Vec<f64> = x[..d].iter().map(|v| (-2.0 * v).exp()).collect();
        let mut k = DMatrix::zeros(n, n);
        for b in 0..n {
            for a in b..n {
                let mut q = 0.0;
                for (i, w) in inv_l2.iter().enumerate() {
                    q += self.sqdist[i][(a, b)] * w;
                }
                let v = (log_amp - 0.5 * q).exp();
                k[(a, b)] = v;
                k[(b, a)] = v;
            }
        }
        k
    }

    fn noisy(&self, mut k: DMatrix<f64>, x: &[f64]) -> DMatrix<f64> {
        let d = self.ts.dim();
        let base = (2.0 * x[d + 1]).exp();
        for (a, s) in self.ts.obs_noise.iter().enumerate() {
            k[(a, a)] += s * s + base;
        }
        k
    }

    fn residual(&self, x: &[f64]) -> DVector<f64> {
        let h = GpHyperparams::from_vec(self.ts.dim(), x);
        DVector::from_iterator(
            self.ts.len(),
            self.ts.inputs.iter().zip(&self.ts.targets_raw).map(|(p, t)| t - h.mean_at(p)),
        )
    }

    fn factor(&mut self, x: &[f64]) -> Option<CholFactor> {
        let d = self.ts.dim();
        let key = x[..d + 2].to_vec();
        if let Some((k, f)) = &self.cache {
            if *k == key {
                return f.clone();
            }
        }
        let f = CholFactor::with_jitter(self.noisy(self.kernel_matrix(x), x)).ok();
        self.cache = Some((key, f.clone()));
        f
    }

    /// Log marginal likelihood plus log prior at the packed vector `x`.
    pub fn value(&mut self, x: &[f64]) -> f64 {
        let lp = self.prior.log_density(x);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let n = self.ts.len();
        if n == 0 {
            return lp;
        }
        let Some(ch) = self.factor(x) else {
            return f64::NEG_INFINITY;
        };
        let v = ch.solve_lower(&self.residual(x));
        let lml = -0.5 * v.norm_squared() - 0.5 * ch.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();
        if lml.is_finite() {
            lml + lp
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Value and gradient with respect to the packed vector.
    pub fn value_grad(&mut self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.ts.dim();
        let (lp, mut grad) = self.prior.log_density_grad(x);
        if !lp.is_finite() {
            return (f64::NEG_INFINITY, vec![0.0; x.len()]);
        }
        let n = self.ts.len();
        if n == 0 {
            return (lp, grad);
        }
        let kmat = self.kernel_matrix(x);
        let Some(ch) = self.factor(x) else {
            return (f64::NEG_INFINITY, vec![0.0; x.len()]);
        };
        let r = self.residual(x);
        let alpha = ch.solve(&r);
        let lml =
            -0.5 * r.dot(&alpha) - 0.5 * ch.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();
        let kinv = ch.inverse();
        // W = α αᵀ - K⁻¹, dLML/dθ = ½ Σ W ∘ ∂K
        let w = &alpha * alpha.transpose() - kinv;
        let inv_l2: Vec<f64> = x[..d].iter().map(|v| (-2.0 * v).exp()).collect();
        let mut g_len = vec![0.0; d];
        let mut g_sf = 0.0;
        for b in 0..n {
            for a in 0..n {
                let wk = w[(a, b)] * kmat[(a, b)];
                g_sf += wk;
                for i in 0..d {
                    g_len[i] += wk * (1.0 + self.sqdist[i][(a, b)] * inv_l2[i]);
                }
            }
        }
        for i in 0..d {
            grad[i] += 0.5 * g_len[i];
        }
        grad[d] += g_sf; // ½ · 2k
        let base = (2.0 * x[d + 1]).exp();
        grad[d + 1] += (0..n).map(|a| w[(a, a)]).sum::<f64>() * base;
        // mean parameters: dLML = αᵀ ∂m
        let h = GpHyperparams::from_vec(d, x);
        for (a, p) in self.ts.inputs.iter().enumerate() {
            grad[d + 2] += alpha[a];
            for i in 0..d {
                let diff = p[i] - h.mean_loc[i];
                let ir2 = (-2.0 * h.log_mean_scales[i]).exp();
                grad[d + 3 + i] += alpha[a] * diff * ir2;
                grad[2 * d + 3 + i] += alpha[a] * diff * diff * ir2;
            }
        }
        let total = lml + lp;
        if total.is_finite() {
            (total, grad)
        } else {
            (f64::NEG_INFINITY, vec![0.0; x.len()])
        }
    }
}

/// Log marginal likelihood of the training targets plus the log hyperprior.
/// Returns `-inf` outside the prior support or when the Gram matrix cannot be
/// factorized.
pub fn hyper_log_posterior(hyper: &GpHyperparams, ts: &TrainingSet, prior: &HyperPrior) -> f64 {
    HyperObjective::new(ts, prior).value(&hyper.to_vec())
}

pub fn hyper_log_posterior_grad(
    hyper: &GpHyperparams,
    ts: &TrainingSet,
    prior: &HyperPrior,
) -> (f64, Vec<f64>) {
    HyperObjective::new(ts, prior).value_grad(&hyper.to_vec())
}
