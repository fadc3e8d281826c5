//! Bayesian quadrature of the GP surrogate against the Gaussian-mixture
//! posterior.
//!
//! The SE kernel is a scaled Gaussian density in its first argument, so its
//! integral against a Gaussian component is another Gaussian evaluated at
//! the training input:
//!
//! `∫ k(θ, θ_n) N(θ; μ, S) dθ = σ_f² Λ ∏_i √(l_i² / (l_i² + S_i)) exp(-½ Σ_i (θ_ni - μ_i)² / (l_i² + S_i))`
//!
//! and the quadratic mean function has closed-form Gaussian moments.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::GpPosterior;
use crate::variational::{entropy_with_noise, EntropyNoise, MixturePosterior};
use crate::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboStats {
    /// `E_{f|Ξ}[E_φ[f]]`
    pub expected_log_joint: f64,
    /// `V_{f|Ξ}[E_φ[f]]` plus the spread across hyperparameter samples.
    pub var_log_joint: f64,
    pub entropy: f64,
    pub entropy_grad: Vec<f64>,
    pub elbo_mean: f64,
    pub elbo_var: f64,
}

impl ElboStats {
    pub fn elbo_sd(&self) -> f64 {
        self.elbo_var.max(0.0).sqrt()
    }
}

struct ComponentTerms {
    l2: Vec<f64>,
    amp: f64,
}

impl ComponentTerms {
    fn new(gp: &GpPosterior) -> Self {
        ComponentTerms {
            l2: gp.hyper.log_input_scales.iter().map(|v| (2.0 * v).exp()).collect(),
            amp: gp.kernel().amp(),
        }
    }
}

fn component_var(q: &MixturePosterior, k: usize) -> Vec<f64> {
    let g2 = q.scales[k] * q.scales[k];
    q.length_scales.iter().map(|l| g2 * l * l).collect()
}

/// Kernel integrals `z_n = Σ_k w_k ∫ k(θ, θ_n) N_k(θ) dθ` for all training inputs.
fn kernel_integrals(gp: &GpPosterior, q: &MixturePosterior, t: &ComponentTerms) -> DVector<f64> {
    let d = q.dim();
    let mut z = DVector::zeros(gp.len());
    for k in 0..q.n_components() {
        let w = q.weights[k];
        if w == 0.0 {
            continue;
        }
        let s = component_var(q, k);
        let dd: Vec<f64> = (0..d).map(|i| t.l2[i] + s[i]).collect();
        let pref = t.amp * (0..d).map(|i| (t.l2[i] / dd[i]).sqrt()).product::<f64>();
        for (n, p) in gp.training_set.inputs.iter().enumerate() {
            let mut e = 0.0;
            for i in 0..d {
                let delta = p[i] - q.means[k][i];
                e += delta * delta / dd[i];
            }
            z[n] += w * pref * (-0.5 * e).exp();
        }
    }
    z
}

/// Posterior mean of `E_q[f]` and optionally its gradient with respect to
/// the unconstrained mixture parameters.
fn mean_term(gp: &GpPosterior, q: &MixturePosterior, want_grad: bool) -> (f64, Vec<f64>) {
    let d = q.dim();
    let k_n = q.n_components();
    let t = ComponentTerms::new(gp);
    let h = &gp.hyper;
    let ir2: Vec<f64> = h.log_mean_scales.iter().map(|v| (-2.0 * v).exp()).collect();
    let alpha = gp.alpha();
    let mut comp_mean = vec![0.0; k_n];
    let mut grad = if want_grad { vec![0.0; q.n_params()] } else { Vec::new() };
    let off_mu = k_n;
    let off_g = k_n + k_n * d;
    let off_l = 2 * k_n + k_n * d;
    let mut d_mu = vec![0.0; d];
    let mut d_l = vec![0.0; d];
    for k in 0..k_n {
        let s = component_var(q, k);
        let dd: Vec<f64> = (0..d).map(|i| t.l2[i] + s[i]).collect();
        let pref = t.amp * (0..d).map(|i| (t.l2[i] / dd[i]).sqrt()).product::<f64>();
        let mu = &q.means[k];
        let mut mk = h.mean_max;
        let mut d_g = 0.0;
        for i in 0..d {
            let c = mu[i] - h.mean_loc[i];
            mk -= 0.5 * (c * c + s[i]) * ir2[i];
            d_mu[i] = -c * ir2[i];
            d_l[i] = -s[i] * ir2[i];
            d_g -= s[i] * ir2[i];
        }
        for (n, p) in gp.training_set.inputs.iter().enumerate() {
            let mut e = 0.0;
            for i in 0..d {
                let delta = p[i] - mu[i];
                e += delta * delta / dd[i];
            }
            let tz = alpha[n] * pref * (-0.5 * e).exp();
            mk += tz;
            if want_grad {
                for i in 0..d {
                    let delta = p[i] - mu[i];
                    d_mu[i] += tz * delta / dd[i];
                    let ds = tz * (-1.0 / dd[i] + delta * delta / (dd[i] * dd[i])) * s[i];
                    d_l[i] += ds;
                    d_g += ds;
                }
            }
        }
        comp_mean[k] = mk;
        if want_grad {
            let w = q.weights[k];
            for i in 0..d {
                grad[off_mu + k * d + i] = w * d_mu[i];
                grad[off_l + i] += w * d_l[i];
            }
            grad[off_g + k] = w * d_g;
        }
    }
    let mean: f64 = q.weights.iter().zip(&comp_mean).map(|(w, m)| w * m).sum();
    if want_grad {
        for k in 0..k_n {
            grad[k] = q.weights[k] * (comp_mean[k] - mean);
        }
    }
    (mean, grad)
}

fn variance_term(gp: &GpPosterior, q: &MixturePosterior) -> f64 {
    let d = q.dim();
    let t = ComponentTerms::new(gp);
    let k_n = q.n_components();
    let vars: Vec<Vec<f64>> = (0..k_n).map(|k| component_var(q, k)).collect();
    let mut kk = 0.0;
    for a in 0..k_n {
        for b in 0..k_n {
            let w = q.weights[a] * q.weights[b];
            if w == 0.0 {
                continue;
            }
            let mut log_term = 0.0;
            for i in 0..d {
                let dd = t.l2[i] + vars[a][i] + vars[b][i];
                let delta = q.means[a][i] - q.means[b][i];
                log_term += 0.5 * (t.l2[i] / dd).ln() - 0.5 * delta * delta / dd;
            }
            kk += w * t.amp * log_term.exp();
        }
    }
    if gp.is_empty() {
        return kk.max(0.0);
    }
    let z = kernel_integrals(gp, q, &t);
    let v = gp.chol().solve_lower(&z);
    (kk - v.norm_squared()).max(0.0)
}

/// Closed-form mean and variance of `∫ f(θ) q(θ) dθ` under the GP posterior.
///
/// The mixture is read in its parameter space; the GP must live in the same
/// coordinates.
pub fn expected_log_joint(gp: &GpPosterior, q: &MixturePosterior) -> Result<(f64, f64)> {
    check_dim(gp.dim(), q.dim())?;
    Ok((mean_term(gp, q, false).0, variance_term(gp, q)))
}

/// Mean of [`expected_log_joint`] and its gradient with respect to the
/// unconstrained mixture parameters.
pub fn expected_log_joint_grad(gp: &GpPosterior, q: &MixturePosterior) -> Result<(f64, Vec<f64>)> {
    check_dim(gp.dim(), q.dim())?;
    Ok(mean_term(gp, q, true))
}

/// Averages the expected log joint over hyperparameter samples. Returns the
/// mean, the variance (average within-sample variance plus between-sample
/// spread) and the standard deviation of the per-sample means.
pub fn averaged_log_joint(gps: &[GpPosterior], q: &MixturePosterior) -> Result<(f64, f64, f64)> {
    if gps.is_empty() {
        return Err(Error::invalid("empty GP list"));
    }
    let mut means = Vec::with_capacity(gps.len());
    let mut vars = Vec::with_capacity(gps.len());
    for gp in gps {
        let (m, v) = expected_log_joint(gp, q)?;
        means.push(m);
        vars.push(v);
    }
    let n = gps.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let spread = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    let var = vars.iter().sum::<f64>() / n + spread;
    Ok((mean, var, spread.sqrt()))
}

/// ELBO statistics with a fixed entropy noise realization.
pub fn elbo_with_noise(
    gps: &[GpPosterior],
    q: &MixturePosterior,
    noise: &EntropyNoise,
) -> Result<ElboStats> {
    let (mean, var, _) = averaged_log_joint(gps, q)?;
    let (entropy, entropy_grad) = entropy_with_noise(q, noise);
    Ok(ElboStats {
        expected_log_joint: mean,
        var_log_joint: var,
        entropy,
        entropy_grad,
        elbo_mean: mean + entropy,
        elbo_var: var,
    })
}

pub fn elbo(gps: &[GpPosterior], q: &MixturePosterior, n_entropy: usize, rng: &mut Rng) -> Result<ElboStats> {
    if gps.is_empty() {
        return Err(Error::invalid("empty GP list"));
    }
    if n_entropy == 0 {
        return Err(Error::invalid("n_entropy must be >= 1"));
    }
    let noise = EntropyNoise::draw(q.n_components(), q.dim(), n_entropy, rng);
    elbo_with_noise(gps, q, &noise)
}

/// Lower confidence bound `ELBO - β sqrt(V)`.
pub fn elcbo(stats: &ElboStats, beta_lcb: f64) -> f64 {
    stats.elbo_mean - beta_lcb * stats.var_log_joint.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{gp_fit, GpHyperparams, TrainingSet};
    use crate::rng_from_seed;

    fn hyper(d: usize) -> GpHyperparams {
        GpHyperparams {
            log_input_scales: vec![0.2; d],
            log_output_scale: -0.3,
            log_base_noise: (1e-3f64).ln(),
            mean_max: 1.5,
            mean_loc: vec![0.3; d],
            log_mean_scales: vec![0.4; d],
        }
    }

    #[test]
    fn empty_gp_single_component() {
        let h = hyper(2);
        let gp = gp_fit(&TrainingSet::new(2), &h).unwrap();
        let q = MixturePosterior::new(vec![1.0], vec![vec![1.0, -0.5]], vec![0.7], vec![1.2, 0.8]).unwrap();
        let (m, _) = expected_log_joint(&gp, &q).unwrap();
        let mut expected = h.mean_max;
        for i in 0..2 {
            let s = (0.7 * q.length_scales[i]).powi(2);
            let r2 = (2.0 * h.log_mean_scales[i]).exp();
            expected -= 0.5 * ((q.means[0][i] - h.mean_loc[i]).powi(2) + s) / r2;
        }
        assert!((m - expected).abs() < 1e-12);
        // Monte Carlo cross-check of the quadratic-mean moment
        let draws = q.sample(1_000_000, &mut rng_from_seed(3));
        let mc = draws.iter().map(|(x, _)| h.mean_at(x)).sum::<f64>() / draws.len() as f64;
        assert!((mc - expected).abs() < 5e-3 * expected.abs().max(1.0));
    }

    #[test]
    fn zero_output_scale_gives_zero_variance() {
        let mut h = hyper(1);
        h.log_output_scale = -800.0;
        let mut ts = TrainingSet::new(1);
        ts.push(vec![0.0], -1.0, 1e-3).unwrap();
        let gp = gp_fit(&ts, &h).unwrap();
        let q = MixturePosterior::new(vec![1.0], vec![vec![0.2]], vec![1.0], vec![1.0]).unwrap();
        assert_eq!(expected_log_joint(&gp, &q).unwrap().1, 0.0);
    }

    #[test]
    fn mean_gradient_matches_finite_differences() {
        let mut ts = TrainingSet::new(2);
        for (i, p) in [[0.0, 0.1], [1.0, -0.4], [-0.6, 0.9], [0.4, 0.4]].iter().enumerate() {
            ts.push(p.to_vec(), -(i as f64) * 0.7, 1e-3).unwrap();
        }
        let gp = gp_fit(&ts, &hyper(2)).unwrap();
        let q = MixturePosterior::new(
            vec![0.4, 0.6],
            vec![vec![0.1, 0.2], vec![-0.3, 0.5]],
            vec![0.8, 1.3],
            vec![0.6, 0.9],
        )
        .unwrap();
        let (_, g) = expected_log_joint_grad(&gp, &q).unwrap();
        let u = q.to_unconstrained();
        let eps = 1e-6;
        for i in 0..u.len() {
            let mut up = u.clone();
            up[i] += eps;
            let mut dn = u.clone();
            dn[i] -= eps;
            let fd = (expected_log_joint(&gp, &q.from_unconstrained(&up)).unwrap().0
                - expected_log_joint(&gp, &q.from_unconstrained(&dn)).unwrap().0)
                / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-6 * g[i].abs().max(1.0), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn elcbo_examples() {
        let s = ElboStats {
            expected_log_joint: -12.0,
            var_log_joint: 4.0,
            entropy: 2.0,
            entropy_grad: vec![],
            elbo_mean: -10.0,
            elbo_var: 4.0,
        };
        assert_eq!(elcbo(&s, 3.0), -16.0);
        assert_eq!(elcbo(&s, 0.0), -10.0);
        let z = ElboStats { var_log_joint: 0.0, elbo_var: 0.0, ..s };
        assert_eq!(elcbo(&z, 3.0), -10.0);
    }

    #[test]
    fn averaging_degenerate_cases() {
        let mut ts = TrainingSet::new(1);
        ts.push(vec![0.0], -1.0, 1e-3).unwrap();
        ts.push(vec![1.0], -2.0, 1e-3).unwrap();
        let gp = gp_fit(&ts, &hyper(1)).unwrap();
        let q = MixturePosterior::new(vec![1.0], vec![vec![0.2]], vec![1.0], vec![1.0]).unwrap();
        let one = elbo(std::slice::from_ref(&gp), &q, 100, &mut rng_from_seed(1)).unwrap();
        let two = elbo(&[gp.clone(), gp], &q, 100, &mut rng_from_seed(1)).unwrap();
        assert_eq!(one, two);
        assert!(elbo(&[], &q, 100, &mut rng_from_seed(1)).is_err());
    }
}
