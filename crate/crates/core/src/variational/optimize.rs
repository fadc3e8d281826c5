use serde::{Deserialize, Serialize};

use super::{EntropyNoise, MixturePosterior};
use crate::error::{Error, Result};
use crate::gp::GpPosterior;
use crate::quadrature::{elbo_with_noise, elcbo, expected_log_joint_grad};
use crate::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeOptions {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub n_steps: usize,
    /// Entropy samples per gradient step.
    pub n_entropy: usize,
    /// Entropy samples for the checkpoint and final evaluation.
    pub n_entropy_final: usize,
    pub beta_lcb: f64,
    /// Steps between ELCBO checkpoints.
    pub checkpoint_every: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            n_steps: 400,
            n_entropy: 100,
            n_entropy_final: 1600,
            beta_lcb: 3.0,
            checkpoint_every: 25,
        }
    }
}

/// Keeps log-scales inside a range where the quadrature stays well conditioned.
const LOG_SCALE_RANGE: (f64, f64) = (-25.0, 10.0);

/// Moves the common factor of the length-scales into the component scales so
/// that `Σ ln λ_i = 0`. Only the products `γ_k λ_i` enter the density, which
/// is left unchanged.
fn normalize_length_scales(u: &mut [f64], k_n: usize, d: usize) {
    let lam_start = k_n + k_n * d + k_n;
    let c = u[lam_start..].iter().sum::<f64>() / d as f64;
    for x in &mut u[lam_start..] {
        *x -= c;
    }
    for x in &mut u[k_n + k_n * d..lam_start] {
        *x += c;
    }
}

fn elbo_grad(gps: &[GpPosterior], q: &MixturePosterior, noise: &EntropyNoise) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; q.n_params()];
    let mut val = 0.0;
    let scale = 1.0 / gps.len() as f64;
    for gp in gps {
        let (m, g) = expected_log_joint_grad(gp, q)?;
        val += scale * m;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += scale * b;
        }
    }
    let (h, hg) = super::entropy_with_noise(q, noise);
    for (a, b) in grad.iter_mut().zip(&hg) {
        *a += b;
    }
    Ok((val + h, grad))
}

/// Box that component means are projected into during optimization; each
/// component's standard deviation is also capped at the box width.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBox {
    fn project(&self, u: &mut [f64], k_n: usize, d: usize) {
        for k in 0..k_n {
            for i in 0..d {
                let x = &mut u[k_n + k * d + i];
                *x = x.clamp(self.lo[i], self.hi[i]);
            }
        }
        let lam = &u[k_n + k_n * d + k_n..].to_vec();
        for k in 0..k_n {
            let g = &mut u[k_n + k_n * d + k];
            let excess = (0..d)
                .map(|i| *g + lam[i] - (self.hi[i] - self.lo[i]).ln())
                .fold(f64::NEG_INFINITY, f64::max);
            if excess > 0.0 {
                *g -= excess;
            }
        }
    }
}

/// Maximizes the ELBO over the mixture parameters with Adam.
///
/// Every gradient step uses fresh entropy noise. The returned mixture is the
/// best checkpoint by ELCBO under a single fixed noise realization; the
/// starting point `q0` is one of the candidates, so the result never scores
/// below it on that realization.
pub fn optimize_phi(
    gps: &[GpPosterior],
    q0: &MixturePosterior,
    opts: &OptimizeOptions,
    rng: &mut Rng,
) -> Result<MixturePosterior> {
    optimize_phi_in(gps, q0, opts, None, rng)
}

/// [`optimize_phi`] with projected steps keeping the mixture inside `bounds`.
pub fn optimize_phi_in(
    gps: &[GpPosterior],
    q0: &MixturePosterior,
    opts: &OptimizeOptions,
    bounds: Option<&ParamBox>,
    rng: &mut Rng,
) -> Result<MixturePosterior> {
    if gps.is_empty() {
        return Err(Error::invalid("empty GP list"));
    }
    q0.validate()?;
    let k_n = q0.n_components();
    let d = q0.dim();
    let eval_noise = EntropyNoise::draw(k_n, d, opts.n_entropy_final, rng);
    let score = |q: &MixturePosterior| -> Result<f64> {
        let s = elbo_with_noise(gps, q, &eval_noise)?;
        Ok(elcbo(&s, opts.beta_lcb))
    };

    let mut best = q0.clone();
    let mut best_score = score(q0)?;
    if !best_score.is_finite() {
        best_score = f64::NEG_INFINITY;
    }

    let mut u = q0.to_unconstrained();
    normalize_length_scales(&mut u, k_n, d);
    let n = u.len();
    let scale_start = k_n + k_n * d;
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut lr = opts.lr;
    let mut halvings = 0;
    let mut t = 0usize;
    let mut step = 0usize;
    while step < opts.n_steps {
        let q = q0.from_unconstrained(&u);
        let noise = EntropyNoise::draw(k_n, d, opts.n_entropy, rng);
        let (val, g) = elbo_grad(gps, &q, &noise)?;
        if !val.is_finite() || g.iter().any(|x| !x.is_finite()) {
            halvings += 1;
            if halvings > 10 {
                return Err(Error::OptimizationFailed("non-finite ELBO gradient".into()));
            }
            lr *= 0.5;
            u = best.to_unconstrained();
            m.iter_mut().for_each(|x| *x = 0.0);
            v.iter_mut().for_each(|x| *x = 0.0);
            t = 0;
            continue;
        }
        t += 1;
        let b1t = 1.0 - opts.beta1.powi(t as i32);
        let b2t = 1.0 - opts.beta2.powi(t as i32);
        for i in 0..n {
            m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * g[i];
            v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * g[i] * g[i];
            u[i] += lr * (m[i] / b1t) / ((v[i] / b2t).sqrt() + opts.eps);
        }
        normalize_length_scales(&mut u, k_n, d);
        for x in &mut u[scale_start..] {
            *x = x.clamp(LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1);
        }
        if let Some(b) = bounds {
            b.project(&mut u, k_n, d);
        }
        step += 1;
        if step % opts.checkpoint_every.max(1) == 0 || step == opts.n_steps {
            let cand = q0.from_unconstrained(&u);
            let s = score(&cand)?;
            if s.is_finite() && s > best_score {
                best_score = s;
                best = cand;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{gp_fit, GpHyperparams, TrainingSet};
    use crate::rng_from_seed;

    /// GP whose posterior mean is essentially the quadratic mean function, i.e.
    /// a Gaussian log-density with mean 1 and standard deviation 0.5.
    fn gaussian_gp() -> GpPosterior {
        let h = GpHyperparams {
            log_input_scales: vec![0.0],
            log_output_scale: -12.0,
            log_base_noise: (1e-3f64).ln(),
            mean_max: 0.0,
            mean_loc: vec![1.0],
            log_mean_scales: vec![(0.5f64).ln()],
        };
        let mut ts = TrainingSet::new(1);
        ts.push(vec![1.0], 0.0, 1e-3).unwrap();
        gp_fit(&ts, &h).unwrap()
    }

    #[test]
    fn recovers_gaussian_target() {
        let gp = gaussian_gp();
        let q0 = MixturePosterior::new(vec![1.0], vec![vec![-0.5]], vec![1.0], vec![1.5]).unwrap();
        let opts = OptimizeOptions { n_steps: 1500, lr: 0.02, ..Default::default() };
        let q = optimize_phi(&[gp], &q0, &opts, &mut rng_from_seed(5)).unwrap();
        assert!((q.means[0][0] - 1.0).abs() < 0.05, "{:?}", q.means);
        let sd = q.scales[0] * q.length_scales[0];
        assert!((sd - 0.5).abs() < 0.05, "sd {sd}");
    }

    #[test]
    fn never_worse_than_start() {
        let gp = gaussian_gp();
        let q0 = MixturePosterior::new(vec![1.0], vec![vec![1.0]], vec![1.0], vec![0.5]).unwrap();
        let opts = OptimizeOptions { n_steps: 10, lr: 0.5, ..Default::default() };
        let q = optimize_phi(std::slice::from_ref(&gp), &q0, &opts, &mut rng_from_seed(1)).unwrap();
        let noise = EntropyNoise::draw(1, 1, 1600, &mut rng_from_seed(99));
        let a = elbo_with_noise(std::slice::from_ref(&gp), &q0, &noise).unwrap().elbo_mean;
        let b = elbo_with_noise(&[gp], &q, &noise).unwrap().elbo_mean;
        assert!(b > a - 0.05);
    }

    #[test]
    fn length_scale_normalization_keeps_density() {
        let q = MixturePosterior::new(
            vec![0.4, 0.6],
            vec![vec![0.0, 1.0], vec![-1.0, 0.5]],
            vec![0.02, 0.05],
            vec![300.0, 900.0],
        )
        .unwrap();
        let mut u = q.to_unconstrained();
        normalize_length_scales(&mut u, 2, 2);
        let r = q.from_unconstrained(&u);
        assert!((r.length_scales[0] * r.length_scales[1] - 1.0).abs() < 1e-12);
        for z in [[0.0, 0.0], [0.3, -2.0], [-1.0, 0.5]] {
            assert!((q.log_pdf(&z) - r.log_pdf(&z)).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_keeps_mixture_in_box() {
        let gp = gaussian_gp();
        let q0 = MixturePosterior::new(vec![1.0], vec![vec![0.0]], vec![1.0], vec![0.1]).unwrap();
        let b = ParamBox { lo: vec![-0.5], hi: vec![0.2] };
        let opts = OptimizeOptions { n_steps: 600, lr: 0.05, ..Default::default() };
        let q = optimize_phi_in(&[gp], &q0, &opts, Some(&b), &mut rng_from_seed(2)).unwrap();
        assert!(q.means[0][0] <= 0.2 + 1e-12 && q.means[0][0] > 0.1, "{:?}", q.means);
        assert!(q.scales[0] * q.length_scales[0] <= 0.7 + 1e-9);
    }
}
