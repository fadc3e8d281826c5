use rand::Rng as _;
use rand_distr::StandardNormal;

use super::MixturePosterior;
use crate::Rng;

/// Standard-normal draws reused across evaluations (common random numbers).
///
/// Samples are stratified by component: `eps[k][j]` produces the `j`-th
/// sample of component `k` as `μ_k + γ_k λ ⊙ eps[k][j]`.
#[derive(Debug, Clone)]
pub struct EntropyNoise {
    pub eps: Vec<Vec<Vec<f64>>>,
}

impl EntropyNoise {
    /// `n` total draws split evenly (rounded up) across `k` components.
    pub fn draw(k: usize, d: usize, n: usize, rng: &mut Rng) -> Self {
        let per = n.div_ceil(k).max(1);
        let eps = (0..k)
            .map(|_| (0..per).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect())
            .collect();
        EntropyNoise { eps }
    }
}

/// Monte Carlo entropy of `q` with `n` reparameterized samples and its
/// gradient with respect to the unconstrained parameters.
pub fn entropy_estimate(q: &MixturePosterior, n: usize, rng: &mut Rng) -> (f64, Vec<f64>) {
    let noise = EntropyNoise::draw(q.n_components(), q.dim(), n, rng);
    entropy_with_noise(q, &noise)
}

/// Entropy estimate `-Σ_k w_k mean_j log q(μ_k + γ_k λ ⊙ ε_kj)` and its exact
/// gradient for fixed noise. Parameters are read in parameter space; any
/// whitening map is ignored.
pub fn entropy_with_noise(q: &MixturePosterior, noise: &EntropyNoise) -> (f64, Vec<f64>) {
    let k_n = q.n_components();
    let d = q.dim();
    let off_mu = k_n;
    let off_g = k_n + k_n * d;
    let off_l = 2 * k_n + k_n * d;
    let mut grad = vec![0.0; q.n_params()];
    let mut avg_logq = vec![0.0; k_n];

    let log_w: Vec<f64> = q.weights.iter().map(|w| w.ln()).collect();
    let inv_var: Vec<Vec<f64>> = q
        .scales
        .iter()
        .map(|g| q.length_scales.iter().map(|l| 1.0 / (g * g * l * l)).collect())
        .collect();
    let log_norm: Vec<f64> = q
        .scales
        .iter()
        .map(|g| {
            q.length_scales.iter().map(|l| -0.5 * super::LN_2PI - (g * l).ln()).sum::<f64>()
        })
        .collect();

    let mut x = vec![0.0; d];
    let mut lp = vec![0.0; k_n];
    let mut resp = vec![0.0; k_n];
    let mut gx = vec![0.0; d];
    for k in 0..k_n {
        let wk = q.weights[k];
        if wk == 0.0 {
            continue;
        }
        let samples = &noise.eps[k.min(noise.eps.len() - 1)];
        let m = samples.len() as f64;
        let scale = wk / m;
        for eps in samples {
            for i in 0..d {
                x[i] = q.means[k][i] + q.scales[k] * q.length_scales[i] * eps[i];
            }
            for l in 0..k_n {
                let mut quad = 0.0;
                for i in 0..d {
                    let diff = x[i] - q.means[l][i];
                    quad += diff * diff * inv_var[l][i];
                }
                lp[l] = log_w[l] + log_norm[l] - 0.5 * quad;
            }
            let logq = super::log_sum_exp(&lp);
            avg_logq[k] += logq / m;
            for l in 0..k_n {
                resp[l] = (lp[l] - logq).exp();
            }
            gx.iter_mut().for_each(|v| *v = 0.0);
            // parameter partials at fixed x; entropy carries a minus sign
            for l in 0..k_n {
                let r = resp[l];
                if r == 0.0 {
                    continue;
                }
                let mut quad = 0.0;
                for i in 0..d {
                    let diff = x[i] - q.means[l][i];
                    let u = diff * inv_var[l][i];
                    gx[i] -= r * u;
                    grad[off_mu + l * d + i] -= scale * r * u;
                    let sq = diff * u;
                    quad += sq;
                    grad[off_l + i] -= scale * r * (sq - 1.0);
                }
                grad[off_g + l] -= scale * r * (quad - d as f64);
                grad[l] -= scale * (r - q.weights[l]);
            }
            // pathwise terms through the sample location
            let mut dg = 0.0;
            for i in 0..d {
                let dx = x[i] - q.means[k][i];
                grad[off_mu + k * d + i] -= scale * gx[i];
                grad[off_l + i] -= scale * gx[i] * dx;
                dg += gx[i] * dx;
            }
            grad[off_g + k] -= scale * dg;
        }
    }
    let mean_logq: f64 = q.weights.iter().zip(&avg_logq).map(|(w, a)| w * a).sum();
    for c in 0..k_n {
        grad[c] -= q.weights[c] * (avg_logq[c] - mean_logq);
    }
    (-mean_logq, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn gaussian_entropy() {
        let sigma = 2.5;
        let q = MixturePosterior::new(vec![1.0], vec![vec![0.4]], vec![1.0], vec![sigma]).unwrap();
        let (h, _) = entropy_estimate(&q, 100_000, &mut rng_from_seed(1));
        let exact = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * sigma * sigma).ln();
        assert!((h - exact).abs() / exact.abs() < 0.01, "{h} vs {exact}");
    }

    #[test]
    fn scaling_shifts_entropy() {
        let q = MixturePosterior::new(vec![1.0], vec![vec![0.0, 1.0]], vec![0.8], vec![1.0, 0.5]).unwrap();
        let c: f64 = 3.0;
        let mut qc = q.clone();
        qc.length_scales.iter_mut().for_each(|l| *l *= c);
        let (h0, _) = entropy_estimate(&q, 100_000, &mut rng_from_seed(2));
        let (h1, _) = entropy_estimate(&qc, 100_000, &mut rng_from_seed(3));
        assert!((h1 - h0 - 2.0 * c.ln()).abs() < 0.02);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let q = MixturePosterior::new(
            vec![0.2, 0.5, 0.3],
            vec![vec![0.0, 1.0], vec![1.0, -0.5], vec![0.3, 0.2]],
            vec![0.7, 1.2, 0.5],
            vec![1.0, 0.6],
        )
        .unwrap();
        let noise = EntropyNoise::draw(3, 2, 300, &mut rng_from_seed(4));
        let u = q.to_unconstrained();
        let (_, g) = entropy_with_noise(&q, &noise);
        let h = 1e-5;
        for i in 0..u.len() {
            let mut up = u.clone();
            up[i] += h;
            let mut dn = u.clone();
            dn[i] -= h;
            let fd = (entropy_with_noise(&q.from_unconstrained(&up), &noise).0
                - entropy_with_noise(&q.from_unconstrained(&dn), &noise).0)
                / (2.0 * h);
            let tol = 1e-5 * g[i].abs().max(1.0);
            assert!((fd - g[i]).abs() < tol, "param {i}: fd {fd} analytic {}", g[i]);
        }
    }
}
