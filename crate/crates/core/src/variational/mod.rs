//! Gaussian-mixture variational posterior.
//!
//! `q(z) = Σ_k w_k N(z; μ_k, γ_k² diag(λ²))` in parameter space, optionally
//! pushed through an affine whitening map `u = A z + b` and then a logit
//! transform `θ = T⁻¹(u)` of a bounded box. Densities and samples are reported
//! in the original coordinates `θ`.

mod entropy;
mod optimize;
mod transform;
mod whiten;

pub use entropy::{entropy_estimate, entropy_with_noise, EntropyNoise};
pub use optimize::{optimize_phi, optimize_phi_in, OptimizeOptions, ParamBox};
pub use transform::BoundedTransform;
pub use whiten::{whiten, AffineMap};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Weight given to a freshly inserted component.
pub const NEW_COMPONENT_WEIGHT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePosterior {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
    pub length_scales: Vec<f64>,
    /// Map from parameter space to the unbounded coordinates `u`.
    pub whitening: Option<AffineMap>,
    /// Logit transform of bounded parameters; `None` means `θ = u`.
    #[serde(default)]
    pub bounds: Option<BoundedTransform>,
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl MixturePosterior {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        scales: Vec<f64>,
        length_scales: Vec<f64>,
    ) -> Result<Self> {
        let q = MixturePosterior { weights, means, scales, length_scales, whitening: None, bounds: None };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.scales.len() != k {
            return Err(Error::invalid("mixture parameter lengths disagree"));
        }
        let d = self.length_scales.len();
        if d == 0 {
            return Err(Error::invalid("mixture dimension must be >= 1"));
        }
        for m in &self.means {
            check_dim(d, m.len())?;
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("mixture mean"));
            }
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        if self.scales.iter().chain(&self.length_scales).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("mixture scales must be positive and finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Length of the unconstrained parameter vector, `d + (d + 2) K`.
    pub fn n_params(&self) -> usize {
        self.dim() + (self.dim() + 2) * self.n_components()
    }

    /// Same parameters without the whitening map and bounded transform.
    pub fn inner(&self) -> MixturePosterior {
        MixturePosterior { whitening: None, bounds: None, ..self.clone() }
    }

    pub fn component_log_pdf(&self, k: usize, z: &[f64]) -> f64 {
        let g = self.scales[k];
        let mut acc = 0.0;
        for ((x, m), l) in z.iter().zip(&self.means[k]).zip(&self.length_scales) {
            let s = g * l;
            let u = (x - m) / s;
            acc += -0.5 * LN_2PI - s.ln() - 0.5 * u * u;
        }
        acc
    }

    /// Log density in parameter space, ignoring any whitening map.
    pub fn inner_log_pdf(&self, z: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.n_components())
            .map(|k| self.weights[k].ln() + self.component_log_pdf(k, z))
            .collect();
        log_sum_exp(&terms)
    }

    /// Log density at `a` in the original coordinates.
    pub fn log_pdf(&self, a: &[f64]) -> f64 {
        let (u, log_jac) = match &self.bounds {
            None => (a.to_vec(), 0.0),
            Some(t) => {
                let u = t.forward(a);
                if u.iter().any(|v| !v.is_finite()) {
                    return f64::NEG_INFINITY;
                }
                let j = t.log_abs_det_jacobian(&u);
                (u, j)
            }
        };
        let inner = match &self.whitening {
            None => self.inner_log_pdf(&u),
            Some(map) => self.inner_log_pdf(&map.inverse_apply(&u)) - map.log_abs_det(),
        };
        inner - log_jac
    }

    /// Maps a parameter-space point to the original coordinates.
    pub fn to_original(&self, z: &[f64]) -> Vec<f64> {
        let u = match &self.whitening {
            None => z.to_vec(),
            Some(map) => map.apply(z),
        };
        match &self.bounds {
            None => u,
            Some(t) => t.inverse(&u),
        }
    }

    /// Draws `n` points in parameter space with their component indices.
    pub fn sample_inner(&self, n: usize, rng: &mut Rng) -> Vec<(Vec<f64>, usize)> {
        let cum: Vec<f64> = self
            .weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        let total = *cum.last().unwrap();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * total;
                let k = cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1);
                let g = self.scales[k];
                let x = self.means[k]
                    .iter()
                    .zip(&self.length_scales)
                    .map(|(m, l)| {
                        let e: f64 = rng.sample(StandardNormal);
                        m + g * l * e
                    })
                    .collect();
                (x, k)
            })
            .collect()
    }

    /// Draws `n` points in the original coordinates.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<(Vec<f64>, usize)> {
        let draws = self.sample_inner(n, rng);
        if self.whitening.is_none() && self.bounds.is_none() {
            return draws;
        }
        draws.into_iter().map(|(z, k)| (self.to_original(&z), k)).collect()
    }

    /// Mean and covariance in parameter space.
    pub fn moments_inner(&self) -> (Vec<f64>, nalgebra::DMatrix<f64>) {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for i in 0..d {
                mean[i] += w * m[i];
            }
        }
        let mut cov = nalgebra::DMatrix::zeros(d, d);
        for k in 0..self.n_components() {
            let w = self.weights[k];
            for i in 0..d {
                let di = self.means[k][i] - mean[i];
                for j in 0..d {
                    cov[(i, j)] += w * di * (self.means[k][j] - mean[j]);
                }
                cov[(i, i)] += w * (self.scales[k] * self.length_scales[i]).powi(2);
            }
        }
        (mean, cov)
    }

    /// `[logits (K), μ (K·d), log γ (K), log λ (d)]`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.n_params());
        u.extend(self.weights.iter().map(|w| w.max(1e-300).ln()));
        for m in &self.means {
            u.extend_from_slice(m);
        }
        u.extend(self.scales.iter().map(|g| g.ln()));
        u.extend(self.length_scales.iter().map(|l| l.ln()));
        u
    }

    /// Rebuilds a mixture with the same shape and whitening map from `u`.
    pub fn from_unconstrained(&self, u: &[f64]) -> MixturePosterior {
        let k = self.n_components();
        let d = self.dim();
        assert_eq!(u.len(), self.n_params());
        let logits = &u[..k];
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|a| (a - mx).exp()).collect();
        let z: f64 = ex.iter().sum();
        MixturePosterior {
            weights: ex.iter().map(|e| e / z).collect(),
            means: (0..k).map(|c| u[k + c * d..k + (c + 1) * d].to_vec()).collect(),
            scales: u[k + k * d..2 * k + k * d].iter().map(|v| v.exp()).collect(),
            length_scales: u[2 * k + k * d..].iter().map(|v| v.exp()).collect(),
            whitening: self.whitening.clone(),
            bounds: self.bounds.clone(),
        }
    }

    /// Inserts a component at `location` (parameter space) with weight 0.05
    /// and the median component scale.
    pub fn add_component(&self, location: &[f64]) -> Result<MixturePosterior> {
        check_dim(self.dim(), location.len())?;
        let mut scales = self.scales.clone();
        scales.sort_by(f64::total_cmp);
        let n = scales.len();
        let median = if n % 2 == 1 { scales[n / 2] } else { 0.5 * (scales[n / 2 - 1] + scales[n / 2]) };
        let mut q = self.clone();
        for w in &mut q.weights {
            *w *= 1.0 - NEW_COMPONENT_WEIGHT;
        }
        q.weights.push(NEW_COMPONENT_WEIGHT);
        q.means.push(location.to_vec());
        q.scales.push(median);
        Ok(q)
    }

    pub fn remove_component(&self, k: usize) -> Result<MixturePosterior> {
        if self.n_components() < 2 {
            return Err(Error::invalid("cannot remove the only mixture component"));
        }
        if k >= self.n_components() {
            return Err(Error::invalid(format!("component index {k} out of range")));
        }
        let mut q = self.clone();
        q.weights.remove(k);
        q.means.remove(k);
        q.scales.remove(k);
        let total: f64 = q.weights.iter().sum();
        if total > 0.0 {
            q.weights.iter_mut().for_each(|w| *w /= total);
        } else {
            let n = q.weights.len() as f64;
            q.weights.iter_mut().for_each(|w| *w = 1.0 / n);
        }
        Ok(q)
    }
}

/// Monte Carlo estimate of `½ [KL(qa‖qb) + KL(qb‖qa)]` with `n` draws from each.
pub fn kl_symmetrized(qa: &MixturePosterior, qb: &MixturePosterior, n: usize, rng: &mut Rng) -> f64 {
    let n = n.max(1);
    let kl = |p: &MixturePosterior, q: &MixturePosterior, rng: &mut Rng| {
        p.sample(n, rng)
            .iter()
            .map(|(x, _)| p.log_pdf(x) - q.log_pdf(x))
            .sum::<f64>()
            / n as f64
    };
    let ab = kl(qa, qb, rng);
    let ba = kl(qb, qa, rng);
    0.5 * (ab + ba)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    fn random_mixture(rng: &mut Rng, k: usize, d: usize) -> MixturePosterior {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.1).collect();
        let tot: f64 = raw.iter().sum();
        MixturePosterior::new(
            raw.iter().map(|w| w / tot).collect(),
            (0..k).map(|_| (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).collect(),
            (0..k).map(|_| 0.3 + rng.random::<f64>()).collect(),
            (0..d).map(|_| 0.5 + rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let q = MixturePosterior::new(vec![1.0], vec![vec![0.0]], vec![1.0], vec![1.0]).unwrap();
        assert!((q.log_pdf(&[0.0]) + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_component_inert() {
        let q1 = MixturePosterior::new(vec![1.0], vec![vec![0.3, 1.0]], vec![0.7], vec![1.0, 2.0]).unwrap();
        let q2 = MixturePosterior::new(
            vec![1.0, 0.0],
            vec![vec![0.3, 1.0], vec![0.3, 1.0]],
            vec![0.7, 0.7],
            vec![1.0, 2.0],
        )
        .unwrap();
        for x in [[0.0, 0.0], [1.0, -3.0], [0.3, 1.0]] {
            assert!((q1.log_pdf(&x) - q2.log_pdf(&x)).abs() < 1e-14);
        }
    }

    #[test]
    fn log_pdf_matches_naive_sum() {
        let mut rng = rng_from_seed(5);
        let q = random_mixture(&mut rng, 3, 2);
        for _ in 0..20 {
            let x = [rng.random::<f64>() * 6.0 - 3.0, rng.random::<f64>() * 6.0 - 3.0];
            let mut p = 0.0;
            for k in 0..3 {
                let mut dens = q.weights[k];
                for i in 0..2 {
                    let s = q.scales[k] * q.length_scales[i];
                    dens *= (-0.5 * ((x[i] - q.means[k][i]) / s).powi(2)).exp()
                        / (s * (2.0 * std::f64::consts::PI).sqrt());
                }
                p += dens;
            }
            assert!((q.log_pdf(&x) - p.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn far_point_is_finite() {
        let q = MixturePosterior::new(vec![1.0], vec![vec![0.0]], vec![1.0], vec![1.0]).unwrap();
        assert!(q.log_pdf(&[1e5]).is_finite());
    }

    #[test]
    fn sampling_collapsed_and_frequencies() {
        let q = MixturePosterior::new(vec![1.0], vec![vec![1.0, -2.0]], vec![1e-12], vec![1.0, 1.0]).unwrap();
        for (x, _) in q.sample(1000, &mut rng_from_seed(1)) {
            assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] + 2.0).abs() < 1e-9);
        }
        let q = MixturePosterior::new(vec![0.3, 0.7], vec![vec![0.0], vec![5.0]], vec![1.0, 1.0], vec![1.0])
            .unwrap();
        let n = 1_000_000;
        let draws = q.sample(n, &mut rng_from_seed(2));
        let f0 = draws.iter().filter(|(_, k)| *k == 0).count() as f64 / n as f64;
        assert!((f0 - 0.3).abs() < 0.005);
        assert_eq!(q.sample(50, &mut rng_from_seed(9)), q.sample(50, &mut rng_from_seed(9)));
    }

    #[test]
    fn density_normalizes() {
        // importance-sampling check with a wide Gaussian proposal
        let mut rng = rng_from_seed(8);
        let q = random_mixture(&mut rng, 3, 2);
        let prop = MixturePosterior::new(vec![1.0], vec![vec![0.0, 0.0]], vec![1.0], vec![3.0, 3.0]).unwrap();
        let n = 1_000_000;
        let ws: Vec<f64> = prop
            .sample(n, &mut rng)
            .iter()
            .map(|(x, _)| (q.log_pdf(x) - prop.log_pdf(x)).exp())
            .collect();
        let mean = ws.iter().sum::<f64>() / n as f64;
        let var = ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mass {mean} se {se}");
    }

    #[test]
    fn parameter_count_and_roundtrip() {
        let mut rng = rng_from_seed(4);
        let q = random_mixture(&mut rng, 2, 2);
        assert_eq!(q.n_params(), 10);
        assert_eq!(q.to_unconstrained().len(), 10);
        let back = q.from_unconstrained(&q.to_unconstrained());
        for (a, b) in q.weights.iter().zip(&back.weights) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((q.scales[1] - back.scales[1]).abs() < 1e-14);
    }

    #[test]
    fn add_remove_components() {
        let mut rng = rng_from_seed(6);
        let q = random_mixture(&mut rng, 3, 2);
        let added = q.add_component(&[10.0, 10.0]).unwrap();
        assert_eq!(added.n_components(), 4);
        assert!((added.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // mass near the old modes scales by 0.95
        let x = q.means[0].clone();
        let far = added.component_log_pdf(3, &x) + (0.05f64).ln();
        assert!(far < -40.0);
        assert!((added.log_pdf(&x) - (q.log_pdf(&x) + 0.95f64.ln())).abs() < 1e-12);
        let back = added.remove_component(3).unwrap();
        for _ in 0..10 {
            let p = [rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0];
            assert!((back.log_pdf(&p) - q.log_pdf(&p)).abs() < 1e-12);
        }
        let single = MixturePosterior::new(vec![1.0], vec![vec![0.0]], vec![1.0], vec![1.0]).unwrap();
        assert!(single.remove_component(0).is_err());

        let q0 = MixturePosterior::new(
            vec![1.0, 0.0],
            vec![vec![0.0], vec![3.0]],
            vec![1.0, 1.0],
            vec![1.0],
        )
        .unwrap();
        let r = q0.remove_component(1).unwrap();
        assert!((r.log_pdf(&[0.7]) - q0.log_pdf(&[0.7])).abs() < 1e-14);
    }

    #[test]
    fn kl_examples() {
        let mut rng = rng_from_seed(7);
        let q = random_mixture(&mut rng, 3, 2);
        assert_eq!(kl_symmetrized(&q, &q, 1000, &mut rng), 0.0);
        let a = MixturePosterior::new(vec![1.0], vec![vec![0.0]], vec![1.0], vec![1.0]).unwrap();
        let b = MixturePosterior::new(vec![1.0], vec![vec![1.0]], vec![1.0], vec![1.0]).unwrap();
        let kl = kl_symmetrized(&a, &b, 100_000, &mut rng);
        assert!((kl - 0.5).abs() < 0.01, "{kl}");
        // relabeled components describe the same density
        let mut p = q.clone();
        p.weights.swap(0, 2);
        p.means.swap(0, 2);
        p.scales.swap(0, 2);
        assert!(kl_symmetrized(&q, &p, 1000, &mut rng).abs() < 1e-12);
    }
}
