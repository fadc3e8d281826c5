use nalgebra::{DMatrix, DVector};

use super::{GpHyperparams, KernelParams, TrainingSet};
use crate::error::{check_dim, Result};
use crate::linalg::CholFactor;

/// GP conditioned on a training set for fixed hyperparameters.
///
/// Immutable once built; [`GpPosterior::with_fantasy`] returns a new
/// posterior with one extra noise-free-style observation appended.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    pub training_set: TrainingSet,
    pub hyper: GpHyperparams,
    kp: KernelParams,
    chol: CholFactor,
    /// `[k(Θ,Θ) + Σ_obs]⁻¹ (h - m(Θ))`
    alpha: DVector<f64>,
}

fn noise_var(ts: &TrainingSet, hyper: &GpHyperparams, i: usize) -> f64 {
    ts.obs_noise[i].powi(2) + hyper.base_noise_var()
}

pub fn gp_fit(ts: &TrainingSet, hyper: &GpHyperparams) -> Result<GpPosterior> {
    GpPosterior::fit(ts, hyper)
}

pub fn gp_predict(gp: &GpPosterior, a: &[f64]) -> Result<(f64, f64)> {
    check_dim(gp.dim(), a.len())?;
    Ok(gp.predict(a))
}

impl GpPosterior {
    pub fn fit(ts: &TrainingSet, hyper: &GpHyperparams) -> Result<Self> {
        check_dim(ts.dim(), hyper.dim())?;
        if !hyper.is_finite() {
            return Err(crate::Error::NonFinite("GP hyperparameters"));
        }
        let kp = KernelParams::new(hyper);
        let n = ts.len();
        let mut k = DMatrix::zeros(n, n);
        for b in 0..n {
            for a in b..n {
                let v = kp.eval(&ts.inputs[a], &ts.inputs[b]);
                k[(a, b)] = v;
                k[(b, a)] = v;
            }
            k[(b, b)] += noise_var(ts, hyper, b);
        }
        let chol = CholFactor::with_jitter(k)?;
        let resid = DVector::from_iterator(
            n,
            ts.inputs.iter().zip(&ts.targets_raw).map(|(p, h)| h - hyper.mean_at(p)),
        );
        let alpha = chol.solve(&resid);
        Ok(GpPosterior { training_set: ts.clone(), hyper: hyper.clone(), kp, chol, alpha })
    }

    pub fn dim(&self) -> usize {
        self.training_set.dim()
    }

    pub fn len(&self) -> usize {
        self.training_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.training_set.is_empty()
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kp
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn chol(&self) -> &CholFactor {
        &self.chol
    }

    pub fn cross_kernel(&self, a: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.training_set.inputs.iter().map(|p| self.kp.eval(a, p)))
    }

    /// Posterior mean only (cheaper than [`GpPosterior::predict`]).
    pub fn predict_mean(&self, a: &[f64]) -> f64 {
        let mut m = self.hyper.mean_at(a);
        for (p, w) in self.training_set.inputs.iter().zip(self.alpha.iter()) {
            m += self.kp.eval(a, p) * w;
        }
        m
    }

    /// Posterior mean and variance at `a`. The variance is clamped to
    /// `[0, k(a, a)]`. Dimensions are not checked.
    pub fn predict(&self, a: &[f64]) -> (f64, f64) {
        let prior_var = self.kp.amp();
        if self.is_empty() {
            return (self.hyper.mean_at(a), prior_var);
        }
        let ks = self.cross_kernel(a);
        let mean = self.hyper.mean_at(a) + ks.dot(&self.alpha);
        let v = self.chol.solve_lower(&ks);
        let var = (prior_var - v.norm_squared()).clamp(0.0, prior_var);
        (mean, var)
    }

    /// Posterior covariance `C(a, b)`.
    pub fn covariance(&self, a: &[f64], b: &[f64]) -> f64 {
        let kab = self.kp.eval(a, b);
        if self.is_empty() {
            return kab;
        }
        let va = self.chol.solve_lower(&self.cross_kernel(a));
        let vb = self.chol.solve_lower(&self.cross_kernel(b));
        kab - va.dot(&vb)
    }

    /// Appends `a` with its current posterior mean as the observed value.
    ///
    /// The mean function is unchanged; the variance shrinks around `a`. Used
    /// to spread batch acquisitions.
    pub fn with_fantasy(&self, a: &[f64]) -> Result<GpPosterior> {
        check_dim(self.dim(), a.len())?;
        let (mean, _) = self.predict(a);
        let noise = self.training_set.obs_noise.first().copied().unwrap_or(1e-6);
        let mut ts = self.training_set.clone();
        ts.inputs.push(a.to_vec());
        ts.targets_raw.push(mean);
        ts.obs_noise.push(noise);
        let cross = self.cross_kernel(a);
        let diag = self.kp.amp() + noise * noise + self.hyper.base_noise_var();
        let chol = self.chol.extend(&cross, diag)?;
        let resid = DVector::from_iterator(
            ts.len(),
            ts.inputs.iter().zip(&ts.targets_raw).map(|(p, h)| h - self.hyper.mean_at(p)),
        );
        let alpha = chol.solve(&resid);
        Ok(GpPosterior { training_set: ts, hyper: self.hyper.clone(), kp: self.kp.clone(), chol, alpha })
    }
}
