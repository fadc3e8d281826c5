//! Gaussian-process surrogate of the (annealed) log unnormalized posterior.
//!
//! The kernel is a squared exponential scaled by the Gaussian normalization
//! `Λ = (2π)^{d/2} ∏ l_i`, the prior mean is a negative quadratic with a
//! learned maximum, location and per-dimension scales. Hyperparameters are
//! drawn by slice sampling from their posterior and later refined by
//! gradient-based MAP optimization.

mod hyper;
mod infer;
mod kernel;
mod posterior;
mod prior;

pub use hyper::{hyper_log_posterior, hyper_log_posterior_grad, GpHyperparams, HyperObjective};
pub use infer::{hyper_infer, maximize, slice_sample, HyperMode, SliceOptions, N_HYP_SAMPLES};
pub use kernel::{kernel_eval, mean_fn_eval, KernelParams};
pub use posterior::{gp_fit, gp_predict, GpPosterior};
pub use prior::{HyperPrior, PriorEntry, STUDENT_T_DF};

use crate::error::{check_dim, Error, Result};

/// Evaluated points with raw (un-annealed) log-target values.
///
/// `obs_noise` is a per-point observation standard deviation added on top of
/// the GP's base noise hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    dim: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets_raw: Vec<f64>,
    pub obs_noise: Vec<f64>,
}

impl TrainingSet {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "training set dimension must be >= 1");
        TrainingSet { dim, inputs: Vec::new(), targets_raw: Vec::new(), obs_noise: Vec::new() }
    }

    pub fn from_parts(
        dim: usize,
        inputs: Vec<Vec<f64>>,
        targets_raw: Vec<f64>,
        obs_noise: Vec<f64>,
    ) -> Result<Self> {
        let mut ts = TrainingSet::new(dim);
        if inputs.len() != targets_raw.len() || inputs.len() != obs_noise.len() {
            return Err(Error::invalid("inputs, targets and noise lengths differ"));
        }
        for ((x, h), s) in inputs.into_iter().zip(targets_raw).zip(obs_noise) {
            ts.push(x, h, s)?;
        }
        Ok(ts)
    }

    pub fn push(&mut self, x: Vec<f64>, target: f64, noise: f64) -> Result<()> {
        check_dim(self.dim, x.len())?;
        if !target.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training point"));
        }
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(Error::invalid("observation noise must be positive"));
        }
        if self.inputs.iter().any(|p| p == &x) {
            return Err(Error::invalid("duplicate training input"));
        }
        self.inputs.push(x);
        self.targets_raw.push(target);
        self.obs_noise.push(noise);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Copy whose targets are divided by `temp`.
    pub fn annealed(&self, temp: f64) -> TrainingSet {
        TrainingSet {
            targets_raw: crate::annealing::anneal_targets(&self.targets_raw, temp),
            ..self.clone()
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.inputs.iter().any(|p| p.as_slice() == x)
    }

    pub fn argmax(&self) -> Option<usize> {
        self.targets_raw
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_points() {
        let mut ts = TrainingSet::new(2);
        assert!(ts.push(vec![0.0], 1.0, 1e-3).is_err());
        assert!(ts.push(vec![0.0, 1.0], f64::NEG_INFINITY, 1e-3).is_err());
        assert!(ts.push(vec![0.0, 1.0], 1.0, 0.0).is_err());
        ts.push(vec![0.0, 1.0], 1.0, 1e-3).unwrap();
        assert!(ts.push(vec![0.0, 1.0], 2.0, 1e-3).is_err());
        assert_eq!(ts.len(), 1);
        assert_eq!(ts.annealed(2.0).targets_raw, vec![0.5]);
    }
}
