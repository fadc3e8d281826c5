use std::f64::consts::PI;

use super::GpHyperparams;
use crate::error::{check_dim, Error, Result};

/// Kernel quantities derived from the hyperparameters, reused across many
/// evaluations.
#[derive(Debug, Clone)]
pub struct KernelParams {
    /// log(σ_f² Λ).
    pub log_amp: f64,
    pub inv_l2: Vec<f64>,
}

impl KernelParams {
    pub fn new(hyper: &GpHyperparams) -> Self {
        let d = hyper.dim() as f64;
        let log_amp = 2.0 * hyper.log_output_scale
            + 0.5 * d * (2.0 * PI).ln()
            + hyper.log_input_scales.iter().sum::<f64>();
        let inv_l2 = hyper.log_input_scales.iter().map(|v| (-2.0 * v).exp()).collect();
        KernelParams { log_amp, inv_l2 }
    }

    pub fn amp(&self) -> f64 {
        self.log_amp.exp()
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((x, y), w) in a.iter().zip(b).zip(&self.inv_l2) {
            let diff = x - y;
            q += diff * diff * w;
        }
        (self.log_amp - 0.5 * q).exp()
    }
}

/// Squared exponential kernel `σ_f² Λ exp(-½ (a-b)ᵀ Σ_l⁻¹ (a-b))`.
pub fn kernel_eval(a: &[f64], b: &[f64], hyper: &GpHyperparams) -> Result<f64> {
    check_dim(hyper.dim(), a.len())?;
    check_dim(hyper.dim(), b.len())?;
    if !hyper.is_finite() {
        return Err(Error::NonFinite("GP hyperparameters"));
    }
    Ok(KernelParams::new(hyper).eval(a, b))
}

/// Negative-quadratic prior mean `m_0 - ½ Σ (a_i - θmax_i)² / r_i²`.
pub fn mean_fn_eval(a: &[f64], hyper: &GpHyperparams) -> Result<f64> {
    check_dim(hyper.dim(), a.len())?;
    if !hyper.is_finite() {
        return Err(Error::NonFinite("GP hyperparameters"));
    }
    Ok(hyper.mean_at(a))
}
