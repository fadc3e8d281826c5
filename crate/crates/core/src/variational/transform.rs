use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension logit map from the open box `(lb, ub)` onto the real line:
/// `u = ln((θ - lb) / (ub - θ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedTransform {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl BoundedTransform {
    pub fn new(lb: Vec<f64>, ub: Vec<f64>) -> Result<Self> {
        if lb.len() != ub.len() {
            return Err(Error::DimensionMismatch { expected: lb.len(), got: ub.len() });
        }
        if lb.iter().zip(&ub).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::invalid("transform bounds must be finite with lb < ub"));
        }
        Ok(BoundedTransform { lb, ub })
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    /// Bounded to unbounded. Points on or outside the box map to ±∞.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lb.iter().zip(&self.ub))
            .map(|(v, (l, u))| ((v - l) / (u - v)).ln())
            .collect()
    }

    pub fn inverse(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lb.iter().zip(&self.ub))
            .map(|(z, (l, h))| {
                // logistic written to stay accurate at both tails
                let p = if *z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) };
                l + (h - l) * p
            })
            .collect()
    }

    /// `ln |dθ/du|` at `u`.
    pub fn log_abs_det_jacobian(&self, u: &[f64]) -> f64 {
        u.iter()
            .zip(self.lb.iter().zip(&self.ub))
            .map(|(z, (l, h))| (h - l).ln() - softplus(-z) - softplus(*z))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_jacobian() {
        let t = BoundedTransform::new(vec![-5.0, 0.01], vec![5.0, 3.0]).unwrap();
        let x = vec![3.2, 0.4];
        let u = t.forward(&x);
        let back = t.inverse(&u);
        assert!((back[0] - x[0]).abs() < 1e-12 && (back[1] - x[1]).abs() < 1e-12);
        let h = 1e-6;
        let mut fd = 0.0;
        for i in 0..2 {
            let mut up = u.clone();
            up[i] += h;
            let mut dn = u.clone();
            dn[i] -= h;
            fd += ((t.inverse(&up)[i] - t.inverse(&dn)[i]) / (2.0 * h)).ln();
        }
        assert!((fd - t.log_abs_det_jacobian(&u)).abs() < 1e-7);
        assert_eq!(t.forward(&[5.0, 1.0])[0], f64::INFINITY);
        assert!(t.log_abs_det_jacobian(&[800.0, -800.0]).is_finite());
        assert!(BoundedTransform::new(vec![1.0], vec![1.0]).is_err());
    }
}
