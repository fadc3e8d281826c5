use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::MixturePosterior;
use crate::error::{Error, Result};
use crate::gp::TrainingSet;

/// Affine map `x = A z + b` with its cached inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    /// `A`, row-major.
    pub linear: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    /// `A⁻¹`, row-major.
    pub inverse: Vec<Vec<f64>>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

fn mat_vec(rows: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    rows.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

impl AffineMap {
    pub fn new(linear: DMatrix<f64>, offset: Vec<f64>) -> Result<Self> {
        let inv = linear
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::invalid("affine map is singular"))?;
        Ok(AffineMap { linear: to_rows(&linear), offset, inverse: to_rows(&inv) })
    }

    pub fn identity(d: usize) -> Self {
        AffineMap::new(DMatrix::identity(d, d), vec![0.0; d]).expect("identity is invertible")
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        from_rows(&self.linear)
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let mut x = mat_vec(&self.linear, z);
        x.iter_mut().zip(&self.offset).for_each(|(a, b)| *a += b);
        x
    }

    pub fn inverse_apply(&self, x: &[f64]) -> Vec<f64> {
        let shifted: Vec<f64> = x.iter().zip(&self.offset).map(|(a, b)| a - b).collect();
        mat_vec(&self.inverse, &shifted)
    }

    /// `log |det A|`.
    pub fn log_abs_det(&self) -> f64 {
        self.matrix().determinant().abs().ln()
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn compose(&self, inner: &AffineMap) -> AffineMap {
        let a = self.matrix() * inner.matrix();
        let b = self.apply(&inner.offset);
        AffineMap::new(a, b).expect("composition of invertible maps")
    }
}

/// Rotates and scales the parameter space so that the covariance of `q`
/// becomes the identity.
///
/// Returns the transformed mixture (whose whitening map is composed with any
/// existing one), the training set in the new coordinates with targets
/// shifted by the log-Jacobian, and the step map from new to old
/// coordinates. Component covariances that are no longer axis-aligned after
/// the rotation are replaced by their diagonal.
pub fn whiten(
    q: &MixturePosterior,
    ts: &TrainingSet,
) -> Result<(MixturePosterior, TrainingSet, AffineMap)> {
    let d = q.dim();
    let (mean, cov) = q.moments_inner();
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("variational covariance"));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::invalid("SVD failed"))?;
    let s = svd.singular_values;
    let smax = s.max();
    if !(smax > 0.0) || s.min() <= 1e-12 * smax {
        return Err(Error::invalid("variational covariance is rank deficient"));
    }
    let sqrt_s = DMatrix::from_diagonal(&s.map(f64::sqrt));
    let inv_sqrt_s = DMatrix::from_diagonal(&s.map(|v| 1.0 / v.sqrt()));
    let w = &inv_sqrt_s * u.transpose();
    let step = AffineMap::new(&u * sqrt_s, mean.clone())?;

    let to_new = |x: &[f64]| -> Vec<f64> {
        let diff = DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, b)| a - b));
        (&w * diff).iter().copied().collect()
    };
    let lambda2 = DMatrix::from_diagonal(&DVector::from_iterator(
        d,
        q.length_scales.iter().map(|l| l * l),
    ));
    let rotated = &w * lambda2 * w.transpose();
    let mut out = q.clone();
    out.means = q.means.iter().map(|m| to_new(m)).collect();
    out.length_scales = (0..d).map(|i| rotated[(i, i)].sqrt()).collect();
    out.whitening = Some(match &q.whitening {
        Some(prev) => prev.compose(&step),
        None => step.clone(),
    });

    let log_jac = step.log_abs_det();
    let mut ts_new = ts.clone();
    ts_new.inputs = ts.inputs.iter().map(|x| to_new(x)).collect();
    ts_new.targets_raw = ts.targets_raw.iter().map(|h| h + log_jac).collect();
    Ok((out, ts_new, step))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    fn empty_ts(d: usize) -> TrainingSet {
        TrainingSet::new(d)
    }

    #[test]
    fn identity_covariance_is_rotation() {
        let q = MixturePosterior::new(vec![1.0], vec![vec![0.5, -1.0]], vec![1.0], vec![1.0, 1.0]).unwrap();
        let (qw, _, map) = whiten(&q, &empty_ts(2)).unwrap();
        let a = map.matrix();
        assert!((a.transpose() * &a - DMatrix::identity(2, 2)).amax() < 1e-8);
        let (_, cov) = qw.moments_inner();
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-8 && (cov[(1, 1)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn diagonal_covariance_becomes_identity() {
        let q = MixturePosterior::new(vec![1.0], vec![vec![0.0, 0.0]], vec![1.0], vec![2.0, 1.0]).unwrap();
        let (qw, _, _) = whiten(&q, &empty_ts(2)).unwrap();
        let (_, cov) = qw.moments_inner();
        assert!((cov - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn density_invariant_for_axis_aligned_mixture() {
        // means differ along one axis only, so the covariance stays diagonal
        let q = MixturePosterior::new(
            vec![0.3, 0.7],
            vec![vec![-1.0, 2.0], vec![3.0, 2.0]],
            vec![0.6, 1.1],
            vec![1.5, 0.4],
        )
        .unwrap();
        let (qw, _, map) = whiten(&q, &empty_ts(2)).unwrap();
        let log_det_w = -map.log_abs_det();
        for x in [[0.0, 0.0], [2.5, 1.7], [-3.0, 2.4]] {
            let z = map.inverse_apply(&x);
            assert!((q.log_pdf(&x) - (qw.inner_log_pdf(&z) + log_det_w)).abs() < 1e-10);
            assert!((q.log_pdf(&x) - qw.log_pdf(&x)).abs() < 1e-10);
        }
    }

    #[test]
    fn samples_roundtrip_through_map() {
        let q = MixturePosterior::new(
            vec![0.5, 0.5],
            vec![vec![-1.0, 0.0], vec![2.0, 1.0]],
            vec![0.6, 1.1],
            vec![1.5, 0.4],
        )
        .unwrap();
        let mut ts = TrainingSet::new(2);
        ts.push(vec![0.1, 0.2], -3.0, 1e-6).unwrap();
        let (qw, tsw, map) = whiten(&q, &ts).unwrap();
        let back = map.apply(&tsw.inputs[0]);
        assert!((back[0] - 0.1).abs() < 1e-12 && (back[1] - 0.2).abs() < 1e-12);
        assert!((tsw.targets_raw[0] - (-3.0 + map.log_abs_det())).abs() < 1e-12);
        let mut rng = rng_from_seed(1);
        for (x, _) in qw.sample(200, &mut rng) {
            let z = qw.whitening.as_ref().unwrap().inverse_apply(&x);
            let x2 = qw.whitening.as_ref().unwrap().apply(&z);
            assert!((x[0] - x2[0]).abs() < 1e-12 && (x[1] - x2[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_rejected() {
        let q = MixturePosterior::new(vec![1.0], vec![vec![0.0, 0.0]], vec![1.0], vec![1.0, 1e-9]).unwrap();
        assert!(whiten(&q, &empty_ts(2)).is_err());
    }
}
