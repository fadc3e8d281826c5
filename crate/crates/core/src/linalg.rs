//! Small dense linear-algebra helpers around a lower Cholesky factor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter added to the diagonal after a failed factorization.
pub const BASE_JITTER: f64 = 1e-10;
/// Number of times the jitter is doubled before giving up.
pub const MAX_JITTER_DOUBLINGS: usize = 6;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl CholFactor {
    /// Factorizes a symmetric matrix. If that fails, `1e-10 * mean(diag)` is
    /// added to the diagonal and doubled until the factorization succeeds.
    pub fn with_jitter(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Ok(CholFactor { l: DMatrix::zeros(0, 0), jitter: 0.0 });
        }
        let mean_diag = a.diagonal().mean().abs().max(f64::MIN_POSITIVE);
        let mut jitter = 0.0;
        for attempt in 0..=MAX_JITTER_DOUBLINGS + 1 {
            let mut aj = a.clone();
            for i in 0..n {
                aj[(i, i)] += jitter;
            }
            if let Some(ch) = nalgebra::Cholesky::new(aj) {
                let l = ch.unpack();
                if l.iter().all(|v| v.is_finite()) {
                    return Ok(CholFactor { l, jitter });
                }
            }
            jitter = if attempt == 0 { BASE_JITTER * mean_diag } else { 2.0 * jitter };
        }
        Err(Error::FitFailed { attempts: MAX_JITTER_DOUBLINGS + 2 })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut y = b.clone();
        if self.dim() > 0 {
            self.l.solve_lower_triangular_mut(&mut y);
        }
        y
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = self.solve_lower(b);
        if self.dim() > 0 {
            self.l.tr_solve_lower_triangular_mut(&mut x);
        }
        x
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        if self.dim() > 0 {
            self.l.solve_lower_triangular_mut(&mut x);
            self.l.tr_solve_lower_triangular_mut(&mut x);
        }
        x
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// Factor of the matrix grown by one row/column: `[[A, c], [cᵀ, d]]`.
    pub fn extend(&self, cross: &DVector<f64>, diag: f64) -> Result<Self> {
        let n = self.dim();
        let v = self.solve_lower(cross);
        let rem = diag + self.jitter - v.norm_squared();
        let pivot = if rem > 0.0 {
            rem.sqrt()
        } else {
            // fantasy points can sit on top of existing inputs
            (diag.abs().max(f64::MIN_POSITIVE) * BASE_JITTER).sqrt()
        };
        let mut l = self.l.clone().resize(n + 1, n + 1, 0.0);
        for j in 0..n {
            l[(n, j)] = v[j];
        }
        l[(n, n)] = pivot;
        Ok(CholFactor { l, jitter: self.jitter })
    }
}
