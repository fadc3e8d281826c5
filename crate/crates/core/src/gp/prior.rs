use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainingSet;

/// Degrees of freedom of the Student-t hyperpriors.
pub const STUDENT_T_DF: f64 = 3.0;

/// Prior on one (possibly log-transformed) hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PriorEntry {
    Uniform { lo: f64, hi: f64 },
    /// Student-t with `df` degrees of freedom truncated to `[lo, hi]`.
    StudentT { mean: f64, scale: f64, df: f64, lo: f64, hi: f64 },
}

fn student_t3_cdf(z: f64) -> f64 {
    let s = 3f64.sqrt();
    0.5 + (z / (s * (1.0 + z * z / 3.0)) + (z / s).atan()) / PI
}

fn ln_gamma_half_int(twice: u32) -> f64 {
    // Γ(n/2) for small positive integers n
    let mut v = if twice % 2 == 0 { 0.0 } else { 0.5 * PI.ln() };
    let mut k = if twice % 2 == 0 { 2 } else { 1 };
    while k < twice {
        v += (k as f64 / 2.0).ln();
        k += 2;
    }
    v
}

impl PriorEntry {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            PriorEntry::Uniform { lo, hi } | PriorEntry::StudentT { lo, hi, .. } => (lo, hi),
        }
    }

    /// Typical scale used as the slice-sampling width.
    pub fn width(&self) -> f64 {
        match *self {
            PriorEntry::Uniform { lo, hi } => 0.1 * (hi - lo),
            PriorEntry::StudentT { scale, lo, hi, .. } => scale.min(hi - lo),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.bounds();
        x >= lo && x <= hi
    }

    /// Log density and its derivative; `-inf` outside the support.
    pub fn log_density(&self, x: f64) -> (f64, f64) {
        if !self.contains(x) || !x.is_finite() {
            return (f64::NEG_INFINITY, 0.0);
        }
        match *self {
            PriorEntry::Uniform { lo, hi } => (-(hi - lo).ln(), 0.0),
            PriorEntry::StudentT { mean, scale, df, lo, hi } => {
                let z = (x - mean) / scale;
                let norm = ln_gamma_half_int((df + 1.0) as u32)
                    - ln_gamma_half_int(df as u32)
                    - 0.5 * (df * PI).ln()
                    - scale.ln();
                let mass = if df == 3.0 {
                    student_t3_cdf((hi - mean) / scale) - student_t3_cdf((lo - mean) / scale)
                } else {
                    1.0
                };
                let lp = norm - 0.5 * (df + 1.0) * (1.0 + z * z / df).ln() - mass.ln();
                let grad = -(df + 1.0) * z / (df * scale * (1.0 + z * z / df));
                (lp, grad)
            }
        }
    }
}

/// Priors over the packed hyperparameter vector (see [`super::GpHyperparams::to_vec`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub entries: Vec<PriorEntry>,
}

impl HyperPrior {
    /// Builds the default priors from the data and the plausible/hard boxes.
    ///
    /// * log input length scale: Student-t(log(√(d/6)·L), log √1e3, ν=3), truncated to log([1e-3 L, 1e3 L])
    /// * log output scale: Uniform(-20, 20)
    /// * log base noise: Student-t(log √1e-5, 0.5, ν=3), truncated to log([1e-6, 1])
    /// * mean maximum: Uniform(min h - 10·range h, max h + range h)
    /// * mean location: Uniform(hard lower, hard upper)
    /// * log mean scale: Uniform(log(1e-3 L), log(1e3 L))
    ///
    /// with `L = pub - plb`.
    pub fn default_for(ts: &TrainingSet, plb: &[f64], pub_: &[f64], lb: &[f64], ub: &[f64]) -> Self {
        let d = ts.dim();
        let widths: Vec<f64> = plb.iter().zip(pub_).map(|(l, u)| u - l).collect();
        let mut entries = Vec::with_capacity(3 * d + 3);
        for w in &widths {
            entries.push(PriorEntry::StudentT {
                mean: ((d as f64 / 6.0).sqrt() * w).ln(),
                scale: 1e3f64.sqrt().ln(),
                df: STUDENT_T_DF,
                lo: (1e-3 * w).ln(),
                hi: (1e3 * w).ln(),
            });
        }
        entries.push(PriorEntry::Uniform { lo: -20.0, hi: 20.0 });
        entries.push(PriorEntry::StudentT {
            mean: 1e-5f64.sqrt().ln(),
            scale: 0.5,
            df: STUDENT_T_DF,
            lo: 1e-6f64.ln(),
            hi: 0.0,
        });
        let (hmin, hmax) = ts
            .targets_raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &h| (a.min(h), b.max(h)));
        let (hmin, hmax) = if ts.is_empty() { (0.0, 0.0) } else { (hmin, hmax) };
        let range = (hmax - hmin).max(1.0);
        entries.push(PriorEntry::Uniform { lo: hmin - 10.0 * range, hi: hmax + range });
        for i in 0..d {
            entries.push(PriorEntry::Uniform { lo: lb[i], hi: ub[i] });
        }
        for w in &widths {
            entries.push(PriorEntry::Uniform { lo: (1e-3 * w).ln(), hi: (1e3 * w).ln() });
        }
        HyperPrior { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.entries.iter().zip(x).map(|(e, v)| e.log_density(*v).0).sum()
    }

    pub fn log_density_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut lp = 0.0;
        let mut g = Vec::with_capacity(x.len());
        for (e, v) in self.entries.iter().zip(x) {
            let (l, gi) = e.log_density(*v);
            lp += l;
            g.push(gi);
        }
        (lp, g)
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.entries.iter().map(|e| e.bounds()).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.width()).collect()
    }

    /// Clamps `x` into the prior support, keeping a small margin from the edges.
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, e) in x.iter_mut().zip(&self.entries) {
            let (lo, hi) = e.bounds();
            let m = 1e-9 * (hi - lo);
            *v = v.clamp(lo + m, hi - m);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rows() {
        let mut ts = TrainingSet::new(2);
        ts.push(vec![0.0, 0.0], -3.0, 1e-6).unwrap();
        ts.push(vec![1.0, 0.5], 1.0, 1e-6).unwrap();
        let p = HyperPrior::default_for(&ts, &[-4.0, 0.0], &[4.0, 2.0], &[-5.0, -1.0], &[5.0, 3.0]);
        assert_eq!(p.len(), 3 * 2 + 3);
        match p.entries[0] {
            PriorEntry::StudentT { mean, scale, df, .. } => {
                assert!((mean - ((2.0f64 / 6.0).sqrt() * 8.0).ln()).abs() < 1e-14);
                assert!((scale - 1e3f64.sqrt().ln()).abs() < 1e-14);
                assert_eq!(df, 3.0);
            }
            _ => panic!("length scale prior must be Student-t"),
        }
        assert!(matches!(p.entries[2], PriorEntry::Uniform { lo, hi } if lo == -20.0 && hi == 20.0));
        match p.entries[3] {
            PriorEntry::StudentT { mean, scale, df, .. } => {
                assert!((mean - 1e-5f64.sqrt().ln()).abs() < 1e-14);
                assert_eq!(scale, 0.5);
                assert_eq!(df, 3.0);
            }
            _ => panic!("noise prior must be Student-t"),
        }
        assert!(matches!(p.entries[4], PriorEntry::Uniform { lo, hi } if lo == -43.0 && hi == 5.0));
        assert!(matches!(p.entries[5], PriorEntry::Uniform { lo, hi } if lo == -5.0 && hi == 5.0));
        assert!(matches!(p.entries[8], PriorEntry::Uniform { .. }));
    }

    #[test]
    fn truncated_student_t_normalizes() {
        let e = PriorEntry::StudentT { mean: 0.3, scale: 0.7, df: 3.0, lo: -1.0, hi: 2.5 };
        let n = 200_000;
        let h = 3.5 / n as f64;
        let total: f64 = (0..n).map(|i| e.log_density(-1.0 + (i as f64 + 0.5) * h).0.exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
        let (lp, g) = e.log_density(0.9);
        let (lp2, _) = e.log_density(0.9 + 1e-6);
        assert!(((lp2 - lp) / 1e-6 - g).abs() < 1e-5);
        assert_eq!(e.log_density(3.0).0, f64::NEG_INFINITY);
    }
}
