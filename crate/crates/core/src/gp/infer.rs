use rand::Rng as _;

use super::{GpHyperparams, HyperObjective, HyperPrior, TrainingSet};
use crate::Rng;

/// Hyperparameter draws kept per iteration while sampling.
pub const N_HYP_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperMode {
    Sample,
    Optimize,
}

#[derive(Debug, Clone, Copy)]
pub struct SliceOptions {
    pub n_draws: usize,
    /// Sweeps discarded before the first kept draw.
    pub burn_in: usize,
    pub max_steps_out: usize,
    pub max_shrink: usize,
}

impl Default for SliceOptions {
    fn default() -> Self {
        SliceOptions { n_draws: N_HYP_SAMPLES, burn_in: 0, max_steps_out: 64, max_shrink: 100 }
    }
}

/// Coordinate-wise slice sampler with stepping out and shrinkage.
///
/// Each kept draw is one full sweep over the coordinates. A coordinate whose
/// shrinkage loop exhausts `max_shrink` proposals keeps its current value.
pub fn slice_sample<F>(
    mut log_p: F,
    x0: &[f64],
    widths: &[f64],
    bounds: &[(f64, f64)],
    opts: &SliceOptions,
    rng: &mut Rng,
) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut fx = log_p(&x);
    let mut draws = Vec::with_capacity(opts.n_draws);
    if !fx.is_finite() {
        log::warn!("slice sampler started at a point of zero density; returning the start point");
        return vec![x; opts.n_draws];
    }
    for sweep in 0..opts.burn_in + opts.n_draws {
        for j in 0..x.len() {
            let (lo, hi) = bounds[j];
            let w = widths[j];
            let xj = x[j];
            let y = fx + rng.random::<f64>().ln();
            let mut left = xj - w * rng.random::<f64>();
            let mut right = left + w;
            let mut steps_left = (opts.max_steps_out as f64 * rng.random::<f64>()) as usize;
            let mut steps_right = opts.max_steps_out.saturating_sub(1 + steps_left);
            let mut probe = x.clone();
            while steps_left > 0 && left > lo {
                probe[j] = left;
                if log_p(&probe) <= y {
                    break;
                }
                left -= w;
                steps_left -= 1;
            }
            while steps_right > 0 && right < hi {
                probe[j] = right;
                if log_p(&probe) <= y {
                    break;
                }
                right += w;
                steps_right -= 1;
            }
            left = left.max(lo);
            right = right.min(hi);
            let mut accepted = false;
            for _ in 0..opts.max_shrink {
                let cand = left + rng.random::<f64>() * (right - left);
                probe[j] = cand;
                let fc = log_p(&probe);
                if fc > y {
                    x[j] = cand;
                    fx = fc;
                    accepted = true;
                    break;
                }
                if cand < xj {
                    left = cand;
                } else {
                    right = cand;
                }
            }
            if !accepted {
                log::warn!("slice sampler shrinkage exhausted on coordinate {j}; keeping current value");
            }
        }
        if sweep >= opts.burn_in {
            draws.push(x.clone());
        }
    }
    draws
}

/// Limited-memory BFGS ascent with backtracking, restricted to a box.
///
/// Points outside `bounds` are projected back. Returns the best point and
/// its value.
pub fn maximize<F>(mut f: F, x0: &[f64], bounds: &[(f64, f64)], max_iter: usize) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const MEM: usize = 8;
    let project = |x: &mut Vec<f64>| {
        for (v, (lo, hi)) in x.iter_mut().zip(bounds) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return (x, fx);
    }
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for iter in 0..max_iter {
        // two-loop recursion on the negated objective
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        if dot(&dir, &g) <= 0.0 {
            dir = g.clone();
        }
        let mut t = if iter == 0 && hist.is_empty() {
            1.0 / dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0)
        } else {
            1.0
        };
        let mut moved = None;
        for _ in 0..50 {
            let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            project(&mut xn);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ >= fx + 1e-4 * dot(&g, &step) && fn_ >= fx {
                moved = Some((xn, fn_, gn, step));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn, step)) = moved else {
            break;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| -(a - b)).collect();
        let sy = dot(&step, &y);
        let improvement = fn_ - fx;
        x = xn;
        fx = fn_;
        g = gn;
        if sy > 1e-12 {
            if hist.len() == MEM {
                hist.remove(0);
            }
            hist.push((step, y, 1.0 / sy));
        }
        let gnorm = g
            .iter()
            .zip(&x)
            .zip(bounds)
            .map(|((gi, xi), (lo, hi))| {
                if (*xi <= *lo && *gi < 0.0) || (*xi >= *hi && *gi > 0.0) {
                    0.0
                } else {
                    gi.abs()
                }
            })
            .fold(0.0, f64::max);
        if gnorm < 1e-9 || improvement.abs() < 1e-13 * (1.0 + fx.abs()) {
            break;
        }
    }
    (x, fx)
}

/// Infers GP hyperparameters for `ts`.
///
/// `Sample` continues a slice-sampling chain from the last entry of
/// `starts` and returns `opts.n_draws` draws. `Optimize` runs L-BFGS from the
/// best entries of `starts` and returns the single best MAP point.
pub fn hyper_infer(
    ts: &TrainingSet,
    prior: &HyperPrior,
    mode: HyperMode,
    starts: &[GpHyperparams],
    opts: &SliceOptions,
    rng: &mut Rng,
) -> Vec<GpHyperparams> {
    let d = ts.dim();
    let mut obj = HyperObjective::new(ts, prior);
    let bounds = prior.bounds();
    let mut candidates: Vec<(Vec<f64>, f64)> = starts
        .iter()
        .map(|h| {
            let mut v = h.to_vec();
            prior.clamp(&mut v);
            let f = obj.value(&v);
            (v, f)
        })
        .collect();
    if candidates.iter().all(|(_, f)| !f.is_finite()) {
        let plb: Vec<f64> = bounds[d + 3..2 * d + 3].iter().map(|b| b.0).collect();
        let pub_: Vec<f64> = bounds[d + 3..2 * d + 3].iter().map(|b| b.1).collect();
        let mut v = GpHyperparams::initial(ts, prior, &plb, &pub_).to_vec();
        prior.clamp(&mut v);
        let f = obj.value(&v);
        candidates.push((v, f));
    }
    match mode {
        HyperMode::Sample => {
            let x0 = candidates
                .iter()
                .rev()
                .find(|(_, f)| f.is_finite())
                .map(|(v, _)| v.clone())
                .unwrap_or_else(|| candidates[0].0.clone());
            let widths = prior.widths();
            slice_sample(|x| obj.value(x), &x0, &widths, &bounds, opts, rng)
                .into_iter()
                .map(|v| GpHyperparams::from_vec(d, &v))
                .collect()
        }
        HyperMode::Optimize => {
            candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
            let mut best: Option<(Vec<f64>, f64)> = None;
            for (x0, _) in candidates.iter().take(3) {
                let (x, f) = maximize(|x| obj.value_grad(x), x0, &bounds, 100);
                if best.as_ref().is_none_or(|b| f > b.1) {
                    best = Some((x, f));
                }
            }
            let (x, _) = best.expect("at least one start");
            vec![GpHyperparams::from_vec(d, &x)]
        }
    }
}
