//! Active sampling: the acquisition function and batch selection.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::EngineState;
use crate::gp::GpPosterior;
use crate::variational::MixturePosterior;
use crate::Rng;

/// Candidate counts for the multistart search.
const N_CAND_Q: usize = 100;
const N_CAND_BOX: usize = 50;
const N_CAND_BEST: usize = 10;
/// Local searches started from the best candidates.
const N_LOCAL: usize = 3;
const LOCAL_MAX_EVALS: usize = 80;

/// Log acquisition `log s²(z) + f̄(z) + log q(z)` in working coordinates.
///
/// `in_bounds` reports whether `z` maps inside the hard box.
pub(crate) fn log_acquisition(
    gp: &GpPosterior,
    q: &MixturePosterior,
    z: &[f64],
    in_bounds: impl Fn(&[f64]) -> bool,
) -> f64 {
    if !in_bounds(z) {
        return f64::NEG_INFINITY;
    }
    let (mean, var) = gp.predict(z);
    if !(var > 0.0) {
        return f64::NEG_INFINITY;
    }
    let v = var.ln() + mean + q.inner_log_pdf(z);
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Derivative-free local maximization.
pub(crate) fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    f0: f64,
    step: &[f64],
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let v = f(&x);
        simplex.push((x, v));
    }
    let mut evals = d;
    let by_value = |a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)| b.1.total_cmp(&a.1);
    while evals < max_evals {
        simplex.sort_by(by_value);
        let worst = simplex[d].clone();
        let centroid: Vec<f64> =
            (0..d).map(|i| simplex[..d].iter().map(|p| p.0[i]).sum::<f64>() / d as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(1.0);
        let fr = f(&xr);
        evals += 1;
        if fr > simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[d] = if fe > fr { (xe, fe) } else { (xr, fr) };
        } else if fr > simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr > worst.1 {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc > worst.1.max(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    p.0 = p.0.iter().zip(&best).map(|(x, b)| b + 0.5 * (x - b)).collect();
                    p.1 = f(&p.0);
                }
                evals += d;
            }
        }
    }
    simplex.sort_by(by_value);
    simplex.swap_remove(0)
}

impl EngineState {
    /// Acquisition value at `a` (original coordinates).
    pub fn acquisition_value(&self, a: &[f64]) -> f64 {
        let z = self.to_work(a);
        log_acquisition(&self.gps[0], &self.q, &z, |z| self.work_in_bounds(z)).exp()
    }

    /// Greedy batch of `n` points in original coordinates. After each pick
    /// the GP is updated with a fantasy observation at its posterior mean.
    pub fn select_next_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        let mut rng = std::mem::replace(&mut self.rng, crate::rng_from_seed(0));
        let picks = self.select_work_points(n, &mut rng);
        self.rng = rng;
        picks.iter().map(|z| self.to_original(z)).collect()
    }

    pub(crate) fn select_work_points(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        let d = self.dim();
        let (plb, pub_) = (&self.work_plb, &self.work_pub);
        let width: Vec<f64> = plb.iter().zip(pub_.iter()).map(|(l, u)| u - l).collect();
        let mut gp = self.gps[0].clone();
        let mut picks: Vec<Vec<f64>> = Vec::with_capacity(n);

        // best training points by current (annealed) target
        let mut order: Vec<usize> = (0..gp.len()).collect();
        let targets = &self.gps[0].training_set.targets_raw;
        order.sort_by(|&a, &b| targets[b].total_cmp(&targets[a]));
        order.truncate(N_CAND_BEST);

        for _ in 0..n {
            let in_bounds = |z: &[f64]| self.work_in_bounds(z);
            let acq = |gp: &GpPosterior, z: &[f64]| log_acquisition(gp, &self.q, z, in_bounds);
            let mut cands: Vec<Vec<f64>> = Vec::with_capacity(N_CAND_Q + N_CAND_BOX + N_CAND_BEST);
            cands.extend(self.q.sample_inner(N_CAND_Q, rng).into_iter().map(|(z, _)| z));
            for _ in 0..N_CAND_BOX {
                let x: Vec<f64> = (0..d)
                    .map(|i| self.problem.plb[i] + rng.random::<f64>() * (self.problem.pub_[i] - self.problem.plb[i]))
                    .collect();
                cands.push(self.to_work(&x));
            }
            for &i in &order {
                let base = &self.gps[0].training_set.inputs[i];
                cands.push(
                    base.iter()
                        .zip(&width)
                        .map(|(b, w)| b + 0.05 * w * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                );
            }
            let mut scored: Vec<(Vec<f64>, f64)> = cands.into_iter().map(|z| {
                let v = acq(&gp, &z);
                (z, v)
            }).collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1));

            let step: Vec<f64> = width.iter().map(|w| 0.02 * w).collect();
            let mut best = scored[0].clone();
            for (z0, v0) in scored.iter().take(N_LOCAL) {
                if !v0.is_finite() {
                    continue;
                }
                let (z, v) = nelder_mead(|z| acq(&gp, z), z0, *v0, &step, LOCAL_MAX_EVALS);
                if v > best.1 {
                    best = (z, v);
                }
            }
            let mut z = best.0;
            if !best.1.is_finite() {
                // degenerate acquisition surface: fall back to a fresh box draw
                let x: Vec<f64> = (0..d)
                    .map(|i| self.problem.plb[i] + rng.random::<f64>() * (self.problem.pub_[i] - self.problem.plb[i]))
                    .collect();
                z = self.to_work(&x);
            }
            let mut tries = 0;
            while gp.training_set.contains(&z) || picks.contains(&z) {
                for (zi, w) in z.iter_mut().zip(&width) {
                    *zi += 1e-6 * w * if rng.random::<bool>() { 1.0 } else { -1.0 };
                }
                tries += 1;
                if tries > 100 {
                    break;
                }
            }
            match gp.with_fantasy(&z) {
                Ok(g) => gp = g,
                Err(e) => log::warn!("fantasy update failed: {e}"),
            }
            picks.push(z);
        }
        picks
    }
}
