//! Exact-arithmetic and oracle checks shared by the unit-level integration
//! tests and the acceptance runner.

use cvbmc::annealing::{anneal_targets, temperature, AnnealConfig};
use cvbmc::engine::{is_stable, reliability_index, EngineConfig, IterationStats};
use cvbmc::gp::{hyper_log_posterior, hyper_log_posterior_grad, GpPosterior, HyperPrior};
use cvbmc::quadrature::expected_log_joint;
use cvbmc::variational::{entropy_estimate, entropy_with_noise, EntropyNoise};
use cvbmc::{rng_from_seed, GpHyperparams, MixturePosterior};
use rand::Rng as _;

use super::*;

pub const QUAD_INSTANCES: usize = 50;
pub const QUAD_SAMPLES: usize = 1_000_000;
pub const QUAD_MEAN_REL: f64 = 0.005;
pub const QUAD_VAR_REL: f64 = 0.02;

pub const GP_MAX_N: usize = 20;
pub const GP_PRED_TOL: f64 = 1e-8;
pub const GP_GRAD_REL: f64 = 1e-4;

pub const ENTROPY_SAMPLES: usize = 100_000;
pub const ENTROPY_REL: f64 = 0.01;
pub const ENTROPY_GRAD_REL: f64 = 1e-4;

#[derive(Debug)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

/// Worst relative errors of the closed-form expected log joint against Monte
/// Carlo integration over `instances` random (GP, mixture) pairs.
pub fn quadrature_vs_mc(instances: usize, samples: usize) -> Outcome {
    let mut rng = rng_from_seed(505);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for i in 0..instances {
        let d = 1 + i % 3;
        let n = rng.random_range(3..=10);
        let k = rng.random_range(1..=3);
        let (ts, hyper) = random_gp_instance(d, n, &mut rng);
        let q = random_mixture(d, k, &mut rng);
        let gp = GpPosterior::fit(&ts, &hyper).expect("fit");
        let (mean, var) = expected_log_joint(&gp, &q).expect("closed form");
        let dense = DenseGp::new(&ts, &hyper);
        let (mc_mean, mc_var) = mc_expected_log_joint(&dense, &q, samples, &mut rng);
        worst_mean = worst_mean.max(rel_err(mean, mc_mean));
        worst_var = worst_var.max(rel_err(var, mc_var));
    }
    Outcome {
        pass: worst_mean <= QUAD_MEAN_REL && worst_var <= QUAD_VAR_REL,
        detail: format!(
            "{instances} instances, worst rel err mean {worst_mean:.2e} (tol {QUAD_MEAN_REL}), variance {worst_var:.2e} (tol {QUAD_VAR_REL})"
        ),
    }
}

/// GP predictions against the dense formulas for N = 0..=20 and hyperposterior
/// gradients against central differences.
pub fn gp_vs_dense() -> Outcome {
    let mut rng = rng_from_seed(606);
    let (mut worst_pred, mut worst_grad) = (0.0f64, 0.0f64);
    for n in 0..=GP_MAX_N {
        let d = 1 + n % 3;
        let (ts, hyper) = random_gp_instance(d, n, &mut rng);
        let gp = GpPosterior::fit(&ts, &hyper).expect("fit");
        let dense = DenseGp::new(&ts, &hyper);
        for _ in 0..10 {
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.5..2.5)).collect();
            let (m, v) = gp.predict(&a);
            let (dm, dv) = dense.predict(&a);
            worst_pred = worst_pred.max((m - dm).abs() / dm.abs().max(1.0));
            worst_pred = worst_pred.max((v - dv).abs() / dv.abs().max(1.0));
        }
        if n == 0 {
            continue;
        }
        let lb = vec![-2.0; d];
        let ub = vec![2.0; d];
        let prior = HyperPrior::default_for(&ts, &lb, &ub, &lb, &ub);
        let (_, grad) = hyper_log_posterior_grad(&hyper, &ts, &prior);
        let fd = finite_diff(|x| hyper_log_posterior(&GpHyperparams::from_vec(d, x), &ts, &prior), &hyper.to_vec(), 1e-5);
        for (g, f) in grad.iter().zip(&fd) {
            worst_grad = worst_grad.max((g - f).abs() / g.abs().max(f.abs()).max(1.0));
        }
    }
    Outcome {
        pass: worst_pred <= GP_PRED_TOL && worst_grad <= GP_GRAD_REL,
        detail: format!(
            "N = 0..={GP_MAX_N}, worst prediction err {worst_pred:.2e} (tol {GP_PRED_TOL:e}), worst gradient rel err {worst_grad:.2e} (tol {GP_GRAD_REL:e})"
        ),
    }
}

/// Single-Gaussian entropy estimate against the analytic value, and the
/// estimator's gradient against common-random-number finite differences.
pub fn entropy_checks() -> Outcome {
    let mut rng = rng_from_seed(707);
    let (mut worst_val, mut worst_grad) = (0.0f64, 0.0f64);
    for d in 1..=4 {
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda: Vec<f64> = (0..d).map(|_| rng.random_range(2.0..4.0)).collect();
        let gamma = rng.random_range(1.0..2.0);
        let q = MixturePosterior::new(vec![1.0], vec![mean], vec![gamma], lambda.clone()).expect("valid");
        let sd: Vec<f64> = lambda.iter().map(|l| gamma * l).collect();
        let (est, _) = entropy_estimate(&q, ENTROPY_SAMPLES, &mut rng);
        worst_val = worst_val.max(rel_err(est, gaussian_entropy(&sd)));

        let q2 = MixturePosterior::new(
            vec![0.3, 0.7],
            vec![(0..d).map(|_| -0.5).collect(), (0..d).map(|_| 0.8).collect()],
            vec![0.6, 1.1],
            (0..d).map(|_| rng.random_range(0.5..1.5)).collect(),
        )
        .expect("valid");
        for q in [&q, &q2] {
            let noise = EntropyNoise::draw(q.n_components(), d, 400, &mut rng);
            let (_, grad) = entropy_with_noise(q, &noise);
            let fd = finite_diff(|u| entropy_with_noise(&q.from_unconstrained(u), &noise).0, &q.to_unconstrained(), 1e-6);
            for (g, f) in grad.iter().zip(&fd) {
                worst_grad = worst_grad.max((g - f).abs() / g.abs().max(f.abs()).max(1.0));
            }
        }
    }
    Outcome {
        pass: worst_val <= ENTROPY_REL && worst_grad <= ENTROPY_GRAD_REL,
        detail: format!(
            "worst rel err vs analytic {worst_val:.2e} at {ENTROPY_SAMPLES} samples (tol {ENTROPY_REL}), worst gradient rel err {worst_grad:.2e} (tol {ENTROPY_GRAD_REL:e})"
        ),
    }
}

pub const PINNED_TEMPS: [(usize, f64); 5] = [(1, 50.0), (4, 4.0 / 3.0), (5, 1.0), (9, 50.0), (41, 1.0)];

pub fn schedule_exactness() -> Outcome {
    let cfg = AnnealConfig::cyclical(40, 5);
    let mut bad = Vec::new();
    for (t, want) in PINNED_TEMPS {
        let got = temperature(&cfg, t);
        if got != want {
            bad.push(format!("t={t}: {got} != {want}"));
        }
    }
    let constant = AnnealConfig::constant();
    let targets = [-1.5, 0.0, 3.25, -1e6];
    for t in 1..=100 {
        if anneal_targets(&targets, temperature(&constant, t)) != targets {
            bad.push(format!("constant schedule changes targets at t={t}"));
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() { "pinned temperatures exact; constant is identity".into() } else { bad.join("; ") },
    }
}

fn stat(iter: usize, rho: f64, temp: f64) -> IterationStats {
    IterationStats {
        iter,
        temp,
        elbo_mean: 0.0,
        elbo_sd: 0.0,
        elcbo: 0.0,
        rho1: rho,
        rho2: rho,
        rho3: rho,
        rho,
        k: 1,
        total_evals: 10 + 5 * iter,
        warmup_active: false,
        whitened: false,
    }
}

/// Pinned reliability cases, plus a check that a perfectly stable history
/// cannot stop before the schedule is over.
pub fn reliability_arithmetic(extra_histories: &[Vec<IterationStats>]) -> Outcome {
    let mut bad = Vec::new();
    let (_, (_, rho2, _)) = reliability_index(-2.0, -2.0, 0.01, 0.0, 0.1, 0.01);
    if rho2 != 1.0 {
        bad.push(format!("rho2 = {rho2} at V = 0.01"));
    }
    let (rho, parts) = reliability_index(-7.5, -7.5, 0.0, 0.0, 0.1, 0.01);
    if rho != 0.0 || parts != (0.0, 0.0, 0.0) {
        bad.push(format!("unchanged state gives rho = {rho}"));
    }
    let cfg = EngineConfig::default();
    let sched = cfg.anneal;
    let mut h = Vec::new();
    for t in 1..=sched.total_iters + 20 {
        h.push(stat(t, 0.0, temperature(&sched, t)));
        if is_stable(&h, &cfg) && t <= sched.total_iters {
            bad.push(format!("stable at t={t} inside the schedule"));
        }
    }
    for hist in extra_histories {
        if let Some(last) = hist.last() {
            if last.iter <= sched.total_iters && is_stable(hist, &cfg) {
                bad.push(format!("run reported stable at t={}", last.iter));
            }
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() { "pinned cases exact; no early stop".into() } else { bad.join("; ") },
    }
}
