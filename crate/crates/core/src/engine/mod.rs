//! The cyclical VBMC loop.
//!
//! State lives in a working coordinate system that starts as the original
//! parameter space and is replaced by whitened coordinates from time to time.
//! Raw evaluations are always kept in original coordinates; the working
//! training set is rebuilt from them whenever the map or the temperature
//! changes.

mod acquisition;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::annealing::{temperature, AnnealConfig};
use crate::error::{Error, Result};
use crate::gp::{hyper_infer, GpHyperparams, GpPosterior, HyperMode, HyperPrior, SliceOptions, TrainingSet};
use crate::problems::{lhs, ProblemSpec};
use crate::quadrature::{averaged_log_joint, elbo, elbo_with_noise, elcbo, ElboStats};
use crate::variational::{
    kl_symmetrized, optimize_phi_in, whiten, AffineMap, BoundedTransform, EntropyNoise, MixturePosterior,
    OptimizeOptions, ParamBox,
};
use crate::{rng_from_seed, Rng};

/// Observation noise standard deviation attached to every (deterministic)
/// target value.
pub const OBS_NOISE: f64 = 1e-3;
/// Width (in raw log density) of the band of near-best training points eligible
/// as locations for new mixture components.
pub const INSERT_BAND: f64 = 10.0;
/// Offset below the current minimum used for non-finite targets.
pub const NONFINITE_OFFSET: f64 = 20.0;
/// Per-dimension depth below the best surrogate target beyond which targets
/// are log-compressed.
pub const LOW_TARGET_BAND: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub n_init: usize,
    pub n_per_iter: usize,
    pub anneal: AnnealConfig,
    pub beta_lcb: f64,
    pub n_stable: usize,
    pub n_max: usize,
    pub delta_sd: f64,
    /// Multiplied by `sqrt(d)` to give the KL tolerance.
    pub delta_kl_coeff: f64,
    pub seed: u64,
    /// Work on logit-transformed parameters so that the variational
    /// posterior cannot leak outside the hard box.
    pub bounded_transform: bool,
    /// Rotate and rescale the working space to the covariance of the
    /// variational posterior. Off by default: on multimodal targets the
    /// mixture covariance is dominated by the modes found so far.
    pub whitening: bool,
    /// Expected-log-joint spread across hyperparameter samples below which
    /// inference switches from sampling to optimization.
    pub hyper_switch_sd: f64,
    /// Samples per direction for the symmetrized KL.
    pub n_kl: usize,
    pub optimizer: OptimizeOptions,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n_init: 10,
            n_per_iter: 5,
            anneal: AnnealConfig::default(),
            beta_lcb: 3.0,
            n_stable: 8,
            n_max: 80,
            delta_sd: 0.1,
            delta_kl_coeff: 0.01,
            seed: 0,
            bounded_transform: true,
            whitening: false,
            hyper_switch_sd: 1.0,
            n_kl: 2000,
            optimizer: OptimizeOptions::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init < 2 {
            return Err(Error::Config("n_init must be >= 2".into()));
        }
        if self.n_per_iter < 1 || self.n_max < 1 || self.n_stable < 1 {
            return Err(Error::Config("n_per_iter, n_max and n_stable must be >= 1".into()));
        }
        if !(self.delta_sd > 0.0 && self.delta_kl_coeff > 0.0) {
            return Err(Error::Config("delta_sd and delta_kl_coeff must be positive".into()));
        }
        if !(self.beta_lcb >= 0.0) {
            return Err(Error::Config("beta_lcb must be >= 0".into()));
        }
        self.anneal.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iter: usize,
    pub temp: f64,
    pub elbo_mean: f64,
    pub elbo_sd: f64,
    pub elcbo: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub rho: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub total_evals: usize,
    pub warmup_active: bool,
    pub whitened: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Stable,
    Budget,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Stable => "stable",
            StopReason::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Variational posterior; densities and samples are in original coordinates.
    pub posterior: MixturePosterior,
    pub elbo_mean: f64,
    pub elbo_var: f64,
    pub history: Vec<IterationStats>,
    /// All evaluations in original coordinates with raw targets.
    pub training_set: TrainingSet,
    pub converged: bool,
    pub reason: StopReason,
}

impl RunResult {
    pub fn total_evals(&self) -> usize {
        self.training_set.len()
    }

    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// Mutable loop state.
pub struct EngineState {
    pub problem: ProblemSpec,
    pub cfg: EngineConfig,
    pub(crate) rng: Rng,
    /// Evaluations in original coordinates with raw targets.
    pub raw: TrainingSet,
    pub transform: Option<BoundedTransform>,
    /// Working-to-unbounded map (identity until the first whitening).
    pub map: AffineMap,
    pub(crate) work_lb: Vec<f64>,
    pub(crate) work_ub: Vec<f64>,
    pub(crate) work_plb: Vec<f64>,
    pub(crate) work_pub: Vec<f64>,
    pub q: MixturePosterior,
    pub gps: Vec<GpPosterior>,
    pub hyper_mode: HyperMode,
    pub temp: f64,
    pub stats: ElboStats,
    /// Completed iterations.
    pub t: usize,
    pub history: Vec<IterationStats>,
    pub warmup: bool,
    warmup_small_gains: usize,
    removed_last: bool,
    next_whiten: Option<usize>,
    whiten_gap: usize,
    whitened_once: bool,
}

fn bounding_box(map: &AffineMap, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = lo.len();
    let mut blo = vec![f64::INFINITY; d];
    let mut bhi = vec![f64::NEG_INFINITY; d];
    for corner in 0..(1usize << d) {
        let x: Vec<f64> = (0..d).map(|i| if corner >> i & 1 == 1 { hi[i] } else { lo[i] }).collect();
        let z = map.inverse_apply(&x);
        for i in 0..d {
            blo[i] = blo[i].min(z[i]);
            bhi[i] = bhi[i].max(z[i]);
        }
    }
    (blo, bhi)
}

fn evaluate(problem: &ProblemSpec, x: &[f64]) -> f64 {
    problem.eval(x)
}

impl EngineState {
    pub fn dim(&self) -> usize {
        self.problem.dim
    }

    pub fn total_evals(&self) -> usize {
        self.raw.len()
    }

    fn to_unbounded(&self, x: &[f64]) -> Vec<f64> {
        match &self.transform {
            None => x.to_vec(),
            Some(t) => t.forward(x),
        }
    }

    pub(crate) fn to_work(&self, x: &[f64]) -> Vec<f64> {
        self.map.inverse_apply(&self.to_unbounded(x))
    }

    pub(crate) fn to_original(&self, z: &[f64]) -> Vec<f64> {
        let u = self.map.apply(z);
        match &self.transform {
            None => u,
            Some(t) => t.inverse(&u),
        }
    }

    pub(crate) fn work_in_bounds(&self, z: &[f64]) -> bool {
        let x = self.to_original(z);
        match &self.transform {
            None => self.problem.in_hard_box(&x),
            // the logistic saturates far out; such points map onto the boundary
            Some(t) => x.iter().zip(t.lb.iter().zip(&t.ub)).all(|(v, (l, u))| v > l && v < u),
        }
    }

    /// Working training set at the current temperature.
    pub fn work_training_set(&self) -> TrainingSet {
        let log_jac = self.map.log_abs_det();
        let mut ts = TrainingSet::new(self.dim());
        // only the posterior is tempered; the change-of-variables terms are not
        let tempered = crate::annealing::anneal_targets(&self.raw.targets_raw, self.temp);
        for (x, h) in self.raw.inputs.iter().zip(tempered) {
            let u = self.to_unbounded(x);
            let jt = self.transform.as_ref().map_or(0.0, |t| t.log_abs_det_jacobian(&u));
            ts.targets_raw.push(h + jt + log_jac);
            ts.inputs.push(self.map.inverse_apply(&u));
        }
        compress_low_targets(&mut ts.targets_raw, LOW_TARGET_BAND * self.dim() as f64);
        ts.obs_noise = self.raw.obs_noise.clone();
        ts
    }

    fn hyper_prior(&self, ts: &TrainingSet) -> HyperPrior {
        HyperPrior::default_for(ts, &self.work_plb, &self.work_pub, &self.work_lb, &self.work_ub)
    }

    fn update_work_boxes(&mut self) {
        let p = &self.problem;
        let (hlo, hhi) = match &self.transform {
            None => (p.hard_lb.clone(), p.hard_ub.clone()),
            Some(t) => {
                let inset = |a: f64, b: f64, f: f64| a + f * (b - a);
                let lo: Vec<f64> = (0..p.dim).map(|i| inset(t.lb[i], t.ub[i], 1e-3)).collect();
                let hi: Vec<f64> = (0..p.dim).map(|i| inset(t.lb[i], t.ub[i], 1.0 - 1e-3)).collect();
                (t.forward(&lo), t.forward(&hi))
            }
        };
        let (plo, phi) = (self.to_unbounded(&p.plb), self.to_unbounded(&p.pub_));
        let (lb, ub) = bounding_box(&self.map, &hlo, &hhi);
        let (plb, pub_) = bounding_box(&self.map, &plo, &phi);
        self.work_lb = lb;
        self.work_ub = ub;
        self.work_plb = plb;
        self.work_pub = pub_;
    }

    /// Records a raw evaluation, clamping non-finite values below the current minimum.
    fn record(&mut self, x: Vec<f64>, value: f64) -> Result<()> {
        let v = if value.is_finite() {
            value
        } else {
            let floor = self
                .raw
                .targets_raw
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            let floor = if floor.is_finite() { floor } else { 0.0 };
            log::warn!("non-finite target at {x:?}; clamped to {}", floor - NONFINITE_OFFSET);
            floor - NONFINITE_OFFSET
        };
        if self.raw.contains(&x) {
            return Err(Error::invalid("duplicate evaluation point"));
        }
        self.raw.push(x, v, OBS_NOISE)
    }

    /// Hyperparameter inference and GP fits on the working training set.
    fn refit(&mut self, starts: Vec<GpHyperparams>, mode: HyperMode, burn_in: usize) -> Result<()> {
        let ts = self.work_training_set();
        let prior = self.hyper_prior(&ts);
        let opts = SliceOptions { burn_in, ..SliceOptions::default() };
        let hypers = hyper_infer(&ts, &prior, mode, &starts, &opts, &mut self.rng);
        let gps: Vec<GpPosterior> = hypers.iter().filter_map(|h| GpPosterior::fit(&ts, h).ok()).collect();
        if gps.is_empty() {
            return Err(Error::FitFailed { attempts: hypers.len() });
        }
        self.gps = gps;
        Ok(())
    }

    fn current_elbo(&mut self) -> Result<ElboStats> {
        elbo(&self.gps, &self.q, self.cfg.optimizer.n_entropy_final, &mut self.rng)
    }
}

/// Draws the initial design, evaluates it and fits the first surrogate.
pub fn initialize(problem: &ProblemSpec, cfg: &EngineConfig) -> Result<EngineState> {
    cfg.validate()?;
    problem.validate()?;
    let d = problem.dim;
    let mut rng = rng_from_seed(cfg.seed);
    let design = lhs(cfg.n_init, &problem.plb, &problem.pub_, &mut rng)?;
    let values: Vec<f64> = design.iter().map(|x| evaluate(problem, x)).collect();
    if values.iter().all(|v| !v.is_finite()) {
        return Err(Error::Config(format!(
            "log target of `{}` is non-finite at every initial point",
            problem.label
        )));
    }
    let transform = if cfg.bounded_transform {
        Some(BoundedTransform::new(problem.hard_lb.clone(), problem.hard_ub.clone())?)
    } else {
        None
    };
    let temp = temperature(&cfg.anneal, 1);
    let mut st = EngineState {
        problem: problem.clone(),
        cfg: cfg.clone(),
        rng,
        raw: TrainingSet::new(d),
        transform,
        map: AffineMap::identity(d),
        work_lb: Vec::new(),
        work_ub: Vec::new(),
        work_plb: Vec::new(),
        work_pub: Vec::new(),
        q: MixturePosterior::new(vec![1.0], vec![vec![0.0; d]], vec![1.0], vec![1.0; d])?,
        gps: Vec::new(),
        hyper_mode: HyperMode::Sample,
        temp,
        stats: ElboStats {
            expected_log_joint: 0.0,
            var_log_joint: 0.0,
            entropy: 0.0,
            entropy_grad: Vec::new(),
            elbo_mean: 0.0,
            elbo_var: 0.0,
        },
        t: 0,
        history: Vec::new(),
        warmup: true,
        warmup_small_gains: 0,
        removed_last: false,
        next_whiten: None,
        whiten_gap: 1,
        whitened_once: false,
    };
    st.update_work_boxes();
    let width: Vec<f64> = st.work_plb.iter().zip(&st.work_pub).map(|(l, u)| u - l).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let (i0, i1) = (order[0], order[1]);
    st.q = MixturePosterior::new(
        vec![0.5, 0.5],
        vec![st.to_work(&design[i0]), st.to_work(&design[i1])],
        vec![1.0, 1.0],
        width.iter().map(|w| 0.1 * w).collect(),
    )?;
    st.q.bounds = st.transform.clone();
    // evaluate in design order, so that clamping is deterministic
    let mut finite: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut bad: Vec<Vec<f64>> = Vec::new();
    for (x, v) in design.into_iter().zip(values) {
        if v.is_finite() {
            finite.push((x, v));
        } else {
            bad.push(x);
        }
    }
    for (x, v) in finite {
        st.record(x, v)?;
    }
    for x in bad {
        st.record(x, f64::NEG_INFINITY)?;
    }
    let ts = st.work_training_set();
    let prior = st.hyper_prior(&ts);
    let start = GpHyperparams::initial(&ts, &prior, &st.work_plb, &st.work_pub);
    st.refit(vec![start], HyperMode::Sample, 3)?;
    st.stats = st.current_elbo()?;
    Ok(st)
}

impl EngineState {
    /// One loop body; returns the statistics recorded for the iteration.
    pub fn iterate(&mut self) -> Result<IterationStats> {
        let t = self.t + 1;
        let q_prev = self.q.clone();
        let elbo_prev = self.stats.elbo_mean;

        // (a) active sampling
        let mut rng = std::mem::replace(&mut self.rng, rng_from_seed(0));
        let picks = self.select_work_points(self.cfg.n_per_iter, &mut rng);
        self.rng = rng;
        for z in &picks {
            let x = self.to_original(z);
            let v = evaluate(&self.problem, &x);
            self.record(x, v)?;
        }

        // (b) temperature
        let temp = temperature(&self.cfg.anneal, t);
        let ratio = self.temp / temp;
        self.temp = temp;
        let mut starts: Vec<GpHyperparams> = self.gps.iter().map(|g| g.hyper.rescaled_outputs(ratio)).collect();

        // (e, first half) whitening, which changes the working coordinates
        let mut whitened = false;
        let rho_prev = self.history.last().map(|h| h.rho).unwrap_or(f64::INFINITY);
        if self.cfg.whitening && !self.warmup {
            let due = match self.next_whiten {
                None => rho_prev <= 3.0,
                Some(n) => t >= n,
            };
            if due {
                let ts_old = self.work_training_set();
                match whiten(&self.q, &ts_old) {
                    Ok((qw, _, step)) => {
                        let mapped: Vec<GpHyperparams> =
                            self.gps.iter().map(|g| hyper_through_map(&g.hyper, &step)).collect();
                        self.map = qw.whitening.clone().unwrap_or_else(|| AffineMap::identity(self.dim()));
                        self.q = qw;
                        self.update_work_boxes();
                        whitened = true;
                        self.whitened_once = true;
                        self.whiten_gap *= 2;
                        self.next_whiten = Some(t + self.whiten_gap);
                        let ts = self.work_training_set();
                        let prior = self.hyper_prior(&ts);
                        starts = mapped;
                        starts.push(GpHyperparams::initial(&ts, &prior, &self.work_plb, &self.work_pub));
                    }
                    Err(e) => {
                        log::warn!("whitening skipped: {e}");
                        self.next_whiten = Some(t + self.whiten_gap.max(1));
                    }
                }
            }
        }

        // (c) hyperparameters and GP fits
        let mode = if whitened { HyperMode::Optimize } else { self.hyper_mode };
        self.refit(starts, mode, 0)?;
        if whitened && self.hyper_mode == HyperMode::Sample {
            let starts = self.gps.iter().map(|g| g.hyper.clone()).collect();
            self.refit(starts, HyperMode::Sample, 1)?;
        }

        // (d, e) variational optimization and ELBO
        let mut rng = std::mem::replace(&mut self.rng, rng_from_seed(0));
        let bounds = ParamBox { lo: self.work_lb.clone(), hi: self.work_ub.clone() };
        match optimize_phi_in(&self.gps, &self.q, &self.cfg.optimizer, Some(&bounds), &mut rng) {
            Ok(q) => self.q = q,
            Err(e) => log::warn!("variational optimization failed at iteration {t}: {e}"),
        }
        self.rng = rng;
        self.stats = self.current_elbo()?;
        let mut elcbo_now = elcbo(&self.stats, self.cfg.beta_lcb);
        if self.hyper_mode == HyperMode::Sample {
            let (_, _, sd) = averaged_log_joint(&self.gps, &self.q)?;
            if sd < self.cfg.hyper_switch_sd {
                self.hyper_mode = HyperMode::Optimize;
            }
        }

        // (f) warm-up bookkeeping and adaptive K
        let prev_elcbo = self.history.last().map(|h| h.elcbo);
        if self.warmup {
            if let Some(p) = prev_elcbo {
                if elcbo_now - p < 1.0 {
                    self.warmup_small_gains += 1;
                } else {
                    self.warmup_small_gains = 0;
                }
            }
            if self.warmup_small_gains >= 3 {
                self.warmup = false;
            }
        } else {
            let changed = self.adapt_k(elcbo_now, self.insertion_point())?;
            if changed {
                self.stats = self.current_elbo()?;
                elcbo_now = elcbo(&self.stats, self.cfg.beta_lcb);
            }
        }

        // (g) reliability
        let (rho, (rho1, rho2, rho3)) = if self.t == 0 {
            (f64::INFINITY, (f64::INFINITY, self.stats.elbo_sd() / self.cfg.delta_sd, f64::INFINITY))
        } else {
            let kl = kl_symmetrized(&self.q, &q_prev, self.cfg.n_kl, &mut self.rng);
            reliability_index(
                self.stats.elbo_mean,
                elbo_prev,
                self.stats.elbo_var,
                kl,
                self.cfg.delta_sd,
                self.cfg.delta_kl_coeff * (self.dim() as f64).sqrt(),
            )
        };

        self.t = t;
        let stats = IterationStats {
            iter: t,
            temp,
            elbo_mean: self.stats.elbo_mean,
            elbo_sd: self.stats.elbo_sd(),
            elcbo: elcbo_now,
            rho1,
            rho2,
            rho3,
            rho,
            k: self.q.n_components(),
            total_evals: self.total_evals(),
            warmup_active: self.warmup,
            whitened,
        };
        log::debug!("{stats:?}");
        self.history.push(stats.clone());
        Ok(stats)
    }

    /// Training input where a new component is most needed: among points whose
    /// observed (untempered) log target is within `INSERT_BAND` of the best,
    /// the one the variational posterior covers least relative to the
    /// surrogate (largest `f̄(z) - log q(z)`).
    fn insertion_point(&self) -> Option<Vec<f64>> {
        let top = self.raw.targets_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gp = &self.gps[0];
        let mut best: Option<(Vec<f64>, f64)> = None;
        for (x, &h) in self.raw.inputs.iter().zip(&self.raw.targets_raw) {
            if h < top - INSERT_BAND {
                continue;
            }
            let z = self.to_work(x);
            let s = gp.predict_mean(&z) - self.q.inner_log_pdf(&z);
            if s.is_finite() && best.as_ref().is_none_or(|b| s > b.1) {
                best = Some((z, s));
            }
        }
        best.map(|b| b.0)
    }

    /// Adds or removes mixture components; returns whether `q` changed.
    fn adapt_k(&mut self, elcbo_now: f64, location: Option<Vec<f64>>) -> Result<bool> {
        let mut changed = false;
        let n = self.history.len();
        let can_add = n >= 4
            && !self.removed_last
            && self.history[n - 4..].iter().all(|h| elcbo_now > h.elcbo);
        if can_add {
            if let Some(loc) = location {
                self.q = self.q.add_component(&loc)?;
                changed = true;
            }
        }
        // removal sweep
        let noise = EntropyNoise::draw(self.q.n_components(), self.dim(), self.cfg.optimizer.n_entropy_final, &mut self.rng);
        let mut eligible: Vec<usize> = (0..self.q.n_components()).filter(|&k| self.q.weights[k] < 0.01).collect();
        eligible.shuffle(&mut self.rng);
        let mut removed_any = false;
        let mut removed_idx: Vec<usize> = Vec::new();
        for k0 in eligible {
            if self.q.n_components() < 2 {
                break;
            }
            // indices shift down as components are removed
            let k = k0 - removed_idx.iter().filter(|&&r| r < k0).count();
            let base = elbo_with_noise(&self.gps, &self.q, &trim_noise(&noise, &self.q))?;
            let cand = self.q.remove_component(k)?;
            let after = elbo_with_noise(&self.gps, &cand, &trim_noise(&noise, &cand))?;
            let delta = elcbo(&after, self.cfg.beta_lcb) - elcbo(&base, self.cfg.beta_lcb);
            if delta.abs() < 0.01 {
                self.q = cand;
                removed_any = true;
                removed_idx.push(k0);
                changed = true;
            }
        }
        self.removed_last = removed_any;
        Ok(changed)
    }
}

/// Replaces every value more than `band` below the maximum by
/// `floor - ln(1 + floor - v)`, with `floor = max - band`. Continuous with
/// unit slope at the floor and strictly increasing.
pub fn compress_low_targets(values: &mut [f64], band: f64) {
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = top - band;
    for v in values.iter_mut() {
        if *v < floor {
            *v = floor - (floor - *v).ln_1p();
        }
    }
}

/// Carries hyperparameters into new working coordinates `z_old = A z_new + b`.
///
/// The kernel and mean quadratic forms are pulled back through `A` and their
/// diagonals kept; the prior variance `k(a, a)` is preserved and the constant
/// log-Jacobian shift of the targets is added to the mean maximum.
fn hyper_through_map(h: &GpHyperparams, step: &AffineMap) -> GpHyperparams {
    let d = h.dim();
    let a = step.matrix();
    let pulled_diag = |log_scales: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|j| {
                let prec: f64 = (0..d).map(|i| a[(i, j)].powi(2) * (-2.0 * log_scales[i]).exp()).sum();
                -0.5 * prec.ln()
            })
            .collect()
    };
    let log_l = pulled_diag(&h.log_input_scales);
    let log_r = pulled_diag(&h.log_mean_scales);
    let shift_l: f64 = h.log_input_scales.iter().sum::<f64>() - log_l.iter().sum::<f64>();
    GpHyperparams {
        log_output_scale: h.log_output_scale + 0.5 * shift_l,
        log_input_scales: log_l,
        log_base_noise: h.log_base_noise,
        mean_max: h.mean_max + step.log_abs_det(),
        mean_loc: step.inverse_apply(&h.mean_loc),
        log_mean_scales: log_r,
    }
}

fn trim_noise(noise: &EntropyNoise, q: &MixturePosterior) -> EntropyNoise {
    let mut eps = noise.eps.clone();
    eps.truncate(q.n_components());
    while eps.len() < q.n_components() {
        eps.push(noise.eps[0].clone());
    }
    EntropyNoise { eps }
}

/// `ρ = (ρ1 + ρ2 + ρ3) / 3` with `ρ1 = |ΔE[ELBO]| / Δ_SD`, `ρ2 = sqrt(V[ELBO]) / Δ_SD`
/// and `ρ3 = sym-KL / Δ_KL`, where `sym_kl` is `½ (KL(a‖b) + KL(b‖a))`.
pub fn reliability_index(
    elbo_now: f64,
    elbo_prev: f64,
    elbo_var: f64,
    sym_kl: f64,
    delta_sd: f64,
    delta_kl: f64,
) -> (f64, (f64, f64, f64)) {
    let rho1 = (elbo_now - elbo_prev).abs() / delta_sd;
    let rho2 = elbo_var.max(0.0).sqrt() / delta_sd;
    let rho3 = sym_kl.max(0.0) / delta_kl;
    ((rho1 + rho2 + rho3) / 3.0, (rho1, rho2, rho3))
}

/// Stability window check on the history.
pub fn is_stable(history: &[IterationStats], cfg: &EngineConfig) -> bool {
    let n = history.len();
    if n < cfg.n_stable {
        return false;
    }
    let window = &history[n - cfg.n_stable..];
    let current = &history[n - 1];
    if !(current.rho <= 1.0) {
        return false;
    }
    if window.iter().any(|h| !cfg.anneal.finished(h.iter) || h.temp != 1.0) {
        return false;
    }
    window.iter().filter(|h| !(h.rho <= 1.0)).count() <= 1
}

pub fn run(problem: &ProblemSpec, cfg: &EngineConfig) -> Result<RunResult> {
    let mut st = initialize(problem, cfg)?;
    let reason = loop {
        st.iterate()?;
        if is_stable(&st.history, cfg) {
            break StopReason::Stable;
        }
        if st.t >= cfg.n_max {
            break StopReason::Budget;
        }
    };
    Ok(RunResult {
        posterior: st.q.clone(),
        elbo_mean: st.stats.elbo_mean,
        elbo_var: st.stats.elbo_var,
        history: st.history,
        training_set: st.raw,
        converged: reason == StopReason::Stable,
        reason,
    })
}
