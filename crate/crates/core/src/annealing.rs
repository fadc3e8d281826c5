//! Temperature schedules and the annealing transform of log-target values.
//!
//! The inverse temperature follows a (possibly repeated) linear ramp: within
//! each of `cycles` cycles of length `total_iters / cycles`, `beta` grows
//! linearly from 0 to 1 over the first fraction `control` of the cycle and
//! stays at 1 for the remainder. Past `total_iters` the temperature is 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Temperature fixed at 1 (plain VBMC).
    Constant,
    /// A single ramp from `temp_max` down to 1.
    Monotonic,
    /// `cycles` ramps, each restarting at `temp_max`.
    Cyclical,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Constant => "constant",
            Variant::Monotonic => "monotonic",
            Variant::Cyclical => "cyclical",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Variant::Constant),
            "monotonic" => Ok(Variant::Monotonic),
            "cyclical" => Ok(Variant::Cyclical),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected constant, monotonic or cyclical)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealConfig {
    pub variant: Variant,
    /// Number of iterations covered by the schedule.
    pub total_iters: usize,
    pub cycles: usize,
    /// Fraction of each cycle spent ramping `beta` from 0 to 1.
    pub control: f64,
    pub temp_min: f64,
    pub temp_max: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self::cyclical(40, 5)
    }
}

impl AnnealConfig {
    pub fn constant() -> Self {
        AnnealConfig {
            variant: Variant::Constant,
            total_iters: 40,
            cycles: 1,
            control: 0.5,
            temp_min: 1.0,
            temp_max: 50.0,
        }
    }

    pub fn monotonic(total_iters: usize) -> Self {
        AnnealConfig {
            variant: Variant::Monotonic,
            total_iters,
            cycles: 1,
            ..Self::constant()
        }
    }

    pub fn cyclical(total_iters: usize, cycles: usize) -> Self {
        AnnealConfig {
            variant: Variant::Cyclical,
            total_iters,
            cycles,
            ..Self::constant()
        }
    }

    /// Schedule for `variant` using the default horizon (T = 40, M = 5 for cyclical).
    pub fn for_variant(variant: Variant) -> Self {
        match variant {
            Variant::Constant => Self::constant(),
            Variant::Monotonic => Self::monotonic(40),
            Variant::Cyclical => Self::cyclical(40, 5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters < 1 {
            return Err(Error::Config("anneal.total_iters must be >= 1".into()));
        }
        if self.cycles < 1 {
            return Err(Error::Config("anneal.cycles must be >= 1".into()));
        }
        if self.variant == Variant::Monotonic && self.cycles != 1 {
            return Err(Error::Config("monotonic schedule requires cycles = 1".into()));
        }
        if !(self.control > 0.0 && self.control <= 1.0) {
            return Err(Error::Config("anneal.control must lie in (0, 1]".into()));
        }
        if !(self.temp_min >= 1.0 && self.temp_min <= self.temp_max && self.temp_max.is_finite()) {
            return Err(Error::Config(
                "anneal temperatures must satisfy 1 <= temp_min <= temp_max < inf".into(),
            ));
        }
        Ok(())
    }

    /// True once iteration `t` lies past the schedule (temperature pinned at 1).
    pub fn finished(&self, t: usize) -> bool {
        self.variant == Variant::Constant || t > self.total_iters
    }
}

/// Position within the current cycle, in [0, 1).
pub fn cycle_position(cfg: &AnnealConfig, t: usize) -> f64 {
    let t = t.max(1);
    let cycle_len = cfg.total_iters as f64 / cfg.cycles as f64;
    let period = cycle_len.ceil() as usize;
    ((t - 1) % period) as f64 / cycle_len
}

/// Inverse temperature at iteration `t` (1-based).
pub fn beta_t(cfg: &AnnealConfig, t: usize) -> f64 {
    if cfg.variant == Variant::Constant || t > cfg.total_iters {
        return 1.0;
    }
    let tau = cycle_position(cfg, t);
    if tau <= cfg.control {
        (tau / cfg.control).clamp(0.0, 1.0)
    } else {
        1.0
    }
}

pub fn temperature(cfg: &AnnealConfig, t: usize) -> f64 {
    if cfg.variant == Variant::Constant {
        return 1.0;
    }
    let beta = beta_t(cfg, t);
    if beta <= 0.0 {
        return cfg.temp_max;
    }
    (1.0 / beta).clamp(cfg.temp_min, cfg.temp_max)
}

/// Scales raw log-target values by `1 / temp`.
pub fn anneal_targets(targets_raw: &[f64], temp: f64) -> Vec<f64> {
    if temp == 1.0 {
        return targets_raw.to_vec();
    }
    let inv = 1.0 / temp;
    targets_raw.iter().map(|h| h * inv).collect()
}
