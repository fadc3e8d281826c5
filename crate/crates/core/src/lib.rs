//! Cyclical Variational Bayes Monte Carlo.
//!
//! Estimates multi-modal posterior distributions of expensive black-box
//! log-densities with a small number of evaluations. A Gaussian-process
//! surrogate of the (annealed) log unnormalized posterior is combined with a
//! Gaussian-mixture variational posterior; the ELBO is computed by Bayesian
//! quadrature and new evaluations are chosen by active sampling. A
//! temperature schedule (constant, monotonic or cyclical) flattens the target
//! during exploration phases.
//!
//! The crate also ships the benchmark posteriors (Himmelblau, two mass-spring
//! systems), a brute-force grid oracle for low-dimensional problems and a
//! batch CLI (`cvbmc run | oracle | compare`).

pub mod annealing;
pub mod cli;
pub mod engine;
pub mod error;
pub mod gp;
pub mod linalg;
pub mod oracle;
pub mod problems;
pub mod quadrature;
pub mod variational;

pub use annealing::{AnnealConfig, Variant};
pub use engine::{EngineConfig, IterationStats, RunResult, StopReason};
pub use error::{Error, Result};
pub use gp::{GpHyperparams, GpPosterior, HyperPrior, TrainingSet};
pub use problems::ProblemSpec;
pub use quadrature::ElboStats;
pub use variational::MixturePosterior;

/// Deterministic random number generator used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
