//! Batch front end behind the `cvbmc` binary.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! variant = "cyclical"          # constant | monotonic | cyclical
//! seeds = [1, 2, 3]
//! out_dir = "out/himmelblau"
//! oracle_resolution = 200
//!
//! [problem]
//! kind = "himmelblau"           # himmelblau | spring_multimodal | spring_unimodal
//!
//! [engine]
//! n_max = 80
//! ```
//!
//! Every key except `problem` is optional; missing keys take the values of
//! [`RunConfig::default_for`]. Unknown keys are rejected.
//!
//! `run` writes one subdirectory `seed_<s>` per seed holding `history.csv`,
//! `posterior.json`, `samples.csv` and `summary.json`. `oracle` writes
//! `oracle_grid.csv`, `oracle_modes.csv` and `oracle_ecdf_<i>.csv`.
//! `compare` scores one seed directory against an oracle directory and
//! writes `compare.json`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annealing::{AnnealConfig, Variant};
use crate::engine::{self, EngineConfig, RunResult};
use crate::error::{Error, Result};
use crate::oracle::{self, Distribution, Ecdf, GridOracle, WeightedSamples, MODE_MASS_FLOOR, MODE_RADIUS};
use crate::problems::{self, ProblemSpec};
use crate::rng_from_seed;

/// Posterior draws written to `samples.csv` and used for the summary moments.
pub const N_POSTERIOR_SAMPLES: usize = 300_000;
/// Ball mass at an oracle mode above which `compare` counts it as recovered.
pub const RECOVERY_MASS: f64 = MODE_MASS_FLOOR;
pub const THREADS_ENV: &str = "CVBMC_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Mixes the run seed into a separate stream for posterior sampling.
const SAMPLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    Himmelblau,
    SpringMultimodal {
        /// Stiffness multipliers used to synthesize the observed frequencies.
        #[serde(default = "default_theta_true")]
        theta_true: Vec<f64>,
    },
    SpringUnimodal {
        /// Seed of the synthetic frequency measurements.
        #[serde(default = "default_data_seed")]
        data_seed: u64,
    },
}

fn default_theta_true() -> Vec<f64> {
    vec![1.0, 1.0]
}

fn default_data_seed() -> u64 {
    problems::UNIMODAL_DATA_SEED
}

impl ProblemConfig {
    pub fn build(&self) -> Result<ProblemSpec> {
        match self {
            ProblemConfig::Himmelblau => Ok(problems::himmelblau_problem()),
            ProblemConfig::SpringMultimodal { theta_true } => problems::multimodal_spring_problem(theta_true)
                .map_err(|e| Error::Config(format!("problem.theta_true: {e}"))),
            ProblemConfig::SpringUnimodal { data_seed } => Ok(problems::unimodal_spring_problem(*data_seed)),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ProblemConfig::Himmelblau => "himmelblau",
            ProblemConfig::SpringMultimodal { .. } => "spring_multimodal",
            ProblemConfig::SpringUnimodal { .. } => "spring_unimodal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    /// Selects the temperature schedule; overrides `engine.anneal.variant`.
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Cells per dimension of the grid oracle.
    #[serde(default = "default_resolution")]
    pub oracle_resolution: usize,
    /// `engine.seed` is ignored; each entry of `seeds` is run instead.
    #[serde(default)]
    pub engine: EngineConfig,
}

fn default_variant() -> Variant {
    Variant::Cyclical
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_resolution() -> usize {
    128
}

impl RunConfig {
    pub fn default_for(problem: ProblemConfig) -> Self {
        RunConfig {
            problem,
            variant: default_variant(),
            seeds: default_seeds(),
            out_dir: default_out_dir(),
            oracle_resolution: default_resolution(),
            engine: EngineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.oracle_resolution < oracle::MIN_RESOLUTION {
            return Err(Error::Config(format!(
                "oracle_resolution must be >= {}, got {}",
                oracle::MIN_RESOLUTION,
                self.oracle_resolution
            )));
        }
        self.problem.build()?;
        self.engine_config(self.seeds[0]).validate()
    }

    /// Engine settings for one seed, with the schedule taken from `variant`.
    pub fn engine_config(&self, seed: u64) -> EngineConfig {
        let base = self.engine.anneal;
        let anneal = match self.variant {
            Variant::Constant => AnnealConfig { variant: Variant::Constant, ..base },
            Variant::Monotonic => AnnealConfig { variant: Variant::Monotonic, cycles: 1, ..base },
            Variant::Cyclical => AnnealConfig { variant: Variant::Cyclical, ..base },
        };
        EngineConfig { anneal, seed, ..self.engine.clone() }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }
}

/// Parses a TOML run configuration. Unknown keys are reported together with
/// the closest valid key.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(describe_toml_error(&e)))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

fn describe_toml_error(e: &toml::de::Error) -> String {
    let msg = e.message().to_string();
    let Some((unknown, expected)) = unknown_field(&msg) else {
        return e.to_string().trim_end().to_string();
    };
    let nearest = expected
        .iter()
        .min_by_key(|k| strsim::levenshtein(&unknown, k))
        .cloned();
    match nearest {
        Some(k) => format!("unknown key `{unknown}`; did you mean `{k}`?\n{}", e.to_string().trim_end()),
        None => e.to_string().trim_end().to_string(),
    }
}

/// Extracts the offending key and the list of valid keys from a serde
/// "unknown field" message.
fn unknown_field(msg: &str) -> Option<(String, Vec<String>)> {
    let rest = msg.split("unknown field `").nth(1)?;
    let (name, tail) = rest.split_once('`')?;
    let expected = tail
        .split('`')
        .skip(1)
        .step_by(2)
        .map(str::to_string)
        .collect();
    Some((name.to_string(), expected))
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub problem: String,
    pub variant: Variant,
    pub seed: u64,
    pub total_evals: usize,
    pub iterations: usize,
    pub converged: bool,
    pub reason: String,
    pub elbo_mean: f64,
    pub elbo_var: f64,
    pub n_samples: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

/// Executes every seed of `cfg`, each into its own subdirectory of
/// `cfg.out_dir`. Seeds run in parallel; a failed seed leaves no files behind.
pub fn cmd_run(cfg: &RunConfig) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let pool = thread_pool()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let results: Vec<Result<RunSummary>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let dir = seed_dir(&cfg.out_dir, seed);
                let out = run_seed(cfg, seed, &dir);
                if out.is_err() {
                    let _ = fs::remove_dir_all(&dir);
                }
                out
            })
            .collect()
    });
    results.into_iter().collect()
}

fn run_seed(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<RunSummary> {
    let problem = cfg.problem.build()?;
    let ecfg = cfg.engine_config(seed);
    log::info!("{} {} seed {seed}: starting", problem.label, cfg.variant.as_str());
    let result = engine::run(&problem, &ecfg)?;
    log::info!(
        "{} {} seed {seed}: {} evaluations, {} iterations, {}",
        problem.label,
        cfg.variant.as_str(),
        result.total_evals(),
        result.history.len(),
        result.reason.as_str()
    );
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    write_outputs(cfg, seed, &result, dir)
}

/// Writes the four per-seed result files.
pub fn write_outputs(cfg: &RunConfig, seed: u64, result: &RunResult, dir: &Path) -> Result<RunSummary> {
    write_history(result, &dir.join("history.csv"))?;
    write_json(&dir.join("posterior.json"), &PosteriorFile::from(result))?;

    let mut rng = rng_from_seed(seed ^ SAMPLE_STREAM);
    let draws: Vec<Vec<f64>> = result
        .posterior
        .sample(N_POSTERIOR_SAMPLES, &mut rng)
        .into_iter()
        .map(|(x, _)| x)
        .collect();
    write_rows(&dir.join("samples.csv"), &dim_header(draws[0].len()), draws.iter().map(|x| x.as_slice()))?;

    let (mean, cov) = WeightedSamples::uniform(draws)?.mean_cov();
    let summary = RunSummary {
        problem: cfg.problem.label().to_string(),
        variant: cfg.variant,
        seed,
        total_evals: result.total_evals(),
        iterations: result.history.len(),
        converged: result.converged,
        reason: result.reason.as_str().to_string(),
        elbo_mean: result.elbo_mean,
        elbo_var: result.elbo_var,
        n_samples: N_POSTERIOR_SAMPLES,
        mean,
        cov,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct PosteriorFile<'a> {
    weights: &'a [f64],
    means: &'a [Vec<f64>],
    scales: &'a [f64],
    length_scales: &'a [f64],
    whitening: &'a Option<crate::variational::AffineMap>,
    bounds: &'a Option<crate::variational::BoundedTransform>,
    elbo_mean: f64,
    elbo_var: f64,
}

impl<'a> From<&'a RunResult> for PosteriorFile<'a> {
    fn from(r: &'a RunResult) -> Self {
        let q = &r.posterior;
        PosteriorFile {
            weights: &q.weights,
            means: &q.means,
            scales: &q.scales,
            length_scales: &q.length_scales,
            whitening: &q.whitening,
            bounds: &q.bounds,
            elbo_mean: r.elbo_mean,
            elbo_var: r.elbo_var,
        }
    }
}

const HISTORY_HEADER: &str =
    "iter,temp,elbo_mean,elbo_sd,elcbo,rho1,rho2,rho3,rho,K,total_evals,warmup_active,whitened";

fn write_history(result: &RunResult, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{HISTORY_HEADER}")?;
    for s in &result.history {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.iter,
            fmt_f(s.temp),
            fmt_f(s.elbo_mean),
            fmt_f(s.elbo_sd),
            fmt_f(s.elcbo),
            fmt_f(s.rho1),
            fmt_f(s.rho2),
            fmt_f(s.rho3),
            fmt_f(s.rho),
            s.k,
            s.total_evals,
            s.warmup_active,
            s.whitened
        )?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn dim_header(d: usize) -> String {
    (0..d).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
}

fn write_rows<'a>(path: &Path, header: &str, rows: impl Iterator<Item = &'a [f64]>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for row in rows {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            write!(line, "{v:.16e}").expect("write to string");
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a numeric CSV with a header row.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), n + 2)))?;
        if row.len() != header.len() {
            return Err(Error::invalid(format!("{}:{}: expected {} columns", path.display(), n + 2, header.len())));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Builds the grid oracle for `cfg` and writes it to `out_dir`.
///
/// `oracle_grid.csv` lists only cells whose normalized mass is nonzero.
pub fn cmd_oracle(cfg: &RunConfig, out_dir: &Path) -> Result<GridOracle> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    if problem.dim > oracle::MAX_GRID_DIM {
        return Err(Error::Config(format!("grid oracle supports at most {} dimensions", oracle::MAX_GRID_DIM)));
    }
    let grid = oracle::grid_posterior(&problem, cfg.oracle_resolution)?;
    fs::create_dir_all(out_dir)?;
    let written = write_oracle(&grid, out_dir);
    if written.is_err() {
        for name in oracle_file_names(grid.dim()) {
            let _ = fs::remove_file(out_dir.join(name));
        }
    }
    written.map(|_| grid)
}

fn oracle_file_names(d: usize) -> Vec<String> {
    let mut v = vec!["oracle_grid.csv".to_string(), "oracle_modes.csv".to_string()];
    v.extend((0..d).map(|i| format!("oracle_ecdf_{i}.csv")));
    v
}

fn write_oracle(grid: &GridOracle, out_dir: &Path) -> Result<()> {
    let d = grid.dim();
    let header = format!("{},log_target,mass", dim_header(d));
    let rows: Vec<Vec<f64>> = (0..grid.n_cells())
        .filter(|&i| grid.cell_mass[i] > 0.0)
        .map(|i| {
            let mut r = grid.midpoint(i);
            r.push(grid.log_values[i]);
            r.push(grid.cell_mass[i]);
            r
        })
        .collect();
    write_rows(&out_dir.join("oracle_grid.csv"), &header, rows.iter().map(|r| r.as_slice()))?;

    let (_, modes) = oracle::mode_count(grid, MODE_MASS_FLOOR);
    let rows: Vec<Vec<f64>> = modes
        .iter()
        .map(|m| {
            let mut r = m.clone();
            r.push(grid.mass_in_ball(m, MODE_RADIUS));
            r
        })
        .collect();
    let header = format!("{},ball_mass", dim_header(d));
    write_rows(&out_dir.join("oracle_modes.csv"), &header, rows.iter().map(|r| r.as_slice()))?;

    for i in 0..d {
        let e = grid.marginal_ecdf(i);
        let rows: Vec<[f64; 2]> = e.xs.iter().zip(&e.fs).map(|(x, f)| [*x, *f]).collect();
        write_rows(&out_dir.join(format!("oracle_ecdf_{i}.csv")), "x,cdf", rows.iter().map(|r| r.as_slice()))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub location: Vec<f64>,
    pub oracle_mass: f64,
    pub run_mass: f64,
    pub recovered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub oracle_modes: usize,
    pub modes_recovered: usize,
    pub mass_threshold: f64,
    pub radius: f64,
    pub modes: Vec<ModeReport>,
    /// Sup distance between run and oracle marginal CDFs, per dimension.
    pub ecdf_distance: Vec<f64>,
    pub run_mean: Vec<f64>,
    pub oracle_mean: Vec<f64>,
    pub mean_delta: Vec<f64>,
    pub run_cov: Vec<f64>,
    pub oracle_cov: Vec<f64>,
    pub cov_delta: Vec<f64>,
}

/// Mean and coefficient of variation of a piecewise-linear marginal CDF.
fn ecdf_moments(e: &Ecdf) -> (f64, f64) {
    let mut mean = 0.0;
    let mut second = 0.0;
    for j in 1..e.xs.len() {
        let m = e.fs[j] - e.fs[j - 1];
        let x = 0.5 * (e.xs[j] + e.xs[j - 1]);
        mean += m * x;
        second += m * x * x;
    }
    let var = (second - mean * mean).max(0.0);
    (mean, var.sqrt() / mean.abs())
}

/// Scores the posterior samples of one run directory against an oracle
/// directory and writes `compare.json` into the run directory.
pub fn cmd_compare(run_dir: &Path, oracle_dir: &Path) -> Result<CompareReport> {
    let report = compare_dirs(run_dir, oracle_dir)?;
    write_json(&run_dir.join("compare.json"), &report)?;
    Ok(report)
}

pub fn compare_dirs(run_dir: &Path, oracle_dir: &Path) -> Result<CompareReport> {
    let (_, samples) = read_rows(&run_dir.join("samples.csv"))?;
    if samples.is_empty() {
        return Err(Error::invalid("samples.csv holds no draws"));
    }
    let d = samples[0].len();
    let run = WeightedSamples::uniform(samples)?;
    let (run_mean, run_cov) = run.mean_cov();

    let (_, mode_rows) = read_rows(&oracle_dir.join("oracle_modes.csv"))?;
    let modes: Vec<ModeReport> = mode_rows
        .iter()
        .map(|r| {
            let location = r[..d].to_vec();
            let run_mass = run.mass_in_ball(&location, MODE_RADIUS);
            ModeReport { oracle_mass: r[d], run_mass, recovered: run_mass >= RECOVERY_MASS, location }
        })
        .collect();

    let mut ecdf_distance = Vec::with_capacity(d);
    let mut oracle_mean = Vec::with_capacity(d);
    let mut oracle_cov = Vec::with_capacity(d);
    for i in 0..d {
        let (_, rows) = read_rows(&oracle_dir.join(format!("oracle_ecdf_{i}.csv")))?;
        let e = Ecdf { xs: rows.iter().map(|r| r[0]).collect(), fs: rows.iter().map(|r| r[1]).collect(), linear: true };
        ecdf_distance.push(oracle::sup_ecdf_distance(&run.marginal_ecdf(i), &e));
        let (m, c) = ecdf_moments(&e);
        oracle_mean.push(m);
        oracle_cov.push(c);
    }
    let mean_delta = run_mean.iter().zip(&oracle_mean).map(|(a, b)| a - b).collect();
    let cov_delta = run_cov.iter().zip(&oracle_cov).map(|(a, b)| a - b).collect();
    Ok(CompareReport {
        oracle_modes: modes.len(),
        modes_recovered: modes.iter().filter(|m| m.recovered).count(),
        mass_threshold: RECOVERY_MASS,
        radius: MODE_RADIUS,
        modes,
        ecdf_distance,
        run_mean,
        oracle_mean,
        mean_delta,
        run_cov,
        oracle_cov,
        cov_delta,
    })
}
