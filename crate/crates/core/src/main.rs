use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cvbmc::cli::{self, RunConfig};
use cvbmc::{Result, Variant};

#[derive(Parser)]
#[command(name = "cvbmc", version, about = "Cyclical variational Bayes Monte Carlo")]
struct Args {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the engine for every configured seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds (overrides `seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        variant: Option<String>,
    },
    /// Build the grid oracle of the configured problem.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a seed directory against an oracle directory.
    Compare { run_dir: PathBuf, oracle_dir: PathBuf },
}

fn load(config: &PathBuf, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = cli::load_config(config)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { config, out, seeds, variant } => {
            let mut cfg = load(&config, out)?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            if let Some(v) = variant {
                cfg.variant = v.parse::<Variant>()?;
            }
            for s in cli::cmd_run(&cfg)? {
                println!(
                    "seed {}: {} evaluations, {} iterations, {}",
                    s.seed, s.total_evals, s.iterations, s.reason
                );
            }
        }
        Command::Oracle { config, out } => {
            let cfg = load(&config, out)?;
            let grid = cli::cmd_oracle(&cfg, &cfg.out_dir)?;
            println!("{} cells written to {}", grid.n_cells(), cfg.out_dir.display());
        }
        Command::Compare { run_dir, oracle_dir } => {
            let r = cli::cmd_compare(&run_dir, &oracle_dir)?;
            println!(
                "{}/{} modes recovered, max ECDF distance {:.4}",
                r.modes_recovered,
                r.oracle_modes,
                r.ecdf_distance.iter().cloned().fold(0.0, f64::max)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match dispatch(args.cmd) {
        Ok(()) => ExitCode::from(cli::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
