//! The `nse-afs` command line.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use nse_afs::config::Config;
use nse_afs::experiments::{plot_data, run_suite, write_plot_data, write_suite, Method};

use crate::{ApiError, SessionStore};

#[derive(Debug, Parser)]
#[command(name = "nse-afs", version, about = "Learn NSE penalties from mixed human feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a method x budget suite and write results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated; overrides the config's method list.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check a config file and print what it describes.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Flatten a results directory into one long CSV for plotting.
    Plotdata {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve learning sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        bind: SocketAddr,
        /// Append-only session logs; existing logs are replayed on start.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] nse_afs::Error),
    #[error(transparent)]
    Api(#[from] ApiError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{failed} of {total} suite cells failed")]
    CellsFailed { failed: usize, total: usize },
}

fn load(path: &PathBuf) -> Result<Config, CliError> {
    Ok(Config::from_path(path)?)
}

/// Executes one command, writing human-readable output to `out`.
pub fn execute(command: Command, out: &mut impl Write) -> Result<(), CliError> {
    match command {
        Command::Run { config, methods, budgets, out: dir, seed, jobs } => {
            let mut cfg = load(&config)?;
            if let Some(m) = methods {
                cfg.experiment.methods = m;
            }
            if let Some(b) = budgets {
                cfg.experiment.budgets = b;
            }
            if let Some(s) = seed {
                cfg.experiment.seed = s;
            }
            cfg.validate()?;
            let methods: Vec<Method> = cfg.methods()?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let suite = run_suite(&cfg, &methods, &cfg.experiment.budgets, jobs)?;
            write_suite(&dir, &suite)?;
            writeln!(out, "{:<24} {:>8} {:>12} {:>10} {:>12} {:>10}", "method", "budget", "penalty", "stderr", "cost", "stderr")?;
            for r in suite.rows() {
                writeln!(
                    out,
                    "{:<24} {:>8} {:>12.4} {:>10.4} {:>12.4} {:>10.4}",
                    r.method, r.budget, r.mean_penalty, r.stderr_penalty, r.mean_cost, r.stderr_cost
                )?;
            }
            for f in &suite.failures {
                writeln!(out, "FAILED {} @ {}: {}", f.method, f.budget, f.error)?;
            }
            writeln!(out, "wrote {}", dir.display())?;
            if !suite.failures.is_empty() {
                return Err(CliError::CellsFailed {
                    failed: suite.failures.len(),
                    total: suite.failures.len() + suite.runs.len(),
                });
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let domain = cfg.build_domain()?;
            let hist = nse_afs::envs::severity_histogram(&domain.nse, &domain.mdp);
            writeln!(out, "ok: {} domain, {}x{}", domain.kind, domain.width, domain.height)?;
            writeln!(out, "states {}, actions {}", domain.mdp.n_states(), domain.mdp.n_actions())?;
            writeln!(out, "severity: acceptable {}, mild {}, severe {}", hist.acceptable, hist.mild, hist.severe)?;
            let methods: Vec<String> = cfg.methods()?.iter().map(|m| m.to_string()).collect();
            writeln!(out, "methods: {}", methods.join(", "))?;
            writeln!(out, "budgets: {:?}, trials {}, seed {}", cfg.experiment.budgets, cfg.experiment.trials, cfg.experiment.seed)?;
        }
        Command::Plotdata { input, out: file } => {
            let rows = plot_data(&input)?;
            write_plot_data(&file, &rows)?;
            writeln!(out, "wrote {} rows to {}", rows.len(), file.display())?;
        }
        Command::Serve { bind, log_dir } => {
            let store = match log_dir {
                Some(dir) => SessionStore::with_log_dir(dir)?,
                None => SessionStore::in_memory(),
            };
            if !bind.ip().is_loopback() {
                log::warn!("binding to non-loopback address {bind}; sessions are unauthenticated");
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(crate::serve(bind, Arc::new(store)))?;
        }
    }
    Ok(())
}
