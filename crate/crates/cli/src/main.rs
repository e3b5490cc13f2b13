//! Command-line interface for the factor model library: monthly
//! loadings, daily cross-sectional fits, pooled R2 evaluation,
//! portfolio backtests, synthetic panels, and country summaries, all
//! driven by one flat config file with flag overrides.
//!
//! Exit codes: 0 success, 1 internal error, 2 user or config error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use factor_model::error::{Error, Result};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "factor-model", version, about = "Equity factor model toolkit")]
struct Cli {
    /// TOML config file; flags override its keys. `synth` reads a
    /// synthetic generation config here, every other command a run
    /// config.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory receiving all output files.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for cross-validation folds and synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to all logical CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress details to stderr.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute monthly style loadings and write loadings.csv.
    Loadings {
        /// First date considered (default: first panel date).
        #[arg(long)]
        start: Option<NaiveDate>,
        /// Last date considered (default: last panel date).
        #[arg(long)]
        end: Option<NaiveDate>,
        /// Only the monthly matrix covering this date.
        #[arg(long)]
        date: Option<NaiveDate>,
    },
    /// Fit daily factor returns; write factor_returns.csv and residuals.csv.
    Fit {
        /// First date considered (default: first panel date).
        #[arg(long)]
        start: Option<NaiveDate>,
        /// Last date considered (default: last panel date).
        #[arg(long)]
        end: Option<NaiveDate>,
        /// Factor subset: full, market, market_style, market_country,
        /// or market_industry.
        #[arg(long)]
        subset: Option<String>,
    },
    /// Pooled R2 reports; write factor_groups.csv, style_addition.csv,
    /// style_removal.csv, and reports.txt.
    Evaluate {
        /// First date considered (default: first panel date).
        #[arg(long)]
        start: Option<NaiveDate>,
        /// Last date considered (default: last panel date).
        #[arg(long)]
        end: Option<NaiveDate>,
        /// Cross-validation fold count (default 10).
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Backtest factor-tilted portfolios; write daily.csv, annual.csv,
    /// cumulative.csv, curve.csv, and returns_table.csv.
    Backtest {
        /// First date considered (default: first panel date).
        #[arg(long)]
        start: Option<NaiveDate>,
        /// Last date considered (default: last panel date).
        #[arg(long)]
        end: Option<NaiveDate>,
        /// Portfolio recipe name or TOML spec file; repeatable.
        #[arg(long)]
        spec: Vec<String>,
        /// Securities in the cap-weighted base portfolio.
        #[arg(long)]
        base_size: Option<usize>,
        /// Securities selected from the base by each tilt.
        #[arg(long)]
        selection_size: Option<usize>,
        /// Restrict base universes to one country label.
        #[arg(long)]
        country_filter: Option<String>,
    },
    /// Generate a synthetic panel; write the four input CSVs plus
    /// truth.csv and loadings.csv.
    Synth,
    /// Country composition of the panel; write countries.csv.
    Summary {
        /// Snapshot date (default: last panel date).
        #[arg(long)]
        date: Option<NaiveDate>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_user_error() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if matches!(cli.command, Command::Synth) {
        init_runtime(cli.verbose, cli.threads)?;
        let mut synth = config::load_synth_config(cli.config.as_deref())?;
        if let Some(seed) = cli.seed {
            synth.seed = seed;
        }
        let out = cli
            .out
            .ok_or_else(|| Error::Config("missing required setting 'out'".into()))?;
        return commands::synth(&synth, &out);
    }

    let mut config = RunConfig::load_or_default(cli.config.as_deref())?;
    if let Some(out) = cli.out {
        config.out = Some(out);
    }
    if let Some(seed) = cli.seed {
        config.cv_seed = Some(seed);
    }
    if let Some(threads) = cli.threads {
        config.threads = Some(threads);
    }
    if cli.verbose {
        config.verbose = Some(true);
    }
    init_runtime(config.verbose.unwrap_or(false), config.threads)?;

    match cli.command {
        Command::Loadings { start, end, date } => {
            override_range(&mut config, start, end);
            commands::loadings(&config, date)
        }
        Command::Fit { start, end, subset } => {
            override_range(&mut config, start, end);
            if let Some(subset) = subset {
                config.subset = Some(subset);
            }
            commands::fit(&config)
        }
        Command::Evaluate { start, end, folds } => {
            override_range(&mut config, start, end);
            if let Some(folds) = folds {
                config.folds = Some(folds);
            }
            commands::evaluate(&config)
        }
        Command::Backtest {
            start,
            end,
            spec,
            base_size,
            selection_size,
            country_filter,
        } => {
            override_range(&mut config, start, end);
            if let Some(size) = base_size {
                config.base_size = Some(size);
            }
            if let Some(size) = selection_size {
                config.selection_size = Some(size);
            }
            if let Some(filter) = country_filter {
                config.country_filter = Some(filter);
            }
            commands::backtest(&config, &spec)
        }
        Command::Summary { date } => commands::summary(&config, date),
        Command::Synth => unreachable!("handled above"),
    }
}

fn override_range(config: &mut RunConfig, start: Option<NaiveDate>, end: Option<NaiveDate>) {
    if let Some(start) = start {
        config.start = Some(start);
    }
    if let Some(end) = end {
        config.end = Some(end);
    }
}

/// Configures logging and the worker pool once, before any command runs.
fn init_runtime(verbose: bool, threads: Option<usize>) -> Result<()> {
    let level = if verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Warn
    };
    env_logger::Builder::new().filter_level(level).try_init().ok();
    if let Some(threads) = threads {
        if threads == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}
