//! Run configuration: a flat TOML file with documented keys, merged
//! with command-line overrides before a command runs.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use factor_model::csv_io;
use factor_model::error::{Error, Result};
use factor_model::evaluation::FactorSubset;
use factor_model::loadings::LoadingStore;
use factor_model::panel::PanelDataset;
use factor_model::synthetic::SyntheticConfig;

/// Every recognized key of the run configuration file. All keys are
/// optional in the file itself; a command reports the first required
/// setting it finds missing. Dates are quoted ISO strings, and paths
/// resolve against the working directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Price file, `date,security_id,close,volume,shares_outstanding`.
    pub prices: Option<PathBuf>,
    /// Fundamental observations, `date,security_id,field,value`.
    pub fundamentals: Option<PathBuf>,
    /// Country and industry weights, `security_id,dimension,label,weight`.
    pub memberships: Option<PathBuf>,
    /// Benchmark returns, `date,return`.
    pub benchmark: Option<PathBuf>,
    /// Precomputed loadings to reuse instead of recomputing from the
    /// fundamentals (for example the planted loadings of a synthetic
    /// panel, or the output of a previous `loadings` run).
    pub loadings_csv: Option<PathBuf>,
    /// First date of the run range; defaults to the first panel date.
    pub start: Option<NaiveDate>,
    /// Last date of the run range; defaults to the last panel date.
    pub end: Option<NaiveDate>,
    /// Factor subset for `fit`: `full`, `market`, `market_style`,
    /// `market_country`, or `market_industry`.
    pub subset: Option<String>,
    /// Cross-validation fold count for `evaluate`.
    pub folds: Option<usize>,
    /// Seed for cross-validation fold assignment.
    pub cv_seed: Option<u64>,
    /// Directory receiving all output files.
    pub out: Option<PathBuf>,
    /// Portfolio recipes for `backtest` (`base`, `value`, `low_size`,
    /// `momentum`, `quality`, `yield`, `low_volatility`, `growth`,
    /// `liquidity`); defaults to all nine.
    pub portfolios: Option<Vec<String>>,
    /// Securities in the cap-weighted base portfolio.
    pub base_size: Option<usize>,
    /// Securities selected from the base by each tilt.
    pub selection_size: Option<usize>,
    /// Restrict backtest base universes to one country label.
    pub country_filter: Option<String>,
    /// Worker thread count; defaults to all logical CPUs.
    pub threads: Option<usize>,
    /// Log at debug level instead of warnings only.
    pub verbose: Option<bool>,
}

impl RunConfig {
    /// Reads a config file; errors carry the path and the TOML parser's
    /// line and column.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            Some(path) => RunConfig::load(path),
            None => Ok(RunConfig::default()),
        }
    }
}

/// Fails with the setting name when a required value is absent from
/// both the config file and the flags.
pub fn require<T: Clone>(value: &Option<T>, key: &str) -> Result<T> {
    value
        .clone()
        .ok_or_else(|| Error::Config(format!("missing required setting '{key}'")))
}

/// Loads the panel from the four configured input files.
pub fn load_panel(config: &RunConfig) -> Result<PanelDataset> {
    let prices = require(&config.prices, "prices")?;
    let fundamentals = require(&config.fundamentals, "fundamentals")?;
    let memberships = require(&config.memberships, "memberships")?;
    let benchmark = require(&config.benchmark, "benchmark")?;
    csv_io::load_panel(&prices, &fundamentals, &memberships, &benchmark)
}

/// The run's date range, defaulted to the full panel.
pub fn date_range(config: &RunConfig, panel: &PanelDataset) -> Result<(NaiveDate, NaiveDate)> {
    let start = config.start.unwrap_or(panel.dates()[0]);
    let end = config.end.unwrap_or(*panel.dates().last().unwrap());
    if start > end {
        return Err(Error::Config(format!("empty date range {start}..{end}")));
    }
    Ok((start, end))
}

/// Reads precomputed loadings when `loadings_csv` is set, otherwise
/// computes monthly loadings from the panel start through `end`. Months
/// without enough history (typically the benchmark warm-up year) are
/// expected here; commands warn per affected date instead.
pub fn resolve_store(
    config: &RunConfig,
    panel: &PanelDataset,
    end: NaiveDate,
) -> Result<LoadingStore> {
    let store = match &config.loadings_csv {
        Some(path) => csv_io::read_loadings(path, panel)?,
        None => {
            let store = LoadingStore::compute(panel, panel.dates()[0], end)?;
            for (date, reason) in &store.skipped {
                log::debug!("{date}: loadings skipped: {reason}");
            }
            store
        }
    };
    if store.is_empty() {
        return Err(Error::Validation(format!(
            "no loading matrix available on or before {end}"
        )));
    }
    Ok(store)
}

/// Parses a factor subset name.
pub fn parse_subset(name: &str) -> Result<FactorSubset> {
    match name {
        "full" => Ok(FactorSubset::full()),
        "market" => Ok(FactorSubset::market_only()),
        "market_style" => Ok(FactorSubset::market_and_styles()),
        "market_country" => Ok(FactorSubset::market_and_countries()),
        "market_industry" => Ok(FactorSubset::market_and_industries()),
        other => Err(Error::Config(format!(
            "unknown factor subset '{other}' (expected full, market, market_style, \
             market_country, or market_industry)"
        ))),
    }
}

/// Reads a synthetic generation config; keys absent from the file keep
/// their default values.
pub fn load_synth_config(path: Option<&Path>) -> Result<SyntheticConfig> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.to_owned(),
                source,
            })?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
        None => Ok(SyntheticConfig::default()),
    }
}
