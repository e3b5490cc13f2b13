//! The six subcommand implementations. Output files are written
//! atomically, so an interrupted run never leaves a partial CSV behind.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};

use factor_model::cross_section::{
    solve_cross_section, ConstraintSet, CrossSectionFit, DesignMatrix,
};
use factor_model::csv_io;
use factor_model::error::{Error, Result};
use factor_model::evaluation::{Evaluator, FactorSubset};
use factor_model::loadings::LoadingStore;
use factor_model::panel::{country_summary, effective_universe, EffectiveUniverse, PanelDataset};
use factor_model::portfolio::{
    run_backtest, BacktestResult, PortfolioName, PortfolioSpec, ReturnsTable, DEFAULT_BASE_SIZE,
    DEFAULT_SELECTION_SIZE,
};
use factor_model::synthetic::{generate, SyntheticConfig};

use crate::config::{self, RunConfig};

/// The configured output directory, created if absent.
fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let out = config::require(&config.out, "out")?;
    fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;
    Ok(out)
}

/// Computes monthly loading matrices and writes `loadings.csv`.
///
/// With `month_of`, only the matrix of the month covering that date is
/// computed.
pub fn loadings(config: &RunConfig, month_of: Option<NaiveDate>) -> Result<()> {
    let panel = config::load_panel(config)?;
    let out = out_dir(config)?;
    let (mut start, mut end) = config::date_range(config, &panel)?;
    if let Some(date) = month_of {
        start = date.with_day(1).unwrap();
        end = date;
    }
    let store = LoadingStore::compute(&panel, start, end)?;
    for (date, reason) in &store.skipped {
        log::warn!("{date}: loadings skipped: {reason}");
    }
    if store.is_empty() {
        return Err(Error::Validation(format!(
            "no loading matrix could be computed in {start}..{end}"
        )));
    }
    let path = out.join("loadings.csv");
    csv_io::write_atomic(&path, &csv_io::loadings_to_csv_string(&store, &panel))?;
    println!(
        "wrote {}: {} months, {} skipped",
        path.display(),
        store.len(),
        store.skipped.len()
    );
    Ok(())
}

/// Per-date failures that skip the day instead of aborting the run.
fn is_skippable(err: &Error) -> bool {
    matches!(
        err,
        Error::MissingLoadings { .. }
            | Error::EmptyUniverse { .. }
            | Error::CrossSectionTooSmall { .. }
            | Error::InsufficientCrossSection { .. }
            | Error::SingularSystem { .. }
    )
}

fn fit_one(
    panel: &PanelDataset,
    store: &LoadingStore,
    subset: &FactorSubset,
    date: NaiveDate,
) -> Result<CrossSectionFit> {
    let matrix = store
        .for_date(date)
        .ok_or(Error::MissingLoadings { date })?;
    let universe = effective_universe(panel, matrix, date)?;
    let design = DesignMatrix::build(panel, &universe, matrix, subset)?;
    let constraints = ConstraintSet::for_design(&design);
    let returns = universe.returns(panel);
    solve_cross_section(&design, &returns, &constraints)
}

/// Fits daily factor returns over the date range and writes
/// `factor_returns.csv` and `residuals.csv`. Days without a usable
/// cross section are warned about and skipped; the run still succeeds.
pub fn fit(config: &RunConfig) -> Result<()> {
    let panel = config::load_panel(config)?;
    let out = out_dir(config)?;
    let (start, end) = config::date_range(config, &panel)?;
    let subset = config::parse_subset(config.subset.as_deref().unwrap_or("full"))?;
    let store = config::resolve_store(config, &panel, end)?;

    let mut fits = Vec::new();
    let mut skipped = 0usize;
    for &date in panel.dates().iter().filter(|&&d| d >= start && d <= end) {
        match fit_one(&panel, &store, &subset, date) {
            Ok(fit) => fits.push(fit),
            Err(err) if is_skippable(&err) => {
                log::warn!("{err}");
                skipped += 1;
            }
            Err(err) => return Err(err),
        }
    }
    if fits.is_empty() {
        return Err(Error::Validation(format!(
            "no date in {start}..{end} produced a usable cross section"
        )));
    }
    csv_io::write_atomic(
        &out.join("factor_returns.csv"),
        &csv_io::factor_returns_to_csv_string(&fits),
    )?;
    csv_io::write_atomic(&out.join("residuals.csv"), &csv_io::residuals_to_csv_string(&fits))?;
    println!(
        "wrote factor_returns.csv and residuals.csv to {}: {} dates fit, {} skipped",
        out.display(),
        fits.len(),
        skipped
    );
    Ok(())
}

/// Builds the three pooled-R2 reports and writes them as CSV plus one
/// aligned text rendering (`reports.txt`, also echoed to stdout).
pub fn evaluate(config: &RunConfig) -> Result<()> {
    let panel = config::load_panel(config)?;
    let out = out_dir(config)?;
    let (start, end) = config::date_range(config, &panel)?;
    let folds = config.folds.unwrap_or(10);
    let cv_seed = config.cv_seed.unwrap_or(0);
    let store = config::resolve_store(config, &panel, end)?;

    let evaluator = Evaluator::new(&panel, &store, start, end, folds)?;
    for (date, reason) in &evaluator.skipped {
        log::warn!("{date}: excluded from evaluation: {reason}");
    }

    let tables = [
        ("factor_groups.csv", evaluator.factor_group_report(Some(cv_seed))?),
        ("style_addition.csv", evaluator.style_addition_report(Some(cv_seed))?),
        ("style_removal.csv", evaluator.style_removal_report(Some(cv_seed))?),
    ];
    let mut text = String::new();
    for (name, table) in &tables {
        csv_io::write_atomic(&out.join(name), &table.to_csv_string())?;
        text.push_str(&table.to_text());
        text.push('\n');
    }
    csv_io::write_atomic(&out.join("reports.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// Resolves backtest specs: each entry is a recipe name or a TOML spec
/// file. Without entries, the config's `portfolios` list applies, and
/// without that, all nine recipes run.
fn resolve_specs(config: &RunConfig, entries: &[String]) -> Result<Vec<PortfolioSpec>> {
    let base_size = config.base_size.unwrap_or(DEFAULT_BASE_SIZE);
    let selection_size = config.selection_size.unwrap_or(DEFAULT_SELECTION_SIZE);
    let named = |name: &str| -> Result<PortfolioSpec> {
        let recipe = PortfolioName::parse(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown portfolio '{name}' (expected one of {})",
                PortfolioName::ALL.map(|p| p.name()).join(", ")
            ))
        })?;
        Ok(recipe.spec(base_size, selection_size, config.country_filter.clone()))
    };

    if !entries.is_empty() {
        return entries
            .iter()
            .map(|entry| {
                if PortfolioName::parse(entry).is_some() {
                    named(entry)
                } else {
                    read_spec_file(Path::new(entry))
                }
            })
            .collect();
    }
    match &config.portfolios {
        Some(names) if !names.is_empty() => names.iter().map(|name| named(name)).collect(),
        _ => PortfolioName::ALL.iter().map(|p| named(p.name())).collect(),
    }
}

/// Reads a full portfolio spec from a TOML file.
fn read_spec_file(path: &Path) -> Result<PortfolioSpec> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let spec: PortfolioSpec =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

/// Runs the configured backtests and writes `daily.csv`, `annual.csv`,
/// `cumulative.csv`, and the plot-ready `curve.csv`; when a portfolio
/// named `base` ran, also `returns_table.csv` plus its text rendering.
pub fn backtest(config: &RunConfig, entries: &[String]) -> Result<()> {
    let panel = config::load_panel(config)?;
    let out = out_dir(config)?;
    let (start, end) = config::date_range(config, &panel)?;
    let store = config::resolve_store(config, &panel, end)?;
    let specs = resolve_specs(config, entries)?;

    let mut results = Vec::with_capacity(specs.len());
    for spec in &specs {
        let result = run_backtest(spec, &panel, &store, start, end)?;
        if result.missing_days > 0 || result.delistings > 0 || result.short_selections > 0 {
            log::warn!(
                "{}: {} missing security-days, {} delistings, {} short selections",
                result.name,
                result.missing_days,
                result.delistings,
                result.short_selections
            );
        }
        results.push(result);
    }
    write_backtest_files(&out, &results)?;

    if results.iter().any(|r| r.name == "base") {
        let table = ReturnsTable::new(&results)?;
        csv_io::write_atomic(&out.join("returns_table.csv"), &table.to_csv_string())?;
        print!("{}", table.to_text());
    } else {
        for result in &results {
            let total = result.cumulative.last().copied().unwrap_or(1.0);
            println!(
                "{}: {} days, {} rebalances, growth {:.4}",
                result.name,
                result.dates.len(),
                result.n_rebalances,
                total
            );
        }
    }
    Ok(())
}

fn write_backtest_files(out: &Path, results: &[BacktestResult]) -> Result<()> {
    let mut daily = String::from("date,portfolio,return\n");
    let mut cumulative = String::from("date,portfolio,value\n");
    let mut annual = String::from("portfolio,year,return\n");
    for result in results {
        for ((date, r), value) in result
            .dates
            .iter()
            .zip(&result.daily_returns)
            .zip(&result.cumulative)
        {
            daily.push_str(&format!("{date},{},{r}\n", result.name));
            cumulative.push_str(&format!("{date},{},{value}\n", result.name));
        }
        for (year, r) in &result.annual {
            annual.push_str(&format!("{},{year},{r}\n", result.name));
        }
    }
    csv_io::write_atomic(&out.join("daily.csv"), &daily)?;
    csv_io::write_atomic(&out.join("cumulative.csv"), &cumulative)?;
    csv_io::write_atomic(&out.join("annual.csv"), &annual)?;

    // One column per portfolio; all results share the same calendar
    // because they ran over the same range.
    let dates = &results[0].dates;
    for result in results {
        if result.dates != *dates {
            return Err(Error::Validation(
                "backtest calendars diverge across portfolios".into(),
            ));
        }
    }
    let mut curve = String::from("date");
    for result in results {
        curve.push(',');
        curve.push_str(&result.name);
    }
    curve.push('\n');
    for (i, date) in dates.iter().enumerate() {
        curve.push_str(&date.to_string());
        for result in results {
            curve.push_str(&format!(",{}", result.cumulative[i]));
        }
        curve.push('\n');
    }
    csv_io::write_atomic(&out.join("curve.csv"), &curve)
}

/// Generates a synthetic panel: the four input CSVs plus `truth.csv`
/// (planted daily factor returns) and `loadings.csv` (planted style
/// loadings usable via the `loadings_csv` config key).
pub fn synth(config: &SyntheticConfig, out: &Path) -> Result<()> {
    let (panel, truth) = generate(config)?;
    csv_io::write_panel(&panel, out)?;
    csv_io::write_atomic(&out.join("truth.csv"), &truth.to_csv_string())?;
    let store = truth.loading_store(&panel)?;
    csv_io::write_atomic(
        &out.join("loadings.csv"),
        &csv_io::loadings_to_csv_string(&store, &panel),
    )?;
    println!(
        "wrote prices.csv, fundamentals.csv, memberships.csv, benchmark.csv, truth.csv, \
         loadings.csv to {}",
        out.display()
    );
    Ok(())
}

/// All securities with a positive market cap on `date`, independent of
/// loadings coverage.
fn market_universe(panel: &PanelDataset, date: NaiveDate) -> Result<EffectiveUniverse> {
    let date_idx = panel
        .date_index(date)
        .ok_or_else(|| Error::Config(format!("{date} is not a panel trading day")))?;
    let mut members = Vec::new();
    let mut market_caps = Vec::new();
    for sec in 0..panel.n_securities() {
        if let Some(mc) = panel.market_cap_at(sec, date_idx) {
            if mc > 0.0 {
                members.push(sec);
                market_caps.push(mc);
            }
        }
    }
    if members.is_empty() {
        return Err(Error::EmptyUniverse { date });
    }
    Ok(EffectiveUniverse {
        date,
        date_idx,
        members,
        market_caps,
    })
}

/// Writes `countries.csv` with per-country security counts and
/// market-cap shares on one date, and prints an aligned table.
pub fn summary(config: &RunConfig, date: Option<NaiveDate>) -> Result<()> {
    let panel = config::load_panel(config)?;
    let out = out_dir(config)?;
    let date = date
        .or(config.end)
        .unwrap_or(*panel.dates().last().unwrap());
    let universe = market_universe(&panel, date)?;
    let stats = country_summary(&universe, &panel);

    let mut csv = String::from("country,count,mc_share\n");
    for stat in &stats {
        csv.push_str(&format!("{},{},{:.6}\n", stat.country, stat.count, stat.mc_share));
    }
    csv_io::write_atomic(&out.join("countries.csv"), &csv)?;

    let width = stats
        .iter()
        .map(|s| s.country.len())
        .chain(["country".len()])
        .max()
        .unwrap();
    let mut text = format!("{:<width$}  {:>6}  {:>8}\n", "country", "count", "mc_share");
    for stat in &stats {
        text.push_str(&format!(
            "{:<width$}  {:>6}  {:>7.2}%\n",
            stat.country,
            stat.count,
            100.0 * stat.mc_share
        ));
    }
    text.push_str(&format!("{} securities on {date}\n", universe.len()));
    print!("{text}");
    Ok(())
}
