//! Factor-tilted portfolio construction and monthly-rebalanced,
//! market-cap-weighted backtesting.
//!
//! A portfolio starts from the largest `base_size` companies by market
//! cap, optionally restricted to one country, and tilts by keeping the
//! `selection_size` companies most favorable under one or more rank
//! selectors. Holdings drift buy-and-hold between rebalances.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::dates::is_month_start;
use crate::error::{Error, Result};
use crate::loadings::{LoadingMatrix, LoadingStore, StyleFactor};
use crate::panel::PanelDataset;

/// Base universe size used throughout the reports.
pub const DEFAULT_BASE_SIZE: usize = 500;

/// Tilted selection size used throughout the reports.
pub const DEFAULT_SELECTION_SIZE: usize = 125;

/// Weight tolerance for holdings invariants.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Whether a selector favors large or small values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Largest,
    Smallest,
}

/// What a selector ranks by: a style loading or raw market cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionKey {
    MarketCap,
    Style(StyleFactor),
}

impl SelectionKey {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionKey::MarketCap => "market_cap",
            SelectionKey::Style(f) => f.name(),
        }
    }

    pub fn parse(s: &str) -> Option<SelectionKey> {
        if s == "market_cap" {
            return Some(SelectionKey::MarketCap);
        }
        StyleFactor::parse(s).map(SelectionKey::Style)
    }
}

impl From<SelectionKey> for String {
    fn from(key: SelectionKey) -> String {
        key.name().to_owned()
    }
}

impl TryFrom<String> for SelectionKey {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<SelectionKey, String> {
        SelectionKey::parse(&s).ok_or_else(|| format!("unknown selection key '{s}'"))
    }
}

impl Serialize for SelectionKey {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SelectionKey {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<SelectionKey, D::Error> {
        let s = String::deserialize(de)?;
        SelectionKey::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown selection key '{s}'")))
    }
}

/// One ranking criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub key: SelectionKey,
    pub direction: Direction,
}

impl Selector {
    pub fn largest(key: SelectionKey) -> Selector {
        Selector {
            key,
            direction: Direction::Largest,
        }
    }

    pub fn smallest(key: SelectionKey) -> Selector {
        Selector {
            key,
            direction: Direction::Smallest,
        }
    }
}

/// The named portfolio recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortfolioName {
    Base,
    Value,
    LowSize,
    Momentum,
    Quality,
    Yield,
    LowVolatility,
    Growth,
    Liquidity,
}

impl PortfolioName {
    pub const ALL: [PortfolioName; 9] = [
        PortfolioName::Base,
        PortfolioName::Value,
        PortfolioName::LowSize,
        PortfolioName::Momentum,
        PortfolioName::Quality,
        PortfolioName::Yield,
        PortfolioName::LowVolatility,
        PortfolioName::Growth,
        PortfolioName::Liquidity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PortfolioName::Base => "base",
            PortfolioName::Value => "value",
            PortfolioName::LowSize => "low_size",
            PortfolioName::Momentum => "momentum",
            PortfolioName::Quality => "quality",
            PortfolioName::Yield => "yield",
            PortfolioName::LowVolatility => "low_volatility",
            PortfolioName::Growth => "growth",
            PortfolioName::Liquidity => "liquidity",
        }
    }

    pub fn parse(s: &str) -> Option<PortfolioName> {
        PortfolioName::ALL.iter().copied().find(|p| p.name() == s)
    }

    fn selectors(&self) -> Vec<Selector> {
        use SelectionKey::{MarketCap, Style};
        use StyleFactor::*;
        match self {
            PortfolioName::Base => Vec::new(),
            PortfolioName::Value => vec![
                Selector::largest(Style(BookToPrice)),
                Selector::largest(Style(EarningsYield)),
            ],
            PortfolioName::LowSize => vec![Selector::smallest(MarketCap)],
            PortfolioName::Momentum => vec![
                Selector::largest(Style(ShortTermMomentum)),
                Selector::largest(Style(LongTermMomentum)),
            ],
            PortfolioName::Quality => vec![Selector::largest(Style(Profitability))],
            PortfolioName::Yield => vec![Selector::largest(Style(DividendYield))],
            PortfolioName::LowVolatility => vec![Selector::smallest(Style(Volatility))],
            PortfolioName::Growth => vec![Selector::largest(Style(SalesGrowth))],
            PortfolioName::Liquidity => vec![Selector::largest(Style(Liquidity))],
        }
    }

    /// The standard spec for this recipe at the given sizes.
    pub fn spec(
        &self,
        base_size: usize,
        selection_size: usize,
        country_filter: Option<String>,
    ) -> PortfolioSpec {
        PortfolioSpec {
            name: self.name().to_owned(),
            base_size,
            selection_size,
            selectors: self.selectors(),
            country_filter,
        }
    }
}

/// A portfolio construction rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSpec {
    pub name: String,
    pub base_size: usize,
    pub selection_size: usize,
    /// Empty means the untitled base portfolio.
    #[serde(default)]
    pub selectors: Vec<Selector>,
    /// Restrict the base universe to securities with more than half
    /// their country membership on this label.
    #[serde(default)]
    pub country_filter: Option<String>,
}

impl PortfolioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("portfolio name is empty".into()));
        }
        if self.base_size == 0 {
            return Err(Error::Config(format!(
                "portfolio {}: base size is zero",
                self.name
            )));
        }
        if self.selection_size > self.base_size {
            return Err(Error::Config(format!(
                "portfolio {}: selection size {} exceeds base size {}",
                self.name, self.selection_size, self.base_size
            )));
        }
        Ok(())
    }

    fn is_base(&self) -> bool {
        self.selectors.is_empty()
    }
}

/// Portfolio composition fixed at one rebalance.
#[derive(Debug, Clone, PartialEq)]
pub struct Holdings {
    pub rebalance_date: NaiveDate,
    /// `(panel security index, weight)`, ascending by index; weights are
    /// non-negative and sum to 1.
    pub weights: Vec<(usize, f64)>,
    /// Selection came up short of `selection_size` after exclusions.
    pub short_selection: bool,
    /// Candidates dropped for missing loadings before ranking.
    pub excluded: usize,
}

/// Backtest output over one date range.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub name: String,
    /// Dates carrying portfolio returns; the first rebalance date itself
    /// is the day weights are set and carries no return.
    pub dates: Vec<NaiveDate>,
    pub daily_returns: Vec<f64>,
    /// Growth of one unit, aligned with `dates`.
    pub cumulative: Vec<f64>,
    /// Per calendar year, ascending.
    pub annual: Vec<(i32, f64)>,
    /// Geometric mean annual return, present only for exactly ten years.
    pub r_10y: Option<f64>,
    pub n_rebalances: usize,
    /// Held security-days with no return data (counted as zero return).
    pub missing_days: usize,
    /// Holdings dropped after their final traded day.
    pub delistings: usize,
    /// Rebalances whose selection came up short.
    pub short_selections: usize,
}

/// Largest `n` securities by market cap on `date`, descending, ties
/// broken by id ascending. With a country filter, only securities whose
/// membership weight on that country exceeds one half are candidates.
pub fn base_universe(
    panel: &PanelDataset,
    date: NaiveDate,
    n: usize,
    country_filter: Option<&str>,
) -> Result<Vec<usize>> {
    let date_idx = panel
        .date_index(date)
        .ok_or_else(|| Error::Config(format!("{date} is not a trading day")))?;
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    for sec in 0..panel.n_securities() {
        if let Some(filter) = country_filter {
            let weight = panel
                .security(sec)
                .country()
                .iter()
                .find(|(label, _)| label == filter)
                .map(|(_, w)| *w)
                .unwrap_or(0.0);
            if weight <= 0.5 {
                continue;
            }
        }
        if let Some(mc) = panel.market_cap_at(sec, date_idx) {
            candidates.push((sec, mc));
        }
    }
    if candidates.len() < n {
        return Err(Error::UniverseTooSmall {
            date,
            available: candidates.len(),
            required: n,
        });
    }
    candidates.sort_by(|(a_sec, a_mc), (b_sec, b_mc)| {
        b_mc.partial_cmp(a_mc)
            .unwrap()
            .then_with(|| panel.id(*a_sec).cmp(panel.id(*b_sec)))
    });
    candidates.truncate(n);
    Ok(candidates.into_iter().map(|(sec, _)| sec).collect())
}

/// Fractional ranks over `values`, rank 1 most favorable. Tied values
/// share the average of the positions they span, so the order within a
/// tie does not matter.
fn fractional_ranks(values: &[f64], direction: Direction) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| match direction {
        Direction::Largest => values[b].partial_cmp(&values[a]).unwrap(),
        Direction::Smallest => values[a].partial_cmp(&values[b]).unwrap(),
    });
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions are 1-based; a run spanning positions start+1..=end
        // shares their average.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Picks the `m` candidates with the smallest average rank across
/// selectors. Candidates missing any required loading are excluded first
/// and counted. Final ties are broken by id ascending.
pub fn average_rank_select(
    panel: &PanelDataset,
    matrix: Option<&LoadingMatrix>,
    date_idx: usize,
    candidates: &[usize],
    selectors: &[Selector],
    m: usize,
) -> Result<(Vec<usize>, usize)> {
    let mut usable: Vec<usize> = Vec::with_capacity(candidates.len());
    let mut values_per_selector: Vec<Vec<f64>> = vec![Vec::new(); selectors.len()];
    let mut excluded = 0usize;
    'candidates: for &sec in candidates {
        let mut row = Vec::with_capacity(selectors.len());
        for selector in selectors {
            let value = match selector.key {
                SelectionKey::MarketCap => panel.market_cap_at(sec, date_idx),
                SelectionKey::Style(factor) => {
                    matrix.and_then(|mat| mat.loading(sec, factor))
                }
            };
            match value {
                Some(v) => row.push(v),
                None => {
                    excluded += 1;
                    continue 'candidates;
                }
            }
        }
        usable.push(sec);
        for (col, v) in row.into_iter().enumerate() {
            values_per_selector[col].push(v);
        }
    }
    let mut average = vec![0.0; usable.len()];
    for (selector, values) in selectors.iter().zip(&values_per_selector) {
        let ranks = fractional_ranks(values, selector.direction);
        for (acc, r) in average.iter_mut().zip(&ranks) {
            *acc += r / selectors.len() as f64;
        }
    }
    let mut order: Vec<usize> = (0..usable.len()).collect();
    order.sort_by(|&a, &b| {
        average[a]
            .partial_cmp(&average[b])
            .unwrap()
            .then_with(|| panel.id(usable[a]).cmp(panel.id(usable[b])))
    });
    order.truncate(m);
    let mut selected: Vec<usize> = order.into_iter().map(|i| usable[i]).collect();
    selected.sort_unstable();
    Ok((selected, excluded))
}

/// Builds holdings for `spec` on a first-of-month trading day. Weights
/// are proportional to that day's market caps within the selection.
pub fn rebalance(
    spec: &PortfolioSpec,
    panel: &PanelDataset,
    store: &LoadingStore,
    date: NaiveDate,
) -> Result<Holdings> {
    spec.validate()?;
    let date_idx = panel
        .date_index(date)
        .ok_or_else(|| Error::Config(format!("{date} is not a trading day")))?;
    if !is_month_start(panel.dates(), date_idx) {
        return Err(Error::Config(format!(
            "{date} is not the first trading day of a month"
        )));
    }
    let needs_loadings = spec
        .selectors
        .iter()
        .any(|s| matches!(s.key, SelectionKey::Style(_)));
    let matrix = store.for_date(date);
    if needs_loadings && matrix.is_none() {
        return Err(Error::MissingLoadings { date });
    }
    let base = base_universe(panel, date, spec.base_size, spec.country_filter.as_deref())?;
    let (selection, excluded) = if spec.is_base() {
        (base, 0)
    } else {
        average_rank_select(
            panel,
            matrix,
            date_idx,
            &base,
            &spec.selectors,
            spec.selection_size,
        )?
    };
    let target = if spec.is_base() {
        spec.base_size
    } else {
        spec.selection_size
    };
    let mut weights: Vec<(usize, f64)> = selection
        .iter()
        .map(|&sec| (sec, panel.market_cap_at(sec, date_idx).unwrap_or(0.0)))
        .collect();
    let total: f64 = weights.iter().map(|(_, mc)| mc).sum();
    if total <= 0.0 {
        return Err(Error::EmptyUniverse { date });
    }
    for (_, w) in &mut weights {
        *w /= total;
    }
    debug_assert!((weights.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < WEIGHT_SUM_TOL);
    let short_selection = weights.len() < target;
    if short_selection {
        log::warn!(
            "portfolio {}: selected {} of {}",
            spec.name,
            weights.len(),
            target
        );
    }
    Ok(Holdings {
        rebalance_date: date,
        weights,
        short_selection,
        excluded,
    })
}

/// Runs a monthly-rebalanced backtest over `[start, end]`.
///
/// Weights are set at the close of each first-of-month trading day using
/// that day's market caps and loadings; returns accrue from the next
/// trading day. Between rebalances weights drift buy-and-hold. A holding
/// with no return on a date contributes zero that day; a holding past
/// its final traded day is dropped and the rest renormalized.
pub fn run_backtest(
    spec: &PortfolioSpec,
    panel: &PanelDataset,
    store: &LoadingStore,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<BacktestResult> {
    spec.validate()?;
    if start > end {
        return Err(Error::Config(format!("empty date range {start}..{end}")));
    }
    let dates = panel.dates();
    let rebalance_indices: Vec<usize> = (0..dates.len())
        .filter(|&i| dates[i] >= start && dates[i] <= end && is_month_start(dates, i))
        .collect();
    let first = *rebalance_indices.first().ok_or(Error::InsufficientDates {
        available: 0,
        required: 1,
    })?;

    let mut holdings = rebalance(spec, panel, store, dates[first])?;
    let mut n_rebalances = 1usize;
    let mut short_selections = usize::from(holdings.short_selection);
    let mut missing_days = 0usize;
    let mut delistings = 0usize;
    let mut out_dates = Vec::new();
    let mut daily_returns = Vec::new();
    let mut cumulative = Vec::new();
    let mut growth = 1.0f64;
    let mut next_rebalance = 1usize;

    for idx in first + 1..dates.len() {
        if dates[idx] > end {
            break;
        }
        // Drop holdings past their final traded day, renormalizing.
        let before = holdings.weights.len();
        holdings
            .weights
            .retain(|(sec, _)| panel.last_return_index(*sec).is_some_and(|last| last >= idx));
        if holdings.weights.len() < before {
            delistings += before - holdings.weights.len();
            let total: f64 = holdings.weights.iter().map(|(_, w)| w).sum();
            if total <= 0.0 {
                return Err(Error::EmptyUniverse { date: dates[idx] });
            }
            for (_, w) in &mut holdings.weights {
                *w /= total;
            }
        }

        let mut day_return = 0.0;
        let mut day_returns: Vec<f64> = Vec::with_capacity(holdings.weights.len());
        for &(sec, w) in &holdings.weights {
            let r = match panel.return_at(sec, idx) {
                Some(r) => r,
                None => {
                    missing_days += 1;
                    0.0
                }
            };
            day_returns.push(r);
            day_return += w * r;
        }
        for ((_, w), r) in holdings.weights.iter_mut().zip(&day_returns) {
            *w = *w * (1.0 + r) / (1.0 + day_return);
        }
        growth *= 1.0 + day_return;
        out_dates.push(dates[idx]);
        daily_returns.push(day_return);
        cumulative.push(growth);

        if next_rebalance < rebalance_indices.len() && rebalance_indices[next_rebalance] == idx {
            holdings = rebalance(spec, panel, store, dates[idx])?;
            n_rebalances += 1;
            short_selections += usize::from(holdings.short_selection);
            next_rebalance += 1;
        }
    }
    if out_dates.is_empty() {
        return Err(Error::InsufficientDates {
            available: 0,
            required: 1,
        });
    }

    let mut annual: Vec<(i32, f64)> = Vec::new();
    for (date, r) in out_dates.iter().zip(&daily_returns) {
        let year = date.year();
        match annual.last_mut() {
            Some((y, acc)) if *y == year => *acc *= 1.0 + r,
            _ => annual.push((year, 1.0 + r)),
        }
    }
    for (_, acc) in &mut annual {
        *acc -= 1.0;
    }
    let r_10y = if annual.len() == 10 {
        Some(geometric_mean_return(
            &annual.iter().map(|(_, r)| *r).collect::<Vec<_>>(),
        )?)
    } else {
        None
    };

    Ok(BacktestResult {
        name: spec.name.clone(),
        dates: out_dates,
        daily_returns,
        cumulative,
        annual,
        r_10y,
        n_rebalances,
        missing_days,
        delistings,
        short_selections,
    })
}

/// Geometric mean of exactly ten annual returns. A constant sequence
/// returns the constant without rounding.
pub fn geometric_mean_return(annual: &[f64]) -> Result<f64> {
    if annual.len() != 10 {
        return Err(Error::Validation(format!(
            "need exactly 10 annual returns, got {}",
            annual.len()
        )));
    }
    for &r in annual {
        if r <= -1.0 {
            return Err(Error::TotalLossYear(r));
        }
    }
    if annual.iter().all(|&r| r == annual[0]) {
        return Ok(annual[0]);
    }
    let product: f64 = annual.iter().map(|r| 1.0 + r).product();
    Ok(product.powf(0.1) - 1.0)
}

/// One row of the annual returns table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsRow {
    pub name: String,
    pub annual: Vec<f64>,
    pub r_10y: Option<f64>,
    /// Per year plus the 10y column: `Some(true)` outperformed the base
    /// portfolio, `Some(false)` underperformed, `None` no annotation.
    pub vs_base: Vec<Option<bool>>,
}

/// Annual returns of several backtests against the base portfolio.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsTable {
    pub years: Vec<i32>,
    pub rows: Vec<ReturnsRow>,
}

impl ReturnsTable {
    /// Requires one result named `base` and a shared year range.
    pub fn new(results: &[BacktestResult]) -> Result<ReturnsTable> {
        let base = results
            .iter()
            .find(|r| r.name == "base")
            .ok_or_else(|| Error::Config("returns table needs a portfolio named 'base'".into()))?;
        let years: Vec<i32> = base.annual.iter().map(|(y, _)| *y).collect();
        let mut rows = Vec::with_capacity(results.len());
        for result in results {
            let result_years: Vec<i32> = result.annual.iter().map(|(y, _)| *y).collect();
            if result_years != years {
                return Err(Error::Config(format!(
                    "portfolio {} covers different years than the base",
                    result.name
                )));
            }
            let annual: Vec<f64> = result.annual.iter().map(|(_, r)| *r).collect();
            let is_base = result.name == base.name;
            let mut vs_base: Vec<Option<bool>> = Vec::with_capacity(annual.len() + 1);
            for (r, (_, b)) in annual.iter().zip(&base.annual) {
                vs_base.push(annotate(is_base, *r, *b));
            }
            vs_base.push(match (result.r_10y, base.r_10y) {
                (Some(r), Some(b)) => annotate(is_base, r, b),
                _ => None,
            });
            rows.push(ReturnsRow {
                name: result.name.clone(),
                annual,
                r_10y: result.r_10y,
                vs_base,
            });
        }
        Ok(ReturnsTable { years, rows })
    }

    /// Long-format CSV at four decimals; the 10y column uses year `10y`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("portfolio,year,annual_return,vs_base\n");
        for row in &self.rows {
            for ((year, r), vs) in self.years.iter().zip(&row.annual).zip(&row.vs_base) {
                out.push_str(&format!(
                    "{},{},{:.4},{}\n",
                    row.name,
                    year,
                    r,
                    annotation_label(*vs)
                ));
            }
            if let Some(r) = row.r_10y {
                out.push_str(&format!(
                    "{},10y,{:.4},{}\n",
                    row.name,
                    r,
                    annotation_label(*row.vs_base.last().unwrap())
                ));
            }
        }
        out
    }

    /// Aligned text table; `+` marks outperformance of the base, `-`
    /// underperformance.
    pub fn to_text(&self) -> String {
        let name_width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(["portfolio".len()])
            .max()
            .unwrap();
        let mut out = format!("{:<name_width$}", "portfolio");
        for year in &self.years {
            out.push_str(&format!("  {:>8}", year));
        }
        out.push_str(&format!("  {:>8}\n", "10y"));
        for row in &self.rows {
            out.push_str(&format!("{:<name_width$}", row.name));
            for (r, vs) in row.annual.iter().zip(&row.vs_base) {
                out.push_str(&format!("  {:>7.2}{}", 100.0 * r, annotation_mark(*vs)));
            }
            match row.r_10y {
                Some(r) => out.push_str(&format!(
                    "  {:>7.2}{}\n",
                    100.0 * r,
                    annotation_mark(*row.vs_base.last().unwrap())
                )),
                None => out.push_str(&format!("  {:>8}\n", "-")),
            }
        }
        out.push_str("returns in percent; + outperformed base, - underperformed\n");
        out
    }
}

fn annotate(is_base: bool, r: f64, base: f64) -> Option<bool> {
    if is_base || r == base {
        None
    } else {
        Some(r > base)
    }
}

fn annotation_label(vs: Option<bool>) -> &'static str {
    match vs {
        Some(true) => "out",
        Some(false) => "under",
        None => "",
    }
}

fn annotation_mark(vs: Option<bool>) -> &'static str {
    match vs {
        Some(true) => "+",
        Some(false) => "-",
        None => " ",
    }
}
