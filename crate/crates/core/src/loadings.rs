//! Style factor loadings: eleven per-security raw characteristics, a robust
//! normalization pipeline, and monthly loading matrices.
//!
//! Raw loadings are computed on the first trading day of each month from
//! price history and forward-filled fundamentals. Each factor vector is
//! rescaled so the quartiles map to -1 and +1, clipped to [-3, 3], and
//! centered to a zero market-cap-weighted mean.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::NaiveDate;

use crate::dates;
use crate::error::{Error, Result};
use crate::panel::{FundamentalField, PanelDataset, SecurityId};

/// Calendar lookback for the beta regression window.
pub const BETA_LOOKBACK_DAYS: i64 = 364;
/// Trading days summed into one overlapping beta return.
pub const BETA_RETURN_SPAN: usize = 7;
/// Minimum overlapping windows for a usable beta estimate.
pub const MIN_BETA_WINDOWS: usize = 40;
/// Calendar window for volatility and liquidity statistics. The same
/// constant is the divisor in their means, regardless of how many of the
/// days traded.
pub const SHORT_WINDOW_DAYS: i64 = 91;
/// Minimum fraction of a window's trading days that must have data.
pub const WINDOW_COVERAGE: f64 = 0.8;
/// Symmetric clip bound applied after robust scaling.
pub const CLIP_BOUND: f64 = 3.0;
/// Minimum securities required to normalize a factor vector.
pub const MIN_NORMALIZE: usize = 4;
/// Relative tolerance on the market-cap-weighted mean after centering.
pub const CENTERING_REL_TOL: f64 = 1e-8;

/// The eleven style factors, in canonical column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StyleFactor {
    Beta,
    Volatility,
    DividendYield,
    Profitability,
    ShortTermMomentum,
    LongTermMomentum,
    BookToPrice,
    EarningsYield,
    Size,
    SalesGrowth,
    Liquidity,
}

impl StyleFactor {
    pub const ALL: [StyleFactor; 11] = [
        StyleFactor::Beta,
        StyleFactor::Volatility,
        StyleFactor::DividendYield,
        StyleFactor::Profitability,
        StyleFactor::ShortTermMomentum,
        StyleFactor::LongTermMomentum,
        StyleFactor::BookToPrice,
        StyleFactor::EarningsYield,
        StyleFactor::Size,
        StyleFactor::SalesGrowth,
        StyleFactor::Liquidity,
    ];

    /// Position in the canonical column order.
    pub fn index(&self) -> usize {
        StyleFactor::ALL.iter().position(|f| f == self).unwrap()
    }

    /// Stable name used in CSV output and configuration.
    pub fn name(&self) -> &'static str {
        match self {
            StyleFactor::Beta => "beta",
            StyleFactor::Volatility => "volatility",
            StyleFactor::DividendYield => "dividend_yield",
            StyleFactor::Profitability => "profitability",
            StyleFactor::ShortTermMomentum => "short_term_momentum",
            StyleFactor::LongTermMomentum => "long_term_momentum",
            StyleFactor::BookToPrice => "book_to_price",
            StyleFactor::EarningsYield => "earnings_yield",
            StyleFactor::Size => "size",
            StyleFactor::SalesGrowth => "sales_growth",
            StyleFactor::Liquidity => "liquidity",
        }
    }

    pub fn parse(s: &str) -> Option<StyleFactor> {
        StyleFactor::ALL.iter().copied().find(|f| f.name() == s)
    }
}

impl fmt::Display for StyleFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Result of regressing a security's overlapping 7-day returns on the
/// benchmark's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaFit {
    /// Intercept of the regression; estimated but not used as a loading.
    pub alpha: f64,
    /// Slope of the regression; the beta loading.
    pub beta: f64,
    /// Number of overlapping windows used.
    pub n_obs: usize,
}

/// Fits beta from overlapping 7-day returns over the 364 calendar days
/// before `date`.
///
/// A window contributes one observation per trading day it ends on; both
/// series must have all seven daily returns for that window. A missing
/// benchmark return anywhere inside the lookback disqualifies the fit.
/// Fewer than [`MIN_BETA_WINDOWS`] observations, or a constant benchmark,
/// yields `None`.
pub fn beta_fit(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<BetaFit> {
    let lo = dates::offset_days(date, BETA_LOOKBACK_DAYS);
    let hi = dates::offset_days(date, 1);
    let window = dates::window_indices(panel.dates(), lo, hi);
    if window.is_empty() {
        return None;
    }
    for i in window.clone() {
        if panel.benchmark_return(i).is_none() {
            return None;
        }
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    'ends: for end in window {
        if end + 1 < BETA_RETURN_SPAN {
            continue;
        }
        let mut x = 0.0;
        let mut y = 0.0;
        for i in end + 1 - BETA_RETURN_SPAN..=end {
            match (panel.benchmark_return(i), panel.return_at(sec, i)) {
                (Some(b), Some(r)) => {
                    x += b;
                    y += r;
                }
                _ => continue 'ends,
            }
        }
        xs.push(x);
        ys.push(y);
    }
    let n = xs.len();
    if n < MIN_BETA_WINDOWS {
        return None;
    }

    let xm = xs.iter().sum::<f64>() / n as f64;
    let ym = ys.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        sxx += (xs[i] - xm) * (xs[i] - xm);
        sxy += (xs[i] - xm) * (ys[i] - ym);
    }
    if sxx == 0.0 {
        return None;
    }
    let beta = sxy / sxx;
    Some(BetaFit {
        alpha: ym - beta * xm,
        beta,
        n_obs: n,
    })
}

/// Beta loading: the slope from [`beta_fit`].
pub fn beta_loading(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<f64> {
    beta_fit(panel, sec, date).map(|f| f.beta)
}

/// Iterates a security's returns over the 91 calendar days before `date`,
/// returning `(expected_trading_days, present_returns)`.
fn short_window_returns(panel: &PanelDataset, sec: usize, date: NaiveDate) -> (usize, Vec<f64>) {
    let lo = dates::offset_days(date, SHORT_WINDOW_DAYS);
    let hi = dates::offset_days(date, 1);
    let window = dates::window_indices(panel.dates(), lo, hi);
    let expected = window.len();
    let present = window.filter_map(|i| panel.return_at(sec, i)).collect();
    (expected, present)
}

/// Volatility loading: standard deviation of daily returns over the 91
/// calendar days before `date`.
///
/// Both the mean and the variance divide by the window length 91; days
/// without a return contribute nothing to either sum. Requires data on at
/// least 80% of the window's trading days.
pub fn volatility_loading(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<f64> {
    let (expected, returns) = short_window_returns(panel, sec, date);
    if expected == 0 || (returns.len() as f64) < WINDOW_COVERAGE * expected as f64 {
        return None;
    }
    let n = SHORT_WINDOW_DAYS as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Some(var.sqrt())
}

/// Liquidity loading: log of the mean daily turnover (volume over shares
/// outstanding) across the 91 calendar days before `date`.
///
/// The mean is taken first and the log second; the divisor is the window
/// length 91. Requires volume and shares on at least 80% of the window's
/// trading days and a positive mean.
pub fn liquidity_loading(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<f64> {
    let lo = dates::offset_days(date, SHORT_WINDOW_DAYS);
    let hi = dates::offset_days(date, 1);
    let window = dates::window_indices(panel.dates(), lo, hi);
    let expected = window.len();
    if expected == 0 {
        return None;
    }
    let mut sum = 0.0;
    let mut present = 0usize;
    for i in window {
        if let (Some(v), Some(s)) = (panel.volume_at(sec, i), panel.shares_at(sec, i)) {
            sum += v / s;
            present += 1;
        }
    }
    if (present as f64) < WINDOW_COVERAGE * expected as f64 {
        return None;
    }
    let mean = sum / SHORT_WINDOW_DAYS as f64;
    if mean > 0.0 {
        Some(mean.ln())
    } else {
        None
    }
}

/// Price anchored at the nearest trading day at or before `date`.
fn anchored_price(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<f64> {
    panel.resolve_price(sec, date).map(|(_, p)| p)
}

/// Forward-filled fundamental value at the nearest trading day at or
/// before `date`.
fn anchored_fundamental(
    panel: &PanelDataset,
    sec: usize,
    field: FundamentalField,
    date: NaiveDate,
) -> Option<f64> {
    let idx = dates::resolve_at_or_before(panel.dates(), date)?;
    panel.fundamental_at(sec, field, idx)
}

/// Dividend yield loading: trailing dividends per share over price.
/// A zero dividend is a zero loading, not a missing one.
pub fn dividend_yield_loading(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<f64> {
    let dps = anchored_fundamental(panel, sec, FundamentalField::DividendsPerShareTtm, date)?;
    let price = anchored_price(panel, sec, date)?;
    Some(dps / price)
}

/// Profitability loading: net income over total assets. Requires positive
/// assets; negative income is a negative loading.
pub fn profitability_loading(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<f64> {
    let ni = anchored_fundamental(panel, sec, FundamentalField::NetIncome, date)?;
    let ta = anchored_fundamental(panel, sec, FundamentalField::TotalAssets, date)?;
    if ta > 0.0 {
        Some(ni / ta)
    } else {
        None
    }
}

/// Momentum loadings `(short, long)`.
///
/// Short-term momentum is the price change from 29 to 1 calendar days
/// before `date`; long-term momentum from 365 to 29 days before. Anchors
/// resolve to the nearest prior trading day, and each variant only needs
/// its own anchors.
pub fn momentum_loadings(
    panel: &PanelDataset,
    sec: usize,
    date: NaiveDate,
) -> (Option<f64>, Option<f64>) {
    let p1 = anchored_price(panel, sec, dates::offset_days(date, 1));
    let p29 = anchored_price(panel, sec, dates::offset_days(date, 29));
    let p365 = anchored_price(panel, sec, dates::offset_days(date, 365));
    let short = match (p1, p29) {
        (Some(p1), Some(p29)) => Some((p1 - p29) / p29),
        _ => None,
    };
    let long = match (p29, p365) {
        (Some(p29), Some(p365)) => Some((p29 - p365) / p365),
        _ => None,
    };
    (short, long)
}

/// Book-to-price loading: book value per share over price. Negative book
/// value carries through as a negative loading.
pub fn book_to_price_loading(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<f64> {
    let bvps = anchored_fundamental(panel, sec, FundamentalField::BookValuePerShare, date)?;
    let price = anchored_price(panel, sec, date)?;
    Some(bvps / price)
}

/// Earnings yield loading: blended earnings per share over price.
///
/// With a consensus estimate the blend weights reported earnings once and
/// the consensus three times; without one, reported earnings are used
/// alone.
pub fn earnings_yield_loading(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<f64> {
    let reported = anchored_fundamental(panel, sec, FundamentalField::EpsReportedTtm, date)?;
    let consensus = anchored_fundamental(panel, sec, FundamentalField::EpsConsensusNextYear, date);
    let price = anchored_price(panel, sec, date)?;
    let eps = match consensus {
        Some(c) => (reported + 3.0 * c) / 4.0,
        None => reported,
    };
    Some(eps / price)
}

/// Size loading: base-10 log of market capitalization at the price anchor.
pub fn size_loading(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<f64> {
    let mc = panel.resolve_market_cap(sec, date)?;
    if mc > 0.0 {
        Some(mc.log10())
    } else {
        None
    }
}

/// Sales growth loading: annualized growth of trailing sales over the
/// longest available span of three, two, or one year.
pub fn sales_growth_loading(panel: &PanelDataset, sec: usize, date: NaiveDate) -> Option<f64> {
    let field = FundamentalField::SalesTtm;
    let now = anchored_fundamental(panel, sec, field, dates::offset_days(date, 1))?;
    let spans = [(1095, 3.0), (730, 2.0), (365, 1.0)];
    for (days, years) in spans {
        if let Some(prev) = anchored_fundamental(panel, sec, field, dates::offset_days(date, days))
        {
            if prev > 0.0 {
                return Some((now - prev) / prev / years);
            }
            return None;
        }
    }
    None
}

/// Raw loading of one factor for one security as of `date`.
pub fn raw_loading(
    panel: &PanelDataset,
    sec: usize,
    factor: StyleFactor,
    date: NaiveDate,
) -> Option<f64> {
    match factor {
        StyleFactor::Beta => beta_loading(panel, sec, date),
        StyleFactor::Volatility => volatility_loading(panel, sec, date),
        StyleFactor::DividendYield => dividend_yield_loading(panel, sec, date),
        StyleFactor::Profitability => profitability_loading(panel, sec, date),
        StyleFactor::ShortTermMomentum => momentum_loadings(panel, sec, date).0,
        StyleFactor::LongTermMomentum => momentum_loadings(panel, sec, date).1,
        StyleFactor::BookToPrice => book_to_price_loading(panel, sec, date),
        StyleFactor::EarningsYield => earnings_yield_loading(panel, sec, date),
        StyleFactor::Size => size_loading(panel, sec, date),
        StyleFactor::SalesGrowth => sales_growth_loading(panel, sec, date),
        StyleFactor::Liquidity => liquidity_loading(panel, sec, date),
    }
}

/// One factor's raw values across securities on a date.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLoadingVector {
    pub date: NaiveDate,
    pub factor: StyleFactor,
    /// `(panel security index, raw value)` for securities with a value.
    pub values: Vec<(usize, f64)>,
}

/// Collects one factor's raw values over the given securities.
pub fn raw_loading_vector(
    panel: &PanelDataset,
    factor: StyleFactor,
    date: NaiveDate,
    securities: &[usize],
) -> RawLoadingVector {
    let values = securities
        .iter()
        .filter_map(|&sec| raw_loading(panel, sec, factor, date).map(|v| (sec, v)))
        .collect();
    RawLoadingVector {
        date,
        factor,
        values,
    }
}

/// Linear-interpolation percentile of sorted values, with `p` in [0, 1].
fn percentile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// A normalized factor vector plus the centering shift that was removed.
///
/// Adding `center_shift` back to any value recovers the clipped,
/// pre-centering value, which always lies in [-3, 3].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedLoadings {
    pub values: Vec<f64>,
    pub center_shift: f64,
}

/// Normalizes one raw factor vector.
///
/// Values are shifted and scaled so the quartiles map to -1 and +1,
/// clipped to [-3, 3], then the market-cap-weighted mean is removed. A
/// degenerate vector with equal quartiles becomes all zeros. Requires at
/// least [`MIN_NORMALIZE`] values.
pub fn normalize_style_loadings(
    values: &[f64],
    market_caps: &[f64],
) -> Result<NormalizedLoadings> {
    if values.len() != market_caps.len() {
        return Err(Error::Validation(format!(
            "normalization got {} values but {} market caps",
            values.len(),
            market_caps.len()
        )));
    }
    if values.len() < MIN_NORMALIZE {
        return Err(Error::Validation(format!(
            "normalization needs at least {MIN_NORMALIZE} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite raw loading".into()));
    }
    let total_mc: f64 = market_caps.iter().sum();
    if !(total_mc > 0.0) {
        return Err(Error::Validation("market caps must be positive".into()));
    }

    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p25 = percentile_linear(&sorted, 0.25);
    let p75 = percentile_linear(&sorted, 0.75);
    let half_iqr = (p75 - p25) / 2.0;
    if half_iqr == 0.0 {
        return Ok(NormalizedLoadings {
            values: vec![0.0; values.len()],
            center_shift: 0.0,
        });
    }
    let mid = (p25 + p75) / 2.0;
    let clipped: Vec<f64> = values
        .iter()
        .map(|v| ((v - mid) / half_iqr).clamp(-CLIP_BOUND, CLIP_BOUND))
        .collect();
    let shift = clipped
        .iter()
        .zip(market_caps)
        .map(|(x, mc)| x * mc)
        .sum::<f64>()
        / total_mc;
    Ok(NormalizedLoadings {
        values: clipped.iter().map(|x| x - shift).collect(),
        center_shift: shift,
    })
}

/// Normalized style loadings for the securities complete on one
/// recomputation date.
///
/// Contains only securities with all eleven raw loadings, both
/// memberships, and a positive market cap at the date's price anchor.
/// Every factor column has a zero market-cap-weighted mean over these
/// securities.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix {
    date: NaiveDate,
    sec_indices: Vec<usize>,
    ids: Vec<SecurityId>,
    market_caps: Vec<f64>,
    raw: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    center_shifts: Vec<f64>,
    row_of: HashMap<usize, usize>,
}

impl LoadingMatrix {
    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn n_securities(&self) -> usize {
        self.sec_indices.len()
    }

    /// Panel indices of the covered securities, ascending by id.
    pub fn security_indices(&self) -> &[usize] {
        &self.sec_indices
    }

    pub fn ids(&self) -> &[SecurityId] {
        &self.ids
    }

    /// Market caps at the recomputation date's price anchors.
    pub fn market_caps(&self) -> &[f64] {
        &self.market_caps
    }

    /// Normalized loading for a security by panel index.
    pub fn loading(&self, sec: usize, factor: StyleFactor) -> Option<f64> {
        self.row_of
            .get(&sec)
            .map(|&row| self.normalized[factor.index()][row])
    }

    /// Raw loading for a security by panel index.
    pub fn raw_loading(&self, sec: usize, factor: StyleFactor) -> Option<f64> {
        self.row_of.get(&sec).map(|&row| self.raw[factor.index()][row])
    }

    /// One factor's normalized column, aligned with `security_indices`.
    pub fn normalized_column(&self, factor: StyleFactor) -> &[f64] {
        &self.normalized[factor.index()]
    }

    /// One factor's raw column, aligned with `security_indices`.
    pub fn raw_column(&self, factor: StyleFactor) -> &[f64] {
        &self.raw[factor.index()]
    }

    /// Centering shift removed from a factor column.
    pub fn center_shift(&self, factor: StyleFactor) -> f64 {
        self.center_shifts[factor.index()]
    }

    pub fn contains(&self, sec: usize) -> bool {
        self.row_of.contains_key(&sec)
    }

    /// Builds a matrix from externally supplied normalized values, one row
    /// of eleven canonical-order values per id. Market caps anchor at
    /// `date`.
    pub fn from_values(
        panel: &PanelDataset,
        date: NaiveDate,
        ids: &[String],
        rows: &[Vec<f64>],
    ) -> Result<LoadingMatrix> {
        if ids.len() != rows.len() {
            return Err(Error::Validation(format!(
                "{} ids but {} loading rows",
                ids.len(),
                rows.len()
            )));
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));

        let mut sec_indices = Vec::with_capacity(ids.len());
        let mut out_ids = Vec::with_capacity(ids.len());
        let mut market_caps = Vec::with_capacity(ids.len());
        let mut raw = vec![Vec::with_capacity(ids.len()); StyleFactor::ALL.len()];
        for &i in &order {
            let sec = panel.index_of(&ids[i]).ok_or_else(|| {
                Error::Validation(format!("loading row for unknown security {}", ids[i]))
            })?;
            if rows[i].len() != StyleFactor::ALL.len() {
                return Err(Error::Validation(format!(
                    "{}: expected {} loadings, got {}",
                    ids[i],
                    StyleFactor::ALL.len(),
                    rows[i].len()
                )));
            }
            let mc = panel.resolve_market_cap(sec, date).ok_or_else(|| {
                Error::Validation(format!("{}: no market cap at {date}", ids[i]))
            })?;
            sec_indices.push(sec);
            out_ids.push(panel.id(sec).clone());
            market_caps.push(mc);
            for (f, col) in raw.iter_mut().enumerate() {
                col.push(rows[i][f]);
            }
        }
        let row_of = sec_indices
            .iter()
            .enumerate()
            .map(|(row, &sec)| (sec, row))
            .collect();
        Ok(LoadingMatrix {
            date,
            sec_indices,
            ids: out_ids,
            market_caps,
            normalized: raw.clone(),
            raw,
            center_shifts: vec![0.0; StyleFactor::ALL.len()],
            row_of,
        })
    }
}

/// Computes the loading matrix for a monthly recomputation date.
///
/// `date` must be the first trading day of its month in the panel. Errors
/// when fewer than [`MIN_NORMALIZE`] securities are complete.
pub fn compute_loading_matrix(panel: &PanelDataset, date: NaiveDate) -> Result<LoadingMatrix> {
    let idx = panel
        .date_index(date)
        .ok_or_else(|| Error::Config(format!("{date} is not a panel trading day")))?;
    if !dates::is_month_start(panel.dates(), idx) {
        return Err(Error::Config(format!(
            "{date} is not the first trading day of its month"
        )));
    }

    let n_factors = StyleFactor::ALL.len();
    let mut sec_indices = Vec::new();
    let mut ids = Vec::new();
    let mut market_caps = Vec::new();
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); n_factors];
    for sec in 0..panel.n_securities() {
        let data = panel.security(sec);
        if data.country().is_empty() || data.industry().is_empty() {
            continue;
        }
        let mc = match panel.resolve_market_cap(sec, date) {
            Some(mc) if mc > 0.0 => mc,
            _ => continue,
        };
        let mut values = [0.0; StyleFactor::ALL.len()];
        let mut complete = true;
        for factor in StyleFactor::ALL {
            match raw_loading(panel, sec, factor, date) {
                Some(v) => values[factor.index()] = v,
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if !complete {
            continue;
        }
        sec_indices.push(sec);
        ids.push(data.id().clone());
        market_caps.push(mc);
        for (f, col) in raw.iter_mut().enumerate() {
            col.push(values[f]);
        }
    }

    if sec_indices.len() < MIN_NORMALIZE {
        return Err(Error::CrossSectionTooSmall {
            date,
            available: sec_indices.len(),
            required: MIN_NORMALIZE,
        });
    }

    let mut normalized = Vec::with_capacity(n_factors);
    let mut center_shifts = Vec::with_capacity(n_factors);
    for col in &raw {
        let norm = normalize_style_loadings(col, &market_caps)?;
        normalized.push(norm.values);
        center_shifts.push(norm.center_shift);
    }
    let row_of = sec_indices
        .iter()
        .enumerate()
        .map(|(row, &sec)| (sec, row))
        .collect();
    Ok(LoadingMatrix {
        date,
        sec_indices,
        ids,
        market_caps,
        raw,
        normalized,
        center_shifts,
        row_of,
    })
}

/// Monthly loading matrices plus the dates that could not be computed.
#[derive(Debug, Clone, Default)]
pub struct LoadingStore {
    matrices: BTreeMap<NaiveDate, LoadingMatrix>,
    /// Recomputation dates skipped, with the reason.
    pub skipped: Vec<(NaiveDate, String)>,
}

impl LoadingStore {
    /// Computes matrices for every monthly recomputation date whose first
    /// trading day falls in `[start, end]`. Dates with too small a cross
    /// section are recorded in `skipped`.
    pub fn compute(panel: &PanelDataset, start: NaiveDate, end: NaiveDate) -> Result<LoadingStore> {
        let mut store = LoadingStore::default();
        for idx in dates::month_start_indices(panel.dates()) {
            let date = panel.dates()[idx];
            if date < start || date > end {
                continue;
            }
            match compute_loading_matrix(panel, date) {
                Ok(matrix) => {
                    store.matrices.insert(date, matrix);
                }
                Err(err @ Error::CrossSectionTooSmall { .. }) => {
                    store.skipped.push((date, err.to_string()));
                }
                Err(err) => return Err(err),
            }
        }
        Ok(store)
    }

    /// Wraps externally built matrices.
    pub fn from_matrices(matrices: Vec<LoadingMatrix>) -> LoadingStore {
        LoadingStore {
            matrices: matrices.into_iter().map(|m| (m.date(), m)).collect(),
            skipped: Vec::new(),
        }
    }

    /// The matrix valid on `date`: the latest one computed at or before it.
    pub fn for_date(&self, date: NaiveDate) -> Option<&LoadingMatrix> {
        self.matrices.range(..=date).next_back().map(|(_, m)| m)
    }

    pub fn matrices(&self) -> impl Iterator<Item = &LoadingMatrix> {
        self.matrices.values()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.matrices.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dates::consecutive_dates;
    use crate::panel::PanelBuilder;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    /// Deterministic wiggle used to build non-constant return paths.
    fn wiggle(i: usize) -> f64 {
        0.01 * ((i as f64 * 0.7).sin() + 0.3 * ((i as f64) * 1.3).cos())
    }

    // ==== beta ====

    /// Panel with 420 consecutive days where security A's derived returns
    /// bitwise-match the benchmark series.
    fn self_benchmark_panel() -> PanelDataset {
        let n = 420;
        let dates = consecutive_dates(d("2020-01-01"), n);
        let mut prices = Vec::with_capacity(n);
        let mut p = 100.0;
        prices.push(p);
        for i in 1..n {
            p *= 1.0 + wiggle(i);
            prices.push(p);
        }
        let mut b = PanelBuilder::new(dates);
        b.security("A").prices(&prices).constant_shares(10.0);
        for i in 1..n {
            let r = prices[i] / prices[i - 1] - 1.0;
            b.benchmark_at(i, Some(r));
        }
        b.build().unwrap()
    }

    #[test]
    fn beta_of_benchmark_against_itself_is_one() {
        let panel = self_benchmark_panel();
        let fit = beta_fit(&panel, 0, d("2021-02-01")).unwrap();
        assert_eq!(fit.beta, 1.0);
        assert!(fit.alpha.abs() < 1e-15);
        assert!(fit.n_obs >= MIN_BETA_WINDOWS);
    }

    #[test]
    fn beta_needs_minimum_window_count() {
        let n = 50;
        let dates = consecutive_dates(d("2021-01-01"), n);
        let mut prices = Vec::with_capacity(n);
        let mut p = 100.0;
        prices.push(p);
        for i in 1..n {
            p *= 1.0 + wiggle(i);
            prices.push(p);
        }
        let mut b = PanelBuilder::new(dates);
        b.security("A").prices(&prices).constant_shares(10.0);
        for i in 1..n {
            b.benchmark_at(i, Some(wiggle(i + 7)));
        }
        let panel = b.build().unwrap();
        // Only ~43 trading days exist, so under 40 complete 7-day windows.
        assert!(beta_fit(&panel, 0, d("2021-02-19")).is_none());
    }

    #[test]
    fn missing_benchmark_day_disqualifies_beta() {
        let intact = self_benchmark_panel();
        // Rebuild with one benchmark hole inside the lookback.
        let n = 420;
        let dates = consecutive_dates(d("2020-01-01"), n);
        let mut prices = Vec::with_capacity(n);
        let mut p = 100.0;
        prices.push(p);
        for i in 1..n {
            p *= 1.0 + wiggle(i);
            prices.push(p);
        }
        let mut b = PanelBuilder::new(dates);
        b.security("A").prices(&prices).constant_shares(10.0);
        for i in 1..n {
            let r = prices[i] / prices[i - 1] - 1.0;
            b.benchmark_at(i, Some(r));
        }
        b.benchmark_at(300, None);
        let panel = b.build().unwrap();
        assert!(beta_fit(&panel, 0, d("2021-02-01")).is_none());
        // The intact panel still fits.
        assert!(beta_fit(&intact, 0, d("2021-02-01")).is_some());
    }

    // ==== volatility ====

    /// Panel trading on every calendar day so a 91-day window holds
    /// exactly 91 returns.
    fn dense_return_panel(returns: &[f64]) -> PanelDataset {
        let n = returns.len() + 1;
        let dates = consecutive_dates(d("2021-01-01"), n);
        let mut b = PanelBuilder::new(dates);
        b.security("A")
            .price_path(100.0, returns)
            .constant_shares(10.0);
        b.build().unwrap()
    }

    #[test]
    fn volatility_of_constant_returns_is_zero() {
        let returns = vec![0.01; 91];
        let panel = dense_return_panel(&returns);
        let t0 = d("2021-01-01") + chrono::Duration::days(92);
        let vol = volatility_loading(&panel, 0, t0).unwrap();
        assert_eq!(vol, 0.0);
    }

    #[test]
    fn volatility_matches_literal_formula_on_alternating_returns() {
        // 91 returns alternating +0.01 / -0.01, starting and ending up.
        let returns: Vec<f64> = (0..91)
            .map(|i| if i % 2 == 0 { 0.01 } else { -0.01 })
            .collect();
        let panel = dense_return_panel(&returns);
        let t0 = d("2021-01-01") + chrono::Duration::days(92);

        // Literal evaluation over the derived returns in the window.
        let lo = dates::offset_days(t0, SHORT_WINDOW_DAYS);
        let hi = dates::offset_days(t0, 1);
        let window = dates::window_indices(panel.dates(), lo, hi);
        let rs: Vec<f64> = window.filter_map(|i| panel.return_at(0, i)).collect();
        assert_eq!(rs.len(), 91);
        let mean = rs.iter().sum::<f64>() / 91.0;
        let expect = (rs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 91.0).sqrt();

        let vol = volatility_loading(&panel, 0, t0).unwrap();
        assert!((vol - expect).abs() < 1e-15);
        assert!(vol > 0.009 && vol < 0.011);
    }

    #[test]
    fn volatility_requires_coverage() {
        let returns = vec![0.01; 91];
        let n = returns.len() + 1;
        let mut b = PanelBuilder::new(consecutive_dates(d("2021-01-01"), n));
        let mut handle = b.security("A");
        handle.price_path(100.0, &returns).constant_shares(10.0);
        // Punching out 20 prices kills ~40 returns; coverage falls below 80%.
        for i in (10..50).step_by(2) {
            handle.price_at(i, None);
        }
        let panel = b.build().unwrap();
        let t0 = d("2021-01-01") + chrono::Duration::days(92);
        assert!(volatility_loading(&panel, 0, t0).is_none());
    }

    // ==== ratios ====

    /// 92 consecutive days of flat data plus one fundamental per field.
    fn ratio_panel() -> PanelDataset {
        let dates = consecutive_dates(d("2021-01-01"), 92);
        let start = d("2021-01-01");
        let mut b = PanelBuilder::new(dates);
        b.security("A")
            .constant_price(50.0)
            .constant_volume(100.0)
            .constant_shares(10.0)
            .fundamental(FundamentalField::DividendsPerShareTtm, &[(start, 2.0)])
            .fundamental(FundamentalField::NetIncome, &[(start, 10.0)])
            .fundamental(FundamentalField::TotalAssets, &[(start, 200.0)])
            .fundamental(FundamentalField::BookValuePerShare, &[(start, 20.0)])
            .fundamental(FundamentalField::EpsReportedTtm, &[(start, 1.0)])
            .fundamental(FundamentalField::EpsConsensusNextYear, &[(start, 2.0)]);
        b.build().unwrap()
    }

    #[test]
    fn dividend_yield_is_dps_over_price() {
        let panel = ratio_panel();
        let v = dividend_yield_loading(&panel, 0, d("2021-03-01")).unwrap();
        assert!((v - 0.04).abs() < 1e-15);
    }

    #[test]
    fn zero_dividend_is_zero_not_missing() {
        let dates = consecutive_dates(d("2021-01-01"), 5);
        let mut b = PanelBuilder::new(dates);
        b.security("A")
            .constant_price(50.0)
            .fundamental(FundamentalField::DividendsPerShareTtm, &[(d("2021-01-01"), 0.0)]);
        b.security("B").constant_price(50.0);
        let panel = b.build().unwrap();
        assert_eq!(dividend_yield_loading(&panel, 0, d("2021-01-05")), Some(0.0));
        assert_eq!(dividend_yield_loading(&panel, 1, d("2021-01-05")), None);
    }

    #[test]
    fn profitability_is_income_over_assets() {
        let panel = ratio_panel();
        let v = profitability_loading(&panel, 0, d("2021-03-01")).unwrap();
        assert!((v - 0.05).abs() < 1e-15);
    }

    #[test]
    fn profitability_requires_positive_assets() {
        let dates = consecutive_dates(d("2021-01-01"), 5);
        let mut b = PanelBuilder::new(dates);
        b.security("A")
            .constant_price(50.0)
            .fundamental(FundamentalField::NetIncome, &[(d("2021-01-01"), 10.0)])
            .fundamental(FundamentalField::TotalAssets, &[(d("2021-01-01"), 0.0)]);
        let panel = b.build().unwrap();
        assert_eq!(profitability_loading(&panel, 0, d("2021-01-05")), None);
    }

    #[test]
    fn book_to_price_carries_sign() {
        let panel = ratio_panel();
        let v = book_to_price_loading(&panel, 0, d("2021-03-01")).unwrap();
        assert!((v - 0.4).abs() < 1e-15);

        let dates = consecutive_dates(d("2021-01-01"), 5);
        let mut b = PanelBuilder::new(dates);
        b.security("A")
            .constant_price(40.0)
            .fundamental(FundamentalField::BookValuePerShare, &[(d("2021-01-01"), -20.0)]);
        let neg = b.build().unwrap();
        assert!((book_to_price_loading(&neg, 0, d("2021-01-05")).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn earnings_yield_blends_consensus_three_to_one() {
        let dates = consecutive_dates(d("2021-01-01"), 5);
        let mut b = PanelBuilder::new(dates);
        b.security("A")
            .constant_price(10.0)
            .fundamental(FundamentalField::EpsReportedTtm, &[(d("2021-01-01"), 1.0)])
            .fundamental(FundamentalField::EpsConsensusNextYear, &[(d("2021-01-01"), 2.0)]);
        b.security("B")
            .constant_price(10.0)
            .fundamental(FundamentalField::EpsReportedTtm, &[(d("2021-01-01"), 1.2)]);
        let panel = b.build().unwrap();
        // (1*1.0 + 3*2.0) / 4 / 10 = 0.175.
        assert!((earnings_yield_loading(&panel, 0, d("2021-01-05")).unwrap() - 0.175).abs() < 1e-15);
        // Reported only: 1.2 / 10.
        assert!((earnings_yield_loading(&panel, 1, d("2021-01-05")).unwrap() - 0.12).abs() < 1e-15);
    }

    #[test]
    fn size_is_log10_market_cap() {
        let dates = consecutive_dates(d("2021-01-01"), 5);
        let mut b = PanelBuilder::new(dates);
        b.security("A").constant_price(100.0).constant_shares(1e7);
        b.security("B").constant_price(2.0).constant_shares(1e7);
        let panel = b.build().unwrap();
        assert_eq!(size_loading(&panel, 0, d("2021-01-05")), Some(9.0));
        let small = size_loading(&panel, 1, d("2021-01-05")).unwrap();
        assert!((small - (2e7_f64).log10()).abs() < 1e-12);
    }

    // ==== momentum ====

    #[test]
    fn momentum_uses_calendar_anchors() {
        let n = 400;
        let dates = consecutive_dates(d("2020-01-01"), n);
        let t0 = dates[n - 1];
        let mut prices = vec![100.0; n];
        // Price rises to 110 between t0-29 and t0-1, flat before.
        for i in 0..n {
            let age = dates::days_between(dates[i], t0);
            if age < 29 {
                prices[i] = 100.0 + 10.0 * (29 - age) as f64 / 28.0;
            }
        }
        let mut b = PanelBuilder::new(dates);
        b.security("A").prices(&prices).constant_shares(10.0);
        let panel = b.build().unwrap();
        let (stm, ltm) = momentum_loadings(&panel, 0, t0);
        assert!((stm.unwrap() - 0.10).abs() < 1e-12);
        assert_eq!(ltm.unwrap(), 0.0);
    }

    #[test]
    fn momentum_variants_fail_independently() {
        // Prices exist only in the last 60 days: the long anchor at
        // t0-365 cannot resolve, the short anchors can.
        let n = 400;
        let dates = consecutive_dates(d("2020-01-01"), n);
        let mut b = PanelBuilder::new(dates.clone());
        let mut handle = b.security("A");
        handle.constant_shares(10.0);
        for i in n - 60..n {
            handle.price_at(i, Some(100.0));
        }
        let panel = b.build().unwrap();
        let (stm, ltm) = momentum_loadings(&panel, 0, dates[n - 1]);
        assert_eq!(stm, Some(0.0));
        assert_eq!(ltm, None);
    }

    // ==== sales growth ====

    fn sales_panel(obs: &[(NaiveDate, f64)]) -> PanelDataset {
        let dates = consecutive_dates(d("2018-01-01"), 1200);
        let mut b = PanelBuilder::new(dates);
        b.security("A")
            .constant_price(10.0)
            .fundamental(FundamentalField::SalesTtm, obs);
        b.build().unwrap()
    }

    #[test]
    fn sales_growth_prefers_three_year_span() {
        let t0 = d("2021-02-01");
        // Observations sit right at the anchors; staleness stays under the
        // fill bound because each anchor has a fresh enough observation.
        let panel = sales_panel(&[
            (dates::offset_days(t0, 1095), 100.0),
            (dates::offset_days(t0, 730), 100.0),
            (dates::offset_days(t0, 365), 100.0),
            (dates::offset_days(t0, 1), 130.0),
        ]);
        let g = sales_growth_loading(&panel, 0, t0).unwrap();
        assert!((g - 0.10).abs() < 1e-12);
    }

    #[test]
    fn sales_growth_falls_back_to_two_year_span() {
        let t0 = d("2021-02-01");
        let panel = sales_panel(&[
            (dates::offset_days(t0, 730), 100.0),
            (dates::offset_days(t0, 365), 110.0),
            (dates::offset_days(t0, 1), 121.0),
        ]);
        let g = sales_growth_loading(&panel, 0, t0).unwrap();
        assert!((g - 0.105).abs() < 1e-12);
    }

    #[test]
    fn sales_growth_requires_positive_base() {
        let t0 = d("2021-02-01");
        let panel = sales_panel(&[
            (dates::offset_days(t0, 365), 0.0),
            (dates::offset_days(t0, 1), 121.0),
        ]);
        assert_eq!(sales_growth_loading(&panel, 0, t0), None);
    }

    // ==== liquidity ====

    #[test]
    fn liquidity_is_log_of_constant_turnover() {
        let dates = consecutive_dates(d("2021-01-01"), 92);
        let mut b = PanelBuilder::new(dates);
        let turnover = (-4.0f64).exp();
        b.security("A")
            .constant_price(10.0)
            .constant_shares(1000.0)
            .constant_volume(1000.0 * turnover);
        let panel = b.build().unwrap();
        let t0 = d("2021-01-01") + chrono::Duration::days(92);
        let sto = liquidity_loading(&panel, 0, t0).unwrap();
        assert!((sto + 4.0).abs() < 1e-12);
    }

    #[test]
    fn liquidity_logs_the_mean_not_the_mean_of_logs() {
        let dates = consecutive_dates(d("2021-01-01"), 92);
        let mut b = PanelBuilder::new(dates.clone());
        let mut handle = b.security("A");
        handle.constant_price(10.0).constant_shares(1.0);
        // Turnovers cycle 1, e^2, e^-2: the mean-then-log and
        // log-then-mean orders disagree.
        for i in 0..dates.len() {
            let t = match i % 3 {
                0 => 1.0,
                1 => (2.0f64).exp(),
                _ => (-2.0f64).exp(),
            };
            handle.volume_at(i, Some(t));
        }
        let panel = b.build().unwrap();
        let t0 = d("2021-01-01") + chrono::Duration::days(92);

        let lo = dates::offset_days(t0, SHORT_WINDOW_DAYS);
        let hi = dates::offset_days(t0, 1);
        let window = dates::window_indices(panel.dates(), lo, hi);
        let turnovers: Vec<f64> = window
            .map(|i| panel.volume_at(0, i).unwrap() / panel.shares_at(0, i).unwrap())
            .collect();
        let log_of_mean = (turnovers.iter().sum::<f64>() / 91.0).ln();
        let mean_of_logs = turnovers.iter().map(|t| t.ln()).sum::<f64>() / 91.0;

        let sto = liquidity_loading(&panel, 0, t0).unwrap();
        assert!((sto - log_of_mean).abs() < 1e-12);
        assert!((sto - mean_of_logs).abs() > 0.1);
    }

    #[test]
    fn liquidity_missing_when_volume_always_zero() {
        let dates = consecutive_dates(d("2021-01-01"), 92);
        let mut b = PanelBuilder::new(dates);
        b.security("A")
            .constant_price(10.0)
            .constant_shares(1000.0)
            .constant_volume(0.0);
        let panel = b.build().unwrap();
        let t0 = d("2021-01-01") + chrono::Duration::days(92);
        assert_eq!(liquidity_loading(&panel, 0, t0), None);
    }

    // ==== normalization ====

    #[test]
    fn normalization_maps_quartiles_to_unit_interval() {
        let norm = normalize_style_loadings(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0; 5]).unwrap();
        assert_eq!(norm.values, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert_eq!(norm.center_shift, 0.0);
    }

    #[test]
    fn degenerate_vector_normalizes_to_zeros() {
        let norm = normalize_style_loadings(&[7.0; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(norm.values, vec![0.0; 6]);
    }

    #[test]
    fn outliers_clip_before_centering() {
        let mut values = vec![-1.0, -0.5, 0.0, 0.5, 1.0, 1000.0];
        let mc = vec![1.0; 6];
        let norm = normalize_style_loadings(&values, &mc).unwrap();
        for (v, shift) in norm.values.iter().map(|v| (v, norm.center_shift)) {
            let pre = v + shift;
            assert!((-CLIP_BOUND..=CLIP_BOUND).contains(&pre));
        }
        // Growing the outlier further changes nothing.
        values[5] = 1e9;
        let norm2 = normalize_style_loadings(&values, &mc).unwrap();
        for (a, b) in norm.values.iter().zip(&norm2.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_needs_four_values() {
        let err = normalize_style_loadings(&[1.0, 2.0, 3.0], &[1.0; 3]).unwrap_err();
        assert!(err.to_string().contains("at least 4"));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        /// A positive affine map of the raw vector leaves the output
        /// unchanged.
        #[test]
        fn normalization_is_affine_invariant(
            raw in proptest::collection::vec(-100.0f64..100.0, 4..40),
            a in 0.01f64..100.0,
            b in -50.0f64..50.0,
        ) {
            let mc: Vec<f64> = (0..raw.len()).map(|i| 1.0 + i as f64).collect();
            let base = normalize_style_loadings(&raw, &mc).unwrap();
            let mapped: Vec<f64> = raw.iter().map(|x| a * x + b).collect();
            let moved = normalize_style_loadings(&mapped, &mc).unwrap();
            for (x, y) in base.values.iter().zip(&moved.values) {
                proptest::prop_assert!((x - y).abs() < 1e-9);
            }
        }

        /// The market-cap-weighted mean after centering is zero.
        #[test]
        fn normalization_centers_weighted_mean(
            raw in proptest::collection::vec(-100.0f64..100.0, 4..40),
        ) {
            let mc: Vec<f64> = (0..raw.len()).map(|i| 1.0 + (i % 7) as f64).collect();
            let norm = normalize_style_loadings(&raw, &mc).unwrap();
            let total: f64 = mc.iter().sum();
            let weighted: f64 = norm.values.iter().zip(&mc).map(|(x, w)| x * w).sum();
            proptest::prop_assert!(weighted.abs() <= CENTERING_REL_TOL * total);
        }
    }

    // ==== matrices and the store ====

    /// Panel long enough for all eleven loadings, trading every calendar
    /// day, with complete data for `n` securities.
    pub(crate) fn complete_panel(n: usize) -> PanelDataset {
        let days = 500;
        let dates = consecutive_dates(d("2020-01-01"), days);
        let mut b = PanelBuilder::new(dates.clone());
        for k in 0..n {
            let id = format!("S{k:03}");
            let drift = 0.0002 * (k as f64 - n as f64 / 2.0) / n as f64;
            let returns: Vec<f64> = (1..days).map(|i| wiggle(i * (k + 2)) + drift).collect();
            let mut handle = b.security(&id);
            handle
                .price_path(50.0 + k as f64, &returns)
                .constant_shares(1e6 * (1.0 + k as f64))
                .constant_volume(1e4 * (1.0 + k as f64))
                .country(if k % 2 == 0 { "US" } else { "GB" })
                .industry(if k % 3 == 0 { "Tech" } else { "Energy" });
            let start = d("2020-01-01");
            for q in 0..6 {
                let when = start + chrono::Duration::days(q * 90);
                let growth = 1.0 + 0.02 * q as f64;
                handle
                    .fundamental(FundamentalField::DividendsPerShareTtm, &[(when, 1.0)])
                    .fundamental(FundamentalField::NetIncome, &[(when, 10.0 + k as f64)])
                    .fundamental(FundamentalField::TotalAssets, &[(when, 200.0)])
                    .fundamental(FundamentalField::BookValuePerShare, &[(when, 20.0)])
                    .fundamental(FundamentalField::EpsReportedTtm, &[(when, 1.0)])
                    .fundamental(FundamentalField::EpsConsensusNextYear, &[(when, 2.0)])
                    .fundamental(FundamentalField::SalesTtm, &[(when, 100.0 * growth)]);
            }
        }
        for i in 1..days {
            b.benchmark_at(i, Some(wiggle(i)));
        }
        b.build().unwrap()
    }

    #[test]
    fn loading_matrix_centers_every_factor() {
        let panel = complete_panel(8);
        let matrix = compute_loading_matrix(&panel, d("2021-02-01")).unwrap();
        assert_eq!(matrix.n_securities(), 8);
        let total: f64 = matrix.market_caps().iter().sum();
        for factor in StyleFactor::ALL {
            let col = matrix.normalized_column(factor);
            let weighted: f64 = col
                .iter()
                .zip(matrix.market_caps())
                .map(|(x, mc)| x * mc)
                .sum();
            assert!(
                weighted.abs() <= CENTERING_REL_TOL * total,
                "{factor}: weighted mean {weighted}"
            );
        }
    }

    #[test]
    fn incomplete_security_is_excluded() {
        let panel = complete_panel(8);
        // Security S000 loses its dividend data in a rebuilt panel.
        let days = 500;
        let dates = consecutive_dates(d("2020-01-01"), days);
        let mut b = PanelBuilder::new(dates);
        let n = 8;
        for k in 0..n {
            let id = format!("S{k:03}");
            let drift = 0.0002 * (k as f64 - n as f64 / 2.0) / n as f64;
            let returns: Vec<f64> = (1..days).map(|i| wiggle(i * (k + 2)) + drift).collect();
            let mut handle = b.security(&id);
            handle
                .price_path(50.0 + k as f64, &returns)
                .constant_shares(1e6 * (1.0 + k as f64))
                .constant_volume(1e4 * (1.0 + k as f64))
                .country(if k % 2 == 0 { "US" } else { "GB" })
                .industry(if k % 3 == 0 { "Tech" } else { "Energy" });
            let start = d("2020-01-01");
            for q in 0..6 {
                let when = start + chrono::Duration::days(q * 90);
                if k != 0 {
                    handle.fundamental(FundamentalField::DividendsPerShareTtm, &[(when, 1.0)]);
                }
                handle
                    .fundamental(FundamentalField::NetIncome, &[(when, 10.0 + k as f64)])
                    .fundamental(FundamentalField::TotalAssets, &[(when, 200.0)])
                    .fundamental(FundamentalField::BookValuePerShare, &[(when, 20.0)])
                    .fundamental(FundamentalField::EpsReportedTtm, &[(when, 1.0)])
                    .fundamental(FundamentalField::EpsConsensusNextYear, &[(when, 2.0)])
                    .fundamental(FundamentalField::SalesTtm, &[(when, 100.0)]);
            }
        }
        for i in 1..days {
            b.benchmark_at(i, Some(wiggle(i)));
        }
        let reduced = b.build().unwrap();

        let full = compute_loading_matrix(&panel, d("2021-02-01")).unwrap();
        let partial = compute_loading_matrix(&reduced, d("2021-02-01")).unwrap();
        assert_eq!(full.n_securities(), 8);
        assert_eq!(partial.n_securities(), 7);
        let s0 = reduced.index_of("S000").unwrap();
        assert!(!partial.contains(s0));
    }

    #[test]
    fn too_small_cross_section_errors() {
        let panel = complete_panel(3);
        let err = compute_loading_matrix(&panel, d("2021-02-01")).unwrap_err();
        assert!(matches!(err, Error::CrossSectionTooSmall { available: 3, .. }));
    }

    #[test]
    fn store_serves_matrix_for_mid_month_dates() {
        let panel = complete_panel(6);
        let store = LoadingStore::compute(&panel, d("2021-01-01"), d("2021-04-30")).unwrap();
        assert!(store.len() >= 3);
        let m = store.for_date(d("2021-02-17")).unwrap();
        assert_eq!(m.date(), d("2021-02-01"));
        assert!(store.for_date(d("2020-12-31")).is_none());
    }

    #[test]
    fn early_months_without_history_are_skipped() {
        let panel = complete_panel(6);
        let store = LoadingStore::compute(&panel, d("2020-01-01"), d("2020-06-30")).unwrap();
        // Beta and long momentum need a year of history, so each early
        // month lacks complete securities.
        assert!(store.is_empty());
        assert!(!store.skipped.is_empty());
    }
}
