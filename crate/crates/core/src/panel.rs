//! Daily panel data: prices, volumes, shares outstanding, fundamentals,
//! country and industry memberships, and a benchmark return series.
//!
//! Returns are derived from consecutive close prices. Sparse inputs are
//! forward filled with a bounded staleness window, and each filled value
//! remembers the date it was originally observed on.

use std::collections::HashMap;
use std::fmt;

use chrono::NaiveDate;

use crate::dates;
use crate::error::{Error, Result};
use crate::loadings::LoadingMatrix;

/// Longest allowed staleness, in calendar days, when forward filling.
pub const DEFAULT_MAX_GAP_DAYS: i64 = 183;

/// Tolerance for membership weights summing to one.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Identifier of a security, unique within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SecurityId(String);

impl SecurityId {
    /// Builds an identifier; empty strings are rejected.
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(Error::Validation("empty security id".into()));
        }
        Ok(SecurityId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SecurityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Fundamental fields carried in the long-format fundamentals input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FundamentalField {
    DividendsPerShareTtm,
    NetIncome,
    TotalAssets,
    BookValuePerShare,
    EpsReportedTtm,
    EpsConsensusNextYear,
    SalesTtm,
}

impl FundamentalField {
    pub const ALL: [FundamentalField; 7] = [
        FundamentalField::DividendsPerShareTtm,
        FundamentalField::NetIncome,
        FundamentalField::TotalAssets,
        FundamentalField::BookValuePerShare,
        FundamentalField::EpsReportedTtm,
        FundamentalField::EpsConsensusNextYear,
        FundamentalField::SalesTtm,
    ];

    /// Field name as it appears in the fundamentals CSV.
    pub fn as_str(&self) -> &'static str {
        match self {
            FundamentalField::DividendsPerShareTtm => "dividends_per_share_ttm",
            FundamentalField::NetIncome => "net_income",
            FundamentalField::TotalAssets => "total_assets",
            FundamentalField::BookValuePerShare => "book_value_per_share",
            FundamentalField::EpsReportedTtm => "eps_reported_ttm",
            FundamentalField::EpsConsensusNextYear => "eps_consensus_next_year",
            FundamentalField::SalesTtm => "sales_ttm",
        }
    }

    pub fn parse(s: &str) -> Option<FundamentalField> {
        FundamentalField::ALL.iter().copied().find(|f| f.as_str() == s)
    }
}

impl fmt::Display for FundamentalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A value together with the date it was originally observed on.
///
/// Forward-filled series keep the original observation date so staleness
/// is always measured from the source observation, never from a copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub value: f64,
    pub observed: NaiveDate,
}

/// Forward fills a dense series aligned to `dates`.
///
/// Each missing slot takes the most recent earlier observation whose
/// original date is no more than `max_gap_days` calendar days old.
/// Applying the fill twice yields the same series as applying it once.
pub fn forward_fill(
    dates: &[NaiveDate],
    series: &[Option<Observation>],
    max_gap_days: i64,
) -> Vec<Option<Observation>> {
    assert_eq!(dates.len(), series.len());
    let mut last: Option<Observation> = None;
    let mut out = Vec::with_capacity(series.len());
    for (i, slot) in series.iter().enumerate() {
        if let Some(obs) = slot {
            last = Some(*obs);
        }
        out.push(match last {
            Some(obs) if dates::days_between(obs.observed, dates[i]) <= max_gap_days => Some(obs),
            _ => None,
        });
    }
    out
}

/// Forward fills a sparse series onto the `dates` axis.
///
/// `observations` must be sorted by date; observation dates need not be
/// trading days. Each slot takes the most recent observation at or before
/// it, subject to the staleness bound.
pub fn forward_fill_sparse(
    dates: &[NaiveDate],
    observations: &[(NaiveDate, f64)],
    max_gap_days: i64,
) -> Vec<Option<Observation>> {
    let mut out = Vec::with_capacity(dates.len());
    let mut next = 0usize;
    let mut last: Option<Observation> = None;
    for &date in dates {
        while next < observations.len() && observations[next].0 <= date {
            last = Some(Observation {
                value: observations[next].1,
                observed: observations[next].0,
            });
            next += 1;
        }
        out.push(match last {
            Some(obs) if dates::days_between(obs.observed, date) <= max_gap_days => Some(obs),
            _ => None,
        });
    }
    out
}

/// Raw per-security inputs used to assemble a dataset.
#[derive(Debug, Clone, Default)]
pub struct SecurityInput {
    pub id: String,
    /// Close prices aligned to the dataset dates.
    pub prices: Vec<Option<f64>>,
    /// Traded volumes aligned to the dataset dates.
    pub volume: Vec<Option<f64>>,
    /// Shares outstanding as reported, aligned to the dataset dates.
    pub shares_outstanding: Vec<Option<f64>>,
    /// Sparse fundamental observations, keyed by field.
    pub fundamentals: HashMap<FundamentalField, Vec<(NaiveDate, f64)>>,
    /// Country membership weights; empty means unknown.
    pub country: Vec<(String, f64)>,
    /// Industry membership weights; empty means unknown.
    pub industry: Vec<(String, f64)>,
}

/// Per-security panel columns after derivation and filling.
#[derive(Debug, Clone, PartialEq)]
pub struct SecurityData {
    id: SecurityId,
    prices: Vec<Option<f64>>,
    volume: Vec<Option<f64>>,
    shares_raw: Vec<Option<f64>>,
    shares: Vec<Option<Observation>>,
    returns: Vec<Option<f64>>,
    fundamentals_raw: HashMap<FundamentalField, Vec<(NaiveDate, f64)>>,
    fundamentals: HashMap<FundamentalField, Vec<Option<Observation>>>,
    country: Vec<(String, f64)>,
    industry: Vec<(String, f64)>,
    last_return: Option<usize>,
}

impl SecurityData {
    pub fn id(&self) -> &SecurityId {
        &self.id
    }

    pub fn country(&self) -> &[(String, f64)] {
        &self.country
    }

    pub fn industry(&self) -> &[(String, f64)] {
        &self.industry
    }
}

/// A validated daily panel over an ordered trading calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    dates: Vec<NaiveDate>,
    date_idx: HashMap<NaiveDate, usize>,
    securities: Vec<SecurityData>,
    sec_idx: HashMap<String, usize>,
    benchmark: Vec<Option<f64>>,
}

impl PanelDataset {
    /// Assembles and validates a dataset from raw inputs.
    ///
    /// Securities are sorted by id. Prices must be positive, volumes
    /// non-negative, shares outstanding positive, membership weights in
    /// [0, 1] summing to one per dimension, and benchmark returns above -1.
    pub fn from_parts(
        dates: Vec<NaiveDate>,
        securities: Vec<SecurityInput>,
        benchmark: Vec<Option<f64>>,
    ) -> Result<PanelDataset> {
        if dates.is_empty() {
            return Err(Error::Validation("no dates".into()));
        }
        if !dates.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation(
                "dates must be strictly increasing".into(),
            ));
        }
        if benchmark.len() != dates.len() {
            return Err(Error::Validation(format!(
                "benchmark length {} does not match {} dates",
                benchmark.len(),
                dates.len()
            )));
        }
        for r in benchmark.iter().flatten() {
            if !r.is_finite() || *r <= -1.0 {
                return Err(Error::Validation(format!("benchmark return {r} <= -1")));
            }
        }

        let mut built: Vec<SecurityData> = Vec::with_capacity(securities.len());
        for input in securities {
            built.push(Self::build_security(&dates, input)?);
        }
        built.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in built.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Validation(format!(
                    "duplicate security id {}",
                    pair[0].id
                )));
            }
        }

        let date_idx = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let sec_idx = built
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str().to_owned(), i))
            .collect();
        Ok(PanelDataset {
            dates,
            date_idx,
            securities: built,
            sec_idx,
            benchmark,
        })
    }

    fn build_security(dates: &[NaiveDate], input: SecurityInput) -> Result<SecurityData> {
        let id = SecurityId::new(input.id)?;
        let n = dates.len();
        let check_len = |name: &str, len: usize| -> Result<()> {
            if len != n {
                return Err(Error::Validation(format!(
                    "{id}: {name} length {len} does not match {n} dates"
                )));
            }
            Ok(())
        };
        check_len("prices", input.prices.len())?;
        check_len("volume", input.volume.len())?;
        check_len("shares_outstanding", input.shares_outstanding.len())?;

        for p in input.prices.iter().flatten() {
            if !p.is_finite() || *p <= 0.0 {
                return Err(Error::Validation(format!("{id}: non-positive price {p}")));
            }
        }
        for v in input.volume.iter().flatten() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Validation(format!("{id}: negative volume {v}")));
            }
        }
        for s in input.shares_outstanding.iter().flatten() {
            if !s.is_finite() || *s <= 0.0 {
                return Err(Error::Validation(format!(
                    "{id}: non-positive shares outstanding {s}"
                )));
            }
        }
        Self::check_weights(&id, "country", &input.country)?;
        Self::check_weights(&id, "industry", &input.industry)?;

        let mut fundamentals_raw = input.fundamentals;
        let mut fundamentals = HashMap::new();
        for (field, obs) in fundamentals_raw.iter_mut() {
            obs.sort_by_key(|(d, _)| *d);
            for pair in obs.windows(2) {
                if pair[0].0 == pair[1].0 {
                    return Err(Error::Validation(format!(
                        "{id}: duplicate {field} observation on {}",
                        pair[0].0
                    )));
                }
            }
            for (_, v) in obs.iter() {
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "{id}: non-finite {field} value"
                    )));
                }
            }
            fundamentals.insert(
                *field,
                forward_fill_sparse(dates, obs, DEFAULT_MAX_GAP_DAYS),
            );
        }

        let shares_dense: Vec<Option<Observation>> = input
            .shares_outstanding
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.map(|value| Observation {
                    value,
                    observed: dates[i],
                })
            })
            .collect();
        let shares = forward_fill(dates, &shares_dense, DEFAULT_MAX_GAP_DAYS);

        let mut returns = vec![None; n];
        for i in 1..n {
            if let (Some(p0), Some(p1)) = (input.prices[i - 1], input.prices[i]) {
                returns[i] = Some(p1 / p0 - 1.0);
            }
        }
        let last_return = (0..n).rev().find(|&i| returns[i].is_some());

        let mut country = input.country;
        country.sort_by(|a, b| a.0.cmp(&b.0));
        let mut industry = input.industry;
        industry.sort_by(|a, b| a.0.cmp(&b.0));

        Ok(SecurityData {
            id,
            prices: input.prices,
            volume: input.volume,
            shares_raw: input.shares_outstanding,
            shares,
            returns,
            fundamentals_raw,
            fundamentals,
            country,
            industry,
            last_return,
        })
    }

    fn check_weights(id: &SecurityId, dimension: &str, weights: &[(String, f64)]) -> Result<()> {
        if weights.is_empty() {
            return Ok(());
        }
        let mut sum = 0.0;
        for (label, w) in weights {
            if label.is_empty() {
                return Err(Error::Validation(format!("{id}: empty {dimension} label")));
            }
            if !w.is_finite() || *w < 0.0 || *w > 1.0 {
                return Err(Error::Validation(format!(
                    "{id}: {dimension} weight {w} outside [0, 1]"
                )));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Validation(format!(
                "{id}: {dimension} weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_securities(&self) -> usize {
        self.securities.len()
    }

    /// Index of a date in the trading calendar, if it is a trading day.
    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.date_idx.get(&date).copied()
    }

    pub fn security(&self, idx: usize) -> &SecurityData {
        &self.securities[idx]
    }

    pub fn securities(&self) -> impl Iterator<Item = &SecurityData> {
        self.securities.iter()
    }

    pub fn id(&self, idx: usize) -> &SecurityId {
        &self.securities[idx].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.sec_idx.get(id).copied()
    }

    /// Close price of a security on an exact trading day.
    pub fn price_at(&self, sec: usize, date_idx: usize) -> Option<f64> {
        self.securities[sec].prices[date_idx]
    }

    /// Traded volume of a security on an exact trading day.
    pub fn volume_at(&self, sec: usize, date_idx: usize) -> Option<f64> {
        self.securities[sec].volume[date_idx]
    }

    /// Forward-filled shares outstanding on a trading day.
    pub fn shares_at(&self, sec: usize, date_idx: usize) -> Option<f64> {
        self.securities[sec].shares[date_idx].map(|o| o.value)
    }

    /// Shares outstanding exactly as reported on a trading day.
    pub fn shares_raw_at(&self, sec: usize, date_idx: usize) -> Option<f64> {
        self.securities[sec].shares_raw[date_idx]
    }

    /// One-day return of a security on a trading day.
    pub fn return_at(&self, sec: usize, date_idx: usize) -> Option<f64> {
        self.securities[sec].returns[date_idx]
    }

    /// Market capitalization on an exact trading day: close times
    /// forward-filled shares outstanding, both from the same day.
    pub fn market_cap_at(&self, sec: usize, date_idx: usize) -> Option<f64> {
        let p = self.price_at(sec, date_idx)?;
        let s = self.shares_at(sec, date_idx)?;
        Some(p * s)
    }

    /// Most recent trading day at or before `target` with a price for
    /// `sec`, together with that price.
    pub fn resolve_price(&self, sec: usize, target: NaiveDate) -> Option<(usize, f64)> {
        let hi = dates::resolve_at_or_before(&self.dates, target)?;
        (0..=hi)
            .rev()
            .find_map(|i| self.securities[sec].prices[i].map(|p| (i, p)))
    }

    /// Market capitalization at the price anchor resolved at or before
    /// `target`.
    pub fn resolve_market_cap(&self, sec: usize, target: NaiveDate) -> Option<f64> {
        let (idx, price) = self.resolve_price(sec, target)?;
        let shares = self.shares_at(sec, idx)?;
        Some(price * shares)
    }

    /// Forward-filled fundamental value on a trading day.
    pub fn fundamental_at(
        &self,
        sec: usize,
        field: FundamentalField,
        date_idx: usize,
    ) -> Option<f64> {
        self.securities[sec]
            .fundamentals
            .get(&field)
            .and_then(|s| s[date_idx].map(|o| o.value))
    }

    /// Raw sparse observations of a fundamental field.
    pub fn fundamental_observations(
        &self,
        sec: usize,
        field: FundamentalField,
    ) -> &[(NaiveDate, f64)] {
        self.securities[sec]
            .fundamentals_raw
            .get(&field)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Benchmark return on a trading day.
    pub fn benchmark_return(&self, date_idx: usize) -> Option<f64> {
        self.benchmark[date_idx]
    }

    /// Index of the last trading day with a return for `sec`.
    pub fn last_return_index(&self, sec: usize) -> Option<usize> {
        self.securities[sec].last_return
    }
}

/// Builder assembling a [`PanelDataset`] date column by date column.
#[derive(Debug, Default)]
pub struct PanelBuilder {
    dates: Vec<NaiveDate>,
    securities: Vec<SecurityInput>,
    benchmark: Vec<Option<f64>>,
}

impl PanelBuilder {
    pub fn new(dates: Vec<NaiveDate>) -> PanelBuilder {
        let n = dates.len();
        PanelBuilder {
            dates,
            securities: Vec::new(),
            benchmark: vec![None; n],
        }
    }

    /// Starts a new security and returns a handle for populating it.
    pub fn security(&mut self, id: &str) -> SecurityHandle<'_> {
        let n = self.dates.len();
        self.securities.push(SecurityInput {
            id: id.to_owned(),
            prices: vec![None; n],
            volume: vec![None; n],
            shares_outstanding: vec![None; n],
            ..SecurityInput::default()
        });
        let sec = self.securities.last_mut().unwrap();
        SecurityHandle {
            dates: &self.dates,
            sec,
        }
    }

    /// Sets the benchmark return on every date after the first.
    pub fn benchmark_constant(&mut self, r: f64) -> &mut Self {
        for slot in self.benchmark.iter_mut().skip(1) {
            *slot = Some(r);
        }
        self
    }

    /// Sets benchmark returns from the second date onward.
    pub fn benchmark_returns(&mut self, returns: &[f64]) -> &mut Self {
        assert_eq!(returns.len() + 1, self.benchmark.len());
        for (i, r) in returns.iter().enumerate() {
            self.benchmark[i + 1] = Some(*r);
        }
        self
    }

    /// Sets one benchmark return slot.
    pub fn benchmark_at(&mut self, date_idx: usize, r: Option<f64>) -> &mut Self {
        self.benchmark[date_idx] = r;
        self
    }

    pub fn build(self) -> Result<PanelDataset> {
        PanelDataset::from_parts(self.dates, self.securities, self.benchmark)
    }
}

/// Mutable handle for one security inside a [`PanelBuilder`].
pub struct SecurityHandle<'a> {
    dates: &'a [NaiveDate],
    sec: &'a mut SecurityInput,
}

impl SecurityHandle<'_> {
    /// Sets prices on all dates.
    pub fn prices(&mut self, prices: &[f64]) -> &mut Self {
        assert_eq!(prices.len(), self.dates.len());
        self.sec.prices = prices.iter().map(|p| Some(*p)).collect();
        self
    }

    /// Sets the same price on all dates.
    pub fn constant_price(&mut self, price: f64) -> &mut Self {
        self.sec.prices = vec![Some(price); self.dates.len()];
        self
    }

    /// Sets prices implied by a starting price and daily returns.
    pub fn price_path(&mut self, first: f64, returns: &[f64]) -> &mut Self {
        assert_eq!(returns.len() + 1, self.dates.len());
        let mut prices = Vec::with_capacity(self.dates.len());
        let mut p = first;
        prices.push(Some(p));
        for r in returns {
            p *= 1.0 + r;
            prices.push(Some(p));
        }
        self.sec.prices = prices;
        self
    }

    /// Sets one price slot.
    pub fn price_at(&mut self, date_idx: usize, price: Option<f64>) -> &mut Self {
        self.sec.prices[date_idx] = price;
        self
    }

    /// Sets the same traded volume on all dates.
    pub fn constant_volume(&mut self, volume: f64) -> &mut Self {
        self.sec.volume = vec![Some(volume); self.dates.len()];
        self
    }

    /// Sets one volume slot.
    pub fn volume_at(&mut self, date_idx: usize, volume: Option<f64>) -> &mut Self {
        self.sec.volume[date_idx] = volume;
        self
    }

    /// Sets the same shares outstanding on all dates.
    pub fn constant_shares(&mut self, shares: f64) -> &mut Self {
        self.sec.shares_outstanding = vec![Some(shares); self.dates.len()];
        self
    }

    /// Sets shares outstanding per date.
    pub fn shares(&mut self, shares: &[f64]) -> &mut Self {
        assert_eq!(shares.len(), self.dates.len());
        self.sec.shares_outstanding = shares.iter().map(|s| Some(*s)).collect();
        self
    }

    /// Sets shares outstanding on the first date only; forward filling
    /// carries it while it stays fresh.
    pub fn initial_shares(&mut self, shares: f64) -> &mut Self {
        self.sec.shares_outstanding[0] = Some(shares);
        self
    }

    /// Adds sparse observations of one fundamental field.
    pub fn fundamental(&mut self, field: FundamentalField, obs: &[(NaiveDate, f64)]) -> &mut Self {
        self.sec
            .fundamentals
            .entry(field)
            .or_default()
            .extend_from_slice(obs);
        self
    }

    /// Sets a single country membership with weight one.
    pub fn country(&mut self, label: &str) -> &mut Self {
        self.sec.country = vec![(label.to_owned(), 1.0)];
        self
    }

    /// Sets split country memberships.
    pub fn countries(&mut self, weights: &[(&str, f64)]) -> &mut Self {
        self.sec.country = weights.iter().map(|(l, w)| ((*l).to_owned(), *w)).collect();
        self
    }

    /// Sets a single industry membership with weight one.
    pub fn industry(&mut self, label: &str) -> &mut Self {
        self.sec.industry = vec![(label.to_owned(), 1.0)];
        self
    }

    /// Sets split industry memberships.
    pub fn industries(&mut self, weights: &[(&str, f64)]) -> &mut Self {
        self.sec.industry = weights.iter().map(|(l, w)| ((*l).to_owned(), *w)).collect();
        self
    }
}

/// Securities usable in one day's cross-sectional regression.
///
/// Members come from the day's loading matrix and additionally have a
/// positive market cap and a return on the date itself.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveUniverse {
    pub date: NaiveDate,
    pub date_idx: usize,
    /// Panel indices of the members, ascending by security id.
    pub members: Vec<usize>,
    /// Market caps on `date`, aligned with `members`.
    pub market_caps: Vec<f64>,
}

impl EffectiveUniverse {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Returns of the members on `date`, aligned with `members`.
    pub fn returns(&self, panel: &PanelDataset) -> Vec<f64> {
        self.members
            .iter()
            .map(|&sec| panel.return_at(sec, self.date_idx).unwrap())
            .collect()
    }
}

/// Builds the effective universe for a fit date from the loading matrix
/// valid that day.
pub fn effective_universe(
    panel: &PanelDataset,
    loadings: &LoadingMatrix,
    date: NaiveDate,
) -> Result<EffectiveUniverse> {
    let date_idx = panel
        .date_index(date)
        .ok_or_else(|| Error::Config(format!("{date} is not a panel trading day")))?;
    let mut members = Vec::new();
    let mut market_caps = Vec::new();
    for &sec in loadings.security_indices() {
        if panel.return_at(sec, date_idx).is_none() {
            continue;
        }
        match panel.market_cap_at(sec, date_idx) {
            Some(mc) if mc > 0.0 => {
                members.push(sec);
                market_caps.push(mc);
            }
            _ => {}
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

/// Per-country membership count and market-cap share of a universe.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryStat {
    pub country: String,
    /// Members whose largest country weight points here.
    pub count: usize,
    /// Membership-weighted market-cap share.
    pub mc_share: f64,
}

/// Summarizes a universe by country.
///
/// Each member counts once toward the country holding its largest weight
/// (ties broken by label). Market-cap shares use the fractional weights,
/// so they sum to one.
pub fn country_summary(universe: &EffectiveUniverse, panel: &PanelDataset) -> Vec<CountryStat> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut mc: HashMap<&str, f64> = HashMap::new();
    let total: f64 = universe.market_caps.iter().sum();
    for (pos, &sec) in universe.members.iter().enumerate() {
        let weights = panel.security(sec).country();
        if weights.is_empty() {
            continue;
        }
        let primary = weights
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap();
        *counts.entry(primary.0.as_str()).or_default() += 1;
        for (label, w) in weights {
            *mc.entry(label.as_str()).or_default() += w * universe.market_caps[pos];
        }
    }
    let mut labels: Vec<&str> = mc.keys().copied().collect();
    labels.sort_unstable();
    labels
        .into_iter()
        .map(|label| CountryStat {
            country: label.to_owned(),
            count: counts.get(label).copied().unwrap_or(0),
            mc_share: mc[label] / total,
        })
        .collect()
}
