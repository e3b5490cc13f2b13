//! Explanatory-power evaluation: pooled weighted R2 of daily cross-
//! sectional fits, in sample and under security-level cross-validation,
//! at one-day and 90-day horizons.
//!
//! Sums of squares pool across every (date, security) cell before the
//! ratio is taken, so dates with more dispersion weigh in proportionally
//! rather than each date counting equally.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cross_section::{solve_cross_section, ConstraintSet, DesignMatrix};
use crate::error::{Error, Result};
use crate::loadings::{LoadingStore, StyleFactor};
use crate::panel::{effective_universe, EffectiveUniverse, PanelDataset};

/// Number of evaluated dates summed into one long-horizon window.
pub const LONG_HORIZON_DAYS: usize = 90;

/// Default number of cross-validation folds.
pub const DEFAULT_FOLDS: usize = 10;

/// Return horizon for evaluation. Long-horizon returns are sums of daily
/// returns over consecutive non-overlapping blocks of evaluated dates,
/// aligned to the start of the evaluation period; a trailing partial
/// block is dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    OneDay,
    NinetyDays,
}

impl Horizon {
    fn window(&self) -> usize {
        match self {
            Horizon::OneDay => 1,
            Horizon::NinetyDays => LONG_HORIZON_DAYS,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Horizon::OneDay => "1d",
            Horizon::NinetyDays => "90d",
        }
    }
}

/// Which factor blocks enter a fit. The market intercept is always
/// included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorSubset {
    /// Style factors included, in canonical order.
    pub styles: Vec<StyleFactor>,
    pub include_countries: bool,
    pub include_industries: bool,
}

impl FactorSubset {
    pub fn market_only() -> FactorSubset {
        FactorSubset {
            styles: Vec::new(),
            include_countries: false,
            include_industries: false,
        }
    }

    pub fn market_and_styles() -> FactorSubset {
        FactorSubset {
            styles: StyleFactor::ALL.to_vec(),
            include_countries: false,
            include_industries: false,
        }
    }

    pub fn market_and_countries() -> FactorSubset {
        FactorSubset {
            styles: Vec::new(),
            include_countries: true,
            include_industries: false,
        }
    }

    pub fn market_and_industries() -> FactorSubset {
        FactorSubset {
            styles: Vec::new(),
            include_countries: false,
            include_industries: true,
        }
    }

    /// Every block: market, all styles, countries, industries.
    pub fn full() -> FactorSubset {
        FactorSubset {
            styles: StyleFactor::ALL.to_vec(),
            include_countries: true,
            include_industries: true,
        }
    }

    /// Countries and industries but no styles.
    pub fn no_styles() -> FactorSubset {
        FactorSubset {
            styles: Vec::new(),
            include_countries: true,
            include_industries: true,
        }
    }

    /// The no-style baseline plus a single style factor.
    pub fn with_single_style(factor: StyleFactor) -> FactorSubset {
        FactorSubset {
            styles: vec![factor],
            include_countries: true,
            include_industries: true,
        }
    }

    /// The full model with one style factor removed.
    pub fn without_style(factor: StyleFactor) -> FactorSubset {
        FactorSubset {
            styles: StyleFactor::ALL
                .iter()
                .copied()
                .filter(|f| f != &factor)
                .collect(),
            include_countries: true,
            include_industries: true,
        }
    }

    pub fn label(&self) -> String {
        let mut parts = vec!["market".to_owned()];
        match self.styles.len() {
            0 => {}
            n if n == StyleFactor::ALL.len() => parts.push("style".to_owned()),
            1 => parts.push(self.styles[0].name().to_owned()),
            _ => parts.push(format!("{} styles", self.styles.len())),
        }
        if self.include_countries {
            parts.push("country".to_owned());
        }
        if self.include_industries {
            parts.push("industry".to_owned());
        }
        parts.join(" + ")
    }
}

/// A pooled R2 with the sums of squares it came from;
/// `r2 = 1 - ss_res / ss_tot` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R2Stat {
    pub r2: f64,
    pub ss_res: f64,
    pub ss_tot: f64,
}

impl R2Stat {
    fn new(ss_res: f64, ss_tot: f64) -> Result<R2Stat> {
        if ss_tot == 0.0 {
            return Err(Error::DegenerateReturns);
        }
        Ok(R2Stat {
            r2: 1.0 - ss_res / ss_tot,
            ss_res,
            ss_tot,
        })
    }
}

/// Pooled weighted R2 over aligned weighted residuals and returns.
///
/// Inputs carry their square-root market-cap weights already. All cells
/// pool into single sums of squares before the ratio.
pub fn pooled_r2(weighted_residuals: &[f64], weighted_returns: &[f64]) -> Result<f64> {
    Ok(pooled_r2_stat(weighted_residuals, weighted_returns)?.r2)
}

/// As [`pooled_r2`], returning the sums of squares as well.
pub fn pooled_r2_stat(weighted_residuals: &[f64], weighted_returns: &[f64]) -> Result<R2Stat> {
    if weighted_residuals.len() != weighted_returns.len() {
        return Err(Error::Validation(format!(
            "{} residuals for {} returns",
            weighted_residuals.len(),
            weighted_returns.len()
        )));
    }
    let ss_res = weighted_residuals.iter().map(|e| e * e).sum();
    let ss_tot = weighted_returns.iter().map(|r| r * r).sum();
    R2Stat::new(ss_res, ss_tot)
}

/// Assigns each of `n` securities to one of `folds` folds, uniformly at
/// random given the seed. Fold sizes differ by at most one, and the
/// assignment depends only on `(n, folds, seed)`, so it is stable across
/// dates.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    assert!(folds >= 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (pos, &sec) in order.iter().enumerate() {
        assignment[sec] = pos % folds;
    }
    assignment
}

/// One metric's pooled statistic plus bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub stat: R2Stat,
    /// Dates contributing cells.
    pub n_dates: usize,
    /// Per-date or per-fold fits dropped because the solver failed.
    pub excluded_fits: usize,
}

/// All four metrics for one factor subset.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub label: String,
    pub in_sample_1d: Metric,
    pub in_sample_90d: Metric,
    pub cv_1d: Option<Metric>,
    pub cv_90d: Option<Metric>,
    pub n_folds: usize,
}

/// A titled collection of evaluation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub title: String,
    pub rows: Vec<EvaluationReport>,
}

impl ReportTable {
    /// Aligned plain-text table, values at three decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.title);
        out.push('\n');
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain(["subset".len()])
            .max()
            .unwrap_or(6);
        out.push_str(&format!(
            "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}\n",
            "subset", "1d", "90d", "1d cv", "90d cv"
        ));
        for row in &self.rows {
            let cell = |m: &Option<Metric>| match m {
                Some(m) => format!("{:>8.3}", m.stat.r2),
                None => format!("{:>8}", "-"),
            };
            out.push_str(&format!(
                "{:<width$}  {:>8.3}  {:>8.3}  {}  {}\n",
                row.label,
                row.in_sample_1d.stat.r2,
                row.in_sample_90d.stat.r2,
                cell(&row.cv_1d),
                cell(&row.cv_90d),
            ));
        }
        out
    }

    /// CSV rendering, values at six decimals.
    pub fn to_csv_string(&self) -> String {
        let mut out =
            String::from("subset,r2_in_sample_1d,r2_in_sample_90d,r2_cv_1d,r2_cv_90d,n_dates,n_folds\n");
        for row in &self.rows {
            let cv = |m: &Option<Metric>| match m {
                Some(m) => format!("{:.6}", m.stat.r2),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{},{},{}\n",
                row.label,
                row.in_sample_1d.stat.r2,
                row.in_sample_90d.stat.r2,
                cv(&row.cv_1d),
                cv(&row.cv_90d),
                row.in_sample_1d.n_dates,
                row.n_folds,
            ));
        }
        out
    }
}

/// Cells produced by one date: `(sequence position, [(security, weighted
/// residual, weighted return)])`.
type DayCells = (usize, Vec<(usize, f64, f64)>);

/// Evaluates factor subsets over a fixed set of fit dates.
///
/// Usable dates are determined once, independent of subset: a date needs
/// a loading matrix, a universe large enough for the full model, and
/// room for the configured fold count. Every subset then sees identical
/// observation cells, which keeps nested comparisons meaningful.
pub struct Evaluator<'a> {
    panel: &'a PanelDataset,
    store: &'a LoadingStore,
    folds: usize,
    days: Vec<EffectiveUniverse>,
    /// Dates in range that could not be evaluated, with reasons.
    pub skipped: Vec<(NaiveDate, String)>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        panel: &'a PanelDataset,
        store: &'a LoadingStore,
        start: NaiveDate,
        end: NaiveDate,
        folds: usize,
    ) -> Result<Evaluator<'a>> {
        if folds < 2 {
            return Err(Error::Config(format!("fold count {folds} must be at least 2")));
        }
        if start > end {
            return Err(Error::Config(format!("empty date range {start}..{end}")));
        }
        let mut days = Vec::new();
        let mut skipped = Vec::new();
        for &date in panel.dates() {
            if date < start || date > end {
                continue;
            }
            let matrix = match store.for_date(date) {
                Some(m) => m,
                None => {
                    skipped.push((date, "no loadings".into()));
                    continue;
                }
            };
            let universe = match effective_universe(panel, matrix, date) {
                Ok(u) => u,
                Err(err) => {
                    skipped.push((date, err.to_string()));
                    continue;
                }
            };
            let q_full = full_model_params(panel, &universe);
            let n = universe.len();
            let largest_fold = n.div_ceil(folds);
            if n < 2 * folds || n.saturating_sub(largest_fold) < q_full {
                skipped.push((
                    date,
                    format!("{n} members cannot support {q_full} parameters with {folds} folds"),
                ));
                continue;
            }
            days.push(universe);
        }
        if days.is_empty() {
            return Err(Error::InsufficientDates {
                available: 0,
                required: 1,
            });
        }
        Ok(Evaluator {
            panel,
            store,
            folds,
            days,
            skipped,
        })
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.days.iter().map(|u| u.date).collect()
    }

    /// In-sample pooled R2 for one subset and horizon.
    pub fn in_sample(&self, subset: &FactorSubset, horizon: Horizon) -> Result<Metric> {
        let (cells, excluded) = self.in_sample_cells(subset);
        self.pool(cells, excluded, horizon)
    }

    /// Cross-validated pooled R2: every security's residual comes from a
    /// fit that excluded its fold.
    pub fn cross_validated(
        &self,
        subset: &FactorSubset,
        horizon: Horizon,
        seed: u64,
    ) -> Result<Metric> {
        let (cells, excluded) = self.cv_cells(subset, seed);
        self.pool(cells, excluded, horizon)
    }

    /// All requested metrics for one subset under one label.
    pub fn report(
        &self,
        label: &str,
        subset: &FactorSubset,
        cv_seed: Option<u64>,
    ) -> Result<EvaluationReport> {
        let (cells, excluded) = self.in_sample_cells(subset);
        let in_sample_1d = self.pool(cells.clone(), excluded, Horizon::OneDay)?;
        let in_sample_90d = self.pool(cells, excluded, Horizon::NinetyDays)?;
        let (cv_1d, cv_90d) = match cv_seed {
            Some(seed) => {
                let (cells, excluded) = self.cv_cells(subset, seed);
                (
                    Some(self.pool(cells.clone(), excluded, Horizon::OneDay)?),
                    Some(self.pool(cells, excluded, Horizon::NinetyDays)?),
                )
            }
            None => (None, None),
        };
        Ok(EvaluationReport {
            label: label.to_owned(),
            in_sample_1d,
            in_sample_90d,
            cv_1d,
            cv_90d,
            n_folds: self.folds,
        })
    }

    /// Explanatory power of the factor groups: market alone, then market
    /// plus each block.
    pub fn factor_group_report(&self, cv_seed: Option<u64>) -> Result<ReportTable> {
        let rows = vec![
            ("market", FactorSubset::market_only()),
            ("market + style", FactorSubset::market_and_styles()),
            ("market + country", FactorSubset::market_and_countries()),
            ("market + industry", FactorSubset::market_and_industries()),
        ];
        let rows = rows
            .into_iter()
            .map(|(label, subset)| self.report(label, &subset, cv_seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReportTable {
            title: "explained variance by factor group".into(),
            rows,
        })
    }

    /// Gain from adding each style factor to the no-style baseline.
    pub fn style_addition_report(&self, cv_seed: Option<u64>) -> Result<ReportTable> {
        let mut rows = vec![self.report("baseline (no style)", &FactorSubset::no_styles(), cv_seed)?];
        for factor in StyleFactor::ALL {
            rows.push(self.report(
                factor.name(),
                &FactorSubset::with_single_style(factor),
                cv_seed,
            )?);
        }
        Ok(ReportTable {
            title: "explained variance adding one style factor".into(),
            rows,
        })
    }

    /// Loss from removing each style factor from the full model.
    pub fn style_removal_report(&self, cv_seed: Option<u64>) -> Result<ReportTable> {
        let mut rows = vec![self.report("full model", &FactorSubset::full(), cv_seed)?];
        for factor in StyleFactor::ALL {
            rows.push(self.report(
                &format!("without {}", factor.name()),
                &FactorSubset::without_style(factor),
                cv_seed,
            )?);
        }
        Ok(ReportTable {
            title: "explained variance removing one style factor".into(),
            rows,
        })
    }

    fn in_sample_cells(&self, subset: &FactorSubset) -> (Vec<DayCells>, usize) {
        let results: Vec<Option<DayCells>> = self
            .days
            .par_iter()
            .enumerate()
            .map(|(seq, universe)| {
                let matrix = self.store.for_date(universe.date)?;
                let design =
                    DesignMatrix::build(self.panel, universe, matrix, subset).ok()?;
                let cons = ConstraintSet::for_design(&design);
                let returns = universe.returns(self.panel);
                let fit = solve_cross_section(&design, &returns, &cons).ok()?;
                let cells = universe
                    .members
                    .iter()
                    .enumerate()
                    .map(|(row, &sec)| {
                        let w = universe.market_caps[row].sqrt();
                        (sec, w * fit.residuals[row], w * returns[row])
                    })
                    .collect();
                Some((seq, cells))
            })
            .collect();
        let excluded = results.iter().filter(|r| r.is_none()).count();
        (results.into_iter().flatten().collect(), excluded)
    }

    fn cv_cells(&self, subset: &FactorSubset, seed: u64) -> (Vec<DayCells>, usize) {
        let assignment = fold_assignment(self.panel.n_securities(), self.folds, seed);
        let results: Vec<(Option<DayCells>, usize)> = self
            .days
            .par_iter()
            .enumerate()
            .map(|(seq, universe)| {
                let matrix = match self.store.for_date(universe.date) {
                    Some(m) => m,
                    None => return (None, 1),
                };
                let design =
                    match DesignMatrix::build(self.panel, universe, matrix, subset) {
                        Ok(d) => d,
                        Err(_) => return (None, 1),
                    };
                let returns = universe.returns(self.panel);
                let mut cells = Vec::with_capacity(universe.len());
                let mut excluded = 0usize;
                for fold in 0..self.folds {
                    let train: Vec<usize> = (0..universe.len())
                        .filter(|&row| assignment[universe.members[row]] != fold)
                        .collect();
                    let test: Vec<usize> = (0..universe.len())
                        .filter(|&row| assignment[universe.members[row]] == fold)
                        .collect();
                    if test.is_empty() {
                        continue;
                    }
                    let sub = row_subset(&design, &train);
                    let cons = ConstraintSet::for_design(&sub);
                    let train_returns: Vec<f64> =
                        train.iter().map(|&row| returns[row]).collect();
                    let fit = match solve_cross_section(&sub, &train_returns, &cons) {
                        Ok(f) => f,
                        Err(_) => {
                            excluded += 1;
                            continue;
                        }
                    };
                    let f = nalgebra::DVector::from_vec(fit.factor_returns.to_vec());
                    for &row in &test {
                        let x = design.matrix.row(row);
                        let predicted = x.transpose().dot(&f);
                        let w = universe.market_caps[row].sqrt();
                        let sec = universe.members[row];
                        cells.push((sec, w * (returns[row] - predicted), w * returns[row]));
                    }
                }
                (Some((seq, cells)), excluded)
            })
            .collect();
        let excluded = results.iter().map(|(_, e)| e).sum::<usize>()
            + results.iter().filter(|(c, _)| c.is_none()).count();
        (
            results.into_iter().filter_map(|(c, _)| c).collect(),
            excluded,
        )
    }

    fn pool(&self, cells: Vec<DayCells>, excluded: usize, horizon: Horizon) -> Result<Metric> {
        let window = horizon.window();
        let n_dates = cells.len();
        let n_windows = self.days.len() / window;
        if n_windows == 0 {
            return Err(Error::InsufficientDates {
                available: self.days.len(),
                required: window,
            });
        }
        let stat = match horizon {
            Horizon::OneDay => {
                let mut ss_res = 0.0;
                let mut ss_tot = 0.0;
                for (_, day) in &cells {
                    for (_, wres, wret) in day {
                        ss_res += wres * wres;
                        ss_tot += wret * wret;
                    }
                }
                R2Stat::new(ss_res, ss_tot)?
            }
            Horizon::NinetyDays => {
                let mut sums: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
                for (seq, day) in &cells {
                    let w = seq / window;
                    if w >= n_windows {
                        continue;
                    }
                    for (sec, wres, wret) in day {
                        let entry = sums.entry((w, *sec)).or_insert((0.0, 0.0));
                        entry.0 += wres;
                        entry.1 += wret;
                    }
                }
                let mut ss_res = 0.0;
                let mut ss_tot = 0.0;
                for (res, ret) in sums.values() {
                    ss_res += res * res;
                    ss_tot += ret * ret;
                }
                R2Stat::new(ss_res, ss_tot)?
            }
        };
        Ok(Metric {
            stat,
            n_dates,
            excluded_fits: excluded,
        })
    }
}

/// Free parameters of the full model on a date's universe.
fn full_model_params(panel: &PanelDataset, universe: &EffectiveUniverse) -> usize {
    let mut countries: Vec<&str> = universe
        .members
        .iter()
        .flat_map(|&sec| panel.security(sec).country().iter().map(|(l, _)| l.as_str()))
        .collect();
    countries.sort_unstable();
    countries.dedup();
    let mut industries: Vec<&str> = universe
        .members
        .iter()
        .flat_map(|&sec| panel.security(sec).industry().iter().map(|(l, _)| l.as_str()))
        .collect();
    industries.sort_unstable();
    industries.dedup();
    let c = countries.len();
    let i = industries.len();
    1 + StyleFactor::ALL.len() + c + i - usize::from(c > 0) - usize::from(i > 0)
}

/// A design restricted to a subset of its rows, keeping every column.
fn row_subset(design: &DesignMatrix, rows: &[usize]) -> DesignMatrix {
    let matrix = nalgebra::DMatrix::from_fn(rows.len(), design.n_cols(), |i, j| {
        design.matrix[(rows[i], j)]
    });
    let market_caps =
        nalgebra::DVector::from_fn(rows.len(), |i, _| design.market_caps[rows[i]]);
    DesignMatrix {
        date: design.date,
        sec_indices: rows.iter().map(|&r| design.sec_indices[r]).collect(),
        ids: rows.iter().map(|&r| design.ids[r].clone()).collect(),
        styles: design.styles.clone(),
        countries: design.countries.clone(),
        industries: design.industries.clone(),
        matrix,
        market_caps,
    }
}
