//! Synthetic panel generation from a planted factor structure.
//!
//! Every return is assembled as market + style + country + industry +
//! idiosyncratic noise with known components, so solver recovery, R2
//! levels, and backtest accounting can be verified against ground truth.
//! Generation is a pure function of the config: the same config yields a
//! bit-identical panel, and the random draw order is part of the format.

use std::collections::HashMap;

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cross_section::CrossSectionFit;
use crate::dates::consecutive_dates;
use crate::error::{Error, Result};
use crate::evaluation::FactorSubset;
use crate::loadings::{LoadingMatrix, LoadingStore, StyleFactor};
use crate::panel::{FundamentalField, PanelDataset, SecurityInput};

/// Days between synthetic fundamental observations.
const QUARTER_DAYS: usize = 91;

/// Membership weight kept on the home label when a security mixes.
const MIX_MAJOR_WEIGHT: f64 = 0.7;

/// How loadings reach the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Planted style loadings are authoritative; the panel carries no
    /// fundamentals and the loadings pipeline is bypassed.
    DirectLoadings,
    /// The panel carries complete quarterly fundamentals so the loadings
    /// pipeline can run end to end. Pipeline output will not reproduce
    /// the planted loadings exactly (normalization clips and re-centers).
    RawFundamentals,
}

/// Parameters of the planted factor structure. Deserialization fills
/// absent fields from the defaults, so partial configs stay valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_securities: usize,
    pub n_countries: usize,
    pub n_industries: usize,
    /// Number of dates carrying returns; one extra seed date precedes
    /// them so the first panel date already has a prior price.
    pub n_days: usize,
    pub start_date: NaiveDate,
    /// Daily volatility of the market factor.
    pub market_vol: f64,
    /// Daily volatility per style factor, canonical order.
    pub style_vols: Vec<f64>,
    pub country_vol: f64,
    pub industry_vol: f64,
    /// Sigma in the residual variance sigma^2 / mc_k.
    pub idio_vol_scale: f64,
    /// Natural-log mean of the market-cap distribution.
    pub mc_log_mean: f64,
    pub mc_log_sd: f64,
    /// Probability that a security splits membership across two labels.
    pub membership_mixing_prob: f64,
    pub seed: u64,
    pub mode: GenerationMode,
}

impl Default for SyntheticConfig {
    fn default() -> SyntheticConfig {
        SyntheticConfig {
            n_securities: 100,
            n_countries: 3,
            n_industries: 5,
            n_days: 60,
            start_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            market_vol: 0.01,
            style_vols: vec![0.004; StyleFactor::ALL.len()],
            country_vol: 0.004,
            industry_vol: 0.004,
            idio_vol_scale: 0.01,
            mc_log_mean: 0.0,
            mc_log_sd: 1.0,
            membership_mixing_prob: 0.2,
            seed: 1,
            mode: GenerationMode::DirectLoadings,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_countries == 0 || self.n_industries == 0 {
            return Err(Error::Config("need at least one country and industry".into()));
        }
        if self.n_securities < self.n_countries + self.n_industries + 13 {
            return Err(Error::Config(format!(
                "{} securities cannot support {} countries + {} industries + 13",
                self.n_securities, self.n_countries, self.n_industries
            )));
        }
        if self.n_days == 0 {
            return Err(Error::Config("n_days is zero".into()));
        }
        if self.style_vols.len() != StyleFactor::ALL.len() {
            return Err(Error::Config(format!(
                "expected {} style volatilities, got {}",
                StyleFactor::ALL.len(),
                self.style_vols.len()
            )));
        }
        let vols = self
            .style_vols
            .iter()
            .chain([&self.market_vol, &self.country_vol, &self.industry_vol])
            .chain([&self.idio_vol_scale]);
        for &v in vols {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("volatility {v} must be >= 0")));
            }
        }
        if self.mc_log_sd < 0.0 || !self.mc_log_sd.is_finite() {
            return Err(Error::Config(format!(
                "mc_log_sd {} must be >= 0",
                self.mc_log_sd
            )));
        }
        if !(0.0..=1.0).contains(&self.membership_mixing_prob) {
            return Err(Error::Config(format!(
                "membership mixing probability {} outside [0, 1]",
                self.membership_mixing_prob
            )));
        }
        Ok(())
    }
}

/// The planted components behind a generated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    /// The dates carrying returns (panel dates minus the seed date).
    pub fit_dates: Vec<NaiveDate>,
    pub country_labels: Vec<String>,
    pub industry_labels: Vec<String>,
    /// Market factor return per fit date.
    pub market: Vec<f64>,
    /// Style factor returns per fit date, canonical order.
    pub styles: Vec<Vec<f64>>,
    /// Country factor returns per fit date, label order; each date
    /// satisfies the cap-weighted zero-sum constraint exactly.
    pub countries: Vec<Vec<f64>>,
    pub industries: Vec<Vec<f64>>,
    /// Cap-centered style loadings per security, canonical order.
    pub style_loadings: Vec<Vec<f64>>,
    /// Constant per-security market caps.
    pub market_caps: Vec<f64>,
    /// Per security: (country label index, weight).
    pub country_memberships: Vec<Vec<(usize, f64)>>,
    pub industry_memberships: Vec<Vec<(usize, f64)>>,
    /// Idiosyncratic draws per fit date and security.
    pub idio: Vec<Vec<f64>>,
    /// False when a single label forced that block's factors to zero.
    pub countries_constrained: bool,
    pub industries_constrained: bool,
}

impl PlantedTruth {
    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        self.fit_dates.iter().position(|&d| d == date)
    }

    /// A loading store holding one matrix of the planted loadings,
    /// dated at the first fit date so it covers the whole panel.
    pub fn loading_store(&self, panel: &PanelDataset) -> Result<LoadingStore> {
        let ids: Vec<String> = (0..panel.n_securities())
            .map(|sec| panel.id(sec).as_str().to_owned())
            .collect();
        let matrix =
            LoadingMatrix::from_values(panel, self.fit_dates[0], &ids, &self.style_loadings)?;
        Ok(LoadingStore::from_matrices(vec![matrix]))
    }

    /// Planted factor returns as CSV: `date,factor_type,factor_name,value`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date,factor_type,factor_name,value\n");
        for (t, date) in self.fit_dates.iter().enumerate() {
            out.push_str(&format!("{date},market,market,{}\n", self.market[t]));
            for (f, factor) in StyleFactor::ALL.iter().enumerate() {
                out.push_str(&format!(
                    "{date},style,{},{}\n",
                    factor.name(),
                    self.styles[t][f]
                ));
            }
            for (c, label) in self.country_labels.iter().enumerate() {
                out.push_str(&format!("{date},country,{label},{}\n", self.countries[t][c]));
            }
            for (i, label) in self.industry_labels.iter().enumerate() {
                out.push_str(&format!(
                    "{date},industry,{label},{}\n",
                    self.industries[t][i]
                ));
            }
        }
        out
    }
}

/// Root-mean-square recovery error per factor block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockRmse {
    pub market: f64,
    pub styles: f64,
    pub countries: f64,
    pub industries: f64,
}

impl BlockRmse {
    pub fn max(&self) -> f64 {
        self.market
            .max(self.styles)
            .max(self.countries)
            .max(self.industries)
    }
}

fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Compares a full-model fit against the planted factor returns of its
/// date. The fit must carry every style and the truth's exact label
/// sets.
pub fn recovery_error(
    fit: &CrossSectionFit,
    truth: &PlantedTruth,
    date: NaiveDate,
) -> Result<BlockRmse> {
    let t = truth
        .date_index(date)
        .ok_or_else(|| Error::FactorSetMismatch(format!("{date} is not a generated fit date")))?;
    let f = &fit.factor_returns;
    if f.styles.len() != StyleFactor::ALL.len() {
        return Err(Error::FactorSetMismatch(format!(
            "fit carries {} style factors, planted truth has {}",
            f.styles.len(),
            StyleFactor::ALL.len()
        )));
    }
    let labels_match = |fit: &[(String, f64)], truth_labels: &[String]| {
        fit.len() == truth_labels.len()
            && fit.iter().zip(truth_labels).all(|((l, _), t)| l == t)
    };
    if !labels_match(&f.countries, &truth.country_labels)
        || !labels_match(&f.industries, &truth.industry_labels)
    {
        return Err(Error::FactorSetMismatch(
            "fit labels differ from planted labels".into(),
        ));
    }
    let style_errors: Vec<f64> = f
        .styles
        .iter()
        .map(|(factor, v)| v - truth.styles[t][factor.index()])
        .collect();
    let country_errors: Vec<f64> = f
        .countries
        .iter()
        .enumerate()
        .map(|(c, (_, v))| v - truth.countries[t][c])
        .collect();
    let industry_errors: Vec<f64> = f
        .industries
        .iter()
        .enumerate()
        .map(|(i, (_, v))| v - truth.industries[t][i])
        .collect();
    Ok(BlockRmse {
        market: (f.market - truth.market[t]).abs(),
        styles: rmse(&style_errors),
        countries: rmse(&country_errors),
        industries: rmse(&industry_errors),
    })
}

/// Generates a panel and its planted truth from the config.
pub fn generate(config: &SyntheticConfig) -> Result<(PanelDataset, PlantedTruth)> {
    config.validate()?;
    let n = config.n_securities;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = StandardNormal;
    let draw = |rng: &mut ChaCha8Rng| -> f64 { normal.sample(rng) };

    let market_caps: Vec<f64> = (0..n)
        .map(|_| (config.mc_log_mean + config.mc_log_sd * draw(&mut rng)).exp())
        .collect();

    let country_labels: Vec<String> = (0..config.n_countries).map(|c| format!("C{c:02}")).collect();
    let industry_labels: Vec<String> =
        (0..config.n_industries).map(|i| format!("I{i:02}")).collect();

    // Memberships: home label round-robin; with the mixing probability a
    // security splits 0.7 / 0.3 with the next label.
    let mut country_memberships: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    let mut industry_memberships: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for sec in 0..n {
        let one_block = |n_labels: usize, rng: &mut ChaCha8Rng| {
            let home = sec % n_labels;
            if n_labels > 1 && rng.gen::<f64>() < config.membership_mixing_prob {
                vec![
                    (home, MIX_MAJOR_WEIGHT),
                    ((home + 1) % n_labels, 1.0 - MIX_MAJOR_WEIGHT),
                ]
            } else {
                vec![(home, 1.0)]
            }
        };
        country_memberships.push(one_block(config.n_countries, &mut rng));
        industry_memberships.push(one_block(config.n_industries, &mut rng));
    }

    // Cap-centered planted style loadings.
    let total_mc: f64 = market_caps.iter().sum();
    let mut style_loadings: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..StyleFactor::ALL.len()).map(|_| draw(&mut rng)).collect())
        .collect();
    for f in 0..StyleFactor::ALL.len() {
        let mean: f64 = style_loadings
            .iter()
            .zip(&market_caps)
            .map(|(row, mc)| mc * row[f])
            .sum::<f64>()
            / total_mc;
        for row in &mut style_loadings {
            row[f] -= mean;
        }
    }

    // Cap totals per label drive the zero-sum projection.
    let label_caps = |memberships: &[Vec<(usize, f64)>], n_labels: usize| {
        let mut caps = vec![0.0f64; n_labels];
        for (sec, members) in memberships.iter().enumerate() {
            for &(label, weight) in members {
                caps[label] += market_caps[sec] * weight;
            }
        }
        caps
    };
    let country_caps = label_caps(&country_memberships, config.n_countries);
    let industry_caps = label_caps(&industry_memberships, config.n_industries);
    let countries_constrained = config.n_countries > 1;
    let industries_constrained = config.n_industries > 1;

    let turnover: Vec<f64> = (0..n).map(|_| 0.05 + 0.3 * rng.gen::<f64>()).collect();

    // Factor paths and idiosyncratic draws, date by date.
    let mut market = Vec::with_capacity(config.n_days);
    let mut styles = Vec::with_capacity(config.n_days);
    let mut countries = Vec::with_capacity(config.n_days);
    let mut industries = Vec::with_capacity(config.n_days);
    let mut idio = Vec::with_capacity(config.n_days);
    for _ in 0..config.n_days {
        market.push(config.market_vol * draw(&mut rng));
        styles.push(
            config
                .style_vols
                .iter()
                .map(|vol| vol * draw(&mut rng))
                .collect::<Vec<f64>>(),
        );
        let block = |n_labels: usize,
                         vol: f64,
                         caps: &[f64],
                         constrained: bool,
                         rng: &mut ChaCha8Rng| {
            if !constrained {
                return vec![0.0; n_labels];
            }
            let mut f: Vec<f64> = (0..n_labels).map(|_| vol * draw(rng)).collect();
            let dot: f64 = f.iter().zip(caps).map(|(x, w)| x * w).sum();
            let norm: f64 = caps.iter().map(|w| w * w).sum();
            for (x, w) in f.iter_mut().zip(caps) {
                *x -= dot / norm * w;
            }
            f
        };
        countries.push(block(
            config.n_countries,
            config.country_vol,
            &country_caps,
            countries_constrained,
            &mut rng,
        ));
        industries.push(block(
            config.n_industries,
            config.industry_vol,
            &industry_caps,
            industries_constrained,
            &mut rng,
        ));
        idio.push(
            market_caps
                .iter()
                .map(|mc| config.idio_vol_scale / mc.sqrt() * draw(&mut rng))
                .collect::<Vec<f64>>(),
        );
    }

    // Assemble returns and prices; shares track 1/price so market caps
    // stay constant over time.
    let dates = consecutive_dates(config.start_date, config.n_days + 1);
    let mut securities = Vec::with_capacity(n);
    for sec in 0..n {
        let mut returns = Vec::with_capacity(config.n_days);
        for t in 0..config.n_days {
            let mut r = market[t] + idio[t][sec];
            for (f, x) in style_loadings[sec].iter().enumerate() {
                r += x * styles[t][f];
            }
            for &(label, weight) in &country_memberships[sec] {
                r += weight * countries[t][label];
            }
            for &(label, weight) in &industry_memberships[sec] {
                r += weight * industries[t][label];
            }
            if r <= -1.0 {
                return Err(Error::Config(format!(
                    "generated return {r} at or below -100%; reduce volatilities"
                )));
            }
            returns.push(r);
        }
        let mut prices = Vec::with_capacity(config.n_days + 1);
        prices.push(100.0f64);
        for &r in &returns {
            prices.push(prices.last().unwrap() * (1.0 + r));
        }
        let shares: Vec<Option<f64>> =
            prices.iter().map(|p| Some(market_caps[sec] / p)).collect();
        let volume: Vec<Option<f64>> = shares
            .iter()
            .map(|s| Some(turnover[sec] * s.unwrap()))
            .collect();

        let mut input = SecurityInput {
            id: format!("S{sec:05}"),
            prices: prices.into_iter().map(Some).collect(),
            volume,
            shares_outstanding: shares,
            fundamentals: HashMap::new(),
            country: country_memberships[sec]
                .iter()
                .map(|&(label, w)| (country_labels[label].clone(), w))
                .collect(),
            industry: industry_memberships[sec]
                .iter()
                .map(|&(label, w)| (industry_labels[label].clone(), w))
                .collect(),
        };
        if config.mode == GenerationMode::RawFundamentals {
            input.fundamentals = fundamentals_for(config, sec, &dates);
        }
        securities.push(input);
    }

    let mut benchmark: Vec<Option<f64>> = Vec::with_capacity(config.n_days + 1);
    benchmark.push(None);
    benchmark.extend(market.iter().map(|&r| Some(r)));

    let panel = PanelDataset::from_parts(dates.clone(), securities, benchmark)?;
    let truth = PlantedTruth {
        fit_dates: dates[1..].to_vec(),
        country_labels,
        industry_labels,
        market,
        styles,
        countries,
        industries,
        style_loadings,
        market_caps,
        country_memberships,
        industry_memberships,
        idio,
        countries_constrained,
        industries_constrained,
    };
    Ok((panel, truth))
}

/// Complete quarterly fundamentals with per-security levels and steady
/// sales growth, deterministic in the seed and security index.
///
/// Levels mix a smooth cross-sectional ramp with per-field lognormal
/// jitter; without the jitter the ratio loadings would be proportional
/// across securities and the full design would lose rank.
fn fundamentals_for(
    config: &SyntheticConfig,
    sec: usize,
    dates: &[NaiveDate],
) -> HashMap<FundamentalField, Vec<(NaiveDate, f64)>> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9).wrapping_add(sec as u64));
    let normal = StandardNormal;
    let mut jitter = |spread: f64| -> f64 {
        let z: f64 = normal.sample(&mut rng);
        (spread * z).exp()
    };
    let phase = sec as f64 / config.n_securities.max(1) as f64;
    let dps = (0.5 + 2.0 * phase) * jitter(0.4);
    let net_income = 1.0e6 * (1.0 + 3.0 * phase) * jitter(0.3);
    let total_assets = 2.0e7 * (1.0 + phase) * jitter(0.2);
    let book_value = (20.0 + 60.0 * phase) * jitter(0.3);
    let eps_reported = (2.0 + 6.0 * phase) * jitter(0.3);
    let eps_consensus = eps_reported * 1.1 * jitter(0.1);
    let sales_base = 5.0e6 * (1.0 + 2.0 * phase) * jitter(0.2);
    let growth_noise: f64 = normal.sample(&mut rng);
    let annual_growth = 0.02 + 0.16 * phase + 0.03 * growth_noise;

    let mut out: HashMap<FundamentalField, Vec<(NaiveDate, f64)>> = HashMap::new();
    let mut push = |field: FundamentalField, date: NaiveDate, value: f64| {
        out.entry(field).or_default().push((date, value));
    };
    let mut idx = 0usize;
    let mut quarter = 0u32;
    while idx < dates.len() {
        let date = dates[idx];
        let sales = sales_base * (1.0 + annual_growth).powf(quarter as f64 / 4.0);
        push(FundamentalField::DividendsPerShareTtm, date, dps);
        push(FundamentalField::NetIncome, date, net_income);
        push(FundamentalField::TotalAssets, date, total_assets);
        push(FundamentalField::BookValuePerShare, date, book_value);
        push(FundamentalField::EpsReportedTtm, date, eps_reported);
        push(FundamentalField::EpsConsensusNextYear, date, eps_consensus);
        push(FundamentalField::SalesTtm, date, sales);
        idx += QUARTER_DAYS;
        quarter += 1;
    }
    out
}

/// Explained-variance share the planted structure implies for a subset,
/// from realized loadings and memberships plus configured volatilities.
///
/// The denominator always carries every block plus noise; the numerator
/// carries the subset's blocks and the market.
pub fn planted_variance_share(
    config: &SyntheticConfig,
    truth: &PlantedTruth,
    subset: &FactorSubset,
) -> f64 {
    let total_mc: f64 = truth.market_caps.iter().sum();
    let n = truth.market_caps.len();

    let style_var = |factor: StyleFactor| {
        let f = factor.index();
        let weighted_sq: f64 = truth
            .style_loadings
            .iter()
            .zip(&truth.market_caps)
            .map(|(row, mc)| mc * row[f] * row[f])
            .sum::<f64>()
            / total_mc;
        config.style_vols[f] * config.style_vols[f] * weighted_sq
    };

    // Cap-weighted mean return variance from one membership block under
    // projected factors: vol^2 (|x|^2 - (x . w)^2 / |w|^2) per security,
    // where w holds the per-label cap totals.
    let membership_var =
        |vol: f64, constrained: bool, memberships: &[Vec<(usize, f64)>], n_labels: usize| {
            if !constrained {
                return 0.0;
            }
            let mut caps = vec![0.0f64; n_labels];
            for (members, &mc) in memberships.iter().zip(&truth.market_caps) {
                for &(label, w) in members {
                    caps[label] += mc * w;
                }
            }
            let norm: f64 = caps.iter().map(|w| w * w).sum();
            let mut acc = 0.0;
            for (members, &mc) in memberships.iter().zip(&truth.market_caps) {
                let sq: f64 = members.iter().map(|(_, w)| w * w).sum();
                let dot: f64 = members.iter().map(|&(label, w)| w * caps[label]).sum();
                acc += mc * (sq - dot * dot / norm);
            }
            vol * vol * acc / total_mc
        };

    let market_var = config.market_vol * config.market_vol;
    let all_styles: f64 = StyleFactor::ALL.iter().map(|&f| style_var(f)).sum();
    let country_var = membership_var(
        config.country_vol,
        truth.countries_constrained,
        &truth.country_memberships,
        truth.country_labels.len(),
    );
    let industry_var = membership_var(
        config.industry_vol,
        truth.industries_constrained,
        &truth.industry_memberships,
        truth.industry_labels.len(),
    );
    let idio_var =
        config.idio_vol_scale * config.idio_vol_scale * n as f64 / total_mc;

    let mut numerator = market_var;
    for &factor in &subset.styles {
        numerator += style_var(factor);
    }
    if subset.include_countries {
        numerator += country_var;
    }
    if subset.include_industries {
        numerator += industry_var;
    }
    let denominator = market_var + all_styles + country_var + industry_var + idio_var;
    numerator / denominator
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_section::{
        market_return_identity_check, solve_cross_section, ConstraintSet, DesignMatrix,
    };
    use crate::evaluation::{Evaluator, Horizon};
    use crate::panel::effective_universe;
    use approx::assert_relative_eq;

    fn small_config() -> SyntheticConfig {
        SyntheticConfig {
            n_securities: 40,
            n_countries: 3,
            n_industries: 4,
            n_days: 8,
            seed: 11,
            ..SyntheticConfig::default()
        }
    }

    // ==== determinism and structure ====

    #[test]
    fn same_seed_is_bit_identical() {
        let config = small_config();
        let (panel_a, truth_a) = generate(&config).unwrap();
        let (panel_b, truth_b) = generate(&config).unwrap();
        assert_eq!(panel_a, panel_b);
        assert_eq!(truth_a, truth_b);

        let other = SyntheticConfig {
            seed: 12,
            ..small_config()
        };
        let (_, truth_c) = generate(&other).unwrap();
        assert_ne!(truth_a.market, truth_c.market);
    }

    #[test]
    fn planted_truth_satisfies_constraints_exactly() {
        let (_, truth) = generate(&small_config()).unwrap();
        let caps = |memberships: &[Vec<(usize, f64)>], n_labels: usize| {
            let mut caps = vec![0.0f64; n_labels];
            for (members, &mc) in memberships.iter().zip(&truth.market_caps) {
                for &(label, w) in members {
                    caps[label] += mc * w;
                }
            }
            caps
        };
        let country_caps = caps(&truth.country_memberships, truth.country_labels.len());
        let industry_caps = caps(&truth.industry_memberships, truth.industry_labels.len());
        let scale: f64 = truth.market_caps.iter().sum();
        for t in 0..truth.fit_dates.len() {
            let c: f64 = truth.countries[t]
                .iter()
                .zip(&country_caps)
                .map(|(f, w)| f * w)
                .sum();
            let i: f64 = truth.industries[t]
                .iter()
                .zip(&industry_caps)
                .map(|(f, w)| f * w)
                .sum();
            assert!(c.abs() <= 1e-12 * scale, "country constraint {c}");
            assert!(i.abs() <= 1e-12 * scale, "industry constraint {i}");
        }
    }

    #[test]
    fn market_caps_stay_constant_over_time() {
        let (panel, truth) = generate(&small_config()).unwrap();
        for sec in 0..panel.n_securities() {
            for idx in 0..panel.dates().len() {
                let mc = panel.market_cap_at(sec, idx).unwrap();
                assert_relative_eq!(mc, truth.market_caps[sec], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn market_only_config_moves_all_returns_together() {
        let config = SyntheticConfig {
            style_vols: vec![0.0; StyleFactor::ALL.len()],
            country_vol: 0.0,
            industry_vol: 0.0,
            idio_vol_scale: 0.0,
            ..small_config()
        };
        let (panel, truth) = generate(&config).unwrap();
        for t in 0..config.n_days {
            for sec in 0..config.n_securities {
                let r = panel.return_at(sec, t + 1).unwrap();
                assert!((r - truth.market[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn benchmark_is_the_market_path() {
        let (panel, truth) = generate(&small_config()).unwrap();
        for t in 0..truth.fit_dates.len() {
            assert_eq!(panel.benchmark_return(t + 1).unwrap(), truth.market[t]);
        }
    }

    #[test]
    fn single_country_zeroes_that_block_and_flags_it() {
        let config = SyntheticConfig {
            n_countries: 1,
            ..small_config()
        };
        let (_, truth) = generate(&config).unwrap();
        assert!(!truth.countries_constrained);
        assert!(truth.industries_constrained);
        assert!(truth.countries.iter().all(|f| f.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let too_few = SyntheticConfig {
            n_securities: 10,
            ..SyntheticConfig::default()
        };
        assert!(generate(&too_few).is_err());
        let bad_vol = SyntheticConfig {
            market_vol: -0.1,
            ..SyntheticConfig::default()
        };
        assert!(generate(&bad_vol).is_err());
    }

    // ==== noiseless recovery ====

    #[test]
    fn noiseless_fit_recovers_planted_factor_returns() {
        let config = SyntheticConfig {
            idio_vol_scale: 0.0,
            n_securities: 60,
            n_days: 4,
            seed: 5,
            ..SyntheticConfig::default()
        };
        let (panel, truth) = generate(&config).unwrap();
        let store = truth.loading_store(&panel).unwrap();
        let matrix = store.for_date(truth.fit_dates[0]).unwrap();
        for (t, &date) in truth.fit_dates.iter().enumerate() {
            let universe = effective_universe(&panel, matrix, date).unwrap();
            let design =
                DesignMatrix::build(&panel, &universe, matrix, &FactorSubset::full()).unwrap();
            let cons = ConstraintSet::for_design(&design);
            let returns = universe.returns(&panel);
            let fit = solve_cross_section(&design, &returns, &cons).unwrap();
            let err = recovery_error(&fit, &truth, date).unwrap();
            assert!(err.max() < 1e-8, "day {t}: rmse {:?}", err);
            assert!(market_return_identity_check(&fit, &universe, &returns));
        }
    }

    #[test]
    fn recovery_error_flags_wrong_date() {
        let config = SyntheticConfig {
            idio_vol_scale: 0.0,
            n_securities: 60,
            n_days: 3,
            seed: 5,
            ..SyntheticConfig::default()
        };
        let (panel, truth) = generate(&config).unwrap();
        let store = truth.loading_store(&panel).unwrap();
        let matrix = store.for_date(truth.fit_dates[0]).unwrap();
        let date = truth.fit_dates[0];
        let universe = effective_universe(&panel, matrix, date).unwrap();
        let design =
            DesignMatrix::build(&panel, &universe, matrix, &FactorSubset::full()).unwrap();
        let cons = ConstraintSet::for_design(&design);
        let fit = solve_cross_section(&design, &universe.returns(&panel), &cons).unwrap();
        let wrong = recovery_error(&fit, &truth, truth.fit_dates[1]).unwrap();
        assert!(wrong.max() > 1e-6);
    }

    #[test]
    fn noise_shrinks_with_a_larger_cross_section() {
        // Averaged over seeds, quadrupling the universe roughly halves
        // the recovery error of the style block.
        let mean_rmse = |n: usize| {
            let mut total = 0.0;
            for seed in 0..10 {
                let config = SyntheticConfig {
                    n_securities: n,
                    n_days: 1,
                    idio_vol_scale: 0.05,
                    seed,
                    ..SyntheticConfig::default()
                };
                let (panel, truth) = generate(&config).unwrap();
                let store = truth.loading_store(&panel).unwrap();
                let date = truth.fit_dates[0];
                let matrix = store.for_date(date).unwrap();
                let universe = effective_universe(&panel, matrix, date).unwrap();
                let design =
                    DesignMatrix::build(&panel, &universe, matrix, &FactorSubset::full())
                        .unwrap();
                let cons = ConstraintSet::for_design(&design);
                let fit = solve_cross_section(&design, &universe.returns(&panel), &cons).unwrap();
                total += recovery_error(&fit, &truth, date).unwrap().styles;
            }
            total / 10.0
        };
        let small = mean_rmse(100);
        let large = mean_rmse(400);
        assert!(
            large < 0.75 * small,
            "rmse did not shrink: {small} -> {large}"
        );
    }

    // ==== variance share ====

    #[test]
    fn noiseless_variance_share_is_one_for_the_full_subset() {
        let config = SyntheticConfig {
            idio_vol_scale: 0.0,
            ..small_config()
        };
        let (_, truth) = generate(&config).unwrap();
        let share = planted_variance_share(&config, &truth, &FactorSubset::full());
        assert_relative_eq!(share, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn market_matching_idio_gives_half_share() {
        // Constant market caps of one make the weighted idio variance
        // equal idio_vol_scale^2; matching the market variance puts the
        // market-only share at exactly one half.
        let config = SyntheticConfig {
            market_vol: 0.01,
            idio_vol_scale: 0.01,
            style_vols: vec![0.0; StyleFactor::ALL.len()],
            country_vol: 0.0,
            industry_vol: 0.0,
            mc_log_mean: 0.0,
            mc_log_sd: 0.0,
            ..small_config()
        };
        let (_, truth) = generate(&config).unwrap();
        let share = planted_variance_share(&config, &truth, &FactorSubset::market_only());
        assert_relative_eq!(share, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn variance_share_is_monotone_in_the_subset() {
        let config = small_config();
        let (_, truth) = generate(&config).unwrap();
        let subsets = [
            FactorSubset::market_only(),
            FactorSubset::market_and_countries(),
            FactorSubset::no_styles(),
            FactorSubset::full(),
        ];
        let shares: Vec<f64> = subsets
            .iter()
            .map(|s| planted_variance_share(&config, &truth, s))
            .collect();
        for pair in shares.windows(2) {
            assert!(pair[0] <= pair[1] + 1e-15, "{shares:?}");
        }
        assert!(shares[3] < 1.0);
    }

    #[test]
    fn measured_r2_tracks_planted_share_on_a_small_panel() {
        let config = SyntheticConfig {
            n_securities: 300,
            n_days: 120,
            seed: 3,
            ..SyntheticConfig::default()
        };
        let (panel, truth) = generate(&config).unwrap();
        let store = truth.loading_store(&panel).unwrap();
        let evaluator = Evaluator::new(
            &panel,
            &store,
            truth.fit_dates[0],
            *truth.fit_dates.last().unwrap(),
            10,
        )
        .unwrap();
        let subset = FactorSubset::full();
        let measured = evaluator.in_sample(&subset, Horizon::OneDay).unwrap();
        let planted = planted_variance_share(&config, &truth, &subset);
        assert!(
            (measured.stat.r2 - planted).abs() < 0.05,
            "measured {} vs planted {planted}",
            measured.stat.r2
        );
    }

    // ==== raw fundamentals mode ====

    #[test]
    fn raw_mode_emits_complete_quarterly_fundamentals() {
        let config = SyntheticConfig {
            mode: GenerationMode::RawFundamentals,
            ..small_config()
        };
        let (panel, _) = generate(&config).unwrap();
        let last = panel.dates().len() - 1;
        for sec in 0..panel.n_securities() {
            for field in FundamentalField::ALL {
                assert!(
                    panel.fundamental_at(sec, field, last).is_some(),
                    "missing {field:?}"
                );
            }
        }
    }

    #[test]
    fn direct_mode_omits_fundamentals() {
        let (panel, _) = generate(&small_config()).unwrap();
        let last = panel.dates().len() - 1;
        assert!(panel
            .fundamental_at(0, FundamentalField::SalesTtm, last)
            .is_none());
    }
}
