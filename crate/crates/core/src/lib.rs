//! Equity factor model: loading computation, constrained cross-sectional
//! regression of daily returns, pooled explained-variance evaluation,
//! factor-tilted portfolio backtesting, and a synthetic-data generator
//! for verification.
//!
//! The model decomposes each security's daily return into a market
//! return, style factor returns weighted by normalized loadings, country
//! and industry factor returns weighted by fractional memberships, and
//! an idiosyncratic residual. Fits are cap-weighted least squares under
//! cap-weighted zero-sum constraints on the country and industry blocks.

pub mod cross_section;
pub mod csv_io;
pub mod dates;
pub mod error;
pub mod evaluation;
pub mod loadings;
pub mod panel;
pub mod portfolio;
pub mod synthetic;

pub use cross_section::{
    market_return_identity_check, solve_cross_section, ConstraintSet, CrossSectionFit,
    DesignMatrix, FactorReturns,
};
pub use error::{Error, Result};
pub use evaluation::{
    fold_assignment, pooled_r2, pooled_r2_stat, EvaluationReport, Evaluator, FactorSubset,
    Horizon, Metric, R2Stat, ReportTable,
};
pub use loadings::{LoadingMatrix, LoadingStore, StyleFactor};
pub use panel::{
    country_summary, effective_universe, CountryStat, EffectiveUniverse, FundamentalField,
    PanelBuilder, PanelDataset, SecurityId, SecurityInput,
};
pub use portfolio::{
    average_rank_select, base_universe, geometric_mean_return, rebalance, run_backtest,
    BacktestResult, Holdings, PortfolioName, PortfolioSpec, ReturnsTable,
};
pub use synthetic::{
    generate, planted_variance_share, recovery_error, BlockRmse, GenerationMode, PlantedTruth,
    SyntheticConfig,
};
