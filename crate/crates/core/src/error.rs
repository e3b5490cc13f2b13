//! Error type shared across the crate.

use chrono::NaiveDate;
use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by data loading, model fitting, and reporting.
#[derive(Debug, Error)]
pub enum Error {
    /// A CSV input violated its schema. Carries the file, the 1-based line
    /// number, and a message naming the offending field.
    #[error("{path}:{line}: {message}", path = path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// An I/O failure with the path involved.
    #[error("{path}: {source}", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// In-memory data violated a dataset invariant.
    #[error("invalid data: {0}")]
    Validation(String),

    /// An invalid option or parameter combination.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Too few securities with complete loadings to normalize a cross section.
    #[error("{date}: cross section too small ({available} complete securities, need {required})")]
    CrossSectionTooSmall {
        date: NaiveDate,
        available: usize,
        required: usize,
    },

    /// No security passed the universe filters on a date.
    #[error("{date}: no usable cross section")]
    EmptyUniverse { date: NaiveDate },

    /// Fewer observations than free parameters in a regression.
    #[error("{date}: insufficient cross section ({n_obs} observations for {n_params} free parameters)")]
    InsufficientCrossSection {
        date: NaiveDate,
        n_obs: usize,
        n_params: usize,
    },

    /// The reduced regression system could not be solved.
    #[error("{date}: singular reduced system (condition estimate {condition:.3e})")]
    SingularSystem { date: NaiveDate, condition: f64 },

    /// Total sum of squares is zero, so no R2 is defined.
    #[error("degenerate returns: total sum of squares is zero")]
    DegenerateReturns,

    /// No loading matrix covers the requested date.
    #[error("{date}: no loadings available")]
    MissingLoadings { date: NaiveDate },

    /// Two factor sets that must align do not.
    #[error("factor sets do not match: {0}")]
    FactorSetMismatch(String),

    /// Fewer candidates than a portfolio universe requires.
    #[error("{date}: universe has {available} candidates, need {required}")]
    UniverseTooSmall {
        date: NaiveDate,
        available: usize,
        required: usize,
    },

    /// An annual return at or below -100%, which cannot be compounded.
    #[error("annual return {0} is a total loss (r <= -1)")]
    TotalLossYear(f64),

    /// Not enough dates for the requested computation.
    #[error("insufficient dates: have {available}, need {required}")]
    InsufficientDates { available: usize, required: usize },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when the error stems from user input (files, schemas, options)
    /// rather than an internal numerical failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Io { .. }
                | Error::Validation(_)
                | Error::Config(_)
        )
    }
}
