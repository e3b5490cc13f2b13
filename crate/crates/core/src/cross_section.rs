//! One day's cross-sectional regression: market, style, country, and
//! industry factor returns fitted to security returns by market-cap
//! weighted least squares under market-cap-neutrality constraints.
//!
//! The country and industry blocks each carry one equality constraint
//! forcing the cap-weighted sum of their factor returns to zero. The
//! solver reparameterizes onto the constraint null space and solves the
//! reduced system with a QR factorization, falling back to a minimum-norm
//! SVD solution when the reduced design is rank deficient.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::evaluation::FactorSubset;
use crate::loadings::{LoadingMatrix, StyleFactor};
use crate::panel::{EffectiveUniverse, PanelDataset, SecurityId};

/// Relative threshold below which a reduced-design pivot counts as zero.
pub const RANK_TOL: f64 = 1e-12;
/// Absolute tolerance for the market-return identity diagnostic.
pub const MARKET_IDENTITY_TOL: f64 = 1e-6;

/// The per-day design: one row per universe member, columns for the
/// intercept, the selected style factors, and the country and industry
/// membership weights present that day.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub date: NaiveDate,
    /// Panel indices of the rows, ascending by security id.
    pub sec_indices: Vec<usize>,
    pub ids: Vec<SecurityId>,
    /// Style factors included, in canonical order.
    pub styles: Vec<StyleFactor>,
    /// Country column labels, ascending; only countries with nonzero
    /// membership that day.
    pub countries: Vec<String>,
    /// Industry column labels, ascending.
    pub industries: Vec<String>,
    /// The design matrix, laid out `[intercept | styles | countries |
    /// industries]`.
    pub matrix: DMatrix<f64>,
    /// Market caps of the rows; the regression weights.
    pub market_caps: DVector<f64>,
}

impl DesignMatrix {
    /// Builds the design for a universe from the day's loading matrix,
    /// restricted to a factor subset.
    pub fn build(
        panel: &PanelDataset,
        universe: &EffectiveUniverse,
        loadings: &LoadingMatrix,
        subset: &FactorSubset,
    ) -> Result<DesignMatrix> {
        let n = universe.len();
        if n == 0 {
            return Err(Error::EmptyUniverse {
                date: universe.date,
            });
        }

        let mut countries: Vec<String> = Vec::new();
        let mut industries: Vec<String> = Vec::new();
        if subset.include_countries {
            let mut labels: Vec<&str> = universe
                .members
                .iter()
                .flat_map(|&sec| panel.security(sec).country().iter().map(|(l, _)| l.as_str()))
                .collect();
            labels.sort_unstable();
            labels.dedup();
            countries = labels.into_iter().map(str::to_owned).collect();
        }
        if subset.include_industries {
            let mut labels: Vec<&str> = universe
                .members
                .iter()
                .flat_map(|&sec| panel.security(sec).industry().iter().map(|(l, _)| l.as_str()))
                .collect();
            labels.sort_unstable();
            labels.dedup();
            industries = labels.into_iter().map(str::to_owned).collect();
        }

        let styles = subset.styles.clone();
        let p = 1 + styles.len() + countries.len() + industries.len();
        let mut matrix = DMatrix::zeros(n, p);
        for (row, &sec) in universe.members.iter().enumerate() {
            matrix[(row, 0)] = 1.0;
            for (j, factor) in styles.iter().enumerate() {
                matrix[(row, 1 + j)] = loadings.loading(sec, *factor).ok_or_else(|| {
                    Error::Validation(format!(
                        "{}: no {factor} loading on {}",
                        panel.id(sec),
                        universe.date
                    ))
                })?;
            }
            let c0 = 1 + styles.len();
            for (label, w) in panel.security(sec).country() {
                if subset.include_countries {
                    let j = countries.binary_search(label).unwrap();
                    matrix[(row, c0 + j)] = *w;
                }
            }
            let i0 = c0 + countries.len();
            for (label, w) in panel.security(sec).industry() {
                if subset.include_industries {
                    let j = industries.binary_search(label).unwrap();
                    matrix[(row, i0 + j)] = *w;
                }
            }
        }

        Ok(DesignMatrix {
            date: universe.date,
            sec_indices: universe.members.clone(),
            ids: universe
                .members
                .iter()
                .map(|&sec| panel.id(sec).clone())
                .collect(),
            styles,
            countries,
            industries,
            matrix,
            market_caps: DVector::from_vec(universe.market_caps.clone()),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Column index where the country block starts.
    pub fn country_offset(&self) -> usize {
        1 + self.styles.len()
    }

    /// Column index where the industry block starts.
    pub fn industry_offset(&self) -> usize {
        self.country_offset() + self.countries.len()
    }
}

/// Market-cap-neutrality constraints for the country and industry blocks.
///
/// Each active block contributes one row: the cap-weighted sum of its
/// factor returns must vanish, with coefficients equal to each column's
/// membership-weighted market cap.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    /// Cap totals per country column, when the block is present.
    pub country: Option<DVector<f64>>,
    /// Cap totals per industry column, when the block is present.
    pub industry: Option<DVector<f64>>,
}

impl ConstraintSet {
    /// Derives the constraints from a design's membership columns and
    /// market caps.
    pub fn for_design(design: &DesignMatrix) -> ConstraintSet {
        let weigh = |offset: usize, len: usize| -> Option<DVector<f64>> {
            if len == 0 {
                return None;
            }
            let mut w = DVector::zeros(len);
            for j in 0..len {
                let mut total = 0.0;
                for row in 0..design.n_obs() {
                    total += design.market_caps[row] * design.matrix[(row, offset + j)];
                }
                w[j] = total;
            }
            Some(w)
        };
        ConstraintSet {
            country: weigh(design.country_offset(), design.countries.len()),
            industry: weigh(design.industry_offset(), design.industries.len()),
        }
    }

    /// Number of active constraint rows.
    pub fn n_constraints(&self) -> usize {
        self.country.is_some() as usize + self.industry.is_some() as usize
    }

    /// The constraints as a dense matrix over the design's columns.
    pub fn as_matrix(&self, design: &DesignMatrix) -> DMatrix<f64> {
        let p = design.n_cols();
        let mut c = DMatrix::zeros(self.n_constraints(), p);
        let mut row = 0;
        if let Some(w) = &self.country {
            for j in 0..w.len() {
                c[(row, design.country_offset() + j)] = w[j];
            }
            row += 1;
        }
        if let Some(w) = &self.industry {
            for j in 0..w.len() {
                c[(row, design.industry_offset() + j)] = w[j];
            }
        }
        c
    }
}

/// Fitted factor returns for one block structure.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorReturns {
    pub market: f64,
    pub styles: Vec<(StyleFactor, f64)>,
    pub countries: Vec<(String, f64)>,
    pub industries: Vec<(String, f64)>,
}

impl FactorReturns {
    /// All factor values in design column order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(
            1 + self.styles.len() + self.countries.len() + self.industries.len(),
        );
        out.push(self.market);
        out.extend(self.styles.iter().map(|(_, v)| *v));
        out.extend(self.countries.iter().map(|(_, v)| *v));
        out.extend(self.industries.iter().map(|(_, v)| *v));
        out
    }
}

/// The result of one day's constrained weighted regression.
#[derive(Debug, Clone)]
pub struct CrossSectionFit {
    pub date: NaiveDate,
    /// Panel indices of the fitted rows.
    pub sec_indices: Vec<usize>,
    pub ids: Vec<SecurityId>,
    pub factor_returns: FactorReturns,
    /// Raw residuals `r - X f`, aligned with the rows.
    pub residuals: Vec<f64>,
    /// Market-cap-weighted residual sum of squares.
    pub weighted_rss: f64,
    /// Estimate of the idiosyncratic variance scale from the weighted
    /// residuals.
    pub residual_scale: f64,
    pub n_obs: usize,
    /// Ratio of the largest to smallest pivot of the reduced design.
    pub condition: f64,
    /// True when the reduced design lost rank and the minimum-norm
    /// solution was taken.
    pub rank_deficient: bool,
}

/// Orthonormal basis of the hyperplane `{x : w . x = 0}`, as the last
/// `m - 1` columns of the Householder reflector sending `w` to an axis.
fn null_basis(w: &DVector<f64>) -> DMatrix<f64> {
    let m = w.len();
    if m <= 1 {
        return DMatrix::zeros(m, 0);
    }
    let norm = w.norm();
    debug_assert!(norm > 0.0);
    let mut v = w.clone();
    let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vtv = v.dot(&v);
    DMatrix::from_fn(m, m - 1, |i, j| {
        let col = j + 1;
        let eye = if i == col { 1.0 } else { 0.0 };
        eye - 2.0 * v[i] * v[col] / vtv
    })
}

/// Block-diagonal null-space basis of the full constraint set: identity
/// over the unconstrained columns, a hyperplane basis per constrained
/// block.
fn constraint_null_space(design: &DesignMatrix, constraints: &ConstraintSet) -> DMatrix<f64> {
    let p = design.n_cols();
    let free = design.country_offset();
    let country_basis = constraints.country.as_ref().map(null_basis);
    let industry_basis = constraints.industry.as_ref().map(null_basis);
    let q = free
        + country_basis.as_ref().map_or(design.countries.len(), |b| b.ncols())
        + industry_basis.as_ref().map_or(design.industries.len(), |b| b.ncols());

    let mut z = DMatrix::zeros(p, q);
    for j in 0..free {
        z[(j, j)] = 1.0;
    }
    let mut col = free;
    let mut row = free;
    if let Some(basis) = &country_basis {
        z.view_mut((row, col), (basis.nrows(), basis.ncols()))
            .copy_from(basis);
        col += basis.ncols();
        row += basis.nrows();
    }
    if let Some(basis) = &industry_basis {
        z.view_mut((row, col), (basis.nrows(), basis.ncols()))
            .copy_from(basis);
    }
    z
}

/// Solves the constrained weighted regression for one day.
///
/// Rows are weighted by the square root of market cap, the constraints are
/// eliminated through a null-space basis, and the reduced least-squares
/// problem is solved by QR. A rank-deficient reduced design falls back to
/// the minimum-norm SVD solution and sets `rank_deficient`.
pub fn solve_cross_section(
    design: &DesignMatrix,
    returns: &[f64],
    constraints: &ConstraintSet,
) -> Result<CrossSectionFit> {
    let n = design.n_obs();
    if returns.len() != n {
        return Err(Error::Validation(format!(
            "{} returns for {n} design rows",
            returns.len()
        )));
    }
    let z = constraint_null_space(design, constraints);
    let q = z.ncols();
    if n < q {
        return Err(Error::InsufficientCrossSection {
            date: design.date,
            n_obs: n,
            n_params: q,
        });
    }

    let sqrt_w: Vec<f64> = design.market_caps.iter().map(|mc| mc.sqrt()).collect();
    let mut reduced = &design.matrix * &z;
    for (row, w) in sqrt_w.iter().enumerate() {
        for j in 0..q {
            reduced[(row, j)] *= w;
        }
    }
    let b = DVector::from_fn(n, |i, _| sqrt_w[i] * returns[i]);

    let qr = reduced.clone().qr();
    let r = qr.r();
    let mut dmax = 0.0f64;
    let mut dmin = f64::INFINITY;
    for j in 0..q {
        let d = r[(j, j)].abs();
        dmax = dmax.max(d);
        dmin = dmin.min(d);
    }
    let condition = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };

    let (g, rank_deficient) = if dmin > dmax * RANK_TOL && dmin > 0.0 {
        let qtb = qr.q().transpose() * &b;
        let g = r
            .solve_upper_triangular(&qtb)
            .ok_or(Error::SingularSystem {
                date: design.date,
                condition,
            })?;
        (g, false)
    } else {
        let svd = reduced.svd(true, true);
        let smax = svd.singular_values.max();
        let g = svd
            .solve(&b, smax * RANK_TOL)
            .map_err(|_| Error::SingularSystem {
                date: design.date,
                condition,
            })?;
        (g, true)
    };

    let f = &z * &g;
    let fitted = &design.matrix * &f;
    let residuals: Vec<f64> = (0..n).map(|i| returns[i] - fitted[i]).collect();
    let weighted_rss: f64 = residuals
        .iter()
        .zip(design.market_caps.iter())
        .map(|(e, mc)| mc * e * e)
        .sum();
    let dof = n.saturating_sub(q).max(1);
    let residual_scale = weighted_rss / dof as f64;

    let styles = design
        .styles
        .iter()
        .enumerate()
        .map(|(j, factor)| (*factor, f[1 + j]))
        .collect();
    let c0 = design.country_offset();
    let countries = design
        .countries
        .iter()
        .enumerate()
        .map(|(j, label)| (label.clone(), f[c0 + j]))
        .collect();
    let i0 = design.industry_offset();
    let industries = design
        .industries
        .iter()
        .enumerate()
        .map(|(j, label)| (label.clone(), f[i0 + j]))
        .collect();

    Ok(CrossSectionFit {
        date: design.date,
        sec_indices: design.sec_indices.clone(),
        ids: design.ids.clone(),
        factor_returns: FactorReturns {
            market: f[0],
            styles,
            countries,
            industries,
        },
        residuals,
        weighted_rss,
        residual_scale,
        n_obs: n,
        condition,
        rank_deficient,
    })
}

/// Checks that the fitted market return equals the cap-weighted average
/// security return.
///
/// The identity holds whenever the weighted residuals are orthogonal to
/// the intercept and all loading blocks are cap-centered or constrained
/// with the same market caps used as weights.
pub fn market_return_identity_check(
    fit: &CrossSectionFit,
    universe: &EffectiveUniverse,
    returns: &[f64],
) -> bool {
    let total: f64 = universe.market_caps.iter().sum();
    let weighted: f64 = returns
        .iter()
        .zip(&universe.market_caps)
        .map(|(r, mc)| r * mc)
        .sum();
    (fit.factor_returns.market - weighted / total).abs() <= MARKET_IDENTITY_TOL
}
