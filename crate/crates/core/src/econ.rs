//! Inference layer: OLS with Newey-West errors, factor alphas, spanning
//! regressions, and Fama-MacBeth cross-sectional regressions.
//!
//! Everything is decimal internally; percent values exist only at the
//! display layer. All operations are deterministic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::month::{Month, MonthRange};
use crate::panel::{Factor, FactorTable, PanelDataset};
use crate::signals::{SignalKind, SignalPanel};
use crate::sorts::PortfolioSeries;

/// HAC lag selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LagPolicy {
    /// `floor(4 * (T/100)^(2/9))`.
    #[default]
    Auto,
    Fixed(usize),
}

impl LagPolicy {
    pub fn lag_for(self, n_obs: usize) -> usize {
        match self {
            LagPolicy::Fixed(l) => l,
            LagPolicy::Auto => (4.0 * (n_obs as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize,
        }
    }
}

/// Output of a time-series regression.
///
/// `t_stats` entries are `None` when the regression is degenerate (zero
/// residual variance), rather than infinite.
#[derive(Debug, Clone)]
pub struct RegressionResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<Option<f64>>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub n_obs: usize,
    /// HAC lag used; `None` until [`newey_west`] has been applied.
    pub lag: Option<usize>,
    pub intercept: bool,
    residuals: Vec<f64>,
    design: DMatrix<f64>,
    xtx_inv: DMatrix<f64>,
    hac_cov: Option<Vec<Vec<f64>>>,
}

impl RegressionResult {
    /// Coefficient by regressor name.
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn t_stat(&self, name: &str) -> Option<Option<f64>> {
        self.names.iter().position(|n| n == name).map(|i| self.t_stats[i])
    }

    /// Intercept value, when fitted with one.
    pub fn intercept_value(&self) -> Option<f64> {
        self.intercept.then(|| self.coefficients[0])
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// HAC coefficient covariance, present after [`newey_west`].
    pub fn hac_covariance(&self) -> Option<&Vec<Vec<f64>>> {
        self.hac_cov.as_ref()
    }

    fn is_degenerate(&self) -> bool {
        let scale: f64 = self.design.column_iter().map(|c| c.norm_squared()).sum::<f64>()
            * self.coefficients.iter().map(|c| c * c).sum::<f64>()
            + self.residuals.len() as f64;
        let rss: f64 = self.residuals.iter().map(|r| r * r).sum();
        rss <= scale.max(1.0) * 1e-24
    }
}

const RANK_EPS: f64 = 1e-10;

/// Ordinary least squares with classical (homoskedastic) standard errors.
///
/// `regressors` are column vectors; an intercept column is prepended when
/// requested. Errors on rank deficiency and on too-few observations.
pub fn ols(y: &[f64], regressors: &[Vec<f64>], names: &[String], intercept: bool) -> Result<RegressionResult> {
    let n = y.len();
    for col in regressors {
        if col.len() != n {
            return Err(Error::LengthMismatch { y_len: n, x_len: col.len() });
        }
    }
    let k = regressors.len() + usize::from(intercept);
    if k == 0 {
        return Err(Error::InvalidConfig("no regressors and no intercept".into()));
    }
    // At least two observations beyond the regressor count (the intercept
    // does not count toward `columns`), and at least one residual degree of
    // freedom.
    if n < regressors.len() + 2 || n <= k {
        return Err(Error::TooFewObservations { n, k });
    }

    let mut design = DMatrix::zeros(n, k);
    let mut col_names = Vec::with_capacity(k);
    let mut j = 0;
    if intercept {
        design.column_mut(0).fill(1.0);
        col_names.push("const".to_string());
        j = 1;
    }
    for (c, col) in regressors.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            design[(i, j)] = v;
        }
        col_names.push(names.get(c).cloned().unwrap_or_else(|| format!("x{c}")));
        j += 1;
    }

    // Rank check via singular values of the (column-normalized) design.
    let mut normed = design.clone();
    for mut col in normed.column_iter_mut() {
        let norm = col.norm();
        if norm <= 0.0 {
            return Err(Error::RankDeficient);
        }
        col /= norm;
    }
    let svd = normed.svd(false, false);
    let smax = svd.singular_values.max();
    if svd.singular_values.iter().any(|&s| s <= smax * RANK_EPS) {
        return Err(Error::RankDeficient);
    }

    let yv = DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let xtx_inv = xtx.try_inverse().ok_or(Error::RankDeficient)?;
    let beta = &xtx_inv * design.transpose() * &yv;
    let fitted = &design * &beta;
    let residuals: Vec<f64> = (&yv - &fitted).iter().copied().collect();

    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    // Centered total sum of squares with an intercept, uncentered without.
    let tss = if intercept {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
    } else {
        y.iter().map(|v| v * v).sum::<f64>()
    };
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
    let dof_total = if intercept { n as f64 - 1.0 } else { n as f64 };
    let adj_r_squared = 1.0 - (1.0 - r_squared) * dof_total / (n - k) as f64;

    let sigma2 = rss / (n - k) as f64;
    let std_errors: Vec<f64> = (0..k).map(|i| (sigma2 * xtx_inv[(i, i)]).sqrt()).collect();

    let mut result = RegressionResult {
        names: col_names,
        coefficients: beta.iter().copied().collect(),
        std_errors,
        t_stats: vec![None; k],
        r_squared,
        adj_r_squared,
        n_obs: n,
        lag: None,
        intercept,
        residuals,
        design,
        xtx_inv,
        hac_cov: None,
    };
    fill_t_stats(&mut result);
    Ok(result)
}

fn fill_t_stats(result: &mut RegressionResult) {
    let degenerate = result.is_degenerate();
    result.t_stats = result
        .coefficients
        .iter()
        .zip(&result.std_errors)
        .map(|(&c, &se)| {
            if degenerate || se <= 0.0 || !se.is_finite() {
                None
            } else {
                Some(c / se)
            }
        })
        .collect();
}

/// Replaces a regression's standard errors with Newey-West HAC errors.
///
/// The covariance is the Bartlett-weighted sandwich
/// `(X'X)^-1 [G_0 + sum_l w_l (G_l + G_l')] (X'X)^-1` with
/// `w_l = 1 - l/(L+1)` and no small-sample correction, so lag 0 reduces to
/// White's heteroskedasticity-robust errors.
pub fn newey_west(mut result: RegressionResult, lag_policy: LagPolicy) -> Result<RegressionResult> {
    let n = result.n_obs;
    let lag = lag_policy.lag_for(n);
    if lag >= n {
        return Err(Error::LagTooLarge { lag, n });
    }
    let k = result.coefficients.len();
    let x = &result.design;
    let u = &result.residuals;

    let mut meat = DMatrix::<f64>::zeros(k, k);
    // Lag 0 term.
    for t in 0..n {
        let ut2 = u[t] * u[t];
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += ut2 * x[(t, a)] * x[(t, b)];
            }
        }
    }
    // Bartlett-weighted lag terms, symmetrized.
    for l in 1..=lag {
        let w = 1.0 - l as f64 / (lag as f64 + 1.0);
        let mut gamma = DMatrix::<f64>::zeros(k, k);
        for t in l..n {
            let uu = u[t] * u[t - l];
            for a in 0..k {
                for b in 0..k {
                    gamma[(a, b)] += uu * x[(t, a)] * x[(t - l, b)];
                }
            }
        }
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += w * (gamma[(a, b)] + gamma[(b, a)]);
            }
        }
    }

    let cov = &result.xtx_inv * meat * &result.xtx_inv;
    result.std_errors = (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    result.hac_cov =
        Some((0..k).map(|a| (0..k).map(|b| cov[(a, b)]).collect()).collect());
    result.lag = Some(lag);
    fill_t_stats(&mut result);
    Ok(result)
}

/// Convenience: OLS followed by the Newey-West adjustment.
pub fn ols_newey_west(
    y: &[f64],
    regressors: &[Vec<f64>],
    names: &[String],
    intercept: bool,
    lag_policy: LagPolicy,
) -> Result<RegressionResult> {
    newey_west(ols(y, regressors, names, intercept)?, lag_policy)
}

/// Mean and Newey-West t-statistic of a portfolio series.
#[derive(Debug, Clone)]
pub struct MeanTest {
    /// Mean return in percent per month.
    pub mean_pct: f64,
    pub t_stat: Option<f64>,
    pub n_obs: usize,
    pub lag: usize,
}

/// Minimum series length for a mean test.
pub const MIN_MEAN_TEST_MONTHS: usize = 24;

/// Tests the mean of a monthly series against zero with Newey-West errors.
pub fn mean_return_test(series: &PortfolioSeries, lag_policy: LagPolicy) -> Result<MeanTest> {
    if series.len() < MIN_MEAN_TEST_MONTHS {
        return Err(Error::SeriesTooShort { len: series.len(), min: MIN_MEAN_TEST_MONTHS });
    }
    let result = ols_newey_west(series.returns(), &[], &[], true, lag_policy)?;
    Ok(MeanTest {
        mean_pct: 100.0 * result.coefficients[0],
        t_stat: result.t_stats[0],
        n_obs: result.n_obs,
        lag: result.lag.unwrap_or(0),
    })
}

/// Collects the factor columns aligned to a set of months; every month must
/// be covered by the factor table.
fn factor_columns(
    factors: &FactorTable,
    set: &[Factor],
    months: &[Month],
) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let cols = factors.aligned(set, months)?;
    let names = set.iter().map(|f| f.as_str().to_string()).collect();
    Ok((cols, names))
}

/// Time-series regression of a portfolio on a factor set; the intercept is
/// the alpha. An empty factor set reduces to the mean test regression.
pub fn factor_alpha(
    series: &PortfolioSeries,
    factors: &FactorTable,
    set: &[Factor],
    lag_policy: LagPolicy,
) -> Result<RegressionResult> {
    let months = series.months();
    let (cols, names) = factor_columns(factors, set, months)?;
    ols_newey_west(series.returns(), &cols, &names, true, lag_policy)
}

/// Regression of one portfolio series on other portfolio series, optionally
/// adding the three Fama-French factors. The intercept is the controlled
/// premium.
pub fn spanning_regression(
    dependent: &PortfolioSeries,
    spanning: &[&PortfolioSeries],
    ff3_control: bool,
    factors: &FactorTable,
    lag_policy: LagPolicy,
) -> Result<RegressionResult> {
    // Months where the dependent and every spanning series are available.
    let months: Vec<Month> = dependent
        .months()
        .iter()
        .copied()
        .filter(|&m| spanning.iter().all(|s| s.get(m).is_some()))
        .collect();
    if months.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let y: Vec<f64> = months.iter().map(|&m| dependent.get(m).unwrap()).collect();
    let mut cols: Vec<Vec<f64>> = spanning
        .iter()
        .map(|s| months.iter().map(|&m| s.get(m).unwrap()).collect())
        .collect();
    let mut names: Vec<String> = spanning.iter().map(|s| s.label.clone()).collect();
    if ff3_control {
        let (ff3, ff3_names) =
            factor_columns(factors, &[Factor::Mkt, Factor::Smb, Factor::Hml], &months)?;
        cols.extend(ff3);
        names.extend(ff3_names);
    }
    ols_newey_west(&y, &cols, &names, true, lag_policy)
}

/// Fama-MacBeth output: premiums are time-series means of the monthly
/// cross-sectional slopes, with Newey-West t-statistics on the slope series.
#[derive(Debug, Clone)]
pub struct FmbResult {
    pub names: Vec<String>,
    pub premiums: Vec<f64>,
    pub t_stats: Vec<Option<f64>>,
    pub avg_adj_r_squared: f64,
    pub avg_cross_section: f64,
    pub months_used: usize,
    pub skipped_months: Vec<Month>,
    pub lag: usize,
    /// Monthly slope series per regressor (plus the intercept first, when
    /// fitted), kept for audit.
    pub slope_series: Vec<Vec<f64>>,
}

impl FmbResult {
    pub fn premium(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.premiums[i])
    }

    pub fn t_stat(&self, name: &str) -> Option<Option<f64>> {
        self.names.iter().position(|n| n == name).map(|i| self.t_stats[i])
    }
}

/// Minimum cross-section size beyond the regressor count.
pub const FMB_MIN_EXTRA: usize = 5;

/// Clamps a cross-section to its own `[p, 1-p]` quantiles, in place.
fn winsorize_column(values: &mut [f64], p: f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let lo = sorted[(((n as f64) * p).floor() as usize).min(n - 1)];
    let hi = sorted[(((n as f64) * (1.0 - p)).ceil() as usize - 1).min(n - 1)];
    for v in values {
        *v = v.clamp(lo, hi);
    }
}

/// Month-by-month cross-sectional regressions of month-`t` returns on
/// formation-`t` signals.
///
/// Months with too small a cross-section (or a degenerate one) are skipped
/// and reported; if every month is infeasible the operation errors.
pub fn fama_macbeth(
    dataset: &PanelDataset,
    panel: &SignalPanel,
    regressors: &[SignalKind],
    intercept: bool,
    months: MonthRange,
    lag_policy: LagPolicy,
) -> Result<FmbResult> {
    fama_macbeth_with(dataset, panel, regressors, intercept, months, lag_policy, None)
}

/// [`fama_macbeth`] with optional per-month winsorization of the regressors
/// at the `[p, 1-p]` quantiles (robustness runs; no winsorization by
/// default).
pub fn fama_macbeth_with(
    dataset: &PanelDataset,
    panel: &SignalPanel,
    regressors: &[SignalKind],
    intercept: bool,
    months: MonthRange,
    lag_policy: LagPolicy,
    winsorize: Option<f64>,
) -> Result<FmbResult> {
    if let Some(p) = winsorize {
        if !(0.0..0.5).contains(&p) {
            return Err(Error::InvalidConfig(format!("winsorize fraction {p} outside [0, 0.5)")));
        }
    }
    if regressors.is_empty() {
        return Err(Error::InvalidConfig("no regressors for the cross-section".into()));
    }
    let k = regressors.len() + usize::from(intercept);
    let names: Vec<String> = if intercept {
        std::iter::once("const".to_string())
            .chain(regressors.iter().map(|r| r.name()))
            .collect()
    } else {
        regressors.iter().map(|r| r.name()).collect()
    };

    let mut slope_series: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut adj_r2_sum = 0.0;
    let mut n_sum = 0usize;
    let mut months_used = 0usize;
    let mut skipped = Vec::new();

    for month in months.iter() {
        let eligible = match dataset.eligible_stocks(month) {
            Ok(e) => e,
            Err(_) => {
                skipped.push(month);
                continue;
            }
        };
        let mut y = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); regressors.len()];
        'stock: for stock in eligible {
            let Some(obs) = dataset.get(stock, month) else { continue };
            let mut row = Vec::with_capacity(regressors.len());
            for &r in regressors {
                match panel.value(stock, month, r) {
                    Some(v) => row.push(v),
                    None => continue 'stock,
                }
            }
            y.push(obs.ret);
            for (c, v) in row.into_iter().enumerate() {
                cols[c].push(v);
            }
        }
        if y.len() < regressors.len() + FMB_MIN_EXTRA {
            skipped.push(month);
            continue;
        }
        if let Some(p) = winsorize {
            for col in &mut cols {
                winsorize_column(col, p);
            }
        }
        let reg_names: Vec<String> = regressors.iter().map(|r| r.name()).collect();
        match ols(&y, &cols, &reg_names, intercept) {
            Ok(res) => {
                for (i, &c) in res.coefficients.iter().enumerate() {
                    slope_series[i].push(c);
                }
                adj_r2_sum += res.adj_r_squared;
                n_sum += res.n_obs;
                months_used += 1;
            }
            Err(Error::RankDeficient) => skipped.push(month),
            Err(e) => return Err(e),
        }
    }

    if months_used == 0 {
        return Err(Error::NoFeasibleMonths);
    }

    let lag = lag_policy.lag_for(months_used);
    let mut premiums = Vec::with_capacity(k);
    let mut t_stats = Vec::with_capacity(k);
    for series in &slope_series {
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        premiums.push(mean);
        if series.len() == 1 {
            t_stats.push(None);
            continue;
        }
        let reg = ols_newey_west(series, &[], &[], true, LagPolicy::Fixed(lag.min(series.len() - 1)))?;
        t_stats.push(reg.t_stats[0]);
    }

    Ok(FmbResult {
        names,
        premiums,
        t_stats,
        avg_adj_r_squared: adj_r2_sum / months_used as f64,
        avg_cross_section: n_sum as f64 / months_used as f64,
        months_used,
        skipped_months: skipped,
        lag,
        slope_series,
    })
}
