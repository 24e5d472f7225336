//! Portfolio formation: quantile group assignment, value-weighted holding
//! returns, univariate and bivariate sorts.
//!
//! A sort runs per formation month: stocks eligible at `t` are grouped by
//! the quantile breakpoints of their signal values, held for one month, and
//! the value-weighted return of each cell is recorded at the holding month
//! `t+1`. Bivariate sorts assign row and column groups independently by
//! default (breakpoints from the unconditional distributions) with a
//! conditional variant behind a flag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::month::{Month, MonthRange};
use crate::panel::{Exchange, PanelDataset, StockId};
use crate::signals::{SignalKind, SignalPanel};

/// Portfolio weighting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Value,
    Equal,
}

/// Universe whose quantiles define the group breakpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakpointUniverse {
    #[default]
    AllEligible,
    NyseOnly,
}

/// Whether column groups are assigned from unconditional breakpoints or
/// within each row group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    #[default]
    Independent,
    Conditional,
}

/// Specification of a sort.
#[derive(Debug, Clone, PartialEq)]
pub struct SortSpec {
    pub row_signal: SignalKind,
    pub row_groups: usize,
    pub column_signal: Option<SignalKind>,
    pub column_groups: usize,
    pub weighting: Weighting,
    pub breakpoints: BreakpointUniverse,
    pub dependence: Dependence,
}

impl SortSpec {
    /// Univariate sort into `groups` portfolios.
    pub fn univariate(signal: SignalKind, groups: usize) -> Self {
        SortSpec {
            row_signal: signal,
            row_groups: groups,
            column_signal: None,
            column_groups: 1,
            weighting: Weighting::Value,
            breakpoints: BreakpointUniverse::AllEligible,
            dependence: Dependence::Independent,
        }
    }

    /// Bivariate row x column sort.
    pub fn bivariate(
        row: SignalKind,
        row_groups: usize,
        column: SignalKind,
        column_groups: usize,
    ) -> Self {
        SortSpec {
            row_signal: row,
            row_groups,
            column_signal: Some(column),
            column_groups,
            weighting: Weighting::Value,
            breakpoints: BreakpointUniverse::AllEligible,
            dependence: Dependence::Independent,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.row_groups < 2 {
            return Err(Error::InvalidConfig("row group count must be at least 2".into()));
        }
        if self.column_signal.is_some() && self.column_groups < 2 {
            return Err(Error::InvalidConfig("column group count must be at least 2".into()));
        }
        Ok(())
    }
}

/// Monthly return series of one portfolio cell.
#[derive(Debug, Clone, Default)]
pub struct PortfolioSeries {
    pub label: String,
    months: Vec<Month>,
    returns: Vec<f64>,
    counts: Vec<usize>,
}

impl PortfolioSeries {
    pub fn new(label: impl Into<String>) -> Self {
        PortfolioSeries { label: label.into(), ..Default::default() }
    }

    /// Builds a series from parallel month/return vectors (counts of 1).
    pub fn from_parts(label: impl Into<String>, months: Vec<Month>, returns: Vec<f64>) -> Self {
        let counts = vec![1; months.len()];
        PortfolioSeries { label: label.into(), months, returns, counts }
    }

    fn push(&mut self, month: Month, ret: f64, count: usize) {
        self.months.push(month);
        self.returns.push(ret);
        self.counts.push(count);
    }

    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn months(&self) -> &[Month] {
        &self.months
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Return at one holding month, if present.
    pub fn get(&self, month: Month) -> Option<f64> {
        self.months.binary_search(&month).ok().map(|i| self.returns[i])
    }

    pub fn mean(&self) -> f64 {
        if self.returns.is_empty() {
            return f64::NAN;
        }
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }
}

/// Quantile breakpoints of `values` at 1/k, 2/k, ..., (k-1)/k.
///
/// The i-th breakpoint is the smallest order statistic at or above the
/// i/k quantile position (inverse empirical CDF), so ties at a breakpoint
/// land in the lower group.
pub fn quantile_breakpoints(values: &[f64], k: usize) -> Result<Vec<f64>> {
    if values.len() < k {
        return Err(Error::TooFewStocks { needed: k, got: values.len() });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.first() == sorted.last() {
        return Err(Error::DegenerateSort("all signal values identical".into()));
    }
    let n = sorted.len();
    Ok((1..k).map(|i| sorted[(i * n).div_ceil(k) - 1]).collect())
}

/// Group index in `1..=k` for a value given ascending breakpoints.
pub fn group_of(value: f64, breakpoints: &[f64]) -> usize {
    1 + breakpoints.iter().filter(|&&b| value > b).count()
}

/// Assigns each stock to a quantile group of its own universe.
///
/// Group 1 holds the lowest values, group `k` the highest; ties at a
/// breakpoint go to the lower group.
pub fn assign_groups(values: &[(StockId, f64)], k: usize) -> Result<Vec<(StockId, usize)>> {
    let raw: Vec<f64> = values.iter().map(|&(_, v)| v).collect();
    let breaks = quantile_breakpoints(&raw, k)?;
    Ok(values.iter().map(|&(s, v)| (s, group_of(v, &breaks))).collect())
}

/// Weighted mean return: `sum(w*r) / sum(w)`.
pub fn vw_return(weights: &[f64], returns: &[f64]) -> Result<f64> {
    if weights.is_empty() || weights.len() != returns.len() {
        return Err(Error::Data("empty or mismatched membership".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&w, &r) in weights.iter().zip(returns) {
        if w <= 0.0 {
            return Err(Error::Data(format!("nonpositive portfolio weight {w}")));
        }
        num += w * r;
        den += w;
    }
    Ok(num / den)
}

/// Output of [`run_sort`]: the grid of cell series plus per-month accounting.
#[derive(Debug, Clone)]
pub struct SortOutput {
    pub spec: SortSpec,
    /// `cells[row][col]`, rows and columns in ascending signal order.
    pub cells: Vec<Vec<PortfolioSeries>>,
    /// Formation months skipped, with the reason.
    pub skipped: Vec<(Month, String)>,
    /// Members dropped for missing holding-month returns.
    pub dropped_members: usize,
}

impl SortOutput {
    pub fn cell(&self, row: usize, col: usize) -> &PortfolioSeries {
        &self.cells[row][col]
    }

    /// High-minus-low across rows within a column.
    pub fn row_diff(&self, col: usize) -> Result<PortfolioSeries> {
        diff_series(&self.cells[self.cells.len() - 1][col], &self.cells[0][col])
    }

    /// High-minus-low across columns within a row.
    pub fn col_diff(&self, row: usize) -> Result<PortfolioSeries> {
        let cols = self.cells[row].len();
        diff_series(&self.cells[row][cols - 1], &self.cells[row][0])
    }
}

/// Monthly difference `high - low` on the months both series cover.
pub fn diff_series(high: &PortfolioSeries, low: &PortfolioSeries) -> Result<PortfolioSeries> {
    let mut out = PortfolioSeries::new(format!("{}-{}", high.label, low.label));
    for (i, m) in high.months.iter().enumerate() {
        if let Some(l) = low.get(*m) {
            out.push(*m, high.returns[i] - l, high.counts[i].min(low.counts[low.months.binary_search(m).unwrap()]));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    Ok(out)
}

struct MonthSort {
    /// stock, row group, col group, weight, realized return
    members: Vec<(StockId, usize, usize, f64, f64)>,
}

/// Runs a sort over a range of formation months.
///
/// For each formation month `t`: the eligibility filter applies at `t`,
/// groups are assigned from formation-month signal quantiles, and each
/// cell's value-weighted return over month `t+1` is recorded at `t+1`.
/// Formation months where any cell would be empty are skipped and reported.
pub fn run_sort(
    dataset: &PanelDataset,
    panel: &SignalPanel,
    spec: &SortSpec,
    months: MonthRange,
) -> Result<SortOutput> {
    spec.validate()?;
    if months.is_empty() {
        return Err(Error::InvalidConfig("empty formation month range".into()));
    }
    let k_row = spec.row_groups;
    let k_col = if spec.column_signal.is_some() { spec.column_groups } else { 1 };

    let mut cells: Vec<Vec<PortfolioSeries>> = (0..k_row)
        .map(|r| {
            (0..k_col)
                .map(|c| {
                    let label = match spec.column_signal {
                        Some(_) => format!("r{}c{}", r + 1, c + 1),
                        None => format!("g{}", r + 1),
                    };
                    PortfolioSeries::new(label)
                })
                .collect()
        })
        .collect();
    let mut skipped = Vec::new();
    let mut dropped_members = 0usize;

    for formation in months.iter() {
        match sort_one_month(dataset, panel, spec, formation, k_row, k_col) {
            Ok(Some(MonthSort { members })) => {
                // Aggregate per cell; every cell must be nonempty.
                let mut weights: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); k_col]; k_row];
                let mut rets: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); k_col]; k_row];
                let mut dropped_here = 0usize;
                for (stock, r, c, w, realized) in &members {
                    let _ = stock;
                    if realized.is_nan() {
                        dropped_here += 1;
                        continue;
                    }
                    weights[*r - 1][*c - 1].push(*w);
                    rets[*r - 1][*c - 1].push(*realized);
                }
                if weights.iter().flatten().any(|cell| cell.is_empty()) {
                    skipped.push((formation, "empty cell".into()));
                    continue;
                }
                dropped_members += dropped_here;
                let holding = formation + 1;
                for r in 0..k_row {
                    for c in 0..k_col {
                        let vw = vw_return(&weights[r][c], &rets[r][c])?;
                        cells[r][c].push(holding, vw, weights[r][c].len());
                    }
                }
            }
            Ok(None) => skipped.push((formation, "too few stocks with signals".into())),
            Err(Error::DegenerateSort(msg)) => skipped.push((formation, msg)),
            Err(e) => return Err(e),
        }
    }

    if cells[0][0].is_empty() {
        return Err(Error::Data("sort produced no feasible months".into()));
    }
    Ok(SortOutput { spec: spec.clone(), cells, skipped, dropped_members })
}

fn sort_one_month(
    dataset: &PanelDataset,
    panel: &SignalPanel,
    spec: &SortSpec,
    formation: Month,
    k_row: usize,
    k_col: usize,
) -> Result<Option<MonthSort>> {
    let eligible = dataset.eligible_stocks(formation)?;

    // Stocks with every required signal present.
    let mut universe: Vec<(StockId, f64, f64)> = Vec::new(); // (stock, row sig, col sig)
    for stock in eligible {
        let Some(rv) = panel.value(stock, formation, spec.row_signal) else { continue };
        let cv = match spec.column_signal {
            Some(kind) => match panel.value(stock, formation, kind) {
                Some(v) => v,
                None => continue,
            },
            None => 0.0,
        };
        universe.push((stock, rv, cv));
    }
    if universe.len() < k_row.max(k_col) {
        return Ok(None);
    }

    let breakpoint_pool = |values: &dyn Fn(&(StockId, f64, f64)) -> f64| -> Vec<f64> {
        match spec.breakpoints {
            BreakpointUniverse::AllEligible => universe.iter().map(values).collect(),
            BreakpointUniverse::NyseOnly => universe
                .iter()
                .filter(|(s, _, _)| {
                    dataset
                        .get(*s, formation)
                        .map(|o| o.exchange == Exchange::Nyse)
                        .unwrap_or(false)
                })
                .map(values)
                .collect(),
        }
    };

    let row_pool = breakpoint_pool(&|t: &(StockId, f64, f64)| t.1);
    let row_breaks = quantile_breakpoints(&row_pool, k_row)?;

    let col_breaks_unconditional = match (spec.column_signal, spec.dependence) {
        (Some(_), Dependence::Independent) => {
            let pool = breakpoint_pool(&|t: &(StockId, f64, f64)| t.2);
            Some(quantile_breakpoints(&pool, k_col)?)
        }
        _ => None,
    };

    // Row assignment first (needed for conditional column breakpoints).
    let mut assigned: Vec<(StockId, usize, f64)> = universe
        .iter()
        .map(|&(s, rv, cv)| (s, group_of(rv, &row_breaks), cv))
        .collect();

    let mut members = Vec::with_capacity(assigned.len());
    if spec.column_signal.is_none() {
        for &(stock, r, _) in &assigned {
            members.push((stock, r, 1usize, 0.0, 0.0));
        }
    } else {
        match spec.dependence {
            Dependence::Independent => {
                let breaks = col_breaks_unconditional.as_ref().unwrap();
                for &(stock, r, cv) in &assigned {
                    members.push((stock, r, group_of(cv, breaks), 0.0, 0.0));
                }
            }
            Dependence::Conditional => {
                assigned.sort_by_key(|&(s, r, _)| (r, s));
                for r in 1..=k_row {
                    let in_row: Vec<(StockId, f64)> = assigned
                        .iter()
                        .filter(|&&(_, rg, _)| rg == r)
                        .map(|&(s, _, cv)| (s, cv))
                        .collect();
                    if in_row.len() < k_col {
                        return Ok(None);
                    }
                    let vals: Vec<f64> = in_row.iter().map(|&(_, v)| v).collect();
                    let breaks = quantile_breakpoints(&vals, k_col)?;
                    for (stock, cv) in in_row {
                        members.push((stock, r, group_of(cv, &breaks), 0.0, 0.0));
                    }
                }
            }
        }
    }

    // Weights at formation, realized returns at the holding month.
    let holding = formation + 1;
    for m in &mut members {
        let obs = dataset.get(m.0, formation).expect("eligible stocks are observed");
        m.3 = match spec.weighting {
            Weighting::Value => obs.market_equity.expect("eligibility requires market equity"),
            Weighting::Equal => 1.0,
        };
        m.4 = dataset.get(m.0, holding).map(|o| o.ret).unwrap_or(f64::NAN);
    }
    Ok(Some(MonthSort { members }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{load_panel, PanelSchema};
    use crate::signals::SignalPanel;
    use std::collections::HashMap;

    fn ids(n: usize) -> Vec<StockId> {
        (0..n as u32).map(StockId).collect()
    }

    #[test]
    fn ten_values_ten_groups() {
        let values: Vec<(StockId, f64)> =
            ids(10).into_iter().zip((1..=10).map(|v| v as f64)).collect();
        let groups = assign_groups(&values, 10).unwrap();
        for (i, &(_, g)) in groups.iter().enumerate() {
            assert_eq!(g, i + 1);
        }
    }

    #[test]
    fn ten_values_five_groups_pairs() {
        let values: Vec<(StockId, f64)> =
            ids(10).into_iter().zip((1..=10).map(|v| v as f64)).collect();
        let groups = assign_groups(&values, 5).unwrap();
        let expect = [1, 1, 2, 2, 3, 3, 4, 4, 5, 5];
        for (i, &(_, g)) in groups.iter().enumerate() {
            assert_eq!(g, expect[i], "value {}", i + 1);
        }
    }

    #[test]
    fn identical_values_degenerate() {
        let values: Vec<(StockId, f64)> = ids(10).into_iter().map(|s| (s, 4.0)).collect();
        assert!(matches!(assign_groups(&values, 10), Err(Error::DegenerateSort(_))));
    }

    #[test]
    fn fewer_stocks_than_groups() {
        let values: Vec<(StockId, f64)> =
            ids(5).into_iter().zip((1..=5).map(|v| v as f64)).collect();
        assert!(matches!(assign_groups(&values, 10), Err(Error::TooFewStocks { .. })));
    }

    #[test]
    fn assignment_invariant_under_monotone_transform() {
        let raw: Vec<f64> = vec![0.3, -1.2, 5.5, 0.01, 2.2, -0.4, 1.1, 0.9, -3.0, 4.1, 0.6];
        let values: Vec<(StockId, f64)> = ids(raw.len()).into_iter().zip(raw.clone()).collect();
        let transformed: Vec<(StockId, f64)> = values
            .iter()
            .map(|&(s, v)| (s, (2.0 * v).exp() + 7.0))
            .collect();
        let a = assign_groups(&values, 4).unwrap();
        let b = assign_groups(&transformed, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn groups_partition_universe() {
        let raw: Vec<f64> = (0..97).map(|i| ((i * 37) % 101) as f64).collect();
        let values: Vec<(StockId, f64)> = ids(raw.len()).into_iter().zip(raw).collect();
        let groups = assign_groups(&values, 10).unwrap();
        assert_eq!(groups.len(), values.len());
        for &(_, g) in &groups {
            assert!((1..=10).contains(&g));
        }
        for g in 1..=10 {
            assert!(groups.iter().any(|&(_, gg)| gg == g), "group {g} empty");
        }
    }

    #[test]
    fn vw_return_single_stock() {
        assert_eq!(vw_return(&[3.0], &[0.02]).unwrap(), 0.02);
    }

    #[test]
    fn vw_return_hand_weighted() {
        let v = vw_return(&[1.0, 3.0], &[0.00, 0.04]).unwrap();
        assert!((v - 0.03).abs() < 1e-15);
    }

    #[test]
    fn vw_return_equal_returns_ignore_weights() {
        let v = vw_return(&[1.0, 17.0, 0.3], &[0.05, 0.05, 0.05]).unwrap();
        assert!((v - 0.05).abs() < 1e-15);
    }

    #[test]
    fn vw_return_rejects_empty_and_bad_weights() {
        assert!(vw_return(&[], &[]).is_err());
        assert!(vw_return(&[0.0], &[0.01]).is_err());
    }

    #[test]
    fn vw_return_within_member_range() {
        let rets = [0.01, -0.03, 0.07, 0.02];
        let weights = [5.0, 1.0, 2.0, 9.0];
        let v = vw_return(&weights, &rets).unwrap();
        assert!(v >= -0.03 && v <= 0.07);
    }

    #[test]
    fn diff_of_identical_series_is_zero() {
        let months: Vec<Month> = (0..10).map(Month).collect();
        let rets = vec![0.01; 10];
        let a = PortfolioSeries::from_parts("a", months.clone(), rets.clone());
        let b = PortfolioSeries::from_parts("b", months, rets);
        let d = diff_series(&a, &b).unwrap();
        assert!(d.returns().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn diff_constant_spread() {
        let months: Vec<Month> = (0..10).map(Month).collect();
        let high = PortfolioSeries::from_parts("h", months.clone(), vec![0.01; 10]);
        let low = PortfolioSeries::from_parts("l", months, vec![-0.01; 10]);
        let d = diff_series(&high, &low).unwrap();
        assert!(d.returns().iter().all(|&r| (r - 0.02).abs() < 1e-15));
    }

    #[test]
    fn diff_intersects_months() {
        let a = PortfolioSeries::from_parts(
            "a",
            (1..=10).map(Month).collect(),
            (1..=10).map(|i| i as f64).collect(),
        );
        let b = PortfolioSeries::from_parts(
            "b",
            (5..=15).map(Month).collect(),
            (5..=15).map(|i| i as f64 * 2.0).collect(),
        );
        let d = diff_series(&a, &b).unwrap();
        let months: Vec<Month> = d.months().to_vec();
        assert_eq!(months, (5..=10).map(Month).collect::<Vec<_>>());
        for (i, m) in (5..=10).enumerate() {
            assert_eq!(d.returns()[i], m as f64 - 2.0 * m as f64);
        }
    }

    #[test]
    fn diff_empty_intersection_errors() {
        let a = PortfolioSeries::from_parts("a", vec![Month(1)], vec![0.0]);
        let b = PortfolioSeries::from_parts("b", vec![Month(2)], vec![0.0]);
        assert!(matches!(diff_series(&a, &b), Err(Error::EmptyIntersection)));
    }

    /// Panel where every stock's next-month return equals the cross-sectional
    /// rank of its sort signal (signal = stock index each month).
    fn rank_panel(n_stocks: usize, n_months: i32) -> (PanelDataset, SignalPanel) {
        let mut text = String::from(
            "stock_id,month,ret,price,turnover,market_equity,book_to_market,exchange\n",
        );
        for s in 0..n_stocks {
            for m in 0..n_months {
                // Signal is r_1_0 = previous-month return; plant returns so
                // that the rank relation is exact: return at month m equals
                // the stock index (scaled), constant over time.
                let ret = 0.001 * (s + 1) as f64;
                text.push_str(&format!(
                    "S{s:03},{},{ret},10.0,0.1,{me},0.5,NYSE\n",
                    Month(m),
                    me = 100.0
                ));
            }
        }
        let d = load_panel(text.as_bytes(), &PanelSchema::default()).unwrap();
        let months = MonthRange::new(Month(1), Month(n_months - 2));
        let panel = SignalPanel::build(&d, &HashMap::new(), months);
        (d, panel)
    }

    #[test]
    fn planted_monotone_signal_gives_increasing_deciles() {
        let (d, panel) = rank_panel(50, 6);
        let spec = SortSpec::univariate(SignalKind::R10, 10);
        let out = run_sort(&d, &panel, &spec, MonthRange::new(Month(1), Month(4))).unwrap();
        let means: Vec<f64> = (0..10).map(|g| out.cell(g, 0).mean()).collect();
        for w in means.windows(2) {
            assert!(w[1] > w[0], "deciles not increasing: {means:?}");
        }
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn equal_market_equity_matches_equal_weighting() {
        let (d, panel) = rank_panel(40, 6);
        let mut spec = SortSpec::univariate(SignalKind::R10, 5);
        let vw = run_sort(&d, &panel, &spec, MonthRange::new(Month(1), Month(4))).unwrap();
        spec.weighting = Weighting::Equal;
        let ew = run_sort(&d, &panel, &spec, MonthRange::new(Month(1), Month(4))).unwrap();
        for g in 0..5 {
            for (a, b) in vw.cell(g, 0).returns().iter().zip(ew.cell(g, 0).returns()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sign_symmetry_under_negated_signal() {
        // Running the sort on the negated signal and negating L-minus-H
        // reproduces the original Diff (tie-free signal).
        let (d, panel) = rank_panel(30, 6);
        let spec = SortSpec::univariate(SignalKind::R10, 5);
        let out = run_sort(&d, &panel, &spec, MonthRange::new(Month(1), Month(4))).unwrap();
        let diff = out.row_diff(0).unwrap();

        // Negated signal: the rank order flips exactly, so group g maps to
        // k+1-g and H-L maps to -(H-L).
        let months = MonthRange::new(Month(1), Month(4));
        let mut flipped: Vec<Vec<f64>> = Vec::new();
        for formation in months.iter() {
            let vals: Vec<(StockId, f64)> = panel
                .month_values(formation, SignalKind::R10)
                .into_iter()
                .map(|(s, v)| (s, -v))
                .collect();
            let groups = assign_groups(&vals, 5).unwrap();
            let mut low = Vec::new();
            let mut high = Vec::new();
            for (stock, g) in groups {
                let r = d.get(stock, formation + 1).unwrap().ret;
                if g == 1 {
                    low.push(r);
                }
                if g == 5 {
                    high.push(r);
                }
            }
            flipped.push(vec![
                low.iter().sum::<f64>() / low.len() as f64,
                high.iter().sum::<f64>() / high.len() as f64,
            ]);
        }
        for (i, f) in flipped.iter().enumerate() {
            // negated L-minus-H == original H-minus-L
            let neg_lmh = -(f[1] - f[0]);
            assert!((neg_lmh - diff.returns()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn decile_mass_reconstructs_universe_return() {
        // Heterogeneous market equities: the weight-mass-blended decile
        // returns must rebuild the eligible-universe VW return exactly.
        let mut text = String::from(
            "stock_id,month,ret,price,turnover,market_equity,book_to_market,exchange\n",
        );
        let n_stocks = 60;
        for s in 0..n_stocks {
            for m in 0..4 {
                let ret = 0.001 * ((s * 29 + m as usize * 7) % 83) as f64;
                let me = 20.0 + ((s * 41) % 997) as f64;
                text.push_str(&format!("S{s:02},{},{ret},10.0,0.1,{me},0.5,NYSE\n", Month(m)));
            }
        }
        let d = load_panel(text.as_bytes(), &PanelSchema::default()).unwrap();
        let months = MonthRange::new(Month(2), Month(2));
        let panel = SignalPanel::build(&d, &HashMap::new(), months);
        let spec = SortSpec::univariate(SignalKind::R10, 10);
        let out = run_sort(&d, &panel, &spec, months).unwrap();

        let holding = Month(3);
        let mut uni_num = 0.0;
        let mut uni_den = 0.0;
        let mut masses = vec![0.0; 10];
        for (stock, _) in panel.month_values(Month(2), SignalKind::R10) {
            let me = d.get(stock, Month(2)).unwrap().market_equity.unwrap();
            uni_num += me * d.get(stock, holding).unwrap().ret;
            uni_den += me;
        }
        // Per-decile weight mass from the raw assignment.
        let groups =
            assign_groups(&panel.month_values(Month(2), SignalKind::R10), 10).unwrap();
        for (stock, g) in &groups {
            masses[g - 1] += d.get(*stock, Month(2)).unwrap().market_equity.unwrap();
        }
        let blended: f64 = (0..10)
            .map(|g| masses[g] * out.cell(g, 0).returns()[0])
            .sum::<f64>()
            / masses.iter().sum::<f64>();
        assert!((blended - uni_num / uni_den).abs() < 1e-10);
    }

    #[test]
    fn bivariate_independent_cells_fill() {
        // Two independent-ish signals: r_1_0 ranks and log_me ranks.
        let mut text = String::from(
            "stock_id,month,ret,price,turnover,market_equity,book_to_market,exchange\n",
        );
        let n_stocks = 300;
        for s in 0..n_stocks {
            for m in 0..6 {
                let ret = 0.001 * ((s * 7 + 3) % n_stocks) as f64;
                let me = 50.0 + ((s * 13 + 1) % n_stocks) as f64;
                text.push_str(&format!("S{s:03},{},{ret},10.0,0.1,{me},0.5,NYSE\n", Month(m)));
            }
        }
        let d = load_panel(text.as_bytes(), &PanelSchema::default()).unwrap();
        let months = MonthRange::new(Month(1), Month(4));
        let panel = SignalPanel::build(&d, &HashMap::new(), months);
        let spec = SortSpec::bivariate(SignalKind::LogMe, 10, SignalKind::R10, 5);
        let out = run_sort(&d, &panel, &spec, months).unwrap();
        // Independent near-uniform signals spread the universe close to the
        // multinomial expectation of n/(10*5) stocks per cell.
        let expected = 300.0 / 50.0;
        let mut total = 0usize;
        for r in 0..10 {
            for c in 0..5 {
                assert!(!out.cell(r, c).is_empty(), "cell {r},{c} empty");
                let count = out.cell(r, c).counts()[0];
                assert!(
                    (count as f64) > 0.3 * expected && (count as f64) < 3.0 * expected,
                    "cell {r},{c}: {count} far from expectation {expected}"
                );
                total += count;
            }
        }
        assert_eq!(total, 300);
    }

    #[test]
    fn missing_holding_return_drops_member() {
        let mut text = String::from(
            "stock_id,month,ret,price,turnover,market_equity,book_to_market,exchange\n",
        );
        for s in 0..20 {
            for m in 0..4 {
                // Stock S19 disappears after month 2 (delisting).
                if s == 19 && m == 3 {
                    continue;
                }
                let ret = 0.001 * (s + 1) as f64;
                text.push_str(&format!("S{s:02},{},{ret},10.0,0.1,100.0,0.5,NYSE\n", Month(m)));
            }
        }
        let d = load_panel(text.as_bytes(), &PanelSchema::default()).unwrap();
        let months = MonthRange::new(Month(2), Month(2));
        let panel = SignalPanel::build(&d, &HashMap::new(), months);
        let spec = SortSpec::univariate(SignalKind::R10, 5);
        let out = run_sort(&d, &panel, &spec, months).unwrap();
        assert_eq!(out.dropped_members, 1);
        // The top quintile lost a member but still has the remaining three.
        assert_eq!(out.cell(4, 0).counts()[0], 3);
    }

    #[test]
    fn holding_month_return_is_next_month() {
        // Returns vary over time so an off-by-one would be visible: return
        // at month m is 0.01*m for every stock.
        let mut text = String::from(
            "stock_id,month,ret,price,turnover,market_equity,book_to_market,exchange\n",
        );
        for s in 0..12 {
            for m in 0..5 {
                text.push_str(&format!(
                    "S{s:02},{},{},10.0,0.1,{me},0.5,NYSE\n",
                    Month(m),
                    0.01 * m as f64,
                    me = 100.0 + s as f64,
                ));
            }
        }
        let d = load_panel(text.as_bytes(), &PanelSchema::default()).unwrap();
        let months = MonthRange::new(Month(2), Month(3));
        // Sort on log_me (present at formation without history).
        let panel = SignalPanel::build(&d, &HashMap::new(), months);
        let spec = SortSpec::univariate(SignalKind::LogMe, 3);
        let out = run_sort(&d, &panel, &spec, months).unwrap();
        // Formation 2 -> series indexed at holding month 3 with return 0.03.
        assert_eq!(out.cell(0, 0).months(), &[Month(3), Month(4)]);
        assert!((out.cell(0, 0).returns()[0] - 0.03).abs() < 1e-12);
        assert!((out.cell(0, 0).returns()[1] - 0.04).abs() < 1e-12);
    }

    #[test]
    fn nyse_only_breakpoints_use_nyse_quantiles() {
        // 10 NYSE stocks with small signals, 10 NASDAQ with large ones.
        // NYSE-only breakpoints put every NASDAQ stock in the top group.
        let mut text = String::from(
            "stock_id,month,ret,price,turnover,market_equity,book_to_market,exchange\n",
        );
        for s in 0..20 {
            let exch = if s < 10 { "NYSE" } else { "NASDAQ" };
            let me = 100.0 + s as f64; // sort signal via log_me
            for m in 0..3 {
                text.push_str(&format!(
                    "S{s:02},{},0.01,10.0,0.1,{me},0.5,{exch}\n",
                    Month(m)
                ));
            }
        }
        let d = load_panel(text.as_bytes(), &PanelSchema::default()).unwrap();
        let months = MonthRange::new(Month(1), Month(1));
        let panel = SignalPanel::build(&d, &HashMap::new(), months);
        let mut spec = SortSpec::univariate(SignalKind::LogMe, 2);
        spec.breakpoints = BreakpointUniverse::NyseOnly;
        let out = run_sort(&d, &panel, &spec, months).unwrap();
        // Median of the NYSE subset splits NYSE 5/5; all NASDAQ land high.
        assert_eq!(out.cell(0, 0).counts()[0], 5);
        assert_eq!(out.cell(1, 0).counts()[0], 15);
    }

    #[test]
    fn conditional_sort_balances_cells() {
        // Column signal strongly correlated with the row signal: the
        // independent sort starves the off-diagonal cells, the conditional
        // sort balances them by construction.
        let mut text = String::from(
            "stock_id,month,ret,price,turnover,market_equity,book_to_market,exchange\n",
        );
        let n = 90;
        for s in 0..n {
            // me rank == return rank -> log_me and r_1_0 nearly comonotone
            let me = 100.0 + s as f64;
            for m in 0..4 {
                text.push_str(&format!(
                    "S{s:02},{},{},10.0,0.1,{me},0.5,NYSE\n",
                    Month(m),
                    0.001 * s as f64
                ));
            }
        }
        let d = load_panel(text.as_bytes(), &PanelSchema::default()).unwrap();
        let months = MonthRange::new(Month(1), Month(2));
        let panel = SignalPanel::build(&d, &HashMap::new(), months);
        let mut spec = SortSpec::bivariate(SignalKind::LogMe, 3, SignalKind::R10, 3);
        spec.dependence = Dependence::Conditional;
        let out = run_sort(&d, &panel, &spec, months).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(out.cell(r, c).counts()[0], 10, "cell {r},{c}");
            }
        }
        // The independent variant cannot fill the off-diagonal cells here.
        spec.dependence = Dependence::Independent;
        let out = run_sort(&d, &panel, &spec, months);
        assert!(out.is_err() || !out.unwrap().skipped.is_empty());
    }

    #[test]
    fn empty_months_range_errors() {
        let (d, panel) = rank_panel(30, 6);
        let spec = SortSpec::univariate(SignalKind::R10, 5);
        assert!(run_sort(&d, &panel, &spec, MonthRange::new(Month(4), Month(1))).is_err());
    }
}
