//! Python bindings for the turnwave engine.
//!
//! Exposes the decomposition, the core study operations, and the synthetic
//! generator as plain functions plus a thin `Panel` class. Numeric data
//! crosses the boundary as Python lists of floats.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use turnwave::econ::{self, LagPolicy};
use turnwave::month::{Month, MonthRange};
use turnwave::panel::{self, PanelSchema};
use turnwave::signals::{self, SignalKind, SignalPanel};
use turnwave::sorts;
use turnwave::study::{self, StudyConfig};
use turnwave::synth;
use turnwave::wavelet::{self, Mode, ScaleDecomposition, Transform, SCALE_COUNT};

fn to_py_err(e: turnwave::Error) -> PyErr {
    match &e {
        turnwave::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "full_sample" => Ok(Mode::FullSample),
        "causal" => Ok(Mode::Causal),
        other => Err(PyValueError::new_err(format!("bad mode {other:?}"))),
    }
}

fn parse_transform(transform: &str) -> PyResult<Transform> {
    match transform {
        "dwt" => Ok(Transform::Dwt),
        "modwt" => Ok(Transform::Modwt),
        other => Err(PyValueError::new_err(format!("bad transform {other:?}"))),
    }
}

/// The Daubechies-2 scaling and wavelet filters.
#[pyfunction]
fn db2_filters() -> (Vec<f64>, Vec<f64>) {
    let f = wavelet::db2_filters();
    (f.scaling.to_vec(), f.wavelet.to_vec())
}

/// Cycle label of a scale (0 = smooth, 6 = finest detail).
#[pyfunction]
fn scale_cycle_label(scale: usize) -> PyResult<String> {
    wavelet::scale_cycle_label(scale)
        .map(|l| l.cycle_band.to_string())
        .map_err(to_py_err)
}

/// Decomposes a monthly series into the seven scale components.
///
/// Returns a list of seven same-length lists, scale 0 (smooth) first. In
/// causal mode the output starts 63 samples into the input.
#[pyfunction]
#[pyo3(signature = (series, mode="full_sample", transform="dwt"))]
fn decompose(series: Vec<f64>, mode: &str, transform: &str) -> PyResult<Vec<Vec<f64>>> {
    let d = ScaleDecomposition::compute_with(
        panel::StockId(0),
        Month(0),
        &series,
        parse_mode(mode)?,
        parse_transform(transform)?,
    )
    .map_err(to_py_err)?;
    Ok((0..SCALE_COUNT)
        .map(|s| d.component(s).expect("scale in range").to_vec())
        .collect())
}

/// Sums scale components back into the original series.
#[pyfunction]
fn reconstruct(components: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    if components.len() != SCALE_COUNT {
        return Err(PyValueError::new_err(format!(
            "expected {SCALE_COUNT} components, got {}",
            components.len()
        )));
    }
    let n = components[0].len();
    if components.iter().any(|c| c.len() != n) {
        return Err(PyValueError::new_err("components differ in length"));
    }
    Ok((0..n).map(|i| components.iter().map(|c| c[i]).sum()).collect())
}

/// Applies the NASDAQ turnover double-counting adjustment.
#[pyfunction]
fn adjust_nasdaq_turnover(turnover: f64, month: &str, exchange: &str) -> PyResult<f64> {
    let m: Month = month.parse().map_err(to_py_err)?;
    let e: panel::Exchange = exchange
        .parse()
        .map_err(|_| PyValueError::new_err(format!("bad exchange {exchange:?}")))?;
    panel::adjust_nasdaq_turnover(turnover, m, e).map_err(to_py_err)
}

/// Compound return over months `formation-m .. formation-n` of a series
/// whose index 0 is month 0; None when the window is not covered.
#[pyfunction]
fn cumulative_return(returns: Vec<f64>, formation: i32, m: u32, n: u32) -> Option<f64> {
    signals::cumulative_return(&returns, Month(0), Month(formation), m, n)
}

/// Quantile group per value (1 = lowest group).
#[pyfunction]
fn assign_groups(values: Vec<f64>, k: usize) -> PyResult<Vec<usize>> {
    let pairs: Vec<(panel::StockId, f64)> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (panel::StockId(i as u32), v))
        .collect();
    let assigned = sorts::assign_groups(&pairs, k).map_err(to_py_err)?;
    Ok(assigned.into_iter().map(|(_, g)| g).collect())
}

/// Value-weighted mean return.
#[pyfunction]
fn vw_return(weights: Vec<f64>, returns: Vec<f64>) -> PyResult<f64> {
    sorts::vw_return(&weights, &returns).map_err(to_py_err)
}

/// OLS with Newey-West standard errors.
///
/// Returns a dict with `names`, `coefficients`, `std_errors`, `t_stats`
/// (None where degenerate), `r_squared`, `adj_r_squared`, `n_obs`, `lag`.
#[pyfunction]
#[pyo3(signature = (y, regressors, intercept=true, lag=None))]
fn ols_newey_west(
    py: Python<'_>,
    y: Vec<f64>,
    regressors: Vec<Vec<f64>>,
    intercept: bool,
    lag: Option<usize>,
) -> PyResult<PyObject> {
    let names: Vec<String> = (0..regressors.len()).map(|i| format!("x{i}")).collect();
    let policy = lag.map(LagPolicy::Fixed).unwrap_or(LagPolicy::Auto);
    let r = econ::ols_newey_west(&y, &regressors, &names, intercept, policy).map_err(to_py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("names", r.names.clone())?;
    d.set_item("coefficients", r.coefficients.clone())?;
    d.set_item("std_errors", r.std_errors.clone())?;
    d.set_item("t_stats", r.t_stats.clone())?;
    d.set_item("r_squared", r.r_squared)?;
    d.set_item("adj_r_squared", r.adj_r_squared)?;
    d.set_item("n_obs", r.n_obs)?;
    d.set_item("lag", r.lag)?;
    Ok(d.into())
}

/// Fraction of one-sided spectral energy with period in
/// `(period_lo, period_hi]`.
#[pyfunction]
fn spectral_band_energy(series: Vec<f64>, period_lo: f64, period_hi: f64) -> PyResult<f64> {
    synth::spectral_band_energy(&series, period_lo, period_hi).map_err(to_py_err)
}

/// Direct double-summation Newey-West covariance (verification oracle).
#[pyfunction]
fn brute_force_hac(y: Vec<f64>, design: Vec<Vec<f64>>, lag: usize) -> PyResult<Vec<Vec<f64>>> {
    synth::brute_force_hac(&y, &design, lag).map_err(to_py_err)
}

/// Stock-month panel handle.
#[pyclass(name = "Panel")]
struct PyPanel {
    inner: panel::PanelDataset,
}

#[pymethods]
impl PyPanel {
    /// Loads a delimited panel file.
    #[staticmethod]
    #[pyo3(signature = (path, pre_adjusted=false))]
    fn load(path: &str, pre_adjusted: bool) -> PyResult<Self> {
        let schema = PanelSchema { turnover_pre_adjusted: pre_adjusted, ..Default::default() };
        Ok(PyPanel { inner: panel::load_panel_path(path, &schema).map_err(to_py_err)? })
    }

    /// Generates a synthetic panel (default config reseeded and resized).
    #[staticmethod]
    #[pyo3(signature = (stocks=300, months=200, seed=42))]
    fn synthetic(stocks: usize, months: usize, seed: u64) -> PyResult<Self> {
        let config = synth::SynthConfig {
            n_stocks: stocks,
            n_months: months,
            seed,
            ..Default::default()
        };
        Ok(PyPanel { inner: synth::generate_panel(&config).map_err(to_py_err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn stock_count(&self) -> usize {
        self.inner.stock_count()
    }

    #[getter]
    fn month_range(&self) -> (String, String) {
        let r = self.inner.month_range();
        (r.first.to_string(), r.last.to_string())
    }

    /// Stock names eligible at a month (price floor and market equity).
    fn eligible_stocks(&self, month: &str) -> PyResult<Vec<String>> {
        let m: Month = month.parse().map_err(to_py_err)?;
        Ok(self
            .inner
            .eligible_stocks(m)
            .map_err(to_py_err)?
            .into_iter()
            .map(|s| self.inner.stock_name(s).to_string())
            .collect())
    }

    /// Load report as `(rows_read, rows_kept, {reason: count})`.
    #[getter]
    fn load_report(&self) -> (usize, usize, std::collections::BTreeMap<String, usize>) {
        let r = self.inner.load_report();
        (r.rows_read, r.rows_kept, r.dropped.clone())
    }

    fn write(&self, path: &str) -> PyResult<()> {
        self.inner.write_to_path(path).map_err(to_py_err)
    }

    /// Decile high-minus-low series of a signal: `(months, returns)`.
    #[pyo3(signature = (signal, groups=10))]
    fn decile_diff(&self, signal: &str, groups: usize) -> PyResult<(Vec<String>, Vec<f64>)> {
        let kind: SignalKind = signal.parse().map_err(to_py_err)?;
        let range = self.inner.month_range();
        let months = MonthRange::new(range.first + 13, range.last - 1);
        let mut decomps = std::collections::HashMap::new();
        if matches!(kind, SignalKind::TurnAve(_)) {
            for stock in self.inner.stocks() {
                let ds =
                    wavelet::decompose_stock(&self.inner, stock, Mode::FullSample, Transform::Dwt)
                        .map_err(to_py_err)?;
                if !ds.is_empty() {
                    decomps.insert(stock, ds);
                }
            }
        }
        let panel = SignalPanel::build(&self.inner, &decomps, months);
        let spec = sorts::SortSpec::univariate(kind, groups);
        let out = sorts::run_sort(&self.inner, &panel, &spec, months).map_err(to_py_err)?;
        let diff = out.row_diff(0).map_err(to_py_err)?;
        Ok((
            diff.months().iter().map(|m| m.to_string()).collect(),
            diff.returns().to_vec(),
        ))
    }
}

/// Runs the full study battery from a TOML config file; returns the paths
/// of the written report files.
#[pyfunction]
#[pyo3(signature = (config_path, output=None))]
fn run_study(config_path: &str, output: Option<&str>) -> PyResult<Vec<String>> {
    let mut config = StudyConfig::from_path(config_path).map_err(to_py_err)?;
    if let Some(out) = output {
        config.study.output = out.into();
    }
    let report = study::run_study(&config).map_err(to_py_err)?;
    Ok(report.files.iter().map(|p| p.display().to_string()).collect())
}

#[pymodule]
fn turnwave_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(db2_filters, m)?)?;
    m.add_function(wrap_pyfunction!(scale_cycle_label, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(adjust_nasdaq_turnover, m)?)?;
    m.add_function(wrap_pyfunction!(cumulative_return, m)?)?;
    m.add_function(wrap_pyfunction!(assign_groups, m)?)?;
    m.add_function(wrap_pyfunction!(vw_return, m)?)?;
    m.add_function(wrap_pyfunction!(ols_newey_west, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_band_energy, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_hac, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_class::<PyPanel>()?;
    m.add("SCALE_COUNT", SCALE_COUNT)?;
    Ok(())
}
