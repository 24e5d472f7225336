//! Multiresolution decomposition of monthly turnover series.
//!
//! A Daubechies-2 wavelet transform run to 6 levels and projected back to
//! the time domain, so every component has the same length as the input and
//! the seven components sum to the input exactly.
//!
//! Two transform variants are available. [`Transform::Dwt`] (the default)
//! projects onto the orthogonal subspaces of the decimated transform, which
//! makes distinct components almost uncorrelated in time; this is the
//! variant whose cross-scale correlations are near zero. [`Transform::Modwt`]
//! is the shift-invariant maximal-overlap variant with smoother, zero-phase
//! components; its adjacent scales overlap substantially (white-noise
//! correlations around 0.4), so it is offered for comparison rather than as
//! the default. Both are additive and both keep components month-aligned
//! with the input.
//!
//! Components are indexed by *scale* 0 through 6: scale 6 is the finest
//! detail (level-1), scale 5 the level-2 detail, down to scale 1 (level-6
//! detail), and scale 0 is the level-6 smooth. Reporting labels for each
//! scale come from [`scale_cycle_label`].
//!
//! Boundaries are handled by reflection: the series is extended with its own
//! reversal and the transform is run circularly on the doubled series, which
//! behaves as mirror reflection at both ends of the original segment. In
//! causal mode the decomposition at month `t` is recomputed from a trailing
//! window ending at `t` (at most [`CAUSAL_WINDOW`] months), so component
//! values never depend on later data.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::month::{Month, MonthRange};
use crate::panel::{PanelDataset, StockId};

/// Number of decomposition levels.
pub const LEVELS: usize = 6;

/// Number of output components (6 details plus the smooth).
pub const SCALE_COUNT: usize = 7;

/// Minimum contiguous series length accepted for decomposition. Level-6
/// filters have an effective span of roughly 2^6 samples; shorter segments
/// would be boundary-dominated at the coarse scales.
pub const MIN_SERIES_LEN: usize = 64;

/// Trailing-window cap for causal decompositions.
pub const CAUSAL_WINDOW: usize = 128;

/// Decomposition boundary/timing mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One decomposition of the whole segment; component values at month `t`
    /// may use later months.
    FullSample,
    /// Component values at month `t` are recomputed from data up to and
    /// including `t` only.
    Causal,
}

/// Transform variant behind the decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// Decimated orthonormal transform; components are orthogonal
    /// projections and stay nearly uncorrelated across scales.
    #[default]
    Dwt,
    /// Maximal-overlap (undecimated) transform; shift-invariant, zero-phase
    /// components with substantial adjacent-scale overlap.
    Modwt,
}

/// The Daubechies-2 analysis filter pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterPair {
    pub scaling: [f64; 4],
    pub wavelet: [f64; 4],
}

/// Returns the 4-tap Daubechies-2 scaling filter and its quadrature-mirror
/// wavelet filter `g[k] = (-1)^k h[3-k]`.
pub fn db2_filters() -> FilterPair {
    let s3 = 3.0_f64.sqrt();
    let norm = 4.0 * 2.0_f64.sqrt();
    let h = [(1.0 + s3) / norm, (3.0 + s3) / norm, (3.0 - s3) / norm, (1.0 - s3) / norm];
    let g = [h[3], -h[2], h[1], -h[0]];
    FilterPair { scaling: h, wavelet: g }
}

/// Cycle label attached to one scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleLabel {
    pub scale: usize,
    pub cycle_band: &'static str,
}

/// Reporting label for a scale, scale 6 being the shortest cycle band.
///
/// The labels follow the reporting convention the engine reproduces; sorts
/// and regressions depend only on which component a scale selects, never on
/// the label text.
pub fn scale_cycle_label(scale: usize) -> Result<ScaleLabel> {
    const LABELS: [&str; SCALE_COUNT] = [
        ">64months",
        "32~64months",
        "16~32months",
        "8~16months",
        "4~8months",
        "2~4months",
        "0~2months",
    ];
    LABELS
        .get(scale)
        .map(|b| ScaleLabel { scale, cycle_band: b })
        .ok_or(Error::InvalidScale(scale))
}

/// Detail level backing a detail scale (1 = finest). Scale 0 is the smooth.
pub fn level_for_scale(scale: usize) -> Result<Option<usize>> {
    match scale {
        0 => Ok(None),
        1..=6 => Ok(Some(SCALE_COUNT - scale)),
        _ => Err(Error::InvalidScale(scale)),
    }
}

/// Period band (in months) that the transform actually assigns to a scale:
/// `(2^j, 2^(j+1)]` for the level-`j` detail, open-ended for the smooth.
pub fn scale_period_band(scale: usize) -> Result<(f64, f64)> {
    match level_for_scale(scale)? {
        Some(level) => {
            let lo = (1u64 << level) as f64;
            Ok((lo, 2.0 * lo))
        }
        None => Ok(((1u64 << LEVELS) as f64 * 2.0, f64::INFINITY)),
    }
}

/// Scale whose period band contains `period` months (detail scales only).
pub fn scale_for_period(period: f64) -> Option<usize> {
    (1..SCALE_COUNT).find(|&s| {
        let (lo, hi) = scale_period_band(s).unwrap();
        period > lo && period <= hi
    })
}

/// Additive scale decomposition of one stock's turnover segment.
#[derive(Debug, Clone)]
pub struct ScaleDecomposition {
    pub stock: StockId,
    pub mode: Mode,
    pub transform: Transform,
    /// Month of the first component value.
    pub start: Month,
    components: [Vec<f64>; SCALE_COUNT],
}

impl ScaleDecomposition {
    /// Decomposes `series` with the default transform; the first value is
    /// the turnover of `start`.
    ///
    /// `NaN` entries mark missing months: isolated ones are forward-filled,
    /// runs of two or more are rejected. In causal mode the output starts
    /// [`MIN_SERIES_LEN`] - 1 months into the segment, since earlier months
    /// lack the trailing history.
    pub fn compute(stock: StockId, start: Month, series: &[f64], mode: Mode) -> Result<Self> {
        Self::compute_with(stock, start, series, mode, Transform::default())
    }

    /// Decomposes `series` with an explicit transform variant.
    pub fn compute_with(
        stock: StockId,
        start: Month,
        series: &[f64],
        mode: Mode,
        transform: Transform,
    ) -> Result<Self> {
        let values = clean_series(series)?;
        if values.len() < MIN_SERIES_LEN {
            return Err(Error::SeriesTooShort { len: values.len(), min: MIN_SERIES_LEN });
        }
        match mode {
            Mode::FullSample => {
                let components = mra(&values, transform);
                Ok(ScaleDecomposition { stock, mode, transform, start, components })
            }
            Mode::Causal => {
                let n = values.len();
                let out_len = n - (MIN_SERIES_LEN - 1);
                let mut components: [Vec<f64>; SCALE_COUNT] =
                    std::array::from_fn(|_| Vec::with_capacity(out_len));
                for t in (MIN_SERIES_LEN - 1)..n {
                    let w0 = (t + 1).saturating_sub(CAUSAL_WINDOW);
                    let window = &values[w0..=t];
                    let comps = mra(window, transform);
                    for s in 0..SCALE_COUNT {
                        components[s].push(comps[s][window.len() - 1]);
                    }
                }
                Ok(ScaleDecomposition {
                    stock,
                    mode,
                    transform,
                    start: start + (MIN_SERIES_LEN as i32 - 1),
                    components,
                })
            }
        }
    }

    /// Months covered by the component series.
    pub fn months(&self) -> MonthRange {
        MonthRange::new(self.start, self.start + (self.len() as i32 - 1))
    }

    pub fn len(&self) -> usize {
        self.components[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.components[0].is_empty()
    }

    /// Component series for one scale.
    pub fn component(&self, scale: usize) -> Result<&[f64]> {
        self.components
            .get(scale)
            .map(|c| c.as_slice())
            .ok_or(Error::InvalidScale(scale))
    }

    /// Component value of one scale at one month, if covered.
    pub fn value(&self, scale: usize, month: Month) -> Option<f64> {
        let idx = month.months_since(self.start);
        if idx < 0 || scale >= SCALE_COUNT {
            return None;
        }
        self.components[scale].get(idx as usize).copied()
    }

    /// Elementwise sum of the seven components; equals the decomposed values
    /// to within accumulated rounding.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for comp in &self.components {
            for (o, c) in out.iter_mut().zip(comp) {
                *o += c;
            }
        }
        out
    }
}

/// Reconstructs the original series from a decomposition.
pub fn reconstruct(decomp: &ScaleDecomposition) -> Vec<f64> {
    decomp.reconstruct()
}

/// Decomposes a bare series with no panel context (scale components only).
pub fn decompose(series: &[f64], mode: Mode) -> Result<ScaleDecomposition> {
    ScaleDecomposition::compute(StockId(0), Month(0), series, mode)
}

fn clean_series(series: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(series.len());
    let mut gap_start: Option<usize> = None;
    for (i, &v) in series.iter().enumerate() {
        if v.is_nan() {
            if gap_start.is_none() {
                gap_start = Some(i);
            }
            continue;
        }
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        if let Some(g) = gap_start.take() {
            let gap = i - g;
            if gap > 1 || g == 0 {
                return Err(Error::GapTooLong { index: g, gap });
            }
            let fill = out[g - 1];
            out.push(fill);
        }
        out.push(v);
    }
    if let Some(g) = gap_start {
        return Err(Error::GapTooLong { index: g, gap: series.len() - g });
    }
    Ok(out)
}

/// One circular analysis step at `level` (shift `2^(level-1)`).
fn analysis_step(v: &[f64], level: usize, f: &FilterPair) -> (Vec<f64>, Vec<f64>) {
    let n = v.len() as isize;
    let shift = 1isize << (level - 1);
    // Undecimated transform rescales the filters by sqrt(2) per level.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut w = vec![0.0; v.len()];
    let mut vn = vec![0.0; v.len()];
    for t in 0..n {
        let mut sw = 0.0;
        let mut sv = 0.0;
        for (l, (&g, &h)) in f.wavelet.iter().zip(&f.scaling).enumerate() {
            let idx = (t - shift * l as isize).rem_euclid(n) as usize;
            let x = v[idx];
            sw += g * x;
            sv += h * x;
        }
        w[t as usize] = sw * s;
        vn[t as usize] = sv * s;
    }
    (w, vn)
}

/// One circular synthesis step at `level`, inverting [`analysis_step`].
fn synthesis_step(w: &[f64], v: &[f64], level: usize, f: &FilterPair) -> Vec<f64> {
    let n = w.len() as isize;
    let shift = 1isize << (level - 1);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = vec![0.0; w.len()];
    for t in 0..n {
        let mut acc = 0.0;
        for (l, (&g, &h)) in f.wavelet.iter().zip(&f.scaling).enumerate() {
            let idx = (t + shift * l as isize).rem_euclid(n) as usize;
            acc += g * w[idx] + h * v[idx];
        }
        out[t as usize] = acc * s;
    }
    out
}

/// One decimated analysis step: `v` (even length) to half-length wavelet and
/// scaling coefficients.
fn dwt_analysis_step(v: &[f64], f: &FilterPair) -> (Vec<f64>, Vec<f64>) {
    let n = v.len() as isize;
    let half = (n / 2) as usize;
    let mut w = vec![0.0; half];
    let mut a = vec![0.0; half];
    for k in 0..half as isize {
        let mut sw = 0.0;
        let mut sa = 0.0;
        for (l, (&g, &h)) in f.wavelet.iter().zip(&f.scaling).enumerate() {
            let idx = (2 * k + 1 - l as isize).rem_euclid(n) as usize;
            let x = v[idx];
            sw += g * x;
            sa += h * x;
        }
        w[k as usize] = sw;
        a[k as usize] = sa;
    }
    (w, a)
}

/// Inverse of [`dwt_analysis_step`].
fn dwt_synthesis_step(w: &[f64], a: &[f64], f: &FilterPair) -> Vec<f64> {
    let half = w.len();
    let n = (2 * half) as isize;
    let mut out = vec![0.0; 2 * half];
    for k in 0..half as isize {
        for (l, (&g, &h)) in f.wavelet.iter().zip(&f.scaling).enumerate() {
            let idx = (2 * k + 1 - l as isize).rem_euclid(n) as usize;
            out[idx] += g * w[k as usize] + h * a[k as usize];
        }
    }
    out
}

/// Reflection extension of `values` whose doubled length is a multiple of
/// `2^LEVELS`, so the decimated pyramid divides evenly at every level.
fn reflect_extend(values: &[f64], align: usize) -> Vec<f64> {
    let n = values.len();
    let half = align / 2;
    let target = n.div_ceil(half) * half;
    let mut padded = Vec::with_capacity(2 * target);
    padded.extend_from_slice(values);
    // Mirror the tail about the last sample (needs pad < n, true for any
    // segment of at least `half` samples).
    for i in 0..(target - n) {
        padded.push(values[n - 2 - i]);
    }
    let mut ext = Vec::with_capacity(2 * target);
    ext.extend_from_slice(&padded);
    ext.extend(padded.iter().rev());
    ext
}

fn mra_dwt(values: &[f64]) -> [Vec<f64>; SCALE_COUNT] {
    let n = values.len();
    let ext = reflect_extend(values, 1 << LEVELS);
    let filters = db2_filters();

    let mut coeffs = Vec::with_capacity(LEVELS);
    let mut v = ext;
    for _ in 1..=LEVELS {
        let (w, a) = dwt_analysis_step(&v, &filters);
        coeffs.push(w);
        v = a;
    }

    let project = |top_level: usize, w_top: Option<&[f64]>, a_top: Option<&[f64]>| -> Vec<f64> {
        let len = coeffs[top_level - 1].len();
        let zero = vec![0.0; len];
        let mut cur = dwt_synthesis_step(
            w_top.unwrap_or(&zero),
            a_top.unwrap_or(&zero),
            &filters,
        );
        for level in (1..top_level).rev() {
            let zeros = vec![0.0; coeffs[level - 1].len()];
            cur = dwt_synthesis_step(&zeros, &cur, &filters);
        }
        cur.truncate(n);
        cur
    };

    std::array::from_fn(|scale| {
        if scale == 0 {
            project(LEVELS, None, Some(&v))
        } else {
            let level = SCALE_COUNT - scale;
            project(level, Some(&coeffs[level - 1]), None)
        }
    })
}

fn mra_modwt(values: &[f64]) -> [Vec<f64>; SCALE_COUNT] {
    let n = values.len();
    // Reflect: circular transform of [x, reverse(x)] mirrors both ends of x.
    let mut ext = Vec::with_capacity(2 * n);
    ext.extend_from_slice(values);
    ext.extend(values.iter().rev());

    let filters = db2_filters();
    let mut coeffs = Vec::with_capacity(LEVELS);
    let mut v = ext;
    for level in 1..=LEVELS {
        let (w, vn) = analysis_step(&v, level, &filters);
        coeffs.push(w);
        v = vn;
    }

    let zero = vec![0.0; 2 * n];
    let project = |top_level: usize, w_top: &[f64], v_top: &[f64]| -> Vec<f64> {
        let mut cur = synthesis_step(w_top, v_top, top_level, &filters);
        for level in (1..top_level).rev() {
            cur = synthesis_step(&zero, &cur, level, &filters);
        }
        cur.truncate(n);
        cur
    };

    std::array::from_fn(|scale| {
        if scale == 0 {
            project(LEVELS, &zero, &v)
        } else {
            let level = SCALE_COUNT - scale;
            project(level, &coeffs[level - 1], &zero)
        }
    })
}

/// Full multiresolution analysis of `values` with reflection boundaries.
///
/// Returns the seven components in scale order (smooth first), each the same
/// length as the input.
fn mra(values: &[f64], transform: Transform) -> [Vec<f64>; SCALE_COUNT] {
    match transform {
        Transform::Dwt => mra_dwt(values),
        Transform::Modwt => mra_modwt(values),
    }
}

/// Contiguous turnover segment of one stock.
#[derive(Debug, Clone)]
pub struct TurnoverSegment {
    pub start: Month,
    pub values: Vec<f64>,
}

/// Extracts a stock's turnover history as contiguous segments.
///
/// Single missing months are forward-filled; longer holes split the history.
pub fn turnover_segments(dataset: &PanelDataset, stock: StockId) -> Vec<TurnoverSegment> {
    let mut points: Vec<(Month, f64)> = Vec::new();
    for m in dataset.month_range().iter() {
        if let Some(obs) = dataset.get(stock, m) {
            if let Some(t) = obs.turnover {
                points.push((m, t));
            }
        }
    }

    let mut segments: Vec<TurnoverSegment> = Vec::new();
    for (month, value) in points {
        match segments.last_mut() {
            Some(seg) => {
                let next = seg.start + seg.values.len() as i32;
                let gap = month.months_since(next);
                if gap == 0 {
                    seg.values.push(value);
                    continue;
                }
                if gap == 1 {
                    let fill = *seg.values.last().unwrap();
                    seg.values.push(fill);
                    seg.values.push(value);
                    continue;
                }
                segments.push(TurnoverSegment { start: month, values: vec![value] });
            }
            None => segments.push(TurnoverSegment { start: month, values: vec![value] }),
        }
    }
    segments
}

/// Decomposes every long-enough turnover segment of one stock.
pub fn decompose_stock(
    dataset: &PanelDataset,
    stock: StockId,
    mode: Mode,
    transform: Transform,
) -> Result<Vec<ScaleDecomposition>> {
    turnover_segments(dataset, stock)
        .into_iter()
        .filter(|seg| seg.values.len() >= MIN_SERIES_LEN)
        .map(|seg| ScaleDecomposition::compute_with(stock, seg.start, &seg.values, mode, transform))
        .collect()
}

/// Writes a decomposition in the audit format:
/// `stock_id,month,scale0..scale6,reconstructed`.
pub fn write_decomposition<W: Write>(
    mut w: W,
    stock_name: &str,
    decomp: &ScaleDecomposition,
) -> Result<()> {
    let recon = decomp.reconstruct();
    for (i, m) in decomp.months().iter().enumerate() {
        write!(w, "{stock_name},{m}")?;
        for scale in 0..SCALE_COUNT {
            write!(w, ",{}", decomp.component(scale)?[i])?;
        }
        writeln!(w, ",{}", recon[i])?;
    }
    Ok(())
}

/// Writes the audit header row.
pub fn write_decomposition_header<W: Write>(mut w: W) -> Result<()> {
    write!(w, "stock_id,month")?;
    for scale in 0..SCALE_COUNT {
        write!(w, ",scale{scale}")?;
    }
    writeln!(w, ",reconstructed")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{load_panel, PanelSchema};

    fn rng_series(seed: u64, n: usize) -> Vec<f64> {
        // Small xorshift so unit tests do not depend on rand's stream.
        let mut state = seed.wrapping_mul(2685821657736338717).max(1);
        (0..n)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn filters_satisfy_admissibility() {
        let f = db2_filters();
        let sum: f64 = f.scaling.iter().sum();
        assert!((sum - 2.0_f64.sqrt()).abs() < 1e-12);
        let sumsq: f64 = f.scaling.iter().map(|h| h * h).sum();
        assert!((sumsq - 1.0).abs() < 1e-12);
        let wsumsq: f64 = f.wavelet.iter().map(|g| g * g).sum();
        assert!((wsumsq - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filters_even_shift_orthogonal() {
        let f = db2_filters();
        let dot = f.scaling[0] * f.scaling[2] + f.scaling[1] * f.scaling[3];
        assert!(dot.abs() < 1e-12);
    }

    #[test]
    fn wavelet_is_quadrature_mirror() {
        let f = db2_filters();
        for k in 0..4 {
            let expect = if k % 2 == 0 { f.scaling[3 - k] } else { -f.scaling[3 - k] };
            assert_eq!(f.wavelet[k], expect);
        }
    }

    #[test]
    fn constant_series_is_pure_smooth() {
        for transform in [Transform::Dwt, Transform::Modwt] {
            let series = vec![3.25; 128];
            let d = ScaleDecomposition::compute_with(
                StockId(0),
                Month(0),
                &series,
                Mode::FullSample,
                transform,
            )
            .unwrap();
            for &v in d.component(0).unwrap() {
                assert!((v - 3.25).abs() < 1e-8);
            }
            for scale in 1..SCALE_COUNT {
                for &v in d.component(scale).unwrap() {
                    assert!(v.abs() < 1e-8, "{transform:?} scale {scale} leaked {v}");
                }
            }
        }
    }

    #[test]
    fn perfect_reconstruction_on_random_series() {
        for transform in [Transform::Dwt, Transform::Modwt] {
            for (i, &n) in [64usize, 120, 317, 624].iter().enumerate() {
                let series = rng_series(7 + i as u64, n);
                let d = ScaleDecomposition::compute_with(
                    StockId(0),
                    Month(0),
                    &series,
                    Mode::FullSample,
                    transform,
                )
                .unwrap();
                let recon = d.reconstruct();
                let err = series
                    .iter()
                    .zip(&recon)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-8, "{transform:?} n={n} err={err}");
            }
        }
    }

    #[test]
    fn zero_series_reconstructs_to_zero() {
        let d = decompose(&vec![0.0; 128], Mode::FullSample).unwrap();
        assert!(d.reconstruct().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decomposition_is_linear() {
        let x = rng_series(11, 256);
        let y = rng_series(13, 256);
        let (a, b) = (2.5, -1.25);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let dx = decompose(&x, Mode::FullSample).unwrap();
        let dy = decompose(&y, Mode::FullSample).unwrap();
        let dc = decompose(&combo, Mode::FullSample).unwrap();
        for scale in 0..SCALE_COUNT {
            let cx = dx.component(scale).unwrap();
            let cy = dy.component(scale).unwrap();
            let cc = dc.component(scale).unwrap();
            for i in 0..combo.len() {
                assert!((cc[i] - (a * cx[i] + b * cy[i])).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn summed_decompositions_reconstruct_sum() {
        let x = rng_series(17, 200);
        let y = rng_series(19, 200);
        let dx = decompose(&x, Mode::FullSample).unwrap();
        let dy = decompose(&y, Mode::FullSample).unwrap();
        for i in 0..200 {
            let sum: f64 = (0..SCALE_COUNT)
                .map(|s| dx.component(s).unwrap()[i] + dy.component(s).unwrap()[i])
                .sum();
            assert!((sum - (x[i] + y[i])).abs() < 1e-8);
        }
    }

    #[test]
    fn too_short_series_rejected() {
        let series = vec![1.0; MIN_SERIES_LEN - 1];
        assert!(matches!(
            decompose(&series, Mode::FullSample),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let mut series = vec![1.0; 128];
        series[40] = f64::INFINITY;
        assert!(matches!(decompose(&series, Mode::FullSample), Err(Error::NonFinite(40))));
    }

    #[test]
    fn single_nan_gap_forward_filled() {
        let mut series = rng_series(23, 128);
        series[50] = f64::NAN;
        let d = decompose(&series, Mode::FullSample).unwrap();
        assert_eq!(d.len(), 128);
        // Filled with the previous value: reconstruction matches the fill.
        let recon = d.reconstruct();
        assert!((recon[50] - series[49]).abs() < 1e-8);
    }

    #[test]
    fn long_nan_gap_rejected() {
        let mut series = rng_series(29, 128);
        series[50] = f64::NAN;
        series[51] = f64::NAN;
        assert!(matches!(
            decompose(&series, Mode::FullSample),
            Err(Error::GapTooLong { index: 50, gap: 2 })
        ));
    }

    #[test]
    fn causal_mode_has_no_lookahead() {
        let mut series = rng_series(31, 160);
        let d1 = ScaleDecomposition::compute(StockId(0), Month(0), &series, Mode::Causal).unwrap();
        // Perturb everything after month 100.
        for v in series.iter_mut().skip(101) {
            *v += 5.0;
        }
        let d2 = ScaleDecomposition::compute(StockId(0), Month(0), &series, Mode::Causal).unwrap();
        for scale in 0..SCALE_COUNT {
            for m in (MIN_SERIES_LEN - 1)..=100 {
                let a = d1.value(scale, Month(m as i32)).unwrap();
                let b = d2.value(scale, Month(m as i32)).unwrap();
                assert_eq!(a.to_bits(), b.to_bits(), "scale {scale} month {m}");
            }
        }
    }

    #[test]
    fn causal_mode_is_additive() {
        let series = rng_series(37, 160);
        let d = ScaleDecomposition::compute(StockId(0), Month(0), &series, Mode::Causal).unwrap();
        assert_eq!(d.start, Month(MIN_SERIES_LEN as i32 - 1));
        let recon = d.reconstruct();
        for (i, r) in recon.iter().enumerate() {
            let orig = series[MIN_SERIES_LEN - 1 + i];
            assert!((r - orig).abs() < 1e-8);
        }
    }

    #[test]
    fn labels_match_reporting_convention() {
        assert_eq!(scale_cycle_label(6).unwrap().cycle_band, "0~2months");
        assert_eq!(scale_cycle_label(5).unwrap().cycle_band, "2~4months");
        assert_eq!(scale_cycle_label(4).unwrap().cycle_band, "4~8months");
        assert_eq!(scale_cycle_label(3).unwrap().cycle_band, "8~16months");
        assert_eq!(scale_cycle_label(2).unwrap().cycle_band, "16~32months");
        assert_eq!(scale_cycle_label(1).unwrap().cycle_band, "32~64months");
        assert_eq!(scale_cycle_label(0).unwrap().cycle_band, ">64months");
        assert!(scale_cycle_label(7).is_err());
    }

    #[test]
    fn scale_band_arithmetic() {
        assert_eq!(scale_period_band(6).unwrap(), (2.0, 4.0));
        assert_eq!(scale_period_band(4).unwrap(), (8.0, 16.0));
        assert_eq!(scale_period_band(1).unwrap(), (64.0, 128.0));
        assert_eq!(scale_for_period(3.0), Some(6));
        assert_eq!(scale_for_period(12.0), Some(4));
        assert_eq!(scale_for_period(48.0), Some(2));
        assert_eq!(scale_for_period(200.0), None);
    }

    fn component_energy(d: &ScaleDecomposition, scale: usize) -> f64 {
        d.component(scale).unwrap().iter().map(|v| v * v).sum()
    }

    #[test]
    fn sinusoid_energy_lands_in_its_band() {
        for transform in [Transform::Dwt, Transform::Modwt] {
            for period in [3.0, 6.0, 12.0, 24.0, 48.0] {
                let n = 512;
                let series: Vec<f64> = (0..n)
                    .map(|t| (2.0 * std::f64::consts::PI * t as f64 / period).sin())
                    .collect();
                let d = ScaleDecomposition::compute_with(
                    StockId(0),
                    Month(0),
                    &series,
                    Mode::FullSample,
                    transform,
                )
                .unwrap();
                let expected = scale_for_period(period).unwrap();
                let energies: Vec<f64> =
                    (0..SCALE_COUNT).map(|s| component_energy(&d, s)).collect();
                let max_detail = (1..SCALE_COUNT)
                    .max_by(|&a, &b| energies[a].total_cmp(&energies[b]))
                    .unwrap();
                assert_eq!(
                    max_detail, expected,
                    "{transform:?} period {period}: energies {energies:?}"
                );
                // The matched band holds the dominant share of total energy.
                let total: f64 = energies.iter().sum();
                assert!(
                    energies[expected] / total >= 0.6,
                    "{transform:?} period {period}: share {}",
                    energies[expected] / total
                );
            }
        }
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (&x, &y) in a.iter().zip(b) {
            num += (x - ma) * (y - mb);
            va += (x - ma) * (x - ma);
            vb += (y - mb) * (y - mb);
        }
        num / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn white_noise_details_nearly_uncorrelated() {
        // Averaged over seeds to keep the sample noise of the coarse scales
        // (few effective degrees of freedom) out of the check.
        let mut sums = vec![vec![0.0f64; SCALE_COUNT]; SCALE_COUNT];
        let reps = 8;
        for seed in 0..reps {
            let series = rng_series(43 + seed, 2048);
            let d = decompose(&series, Mode::FullSample).unwrap();
            for i in 1..SCALE_COUNT {
                for j in (i + 1)..SCALE_COUNT {
                    sums[i][j] += corr(d.component(i).unwrap(), d.component(j).unwrap());
                }
            }
        }
        for i in 1..SCALE_COUNT {
            for j in (i + 1)..SCALE_COUNT {
                let rho = sums[i][j] / reps as f64;
                assert!(rho.abs() < 0.15, "scales {i},{j} correlate at {rho}");
            }
        }
    }

    #[test]
    fn modwt_details_overlap_much_more() {
        // The undecimated variant's zero-phase components share transition
        // bands; this is why it is not the default.
        let mut acc = 0.0;
        let reps = 8;
        for seed in 0..reps {
            let series = rng_series(91 + seed, 2048);
            let d = ScaleDecomposition::compute_with(
                StockId(0),
                Month(0),
                &series,
                Mode::FullSample,
                Transform::Modwt,
            )
            .unwrap();
            acc += corr(d.component(5).unwrap(), d.component(6).unwrap());
        }
        assert!(acc / reps as f64 > 0.25);
    }

    #[test]
    fn segments_split_on_long_gaps_and_fill_short_ones() {
        let mut rows = String::from(
            "stock_id,month,ret,price,turnover,market_equity,book_to_market,exchange\n",
        );
        // Months 0..5 present, month 6 missing (1-gap), 7..9 present,
        // months 10-11 missing (2-gap), 12.. present.
        for m in [0, 1, 2, 3, 4, 5, 7, 8, 9, 12, 13] {
            rows.push_str(&format!("A,{},0.0,10.0,{},100.0,,NYSE\n", Month(m), 0.1 * m as f64));
        }
        let d = load_panel(rows.as_bytes(), &PanelSchema::default()).unwrap();
        let segs = turnover_segments(&d, d.stock_id("A").unwrap());
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].start, Month(0));
        assert_eq!(segs[0].values.len(), 10); // 0..=9 with month 6 filled
        assert!((segs[0].values[6] - 0.5).abs() < 1e-12); // forward fill of month 5
        assert_eq!(segs[1].start, Month(12));
        assert_eq!(segs[1].values.len(), 2);
    }
}
