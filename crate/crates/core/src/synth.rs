//! Synthetic panels with planted structure, and the independent oracles the
//! test suite checks the pipeline against.
//!
//! The generator plants sinusoidal turnover cycles inside chosen scale bands
//! and a cross-sectional return model on the pipeline's own signal
//! definitions, so every downstream estimate has a known target. Generation
//! is deterministic: each stock draws from its own stream derived from the
//! seed and the stock index, so output does not depend on scheduling order.
//!
//! [`brute_force_hac`] and [`spectral_band_energy`] are verification
//! oracles. They deliberately share no code with the modules they check:
//! the HAC oracle evaluates the sandwich by explicit double summation with
//! its own hand-rolled solver, and the band-energy oracle is a naive
//! one-sided discrete Fourier transform.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::month::Month;
use crate::panel::{Exchange, Factor, FactorTable, PanelDataset, PanelObservation, StockId};
use crate::signals::SignalKind;
use crate::wavelet::{
    scale_period_band, ScaleDecomposition, Transform, Mode, SCALE_COUNT,
};

/// One planted turnover cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedCycle {
    /// Scale whose period band the cycle's period is drawn from.
    pub scale: usize,
    /// Base amplitude; each carrying stock draws amplitude in
    /// `[0.5, 1.5] * amplitude`.
    pub amplitude: f64,
    /// Fraction of stocks carrying the cycle.
    #[serde(default = "one")]
    pub stock_fraction: f64,
}

fn one() -> f64 {
    1.0
}

/// Momentum coefficient that varies with a turnover signal's rank.
///
/// Adds `coefficient * z * momentum` to the return, where `z` is the
/// conditioner's cross-sectional rank that month mapped to `[-1, 1]`. A
/// negative coefficient plants reversal among high-conditioner stocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Interaction {
    pub momentum: SignalKind,
    pub conditioner: SignalKind,
    pub coefficient: f64,
}

/// Cross-sectional return model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReturnModel {
    /// Common monthly mean.
    pub base_mean: f64,
    /// Loading on the generated market factor.
    pub market_beta: f64,
    /// Idiosyncratic monthly volatility.
    pub noise_sigma: f64,
    /// Linear terms on the pipeline's signals at the return month.
    pub coefficients: Vec<(SignalKind, f64)>,
    /// Rank-interaction terms.
    pub interactions: Vec<Interaction>,
}

/// Synthetic panel configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_months: usize,
    pub seed: u64,
    pub cycles: Vec<PlantedCycle>,
    pub return_model: ReturnModel,
    /// Standard deviation of the white-noise turnover component.
    pub turnover_noise: f64,
    /// Per-stock baseline turnover drawn uniformly from this range.
    pub baseline_turnover: (f64, f64),
    /// Probability per stock-month of a sub-5-dollar price print.
    pub eligibility_churn: f64,
    /// Transform the planted signals are computed with.
    pub transform: Transform,
}

impl Default for SynthConfig {
    /// Desk-scale default: a full-length panel with cycles at every detail
    /// scale and a planted high-cyclic-turnover reversal in recent-month
    /// momentum, mirroring the qualitative structure the engine studies.
    fn default() -> Self {
        SynthConfig {
            n_stocks: 3000,
            n_months: 624,
            seed: 42,
            cycles: default_cycles(),
            return_model: ReturnModel {
                base_mean: 0.005,
                market_beta: 1.0,
                noise_sigma: 0.05,
                coefficients: vec![(SignalKind::R62, 0.012)],
                interactions: vec![
                    Interaction {
                        momentum: SignalKind::R62,
                        conditioner: SignalKind::TurnAve(4),
                        coefficient: -0.035,
                    },
                    Interaction {
                        momentum: SignalKind::R62,
                        conditioner: SignalKind::TurnAve(5),
                        coefficient: -0.035,
                    },
                ],
            },
            turnover_noise: 0.003,
            baseline_turnover: (0.06, 0.14),
            eligibility_churn: 0.002,
            transform: Transform::default(),
        }
    }
}

/// One cycle per detail scale; the finest scale is boosted because the
/// three-month average attenuates it roughly fourfold.
pub fn default_cycles() -> Vec<PlantedCycle> {
    (1..SCALE_COUNT)
        .map(|scale| PlantedCycle {
            scale,
            amplitude: if scale == 6 { 0.016 } else { 0.012 },
            stock_fraction: 1.0,
        })
        .collect()
}

impl SynthConfig {
    /// Planted pure cross-sectional model for premium-recovery tests:
    /// no common terms, linear coefficients only.
    pub fn fmb_recovery(seed: u64) -> Self {
        SynthConfig {
            n_stocks: 1000,
            n_months: 613,
            seed,
            return_model: ReturnModel {
                base_mean: 0.0,
                market_beta: 0.0,
                noise_sigma: 0.012,
                coefficients: vec![
                    (SignalKind::R62, 0.005),
                    (SignalKind::TurnAve(4), -0.01),
                ],
                interactions: Vec::new(),
            },
            ..SynthConfig::default()
        }
    }

    /// Zero-signal panel: returns are pure noise.
    pub fn null_model(seed: u64) -> Self {
        SynthConfig {
            n_stocks: 1000,
            n_months: 372,
            seed,
            return_model: ReturnModel {
                base_mean: 0.0,
                market_beta: 0.0,
                noise_sigma: 0.03,
                coefficients: Vec::new(),
                interactions: Vec::new(),
            },
            ..SynthConfig::default()
        }
    }

    /// Default config reseeded (the reversal structure is the default).
    pub fn planted_reversal(seed: u64) -> Self {
        SynthConfig { seed, ..SynthConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stocks < 50 {
            return Err(Error::InvalidConfig(format!(
                "need at least 50 stocks, got {}",
                self.n_stocks
            )));
        }
        if self.n_months < 128 {
            return Err(Error::InvalidConfig(format!(
                "need at least 128 months, got {}",
                self.n_months
            )));
        }
        for c in &self.cycles {
            if c.scale >= SCALE_COUNT {
                return Err(Error::InvalidScale(c.scale));
            }
            if c.amplitude < 0.0 {
                return Err(Error::InvalidConfig("negative cycle amplitude".into()));
            }
            if !(0.0..=1.0).contains(&c.stock_fraction) {
                return Err(Error::InvalidConfig("cycle stock_fraction outside [0,1]".into()));
            }
        }
        if self.return_model.noise_sigma < 0.0 || self.turnover_noise < 0.0 {
            return Err(Error::InvalidConfig("negative noise scale".into()));
        }
        if !(0.0..=1.0).contains(&self.eligibility_churn) {
            return Err(Error::InvalidConfig("eligibility_churn outside [0,1]".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream)))
}

const FACTOR_STREAM: u64 = u64::from_be_bytes(*b"factors\0");

/// Generates the factor table that pairs with [`generate_panel`] for the
/// same config (the market column is the series the return model loads on).
pub fn generate_factor_table(config: &SynthConfig) -> Result<FactorTable> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, FACTOR_STREAM);
    let mut table = FactorTable::new();
    for m in 0..config.n_months {
        let draw = |rng: &mut ChaCha8Rng, mean: f64, sd: f64| {
            mean + sd * rng.sample::<f64, _>(StandardNormal)
        };
        let values = [
            (Factor::Mkt, draw(&mut rng, 0.005, 0.045)),
            (Factor::Smb, draw(&mut rng, 0.001, 0.030)),
            (Factor::Hml, draw(&mut rng, 0.002, 0.030)),
            (Factor::Str, draw(&mut rng, 0.004, 0.032)),
            (Factor::Liq, draw(&mut rng, 0.003, 0.035)),
        ];
        table.insert(Month(m as i32), &values)?;
    }
    Ok(table)
}

struct StockDraws {
    baseline: f64,
    cycles: Vec<(f64, f64, f64)>, // period, phase, amplitude (0 if not carried)
    turnover_noise: Vec<f64>,
    return_noise: Vec<f64>,
    churn: Vec<bool>,
    price0: f64,
    shares: f64,
    book_to_market: f64,
}

fn draw_stock(config: &SynthConfig, index: usize) -> StockDraws {
    let mut rng = stream_rng(config.seed, index as u64);
    let m = config.n_months;
    let baseline = config.baseline_turnover.0
        + (config.baseline_turnover.1 - config.baseline_turnover.0) * rng.gen::<f64>();
    let cycles = config
        .cycles
        .iter()
        .map(|c| {
            let (lo, hi) = scale_period_band(c.scale).unwrap_or((128.0, 256.0));
            let hi = if hi.is_finite() { hi } else { 256.0 };
            let period = lo * 1.15 + (hi * 0.85 - lo * 1.15) * rng.gen::<f64>();
            let phase = rng.gen::<f64>() * std::f64::consts::TAU;
            let carried = rng.gen::<f64>() < c.stock_fraction;
            let amplitude = if carried { c.amplitude * (0.5 + rng.gen::<f64>()) } else { 0.0 };
            (period, phase, amplitude)
        })
        .collect();
    let turnover_noise: Vec<f64> =
        (0..m).map(|_| config.turnover_noise * rng.sample::<f64, _>(StandardNormal)).collect();
    let return_noise: Vec<f64> = (0..m)
        .map(|_| config.return_model.noise_sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let churn: Vec<bool> = (0..m).map(|_| rng.gen::<f64>() < config.eligibility_churn).collect();
    let price0 = 15.0 * (0.5 * rng.sample::<f64, _>(StandardNormal)).exp();
    let shares = 1.0e6 * (rng.sample::<f64, _>(StandardNormal)).exp();
    let book_to_market = 0.5 * (0.4 * rng.sample::<f64, _>(StandardNormal)).exp();
    StockDraws {
        baseline,
        cycles,
        turnover_noise,
        return_noise,
        churn,
        price0,
        shares,
        book_to_market,
    }
}

/// Months of history before signal terms switch on (enough for `r_{12,7}`).
const SIGNAL_BURN_IN: usize = 13;

fn compound(returns: &[f64], t: usize, m: usize, n: usize) -> f64 {
    let first = t - m;
    let last = t - n.max(1);
    let mut acc = 1.0;
    for r in &returns[first..=last] {
        acc *= 1.0 + r;
    }
    acc - 1.0
}

/// Generates a stock-month panel per the config.
///
/// Turnover carries the planted cycles; returns follow the cross-sectional
/// model applied to the pipeline's signal definitions at the return month.
/// Two runs with the same config produce bit-identical panels.
pub fn generate_panel(config: &SynthConfig) -> Result<PanelDataset> {
    config.validate()?;
    let n = config.n_stocks;
    let m = config.n_months;
    let factors = generate_factor_table(config)?;
    let mkt: Vec<f64> =
        (0..m).map(|t| factors.get(Factor::Mkt, Month(t as i32)).unwrap()).collect();

    // Per-stock draws and turnover paths.
    let draws: Vec<StockDraws> = (0..n).map(|i| draw_stock(config, i)).collect();
    let turnover: Vec<Vec<f64>> = draws
        .iter()
        .map(|d| {
            (0..m)
                .map(|t| {
                    let tf = t as f64;
                    let mut v = d.baseline + d.turnover_noise[t];
                    for &(period, phase, amp) in &d.cycles {
                        v += amp * (std::f64::consts::TAU * tf / period + phase).sin();
                    }
                    v.max(0.0)
                })
                .collect()
        })
        .collect();

    // Planted turnover signals come from the same decomposition the
    // pipeline runs.
    let model = &config.return_model;
    let needs_turnover_signals = model
        .coefficients
        .iter()
        .map(|(k, _)| *k)
        .chain(model.interactions.iter().flat_map(|i| [i.momentum, i.conditioner]))
        .any(|k| matches!(k, SignalKind::TurnAve(_)));
    let decomps: Vec<Option<ScaleDecomposition>> = if needs_turnover_signals {
        turnover
            .iter()
            .enumerate()
            .map(|(i, series)| {
                ScaleDecomposition::compute_with(
                    StockId(i as u32),
                    Month(0),
                    series,
                    Mode::FullSample,
                    config.transform,
                )
                .ok()
            })
            .collect()
    } else {
        vec![None; n]
    };

    let signal_value = |kind: SignalKind, stock: usize, t: usize, rets: &[Vec<f64>]| -> Result<f64> {
        match kind {
            SignalKind::R62 => Ok(compound(&rets[stock], t, 6, 2)),
            SignalKind::R127 => Ok(compound(&rets[stock], t, 12, 7)),
            SignalKind::R10 => Ok(rets[stock][t - 1]),
            SignalKind::TurnAve(scale) => {
                let d = decomps[stock]
                    .as_ref()
                    .ok_or_else(|| Error::Numerical("decomposition missing".into()))?;
                let c = d.component(scale)?;
                Ok((c[t - 3] + c[t - 2] + c[t - 1]) / 3.0)
            }
            SignalKind::TurnAll => {
                let s = &turnover[stock];
                Ok((s[t - 3] + s[t - 2] + s[t - 1]) / 3.0)
            }
            other => Err(Error::InvalidConfig(format!(
                "signal {other} not supported in the planted return model"
            ))),
        }
    };

    // Returns, month by month (signals at t come from months before t).
    let mut rets: Vec<Vec<f64>> = vec![vec![0.0; m]; n];
    for t in 0..m {
        // Rank maps for interaction conditioners.
        let mut ranks: Vec<Vec<f64>> = Vec::new();
        if t >= SIGNAL_BURN_IN {
            for inter in &model.interactions {
                let mut vals: Vec<(usize, f64)> = (0..n)
                    .map(|i| Ok((i, signal_value(inter.conditioner, i, t, &rets)?)))
                    .collect::<Result<_>>()?;
                vals.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                let mut z = vec![0.0; n];
                for (rank, &(i, _)) in vals.iter().enumerate() {
                    z[i] = if n > 1 { 2.0 * rank as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
                }
                ranks.push(z);
            }
        }
        for i in 0..n {
            let mut r = model.base_mean + model.market_beta * mkt[t] + draws[i].return_noise[t];
            if t >= SIGNAL_BURN_IN {
                for &(kind, c) in &model.coefficients {
                    r += c * signal_value(kind, i, t, &rets)?;
                }
                for (inter, z) in model.interactions.iter().zip(&ranks) {
                    r += inter.coefficient * z[i] * signal_value(inter.momentum, i, t, &rets)?;
                }
            }
            rets[i][t] = r.max(-0.95);
        }
    }

    // Assemble observations with price paths.
    let mut rows = Vec::with_capacity(n * m);
    for i in 0..n {
        let d = &draws[i];
        let mut price = d.price0;
        for t in 0..m {
            price = (price * (1.0 + rets[i][t])).max(0.25);
            let recorded_price = if d.churn[t] { 2.5 } else { price };
            rows.push((
                format!("SYN{i:05}"),
                PanelObservation {
                    stock: StockId(0),
                    month: Month(t as i32),
                    ret: rets[i][t],
                    price: recorded_price,
                    turnover: Some(turnover[i][t]),
                    market_equity: Some(recorded_price * d.shares),
                    book_to_market: Some(d.book_to_market),
                    exchange: Exchange::Nyse,
                },
            ));
        }
    }
    PanelDataset::from_rows(rows)
}

/// Direct-evaluation Newey-West covariance oracle.
///
/// Takes explicit design columns (including any constant), fits OLS with a
/// hand-rolled Gauss-Jordan solve, and evaluates
/// `(X'X)^-1 [sum_s sum_t w(|s-t|) u_s u_t x_s x_t'] (X'X)^-1` by explicit
/// double summation over all observation pairs with Bartlett weights
/// `w(d) = max(0, 1 - d/(L+1))`.
pub fn brute_force_hac(y: &[f64], design: &[Vec<f64>], lag: usize) -> Result<Vec<Vec<f64>>> {
    let n = y.len();
    let k = design.len();
    if k == 0 || n == 0 {
        return Err(Error::InvalidConfig("empty design".into()));
    }
    for col in design {
        if col.len() != n {
            return Err(Error::LengthMismatch { y_len: n, x_len: col.len() });
        }
    }
    if n < k + 1 {
        return Err(Error::TooFewObservations { n, k });
    }

    // X'X and X'y.
    let mut xtx = vec![vec![0.0f64; k]; k];
    let mut xty = vec![0.0f64; k];
    for t in 0..n {
        for a in 0..k {
            xty[a] += design[a][t] * y[t];
            for b in 0..k {
                xtx[a][b] += design[a][t] * design[b][t];
            }
        }
    }
    let xtx_inv = invert(&xtx).ok_or(Error::RankDeficient)?;
    let beta: Vec<f64> =
        (0..k).map(|a| (0..k).map(|b| xtx_inv[a][b] * xty[b]).sum()).collect();
    let resid: Vec<f64> = (0..n)
        .map(|t| y[t] - (0..k).map(|a| beta[a] * design[a][t]).sum::<f64>())
        .collect();

    // Double sum over all pairs with Bartlett weights.
    let mut meat = vec![vec![0.0f64; k]; k];
    for s in 0..n {
        for t in 0..n {
            let d = s.abs_diff(t);
            if d > lag {
                continue;
            }
            let w = 1.0 - d as f64 / (lag as f64 + 1.0);
            let uu = resid[s] * resid[t];
            for a in 0..k {
                for b in 0..k {
                    meat[a][b] += w * uu * design[a][s] * design[b][t];
                }
            }
        }
    }

    let mut cov = vec![vec![0.0f64; k]; k];
    for a in 0..k {
        for b in 0..k {
            let mut acc = 0.0;
            for p in 0..k {
                for q in 0..k {
                    acc += xtx_inv[a][p] * meat[p][q] * xtx_inv[q][b];
                }
            }
            cov[a][b] = acc;
        }
    }
    Ok(cov)
}

fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let k = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..k {
        let pivot = (col..k).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col];
        for j in 0..k {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..k {
            if i != col {
                let f = a[i][col];
                for j in 0..k {
                    a[i][j] -= f * a[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

/// Fraction of one-sided discrete Fourier energy with period inside
/// `(period_lo, period_hi]` months, the zero frequency excluded.
pub fn spectral_band_energy(series: &[f64], period_lo: f64, period_hi: f64) -> Result<f64> {
    let n = series.len();
    if n < 64 {
        return Err(Error::SeriesTooShort { len: n, min: 64 });
    }
    let mut total = 0.0;
    let mut in_band = 0.0;
    for k in 1..=n / 2 {
        let (mut re, mut im) = (0.0f64, 0.0f64);
        let w = std::f64::consts::TAU * k as f64 / n as f64;
        for (t, &x) in series.iter().enumerate() {
            let a = w * t as f64;
            re += x * a.cos();
            im -= x * a.sin();
        }
        // Fold the conjugate bin; the Nyquist bin (even n) has no mirror.
        let fold = if 2 * k == n { 1.0 } else { 2.0 };
        let power = fold * (re * re + im * im);
        total += power;
        let period = n as f64 / k as f64;
        if period > period_lo && period <= period_hi {
            in_band += power;
        }
    }
    let raw_energy: f64 = series.iter().map(|x| x * x).sum();
    if total <= raw_energy.max(1e-300) * 1e-18 {
        return Err(Error::Numerical("series has no nonzero-frequency energy".into()));
    }
    Ok(in_band / total)
}
