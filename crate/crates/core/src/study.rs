//! Configuration-driven study runner and table emitters.
//!
//! [`run_study`] executes the full battery in stage order: load or generate
//! the panel, decompose turnover, build signals and the correlation report,
//! run the univariate and bivariate sorts, then the spanning, cross-sectional
//! and attribution regressions. Each table is written as delimited text in
//! the layout of the corresponding report table, and a manifest records the
//! config hash, row counts, lag choices, and the stage execution log.
//! Unselected stages are skipped without computation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::econ::{
    factor_alpha, fama_macbeth_with, mean_return_test, spanning_regression, FmbResult, LagPolicy,
    MeanTest, RegressionResult,
};
use crate::error::{Error, Result};
use crate::month::{Month, MonthRange};
use crate::panel::{
    load_factor_table_path, load_panel_path, Factor, FactorTable, PanelDataset, PanelSchema,
};
use crate::signals::{signal_correlations, CorrelationMatrix, SignalKind, SignalPanel};
use crate::sorts::{diff_series, run_sort, PortfolioSeries, SortOutput, SortSpec, Weighting};
use crate::synth::{generate_factor_table, generate_panel, SynthConfig};
use crate::wavelet::{
    decompose_stock, scale_cycle_label, Mode, ScaleDecomposition, Transform, SCALE_COUNT,
};

/// Input selection: delimited files or a synthetic panel.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InputSection {
    pub panel: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub schema: Option<PanelSchema>,
}

/// Lag selection as written in config files: `"auto"` or an integer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LagSpec {
    Fixed(usize),
    Named(String),
}

impl Default for LagSpec {
    fn default() -> Self {
        LagSpec::Named("auto".into())
    }
}

impl LagSpec {
    pub fn to_policy(&self) -> Result<LagPolicy> {
        match self {
            LagSpec::Fixed(l) => Ok(LagPolicy::Fixed(*l)),
            LagSpec::Named(s) if s.eq_ignore_ascii_case("auto") => Ok(LagPolicy::Auto),
            LagSpec::Named(s) => Err(Error::InvalidConfig(format!("bad lag spec {s:?}"))),
        }
    }
}

/// Study settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySection {
    /// Formation month range as `[first, last]`; defaults to the feasible
    /// span of the panel.
    pub months: Option<[String; 2]>,
    /// Tables to produce (1 through 8).
    pub tables: Vec<u8>,
    pub wavelet_mode: Mode,
    pub transform: Transform,
    pub lag: LagSpec,
    pub output: PathBuf,
    pub weighting: Weighting,
    pub breakpoints: crate::sorts::BreakpointUniverse,
    pub dependence: crate::sorts::Dependence,
    /// Optional cross-sectional winsorization fraction for the
    /// Fama-MacBeth regressors (robustness runs).
    pub winsorize: Option<f64>,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection {
            months: None,
            tables: (1..=8).collect(),
            wavelet_mode: Mode::FullSample,
            transform: Transform::default(),
            lag: LagSpec::default(),
            output: PathBuf::from("study_out"),
            weighting: Weighting::Value,
            breakpoints: Default::default(),
            dependence: Default::default(),
            winsorize: None,
        }
    }
}

/// Full study configuration (the TOML file's root).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub input: InputSection,
    pub study: StudySection,
}

impl StudyConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config parse: {e}")))
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

/// Scales whose bivariate sorts go in the main Table 4 file; the remaining
/// scales go to the appendix directory.
pub const HEADLINE_SCALES: [usize; 2] = [4, 5];

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    Executed,
    Skipped,
}

/// What a finished (or failed) run produced.
#[derive(Debug)]
pub struct StudyReport {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub stages: Vec<(String, StageStatus)>,
    pub config_hash: u64,
}

struct UnivariateRow {
    label: String,
    means: Vec<MeanTest>,
    alphas: Vec<RegressionResult>,
}

struct Table4Block {
    scale: usize,
    /// grid[t][q] mean tests for the 10x5 cells, plus the per-row diff at
    /// index 5 and the diff row at index 10.
    rr: Vec<Vec<MeanTest>>,
    ir: Vec<Vec<MeanTest>>,
}

/// Stage outputs the table emitters draw from.
#[derive(Default)]
pub struct StudyResults {
    correlation: Option<CorrelationMatrix>,
    table1: Option<Vec<UnivariateRow>>,
    table4: Vec<Table4Block>,
    table5: Option<(Vec<RegressionResult>, Vec<RegressionResult>)>,
    table6: Option<Vec<FmbResult>>,
    table7: Option<Vec<(String, RegressionResult)>>,
    table8: Option<Vec<(String, RegressionResult)>>,
}

struct StudyContext {
    dataset: PanelDataset,
    factors: Option<FactorTable>,
    formation: MonthRange,
    lag: LagPolicy,
    seed: Option<u64>,
}

/// Runs the configured battery and writes the report bundle.
///
/// Stage preconditions are validated before any computation; failures abort
/// with a stage-tagged diagnostic, preserving prior outputs next to a
/// `FAILED` marker file.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    let mut stages: Vec<(String, StageStatus)> = Vec::new();
    let config_hash = fnv1a(config.to_toml_string().as_bytes());
    let out = config.study.output.clone();

    match run_study_inner(config, &mut stages, config_hash, &out) {
        Ok(report) => Ok(report),
        Err(e) => {
            // Preserve partial outputs with a FAILED marker.
            let stage = stages
                .iter()
                .rev()
                .find(|(_, s)| *s == StageStatus::Executed)
                .map(|(n, _)| n.clone())
                .unwrap_or_else(|| "validate".into());
            if fs::create_dir_all(&out).is_ok() {
                let _ = fs::write(
                    out.join("FAILED"),
                    format!("failed_stage = {stage}\nerror = {e}\n"),
                );
            }
            Err(e.in_stage(Box::leak(stage.into_boxed_str())))
        }
    }
}

fn run_study_inner(
    config: &StudyConfig,
    stages: &mut Vec<(String, StageStatus)>,
    config_hash: u64,
    out: &Path,
) -> Result<StudyReport> {
    // --- validate -----------------------------------------------------
    stages.push(("validate".into(), StageStatus::Executed));
    let tables = &config.study.tables;
    if tables.is_empty() || tables.iter().any(|t| !(1..=8).contains(t)) {
        return Err(Error::InvalidConfig("tables must be a nonempty subset of 1..=8".into()));
    }
    let lag = config.study.lag.to_policy()?;
    let has = |t: u8| tables.contains(&t);
    if config.input.panel.is_none() && config.input.synth.is_none() {
        return Err(Error::InvalidConfig("no panel input: give input.panel or input.synth".into()));
    }
    if let Some(p) = &config.input.panel {
        if !p.exists() {
            return Err(Error::InvalidConfig(format!("panel file {} missing", p.display())));
        }
    }
    if let Some(p) = &config.input.factors {
        if !p.exists() {
            return Err(Error::InvalidConfig(format!("factor file {} missing", p.display())));
        }
    }
    if let Some(s) = &config.input.synth {
        s.validate()?;
    }

    // --- load / generate ----------------------------------------------
    stages.push(("load".into(), StageStatus::Executed));
    let (dataset, mut factors) = match (&config.input.panel, &config.input.synth) {
        (Some(path), _) => {
            let schema = config.input.schema.clone().unwrap_or_default();
            (load_panel_path(path, &schema)?, None)
        }
        (None, Some(synth)) => (generate_panel(synth)?, Some(generate_factor_table(synth)?)),
        _ => unreachable!("validated above"),
    };
    if let Some(path) = &config.input.factors {
        factors = Some(load_factor_table_path(path)?);
    }

    // Factor prerequisites, checked before any computation.
    let needed_factors: Vec<Factor> = {
        let mut f = Vec::new();
        if has(1) || has(5) || has(8) {
            f.extend([Factor::Mkt, Factor::Smb, Factor::Hml]);
        }
        if has(7) {
            f.extend([Factor::Mkt, Factor::Str]);
        }
        if has(8) {
            f.push(Factor::Liq);
        }
        f
    };
    if !needed_factors.is_empty() {
        stages.push(("validate_factors".into(), StageStatus::Executed));
        let table = factors
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("selected tables need a factor file".into()))?;
        let probe: Vec<Month> = table.months().collect();
        for f in &needed_factors {
            if !probe.iter().any(|&m| table.get(*f, m).is_ok()) {
                return Err(Error::InvalidConfig(format!(
                    "factor {f} required by the selected tables is absent"
                )));
            }
        }
    }

    // Formation month range.
    let range = dataset.month_range();
    if dataset.is_empty() {
        return Err(Error::Data("empty panel".into()));
    }
    let feasible = MonthRange::new(range.first + 13, range.last - 1);
    if feasible.is_empty() {
        return Err(Error::Data("panel too short for any formation month".into()));
    }
    let formation = match &config.study.months {
        Some([a, b]) => {
            let first: Month = a.parse()?;
            let last: Month = b.parse()?;
            let clamped = MonthRange::new(first.max(feasible.first), last.min(feasible.last));
            if clamped.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "study months {a}..{b} leave no feasible formation months"
                )));
            }
            clamped
        }
        None => feasible,
    };

    let ctx = StudyContext {
        seed: config.input.synth.as_ref().map(|s| s.seed),
        dataset,
        factors,
        formation,
        lag,
    };

    fs::create_dir_all(out)?;
    let _ = fs::remove_file(out.join("FAILED"));
    let mut files: Vec<PathBuf> = Vec::new();
    let mut results = StudyResults::default();

    // --- decompose -----------------------------------------------------
    let needs_wavelet = has(3) || has(4) || has(5) || has(6) || has(7) || has(8);
    let decomps: HashMap<crate::panel::StockId, Vec<ScaleDecomposition>> = if needs_wavelet {
        stages.push(("decompose".into(), StageStatus::Executed));
        let mut map = HashMap::new();
        for stock in ctx.dataset.stocks() {
            let ds = decompose_stock(
                &ctx.dataset,
                stock,
                config.study.wavelet_mode,
                config.study.transform,
            )
            .map_err(|e| e.in_stage("decompose"))?;
            if !ds.is_empty() {
                map.insert(stock, ds);
            }
        }
        map
    } else {
        stages.push(("decompose".into(), StageStatus::Skipped));
        HashMap::new()
    };

    // --- signals ---------------------------------------------------------
    stages.push(("signals".into(), StageStatus::Executed));
    let panel = SignalPanel::build(&ctx.dataset, &decomps, ctx.formation);

    if has(3) {
        let mut kinds: Vec<SignalKind> = (0..SCALE_COUNT).map(SignalKind::TurnAve).collect();
        kinds.push(SignalKind::R62);
        kinds.push(SignalKind::R127);
        results.correlation =
            Some(signal_correlations(&panel, &kinds).map_err(|e| e.in_stage("signals"))?);
    }

    // --- sorts -----------------------------------------------------------
    // Which bivariate scales are needed by the selected tables.
    let mut rr_scales: Vec<usize> = Vec::new();
    let mut ir_scales: Vec<usize> = Vec::new();
    if has(4) {
        rr_scales.extend(0..SCALE_COUNT);
        ir_scales.extend(0..SCALE_COUNT);
    }
    if has(5) || has(7) || has(8) {
        rr_scales.extend(HEADLINE_SCALES);
    }
    if has(5) {
        ir_scales.extend([3, 4]);
    }
    rr_scales.sort_unstable();
    rr_scales.dedup();
    ir_scales.sort_unstable();
    ir_scales.dedup();

    let sort_months = MonthRange::new(ctx.formation.first, ctx.formation.last);
    let table1_needed = has(1) || has(5);
    let mut mom62: Option<PortfolioSeries> = None;
    let mut mom127: Option<PortfolioSeries> = None;

    if table1_needed {
        stages.push(("table1_sorts".into(), StageStatus::Executed));
        let mut rows = Vec::new();
        for (kind, label) in [(SignalKind::R62, "r_6_2"), (SignalKind::R127, "r_12_7")] {
            let mut spec = SortSpec::univariate(kind, 10);
            spec.weighting = config.study.weighting;
            spec.breakpoints = config.study.breakpoints;
            let sorted = run_sort(&ctx.dataset, &panel, &spec, sort_months)
                .map_err(|e| e.in_stage("table1_sorts"))?;
            let diff = sorted.row_diff(0).map_err(|e| e.in_stage("table1_sorts"))?;
            if kind == SignalKind::R62 {
                mom62 = Some(diff.clone());
            } else {
                mom127 = Some(diff.clone());
            }
            if has(1) {
                let mut means = Vec::new();
                let mut alphas = Vec::new();
                let factors = ctx.factors.as_ref().expect("validated");
                for g in 0..10 {
                    means.push(stat_mean(sorted.cell(g, 0), ctx.lag)?);
                    alphas.push(stat_alpha(sorted.cell(g, 0), factors, ctx.lag)?);
                }
                means.push(stat_mean(&diff, ctx.lag)?);
                alphas.push(stat_alpha(&diff, factors, ctx.lag)?);
                rows.push(UnivariateRow { label: label.to_string(), means, alphas });
            }
        }
        if has(1) {
            results.table1 = Some(rows);
        }
    } else {
        stages.push(("table1_sorts".into(), StageStatus::Skipped));
    }

    let mut reversal: HashMap<usize, PortfolioSeries> = HashMap::new();
    let mut control: HashMap<usize, PortfolioSeries> = HashMap::new();
    if !rr_scales.is_empty() || !ir_scales.is_empty() {
        stages.push(("table4_sorts".into(), StageStatus::Executed));
        let mut blocks: HashMap<usize, (Option<SortOutput>, Option<SortOutput>)> = HashMap::new();
        for &scale in &rr_scales {
            let mut spec = SortSpec::bivariate(SignalKind::TurnAve(scale), 10, SignalKind::R62, 5);
            spec.weighting = config.study.weighting;
            spec.breakpoints = config.study.breakpoints;
            spec.dependence = config.study.dependence;
            let sorted = run_sort(&ctx.dataset, &panel, &spec, sort_months)
                .map_err(|e| e.in_stage("table4_sorts"))?;
            let t10_diff = sorted.col_diff(9).map_err(|e| e.in_stage("table4_sorts"))?;
            reversal.insert(scale, rename(t10_diff, format!("reversal_cycle{scale}")));
            blocks.entry(scale).or_default().0 = Some(sorted);
        }
        for &scale in &ir_scales {
            let mut spec = SortSpec::bivariate(SignalKind::TurnAve(scale), 10, SignalKind::R127, 5);
            spec.weighting = config.study.weighting;
            spec.breakpoints = config.study.breakpoints;
            spec.dependence = config.study.dependence;
            let sorted = run_sort(&ctx.dataset, &panel, &spec, sort_months)
                .map_err(|e| e.in_stage("table4_sorts"))?;
            let t10_diff = sorted.col_diff(9).map_err(|e| e.in_stage("table4_sorts"))?;
            control.insert(scale, rename(t10_diff, format!("control_cycle{scale}")));
            blocks.entry(scale).or_default().1 = Some(sorted);
        }
        if has(4) {
            for scale in 0..SCALE_COUNT {
                let (rr, ir) = blocks.get(&scale).expect("all scales sorted for table 4");
                let rr = rr.as_ref().expect("rr sorted");
                let ir = ir.as_ref().expect("ir sorted");
                results.table4.push(Table4Block {
                    scale,
                    rr: grid_stats(rr, ctx.lag)?,
                    ir: grid_stats(ir, ctx.lag)?,
                });
            }
        }
    } else {
        stages.push(("table4_sorts".into(), StageStatus::Skipped));
    }

    // --- table 5: spanning ------------------------------------------------
    if has(5) {
        stages.push(("table5_spanning".into(), StageStatus::Executed));
        let factors = ctx.factors.as_ref().expect("validated");
        let mom62 = mom62.as_ref().expect("table1 sorts ran");
        let mom127 = mom127.as_ref().expect("table1 sorts ran");
        let rev4 = &reversal[&4];
        let rev5 = &reversal[&5];
        let ctl4 = &control[&4];
        let ctl3 = &control[&3];
        let span = |dep: &PortfolioSeries, xs: &[&PortfolioSeries], ff3: bool| {
            spanning_regression(dep, xs, ff3, factors, ctx.lag)
                .map_err(|e| e.in_stage("table5_spanning"))
        };
        let panel_a = vec![
            span(mom62, &[rev4], false)?,
            span(mom62, &[rev4], true)?,
            span(mom62, &[rev5], false)?,
            span(mom62, &[rev5], true)?,
            span(mom62, &[rev4, rev5], false)?,
            span(mom62, &[rev4, rev5], true)?,
        ];
        let panel_b = vec![
            span(mom127, &[ctl4], false)?,
            span(mom127, &[ctl4], true)?,
            span(mom127, &[ctl3], false)?,
            span(mom127, &[ctl3], true)?,
            span(mom127, &[ctl4, ctl3], false)?,
            span(mom127, &[ctl4, ctl3], true)?,
        ];
        results.table5 = Some((panel_a, panel_b));
    } else {
        stages.push(("table5_spanning".into(), StageStatus::Skipped));
    }

    // --- table 6: cross-sectional regressions ------------------------------
    if has(6) {
        stages.push(("table6_fmb".into(), StageStatus::Executed));
        let cyclic = [SignalKind::TurnAve(3), SignalKind::TurnAve(4), SignalKind::TurnAve(5)];
        let controls = [SignalKind::R10, SignalKind::LogMe, SignalKind::LogBm];
        let base = [SignalKind::R62, SignalKind::R127];
        let model =
            |extra: &[SignalKind], intercept: bool| -> Result<FmbResult> {
                let regs: Vec<SignalKind> =
                    base.iter().chain(extra).chain(&controls).copied().collect();
                fama_macbeth_with(
                    &ctx.dataset,
                    &panel,
                    &regs,
                    intercept,
                    ctx.formation,
                    ctx.lag,
                    config.study.winsorize,
                )
                .map_err(|e| e.in_stage("table6_fmb"))
            };
        results.table6 = Some(vec![
            model(&cyclic, false)?,
            model(&[SignalKind::TurnAll], false)?,
            model(&[], false)?,
            model(&cyclic, true)?,
            model(&[SignalKind::TurnAll], true)?,
            model(&[], true)?,
        ]);
    } else {
        stages.push(("table6_fmb".into(), StageStatus::Skipped));
    }

    // --- tables 7/8: attribution -------------------------------------------
    if has(7) {
        stages.push(("table7_attribution".into(), StageStatus::Executed));
        let factors = ctx.factors.as_ref().expect("validated");
        let mut models = Vec::new();
        for scale in HEADLINE_SCALES {
            let dep = &reversal[&scale];
            for set in [vec![Factor::Str], vec![Factor::Mkt, Factor::Str]] {
                let r = factor_alpha(dep, factors, &set, ctx.lag)
                    .map_err(|e| e.in_stage("table7_attribution"))?;
                models.push((dep.label.clone(), r));
            }
        }
        results.table7 = Some(models);
    } else {
        stages.push(("table7_attribution".into(), StageStatus::Skipped));
    }
    if has(8) {
        stages.push(("table8_attribution".into(), StageStatus::Executed));
        let factors = ctx.factors.as_ref().expect("validated");
        let mut models = Vec::new();
        for scale in HEADLINE_SCALES {
            let dep = &reversal[&scale];
            for set in [
                vec![Factor::Mkt],
                vec![Factor::Mkt, Factor::Smb, Factor::Hml],
                vec![Factor::Mkt, Factor::Smb, Factor::Hml, Factor::Liq],
            ] {
                let r = factor_alpha(dep, factors, &set, ctx.lag)
                    .map_err(|e| e.in_stage("table8_attribution"))?;
                models.push((dep.label.clone(), r));
            }
        }
        results.table8 = Some(models);
    } else {
        stages.push(("table8_attribution".into(), StageStatus::Skipped));
    }

    // --- emit ---------------------------------------------------------------
    stages.push(("emit".into(), StageStatus::Executed));
    for &t in tables {
        if t == 4 {
            // Headline scales in the main file, the rest in appendix/.
            let text = emit_table(&results, 4)?;
            let path = out.join("table4.txt");
            fs::write(&path, text)?;
            files.push(path);
            let appendix = out.join("appendix");
            fs::create_dir_all(&appendix)?;
            for block in &results.table4 {
                if HEADLINE_SCALES.contains(&block.scale) {
                    continue;
                }
                let path = appendix.join(format!("table4_scale{}.txt", block.scale));
                fs::write(&path, emit_table4_block(block))?;
                files.push(path);
            }
            continue;
        }
        let text = emit_table(&results, t)?;
        let path = out.join(format!("table{t}.txt"));
        fs::write(&path, text)?;
        files.push(path);
    }

    // --- manifest -------------------------------------------------------------
    let mut m = String::new();
    let _ = writeln!(m, "config_hash = {config_hash:016x}");
    let _ = writeln!(m, "timestamp = {}", timestamp());
    if let Some(seed) = ctx.seed {
        let _ = writeln!(m, "seed = {seed}");
    }
    let _ = writeln!(m, "formation_months = {}", ctx.formation);
    let _ = writeln!(m, "panel_rows = {}", ctx.dataset.len());
    let _ = writeln!(m, "panel_stocks = {}", ctx.dataset.stock_count());
    let _ = writeln!(m, "rows_read = {}", ctx.dataset.load_report().rows_read);
    let _ = writeln!(m, "rows_kept = {}", ctx.dataset.load_report().rows_kept);
    let lag_desc = match lag {
        LagPolicy::Auto => format!("auto({})", lag.lag_for(ctx.formation.len())),
        LagPolicy::Fixed(l) => format!("fixed({l})"),
    };
    let _ = writeln!(m, "lag_policy = {lag_desc}");
    for (stage, status) in stages.iter() {
        let s = match status {
            StageStatus::Executed => "executed",
            StageStatus::Skipped => "skipped",
        };
        let _ = writeln!(m, "stage[{stage}] = {s}");
    }
    for f in &files {
        let _ = writeln!(
            m,
            "file[{}] = config {config_hash:016x}",
            f.file_name().unwrap_or_default().to_string_lossy()
        );
    }
    let manifest_path = out.join("manifest.txt");
    fs::write(&manifest_path, m)?;
    files.push(manifest_path);

    Ok(StudyReport { output_dir: out.to_path_buf(), files, stages: stages.clone(), config_hash })
}

fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn rename(mut s: PortfolioSeries, label: String) -> PortfolioSeries {
    s.label = label;
    s
}

fn stat_mean(series: &PortfolioSeries, lag: LagPolicy) -> Result<MeanTest> {
    mean_return_test(series, lag)
}

fn stat_alpha(
    series: &PortfolioSeries,
    factors: &FactorTable,
    lag: LagPolicy,
) -> Result<RegressionResult> {
    factor_alpha(series, factors, &[Factor::Mkt, Factor::Smb, Factor::Hml], lag)
}

/// Mean tests for a 10x5 grid with the diff column and diff row attached.
fn grid_stats(sorted: &SortOutput, lag: LagPolicy) -> Result<Vec<Vec<MeanTest>>> {
    let rows = sorted.cells.len();
    let cols = sorted.cells[0].len();
    let mut out = Vec::with_capacity(rows + 1);
    for r in 0..rows {
        let mut line = Vec::with_capacity(cols + 1);
        for c in 0..cols {
            line.push(mean_return_test(sorted.cell(r, c), lag)?);
        }
        line.push(mean_return_test(&sorted.col_diff(r)?, lag)?);
        out.push(line);
    }
    let mut diff_row = Vec::with_capacity(cols + 1);
    for c in 0..cols {
        diff_row.push(mean_return_test(&sorted.row_diff(c)?, lag)?);
    }
    let corner = diff_series(&sorted.col_diff(rows - 1)?, &sorted.col_diff(0)?)?;
    diff_row.push(mean_return_test(&corner, lag)?);
    out.push(diff_row);
    Ok(out)
}

fn fmt_t(t: Option<f64>) -> String {
    match t {
        Some(v) => format!("{v:.3}"),
        None => "NA".to_string(),
    }
}

fn fmt_pct(v: f64) -> String {
    format!("{:.3}", 100.0 * v)
}

/// Formats one table from the stage outputs. Errors when the needed stage
/// results are incomplete.
pub fn emit_table(results: &StudyResults, table: u8) -> Result<String> {
    match table {
        1 => emit_table1(results),
        2 => Ok(emit_table2()),
        3 => emit_table3(results),
        4 => emit_table4(results),
        5 => emit_table5(results),
        6 => emit_table6(results),
        7 => emit_attribution(results.table7.as_ref(), 7, "short-term reversal attribution"),
        8 => emit_attribution(results.table8.as_ref(), 8, "factor model attribution"),
        _ => Err(Error::InvalidConfig(format!("no table {table}"))),
    }
}

fn incomplete(table: u8) -> Error {
    Error::Data(format!("results for table {table} not computed"))
}

fn emit_table1(results: &StudyResults) -> Result<String> {
    let rows = results.table1.as_ref().ok_or_else(|| incomplete(1))?;
    let mut s = String::new();
    let _ = write!(s, "group");
    let labels: Vec<String> = (1..=10)
        .map(|g| match g {
            1 => "L".to_string(),
            10 => "H".to_string(),
            other => other.to_string(),
        })
        .collect();
    for l in &labels {
        let _ = write!(s, ",{l}");
    }
    let _ = writeln!(s, ",Diff");
    for row in rows {
        let _ = write!(s, "{}", row.label);
        for m in &row.means {
            let _ = write!(s, ",{:.3}", m.mean_pct);
        }
        let _ = writeln!(s);
        let _ = write!(s, "t");
        for m in &row.means {
            let _ = write!(s, ",{}", fmt_t(m.t_stat));
        }
        let _ = writeln!(s);
        let _ = write!(s, "alpha_{}", row.label);
        for a in &row.alphas {
            let _ = write!(s, ",{}", fmt_pct(a.coefficients[0]));
        }
        let _ = writeln!(s);
        let _ = write!(s, "t");
        for a in &row.alphas {
            let _ = write!(s, ",{}", fmt_t(a.t_stats[0]));
        }
        let _ = writeln!(s);
    }
    Ok(s)
}

fn emit_table2() -> String {
    let mut s = String::from("scale,cycle\n");
    for scale in 0..SCALE_COUNT {
        let label = scale_cycle_label(scale).expect("scale in range");
        let _ = writeln!(s, "{scale},{}", label.cycle_band);
    }
    s
}

fn emit_table3(results: &StudyResults) -> Result<String> {
    let m = results.correlation.as_ref().ok_or_else(|| incomplete(3))?;
    let mut s = String::new();
    let _ = write!(s, "signal");
    for k in &m.signals {
        let _ = write!(s, ",{k}");
    }
    let _ = writeln!(s);
    for (i, k) in m.signals.iter().enumerate() {
        let _ = write!(s, "{k}");
        for j in 0..m.signals.len() {
            match m.values[i][j] {
                Some(v) => {
                    let _ = write!(s, ",{v:.3}");
                }
                None => {
                    let _ = write!(s, ",NA");
                }
            }
        }
        let _ = writeln!(s);
    }
    Ok(s)
}

fn emit_table4_block(block: &Table4Block) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scale {}", block.scale);
    for (name, grid, prefix) in
        [("recent month momentum", &block.rr, "RR"), ("intermediate month momentum", &block.ir, "IR")]
    {
        let _ = writeln!(s, "{name}");
        let _ = write!(s, "group");
        for q in 1..=5 {
            let _ = write!(s, ",{prefix}{q}");
        }
        let _ = write!(s, ",Diff");
        for q in 1..=5 {
            let _ = write!(s, ",t_{prefix}{q}");
        }
        let _ = writeln!(s, ",t_Diff");
        for (r, line) in grid.iter().enumerate() {
            let label = if r == grid.len() - 1 { "Diff".to_string() } else { format!("T{}", r + 1) };
            let _ = write!(s, "{label}");
            for m in line {
                let _ = write!(s, ",{:.3}", m.mean_pct);
            }
            for m in line {
                let _ = write!(s, ",{}", fmt_t(m.t_stat));
            }
            let _ = writeln!(s);
        }
    }
    s
}

fn emit_table4(results: &StudyResults) -> Result<String> {
    if results.table4.is_empty() {
        return Err(incomplete(4));
    }
    let mut s = String::new();
    for (i, &scale) in HEADLINE_SCALES.iter().enumerate() {
        let block = results
            .table4
            .iter()
            .find(|b| b.scale == scale)
            .ok_or_else(|| incomplete(4))?;
        let _ = writeln!(s, "panel {}", (b'A' + i as u8) as char);
        s.push_str(&emit_table4_block(block));
    }
    Ok(s)
}

fn regression_table(
    row_names: &[(&str, &str)], // (display row, coefficient name)
    models: &[&RegressionResult],
    footers: bool,
) -> String {
    let mut s = String::new();
    let _ = write!(s, "variable");
    for i in 1..=models.len() {
        let _ = write!(s, ",({i})");
    }
    let _ = writeln!(s);
    for (display, coef_name) in row_names {
        let mut have = false;
        let mut vals = String::new();
        let mut ts = String::new();
        for m in models {
            match m.coefficient(coef_name) {
                Some(c) => {
                    have = true;
                    // Intercepts are returns (shown in percent); slopes on
                    // return series are dimensionless loadings.
                    if *coef_name == "const" {
                        let _ = write!(vals, ",{}", fmt_pct(c));
                    } else {
                        let _ = write!(vals, ",{c:.3}");
                    }
                    let _ = write!(ts, ",{}", fmt_t(m.t_stat(coef_name).unwrap()));
                }
                None => {
                    let _ = write!(vals, ",");
                    let _ = write!(ts, ",");
                }
            }
        }
        if have {
            let _ = writeln!(s, "{display}{vals}");
            let _ = writeln!(s, "t{ts}");
        }
    }
    if footers {
        let _ = write!(s, "adj_r2");
        for m in models {
            let _ = write!(s, ",{:.3}", m.adj_r_squared);
        }
        let _ = writeln!(s);
        let _ = write!(s, "n");
        for m in models {
            let _ = write!(s, ",{}", m.n_obs);
        }
        let _ = writeln!(s);
        let _ = write!(s, "lag");
        for m in models {
            let _ = write!(s, ",{}", m.lag.map(|l| l.to_string()).unwrap_or_default());
        }
        let _ = writeln!(s);
    }
    s
}

fn emit_table5(results: &StudyResults) -> Result<String> {
    let (a, b) = results.table5.as_ref().ok_or_else(|| incomplete(5))?;
    let mut s = String::new();
    let _ = writeln!(s, "panel A,y = MOM_6_2");
    let refs: Vec<&RegressionResult> = a.iter().collect();
    s.push_str(&regression_table(
        &[
            ("intercept", "const"),
            ("reversal_cycle4", "reversal_cycle4"),
            ("reversal_cycle5", "reversal_cycle5"),
            ("MKT", "MKT"),
            ("SMB", "SMB"),
            ("HML", "HML"),
        ],
        &refs,
        true,
    ));
    let _ = writeln!(s, "panel B,y = MOM_12_7");
    let refs: Vec<&RegressionResult> = b.iter().collect();
    s.push_str(&regression_table(
        &[
            ("intercept", "const"),
            ("control_cycle4", "control_cycle4"),
            ("control_cycle3", "control_cycle3"),
            ("MKT", "MKT"),
            ("SMB", "SMB"),
            ("HML", "HML"),
        ],
        &refs,
        true,
    ));
    Ok(s)
}

fn emit_table6(results: &StudyResults) -> Result<String> {
    let models = results.table6.as_ref().ok_or_else(|| incomplete(6))?;
    let rows: Vec<(&str, String)> = vec![
        ("RR", SignalKind::R62.name()),
        ("IR", SignalKind::R127.name()),
        ("turnover_all", SignalKind::TurnAll.name()),
        ("turnover_cycle3", SignalKind::TurnAve(3).name()),
        ("turnover_cycle4", SignalKind::TurnAve(4).name()),
        ("turnover_cycle5", SignalKind::TurnAve(5).name()),
        ("r_1_0", SignalKind::R10.name()),
        ("log_me", SignalKind::LogMe.name()),
        ("log_bm", SignalKind::LogBm.name()),
        ("intercept", "const".to_string()),
    ];
    let mut s = String::new();
    let _ = write!(s, "variable");
    for i in 1..=models.len() {
        let _ = write!(s, ",({i})");
    }
    let _ = writeln!(s);
    for (display, name) in &rows {
        let mut have = false;
        let mut vals = String::new();
        let mut ts = String::new();
        for m in models {
            match m.premium(name) {
                Some(p) => {
                    have = true;
                    let _ = write!(vals, ",{}", fmt_pct(p));
                    let _ = write!(ts, ",{}", fmt_t(m.t_stat(name).unwrap()));
                }
                None => {
                    let _ = write!(vals, ",");
                    let _ = write!(ts, ",");
                }
            }
        }
        if have {
            let _ = writeln!(s, "{display}{vals}");
            let _ = writeln!(s, "t{ts}");
        }
    }
    let _ = write!(s, "adj_r2");
    for m in models {
        let _ = write!(s, ",{:.3}", m.avg_adj_r_squared);
    }
    let _ = writeln!(s);
    let _ = write!(s, "average_n");
    for m in models {
        let _ = write!(s, ",{:.0}", m.avg_cross_section);
    }
    let _ = writeln!(s);
    let _ = write!(s, "months");
    for m in models {
        let _ = write!(s, ",{}", m.months_used);
    }
    let _ = writeln!(s);
    let _ = write!(s, "lag");
    for m in models {
        let _ = write!(s, ",{}", m.lag);
    }
    let _ = writeln!(s);
    Ok(s)
}

fn emit_attribution(
    models: Option<&Vec<(String, RegressionResult)>>,
    table: u8,
    title: &str,
) -> Result<String> {
    let models = models.ok_or_else(|| incomplete(table))?;
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = write!(s, "variable");
    for (dep, _) in models {
        let _ = write!(s, ",{dep}");
    }
    let _ = writeln!(s);
    let refs: Vec<&RegressionResult> = models.iter().map(|(_, r)| r).collect();
    s.push_str(&regression_table(
        &[
            ("intercept", "const"),
            ("MKT", "MKT"),
            ("SMB", "SMB"),
            ("HML", "HML"),
            ("reversal", "STR"),
            ("liquidity", "LIQ"),
        ],
        &refs,
        true,
    ));
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_spec_parses() {
        assert!(matches!(LagSpec::Named("auto".into()).to_policy().unwrap(), LagPolicy::Auto));
        assert!(matches!(LagSpec::Fixed(6).to_policy().unwrap(), LagPolicy::Fixed(6)));
        assert!(LagSpec::Named("sometimes".into()).to_policy().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = StudyConfig::default();
        let text = config.to_toml_string();
        let back = StudyConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.study.tables, config.study.tables);
    }

    #[test]
    fn config_parses_minimal_synth() {
        let text = r#"
[input.synth]
n_stocks = 200
n_months = 200
seed = 7

[study]
tables = [1]
lag = 6
output = "out"
"#;
        let c = StudyConfig::from_toml_str(text).unwrap();
        assert_eq!(c.input.synth.as_ref().unwrap().n_stocks, 200);
        assert_eq!(c.study.tables, vec![1]);
        assert!(matches!(c.study.lag.to_policy().unwrap(), LagPolicy::Fixed(6)));
    }

    #[test]
    fn table2_is_static() {
        let text = emit_table2();
        assert!(text.contains("0,>64months"));
        assert!(text.contains("6,0~2months"));
        assert!(text.contains("5,2~4months"));
    }

    #[test]
    fn emit_incomplete_results_errors() {
        let results = StudyResults::default();
        assert!(emit_table(&results, 1).is_err());
        assert!(emit_table(&results, 3).is_err());
        assert!(emit_table(&results, 5).is_err());
        assert!(emit_table(&results, 9).is_err());
    }

    fn scratch_output(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("turnwave_unit_{}_{name}", std::process::id()))
    }

    #[test]
    fn validate_rejects_bad_tables() {
        let mut config = StudyConfig::default();
        config.input.synth = Some(SynthConfig { n_stocks: 60, n_months: 140, ..Default::default() });
        config.study.output = scratch_output("bad_tables");
        config.study.tables = vec![0];
        assert!(run_study(&config).is_err());
        config.study.tables = vec![];
        assert!(run_study(&config).is_err());
        let _ = std::fs::remove_dir_all(&config.study.output);
    }

    #[test]
    fn validate_requires_input() {
        let mut config = StudyConfig::default();
        config.study.tables = vec![2];
        config.study.output = scratch_output("no_input");
        assert!(matches!(run_study(&config), Err(Error::Stage { .. })));
        let _ = std::fs::remove_dir_all(&config.study.output);
    }
}
