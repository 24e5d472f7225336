//! Command-line driver for the turnwave study engine.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use turnwave::econ::{fama_macbeth, spanning_regression};
use turnwave::month::MonthRange;
use turnwave::panel::{load_factor_table_path, load_panel_path, PanelSchema, StockId};
use turnwave::signals::{signal_correlations, SignalKind, SignalPanel};
use turnwave::sorts::{run_sort, SortSpec, Weighting};
use turnwave::study::{run_study, LagSpec, StudyConfig};
use turnwave::synth::{generate_factor_table, generate_panel, SynthConfig};
use turnwave::wavelet::{
    decompose_stock, write_decomposition, write_decomposition_header, Mode, Transform, SCALE_COUNT,
};
use turnwave::{Error, PanelDataset, Result};

#[derive(Parser)]
#[command(name = "turnwave", version, about = "Cyclic turnover and momentum term-structure studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PanelArgs {
    /// Panel file (delimited text with a header row).
    #[arg(long)]
    panel: PathBuf,
    /// Read turnover as already adjusted for NASDAQ double counting.
    #[arg(long, default_value_t = false)]
    pre_adjusted: bool,
}

impl PanelArgs {
    fn load(&self) -> Result<PanelDataset> {
        let schema = PanelSchema { turnover_pre_adjusted: self.pre_adjusted, ..Default::default() };
        load_panel_path(&self.panel, &schema)
    }
}

fn parse_lag(s: &str) -> std::result::Result<LagSpec, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(LagSpec::Named("auto".into()));
    }
    s.parse::<usize>().map(LagSpec::Fixed).map_err(|_| format!("bad lag {s:?}"))
}

#[derive(Subcommand)]
enum Command {
    /// Load a panel (and optionally factors) and print the load report.
    LoadCheck {
        #[command(flatten)]
        panel: PanelArgs,
        #[arg(long)]
        factors: Option<PathBuf>,
    },
    /// Decompose turnover into scale components, written as audit text.
    Decompose {
        #[command(flatten)]
        panel: PanelArgs,
        /// Restrict to one stock id (default: all).
        #[arg(long)]
        stock: Option<String>,
        #[arg(long, value_enum, default_value = "full-sample")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "dwt")]
        transform: TransformArg,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the signal panel and print the correlation matrix.
    Signals {
        #[command(flatten)]
        panel: PanelArgs,
        #[arg(long, value_enum, default_value = "full-sample")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "dwt")]
        transform: TransformArg,
        /// Export the per-stock signal rows to this file.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Run one sort and print mean returns with Newey-West t-statistics.
    Sort {
        #[command(flatten)]
        panel: PanelArgs,
        /// Row sort signal (r_6_2, r_12_7, r_1_0, turn_ave_K, turn_all, ...).
        #[arg(long)]
        row: String,
        #[arg(long, default_value_t = 10)]
        row_groups: usize,
        /// Optional column signal for a bivariate sort.
        #[arg(long)]
        col: Option<String>,
        #[arg(long, default_value_t = 5)]
        col_groups: usize,
        #[arg(long, value_enum, default_value = "value")]
        weighting: WeightingArg,
        #[arg(long, value_parser = parse_lag, default_value = "auto")]
        lag: LagSpec,
    },
    /// Fama-MacBeth cross-sectional regression.
    Fmb {
        #[command(flatten)]
        panel: PanelArgs,
        /// Comma-separated regressors, e.g. r_6_2,r_12_7,turn_ave_4.
        #[arg(long)]
        regressors: String,
        #[arg(long, default_value_t = false)]
        intercept: bool,
        #[arg(long, value_parser = parse_lag, default_value = "auto")]
        lag: LagSpec,
    },
    /// Spanning regression of one sorted series on others.
    Span {
        #[command(flatten)]
        panel: PanelArgs,
        /// Dependent sort signal (univariate decile high-minus-low).
        #[arg(long)]
        dependent: String,
        /// Spanning sort signals, comma separated.
        #[arg(long)]
        spanning: String,
        #[arg(long)]
        factors: Option<PathBuf>,
        #[arg(long, default_value_t = false)]
        ff3: bool,
        #[arg(long, value_parser = parse_lag, default_value = "auto")]
        lag: LagSpec,
    },
    /// Run the full study battery from a TOML config file.
    Study {
        /// Config file; flags override its fields.
        #[arg(long)]
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the synthetic seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the table selection, comma separated.
        #[arg(long)]
        tables: Option<String>,
    },
    /// Generate a synthetic panel (and factor file).
    Synth {
        /// Optional TOML config providing [input.synth].
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        stocks: Option<usize>,
        #[arg(long)]
        months: Option<usize>,
        /// Panel output path.
        #[arg(long, default_value = "synth_panel.csv")]
        out: PathBuf,
        /// Factor output path.
        #[arg(long, default_value = "synth_factors.csv")]
        factors_out: PathBuf,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum ModeArg {
    FullSample,
    Causal,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::FullSample => Mode::FullSample,
            ModeArg::Causal => Mode::Causal,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum TransformArg {
    Dwt,
    Modwt,
}

impl From<TransformArg> for Transform {
    fn from(t: TransformArg) -> Transform {
        match t {
            TransformArg::Dwt => Transform::Dwt,
            TransformArg::Modwt => Transform::Modwt,
        }
    }
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum WeightingArg {
    Value,
    Equal,
}

impl From<WeightingArg> for Weighting {
    fn from(w: WeightingArg) -> Weighting {
        match w {
            WeightingArg::Value => Weighting::Value,
            WeightingArg::Equal => Weighting::Equal,
        }
    }
}

fn parse_signals(s: &str) -> Result<Vec<SignalKind>> {
    s.split(',').map(|p| p.trim().parse()).collect()
}

fn formation_range(dataset: &PanelDataset) -> Result<MonthRange> {
    let r = dataset.month_range();
    let f = MonthRange::new(r.first + 13, r.last - 1);
    if f.is_empty() {
        return Err(Error::Data("panel too short for any formation month".into()));
    }
    Ok(f)
}

fn build_signals(
    dataset: &PanelDataset,
    mode: Mode,
    transform: Transform,
    months: MonthRange,
) -> Result<SignalPanel> {
    let mut decomps = HashMap::new();
    for stock in dataset.stocks() {
        let ds = decompose_stock(dataset, stock, mode, transform)?;
        if !ds.is_empty() {
            decomps.insert(stock, ds);
        }
    }
    Ok(SignalPanel::build(dataset, &decomps, months))
}

fn decile_diff(
    dataset: &PanelDataset,
    panel: &SignalPanel,
    signal: SignalKind,
    months: MonthRange,
) -> Result<turnwave::PortfolioSeries> {
    let spec = SortSpec::univariate(signal, 10);
    let out = run_sort(dataset, panel, &spec, months)?;
    let mut diff = out.row_diff(0)?;
    diff.label = signal.name();
    Ok(diff)
}

fn fmt_opt_t(t: Option<f64>) -> String {
    t.map(|v| format!("{v:.3}")).unwrap_or_else(|| "NA".into())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::LoadCheck { panel, factors } => {
            let dataset = panel.load()?;
            print!("{}", dataset.load_report());
            println!("stocks = {}", dataset.stock_count());
            println!("months = {}", dataset.month_range());
            if let Some(path) = factors {
                let table = load_factor_table_path(path)?;
                println!("factor_months = {}", table.len());
            }
            Ok(())
        }
        Command::Decompose { panel, stock, mode, transform, out } => {
            let dataset = panel.load()?;
            let stocks: Vec<StockId> = match stock {
                Some(name) => vec![dataset
                    .stock_id(&name)
                    .ok_or_else(|| Error::Data(format!("unknown stock {name}")))?],
                None => dataset.stocks().collect(),
            };
            let mut w: Box<dyn Write> = match out {
                Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
                None => Box::new(std::io::stdout().lock()),
            };
            write_decomposition_header(&mut w)?;
            for s in stocks {
                for d in decompose_stock(&dataset, s, mode.into(), transform.into())? {
                    write_decomposition(&mut w, dataset.stock_name(s), &d)?;
                }
            }
            Ok(())
        }
        Command::Signals { panel, mode, transform, export } => {
            let dataset = panel.load()?;
            let months = formation_range(&dataset)?;
            let signals = build_signals(&dataset, mode.into(), transform.into(), months)?;
            if let Some(path) = export {
                let f = std::fs::File::create(path)?;
                signals.write_to(&dataset, std::io::BufWriter::new(f))?;
            }
            let mut kinds: Vec<SignalKind> = (0..SCALE_COUNT).map(SignalKind::TurnAve).collect();
            kinds.push(SignalKind::R62);
            kinds.push(SignalKind::R127);
            let m = signal_correlations(&signals, &kinds)?;
            print!("signal");
            for k in &m.signals {
                print!(",{k}");
            }
            println!();
            for (i, k) in m.signals.iter().enumerate() {
                print!("{k}");
                for j in 0..m.signals.len() {
                    match m.values[i][j] {
                        Some(v) => print!(",{v:.3}"),
                        None => print!(",NA"),
                    }
                }
                println!();
            }
            Ok(())
        }
        Command::Sort { panel, row, row_groups, col, col_groups, weighting, lag } => {
            let dataset = panel.load()?;
            let months = formation_range(&dataset)?;
            let signals = build_signals(&dataset, Mode::FullSample, Transform::default(), months)?;
            let mut spec = match col {
                Some(c) => SortSpec::bivariate(row.parse()?, row_groups, c.parse()?, col_groups),
                None => SortSpec::univariate(row.parse()?, row_groups),
            };
            spec.weighting = weighting.into();
            let out = run_sort(&dataset, &signals, &spec, months)?;
            let lag = lag.to_policy()?;
            for (r, rowcells) in out.cells.iter().enumerate() {
                let mut means = String::new();
                let mut ts = String::new();
                for cell in rowcells {
                    let t = turnwave::econ::mean_return_test(cell, lag)?;
                    means.push_str(&format!(",{:.3}", t.mean_pct));
                    ts.push_str(&format!(",{}", fmt_opt_t(t.t_stat)));
                }
                println!("group{}{means}{ts}", r + 1);
            }
            println!("skipped_months = {}", out.skipped.len());
            println!("dropped_members = {}", out.dropped_members);
            Ok(())
        }
        Command::Fmb { panel, regressors, intercept, lag } => {
            let dataset = panel.load()?;
            let months = formation_range(&dataset)?;
            let signals = build_signals(&dataset, Mode::FullSample, Transform::default(), months)?;
            let regs = parse_signals(&regressors)?;
            let r = fama_macbeth(&dataset, &signals, &regs, intercept, months, lag.to_policy()?)?;
            for (i, name) in r.names.iter().enumerate() {
                println!(
                    "{name} = {:.3} (t = {})",
                    100.0 * r.premiums[i],
                    fmt_opt_t(r.t_stats[i])
                );
            }
            println!("avg_adj_r2 = {:.3}", r.avg_adj_r_squared);
            println!("average_n = {:.0}", r.avg_cross_section);
            println!("months = {} (skipped {})", r.months_used, r.skipped_months.len());
            println!("lag = {}", r.lag);
            Ok(())
        }
        Command::Span { panel, dependent, spanning, factors, ff3, lag } => {
            let dataset = panel.load()?;
            let months = formation_range(&dataset)?;
            let signals = build_signals(&dataset, Mode::FullSample, Transform::default(), months)?;
            let dep = decile_diff(&dataset, &signals, dependent.parse()?, months)?;
            let spans: Result<Vec<_>> = parse_signals(&spanning)?
                .into_iter()
                .map(|k| decile_diff(&dataset, &signals, k, months))
                .collect();
            let spans = spans?;
            let table = match factors {
                Some(p) => load_factor_table_path(p)?,
                None if ff3 => return Err(Error::InvalidConfig("--ff3 needs --factors".into())),
                None => Default::default(),
            };
            let refs: Vec<&turnwave::PortfolioSeries> = spans.iter().collect();
            let r = spanning_regression(&dep, &refs, ff3, &table, lag.to_policy()?)?;
            for (i, name) in r.names.iter().enumerate() {
                let value = if name == "const" {
                    format!("{:.3}", 100.0 * r.coefficients[i])
                } else {
                    format!("{:.3}", r.coefficients[i])
                };
                println!("{name} = {value} (t = {})", fmt_opt_t(r.t_stats[i]));
            }
            println!("adj_r2 = {:.3}", r.adj_r_squared);
            Ok(())
        }
        Command::Study { config, out, seed, tables } => {
            let mut cfg = StudyConfig::from_path(&config)?;
            if let Some(out) = out {
                cfg.study.output = out;
            }
            if let Some(seed) = seed {
                match &mut cfg.input.synth {
                    Some(s) => s.seed = seed,
                    None => {
                        return Err(Error::InvalidConfig(
                            "--seed only applies to synthetic input".into(),
                        ))
                    }
                }
            }
            if let Some(t) = tables {
                cfg.study.tables = t
                    .split(',')
                    .map(|p| p.trim().parse::<u8>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::InvalidConfig(format!("bad tables list: {e}")))?;
            }
            let report = run_study(&cfg)?;
            for (stage, status) in &report.stages {
                println!("stage {stage}: {status:?}");
            }
            println!("output = {}", report.output_dir.display());
            Ok(())
        }
        Command::Synth { config, seed, stocks, months, out, factors_out } => {
            let mut synth = match config {
                Some(path) => {
                    let cfg = StudyConfig::from_path(&path)?;
                    cfg.input
                        .synth
                        .ok_or_else(|| Error::InvalidConfig("config has no [input.synth]".into()))?
                }
                None => SynthConfig::default(),
            };
            if let Some(s) = seed {
                synth.seed = s;
            }
            if let Some(s) = stocks {
                synth.n_stocks = s;
            }
            if let Some(m) = months {
                synth.n_months = m;
            }
            let panel = generate_panel(&synth)?;
            panel.write_to_path(&out)?;
            let table = generate_factor_table(&synth)?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&factors_out)?);
            writeln!(w, "month,MKT,SMB,HML,STR,LIQ")?;
            for m in table.months() {
                write!(w, "{}{:02}", m.year(), m.month_of_year())?;
                for f in turnwave::panel::ALL_FACTORS {
                    write!(w, ",{}", 100.0 * table.get(f, m)?)?;
                }
                writeln!(w)?;
            }
            println!("panel = {} ({} rows)", out.display(), panel.len());
            println!("factors = {}", factors_out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // Die quietly when stdout is a closed pipe (e.g. `turnwave ... | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
