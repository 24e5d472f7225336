//! Stock-month panel ingestion and eligibility filters.
//!
//! Panels arrive as delimited text (comma, tab, or pipe; auto-detected) with
//! a header row. Column names are remappable through [`PanelSchema`]. The
//! turnover double-counting adjustment for NASDAQ volume is applied exactly
//! once, at load; a serialized panel stores the adjusted value under the
//! `turnover_adj` header so that reloading does not adjust twice.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::month::{Month, MonthRange};

/// Listing exchange of a stock-month observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Exchange {
    Nyse,
    Amex,
    Nasdaq,
}

impl Exchange {
    pub fn as_str(self) -> &'static str {
        match self {
            Exchange::Nyse => "NYSE",
            Exchange::Amex => "AMEX",
            Exchange::Nasdaq => "NASDAQ",
        }
    }
}

impl FromStr for Exchange {
    type Err = ();

    /// Accepts exchange names (any case) or CRSP exchange codes 1/2/3.
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NYSE" | "1" => Ok(Exchange::Nyse),
            "AMEX" | "2" => Ok(Exchange::Amex),
            "NASDAQ" | "3" => Ok(Exchange::Nasdaq),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Exchange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Compact handle for a stock; names live in the dataset's intern table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StockId(pub u32);

/// One stock-month row of the panel.
///
/// `ret` is a monthly simple return in decimal units, `price` an end-of-month
/// price with any bid/ask-midpoint sign flag already stripped, `turnover` the
/// month's share turnover after the NASDAQ adjustment. Optional fields are
/// `None` when the source row left them blank or unusable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub stock: StockId,
    pub month: Month,
    pub ret: f64,
    pub price: f64,
    pub turnover: Option<f64>,
    pub market_equity: Option<f64>,
    pub book_to_market: Option<f64>,
    pub exchange: Exchange,
}

/// Adjustment divisor for NASDAQ turnover in a given month.
///
/// NASDAQ volume double counts dealer trades; the correction divides reported
/// turnover by 2.0 through 2000-12, 1.8 through 2001-12, 1.6 through 2003-12,
/// and leaves it unchanged from 2004-01 onward. NYSE and AMEX turnover is
/// never adjusted.
pub fn nasdaq_divisor(month: Month) -> f64 {
    let jan_2001 = (2001 - crate::month::EPOCH_YEAR) * 12;
    let jan_2002 = jan_2001 + 12;
    let jan_2004 = jan_2001 + 36;
    if month.0 < jan_2001 {
        2.0
    } else if month.0 < jan_2002 {
        1.8
    } else if month.0 < jan_2004 {
        1.6
    } else {
        1.0
    }
}

/// Applies the NASDAQ turnover adjustment to a raw turnover value.
///
/// Must be applied exactly once per observation (the loader does this); the
/// transform is not idempotent.
pub fn adjust_nasdaq_turnover(turnover_raw: f64, month: Month, exchange: Exchange) -> Result<f64> {
    if turnover_raw < 0.0 {
        return Err(Error::NegativeTurnover { value: turnover_raw, month });
    }
    match exchange {
        Exchange::Nasdaq => Ok(turnover_raw / nasdaq_divisor(month)),
        _ => Ok(turnover_raw),
    }
}

/// Column-name mapping for panel input files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub stock_id: String,
    pub month: String,
    pub ret: String,
    pub price: String,
    pub turnover: String,
    pub market_equity: String,
    pub book_to_market: String,
    pub exchange: String,
    /// When true, the turnover column already carries the NASDAQ adjustment
    /// and is stored as-is. Automatically set when the header says
    /// `turnover_adj` (the serializer's output).
    pub turnover_pre_adjusted: bool,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            stock_id: "stock_id".into(),
            month: "month".into(),
            ret: "ret".into(),
            price: "price".into(),
            turnover: "turnover".into(),
            market_equity: "market_equity".into(),
            book_to_market: "book_to_market".into(),
            exchange: "exchange".into(),
            turnover_pre_adjusted: false,
        }
    }
}

/// Row accounting from a panel load.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    /// Dropped-row and dropped-field counts keyed by reason.
    pub dropped: BTreeMap<String, usize>,
}

impl LoadReport {
    fn drop_row(&mut self, reason: &str) {
        *self.dropped.entry(reason.to_string()).or_insert(0) += 1;
    }
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows_read = {}", self.rows_read)?;
        writeln!(f, "rows_kept = {}", self.rows_kept)?;
        for (reason, n) in &self.dropped {
            writeln!(f, "dropped[{reason}] = {n}")?;
        }
        Ok(())
    }
}

/// Immutable stock-month panel.
///
/// Observations are stored sorted by `(month, stock)` where stock ids follow
/// first-appearance order in the source, so iteration is deterministic for a
/// given input. All read accessors take `&self` and the struct is `Sync`;
/// loading is the only writer.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    names: Vec<String>,
    index: HashMap<String, StockId>,
    observations: Vec<PanelObservation>,
    /// (month, stock) -> position in `observations`.
    lookup: HashMap<(Month, StockId), usize>,
    month_range: MonthRange,
    report: LoadReport,
}

impl PanelDataset {
    /// Builds a dataset from raw observations keyed by stock name.
    ///
    /// Rejects duplicate `(stock, month)` pairs.
    pub fn from_rows(rows: Vec<(String, PanelObservation)>) -> Result<Self> {
        Self::assemble(rows, LoadReport::default())
    }

    fn assemble(rows: Vec<(String, PanelObservation)>, report: LoadReport) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, StockId> = HashMap::new();
        let mut observations: Vec<PanelObservation> = Vec::with_capacity(rows.len());

        for (name, mut obs) in rows {
            let id = *index.entry(name.clone()).or_insert_with(|| {
                let id = StockId(names.len() as u32);
                names.push(name);
                id
            });
            obs.stock = id;
            observations.push(obs);
        }

        observations.sort_by_key(|o| (o.month, o.stock));
        let mut lookup = HashMap::with_capacity(observations.len());
        for (i, obs) in observations.iter().enumerate() {
            if lookup.insert((obs.month, obs.stock), i).is_some() {
                return Err(Error::DuplicateObservation {
                    stock: names[obs.stock.0 as usize].clone(),
                    month: obs.month,
                });
            }
        }

        let month_range = match (observations.first(), observations.last()) {
            (Some(a), Some(b)) => MonthRange::new(a.month, b.month),
            _ => MonthRange::new(Month(0), Month(-1)),
        };

        Ok(PanelDataset { names, index, observations, lookup, month_range, report })
    }

    pub fn month_range(&self) -> MonthRange {
        self.month_range
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn load_report(&self) -> &LoadReport {
        &self.report
    }

    pub fn stock_name(&self, id: StockId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn stock_id(&self, name: &str) -> Option<StockId> {
        self.index.get(name).copied()
    }

    pub fn stock_count(&self) -> usize {
        self.names.len()
    }

    /// All stock ids in intern order.
    pub fn stocks(&self) -> impl Iterator<Item = StockId> + '_ {
        (0..self.names.len() as u32).map(StockId)
    }

    /// Observations sorted by `(month, stock)`.
    pub fn iter(&self) -> impl Iterator<Item = &PanelObservation> {
        self.observations.iter()
    }

    /// Observation for one stock-month, if present.
    pub fn get(&self, stock: StockId, month: Month) -> Option<&PanelObservation> {
        self.lookup.get(&(month, stock)).map(|&i| &self.observations[i])
    }

    /// Observations of a single month, sorted by stock id.
    pub fn month_slice(&self, month: Month) -> &[PanelObservation] {
        let lo = self.observations.partition_point(|o| o.month < month);
        let hi = self.observations.partition_point(|o| o.month <= month);
        &self.observations[lo..hi]
    }

    /// Stocks eligible for portfolio formation at `month`: price at least
    /// five dollars and a usable market equity.
    pub fn eligible_stocks(&self, month: Month) -> Result<Vec<StockId>> {
        if !self.month_range.contains(month) {
            return Err(Error::MonthOutOfRange {
                month,
                range: self.month_range.to_string(),
            });
        }
        Ok(self
            .month_slice(month)
            .iter()
            .filter(|o| o.price >= 5.0 && o.market_equity.is_some())
            .map(|o| o.stock)
            .collect())
    }

    /// Contiguous monthly return series for a stock over `[first, last]`,
    /// or `None` if any month is missing.
    pub fn return_window(&self, stock: StockId, first: Month, last: Month) -> Option<Vec<f64>> {
        let mut out = Vec::with_capacity((last.0 - first.0 + 1).max(0) as usize);
        let mut m = first;
        while m <= last {
            out.push(self.get(stock, m)?.ret);
            m = m + 1;
        }
        Some(out)
    }

    /// Writes the panel in the loader's delimited format (adjusted turnover
    /// under `turnover_adj`). Reloading the output reproduces the retained
    /// rows bit-identically.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "stock_id,month,ret,price,turnover_adj,market_equity,book_to_market,exchange"
        )?;
        for obs in &self.observations {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                self.stock_name(obs.stock),
                obs.month,
                obs.ret,
                obs.price,
                opt(obs.turnover),
                opt(obs.market_equity),
                opt(obs.book_to_market),
                obs.exchange
            )?;
        }
        Ok(())
    }

    pub fn write_to_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }
}

fn detect_delimiter(header: &str) -> u8 {
    for d in *b"\t|," {
        if header.as_bytes().contains(&d) {
            return d;
        }
    }
    b','
}

fn parse_f64(field: &str) -> Option<f64> {
    let t = field.trim();
    if t.is_empty() {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Loads a stock-month panel from delimited text.
///
/// Rows with unparseable mandatory fields (stock id, month, return, price,
/// exchange) are dropped and counted per reason; unusable optional fields are
/// blanked and counted without dropping the row. Turnover is adjusted for
/// NASDAQ double counting on the way in unless the schema marks it
/// pre-adjusted.
pub fn load_panel<R: Read>(source: R, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut reader = BufReader::new(source);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let delim = detect_delimiter(&header);
    let cols: Vec<String> =
        header.trim_end().split(delim as char).map(|c| c.trim().to_string()).collect();

    let col = |name: &str| -> Option<usize> { cols.iter().position(|c| c.eq_ignore_ascii_case(name)) };
    let require = |name: &str| -> Result<usize> {
        col(name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let i_stock = require(&schema.stock_id)?;
    let i_month = require(&schema.month)?;
    let i_ret = require(&schema.ret)?;
    let i_price = require(&schema.price)?;
    let i_exch = require(&schema.exchange)?;
    // Optional columns: absent column means the field is absent everywhere.
    let (i_turn, pre_adjusted) = match col(&schema.turnover) {
        Some(i) => (Some(i), schema.turnover_pre_adjusted),
        None => (col("turnover_adj"), true),
    };
    let i_me = col(&schema.market_equity);
    let i_bm = col(&schema.book_to_market);

    let mut report = LoadReport::default();
    let mut rows: Vec<(String, PanelObservation)> = Vec::new();

    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.rows_read += 1;
        let fields: Vec<&str> = line.split(delim as char).collect();
        let field = |i: usize| fields.get(i).copied().unwrap_or("");

        let name = field(i_stock).trim();
        if name.is_empty() {
            report.drop_row("missing stock_id");
            continue;
        }
        let month = match field(i_month).parse::<Month>() {
            Ok(m) => m,
            Err(_) => {
                report.drop_row("bad month");
                continue;
            }
        };
        let ret = match parse_f64(field(i_ret)) {
            Some(r) => r,
            None => {
                report.drop_row("missing ret");
                continue;
            }
        };
        let price = match parse_f64(field(i_price)) {
            // CRSP flags bid/ask midpoints with a negative sign.
            Some(p) if p != 0.0 => p.abs(),
            _ => {
                report.drop_row("missing price");
                continue;
            }
        };
        let exchange = match field(i_exch).parse::<Exchange>() {
            Ok(e) => e,
            Err(_) => {
                report.drop_row("bad exchange");
                continue;
            }
        };

        let turnover = match i_turn.map(field) {
            Some(raw) => match parse_f64(raw) {
                Some(t) if t < 0.0 => {
                    report.drop_row("negative turnover");
                    None
                }
                Some(t) if pre_adjusted => Some(t),
                Some(t) => Some(adjust_nasdaq_turnover(t, month, exchange)?),
                None => None,
            },
            None => None,
        };
        let market_equity = match i_me.map(|i| parse_f64(field(i))) {
            Some(Some(me)) if me > 0.0 => Some(me),
            Some(Some(_)) => {
                report.drop_row("nonpositive market_equity");
                None
            }
            _ => None,
        };
        let book_to_market = i_bm.and_then(|i| parse_f64(field(i)));

        rows.push((
            name.to_string(),
            PanelObservation {
                stock: StockId(0), // assigned by assemble
                month,
                ret,
                price,
                turnover,
                market_equity,
                book_to_market,
                exchange,
            },
        ));
    }

    report.rows_kept = rows.len();
    PanelDataset::assemble(rows, report)
}

pub fn load_panel_path<P: AsRef<Path>>(path: P, schema: &PanelSchema) -> Result<PanelDataset> {
    load_panel(std::fs::File::open(path)?, schema)
}

/// Monthly factor identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    Mkt,
    Smb,
    Hml,
    Str,
    Liq,
}

pub const ALL_FACTORS: [Factor; 5] = [Factor::Mkt, Factor::Smb, Factor::Hml, Factor::Str, Factor::Liq];

impl Factor {
    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Mkt => "MKT",
            Factor::Smb => "SMB",
            Factor::Hml => "HML",
            Factor::Str => "STR",
            Factor::Liq => "LIQ",
        }
    }

    /// Maps common header spellings onto a factor.
    fn from_header(h: &str) -> Option<Factor> {
        match h.trim().to_ascii_uppercase().replace(['-', '_', ' '], "").as_str() {
            "MKT" | "MKTRF" | "MARKET" => Some(Factor::Mkt),
            "SMB" => Some(Factor::Smb),
            "HML" => Some(Factor::Hml),
            "STR" | "STREV" | "REV" => Some(Factor::Str),
            "LIQ" | "PSLIQ" | "LIQUIDITY" => Some(Factor::Liq),
            _ => None,
        }
    }
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Monthly factor returns in decimal units.
///
/// Missing factors surface as errors when first requested, not at load, so a
/// file without a liquidity column still serves three-factor regressions.
#[derive(Debug, Clone, Default)]
pub struct FactorTable {
    rows: BTreeMap<Month, [Option<f64>; 5]>,
}

impl FactorTable {
    pub fn new() -> Self {
        FactorTable::default()
    }

    /// Inserts a month's factor values (decimal units).
    pub fn insert(&mut self, month: Month, values: &[(Factor, f64)]) -> Result<()> {
        if self.rows.contains_key(&month) {
            return Err(Error::DuplicateFactorMonth(month));
        }
        let mut row = [None; 5];
        for &(f, v) in values {
            row[f as usize] = Some(v);
        }
        self.rows.insert(month, row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn months(&self) -> impl Iterator<Item = Month> + '_ {
        self.rows.keys().copied()
    }

    /// Factor value for one month; errors if the month or the factor's value
    /// is absent.
    pub fn get(&self, factor: Factor, month: Month) -> Result<f64> {
        self.rows
            .get(&month)
            .and_then(|r| r[factor as usize])
            .ok_or_else(|| Error::MissingFactor { factor: factor.as_str().to_string(), month })
    }

    /// Aligned factor columns for a list of months.
    pub fn aligned(&self, factors: &[Factor], months: &[Month]) -> Result<Vec<Vec<f64>>> {
        factors
            .iter()
            .map(|&f| months.iter().map(|&m| self.get(f, m)).collect())
            .collect()
    }
}

/// Loads a factor file: delimited text, first column the month as `YYYYMM`
/// or `YYYY-MM`, remaining columns factor returns in percent.
pub fn load_factor_table<R: Read>(source: R) -> Result<FactorTable> {
    let mut reader = BufReader::new(source);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let delim = detect_delimiter(&header);
    let cols: Vec<String> =
        header.trim_end().split(delim as char).map(|c| c.trim().to_string()).collect();
    if cols.len() < 2 {
        return Err(Error::MissingColumn("factor columns".to_string()));
    }
    let mapped: Vec<(usize, Factor)> = cols
        .iter()
        .enumerate()
        .skip(1)
        .filter_map(|(i, c)| Factor::from_header(c).map(|f| (i, f)))
        .collect();
    if mapped.is_empty() {
        return Err(Error::MissingColumn("no recognizable factor columns".to_string()));
    }

    let mut table = FactorTable::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delim as char).collect();
        let month = fields
            .first()
            .and_then(|s| s.trim().parse::<Month>().ok())
            .ok_or_else(|| Error::Data(format!("unparseable factor month: {line:?}")))?;
        let mut values = Vec::with_capacity(mapped.len());
        for &(i, f) in &mapped {
            let raw = fields.get(i).copied().unwrap_or("").trim();
            if raw.is_empty() {
                continue;
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::Data(format!("unparseable {f} value {raw:?} at {month}")))?;
            values.push((f, v / 100.0));
        }
        table.insert(month, &values)?;
    }
    Ok(table)
}

pub fn load_factor_table_path<P: AsRef<Path>>(path: P) -> Result<FactorTable> {
    load_factor_table(std::fs::File::open(path)?)
}
