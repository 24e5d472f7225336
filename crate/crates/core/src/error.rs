//! Crate-wide error type.

use thiserror::Error;

use crate::month::Month;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid month: {0}")]
    InvalidMonth(String),

    #[error("missing mandatory column: {0}")]
    MissingColumn(String),

    #[error("duplicate observation for stock {stock} at {month}")]
    DuplicateObservation { stock: String, month: Month },

    #[error("duplicate factor month {0}")]
    DuplicateFactorMonth(Month),

    #[error("factor {factor} missing for month {month}")]
    MissingFactor { factor: String, month: Month },

    #[error("month {month} outside dataset range {range}")]
    MonthOutOfRange { month: Month, range: String },

    #[error("series too short: {len} months, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },

    #[error("non-finite value in series at index {0}")]
    NonFinite(usize),

    #[error("gap of {gap} missing values at index {index} exceeds fill policy")]
    GapTooLong { index: usize, gap: usize },

    #[error("negative turnover {value} at {month}")]
    NegativeTurnover { value: f64, month: Month },

    #[error("scale {0} out of range 0..=6")]
    InvalidScale(usize),

    #[error("fewer stocks ({got}) than groups ({needed})")]
    TooFewStocks { needed: usize, got: usize },

    #[error("degenerate sort input: {0}")]
    DegenerateSort(String),

    #[error("empty portfolio membership at {0}")]
    EmptyMembership(Month),

    #[error("series have no overlapping months")]
    EmptyIntersection,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("length mismatch: y has {y_len} rows, X has {x_len}")]
    LengthMismatch { y_len: usize, x_len: usize },

    #[error("too few observations: {n} rows for {k} coefficients")]
    TooFewObservations { n: usize, k: usize },

    #[error("lag {lag} must be smaller than sample size {n}")]
    LagTooLarge { lag: usize, n: usize },

    #[error("all months infeasible for cross-sectional regression")]
    NoFeasibleMonths,

    #[error("infeasible configuration: {0}")]
    InvalidConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the study stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Process exit code: 2 for config/validation problems, 3 for data
    /// problems, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::InvalidMonth(_) | Error::InvalidScale(_) | Error::InvalidConfig(_) => 2,
            Error::MissingColumn(_)
            | Error::DuplicateObservation { .. }
            | Error::DuplicateFactorMonth(_)
            | Error::MissingFactor { .. }
            | Error::MonthOutOfRange { .. }
            | Error::SeriesTooShort { .. }
            | Error::GapTooLong { .. }
            | Error::NegativeTurnover { .. }
            | Error::TooFewStocks { .. }
            | Error::DegenerateSort(_)
            | Error::EmptyMembership(_)
            | Error::EmptyIntersection
            | Error::TooFewObservations { .. }
            | Error::NoFeasibleMonths
            | Error::Data(_)
            | Error::Io(_) => 3,
            Error::NonFinite(_)
            | Error::RankDeficient
            | Error::LengthMismatch { .. }
            | Error::LagTooLarge { .. }
            | Error::Numerical(_) => 4,
        }
    }
}
