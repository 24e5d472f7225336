//! Calendar months as integer indices.
//!
//! All date arithmetic in the crate happens in month units. The epoch is
//! January 1969 (`Month(0)`), the first month of the sample the engine was
//! designed around, so 1969-02 is `Month(1)` and 1970-01 is `Month(12)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Year of `Month(0)`.
pub const EPOCH_YEAR: i32 = 1969;

/// A calendar month encoded as months since January 1969.
///
/// Supports ordinary integer arithmetic through [`Month::offset`] and the
/// `+`/`-` operators on `i32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Month(pub i32);

impl Month {
    /// Builds a month from a calendar year and 1-based month-of-year.
    pub fn from_ym(year: i32, month: u32) -> Result<Self, Error> {
        if month == 0 || month > 12 {
            return Err(Error::InvalidMonth(format!("{year}-{month:02}")));
        }
        Ok(Month((year - EPOCH_YEAR) * 12 + month as i32 - 1))
    }

    /// Calendar year of this month.
    pub fn year(self) -> i32 {
        EPOCH_YEAR + self.0.div_euclid(12)
    }

    /// 1-based month-of-year.
    pub fn month_of_year(self) -> u32 {
        (self.0.rem_euclid(12) + 1) as u32
    }

    /// This month shifted by `delta` months.
    pub fn offset(self, delta: i32) -> Self {
        Month(self.0 + delta)
    }

    /// Index relative to another month (`self - other` in months).
    pub fn months_since(self, other: Month) -> i32 {
        self.0 - other.0
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{:02}", self.year(), self.month_of_year())
    }
}

impl FromStr for Month {
    type Err = Error;

    /// Parses `YYYYMM` or `YYYY-MM`.
    fn from_str(s: &str) -> Result<Self, Error> {
        let t = s.trim();
        let (y, m) = if let Some((y, m)) = t.split_once('-') {
            (y, m)
        } else if t.len() == 6 && t.chars().all(|c| c.is_ascii_digit()) {
            t.split_at(4)
        } else {
            return Err(Error::InvalidMonth(s.to_string()));
        };
        let year: i32 = y.parse().map_err(|_| Error::InvalidMonth(s.to_string()))?;
        let month: u32 = m.parse().map_err(|_| Error::InvalidMonth(s.to_string()))?;
        Month::from_ym(year, month)
    }
}

impl std::ops::Add<i32> for Month {
    type Output = Month;
    fn add(self, rhs: i32) -> Month {
        self.offset(rhs)
    }
}

impl std::ops::Sub<i32> for Month {
    type Output = Month;
    fn sub(self, rhs: i32) -> Month {
        self.offset(-rhs)
    }
}

/// Inclusive month range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthRange {
    pub first: Month,
    pub last: Month,
}

impl MonthRange {
    pub fn new(first: Month, last: Month) -> Self {
        MonthRange { first, last }
    }

    pub fn contains(&self, m: Month) -> bool {
        m >= self.first && m <= self.last
    }

    pub fn len(&self) -> usize {
        (self.last.0 - self.first.0 + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }

    /// Iterates months from `first` through `last` inclusive.
    pub fn iter(&self) -> impl Iterator<Item = Month> {
        (self.first.0..=self.last.0).map(Month)
    }
}

impl fmt::Display for MonthRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}
