//! ISO-8601 year-week keys.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Monday of ISO week 1 of 1970, the zero ordinal.
fn epoch() -> NaiveDate {
    NaiveDate::from_isoywd_opt(1970, 1, Weekday::Mon).expect("valid epoch")
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("invalid ISO week {0:?}, expected YYYY-Www")]
pub struct WeekParseError(pub String);

/// An ISO year-week, stored as the number of weeks since 1970-W01.
///
/// The ordinal makes weeks totally ordered across year boundaries, so
/// `2024-W52 < 2025-W01` and the difference is a plain subtraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Week(i32);

impl Week {
    pub fn from_iso(year: i32, week: u32) -> Option<Self> {
        let monday = NaiveDate::from_isoywd_opt(year, week, Weekday::Mon)?;
        let days = (monday - epoch()).num_days();
        Some(Self((days / 7) as i32))
    }

    pub const fn from_ordinal(ordinal: i32) -> Self {
        Self(ordinal)
    }

    pub const fn ordinal(self) -> i32 {
        self.0
    }

    pub fn next(self) -> Self {
        Self(self.0 + 1)
    }

    pub fn offset(self, weeks: i32) -> Self {
        Self(self.0 + weeks)
    }

    fn monday(self) -> NaiveDate {
        epoch() + chrono::Duration::weeks(i64::from(self.0))
    }

    /// (ISO year, ISO week number).
    pub fn iso(self) -> (i32, u32) {
        let iw = self.monday().iso_week();
        (iw.year(), iw.week())
    }
}

impl fmt::Display for Week {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (year, week) = self.iso();
        write!(f, "{year:04}-W{week:02}")
    }
}

impl FromStr for Week {
    type Err = WeekParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || WeekParseError(s.to_string());
        let trimmed = s.trim();
        let (year, week) = trimmed.split_once("-W").ok_or_else(err)?;
        if year.len() != 4 || week.len() != 2 {
            return Err(err());
        }
        let year: i32 = year.parse().map_err(|_| err())?;
        let week: u32 = week.parse().map_err(|_| err())?;
        Week::from_iso(year, week).ok_or_else(err)
    }
}

impl Serialize for Week {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Week {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints() {
        let w: Week = "2024-W10".parse().unwrap();
        assert_eq!(w.to_string(), "2024-W10");
        assert_eq!(w.iso(), (2024, 10));
    }

    #[test]
    fn orders_across_year_boundary() {
        // 2020 has 53 ISO weeks.
        let last: Week = "2020-W53".parse().unwrap();
        let first: Week = "2021-W01".parse().unwrap();
        assert!(last < first);
        assert_eq!(last.next(), first);
        assert_eq!("2024-W52".parse::<Week>().unwrap().next().to_string(), "2025-W01");
    }

    #[test]
    fn rejects_bad_keys() {
        for bad in ["2024-10", "2024-W00", "2021-W53", "24-W10", "2024-W1", "2024W10", ""] {
            assert!(bad.parse::<Week>().is_err(), "{bad}");
        }
    }

    #[test]
    fn epoch_is_zero() {
        assert_eq!(Week::from_iso(1970, 1).unwrap().ordinal(), 0);
        assert_eq!(Week::from_ordinal(0).to_string(), "1970-W01");
    }
}
