//! Calendar dates stored as 8-digit `YYYYMMDD` integers.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A validated calendar date in `YYYYMMDD` form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Date(u32);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid date {0:?}: expected YYYYMMDD")]
pub struct InvalidDate(pub String);

impl Date {
    /// End date marking the current (open) version of a history row.
    pub const OPEN_END: Date = Date(99991231);
    pub const MIN: Date = Date(10101);

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self, InvalidDate> {
        NaiveDate::from_ymd_opt(year, month, day)
            .map(Self::from_naive)
            .ok_or_else(|| InvalidDate(format!("{year:04}{month:02}{day:02}")))
    }

    pub fn from_yyyymmdd(value: u32) -> Result<Self, InvalidDate> {
        let (y, m, d) = (value / 10_000, (value / 100) % 100, value % 100);
        if y == 0 {
            return Err(InvalidDate(value.to_string()));
        }
        Self::from_ymd(y as i32, m, d).map_err(|_| InvalidDate(value.to_string()))
    }

    pub fn as_u32(self) -> u32 {
        self.0
    }

    pub fn is_open_end(self) -> bool {
        self == Self::OPEN_END
    }

    fn naive(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(
            (self.0 / 10_000) as i32,
            (self.0 / 100) % 100,
            self.0 % 100,
        )
        .expect("Date invariant: always a valid calendar date")
    }

    fn from_naive(d: NaiveDate) -> Self {
        Date(d.year() as u32 * 10_000 + d.month() * 100 + d.day())
    }

    /// The previous calendar day. `None` only for the first representable day.
    pub fn pred(self) -> Option<Date> {
        self.naive().pred_opt().map(Self::from_naive)
    }

    pub fn succ(self) -> Option<Date> {
        self.naive().succ_opt().map(Self::from_naive)
    }

    pub fn add_days(self, days: i64) -> Option<Date> {
        self.naive()
            .checked_add_signed(chrono::Duration::days(days))
            .map(Self::from_naive)
            .filter(|d| d.0 <= Self::OPEN_END.0 && d.0 >= Self::MIN.0)
    }
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08}", self.0)
    }
}

impl FromStr for Date {
    type Err = InvalidDate;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.len() != 8 || !t.bytes().all(|b| b.is_ascii_digit()) {
            return Err(InvalidDate(s.to_string()));
        }
        let v: u32 = t.parse().map_err(|_| InvalidDate(s.to_string()))?;
        Self::from_yyyymmdd(v).map_err(|_| InvalidDate(s.to_string()))
    }
}

impl Serialize for Date {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(self.0)
    }
}

impl<'de> Deserialize<'de> for Date {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u32::deserialize(d)?;
        Date::from_yyyymmdd(v).map_err(serde::de::Error::custom)
    }
}
