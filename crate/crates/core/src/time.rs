//! Calendar timestamps (UTC, whole seconds) and time-of-day parsing.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A UTC instant with one-second resolution, stored as seconds since
/// 1970-01-01 00:00:00.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid datetime {0:?}, expected YYYY-MM-DD HH:MM:SS")]
pub struct ParseTimestampError(pub String);

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("invalid time of day {0:?}, expected HH:MM or HH:MM:SS")]
pub struct ParseTimeOfDayError(pub String);

// Howard Hinnant's days_from_civil / civil_from_days.
fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

fn days_in_month(y: i64, m: u32) -> u32 {
    match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ if (y % 4 == 0 && y % 100 != 0) || y % 400 == 0 => 29,
        _ => 28,
    }
}

fn digits(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

impl Timestamp {
    pub const fn from_unix_seconds(secs: i64) -> Self {
        Timestamp(secs)
    }

    pub const fn unix_seconds(self) -> i64 {
        self.0
    }

    pub fn from_civil(year: i64, month: u32, day: u32, hour: u32, min: u32, sec: u32) -> Option<Self> {
        if !(1..=12).contains(&month)
            || day == 0
            || day > days_in_month(year, month)
            || hour > 23
            || min > 59
            || sec > 59
        {
            return None;
        }
        let days = days_from_civil(year, month, day);
        Some(Timestamp(days * 86_400 + (hour * 3600 + min * 60 + sec) as i64))
    }

    /// Parses `YYYY-MM-DD HH:MM:SS`.
    pub fn parse(text: &str) -> Result<Self, ParseTimestampError> {
        let err = || ParseTimestampError(String::from(text));
        let (date, clock) = text.split_once(' ').ok_or_else(err)?;
        let mut dp = date.split('-');
        let mut cp = clock.split(':');
        let (y, m, d) = (dp.next(), dp.next(), dp.next());
        let (hh, mm, ss) = (cp.next(), cp.next(), cp.next());
        if dp.next().is_some() || cp.next().is_some() {
            return Err(err());
        }
        let y = y.filter(|s| s.len() == 4).and_then(digits).ok_or_else(err)?;
        let field = |s: Option<&str>| s.filter(|s| s.len() == 2).and_then(digits).ok_or_else(err);
        Self::from_civil(y as i64, field(m)?, field(d)?, field(hh)?, field(mm)?, field(ss)?)
            .ok_or_else(err)
    }

    /// Seconds elapsed since midnight (UTC), in `[0, 86400)`.
    pub fn seconds_of_day(self) -> u32 {
        self.0.rem_euclid(86_400) as u32
    }

    pub fn hour(self) -> u32 {
        self.seconds_of_day() / 3600
    }

    pub fn plus_seconds(self, secs: i64) -> Self {
        Timestamp(self.0 + secs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (y, m, d) = civil_from_days(self.0.div_euclid(86_400));
        let s = self.seconds_of_day();
        write!(f, "{:04}-{:02}-{:02} {:02}:{:02}:{:02}", y, m, d, s / 3600, s / 60 % 60, s % 60)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Parses `HH:MM` or `HH:MM:SS` into seconds since midnight.
pub fn parse_time_of_day(text: &str) -> Result<u32, ParseTimeOfDayError> {
    let err = || ParseTimeOfDayError(String::from(text));
    let parts: alloc::vec::Vec<&str> = text.split(':').collect();
    if !(2..=3).contains(&parts.len()) || parts.iter().any(|p| p.len() != 2) {
        return Err(err());
    }
    let h = digits(parts[0]).filter(|&h| h < 24).ok_or_else(err)?;
    let m = digits(parts[1]).filter(|&m| m < 60).ok_or_else(err)?;
    let s = match parts.get(2) {
        Some(p) => digits(p).filter(|&s| s < 60).ok_or_else(err)?,
        None => 0,
    };
    Ok(h * 3600 + m * 60 + s)
}

/// Daily window index of a time of day when the day is cut into
/// `num_windows` equal blocks.
pub fn window_of(seconds_of_day: f64, num_windows: usize) -> usize {
    let w = libm::floor(seconds_of_day * num_windows as f64 / 86_400.0) as usize;
    w.min(num_windows - 1)
}
