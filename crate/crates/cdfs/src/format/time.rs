//! Timestamps: 64-bit seconds since 1901-01-01T00:00:00 GMT, leap seconds
//! not counted, serialized low-byte first.

use std::fmt;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use chrono::{DateTime, NaiveDate, Utc};

use crate::error::{Error, Result};

/// Seconds between the CDFS epoch and the UNIX epoch: 25202 days.
pub const UNIX_EPOCH_OFFSET: u64 = 2_177_452_800;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn from_civil(
        year: i32,
        month: u32,
        day: u32,
        hour: u32,
        minute: u32,
        second: u32,
    ) -> Result<Timestamp> {
        let date = NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| d.and_hms_opt(hour, minute, second))
            .ok_or_else(|| Error::InvalidField(format!("bad civil time {year}-{month}-{day}")))?;
        let unix = date.and_utc().timestamp();
        let cdfs = unix + UNIX_EPOCH_OFFSET as i64;
        if cdfs < 0 {
            return Err(Error::PreEpochTime);
        }
        Ok(Timestamp(cdfs as u64))
    }

    /// (year, month, day, hour, minute, second) in GMT.
    pub fn to_civil(self) -> (i32, u32, u32, u32, u32, u32) {
        use chrono::{Datelike, Timelike};
        let unix = self.0 as i64 - UNIX_EPOCH_OFFSET as i64;
        let dt = DateTime::<Utc>::from_timestamp(unix, 0).expect("in range");
        (
            dt.year(),
            dt.month(),
            dt.day(),
            dt.hour(),
            dt.minute(),
            dt.second(),
        )
    }

    pub fn from_unix_seconds(unix: i64) -> Result<Timestamp> {
        let cdfs = unix + UNIX_EPOCH_OFFSET as i64;
        if cdfs < 0 {
            return Err(Error::PreEpochTime);
        }
        Ok(Timestamp(cdfs as u64))
    }

    pub fn to_unix_seconds(self) -> i64 {
        self.0 as i64 - UNIX_EPOCH_OFFSET as i64
    }

    pub fn from_system_time(t: SystemTime) -> Result<Timestamp> {
        match t.duration_since(UNIX_EPOCH) {
            Ok(d) => Self::from_unix_seconds(d.as_secs() as i64),
            Err(e) => Self::from_unix_seconds(-(e.duration().as_secs() as i64)),
        }
    }

    pub fn to_system_time(self) -> SystemTime {
        let unix = self.to_unix_seconds();
        if unix >= 0 {
            UNIX_EPOCH + Duration::from_secs(unix as u64)
        } else {
            UNIX_EPOCH - Duration::from_secs(unix.unsigned_abs())
        }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (y, mo, d, h, mi, s) = self.to_civil();
        write!(f, "{y:04}-{mo:02}-{d:02} {h:02}:{mi:02}:{s:02}")
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Timestamp({} = {})", self.0, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_is_zero() {
        assert_eq!(Timestamp::from_civil(1901, 1, 1, 0, 0, 0).unwrap().0, 0);
    }

    #[test]
    fn one_day_in() {
        assert_eq!(Timestamp::from_civil(1901, 1, 2, 0, 0, 0).unwrap().0, 86_400);
    }

    #[test]
    fn unix_epoch_by_day_count_oracle() {
        // Independent oracle: count days from 1901-01-01 to 1970-01-01 with
        // plain Gregorian rules.
        fn leap(y: i32) -> bool {
            (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
        }
        let days: u64 = (1901..1970)
            .map(|y| if leap(y) { 366u64 } else { 365u64 })
            .sum();
        assert_eq!(days, 25_202);
        assert_eq!(
            Timestamp::from_civil(1970, 1, 1, 0, 0, 0).unwrap().0,
            days * 86_400
        );
        assert_eq!(days * 86_400, UNIX_EPOCH_OFFSET);
    }

    #[test]
    fn civil_round_trip() {
        let t = Timestamp::from_civil(1985, 7, 13, 16, 20, 5).unwrap();
        assert_eq!(t.to_civil(), (1985, 7, 13, 16, 20, 5));
        assert_eq!(t.to_string(), "1985-07-13 16:20:05");
    }

    #[test]
    fn pre_epoch_is_rejected() {
        assert!(matches!(
            Timestamp::from_civil(1900, 12, 31, 23, 59, 59),
            Err(Error::PreEpochTime)
        ));
    }

    #[test]
    fn leap_year_rules_are_gregorian() {
        // 1904 is a leap year, 1900 is not part of the range but 2000 is a
        // 400-year leap; spot check the day arithmetic across 1904-02-29.
        let feb28 = Timestamp::from_civil(1904, 2, 28, 0, 0, 0).unwrap();
        let feb29 = Timestamp::from_civil(1904, 2, 29, 0, 0, 0).unwrap();
        let mar01 = Timestamp::from_civil(1904, 3, 1, 0, 0, 0).unwrap();
        assert_eq!(feb29.0 - feb28.0, 86_400);
        assert_eq!(mar01.0 - feb29.0, 86_400);
    }
}
