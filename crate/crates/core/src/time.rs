//! Hour-resolution timestamps.

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, TimeDelta, Timelike};

pub type Hour = NaiveDateTime;

const ACCEPTED: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S%.f",
];

/// Parse a date-time and floor it to the hour.
pub fn parse_hour(s: &str) -> Option<Hour> {
    let s = s.trim();
    let s = s.strip_suffix('Z').unwrap_or(s);
    ACCEPTED
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .map(floor_hour)
}

pub fn floor_hour(t: NaiveDateTime) -> Hour {
    t.date()
        .and_time(NaiveTime::from_hms_opt(t.hour(), 0, 0).expect("valid hour"))
}

pub fn from_parts(year: i32, month: u32, day: u32, hour: u32) -> Option<Hour> {
    NaiveDate::from_ymd_opt(year, month, day)?.and_hms_opt(hour, 0, 0)
}

/// `YYYY-MM-DD HH:00:00`, the prepared-CSV format.
pub fn format_csv(t: Hour) -> String {
    t.format("%Y-%m-%d %H:00:00").to_string()
}

/// `YYYY-MM-DDTHH:00:00`, used on the wire.
pub fn format_iso(t: Hour) -> String {
    t.format("%Y-%m-%dT%H:00:00").to_string()
}

pub fn next_hour(t: Hour) -> Hour {
    t + TimeDelta::hours(1)
}

pub fn add_hours(t: Hour, n: i64) -> Hour {
    t + TimeDelta::hours(n)
}

pub fn hours_between(a: Hour, b: Hour) -> i64 {
    (b - a).num_hours()
}

pub fn hour_of_day(t: Hour) -> u32 {
    t.hour()
}

/// Monday = 0 .. Sunday = 6.
pub fn day_of_week(t: Hour) -> u32 {
    t.weekday().num_days_from_monday()
}

/// Serde adapter for [`format_iso`] / [`parse_hour`].
pub mod iso {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use super::Hour;

    pub fn serialize<S: Serializer>(t: &Hour, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::format_iso(*t))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Hour, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_hour(&s).ok_or_else(|| de::Error::custom(format!("bad timestamp '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_common_layouts() {
        let want = from_parts(2021, 5, 1, 7).unwrap();
        for s in [
            "2021-05-01 07:00:00",
            "2021-05-01T07:00:00",
            "2021-05-01 07:00",
            "2021-05-01T07:00Z",
            "2021-05-01 07:42:13",
        ] {
            assert_eq!(parse_hour(s), Some(want), "{s}");
        }
        assert_eq!(parse_hour("2021-13-01 00:00:00"), None);
        assert_eq!(parse_hour("yesterday"), None);
    }

    #[test]
    fn formats() {
        let t = from_parts(2020, 6, 1, 4).unwrap();
        assert_eq!(format_csv(t), "2020-06-01 04:00:00");
        assert_eq!(format_iso(t), "2020-06-01T04:00:00");
        assert_eq!(day_of_week(t), 0);
    }
}
