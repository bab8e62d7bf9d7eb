//! Calendar-month arithmetic in UTC.

use chrono::{DateTime, Datelike, NaiveDate};

use super::DataError;

/// Months since 1970-01 for a unix timestamp (negative before the epoch).
pub fn month_index(timestamp: i64) -> i64 {
    let dt = DateTime::from_timestamp(timestamp, 0).expect("timestamp within chrono range");
    (dt.year() as i64 - 1970) * 12 + dt.month0() as i64
}

/// Unix timestamp of 00:00:00 UTC on the first day of the given month index.
pub fn month_start(index: i64) -> i64 {
    let year = 1970 + index.div_euclid(12);
    let month = index.rem_euclid(12) as u32 + 1;
    NaiveDate::from_ymd_opt(year as i32, month, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid calendar month")
        .and_utc()
        .timestamp()
}

/// Adds calendar months to a timestamp, clamping the day of month when needed.
pub fn add_months(timestamp: i64, months: u32) -> i64 {
    let dt = DateTime::from_timestamp(timestamp, 0).expect("timestamp within chrono range");
    dt.checked_add_months(chrono::Months::new(months))
        .expect("month addition within chrono range")
        .timestamp()
}

/// Parses `YYYY-MM`, `YYYY/MM`, `YYYY-MM-DD` or raw unix seconds.
pub fn parse_time(text: &str) -> Result<i64, DataError> {
    let t = text.trim();
    if let Ok(secs) = t.parse::<i64>() {
        return Ok(secs);
    }
    let normalized = t.replace('/', "-");
    let date = if normalized.matches('-').count() == 1 {
        NaiveDate::parse_from_str(&format!("{normalized}-01"), "%Y-%m-%d")
    } else {
        NaiveDate::parse_from_str(&normalized, "%Y-%m-%d")
    }
    .map_err(|_| DataError::InvalidTime(text.to_string()))?;
    Ok(date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp())
}

pub fn format_date(timestamp: i64) -> String {
    DateTime::from_timestamp(timestamp, 0)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| timestamp.to_string())
}
