//! ISO-8601 epidemiological weeks and zone-corrected midnight timestamps.

use chrono::{DateTime, Datelike, Duration, FixedOffset, LocalResult, NaiveDate, NaiveTime, TimeZone, Weekday};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EpiWeekError {
    #[error("week {week} outside 1..={max} for {year}")]
    WeekOutOfRange { year: i32, week: u32, max: u32 },
    #[error("year {0} is outside the supported calendar")]
    YearOutOfRange(i32),
    #[error("unknown time zone {0:?}")]
    ZoneResolution(String),
}

/// Number of ISO weeks in `year`: 53 when the year starts on a Thursday, or
/// is a leap year starting on a Wednesday.
pub fn iso_weeks_in_year(year: i32) -> u32 {
    let Some(jan1) = NaiveDate::from_ymd_opt(year, 1, 1) else {
        return 52;
    };
    let leap = NaiveDate::from_ymd_opt(year, 2, 29).is_some();
    match jan1.weekday() {
        Weekday::Thu => 53,
        Weekday::Wed if leap => 53,
        _ => 52,
    }
}

/// Monday of ISO week `week` of ISO year `year`. Week 1 is the week holding
/// January 4th.
pub fn epiweek_to_date(year: i32, week: u32) -> Result<NaiveDate, EpiWeekError> {
    let max = iso_weeks_in_year(year);
    if week == 0 || week > max {
        return Err(EpiWeekError::WeekOutOfRange { year, week, max });
    }
    let jan4 = NaiveDate::from_ymd_opt(year, 1, 4).ok_or(EpiWeekError::YearOutOfRange(year))?;
    let week1_monday = jan4 - Duration::days(i64::from(jan4.weekday().num_days_from_monday()));
    Ok(week1_monday + Duration::weeks(i64::from(week - 1)))
}

/// Seconds since the epoch of 00:00 UTC on `date`.
pub fn utc_midnight(date: NaiveDate) -> i64 {
    date.and_time(NaiveTime::MIN).and_utc().timestamp()
}

/// A resolved time zone: an IANA identifier or a fixed UTC offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Zone {
    Named(Tz),
    Fixed(FixedOffset),
}

impl Zone {
    /// Accepts IANA names (`America/Havana`), `UTC`/`Z`, and fixed offsets
    /// written `+05:00`, `-0500`, `UTC-05:00` or `GMT+3`. The Unicode minus
    /// sign is accepted too.
    pub fn parse(id: &str) -> Result<Zone, EpiWeekError> {
        let trimmed = id.trim();
        let fail = || EpiWeekError::ZoneResolution(id.to_owned());
        if trimmed.is_empty() {
            return Err(fail());
        }
        let upper = trimmed.to_ascii_uppercase();
        let offset_part = ["UTC", "GMT"]
            .iter()
            .find_map(|p| upper.strip_prefix(p))
            .map(str::to_owned)
            .or_else(|| (trimmed.starts_with(['+', '-', '\u{2212}'])).then(|| trimmed.to_owned()));
        match offset_part {
            Some(rest) if rest.is_empty() => Ok(Zone::Fixed(FixedOffset::east_opt(0).unwrap())),
            Some(rest) => parse_offset(&rest).map(Zone::Fixed).ok_or_else(fail),
            None if upper == "Z" => Ok(Zone::Fixed(FixedOffset::east_opt(0).unwrap())),
            None => trimmed.parse::<Tz>().map(Zone::Named).map_err(|_| fail()),
        }
    }
}

fn parse_offset(s: &str) -> Option<FixedOffset> {
    let s = s.replace('\u{2212}', "-");
    let (sign, body) = match s.as_bytes().first()? {
        b'+' => (1, &s[1..]),
        b'-' => (-1, &s[1..]),
        _ => return None,
    };
    let (h, m) = match body.split_once(':') {
        Some((h, m)) => (h, m),
        None if body.len() == 4 => body.split_at(2),
        None => (body, "0"),
    };
    if h.is_empty() || h.len() > 2 || m.len() > 2 || !h.bytes().chain(m.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let h: i32 = h.parse().ok()?;
    let m: i32 = m.parse().ok()?;
    if h > 18 || m > 59 {
        return None;
    }
    FixedOffset::east_opt(sign * (h * 3600 + m * 60))
}

fn first_instant<T: TimeZone>(tz: &T, date: NaiveDate) -> i64 {
    // Skipped midnights (DST starting at 00:00) resolve to the first local
    // minute that exists; ambiguous ones to the earlier instant.
    let mut local = date.and_time(NaiveTime::MIN);
    for _ in 0..(48 * 60) {
        match tz.from_local_datetime(&local) {
            LocalResult::Single(t) => return t.timestamp(),
            LocalResult::Ambiguous(a, b) => return a.timestamp().min(b.timestamp()),
            LocalResult::None => local += Duration::minutes(1),
        }
    }
    unreachable!("no valid local time within two days of {date}")
}

/// Seconds since the epoch of local midnight on `date` in `zone`.
pub fn local_midnight_timestamp(date: NaiveDate, zone: &str) -> Result<i64, EpiWeekError> {
    Ok(match Zone::parse(zone)? {
        Zone::Named(tz) => first_instant(&tz, date),
        Zone::Fixed(off) => first_instant(&off, date),
    })
}

/// Calendar date of `timestamp` as seen in `zone`.
pub fn local_date(timestamp: i64, zone: &str) -> Result<NaiveDate, EpiWeekError> {
    let utc = DateTime::from_timestamp(timestamp, 0).ok_or_else(|| EpiWeekError::ZoneResolution(zone.to_owned()))?;
    Ok(match Zone::parse(zone)? {
        Zone::Named(tz) => utc.with_timezone(&tz).date_naive(),
        Zone::Fixed(off) => utc.with_timezone(&off).date_naive(),
    })
}

/// An epidemiological week pinned to its Monday.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpiWeekDate {
    pub year: i32,
    pub week: u32,
    pub date: NaiveDate,
    pub utc_timestamp: i64,
    pub local_timestamp: Option<i64>,
}

impl EpiWeekDate {
    pub fn new(year: i32, week: u32) -> Result<Self, EpiWeekError> {
        let date = epiweek_to_date(year, week)?;
        Ok(Self {
            year,
            week,
            date,
            utc_timestamp: utc_midnight(date),
            local_timestamp: None,
        })
    }

    pub fn localize(&mut self, zone: &str) -> Result<i64, EpiWeekError> {
        let ts = local_midnight_timestamp(self.date, zone)?;
        self.local_timestamp = Some(ts);
        Ok(ts)
    }
}
