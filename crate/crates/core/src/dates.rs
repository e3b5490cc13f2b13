//! Trading-calendar helpers over an ordered list of panel dates.
//!
//! Offsets are calendar-day offsets; lookups resolve to the nearest
//! trading day at or before the target.

use chrono::{Datelike, Duration, NaiveDate};

/// Index of the latest date in `dates` that is on or before `target`.
pub fn resolve_at_or_before(dates: &[NaiveDate], target: NaiveDate) -> Option<usize> {
    let n = dates.partition_point(|d| *d <= target);
    if n == 0 {
        None
    } else {
        Some(n - 1)
    }
}

/// The calendar date `days_back` days before `date`.
pub fn offset_days(date: NaiveDate, days_back: i64) -> NaiveDate {
    date - Duration::days(days_back)
}

/// Whole calendar days from `from` to `to`.
pub fn days_between(from: NaiveDate, to: NaiveDate) -> i64 {
    (to - from).num_days()
}

/// True when `dates[idx]` is the first listed trading day of its month.
pub fn is_month_start(dates: &[NaiveDate], idx: usize) -> bool {
    if idx == 0 {
        return true;
    }
    let d = dates[idx];
    let p = dates[idx - 1];
    (p.year(), p.month()) != (d.year(), d.month())
}

/// Indices of the first trading day of each month, in order.
pub fn month_start_indices(dates: &[NaiveDate]) -> Vec<usize> {
    (0..dates.len())
        .filter(|&i| is_month_start(dates, i))
        .collect()
}

/// Indices of dates falling in the inclusive calendar window `[lo, hi]`.
pub fn window_indices(dates: &[NaiveDate], lo: NaiveDate, hi: NaiveDate) -> std::ops::Range<usize> {
    let start = dates.partition_point(|d| *d < lo);
    let end = dates.partition_point(|d| *d <= hi);
    start..end.max(start)
}

/// `n` consecutive calendar dates starting at `start`.
pub fn consecutive_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    (0..n)
        .map(|i| start + Duration::days(i as i64))
        .collect()
}
