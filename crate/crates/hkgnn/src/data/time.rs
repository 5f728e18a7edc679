//! Weekly time partition. Each day splits into 48 half-hour slots, giving
//! 336 weekly slots; slots are computed in the check-in's local time since
//! weekday patterns are a local-time phenomenon.

use chrono::{DateTime, Datelike, FixedOffset, TimeZone, Timelike, Utc};

use crate::data::TimeKey;

/// Slot, month, and year of a UTC instant viewed at a fixed offset.
pub fn time_partition(timestamp: i64, tz_offset_minutes: i32) -> TimeKey {
    let utc = Utc.timestamp_opt(timestamp, 0).unwrap();
    let offset = FixedOffset::east_opt(tz_offset_minutes * 60)
        .unwrap_or_else(|| FixedOffset::east_opt(0).unwrap());
    let local: DateTime<FixedOffset> = utc.with_timezone(&offset);
    let dow = local.weekday().num_days_from_monday() as u16;
    let slot = dow * 48 + local.hour() as u16 * 2 + if local.minute() >= 30 { 1 } else { 0 };
    TimeKey {
        t_d: slot,
        t_m: local.month() as u8,
        t_y: local.year(),
    }
}
