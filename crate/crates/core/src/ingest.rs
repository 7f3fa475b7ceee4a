//! Event-log parsing and filtering into per-user, per-day streams.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::TowerRegistry;

pub const EVENT_CSV_HEADER: [&str; 3] = ["user_id", "timestamp", "tower_id"];

const SECONDS_PER_DAY: u32 = 86_400;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    pub user_id: String,
    pub timestamp: NaiveDateTime,
    pub tower_id: String,
}

impl Event {
    pub fn new(user_id: impl Into<String>, timestamp: NaiveDateTime, tower_id: impl Into<String>) -> Self {
        Event { user_id: user_id.into(), timestamp, tower_id: tower_id.into() }
    }

    /// Seconds since local midnight.
    pub fn seconds_of_day(&self) -> u32 {
        self.timestamp.num_seconds_from_midnight()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserDay {
    pub user_id: String,
    pub date: NaiveDate,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedEvents {
    pub events: Vec<Event>,
    pub rows_read: u64,
    pub rows_malformed: u64,
}

/// Counters reported after ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_malformed: u64,
    pub events_dropped_indoor: u64,
    pub events_dropped_window: u64,
    pub events_dropped_unknown_tower: u64,
}

/// Half-open daily window `[start_s, end_s)` in seconds since midnight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyWindow {
    pub start_s: u32,
    pub end_s: u32,
}

impl Default for DailyWindow {
    fn default() -> Self {
        DailyWindow { start_s: 6 * 3600, end_s: SECONDS_PER_DAY }
    }
}

impl DailyWindow {
    pub fn new(start_s: u32, end_s: u32) -> Result<Self> {
        if start_s >= end_s || end_s > SECONDS_PER_DAY {
            return Err(Error::Config(format!("invalid daily window [{start_s}, {end_s})")));
        }
        Ok(DailyWindow { start_s, end_s })
    }

    /// Parses `HH:MM` (24:00 allowed as the end of day).
    pub fn parse_hhmm(s: &str) -> Result<u32> {
        let bad = || Error::Config(format!("bad time of day `{s}`"));
        let (h, m) = s.trim().split_once(':').ok_or_else(bad)?;
        let h: u32 = h.parse().map_err(|_| bad())?;
        let m: u32 = m.parse().map_err(|_| bad())?;
        if m >= 60 || h > 24 || (h == 24 && m > 0) {
            return Err(bad());
        }
        Ok(h * 3600 + m * 60)
    }

    pub fn contains(&self, seconds_of_day: u32) -> bool {
        (self.start_s..self.end_s).contains(&seconds_of_day)
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Parses an event CSV. Rows with the wrong field count, empty ids or an
/// unparseable timestamp are counted as malformed and skipped.
pub fn parse_events<R: Read>(reader: R) -> Result<ParsedEvents> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != EVENT_CSV_HEADER {
        return Err(Error::Format(format!(
            "event log header must be `{}`, got `{}`",
            EVENT_CSV_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut out = ParsedEvents::default();
    for record in rdr.records() {
        out.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                out.rows_malformed += 1;
                continue;
            }
        };
        let parsed = (record.len() == 3)
            .then(|| (record.get(0).unwrap(), record.get(1).unwrap(), record.get(2).unwrap()))
            .filter(|(u, _, t)| !u.is_empty() && !t.is_empty())
            .and_then(|(u, ts, t)| parse_timestamp(ts).map(|ts| Event::new(u, ts, t)));
        match parsed {
            Some(e) => out.events.push(e),
            None => out.rows_malformed += 1,
        }
    }
    Ok(out)
}

/// Opens a file for reading, transparently decompressing gzip input.
pub fn open_input(path: &Path) -> Result<Box<dyn Read>> {
    let mut reader = BufReader::new(File::open(path)?);
    let gz = reader.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    Ok(if gz {
        Box::new(MultiGzDecoder::new(reader))
    } else {
        Box::new(reader)
    })
}

pub fn write_events_csv<W: Write>(events: &[Event], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EVENT_CSV_HEADER)?;
    for e in events {
        w.write_record([e.user_id.as_str(), &format_timestamp(&e.timestamp), e.tower_id.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Drops unusable events and groups the rest into sorted, de-duplicated
/// user-days. Returned days are ordered by (user, date).
pub fn filter_events(events: &[Event], registry: &TowerRegistry, window: DailyWindow) -> (Vec<UserDay>, IngestReport) {
    let mut report = IngestReport::default();
    let mut days: BTreeMap<(&str, NaiveDate), Vec<&Event>> = BTreeMap::new();
    for e in events {
        let Some(tower) = registry.get(&e.tower_id) else {
            report.events_dropped_unknown_tower += 1;
            continue;
        };
        if !tower.is_usable() {
            report.events_dropped_indoor += 1;
            continue;
        }
        if !window.contains(e.seconds_of_day()) {
            report.events_dropped_window += 1;
            continue;
        }
        days.entry((&e.user_id, e.timestamp.date())).or_default().push(e);
    }
    let days = days
        .into_iter()
        .map(|((user, date), mut evs)| {
            evs.sort_by_key(|e| e.timestamp);
            let mut seen = HashSet::with_capacity(evs.len());
            let events = evs
                .into_iter()
                .filter(|e| seen.insert((e.timestamp, e.tower_id.as_str())))
                .cloned()
                .collect();
            UserDay { user_id: user.to_owned(), date, events }
        })
        .collect();
    (days, report)
}

/// Restricts days to an inclusive date range; `None` bounds are open.
pub fn restrict_dates(days: Vec<UserDay>, from: Option<NaiveDate>, to: Option<NaiveDate>) -> Vec<UserDay> {
    days.into_iter()
        .filter(|d| from.is_none_or(|f| d.date >= f) && to.is_none_or(|t| d.date <= t))
        .collect()
}

pub fn flatten_days(days: &[UserDay]) -> Vec<Event> {
    days.iter().flat_map(|d| d.events.iter().cloned()).collect()
}
