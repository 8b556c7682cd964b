//! Raw trip records, ingest, and per-field pre-processing.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{parse_hhmm, TimeWindow};
use crate::error::{Error, Result};

pub const TRIP_HEADER: [&str; 7] = [
    "card_id",
    "date",
    "mode",
    "tap_on_time",
    "tap_on_loc",
    "tap_off_time",
    "tap_off_loc",
];

pub const LOOKUP_HEADER: [&str; 2] = ["stop_id", "postcode"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Bus,
    Ferry,
    Lightrail,
    Train,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Bus, Mode::Ferry, Mode::Lightrail, Mode::Train];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bus => "bus",
            Mode::Ferry => "ferry",
            Mode::Lightrail => "lightrail",
            Mode::Train => "train",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::MalformedInput(format!("unknown transport mode `{s}`")))
    }
}

/// Opaque card identifier. Never formatted: `Debug` prints a placeholder
/// and there is no `Display`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CardId(String);

impl CardId {
    pub fn new(id: impl Into<String>) -> Self {
        CardId(id.into())
    }

    /// Only for writing ingest-format fixtures.
    pub(crate) fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for CardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CardId(<redacted>)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tap {
    /// Minutes since midnight, 0..=1439.
    pub time: u32,
    pub location: String,
}

impl Tap {
    pub fn new(time: u32, location: impl Into<String>) -> Result<Self> {
        if time >= 1440 {
            return Err(Error::InvalidTime(time));
        }
        let location = location.into();
        if location.is_empty() {
            return Err(Error::MalformedInput("empty location code".into()));
        }
        Ok(Tap { time, location })
    }
}

/// One raw trip row. A missing tap-off marks an incomplete trip.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub card_id: CardId,
    pub date: NaiveDate,
    pub mode: Mode,
    pub tap_on: Tap,
    pub tap_off: Option<Tap>,
}

/// A trip with its card identifier removed. This is the only form the
/// release path accepts past ingest.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub date: NaiveDate,
    pub mode: Mode,
    pub tap_on: Tap,
    pub tap_off: Option<Tap>,
}

pub fn strip_identifiers(records: Vec<TripRecord>) -> Vec<Trip> {
    records
        .into_iter()
        .map(|r| Trip {
            date: r.date,
            mode: r.mode,
            tap_on: r.tap_on,
            tap_off: r.tap_off,
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct Ingest {
    pub records: Vec<TripRecord>,
    /// Rows that failed to parse. Their contents are not retained.
    pub malformed: u64,
}

fn parse_row(rec: &csv::StringRecord) -> Result<TripRecord> {
    if rec.len() != TRIP_HEADER.len() {
        return Err(Error::MalformedInput(format!(
            "expected {} fields, got {}",
            TRIP_HEADER.len(),
            rec.len()
        )));
    }
    let f = |i: usize| rec[i].trim();
    let date = NaiveDate::parse_from_str(f(1), "%Y-%m-%d")
        .map_err(|_| Error::MalformedInput("bad date".into()))?;
    let mode: Mode = f(2).parse()?;
    let tap_on = Tap::new(parse_hhmm(f(3))?, f(4))?;
    let tap_off = match (f(5), f(6)) {
        ("", "") => None,
        (t, l) => Some(Tap::new(parse_hhmm(t)?, l)?),
    };
    if f(0).is_empty() {
        return Err(Error::MalformedInput("empty card id".into()));
    }
    Ok(TripRecord {
        card_id: CardId::new(f(0)),
        date,
        mode,
        tap_on,
        tap_off,
    })
}

/// Read the trip CSV. The header must match exactly; bad rows are counted
/// as malformed and skipped.
pub fn read_trips(reader: impl Read) -> Result<Ingest> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(TRIP_HEADER) {
        return Err(Error::MalformedInput(format!(
            "trip header must be `{}`",
            TRIP_HEADER.join(",")
        )));
    }
    let mut ingest = Ingest::default();
    for rec in rdr.records() {
        match rec.map_err(Error::from).and_then(|r| parse_row(&r)) {
            Ok(t) => ingest.records.push(t),
            Err(_) => ingest.malformed += 1,
        }
    }
    Ok(ingest)
}

/// Validated time-bin width in minutes; must divide a day evenly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinWidth(u32);

impl BinWidth {
    pub fn new(minutes: u32) -> Result<Self> {
        if minutes == 0 || 1440 % minutes != 0 {
            return Err(Error::InvalidBinWidth(minutes));
        }
        Ok(BinWidth(minutes))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

/// The window containing `minutes`, labelled by its start.
pub fn bin_time(minutes: u32, width: u32) -> Result<TimeWindow> {
    let width = BinWidth::new(width)?;
    if minutes >= 1440 {
        return Err(Error::InvalidTime(minutes));
    }
    TimeWindow::from_start(minutes / width.0 * width.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocationRule {
    Identity,
    PostcodeLookup,
}

/// Stop id → postcode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostcodeTable(HashMap<String, String>);

impl PostcodeTable {
    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        PostcodeTable(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        if rdr.headers()?.iter().map(str::trim).ne(LOOKUP_HEADER) {
            return Err(Error::MalformedInput(format!(
                "lookup header must be `{}`",
                LOOKUP_HEADER.join(",")
            )));
        }
        let mut map = HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let (stop, postcode) = (rec[0].trim(), rec[1].trim());
            if stop.is_empty() || postcode.is_empty() {
                return Err(Error::MalformedInput(format!(
                    "lookup row {} has an empty field",
                    i + 2
                )));
            }
            if let Some(prev) = map.insert(stop.to_string(), postcode.to_string()) {
                if prev != postcode {
                    return Err(Error::MalformedInput(format!(
                        "stop `{stop}` maps to both `{prev}` and `{postcode}`"
                    )));
                }
            }
        }
        Ok(PostcodeTable(map))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn get(&self, stop: &str) -> Option<&str> {
        self.0.get(stop).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A location code the lookup table does not know. The record is
/// quarantined rather than released.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownStop;

pub fn generalize_location<'a>(
    location: &'a str,
    rule: LocationRule,
    lookup: &'a PostcodeTable,
) -> Result<&'a str, UnknownStop> {
    match rule {
        LocationRule::Identity => Ok(location),
        LocationRule::PostcodeLookup => lookup.get(location).ok_or(UnknownStop),
    }
}
