//! Synthetic trip fixtures for tests, benchmarks and demos.

use std::io::Write;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pipeline::trip::{CardId, Mode, PostcodeTable, Tap, TripRecord, TRIP_HEADER};

#[derive(Debug, Clone)]
pub struct SyntheticTrips {
    pub records: Vec<TripRecord>,
    pub lookup: PostcodeTable,
}

/// Generates `rows_per_partition` trips for every `(mode, date)` pair.
///
/// In balanced mode, row `i` of a partition cycles through the window and
/// location grids so that every two-way cell receives the same count when
/// `rows_per_partition` is a multiple of `windows * locations`.
#[derive(Debug, Clone)]
pub struct TripGenerator {
    dates: Vec<NaiveDate>,
    modes: Vec<Mode>,
    rows_per_partition: usize,
    windows: usize,
    locations: usize,
    balanced: bool,
    rare_rate: f64,
    incomplete_rate: f64,
}

impl TripGenerator {
    pub fn new(dates: Vec<NaiveDate>, modes: Vec<Mode>, rows_per_partition: usize) -> Self {
        TripGenerator {
            dates,
            modes,
            rows_per_partition,
            windows: 12,
            locations: 8,
            balanced: false,
            rare_rate: 0.02,
            incomplete_rate: 0.01,
        }
    }

    /// Four windows by four locations, evenly filled, no rare or incomplete
    /// trips.
    pub fn dense(mut self) -> Self {
        self.windows = 4;
        self.locations = 4;
        self.balanced = true;
        self.rare_rate = 0.0;
        self.incomplete_rate = 0.0;
        self
    }

    pub fn rare_rate(mut self, rate: f64) -> Self {
        self.rare_rate = rate;
        self
    }

    pub fn incomplete_rate(mut self, rate: f64) -> Self {
        self.incomplete_rate = rate;
        self
    }

    fn location(mode: Mode, k: usize, variant: usize) -> String {
        match mode {
            // Two stop ids per postcode.
            Mode::Bus => format!("2{:05}", 1000 + 2 * k + variant),
            Mode::Train => format!("T{k:02}"),
            Mode::Ferry => format!("F{k:02}"),
            Mode::Lightrail => format!("L{k:02}"),
        }
    }

    pub fn generate(&self, seed: u64) -> SyntheticTrips {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut lookup = Vec::new();
        for k in 0..self.locations {
            for variant in 0..2 {
                lookup.push((
                    Self::location(Mode::Bus, k, variant),
                    format!("{}", 2000 + 10 * k),
                ));
            }
        }
        // Morning and evening peaks, 15-minute aligned.
        let starts: Vec<u32> = (0..self.windows as u32)
            .map(|w| {
                if w % 2 == 0 {
                    420 + 15 * (w / 2)
                } else {
                    1020 + 15 * (w / 2)
                }
            })
            .collect();
        let cards = (self.rows_per_partition / 3).max(1);
        let mut records =
            Vec::with_capacity(self.rows_per_partition * self.dates.len() * self.modes.len());
        let mut rare_id = 0usize;
        for &mode in &self.modes {
            for &date in &self.dates {
                for i in 0..self.rows_per_partition {
                    let (on_w, on_l, off_w, off_l) = if self.balanced {
                        let w = self.windows;
                        let l = self.locations;
                        (i % w, (i / w) % l, (i + 1) % w, (i / w + 1) % l)
                    } else {
                        (
                            rng.gen_range(0..self.windows),
                            rng.gen_range(0..self.locations),
                            rng.gen_range(0..self.windows),
                            rng.gen_range(0..self.locations),
                        )
                    };
                    let mut on_loc = Self::location(mode, on_l, rng.gen_range(0..2));
                    let off_loc = Self::location(mode, off_l, rng.gen_range(0..2));
                    if self.rare_rate > 0.0 && rng.gen_bool(self.rare_rate) {
                        rare_id += 1;
                        on_loc = match mode {
                            Mode::Bus => {
                                let stop = format!("3{rare_id:05}");
                                lookup.push((stop.clone(), format!("{}", 2500 + rare_id)));
                                stop
                            }
                            _ => format!("R{rare_id:05}"),
                        };
                    }
                    let on_time = starts[on_w] + rng.gen_range(0..15);
                    let off_time = (starts[off_w] + 30 + rng.gen_range(0..15)) % 1440;
                    let tap_off =
                        if self.incomplete_rate > 0.0 && rng.gen_bool(self.incomplete_rate) {
                            None
                        } else {
                            Some(Tap::new(off_time, off_loc).expect("valid tap"))
                        };
                    records.push(TripRecord {
                        card_id: CardId::new(format!("C{:08}", rng.gen_range(0..cards))),
                        date,
                        mode,
                        tap_on: Tap::new(on_time, on_loc).expect("valid tap"),
                        tap_off,
                    });
                }
            }
        }
        records.shuffle(&mut rng);
        SyntheticTrips {
            records,
            lookup: PostcodeTable::from_pairs(lookup),
        }
    }

    /// Write trips and the stop lookup in the ingest CSV formats.
    pub fn write_csv(&self, seed: u64, trips: impl Write, lookup: impl Write) -> Result<usize> {
        let data = self.generate(seed);
        let mut w = csv::Writer::from_writer(trips);
        w.write_record(TRIP_HEADER)?;
        let hhmm = |m: u32| format!("{:02}:{:02}", m / 60, m % 60);
        for r in &data.records {
            let (off_t, off_l) = match &r.tap_off {
                Some(t) => (hhmm(t.time), t.location.clone()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                r.card_id.expose().to_string(),
                r.date.format("%Y-%m-%d").to_string(),
                r.mode.to_string(),
                hhmm(r.tap_on.time),
                r.tap_on.location.clone(),
                off_t,
                off_l,
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trips>", e))?;
        let mut w = csv::Writer::from_writer(lookup);
        w.write_record(["stop_id", "postcode"])?;
        let mut pairs: Vec<(&str, &str)> = data.lookup.pairs().collect();
        pairs.sort();
        for (s, p) in pairs {
            w.write_record([s, p])?;
        }
        w.flush().map_err(|e| Error::io("<lookup>", e))?;
        Ok(data.records.len())
    }
}
