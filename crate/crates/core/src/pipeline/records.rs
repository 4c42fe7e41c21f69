//! Raw traffic and weather CSV ingestion.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::{self, Hour};

/// One row of the municipal hourly traffic density export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub row_id: i64,
    pub timestamp: Hour,
    pub longitude: f64,
    pub latitude: f64,
    pub geohash: String,
    pub min_speed: f64,
    pub max_speed: f64,
    pub avg_speed: f64,
    pub num_vehicles: u64,
}

/// One hourly weather observation at a district reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub timestamp: Hour,
    pub t2m: f64,
    pub qv2m: f64,
    pub wd: f64,
    pub ws: f64,
    pub precip: f64,
    pub latitude: f64,
    pub longitude: f64,
    pub district_name: String,
}

/// Parsed rows plus the number of rows rejected along the way.
#[derive(Debug, Clone, Default)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub skipped: usize,
}

fn normalize_header(h: &str) -> String {
    h.trim().trim_start_matches('\u{feff}').to_ascii_uppercase()
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Traffic

const TRAFFIC_COLUMNS: [&[&str]; 9] = [
    &["_ID"],
    &["DATE_TIME"],
    &["LONGITUDE"],
    &["LATITUDE"],
    &["GEOHASH", "GEHASH"],
    &["MINIMUM_SPEED"],
    &["MAXIMUM_SPEED"],
    &["AVERAGE_SPEED"],
    &["NUMBER_OF_VEHICLES"],
];

/// Streaming reader over a traffic CSV. Malformed rows are skipped and
/// counted; the header is validated up front.
pub struct TrafficReader<R: Read> {
    rdr: csv::Reader<R>,
    cols: [usize; 9],
    row: csv::StringRecord,
    skipped: usize,
    fatal: Option<csv::Error>,
}

impl TrafficReader<File> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_reader(open(path)?, path)
    }
}

impl<R: Read> TrafficReader<R> {
    pub fn from_reader(reader: R, label: impl Into<PathBuf>) -> Result<Self> {
        let label = label.into();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(normalize_header).collect();

        let mut cols = [0usize; 9];
        for (slot, names) in cols.iter_mut().zip(TRAFFIC_COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| names.contains(&h.as_str()))
                .ok_or_else(|| Error::Header {
                    path: label.clone(),
                    reason: format!("missing column {}", names[0]),
                })?;
        }
        if headers.len() != 9 {
            return Err(Error::Header {
                path: label,
                reason: format!("expected 9 columns, found {}", headers.len()),
            });
        }
        Ok(Self {
            rdr,
            cols,
            row: csv::StringRecord::new(),
            skipped: 0,
            fatal: None,
        })
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Collect every remaining record. Fails only on an I/O error mid-file.
    pub fn collect_all(mut self) -> Result<Parsed<TrafficRecord>> {
        let records: Vec<_> = self.by_ref().collect();
        if let Some(e) = self.fatal.take() {
            return Err(e.into());
        }
        Ok(Parsed {
            records,
            skipped: self.skipped,
        })
    }

    pub fn take_error(&mut self) -> Option<Error> {
        self.fatal.take().map(Into::into)
    }

    fn parse_row(&self) -> Option<TrafficRecord> {
        let f = |i: usize| self.row.get(self.cols[i]);
        let num = |i: usize| f(i)?.parse::<f64>().ok().filter(|v| v.is_finite());

        let row_id = f(0)?.parse::<i64>().ok()?;
        let timestamp = time::parse_hour(f(1)?)?;
        let longitude = num(2)?;
        let latitude = num(3)?;
        let geohash = f(4)?.to_string();
        let min_speed = num(5)?;
        let max_speed = num(6)?;
        let avg_speed = num(7)?;
        let vehicles = num(8)?;

        if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
            return None;
        }
        if !(min_speed <= avg_speed && avg_speed <= max_speed) {
            return None;
        }
        if vehicles < 0.0 || vehicles.fract() != 0.0 {
            return None;
        }
        Some(TrafficRecord {
            row_id,
            timestamp,
            longitude,
            latitude,
            geohash,
            min_speed,
            max_speed,
            avg_speed,
            num_vehicles: vehicles as u64,
        })
    }
}

impl<R: Read> Iterator for TrafficReader<R> {
    type Item = TrafficRecord;

    fn next(&mut self) -> Option<TrafficRecord> {
        if self.fatal.is_some() {
            return None;
        }
        loop {
            let mut row = std::mem::take(&mut self.row);
            let got = self.rdr.read_record(&mut row);
            self.row = row;
            match got {
                Ok(false) => return None,
                Ok(true) => match self.parse_row() {
                    Some(r) => return Some(r),
                    None => self.skipped += 1,
                },
                Err(e) if e.is_io_error() => {
                    self.fatal = Some(e);
                    return None;
                }
                Err(_) => self.skipped += 1,
            }
        }
    }
}

pub fn parse_traffic_csv(path: impl AsRef<Path>) -> Result<Parsed<TrafficRecord>> {
    TrafficReader::open(path)?.collect_all()
}

// ---------------------------------------------------------------------------
// Weather

/// How raw weather columns are rescaled on ingestion.
///
/// Some exports store the five features as integers scaled by 100
/// (`T2M = 1415` for 14.15 C). `Auto` detects this per file: when any
/// temperature exceeds 100 every feature column is divided by 100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeatherScaling {
    Auto,
    /// Divisors for T2M, QV2M, WD, WS, PRECIP in that order.
    Divisors([f64; 5]),
}

impl Default for WeatherScaling {
    fn default() -> Self {
        WeatherScaling::Auto
    }
}

const AUTO_T2M_LIMIT: f64 = 100.0;
const AUTO_DIVISOR: f64 = 100.0;
const FILL_VALUE: f64 = -999.0;

const WEATHER_COLUMNS: [&[&str]; 12] = [
    &["YEAR"],
    &["MO"],
    &["DY"],
    &["HR"],
    &["T2M"],
    &["QV2M"],
    &["WD2M", "WD10M"],
    &["WS2M", "WS10M"],
    &["PRECTOTCORR", "PRECOTCORR", "PRECTOT"],
    &["LATITUDE"],
    &["LONGITUDE"],
    &["LOC_NAME", "DISTRICT", "DISTANCE_LOC"],
];

struct RawWeather {
    timestamp: Hour,
    features: [f64; 5],
    latitude: f64,
    longitude: f64,
    district_name: String,
}

pub fn parse_weather_csv(path: impl AsRef<Path>, scaling: WeatherScaling) -> Result<Parsed<WeatherRecord>> {
    let path = path.as_ref();
    parse_weather_reader(open(path)?, path, scaling)
}

pub fn parse_weather_reader<R: Read>(
    reader: R,
    label: impl Into<PathBuf>,
    scaling: WeatherScaling,
) -> Result<Parsed<WeatherRecord>> {
    let label = label.into();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(normalize_header).collect();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let mut cols = [0usize; 12];
    for (slot, names) in cols.iter_mut().zip(WEATHER_COLUMNS) {
        *slot = names
            .iter()
            .find_map(|n| index.get(n).copied())
            .ok_or_else(|| Error::Header {
                path: label.clone(),
                reason: format!("missing column {}", names[0]),
            })?;
    }

    let mut raw = Vec::new();
    let mut skipped = 0;
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        match parse_weather_row(&row, &cols) {
            Some(r) => raw.push(r),
            None => skipped += 1,
        }
    }

    let divisors = match scaling {
        WeatherScaling::Divisors(d) => d,
        WeatherScaling::Auto => {
            if raw.iter().any(|r| r.features[0] > AUTO_T2M_LIMIT) {
                [AUTO_DIVISOR; 5]
            } else {
                [1.0; 5]
            }
        }
    };

    let mut records = Vec::with_capacity(raw.len());
    for r in raw {
        let [t2m, qv2m, wd, ws, precip] = std::array::from_fn(|i| r.features[i] / divisors[i]);
        if precip < 0.0 {
            skipped += 1;
            continue;
        }
        records.push(WeatherRecord {
            timestamp: r.timestamp,
            t2m,
            qv2m,
            wd: wd.rem_euclid(360.0),
            ws,
            precip,
            latitude: r.latitude,
            longitude: r.longitude,
            district_name: r.district_name,
        });
    }
    Ok(Parsed { records, skipped })
}

fn parse_weather_row(row: &csv::StringRecord, cols: &[usize; 12]) -> Option<RawWeather> {
    let f = |i: usize| row.get(cols[i]);
    let num = |i: usize| f(i)?.parse::<f64>().ok().filter(|v| v.is_finite());
    let int = |i: usize| -> Option<i64> {
        let v = num(i)?;
        (v.fract() == 0.0).then_some(v as i64)
    };

    let year = i32::try_from(int(0)?).ok()?;
    let month = u32::try_from(int(1)?).ok()?;
    let day = u32::try_from(int(2)?).ok()?;
    let hour = u32::try_from(int(3)?).ok()?;
    let timestamp = time::from_parts(year, month, day, hour)?;

    let features: [f64; 5] = [num(4)?, num(5)?, num(6)?, num(7)?, num(8)?];
    if features.iter().any(|&v| v <= FILL_VALUE) {
        return None;
    }
    let latitude = num(9)?;
    let longitude = num(10)?;
    let district_name = f(11)?.to_string();
    if district_name.is_empty() {
        return None;
    }
    Some(RawWeather {
        timestamp,
        features,
        latitude,
        longitude,
        district_name,
    })
}
