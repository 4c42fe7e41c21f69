//! Raw CSV ingestion, district assignment, hourly aggregation and the weather join.

pub mod aggregate;
pub mod geo;
pub mod prepared;
pub mod records;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use aggregate::{
    aggregate_hourly, district_counts, join_weather, period_summary, HourlyAggregator, HourlyDistrictRow,
    HourlyTraffic, PeriodStats, PeriodSummary, WeatherFeatures, AFTERNOON_HOURS, MORNING_HOURS,
};
pub use geo::{assign_district, default_registry, haversine_km, District, LatLon};
pub use prepared::{read_prepared, read_prepared_file, write_prepared, write_prepared_file};
pub use records::{parse_traffic_csv, parse_weather_csv, Parsed, TrafficReader, TrafficRecord, WeatherRecord, WeatherScaling};

use crate::error::Result;

/// Counts reported after an ingest run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub traffic_files: usize,
    pub weather_files: usize,
    pub traffic_records: u64,
    pub traffic_skipped: u64,
    pub weather_records: u64,
    pub weather_skipped: u64,
    pub hourly_rows: u64,
    pub dropped_without_weather: u64,
    pub prepared_rows: u64,
    pub district_counts: BTreeMap<String, u64>,
    pub period_summary: PeriodSummary,
}

pub struct Ingested {
    pub rows: Vec<HourlyDistrictRow>,
    pub summary: IngestSummary,
}

struct Shard {
    records: Vec<(TrafficRecord, usize)>,
    skipped: usize,
}

/// Run the whole preparation over sets of traffic and weather files.
///
/// Files are parsed (and districts assigned) in parallel in groups of
/// `rayon::current_num_threads()`, then folded into the aggregator in the
/// order given, so the result matches a sequential run exactly.
pub fn ingest(
    traffic: &[PathBuf],
    weather: &[PathBuf],
    registry: &[District],
    scaling: WeatherScaling,
) -> Result<Ingested> {
    let mut agg = HourlyAggregator::new(registry)?;
    let mut periods = PeriodFold::default();
    let mut traffic_records = 0u64;
    let mut traffic_skipped = 0u64;

    let group = rayon::current_num_threads().max(1);
    for chunk in traffic.chunks(group) {
        let shards: Vec<Result<Shard>> = chunk
            .par_iter()
            .map(|path| {
                let parsed = parse_traffic_csv(path)?;
                let records = parsed
                    .records
                    .into_iter()
                    .map(|r| {
                        let d = agg.assign(&r);
                        (r, d)
                    })
                    .collect();
                Ok(Shard {
                    records,
                    skipped: parsed.skipped,
                })
            })
            .collect();
        for shard in shards {
            let shard = shard?;
            traffic_skipped += shard.skipped as u64;
            traffic_records += shard.records.len() as u64;
            for (r, d) in &shard.records {
                agg.push_assigned(r, *d);
                periods.push(r);
            }
        }
    }

    let mut weather_records = Vec::new();
    let mut weather_skipped = 0u64;
    for path in weather {
        let parsed = parse_weather_csv(path, scaling)?;
        weather_skipped += parsed.skipped as u64;
        weather_records.extend(parsed.records);
    }

    let counts = agg.district_counts();
    let hourly = agg.finish();
    let hourly_rows = hourly.len() as u64;
    let joined = join_weather(hourly, &weather_records);

    Ok(Ingested {
        summary: IngestSummary {
            traffic_files: traffic.len(),
            weather_files: weather.len(),
            traffic_records,
            traffic_skipped,
            weather_records: weather_records.len() as u64,
            weather_skipped,
            hourly_rows,
            dropped_without_weather: joined.dropped as u64,
            prepared_rows: joined.rows.len() as u64,
            district_counts: counts,
            period_summary: periods.finish(),
        },
        rows: joined.rows,
    })
}

/// Streaming counterpart of [`period_summary`] with the default windows.
#[derive(Default)]
struct PeriodFold {
    morning: (u64, u64, f64),
    afternoon: (u64, u64, f64),
}

impl PeriodFold {
    fn push(&mut self, r: &TrafficRecord) {
        let h = crate::time::hour_of_day(r.timestamp);
        let acc = if MORNING_HOURS.contains(&h) {
            &mut self.morning
        } else if AFTERNOON_HOURS.contains(&h) {
            &mut self.afternoon
        } else {
            return;
        };
        acc.0 += 1;
        acc.1 += r.num_vehicles;
        acc.2 += r.avg_speed;
    }

    fn finish(self) -> PeriodSummary {
        let stats = |(records, total_vehicles, speed): (u64, u64, f64)| PeriodStats {
            records,
            total_vehicles,
            mean_avg_speed: if records == 0 { f64::NAN } else { speed / records as f64 },
        };
        PeriodSummary {
            morning: stats(self.morning),
            afternoon: stats(self.afternoon),
        }
    }
}
