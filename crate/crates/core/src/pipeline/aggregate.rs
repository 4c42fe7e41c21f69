//! Hourly per-district aggregation and the weather join.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::geo::{nearest_district_index, District, LatLon};
use super::records::{TrafficRecord, WeatherRecord};
use crate::error::{Error, Result};
use crate::time::{self, Hour};

/// Traffic summed over one (hour, district) group, before the weather join.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyTraffic {
    pub timestamp: Hour,
    pub district: String,
    pub min_speed: f64,
    pub max_speed: f64,
    pub avg_speed: f64,
    pub num_vehicles: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeatherFeatures {
    pub t2m: f64,
    pub qv2m: f64,
    pub wd: f64,
    pub ws: f64,
    pub precip: f64,
}

impl From<&WeatherRecord> for WeatherFeatures {
    fn from(w: &WeatherRecord) -> Self {
        Self {
            t2m: w.t2m,
            qv2m: w.qv2m,
            wd: w.wd,
            ws: w.ws,
            precip: w.precip,
        }
    }
}

/// A prepared row: hourly district traffic joined with that hour's weather.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyDistrictRow {
    pub timestamp: Hour,
    pub district: String,
    pub min_speed: f64,
    pub max_speed: f64,
    pub avg_speed: f64,
    pub num_vehicles: f64,
    pub weather: WeatherFeatures,
}

#[derive(Debug, Clone)]
struct GroupAcc {
    vehicles: u64,
    weighted_speed: f64,
    speed_sum: f64,
    records: u64,
    min_speed: f64,
    max_speed: f64,
    min_avg: f64,
    max_avg: f64,
}

impl GroupAcc {
    fn new(r: &TrafficRecord) -> Self {
        Self {
            vehicles: r.num_vehicles,
            weighted_speed: r.num_vehicles as f64 * r.avg_speed,
            speed_sum: r.avg_speed,
            records: 1,
            min_speed: r.min_speed,
            max_speed: r.max_speed,
            min_avg: r.avg_speed,
            max_avg: r.avg_speed,
        }
    }

    fn push(&mut self, r: &TrafficRecord) {
        self.vehicles += r.num_vehicles;
        self.weighted_speed += r.num_vehicles as f64 * r.avg_speed;
        self.speed_sum += r.avg_speed;
        self.records += 1;
        self.min_speed = self.min_speed.min(r.min_speed);
        self.max_speed = self.max_speed.max(r.max_speed);
        self.min_avg = self.min_avg.min(r.avg_speed);
        self.max_avg = self.max_avg.max(r.avg_speed);
    }

    fn avg_speed(&self) -> f64 {
        // Vehicle-weighted; groups with no vehicles fall back to the plain mean.
        let mean = if self.vehicles > 0 {
            self.weighted_speed / self.vehicles as f64
        } else {
            self.speed_sum / self.records as f64
        };
        mean.clamp(self.min_avg, self.max_avg)
    }
}

/// Incremental (hour, district) aggregation.
///
/// Records are folded in arrival order, so feeding the same records in the
/// same order always yields bit-identical output.
#[derive(Debug)]
pub struct HourlyAggregator<'r> {
    registry: &'r [District],
    groups: HashMap<(Hour, usize), GroupAcc>,
    counts: Vec<u64>,
}

impl<'r> HourlyAggregator<'r> {
    pub fn new(registry: &'r [District]) -> Result<Self> {
        if registry.is_empty() {
            return Err(Error::Empty("district registry"));
        }
        Ok(Self {
            registry,
            groups: HashMap::new(),
            counts: vec![0; registry.len()],
        })
    }

    pub fn assign(&self, r: &TrafficRecord) -> usize {
        nearest_district_index(LatLon::new(r.latitude, r.longitude), self.registry)
            .expect("registry checked non-empty")
    }

    pub fn push(&mut self, r: &TrafficRecord) {
        let district = self.assign(r);
        self.push_assigned(r, district);
    }

    /// Add a record whose district index was computed elsewhere (e.g. on a worker thread).
    pub fn push_assigned(&mut self, r: &TrafficRecord, district: usize) {
        self.counts[district] += 1;
        self.groups
            .entry((r.timestamp, district))
            .and_modify(|g| g.push(r))
            .or_insert_with(|| GroupAcc::new(r));
    }

    pub fn district_counts(&self) -> BTreeMap<String, u64> {
        self.registry
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(d, &c)| (d.name.clone(), c))
            .collect()
    }

    /// Rows ordered by timestamp, then district name.
    pub fn finish(self) -> Vec<HourlyTraffic> {
        let mut rows: Vec<HourlyTraffic> = self
            .groups
            .into_iter()
            .map(|((timestamp, d), g)| HourlyTraffic {
                timestamp,
                district: self.registry[d].name.clone(),
                min_speed: g.min_speed,
                max_speed: g.max_speed,
                avg_speed: g.avg_speed(),
                num_vehicles: g.vehicles as f64,
            })
            .collect();
        rows.sort_by(|a, b| (a.timestamp, &a.district).cmp(&(b.timestamp, &b.district)));
        rows
    }
}

pub fn aggregate_hourly<'a>(
    records: impl IntoIterator<Item = &'a TrafficRecord>,
    registry: &[District],
) -> Result<Vec<HourlyTraffic>> {
    let mut agg = HourlyAggregator::new(registry)?;
    for r in records {
        agg.push(r);
    }
    Ok(agg.finish())
}

#[derive(Debug, Clone, Default)]
pub struct Joined {
    pub rows: Vec<HourlyDistrictRow>,
    pub dropped: usize,
}

/// Exact-key join on (hour, district name). Traffic rows without weather are dropped.
pub fn join_weather<'w>(
    rows: Vec<HourlyTraffic>,
    weather: impl IntoIterator<Item = &'w WeatherRecord>,
) -> Joined {
    let mut by_key: HashMap<(Hour, &str), WeatherFeatures> = HashMap::new();
    for w in weather {
        by_key
            .entry((w.timestamp, w.district_name.as_str()))
            .or_insert_with(|| WeatherFeatures::from(w));
    }
    let mut out = Joined::default();
    for r in rows {
        match by_key.get(&(r.timestamp, r.district.as_str())) {
            Some(&weather) => out.rows.push(HourlyDistrictRow {
                timestamp: r.timestamp,
                district: r.district,
                min_speed: r.min_speed,
                max_speed: r.max_speed,
                avg_speed: r.avg_speed,
                num_vehicles: r.num_vehicles,
                weather,
            }),
            None => out.dropped += 1,
        }
    }
    out
}

pub fn district_counts<'a>(districts: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for d in districts {
        *out.entry(d.to_string()).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PeriodStats {
    pub records: u64,
    pub total_vehicles: u64,
    /// Unweighted mean of the records' average speeds; NaN when no records.
    pub mean_avg_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    pub morning: PeriodStats,
    pub afternoon: PeriodStats,
}

pub const MORNING_HOURS: Range<u32> = 6..9;
pub const AFTERNOON_HOURS: Range<u32> = 17..20;

#[derive(Debug, Default)]
struct PeriodAcc {
    records: u64,
    vehicles: u64,
    speed_sum: f64,
}

impl PeriodAcc {
    fn stats(&self) -> PeriodStats {
        PeriodStats {
            records: self.records,
            total_vehicles: self.vehicles,
            mean_avg_speed: if self.records == 0 {
                f64::NAN
            } else {
                self.speed_sum / self.records as f64
            },
        }
    }
}

/// Vehicle totals and mean speed for a morning and an afternoon hour window.
/// Windows are half-open hour-of-day ranges and must not overlap.
pub fn period_summary<'a>(
    records: impl IntoIterator<Item = &'a TrafficRecord>,
    morning: Range<u32>,
    afternoon: Range<u32>,
) -> Result<PeriodSummary> {
    if morning.start < afternoon.end && afternoon.start < morning.end {
        return Err(Error::InvalidArgument(format!(
            "hour windows {morning:?} and {afternoon:?} overlap"
        )));
    }
    let (mut am, mut pm) = (PeriodAcc::default(), PeriodAcc::default());
    for r in records {
        let h = time::hour_of_day(r.timestamp);
        let acc = if morning.contains(&h) {
            &mut am
        } else if afternoon.contains(&h) {
            &mut pm
        } else {
            continue;
        };
        acc.records += 1;
        acc.vehicles += r.num_vehicles;
        acc.speed_sum += r.avg_speed;
    }
    Ok(PeriodSummary {
        morning: am.stats(),
        afternoon: pm.stats(),
    })
}
