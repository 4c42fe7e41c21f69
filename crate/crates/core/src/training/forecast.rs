//! Recursive multi-hour forecasts from a stored model.

use serde::{Deserialize, Serialize};

use super::{CongestionLevel, ModelArtifact, ModelType};
use crate::dataset::{district_rows, WindowedSample, NUM_FEATURES, TARGET_FEATURE};
use crate::error::{Error, Result};
use crate::pipeline::HourlyDistrictRow;
use crate::time::{self, Hour};
use crate::Tensor;

pub const MAX_HORIZON: usize = 48;
pub const DEFAULT_HORIZON: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    #[serde(rename = "ts", with = "crate::time::iso")]
    pub timestamp: Hour,
    pub vehicles: f64,
    pub level: CongestionLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub district: String,
    pub model: ModelType,
    pub points: Vec<ForecastPoint>,
}

/// The `w` rows ending at `end` (inclusive), which must be consecutive hours.
/// `rows` must be one district's rows sorted by time.
pub fn history_window(rows: &[HourlyDistrictRow], end: Hour, w: usize) -> Result<&[HourlyDistrictRow]> {
    let last = rows
        .binary_search_by_key(&end, |r| r.timestamp)
        .map_err(|_| Error::InsufficientHistory(format!("no row at {}", time::format_iso(end))))?;
    if last + 1 < w {
        return Err(Error::InsufficientHistory(format!(
            "{} hours of history up to {}, need {w}",
            last + 1,
            time::format_iso(end)
        )));
    }
    let slice = &rows[last + 1 - w..=last];
    if time::hours_between(slice[0].timestamp, end) != w as i64 - 1 {
        return Err(Error::InsufficientHistory(format!(
            "the {w} hours before {} are not all present",
            time::format_iso(end)
        )));
    }
    Ok(slice)
}

fn check_horizon(horizon: usize) -> Result<()> {
    if !(1..=MAX_HORIZON).contains(&horizon) {
        return Err(Error::InvalidArgument(format!("horizon must be between 1 and {MAX_HORIZON}, got {horizon}")));
    }
    Ok(())
}

/// Roll the model forward `horizon` hours from the last `W` rows of
/// `history`. Each prediction is clamped at zero and fed back as the next
/// hour's vehicle count; weather stays at its last observed value.
pub fn forecast(artifact: &ModelArtifact, history: &[HourlyDistrictRow], horizon: usize) -> Result<Forecast> {
    check_horizon(horizon)?;
    let w = artifact.train_config.dataset.window;
    if history.len() < w {
        return Err(Error::InsufficientHistory(format!("{} hours of history, need {w}", history.len())));
    }
    let recent = &history[history.len() - w..];
    if let Some(r) = recent.iter().find(|r| r.district != artifact.district) {
        return Err(Error::InvalidArgument(format!(
            "history row for {} passed to a {} model",
            r.district, artifact.district
        )));
    }
    if recent.windows(2).any(|p| time::hours_between(p[0].timestamp, p[1].timestamp) != 1) {
        return Err(Error::InsufficientHistory(format!("the last {w} history rows are not consecutive hours")));
    }

    let norm = &artifact.normalization;
    let mut buffer: Vec<f64> = recent.iter().flat_map(|r| norm.normalize_row(r)).collect();
    let held = buffer[buffer.len() - NUM_FEATURES..].to_vec();
    let mut ts = recent[w - 1].timestamp;
    let mut points = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        ts = time::next_hour(ts);
        let sample = WindowedSample {
            inputs: Tensor::from_vec(&[w, NUM_FEATURES], buffer[buffer.len() - w * NUM_FEATURES..].to_vec())?,
            target: 0.0,
            target_timestamp: ts,
        };
        let normalized = artifact.model.predict(&[&sample])?[0];
        let vehicles = norm.invert_target(normalized).max(0.0);
        points.push(ForecastPoint {
            timestamp: ts,
            vehicles,
            level: artifact.congestion.level(vehicles),
        });
        let mut next = held.clone();
        next[TARGET_FEATURE] = norm.apply_target(vehicles);
        buffer.extend_from_slice(&next);
    }
    Ok(Forecast {
        district: artifact.district.clone(),
        model: artifact.model_type,
        points,
    })
}

/// Forecast from prepared rows (any districts). `start` is the last history
/// hour and defaults to the district's latest row.
pub fn forecast_at(artifact: &ModelArtifact, rows: &[HourlyDistrictRow], start: Option<Hour>, horizon: usize) -> Result<Forecast> {
    check_horizon(horizon)?;
    let rows = district_rows(rows, &artifact.district);
    let end = match start {
        Some(t) => t,
        None => {
            rows.last()
                .ok_or_else(|| Error::InsufficientHistory(format!("no rows for {}", artifact.district)))?
                .timestamp
        }
    };
    let window = history_window(&rows, end, artifact.train_config.dataset.window)?;
    forecast(artifact, window, horizon)
}
