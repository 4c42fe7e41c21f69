//! MAPE, MAE and RMSE.
//!
//! MAPE skips pairs whose actual value is below a floor (default one
//! vehicle) and reports how many it skipped; if every pair is skipped the
//! MAPE is `None` (`null` in JSON).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAPE_FLOOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mape_percent: Option<f64>,
    pub mae: f64,
    pub rmse: f64,
    pub excluded_count: usize,
}

fn check(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} actual values vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Empty("metric input"));
    }
    if actual.iter().chain(predicted).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("metric input contains non-finite values".into()));
    }
    Ok(())
}

pub fn mae(actual: &[f64], predicted: &[f64]) -> f64 {
    actual.iter().zip(predicted).map(|(a, p)| (a - p).abs()).sum::<f64>() / actual.len() as f64
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> f64 {
    (actual.iter().zip(predicted).map(|(a, p)| (p - a) * (p - a)).sum::<f64>() / actual.len() as f64).sqrt()
}

/// Mean absolute percentage error over pairs with `actual >= floor`, and the
/// number of pairs left out.
pub fn mape(actual: &[f64], predicted: &[f64], floor: f64) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut kept = 0usize;
    for (a, p) in actual.iter().zip(predicted) {
        if *a >= floor && *a != 0.0 {
            sum += ((a - p) / a).abs();
            kept += 1;
        }
    }
    let excluded = actual.len() - kept;
    ((kept > 0).then(|| 100.0 * sum / kept as f64), excluded)
}

/// All three metrics on one pair of series in the same units.
pub fn compute_metrics(actual: &[f64], predicted: &[f64], mape_floor: f64) -> Result<MetricReport> {
    check(actual, predicted)?;
    let (mape_percent, excluded_count) = mape(actual, predicted, mape_floor);
    Ok(MetricReport {
        mape_percent,
        mae: mae(actual, predicted),
        rmse: rmse(actual, predicted),
        excluded_count,
    })
}

/// MAE and RMSE on normalized values, MAPE on vehicle counts.
pub fn evaluation_metrics(
    actual_normalized: &[f64],
    predicted_normalized: &[f64],
    actual_vehicles: &[f64],
    predicted_vehicles: &[f64],
    mape_floor: f64,
) -> Result<MetricReport> {
    check(actual_normalized, predicted_normalized)?;
    check(actual_vehicles, predicted_vehicles)?;
    if actual_vehicles.len() != actual_normalized.len() {
        return Err(Error::Shape("normalized and raw series differ in length".into()));
    }
    let (mape_percent, excluded_count) = mape(actual_vehicles, predicted_vehicles, mape_floor);
    Ok(MetricReport {
        mape_percent,
        mae: mae(actual_normalized, predicted_normalized),
        rmse: rmse(actual_normalized, predicted_normalized),
        excluded_count,
    })
}
