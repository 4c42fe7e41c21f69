//! Normalized sliding-window samples with chronological splits, plus a
//! seeded synthetic hourly series for desk-scale runs.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{HourlyDistrictRow, WeatherFeatures};
use crate::tensor::Tensor;
use crate::time::{self, Hour};

/// Model input features per hour, in column order. The target is feature 0.
pub const FEATURES: [&str; 6] = ["num_vehicles", "t2m", "qv2m", "wd", "ws", "precip"];
pub const NUM_FEATURES: usize = FEATURES.len();
pub const TARGET_FEATURE: usize = 0;
pub const DEFAULT_WINDOW: usize = 24;
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

pub fn raw_features(row: &HourlyDistrictRow) -> [f64; NUM_FEATURES] {
    let w = &row.weather;
    [row.num_vehicles, w.t2m, w.qv2m, w.wd, w.ws, w.precip]
}

/// Per-feature min/max scaling to `[0, 1]`, fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub features: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationParams {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a HourlyDistrictRow>) -> Result<Self> {
        let mut min = [f64::INFINITY; NUM_FEATURES];
        let mut max = [f64::NEG_INFINITY; NUM_FEATURES];
        let mut seen = false;
        for r in rows {
            seen = true;
            for (j, v) in raw_features(r).into_iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if !seen {
            return Err(Error::Empty("training rows for normalization"));
        }
        Ok(Self {
            features: FEATURES.iter().map(|s| s.to_string()).collect(),
            min: min.to_vec(),
            max: max.to_vec(),
        })
    }

    pub fn num_features(&self) -> usize {
        self.min.len()
    }

    pub fn apply(&self, feature: usize, v: f64) -> f64 {
        let span = self.max[feature] - self.min[feature];
        if span > 0.0 {
            (v - self.min[feature]) / span
        } else {
            0.0
        }
    }

    pub fn invert(&self, feature: usize, v: f64) -> f64 {
        v * (self.max[feature] - self.min[feature]) + self.min[feature]
    }

    pub fn normalize_row(&self, row: &HourlyDistrictRow) -> [f64; NUM_FEATURES] {
        let mut out = raw_features(row);
        for (j, v) in out.iter_mut().enumerate() {
            *v = self.apply(j, *v);
        }
        out
    }

    pub fn apply_target(&self, v: f64) -> f64 {
        self.apply(TARGET_FEATURE, v)
    }

    pub fn invert_target(&self, v: f64) -> f64 {
        self.invert(TARGET_FEATURE, v)
    }

    pub fn check_features(&self) -> Result<()> {
        let expected: Vec<&str> = FEATURES.to_vec();
        let got: Vec<&str> = self.features.iter().map(String::as_str).collect();
        if got != expected || self.min.len() != NUM_FEATURES || self.max.len() != NUM_FEATURES {
            return Err(Error::FeatureMismatch(format!("expected features {expected:?}, found {got:?}")));
        }
        Ok(())
    }
}

/// `inputs` is a `W x F` normalized window; `target` the normalized vehicle
/// count of the hour right after it.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub inputs: Tensor,
    pub target: f64,
    pub target_timestamp: Hour,
}

impl WindowedSample {
    pub fn window_len(&self) -> usize {
        self.inputs.rows()
    }

    /// Timestamp of the first hour in the input window.
    pub fn window_start(&self) -> Hour {
        time::add_hours(self.target_timestamp, -(self.window_len() as i64))
    }
}

/// Start indices `i` such that rows `i..=i+w` are consecutive hours.
pub fn window_starts(rows: &[HourlyDistrictRow], w: usize) -> Vec<usize> {
    if w == 0 || rows.len() <= w {
        return Vec::new();
    }
    // run[i]: length of the gap-free run ending at row i
    let mut run = vec![1usize; rows.len()];
    for i in 1..rows.len() {
        if time::hours_between(rows[i - 1].timestamp, rows[i].timestamp) == 1 {
            run[i] = run[i - 1] + 1;
        }
    }
    (w..rows.len()).filter(|&t| run[t] > w).map(|t| t - w).collect()
}

/// Build `W x F` samples from rows sorted by time. Windows never span a gap.
pub fn make_windows(rows: &[HourlyDistrictRow], w: usize, norm: &NormalizationParams) -> Vec<WindowedSample> {
    let normalized: Vec<[f64; NUM_FEATURES]> = rows.iter().map(|r| norm.normalize_row(r)).collect();
    window_starts(rows, w)
        .into_iter()
        .map(|i| sample_at(rows, &normalized, i, w))
        .collect()
}

fn sample_at(rows: &[HourlyDistrictRow], normalized: &[[f64; NUM_FEATURES]], i: usize, w: usize) -> WindowedSample {
    let data: Vec<f64> = normalized[i..i + w].iter().flatten().copied().collect();
    WindowedSample {
        inputs: Tensor::from_vec(&[w, NUM_FEATURES], data).expect("window shape"),
        target: normalized[i + w][TARGET_FEATURE],
        target_timestamp: rows[i + w].timestamp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Chronological split sizes: `floor(n * f)` for train and validation, the
/// remainder to test.
pub fn chrono_split(n: usize, fractions: [f64; 3]) -> Result<SplitRanges> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 samples to split, got {n}")));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must sum to 1")));
    }
    // The epsilon keeps e.g. 100 * 0.7 from flooring to 69.
    let take = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let n_train = take(fractions[0]);
    let n_val = take(fractions[1]).min(n - n_train);
    Ok(SplitRanges {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..n,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetConfig {
    pub window: usize,
    pub fractions: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            fractions: DEFAULT_FRACTIONS,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub district: String,
    pub window: usize,
    pub samples: Vec<WindowedSample>,
    pub splits: SplitRanges,
    pub normalization: NormalizationParams,
}

impl PreparedDataset {
    /// Select one district's rows, window them, split chronologically and
    /// fit normalization on the training period.
    pub fn build(rows: &[HourlyDistrictRow], district: &str, config: &DatasetConfig) -> Result<Self> {
        Self::build_inner(rows, district, config, None)
    }

    /// Same windows and splits, but with normalization taken from elsewhere
    /// (an artifact) instead of refitted.
    pub fn build_with_normalization(
        rows: &[HourlyDistrictRow],
        district: &str,
        config: &DatasetConfig,
        normalization: NormalizationParams,
    ) -> Result<Self> {
        normalization.check_features()?;
        Self::build_inner(rows, district, config, Some(normalization))
    }

    fn build_inner(
        rows: &[HourlyDistrictRow],
        district: &str,
        config: &DatasetConfig,
        normalization: Option<NormalizationParams>,
    ) -> Result<Self> {
        let rows = district_rows(rows, district);
        if rows.is_empty() {
            return Err(Error::UnknownDistrict(district.to_string()));
        }
        if config.window == 0 {
            return Err(Error::InvalidArgument("window must be at least 1 hour".into()));
        }
        let starts = window_starts(&rows, config.window);
        let splits = chrono_split(starts.len(), config.fractions)?;

        let normalization = match normalization {
            Some(n) => n,
            None => {
                let last_train_target = starts[..splits.train.end]
                    .last()
                    .map(|&i| i + config.window)
                    .ok_or(Error::Empty("training split"))?;
                NormalizationParams::fit(&rows[..=last_train_target])?
            }
        };
        let normalized: Vec<_> = rows.iter().map(|r| normalization.normalize_row(r)).collect();
        let samples = starts
            .into_iter()
            .map(|i| sample_at(&rows, &normalized, i, config.window))
            .collect();
        Ok(Self {
            district: district.to_string(),
            window: config.window,
            samples,
            splits,
            normalization,
        })
    }

    pub fn train(&self) -> &[WindowedSample] {
        &self.samples[self.splits.train.clone()]
    }

    pub fn val(&self) -> &[WindowedSample] {
        &self.samples[self.splits.val.clone()]
    }

    pub fn test(&self) -> &[WindowedSample] {
        &self.samples[self.splits.test.clone()]
    }
}

/// One district's rows, sorted by time, duplicates of an hour removed.
pub fn district_rows(rows: &[HourlyDistrictRow], district: &str) -> Vec<HourlyDistrictRow> {
    let mut out: Vec<HourlyDistrictRow> = rows.iter().filter(|r| r.district == district).cloned().collect();
    out.sort_by_key(|r| r.timestamp);
    out.dedup_by_key(|r| r.timestamp);
    out
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Shape of the synthetic hourly series.
///
/// `vehicles = base * (1 + daily_amplitude * sin(2 pi hour / 24 + phase)
///             + weekday_amplitude * weekday_factor)
///             - precip_effect * precip + noise`
///
/// where `weekday_factor` is +1 Monday to Friday and -1 at weekends and the
/// noise is Gaussian with standard deviation `noise * base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub district: String,
    pub start: Hour,
    pub daily_amplitude: f64,
    pub phase: f64,
    pub weekday_amplitude: f64,
    /// Vehicles lost per mm of precipitation.
    pub precip_effect: f64,
    /// Noise standard deviation as a fraction of `base`.
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            district: "TUZLA".into(),
            start: time::from_parts(2020, 6, 1, 0).expect("valid date"),
            daily_amplitude: 0.5,
            phase: -std::f64::consts::FRAC_PI_2,
            weekday_amplitude: 0.15,
            precip_effect: 0.0,
            noise: 0.05,
        }
    }
}

impl SynthParams {
    pub fn flat() -> Self {
        Self {
            daily_amplitude: 0.0,
            weekday_amplitude: 0.0,
            precip_effect: 0.0,
            noise: 0.0,
            ..Self::default()
        }
    }
}

pub fn synth_series(seed: u64, days: usize, base: f64, params: &SynthParams) -> Vec<HourlyDistrictRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let rain_amount = Exp::new(1.0 / 1.5).expect("rain rate");
    let tau = std::f64::consts::TAU;

    let mut raining = false;
    let mut wind_dir: f64 = rng.random_range(0.0..360.0);
    let mut rows = Vec::with_capacity(days * 24);
    for k in 0..days * 24 {
        let ts = time::add_hours(params.start, k as i64);
        let hour = time::hour_of_day(ts) as f64;
        let day = (k / 24) as f64;

        // weather first so the draw order is fixed regardless of params
        raining = if raining { rng.random::<f64>() > 0.2 } else { rng.random::<f64>() < 0.02 };
        let precip = if raining { rain_amount.sample(&mut rng) } else { 0.0 };
        let t2m = 15.0 + 6.0 * (tau * (hour - 9.0) / 24.0).sin() + 5.0 * (tau * day / 365.0).sin()
            + 0.5 * unit.sample(&mut rng);
        let qv2m = (9.0 + 1.5 * (tau * day / 365.0).sin() + 0.2 * unit.sample(&mut rng)).max(0.0);
        wind_dir = (wind_dir + 10.0 * unit.sample(&mut rng)).rem_euclid(360.0);
        let ws = (3.0 + unit.sample(&mut rng)).abs();
        let eps = unit.sample(&mut rng);

        let weekday_factor = if time::day_of_week(ts) < 5 { 1.0 } else { -1.0 };
        let level = base
            * (1.0
                + params.daily_amplitude * (tau * hour / 24.0 + params.phase).sin()
                + params.weekday_amplitude * weekday_factor)
            - params.precip_effect * precip
            + params.noise * base * eps;
        let vehicles = level.round().max(0.0);

        let load = if base > 0.0 { vehicles / base } else { 0.0 };
        let avg_speed = (75.0 - 20.0 * load).clamp(10.0, 90.0);
        rows.push(HourlyDistrictRow {
            timestamp: ts,
            district: params.district.clone(),
            min_speed: (avg_speed * 0.2).floor(),
            max_speed: (avg_speed * 2.0).ceil(),
            avg_speed,
            num_vehicles: vehicles,
            weather: WeatherFeatures {
                t2m,
                qv2m,
                wd: wind_dir,
                ws,
                precip,
            },
        });
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rows_with_values(values: &[f64]) -> Vec<HourlyDistrictRow> {
        let start = time::from_parts(2021, 1, 1, 0).unwrap();
        values
            .iter()
            .enumerate()
            .map(|(k, &v)| HourlyDistrictRow {
                timestamp: time::add_hours(start, k as i64),
                district: "X".into(),
                min_speed: 0.0,
                max_speed: 1.0,
                avg_speed: 0.5,
                num_vehicles: v,
                weather: WeatherFeatures {
                    t2m: 7.0,
                    qv2m: v,
                    wd: 0.0,
                    ws: 0.0,
                    precip: 0.0,
                },
            })
            .collect()
    }

    fn gapless(n: usize) -> Vec<HourlyDistrictRow> {
        rows_with_values(&(0..n).map(|k| k as f64).collect::<Vec<_>>())
    }

    #[test]
    fn midpoint_maps_to_half() {
        let p = NormalizationParams::fit(&rows_with_values(&[0.0, 10.0])).unwrap();
        assert_eq!((p.min[0], p.max[0]), (0.0, 10.0));
        assert_eq!(p.apply(0, 5.0), 0.5);
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let p = NormalizationParams::fit(&rows_with_values(&[7.0, 7.0, 7.0])).unwrap();
        assert_eq!(p.apply(0, 7.0), 0.0);
        // t2m is constant 7 in the helper
        assert_eq!(p.apply(1, 7.0), 0.0);
        assert_eq!(p.invert(1, 0.0), 7.0);
    }

    #[test]
    fn fit_on_empty_is_an_error() {
        assert!(NormalizationParams::fit(&[]).is_err());
    }

    #[test]
    fn round_trip_on_random_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = NormalizationParams::fit(&rows_with_values(&[-250.0, 1800.0])).unwrap();
        for _ in 0..1000 {
            let v: f64 = rng.random_range(-250.0..1800.0);
            let back = p.invert(0, p.apply(0, v));
            assert!((back - v).abs() <= 1e-12 * v.abs().max(1.0), "{v} -> {back}");
        }
    }

    #[test]
    fn window_counts() {
        let norm = NormalizationParams::fit(&gapless(2)).unwrap();
        assert_eq!(make_windows(&gapless(25), 24, &norm).len(), 1);
        assert!(make_windows(&gapless(24), 24, &norm).is_empty());
        assert!(make_windows(&gapless(10), 24, &norm).is_empty());
    }

    #[test]
    fn hundred_rows_give_76_aligned_samples() {
        let rows = gapless(100);
        let norm = NormalizationParams::fit(&rows).unwrap();
        let samples = make_windows(&rows, 24, &norm);
        // enumeration oracle: every start i with i + 24 < 100
        let expected: Vec<Hour> = (0..100).filter(|i| i + 24 < 100).map(|i| rows[i + 24].timestamp).collect();
        assert_eq!(samples.len(), 76);
        let got: Vec<Hour> = samples.iter().map(|s| s.target_timestamp).collect();
        assert_eq!(got, expected);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.inputs.shape(), &[24, NUM_FEATURES]);
            assert!((norm.invert_target(s.target) - (i + 24) as f64).abs() < 1e-9);
            assert!((norm.invert(0, s.inputs.get2(0, 0)) - i as f64).abs() < 1e-9);
            assert!(s.window_start() < s.target_timestamp);
        }
    }

    #[test]
    fn windows_never_cross_a_gap() {
        let mut rows = gapless(60);
        rows.remove(30);
        let norm = NormalizationParams::fit(&rows).unwrap();
        let samples = make_windows(&rows, 24, &norm);
        // runs of 30 and 29 rows -> 6 + 5 windows
        assert_eq!(samples.len(), 11);
        for s in &samples {
            let first = s.window_start();
            let hole = rows[29].timestamp + chrono::TimeDelta::hours(1);
            assert!(!(first <= hole && hole <= s.target_timestamp));
        }
    }

    #[test]
    fn split_sizes() {
        let s = chrono_split(100, DEFAULT_FRACTIONS).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        let s = chrono_split(10, DEFAULT_FRACTIONS).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        assert!(chrono_split(2, DEFAULT_FRACTIONS).is_err());
        assert!(chrono_split(10, [0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn dataset_is_chronological() {
        let rows = synth_series(3, 10, 1000.0, &SynthParams::default());
        let ds = PreparedDataset::build(&rows, "TUZLA", &DatasetConfig::default()).unwrap();
        let last_train = ds.train().last().unwrap().target_timestamp;
        let last_val = ds.val().last().unwrap().target_timestamp;
        assert!(ds.val().iter().all(|s| s.target_timestamp > last_train));
        assert!(ds.test().iter().all(|s| s.target_timestamp > last_val));
        assert_eq!(ds.samples.len(), 240 - 24);
    }

    #[test]
    fn normalization_never_sees_val_or_test() {
        let rows = synth_series(5, 12, 1000.0, &SynthParams::default());
        let a = PreparedDataset::build(&rows, "TUZLA", &DatasetConfig::default()).unwrap();
        let cutoff = a.train().last().unwrap().target_timestamp;
        let mut poisoned = rows.clone();
        for r in poisoned.iter_mut().filter(|r| r.timestamp > cutoff) {
            r.num_vehicles = 1e9;
            r.weather.t2m = -500.0;
        }
        let b = PreparedDataset::build(&poisoned, "TUZLA", &DatasetConfig::default()).unwrap();
        assert_eq!(a.normalization, b.normalization);
    }

    #[test]
    fn unknown_district_is_reported() {
        let rows = synth_series(5, 3, 1000.0, &SynthParams::default());
        assert!(matches!(
            PreparedDataset::build(&rows, "NOWHERE", &DatasetConfig::default()),
            Err(Error::UnknownDistrict(_))
        ));
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_series(42, 7, 800.0, &SynthParams::default());
        let b = synth_series(42, 7, 800.0, &SynthParams::default());
        assert_eq!(a, b);
        let c = synth_series(43, 7, 800.0, &SynthParams::default());
        assert_ne!(a, c);
    }

    #[test]
    fn flat_synth_is_constant() {
        let rows = synth_series(1, 5, 500.0, &SynthParams::flat());
        assert_eq!(rows.len(), 120);
        assert!(rows.iter().all(|r| r.num_vehicles == 500.0));
    }

    fn autocorr(x: &[f64], lag: usize) -> f64 {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let cov: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum();
        cov / var
    }

    #[test]
    fn daily_period_dominates() {
        let rows = synth_series(9, 30, 1000.0, &SynthParams::default());
        let v: Vec<f64> = rows.iter().map(|r| r.num_vehicles).collect();
        assert!(v.iter().all(|&x| x >= 0.0));
        let (a24, a13) = (autocorr(&v, 24), autocorr(&v, 13));
        assert!(a24 > a13, "lag24 {a24} lag13 {a13}");
        assert!(a24 > 0.5);
    }

    proptest! {
        #[test]
        fn window_count_formula(n in 1usize..200, w in 1usize..60) {
            let rows = gapless(n);
            let norm = NormalizationParams::fit(&rows).unwrap();
            let samples = make_windows(&rows, w, &norm);
            prop_assert_eq!(samples.len(), n.saturating_sub(w));
            for s in &samples {
                // the target hour is never inside its own input window
                prop_assert!(s.window_start() + chrono::TimeDelta::hours(w as i64 - 1) < s.target_timestamp);
            }
        }
    }
}
