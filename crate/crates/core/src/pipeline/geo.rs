//! Great-circle distance and nearest-district assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius (IUGG), kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Haversine distance in kilometres.
///
/// Differences are taken as absolute values so the result is bit-for-bit
/// symmetric in its arguments.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).abs().to_radians();
    let dlambda = (b.lon - a.lon).abs().to_radians();

    let s_phi = (dphi / 2.0).sin();
    let s_lambda = (dlambda / 2.0).sin();
    let h = s_phi * s_phi + phi1.cos() * phi2.cos() * s_lambda * s_lambda;
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct District {
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
}

impl District {
    pub fn new(name: impl Into<String>, latitude: f64, longitude: f64) -> Self {
        Self {
            name: name.into(),
            latitude,
            longitude,
        }
    }

    pub fn position(&self) -> LatLon {
        LatLon::new(self.latitude, self.longitude)
    }
}

/// The six reference points traffic records are aggregated onto.
pub fn default_registry() -> Vec<District> {
    vec![
        District::new("TUZLA", 40.8457, 29.3584),
        District::new("BAGCILAR", 41.0356, 28.8534),
        District::new("BUYUK_CEKMECE", 41.0223, 28.5749),
        District::new("ATASEHIR", 40.9937, 29.1388),
        District::new("KAGITHANE", 41.0822, 28.9862),
        District::new("FATIH", 41.0151, 28.9551),
    ]
}

/// Index of the registry entry closest to `p`. Ties go to the earlier entry.
pub fn nearest_district_index(p: LatLon, registry: &[District]) -> Result<usize> {
    if registry.is_empty() {
        return Err(Error::Empty("district registry"));
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, d) in registry.iter().enumerate() {
        let dist = haversine_km(p, d.position());
        if dist < best_d {
            best = i;
            best_d = dist;
        }
    }
    Ok(best)
}

pub fn assign_district(lat: f64, lon: f64, registry: &[District]) -> Result<&str> {
    let idx = nearest_district_index(LatLon::new(lat, lon), registry)?;
    Ok(&registry[idx].name)
}
