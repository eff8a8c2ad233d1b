//! Geographic primitives: validated coordinates, great-circle distance, and
//! the positional channel pair attached to every field frame.

use thiserror::Error;

use crate::{GRID, GRID_STEP_DEG};

/// Mean Earth radius in kilometres (IUGG mean radius R1).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("non-finite coordinate ({lat}, {lon})")]
    NotFinite { lat: f64, lon: f64 },
}

/// A validated point on the globe.
///
/// Latitude is checked against [-90, 90]; longitude is normalized into
/// [-180, 180) so that every physical location has one representation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(GeoError::NotFinite { lat, lon });
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidLatitude(lat));
        }
        Ok(GeoPoint {
            lat,
            lon: normalize_lon(lon),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Maps any finite longitude into [-180, 180).
pub fn normalize_lon(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can return exactly 360.0 - epsilon artifacts only through
    // rounding; the half-open interval is restored explicitly.
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Great-circle distance in kilometres between two points.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();

    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    let h = h.clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}

/// The `lats` and `longs` channels for a grid centered on `center`.
///
/// Both are row-major GRID x GRID planes. `lats[i][j]` depends only on the
/// column: `lat + 0.25 * (j - 16)`, so every row repeats the same ramp;
/// `longs[i][j]` depends only on the row: `lon + 0.25 * (i - 16)`. Values are
/// deliberately not wrap-normalized, so a grid straddling the antimeridian
/// stays monotone instead of jumping by 360.
#[derive(Debug, Clone)]
pub struct LatLonChannels {
    pub lats: Vec<f64>,
    pub longs: Vec<f64>,
}

pub fn latlon_channels(center: GeoPoint) -> LatLonChannels {
    let mut lats = vec![0.0; GRID * GRID];
    let mut longs = vec![0.0; GRID * GRID];
    for i in 0..GRID {
        for j in 0..GRID {
            let (lat, lon) = cell_center(center, i, j);
            lats[i * GRID + j] = lat;
            longs[i * GRID + j] = lon;
        }
    }
    LatLonChannels { lats, longs }
}

/// Geographic location of cell `(i, j)` in a grid centered on `center`:
/// `(lat + 0.25 * (j - 16), lon + 0.25 * (i - 16))`, without longitude
/// wrapping.
pub fn cell_center(center: GeoPoint, i: usize, j: usize) -> (f64, f64) {
    debug_assert!(i < GRID && j < GRID);
    let half = (GRID / 2) as f64;
    let lat = center.lat + GRID_STEP_DEG * (j as f64 - half);
    let lon = center.lon + GRID_STEP_DEG * (i as f64 - half);
    (lat, lon)
}
