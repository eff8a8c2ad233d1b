//! Deterministic synthetic cyclone worlds.
//!
//! Real reanalysis fields are not available here, so each basin gets a
//! simplified stand-in world: land fills all longitudes at and east of a
//! basin-specific coastline meridian, and every storm travels broadly
//! eastward until it crosses it, picking up speed as it goes. Tracks are
//! integrated backward from the landfall point, so landfall timing and the
//! 3-hourly cadence are exact by construction. Fields are built from the same ingredients a forecaster
//! would see in reanalysis: a tilted vortex in the wind channels (calm at the
//! eye, strongest near the radius of maximum wind, weakening aloft), a
//! storm-following depression plus a poleward gradient in the geopotential
//! heights, and a world-fixed sea-surface temperature ramp that is masked out
//! over land and refilled through the shared missing-value path.
//!
//! Everything is derived from one master seed: tracks and fields consume
//! independent sub-seed streams per cyclone, so the field noise of one storm
//! can never shift another storm's track.

use chrono::{Duration, TimeZone, Utc};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geo::{cell_center, haversine_km, GeoError, GeoPoint, EARTH_RADIUS_KM};
use crate::ingest::{fill_missing_sst, Basin, FieldArchive, FieldSnapshot, TrackRow};
use crate::{derive_seed, SeedStream, FIELD_CHANNELS, GRID};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cyclone count must be positive")]
    NoCyclones,
    #[error("ocean fix bounds must satisfy 8 <= min <= max <= 40, got {min}..{max}")]
    BadFixBounds { min: usize, max: usize },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Parameters of one synthetic basin run.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub basin: Basin,
    pub n_cyclones: usize,
    pub seed: u64,
    /// Bounds on over-ocean fixes per storm; 8..=40 spans 24 h to 120 h.
    pub min_ocean_fixes: usize,
    pub max_ocean_fixes: usize,
}

impl SynthConfig {
    pub fn new(basin: Basin, n_cyclones: usize, seed: u64) -> Self {
        SynthConfig {
            basin,
            n_cyclones,
            seed,
            min_ocean_fixes: 8,
            max_ocean_fixes: 40,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.n_cyclones == 0 {
            return Err(SynthError::NoCyclones);
        }
        if self.min_ocean_fixes < 8
            || self.min_ocean_fixes > self.max_ocean_fixes
            || self.max_ocean_fixes > 40
        {
            return Err(SynthError::BadFixBounds {
                min: self.min_ocean_fixes,
                max: self.max_ocean_fixes,
            });
        }
        Ok(())
    }
}

/// Coastline meridian and landfall latitude band of a synthetic basin.
#[derive(Debug, Clone, Copy)]
struct BasinGeo {
    coast_lon: f64,
    lat_lo: f64,
    lat_hi: f64,
}

fn basin_geo(basin: Basin) -> BasinGeo {
    match basin {
        Basin::NI => BasinGeo { coast_lon: 85.0, lat_lo: 9.0, lat_hi: 19.0 },
        Basin::SI => BasinGeo { coast_lon: 95.0, lat_lo: -19.0, lat_hi: -9.0 },
        Basin::WP => BasinGeo { coast_lon: 122.0, lat_lo: 9.0, lat_hi: 23.0 },
        Basin::EP => BasinGeo { coast_lon: -95.0, lat_lo: 11.0, lat_hi: 21.0 },
        Basin::SP => BasinGeo { coast_lon: 160.0, lat_lo: -21.0, lat_hi: -11.0 },
        Basin::NA => BasinGeo { coast_lon: -80.0, lat_lo: 13.0, lat_hi: 27.0 },
    }
}

/// Distance to the synthetic coastline: zero at or east of the coast
/// meridian, otherwise great-circle distance due east to it.
pub fn dist_to_coast_km(point: GeoPoint, basin: Basin) -> f64 {
    let coast = basin_geo(basin).coast_lon;
    if point.lon() >= coast {
        0.0
    } else {
        let on_coast = GeoPoint::new(point.lat(), coast)
            .expect("latitude already validated by the source point");
        haversine_km(point, on_coast)
    }
}

const KM_PER_DEG: f64 = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;

/// Per-fix displacement in degrees, longitude component always eastward.
/// Must exceed the landfall overshoot (0.12 deg) so the last ocean fix stays
/// west of the coast.
const LON_SPEED_MIN: f64 = 0.13;

/// Per-level wind fraction, geopotential height base (m), and depression
/// share, ordered 225/500/700 hPa.
const LEVELS: [(f64, f64, f64); 3] = [
    (0.55, 11150.0, 0.5),
    (0.85, 5750.0, 0.8),
    (1.0, 3100.0, 1.0),
];

/// Poleward geopotential gradient in meters per degree, per level.
const Z_GRAD_PER_DEG: [f64; 3] = [2.0, 1.2, 0.6];

struct StormShape {
    v_max_ms: f64,
    r_max_km: f64,
}

/// Generates `n_cyclones` storms: 3-hourly track rows (ocean fixes plus the
/// landfall fix) and one field snapshot per ocean fix.
pub fn synthesize_basin(config: &SynthConfig) -> Result<(Vec<TrackRow>, FieldArchive), SynthError> {
    config.validate()?;
    let geo = basin_geo(config.basin);
    let epoch = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();

    let mut rows = Vec::new();
    let mut archive = FieldArchive::new();
    for i in 0..config.n_cyclones {
        let mut track_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SeedStream::Track, i as u64));
        let n_ocean = track_rng.random_range(config.min_ocean_fixes..=config.max_ocean_fixes);
        let track = backward_track(&mut track_rng, &geo, n_ocean)?;

        let sid = format!("{}-SYN-{:03}", config.basin, i);
        let name = format!("SYN{i:03}");
        let start = epoch + Duration::hours(30 * i as i64);
        for (j, point) in track.iter().enumerate() {
            rows.push(TrackRow {
                sid: sid.clone(),
                name: name.clone(),
                basin: config.basin,
                time: start + Duration::hours(3 * j as i64),
                point: *point,
                dist_to_land_km: dist_to_coast_km(*point, config.basin),
            });
        }
        debug_assert_eq!(rows.last().unwrap().dist_to_land_km, 0.0);

        let mut field_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SeedStream::Fields, i as u64));
        let shape = StormShape {
            v_max_ms: field_rng.random_range(15.0..40.0),
            r_max_km: field_rng.random_range(80.0..120.0),
        };
        let snapshots = track[..n_ocean]
            .iter()
            .map(|&center| snapshot_at(center, &geo, &shape))
            .collect::<Vec<_>>();
        archive.insert(sid, snapshots);
    }
    Ok((rows, archive))
}

/// Integrates a track backward from a landfall point just east of the coast.
/// The longitude step is clamped eastward and larger than the landfall
/// overshoot, so every earlier fix stays strictly over ocean.
fn backward_track(rng: &mut ChaCha8Rng, geo: &BasinGeo, n_ocean: usize) -> Result<Vec<GeoPoint>, SynthError> {
    let landfall_lat = rng.random_range(geo.lat_lo..geo.lat_hi);
    let landfall_lon = geo.coast_lon + rng.random_range(0.02..0.12);

    // Translation at landfall; storms speed up over their life, so the
    // velocity at formation is 1/(1+accel) of this.
    let s_lon = rng.random_range(0.30..0.52);
    let s_lat = rng.random_range(-0.12..0.12);
    let omega = rng.random_range(-0.025..0.025);
    let accel = rng.random_range(1.2..2.2);

    let ramp_den = (n_ocean - 1).max(1) as f64;
    let mut velocities = Vec::with_capacity(n_ocean);
    for j in 0..n_ocean {
        let theta = omega * j as f64;
        let (sin, cos) = theta.sin_cos();
        let mult = (1.0 + accel * j as f64 / ramp_den) / (1.0 + accel);
        let vx = (s_lon * cos - s_lat * sin) * mult + rng.random_range(-0.05..0.05);
        let vy = (s_lon * sin + s_lat * cos) * mult + rng.random_range(-0.05..0.05);
        velocities.push((vx.max(LON_SPEED_MIN), vy));
    }

    let mut lats = vec![0.0; n_ocean + 1];
    let mut lons = vec![0.0; n_ocean + 1];
    lats[n_ocean] = landfall_lat;
    lons[n_ocean] = landfall_lon;
    for j in (0..n_ocean).rev() {
        lons[j] = lons[j + 1] - velocities[j].0;
        lats[j] = lats[j + 1] - velocities[j].1;
    }

    let mut track = Vec::with_capacity(n_ocean + 1);
    for j in 0..=n_ocean {
        track.push(GeoPoint::new(lats[j], lons[j])?);
    }
    Ok(track)
}

/// Builds the 10-channel field snapshot for a storm centered at `center`.
fn snapshot_at(center: GeoPoint, geo: &BasinGeo, shape: &StormShape) -> FieldSnapshot {
    let cells = GRID * GRID;
    let mut data = vec![0.0f32; FIELD_CHANNELS * cells];
    let band_center = 0.5 * (geo.lat_lo + geo.lat_hi);
    let hemi = if band_center >= 0.0 { 1.0 } else { -1.0 };
    let depth_m = 1.5 * shape.v_max_ms;
    let cos_lat = center.lat().to_radians().cos();

    for i in 0..GRID {
        for j in 0..GRID {
            let (cell_lat, cell_lon) = cell_center(center, i, j);
            let dx_km = (cell_lon - center.lon()) * KM_PER_DEG * cos_lat;
            let dy_km = (cell_lat - center.lat()) * KM_PER_DEG;
            let r_km = dx_km.hypot(dy_km);

            // Rankine-style tangential profile: zero at the eye, peak V_max
            // at r_max, exponential decay outside.
            let speed = if r_km > 0.0 {
                shape.v_max_ms * (r_km / shape.r_max_km) * (1.0 - r_km / shape.r_max_km).exp()
            } else {
                0.0
            };
            // Cyclonic rotation: counterclockwise north of the equator.
            let (unit_u, unit_v) = if r_km > 0.0 {
                (-hemi * dy_km / r_km, hemi * dx_km / r_km)
            } else {
                (0.0, 0.0)
            };

            let depression = (-(r_km / 200.0) * (r_km / 200.0)).exp();
            let cell = i * GRID + j;
            for (lvl, (wind_frac, z_base, depth_share)) in LEVELS.iter().enumerate() {
                let u = wind_frac * speed * unit_u;
                let v = wind_frac * speed * unit_v;
                let z = z_base - depth_share * depth_m * depression
                    - Z_GRAD_PER_DEG[lvl] * hemi * (cell_lat - band_center);
                data[(3 * lvl) * cells + cell] = u as f32;
                data[(3 * lvl + 1) * cells + cell] = v as f32;
                data[(3 * lvl + 2) * cells + cell] = z as f32;
            }

            // World-fixed SST ramp, masked over land and refilled below.
            let sst_idx = 9 * cells + cell;
            if cell_lon >= geo.coast_lon {
                data[sst_idx] = f32::NAN;
            } else {
                let sst = 302.5 - 0.18 * (cell_lat - band_center).abs()
                    - 0.02 * (cell_lon - (geo.coast_lon - 20.0));
                data[sst_idx] = sst as f32;
            }
        }
    }

    fill_missing_sst(&mut data[9 * cells..10 * cells])
        .expect("open-ocean cells keep the SST channel from being all-missing");
    FieldSnapshot::new(data).expect("generated fields are finite by construction")
}
