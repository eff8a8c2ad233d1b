//! Best-track ingestion and the gridded field archive.
//!
//! Tracks arrive as CSV rows (one per 3-hourly fix); fields arrive as a
//! binary archive of 10-channel 33x33 snapshots, one per over-ocean fix.
//! [`extract_cyclone_units`] turns validated rows into per-storm units:
//! the contiguous over-ocean prefix of a track plus its first landfall fix.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::geo::{GeoPoint, haversine_km};
use crate::{FIELD_CHANNELS, GRID, STEP_HOURS};

/// Index of sea-surface temperature among the archive's channels.
pub const SST_CHANNEL: usize = 9;
/// Archive channel names (the model prepends `lats`/`longs` to these).
pub const FIELD_CHANNEL_NAMES: [&str; FIELD_CHANNELS] = [
    "u225", "v225", "z225", "u500", "v500", "z500", "u700", "v700", "z700", "sst",
];
/// Storms whose over-ocean life is shorter than this are discarded.
pub const MIN_TRACK_HOURS: f64 = 21.0;

const FIELDS_MAGIC: &[u8; 4] = b"TCLF";
const FIELDS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("track row {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("storm {sid}: {msg}")]
    Unit { sid: String, msg: String },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("no field snapshots stored for storm {0}")]
    MissingUnit(String),
    #[error("corrupt field archive: {0}")]
    Corrupt(String),
}

/// Ocean basin a storm belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Basin {
    /// North Indian
    NI,
    /// South Indian
    SI,
    /// West Pacific
    WP,
    /// East Pacific
    EP,
    /// South Pacific
    SP,
    /// North Atlantic
    NA,
}

impl Basin {
    pub const ALL: [Basin; 6] = [
        Basin::NI,
        Basin::SI,
        Basin::WP,
        Basin::EP,
        Basin::SP,
        Basin::NA,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Basin::NI => "NI",
            Basin::SI => "SI",
            Basin::WP => "WP",
            Basin::EP => "EP",
            Basin::SP => "SP",
            Basin::NA => "NA",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Basin::NI => 0,
            Basin::SI => 1,
            Basin::WP => 2,
            Basin::EP => 3,
            Basin::SP => 4,
            Basin::NA => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Basin> {
        Basin::ALL.iter().copied().find(|b| b.code() == code)
    }
}

impl std::str::FromStr for Basin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Basin::ALL
            .iter()
            .copied()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown basin '{s}' (expected NI, SI, WP, EP, SP, or NA)"))
    }
}

impl std::fmt::Display for Basin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One validated best-track fix.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRow {
    pub sid: String,
    pub name: String,
    pub basin: Basin,
    pub time: DateTime<Utc>,
    pub point: GeoPoint,
    /// Great-circle distance to the nearest land in km; 0 means over land.
    pub dist_to_land_km: f64,
}

/// A storm's over-ocean life plus its first landfall fix.
#[derive(Debug, Clone)]
pub struct CycloneUnit {
    pub sid: String,
    pub name: String,
    pub basin: Basin,
    /// Over-ocean fixes, ascending in time, 3 h apart, `dist_to_land > 0`.
    pub times: Vec<DateTime<Utc>>,
    pub track: Vec<GeoPoint>,
    pub dist_to_land_km: Vec<f64>,
    /// First fix with `dist_to_land == 0`, 3 h after the last ocean fix.
    pub landfall_time: DateTime<Utc>,
    pub landfall: GeoPoint,
}

impl CycloneUnit {
    /// Number of over-ocean fixes.
    pub fn ocean_len(&self) -> usize {
        self.times.len()
    }

    /// Hours from formation to landfall.
    pub fn duration_hours(&self) -> f64 {
        self.ocean_len() as f64 * STEP_HOURS
    }

    /// Hours from a given ocean fix (by index) to landfall.
    pub fn hours_to_landfall(&self, idx: usize) -> f64 {
        (self.ocean_len() - idx) as f64 * STEP_HOURS
    }

    /// Great-circle distance from an ocean fix to the landfall point.
    pub fn distance_to_landfall_km(&self, idx: usize) -> f64 {
        haversine_km(self.track[idx], self.landfall)
    }
}

/// Parses and validates track rows from CSV with the header
/// `sid,name,basin,time,lat,lon,dist_to_land_km`. Times are RFC 3339;
/// longitudes are normalized into [-180, 180).
pub fn parse_tracks<R: Read>(reader: R) -> Result<Vec<TrackRow>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let want = ["sid", "name", "basin", "time", "lat", "lon", "dist_to_land_km"];
    let header_fields: Vec<&str> = headers.iter().collect();
    if header_fields != want {
        return Err(IngestError::Row {
            line: 1,
            msg: format!("header {header_fields:?}, expected {want:?}"),
        });
    }

    let mut rows = Vec::new();
    for record in csv_reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| IngestError::Row { line, msg };
        if record.len() != want.len() {
            return Err(err(format!("expected {} fields, got {}", want.len(), record.len())));
        }

        let sid = record[0].to_string();
        if sid.is_empty() {
            return Err(err("empty storm id".into()));
        }
        let name = record[1].to_string();
        let basin: Basin = record[2].parse().map_err(err)?;
        let time = DateTime::parse_from_rfc3339(&record[3])
            .map_err(|e| err(format!("bad timestamp '{}': {e}", &record[3])))?
            .with_timezone(&Utc);
        let lat: f64 = record[4]
            .parse()
            .map_err(|e| err(format!("bad latitude '{}': {e}", &record[4])))?;
        let lon: f64 = record[5]
            .parse()
            .map_err(|e| err(format!("bad longitude '{}': {e}", &record[5])))?;
        let point = GeoPoint::new(lat, lon).map_err(|e| err(e.to_string()))?;
        let dist: f64 = record[6]
            .parse()
            .map_err(|e| err(format!("bad dist_to_land_km '{}': {e}", &record[6])))?;
        if !dist.is_finite() || dist < 0.0 {
            return Err(err(format!("dist_to_land_km must be finite and >= 0, got {dist}")));
        }

        rows.push(TrackRow {
            sid,
            name,
            basin,
            time,
            point,
            dist_to_land_km: dist,
        });
    }
    Ok(rows)
}

/// Writes rows in the same CSV dialect that [`parse_tracks`] accepts.
pub fn write_tracks<W: Write>(writer: W, rows: &[TrackRow]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sid", "name", "basin", "time", "lat", "lon", "dist_to_land_km"])?;
    for r in rows {
        w.write_record([
            r.sid.as_str(),
            r.name.as_str(),
            r.basin.as_str(),
            &r.time.to_rfc3339_opts(SecondsFormat::Secs, true),
            &format!("{}", r.point.lat()),
            &format!("{}", r.point.lon()),
            &format!("{}", r.dist_to_land_km),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Groups rows into per-storm units and applies the selection rules: a storm
/// contributes a unit if it has a contiguous over-ocean prefix ending in a
/// landfall fix and its over-ocean life is at least `min_duration_hours`.
/// Storms that never reach land, or reach it too quickly, are discarded;
/// broken cadence or inconsistent metadata within a storm is an error.
pub fn extract_cyclone_units(
    rows: &[TrackRow],
    min_duration_hours: f64,
) -> Result<Vec<CycloneUnit>, IngestError> {
    let mut by_sid: BTreeMap<&str, Vec<&TrackRow>> = BTreeMap::new();
    for row in rows {
        by_sid.entry(&row.sid).or_default().push(row);
    }

    let mut units = Vec::new();
    for (sid, mut storm_rows) in by_sid {
        let unit_err = |msg: String| IngestError::Unit {
            sid: sid.to_string(),
            msg,
        };
        storm_rows.sort_by_key(|r| r.time);
        for pair in storm_rows.windows(2) {
            if pair[0].time == pair[1].time {
                return Err(unit_err(format!("duplicate timestamp {}", pair[0].time)));
            }
        }
        let first = storm_rows[0];
        if storm_rows
            .iter()
            .any(|r| r.basin != first.basin || r.name != first.name)
        {
            return Err(unit_err("inconsistent name or basin across rows".into()));
        }

        // The unit ends at the first over-land fix.
        let Some(landfall_idx) = storm_rows.iter().position(|r| r.dist_to_land_km == 0.0) else {
            continue; // never makes landfall
        };
        if landfall_idx == 0 {
            continue; // forms over land
        }
        let ocean = &storm_rows[..landfall_idx];
        let landfall = storm_rows[landfall_idx];

        let step = Duration::hours(STEP_HOURS as i64);
        for (i, pair) in storm_rows[..=landfall_idx].windows(2).enumerate() {
            if pair[1].time - pair[0].time != step {
                return Err(unit_err(format!(
                    "cadence break between fixes {} and {}: {} to {}",
                    i,
                    i + 1,
                    pair[0].time,
                    pair[1].time
                )));
            }
        }

        if (ocean.len() as f64) * STEP_HOURS < min_duration_hours {
            continue; // too short-lived over the ocean
        }

        units.push(CycloneUnit {
            sid: sid.to_string(),
            name: first.name.clone(),
            basin: first.basin,
            times: ocean.iter().map(|r| r.time).collect(),
            track: ocean.iter().map(|r| r.point).collect(),
            dist_to_land_km: ocean.iter().map(|r| r.dist_to_land_km).collect(),
            landfall_time: landfall.time,
            landfall: landfall.point,
        });
    }
    Ok(units)
}

/// One 10-channel 33x33 grid, channel-major and row-major within a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    data: Vec<f32>,
}

impl FieldSnapshot {
    pub const LEN: usize = FIELD_CHANNELS * GRID * GRID;

    /// Validates length and finiteness. Missing SST cells must be filled
    /// (see [`fill_missing_sst`]) before construction.
    pub fn new(data: Vec<f32>) -> Result<Self, IngestError> {
        if data.len() != Self::LEN {
            return Err(IngestError::Corrupt(format!(
                "snapshot holds {} values, expected {}",
                data.len(),
                Self::LEN
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::Corrupt(format!(
                "non-finite value in channel {} at cell {}",
                pos / (GRID * GRID),
                pos % (GRID * GRID)
            )));
        }
        Ok(FieldSnapshot { data })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Row-major 33x33 plane of one channel.
    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * GRID * GRID..(c + 1) * GRID * GRID]
    }
}

/// Replaces NaN cells of an SST plane (land cells have no sea-surface
/// temperature) with the mean of the valid cells. Returns how many cells
/// were filled; a plane with no valid cells at all is an error.
pub fn fill_missing_sst(plane: &mut [f32]) -> Result<usize, IngestError> {
    let mut sum = 0.0f64;
    let mut valid = 0usize;
    for v in plane.iter() {
        if v.is_finite() {
            sum += *v as f64;
            valid += 1;
        }
    }
    if valid == 0 {
        return Err(IngestError::Corrupt(
            "SST plane has no valid cells to fill from".into(),
        ));
    }
    let mean = (sum / valid as f64) as f32;
    let mut filled = 0;
    for v in plane.iter_mut() {
        if !v.is_finite() {
            *v = mean;
            filled += 1;
        }
    }
    Ok(filled)
}

/// All field snapshots for a set of storms, keyed by storm id. One snapshot
/// per over-ocean fix, in time order.
#[derive(Debug, Default, Clone)]
pub struct FieldArchive {
    units: BTreeMap<String, Vec<FieldSnapshot>>,
}

impl FieldArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sid: String, snapshots: Vec<FieldSnapshot>) {
        self.units.insert(sid, snapshots);
    }

    pub fn get(&self, sid: &str) -> Result<&[FieldSnapshot], IngestError> {
        self.units
            .get(sid)
            .map(|v| v.as_slice())
            .ok_or_else(|| IngestError::MissingUnit(sid.to_string()))
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.units.keys().map(|s| s.as_str())
    }

    /// Serializes the archive:
    ///
    /// ```text
    /// "TCLF" | u32 version | u32 n_units
    /// per unit: str sid | u32 n_time | u32 n_channels | u32 h | u32 w
    ///           | n_time * n_channels * h * w f32, time-major
    /// ```
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), IngestError> {
        w.write_all(FIELDS_MAGIC)?;
        binio::write_u32(&mut w, FIELDS_VERSION)?;
        binio::write_u32(&mut w, self.units.len() as u32)?;
        for (sid, snapshots) in &self.units {
            binio::write_str(&mut w, sid)?;
            binio::write_u32(&mut w, snapshots.len() as u32)?;
            binio::write_u32(&mut w, FIELD_CHANNELS as u32)?;
            binio::write_u32(&mut w, GRID as u32)?;
            binio::write_u32(&mut w, GRID as u32)?;
            for snap in snapshots {
                binio::write_f32_slice(&mut w, &snap.data)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, IngestError> {
        let magic = binio::read_magic(&mut r)?;
        if &magic != FIELDS_MAGIC {
            return Err(IngestError::BadMagic {
                found: magic,
                expected: *FIELDS_MAGIC,
            });
        }
        let version = binio::read_u32(&mut r)?;
        if version != FIELDS_VERSION {
            return Err(IngestError::UnsupportedVersion(version));
        }
        let n_units = binio::read_u32(&mut r)? as usize;
        let mut units = BTreeMap::new();
        for _ in 0..n_units {
            let sid = binio::read_str(&mut r)?;
            let n_time = binio::read_u32(&mut r)? as usize;
            let n_channels = binio::read_u32(&mut r)? as usize;
            let h = binio::read_u32(&mut r)? as usize;
            let w = binio::read_u32(&mut r)? as usize;
            if n_channels != FIELD_CHANNELS || h != GRID || w != GRID {
                return Err(IngestError::Corrupt(format!(
                    "storm {sid}: grid {n_channels}x{h}x{w}, expected {FIELD_CHANNELS}x{GRID}x{GRID}"
                )));
            }
            let mut snapshots = Vec::with_capacity(n_time);
            for _ in 0..n_time {
                let data = binio::read_f32_vec(&mut r, FieldSnapshot::LEN)?;
                snapshots.push(FieldSnapshot::new(data)?);
            }
            if units.insert(sid.clone(), snapshots).is_some() {
                return Err(IngestError::Corrupt(format!("duplicate storm id {sid}")));
            }
        }
        Ok(FieldArchive { units })
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A storm with `n_ocean` over-ocean fixes followed by one landfall fix.
    fn storm_csv(sid: &str, n_ocean: usize) -> String {
        let start = DateTime::parse_from_rfc3339("2020-01-01T00:00:00Z")
            .unwrap()
            .with_timezone(&Utc);
        let mut out = String::new();
        for i in 0..=n_ocean {
            let time = start + Duration::hours(3 * i as i64);
            let dist = if i < n_ocean {
                format!("{}", 400.0 - 30.0 * i as f64)
            } else {
                "0".to_string()
            };
            out.push_str(&format!(
                "{sid},TEST,NI,{},{},{},{}\n",
                time.to_rfc3339_opts(SecondsFormat::Secs, true),
                10.0 + 0.1 * i as f64,
                80.0 + 0.2 * i as f64,
                dist
            ));
        }
        out
    }

    fn with_header(body: &str) -> String {
        format!("sid,name,basin,time,lat,lon,dist_to_land_km\n{body}")
    }

    #[test]
    fn parse_normalizes_and_validates() {
        let csv = with_header("S1,ALPHA,SI,2020-06-01T00:00:00Z,-12.5,190.0,350.5\n");
        let rows = parse_tracks(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].basin, Basin::SI);
        assert_eq!(rows[0].point.lon(), -170.0);
        assert_eq!(rows[0].dist_to_land_km, 350.5);
    }

    #[test]
    fn parse_reports_row_numbers() {
        let csv = with_header(
            "S1,A,NI,2020-01-01T00:00:00Z,10,80,100\nS1,A,NI,2020-01-01T03:00:00Z,95,80,100\n",
        );
        match parse_tracks(csv.as_bytes()) {
            Err(IngestError::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_header_and_negative_distance() {
        let bad_header = "id,name,basin,time,lat,lon,dist\nS1,A,NI,2020-01-01T00:00:00Z,1,2,3\n";
        assert!(matches!(
            parse_tracks(bad_header.as_bytes()),
            Err(IngestError::Row { line: 1, .. })
        ));

        let neg = with_header("S1,A,NI,2020-01-01T00:00:00Z,10,80,-5\n");
        assert!(parse_tracks(neg.as_bytes()).is_err());
    }

    #[test]
    fn tracks_round_trip_through_csv() {
        let csv = with_header(&(storm_csv("S1", 7) + &storm_csv("S2", 8)));
        let rows = parse_tracks(csv.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_tracks(&mut buf, &rows).unwrap();
        let again = parse_tracks(buf.as_slice()).unwrap();
        assert_eq!(rows, again);
    }

    #[test]
    fn extraction_applies_duration_and_landfall_rules() {
        // 10 ocean fixes (30 h) and 8 (24 h) qualify; 4 (12 h) does not.
        let body = storm_csv("LONG", 10) + &storm_csv("MID", 8) + &storm_csv("SHORT", 4);
        let rows = parse_tracks(with_header(&body).as_bytes()).unwrap();
        let units = extract_cyclone_units(&rows, MIN_TRACK_HOURS).unwrap();
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].sid, "LONG");
        assert_eq!(units[0].ocean_len(), 10);
        assert_eq!(units[0].duration_hours(), 30.0);
        assert_eq!(units[1].sid, "MID");
        // Landfall is 3 h after the last ocean fix.
        assert_eq!(
            units[0].landfall_time - *units[0].times.last().unwrap(),
            Duration::hours(3)
        );
        assert!(units[0].dist_to_land_km.iter().all(|&d| d > 0.0));
    }

    #[test]
    fn storm_without_landfall_is_discarded() {
        let mut body = storm_csv("NOLAND", 9);
        // Drop the landfall line.
        body = body.lines().take(9).collect::<Vec<_>>().join("\n") + "\n";
        let rows = parse_tracks(with_header(&body).as_bytes()).unwrap();
        let units = extract_cyclone_units(&rows, MIN_TRACK_HOURS).unwrap();
        assert!(units.is_empty());
    }

    #[test]
    fn cadence_gap_is_an_error() {
        let body = "S1,A,NI,2020-01-01T00:00:00Z,10,80,300\n\
                    S1,A,NI,2020-01-01T06:00:00Z,10.5,80.5,200\n\
                    S1,A,NI,2020-01-01T09:00:00Z,11,81,0\n";
        let rows = parse_tracks(with_header(body).as_bytes()).unwrap();
        assert!(matches!(
            extract_cyclone_units(&rows, 0.0),
            Err(IngestError::Unit { .. })
        ));
    }

    #[test]
    fn hours_and_distance_to_landfall() {
        let rows = parse_tracks(with_header(&storm_csv("S1", 8)).as_bytes()).unwrap();
        let units = extract_cyclone_units(&rows, MIN_TRACK_HOURS).unwrap();
        let unit = &units[0];
        assert_eq!(unit.hours_to_landfall(0), 24.0);
        assert_eq!(unit.hours_to_landfall(7), 3.0);
        assert!(unit.distance_to_landfall_km(0) > unit.distance_to_landfall_km(7));
    }

    fn ramp_snapshot(offset: f32) -> FieldSnapshot {
        let data = (0..FieldSnapshot::LEN)
            .map(|i| offset + (i % 101) as f32 * 0.25)
            .collect();
        FieldSnapshot::new(data).unwrap()
    }

    #[test]
    fn archive_round_trips_bit_exact() {
        let mut archive = FieldArchive::new();
        archive.insert("S1".into(), vec![ramp_snapshot(0.0), ramp_snapshot(-3.5)]);
        archive.insert("S2".into(), vec![ramp_snapshot(7.25)]);
        let mut buf = Vec::new();
        archive.write_to(&mut buf).unwrap();
        let again = FieldArchive::read_from(buf.as_slice()).unwrap();
        assert_eq!(archive.len(), again.len());
        for sid in ["S1", "S2"] {
            let a = archive.get(sid).unwrap();
            let b = again.get(sid).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b) {
                for (p, q) in x.data().iter().zip(y.data()) {
                    assert_eq!(p.to_bits(), q.to_bits());
                }
            }
        }

        // And the serialized bytes themselves are stable.
        let mut buf2 = Vec::new();
        again.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn archive_rejects_wrong_magic_and_version() {
        let mut archive = FieldArchive::new();
        archive.insert("S1".into(), vec![ramp_snapshot(0.0)]);
        let mut buf = Vec::new();
        archive.write_to(&mut buf).unwrap();

        let mut wrong_magic = buf.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(
            FieldArchive::read_from(wrong_magic.as_slice()),
            Err(IngestError::BadMagic { .. })
        ));

        let mut wrong_version = buf.clone();
        wrong_version[4] = 99;
        assert!(matches!(
            FieldArchive::read_from(wrong_version.as_slice()),
            Err(IngestError::UnsupportedVersion(99))
        ));

        let truncated = &buf[..buf.len() - 7];
        assert!(FieldArchive::read_from(truncated).is_err());
    }

    #[test]
    fn missing_unit_is_reported_by_id() {
        let archive = FieldArchive::new();
        assert!(matches!(
            archive.get("GHOST"),
            Err(IngestError::MissingUnit(sid)) if sid == "GHOST"
        ));
    }

    #[test]
    fn snapshot_rejects_non_finite_and_wrong_length() {
        let mut data = vec![0.0f32; FieldSnapshot::LEN];
        data[5] = f32::NAN;
        assert!(FieldSnapshot::new(data).is_err());
        assert!(FieldSnapshot::new(vec![0.0; 7]).is_err());
    }

    #[test]
    fn sst_fill_uses_mean_of_valid_cells() {
        let mut plane = vec![300.0f32; GRID * GRID];
        plane[0] = f32::NAN;
        plane[1] = 302.0;
        plane[2] = f32::NAN;
        let filled = fill_missing_sst(&mut plane).unwrap();
        assert_eq!(filled, 2);
        let valid_mean = (300.0 * (GRID * GRID - 3) as f64 + 302.0) / (GRID * GRID - 2) as f64;
        assert!((plane[0] as f64 - valid_mean).abs() < 1e-3);
        assert_eq!(plane[0], plane[2]);

        let mut all_nan = vec![f32::NAN; GRID * GRID];
        assert!(fill_missing_sst(&mut all_nan).is_err());
    }
}
