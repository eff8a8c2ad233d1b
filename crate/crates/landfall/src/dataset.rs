//! Sliding-window dataset construction, unit-level splits, and the prepared
//! dataset container.
//!
//! A cyclone with `n` over-ocean fixes yields `max(0, n - T - 2)` windows of
//! length `T`: window `k` (1-based) covers fixes `k-1 ..= k+T-2` (0-based),
//! so the last window ends 4 fixes (12 h) before landfall and every target
//! satisfies the minimum-lead rule by construction. Windows are contiguous
//! and overlap by `T - 1` fixes.
//!
//! Splits operate on whole cyclones, never on samples: every sample inherits
//! the bucket of its unit, so windows of one storm can never leak across the
//! train/test boundary.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::binio;
use crate::geo::{latlon_channels, GeoPoint};
use crate::ingest::{Basin, CycloneUnit, FieldArchive, FieldSnapshot, IngestError};
use crate::{GRID, MIN_LEAD_HOURS, MODEL_CHANNELS, STEP_HOURS};

const DATASET_MAGIC: &[u8; 4] = b"TCLD";
const DATASET_VERSION: u32 = 1;

/// Values in one 12-channel model frame.
pub const FRAME_LEN: usize = MODEL_CHANNELS * GRID * GRID;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("storm {sid}: {snapshots} field snapshots for {fixes} ocean fixes")]
    SnapshotMismatch {
        sid: String,
        snapshots: usize,
        fixes: usize,
    },
    #[error("{mode} split needs at least {need} units, got {got}")]
    TooFewUnits {
        mode: &'static str,
        need: usize,
        got: usize,
    },
    #[error("window length must be at least 2 frames, got {0}")]
    WindowTooShort(usize),
}

/// One window over a unit's ocean fixes; `end` is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpan {
    pub start: usize,
    pub end: usize,
}

/// Windows plus the count removed by the minimum-lead guard. With the
/// counting rule above the guard never fires; it is kept as a safety net and
/// reported so callers can notice if it ever does.
#[derive(Debug, Clone)]
pub struct Windowing {
    pub spans: Vec<WindowSpan>,
    pub dropped_short_lead: usize,
}

/// Number of samples the counting rule yields before the lead guard.
pub fn expected_sample_count(ocean_len: usize, t_len: usize) -> usize {
    ocean_len.saturating_sub(t_len + 2)
}

/// Enumerates the window spans for a unit with `ocean_len` ocean fixes.
pub fn window_spans(ocean_len: usize, t_len: usize) -> Result<Windowing, DatasetError> {
    if t_len < 2 {
        return Err(DatasetError::WindowTooShort(t_len));
    }
    let mut spans = Vec::new();
    let mut dropped = 0;
    for k in 1..=expected_sample_count(ocean_len, t_len) {
        let start = k - 1;
        let end = start + t_len - 1;
        let lead_hours = (ocean_len - end) as f64 * STEP_HOURS;
        if lead_hours < MIN_LEAD_HOURS {
            dropped += 1;
            continue;
        }
        spans.push(WindowSpan { start, end });
    }
    Ok(Windowing {
        spans,
        dropped_short_lead: dropped,
    })
}

/// An owned training sample: `t_len` frames of 12 channels plus targets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub sid: String,
    pub span: WindowSpan,
    pub t_end: DateTime<Utc>,
    pub frames: Vec<Vec<f32>>,
    pub target_lat: f64,
    pub target_lon: f64,
    pub target_hours: f64,
}

/// Builds the full 12-channel frame for one fix: positional channels from
/// the fix location, then the archive's 10 field channels.
pub fn build_frame(center: GeoPoint, snapshot: &FieldSnapshot) -> Vec<f32> {
    let mut frame = Vec::with_capacity(FRAME_LEN);
    let pos = latlon_channels(center);
    frame.extend(pos.lats.iter().map(|&v| v as f32));
    frame.extend(pos.longs.iter().map(|&v| v as f32));
    frame.extend_from_slice(snapshot.data());
    frame
}

/// Materializes every window of one unit as owned samples.
pub fn window_unit(
    unit: &CycloneUnit,
    snapshots: &[FieldSnapshot],
    t_len: usize,
) -> Result<Vec<Sample>, DatasetError> {
    if snapshots.len() != unit.ocean_len() {
        return Err(DatasetError::SnapshotMismatch {
            sid: unit.sid.clone(),
            snapshots: snapshots.len(),
            fixes: unit.ocean_len(),
        });
    }
    let windowing = window_spans(unit.ocean_len(), t_len)?;
    let mut samples = Vec::with_capacity(windowing.spans.len());
    for span in windowing.spans {
        let frames = (span.start..=span.end)
            .map(|i| build_frame(unit.track[i], &snapshots[i]))
            .collect();
        samples.push(Sample {
            sid: unit.sid.clone(),
            span,
            t_end: unit.times[span.end],
            frames,
            target_lat: unit.landfall.lat(),
            target_lon: unit.landfall.lon(),
            target_hours: unit.hours_to_landfall(span.end),
        });
    }
    Ok(samples)
}

/// Unit ids assigned to the three buckets of one split (or one fold).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitBuckets {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// How the dataset's units are partitioned for training and evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitPlan {
    /// Single 60:20:20 partition.
    Holdout(SplitBuckets),
    /// 5-fold cross-validation; each unit appears in exactly one test set,
    /// and the remaining units are split 75:25 into train and validation.
    KFold(Vec<SplitBuckets>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    Holdout,
    KFold,
}

impl std::str::FromStr for SplitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "holdout" => Ok(SplitMode::Holdout),
            "kfold" => Ok(SplitMode::KFold),
            other => Err(format!("unknown split mode '{other}' (expected holdout or kfold)")),
        }
    }
}

pub const KFOLD_FOLDS: usize = 5;

/// Splits unit ids into buckets. Ids are sorted before the seeded shuffle,
/// so the plan depends only on the id set and the seed.
pub fn make_split(ids: &[String], mode: SplitMode, seed: u64) -> Result<SplitPlan, DatasetError> {
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(DatasetError::Corrupt("duplicate unit ids in split input".into()));
    }
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    let n = sorted.len();

    match mode {
        SplitMode::Holdout => {
            if n < 5 {
                return Err(DatasetError::TooFewUnits {
                    mode: "holdout",
                    need: 5,
                    got: n,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sorted.shuffle(&mut rng);
            let n_test = ((n as f64 * 0.2).round() as usize).max(1);
            let n_val = n_test;
            let test = sorted[..n_test].to_vec();
            let validation = sorted[n_test..n_test + n_val].to_vec();
            let train = sorted[n_test + n_val..].to_vec();
            Ok(SplitPlan::Holdout(SplitBuckets {
                train,
                validation,
                test,
            }))
        }
        SplitMode::KFold => {
            if n < KFOLD_FOLDS {
                return Err(DatasetError::TooFewUnits {
                    mode: "kfold",
                    need: KFOLD_FOLDS,
                    got: n,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sorted.shuffle(&mut rng);
            // Chunk sizes n/5, with the first n%5 folds one larger.
            let base = n / KFOLD_FOLDS;
            let extra = n % KFOLD_FOLDS;
            let mut folds = Vec::with_capacity(KFOLD_FOLDS);
            let mut offset = 0;
            for f in 0..KFOLD_FOLDS {
                let size = base + usize::from(f < extra);
                let test: Vec<String> = sorted[offset..offset + size].to_vec();
                let mut rest: Vec<String> = sorted[..offset]
                    .iter()
                    .chain(&sorted[offset + size..])
                    .cloned()
                    .collect();
                let mut fold_rng =
                    ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, crate::SeedStream::Fold, f as u64));
                rest.shuffle(&mut fold_rng);
                let n_val = ((rest.len() as f64 * 0.25).round() as usize).clamp(1, rest.len() - 1);
                let validation = rest[..n_val].to_vec();
                let train = rest[n_val..].to_vec();
                folds.push(SplitBuckets {
                    train,
                    validation,
                    test,
                });
                offset += size;
            }
            Ok(SplitPlan::KFold(folds))
        }
    }
}

/// A unit with its model-ready frames, as stored in a prepared dataset.
#[derive(Debug, Clone)]
pub struct PreparedUnit {
    pub sid: String,
    pub basin: Basin,
    pub times: Vec<DateTime<Utc>>,
    pub track: Vec<GeoPoint>,
    pub dist_to_land_km: Vec<f64>,
    pub landfall: GeoPoint,
    pub landfall_time: DateTime<Utc>,
    frames: Vec<f32>,
}

impl PreparedUnit {
    pub fn ocean_len(&self) -> usize {
        self.times.len()
    }

    /// The 12-channel frame for one ocean fix.
    pub fn frame(&self, idx: usize) -> &[f32] {
        &self.frames[idx * FRAME_LEN..(idx + 1) * FRAME_LEN]
    }
}

/// One sample, referencing its unit's frames instead of owning copies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRef {
    pub unit: usize,
    pub span: WindowSpan,
    pub target_lat: f64,
    pub target_lon: f64,
    pub target_hours: f64,
}

/// Windowed dataset with its split plan, ready for training.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    t_len: usize,
    units: Vec<PreparedUnit>,
    samples: Vec<SampleRef>,
    split: SplitPlan,
}

impl PreparedDataset {
    /// Windows every unit and records the split plan. Units appear in the
    /// given order; samples are ordered by unit, then by window position.
    pub fn build(
        units: &[CycloneUnit],
        archive: &FieldArchive,
        t_len: usize,
        split: SplitPlan,
    ) -> Result<Self, DatasetError> {
        let mut prepared_units = Vec::with_capacity(units.len());
        let mut samples = Vec::new();
        for (unit_idx, unit) in units.iter().enumerate() {
            let snapshots = archive.get(&unit.sid)?;
            if snapshots.len() != unit.ocean_len() {
                return Err(DatasetError::SnapshotMismatch {
                    sid: unit.sid.clone(),
                    snapshots: snapshots.len(),
                    fixes: unit.ocean_len(),
                });
            }
            let mut frames = Vec::with_capacity(unit.ocean_len() * FRAME_LEN);
            for (i, snap) in snapshots.iter().enumerate() {
                frames.extend_from_slice(&build_frame(unit.track[i], snap));
            }
            for span in window_spans(unit.ocean_len(), t_len)?.spans {
                samples.push(SampleRef {
                    unit: unit_idx,
                    span,
                    target_lat: unit.landfall.lat(),
                    target_lon: unit.landfall.lon(),
                    target_hours: unit.hours_to_landfall(span.end),
                });
            }
            prepared_units.push(PreparedUnit {
                sid: unit.sid.clone(),
                basin: unit.basin,
                times: unit.times.clone(),
                track: unit.track.clone(),
                dist_to_land_km: unit.dist_to_land_km.clone(),
                landfall: unit.landfall,
                landfall_time: unit.landfall_time,
                frames,
            });
        }
        Ok(PreparedDataset {
            t_len,
            units: prepared_units,
            samples,
            split,
        })
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn units(&self) -> &[PreparedUnit] {
        &self.units
    }

    pub fn samples(&self) -> &[SampleRef] {
        &self.samples
    }

    pub fn split(&self) -> &SplitPlan {
        &self.split
    }

    pub fn unit_by_sid(&self, sid: &str) -> Option<(usize, &PreparedUnit)> {
        self.units
            .iter()
            .enumerate()
            .find(|(_, u)| u.sid == sid)
    }

    /// Indices of samples whose unit is in the given id set, in sample order.
    pub fn samples_in(&self, ids: &[String]) -> Vec<usize> {
        let set: BTreeSet<&str> = ids.iter().map(|s| s.as_str()).collect();
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| set.contains(self.units[s.unit].sid.as_str()))
            .map(|(i, _)| i)
            .collect()
    }

    /// Frame slices of one sample's window, oldest first.
    pub fn window_frames(&self, sample_idx: usize) -> Vec<&[f32]> {
        let s = &self.samples[sample_idx];
        let unit = &self.units[s.unit];
        (s.span.start..=s.span.end).map(|i| unit.frame(i)).collect()
    }

    /// Valid-time of a sample (the time of its last frame).
    pub fn t_end(&self, sample_idx: usize) -> DateTime<Utc> {
        let s = &self.samples[sample_idx];
        self.units[s.unit].times[s.span.end]
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DatasetError> {
        w.write_all(DATASET_MAGIC)?;
        binio::write_u32(&mut w, DATASET_VERSION)?;
        binio::write_u32(&mut w, self.t_len as u32)?;
        binio::write_u32(&mut w, self.units.len() as u32)?;
        for unit in &self.units {
            binio::write_str(&mut w, &unit.sid)?;
            binio::write_u8(&mut w, unit.basin.code())?;
            binio::write_u32(&mut w, unit.ocean_len() as u32)?;
            for t in &unit.times {
                binio::write_i64(&mut w, t.timestamp())?;
            }
            for p in &unit.track {
                binio::write_f64(&mut w, p.lat())?;
                binio::write_f64(&mut w, p.lon())?;
            }
            binio::write_f64_slice(&mut w, &unit.dist_to_land_km)?;
            binio::write_f64(&mut w, unit.landfall.lat())?;
            binio::write_f64(&mut w, unit.landfall.lon())?;
            binio::write_i64(&mut w, unit.landfall_time.timestamp())?;
            binio::write_f32_slice(&mut w, &unit.frames)?;
        }
        binio::write_u32(&mut w, self.samples.len() as u32)?;
        for s in &self.samples {
            binio::write_u32(&mut w, s.unit as u32)?;
            binio::write_u32(&mut w, s.span.start as u32)?;
            binio::write_u32(&mut w, s.span.end as u32)?;
            binio::write_f64(&mut w, s.target_lat)?;
            binio::write_f64(&mut w, s.target_lon)?;
            binio::write_f64(&mut w, s.target_hours)?;
        }
        match &self.split {
            SplitPlan::Holdout(buckets) => {
                binio::write_u8(&mut w, 0)?;
                write_buckets(&mut w, buckets)?;
            }
            SplitPlan::KFold(folds) => {
                binio::write_u8(&mut w, 1)?;
                binio::write_u32(&mut w, folds.len() as u32)?;
                for fold in folds {
                    write_buckets(&mut w, fold)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, DatasetError> {
        let magic = binio::read_magic(&mut r)?;
        if &magic != DATASET_MAGIC {
            return Err(DatasetError::BadMagic {
                found: magic,
                expected: *DATASET_MAGIC,
            });
        }
        let version = binio::read_u32(&mut r)?;
        if version != DATASET_VERSION {
            return Err(DatasetError::UnsupportedVersion(version));
        }
        let t_len = binio::read_u32(&mut r)? as usize;
        if t_len < 2 {
            return Err(DatasetError::Corrupt(format!("window length {t_len}")));
        }
        let n_units = binio::read_u32(&mut r)? as usize;
        let mut units = Vec::with_capacity(n_units);
        for _ in 0..n_units {
            let sid = binio::read_str(&mut r)?;
            let basin_code = binio::read_u8(&mut r)?;
            let basin = Basin::from_code(basin_code).ok_or_else(|| {
                DatasetError::Corrupt(format!("storm {sid}: unknown basin code {basin_code}"))
            })?;
            let n = binio::read_u32(&mut r)? as usize;
            if n == 0 {
                return Err(DatasetError::Corrupt(format!("storm {sid}: no fixes")));
            }
            let mut times = Vec::with_capacity(n);
            for _ in 0..n {
                times.push(read_time(&mut r, &sid)?);
            }
            let mut track = Vec::with_capacity(n);
            for _ in 0..n {
                let lat = binio::read_f64(&mut r)?;
                let lon = binio::read_f64(&mut r)?;
                track.push(read_point(lat, lon, &sid)?);
            }
            let dist_to_land_km = binio::read_f64_vec(&mut r, n)?;
            let lf_lat = binio::read_f64(&mut r)?;
            let lf_lon = binio::read_f64(&mut r)?;
            let landfall = read_point(lf_lat, lf_lon, &sid)?;
            let landfall_time = read_time(&mut r, &sid)?;
            let frames = binio::read_f32_vec(&mut r, n * FRAME_LEN)?;
            if frames.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::Corrupt(format!("storm {sid}: non-finite frame value")));
            }
            units.push(PreparedUnit {
                sid,
                basin,
                times,
                track,
                dist_to_land_km,
                landfall,
                landfall_time,
                frames,
            });
        }
        let n_samples = binio::read_u32(&mut r)? as usize;
        let mut samples = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let unit = binio::read_u32(&mut r)? as usize;
            let start = binio::read_u32(&mut r)? as usize;
            let end = binio::read_u32(&mut r)? as usize;
            let target_lat = binio::read_f64(&mut r)?;
            let target_lon = binio::read_f64(&mut r)?;
            let target_hours = binio::read_f64(&mut r)?;
            if unit >= units.len() || start > end || end >= units[unit].ocean_len() {
                return Err(DatasetError::Corrupt(format!(
                    "sample references unit {unit} span {start}..={end}"
                )));
            }
            samples.push(SampleRef {
                unit,
                span: WindowSpan { start, end },
                target_lat,
                target_lon,
                target_hours,
            });
        }
        let split = match binio::read_u8(&mut r)? {
            0 => SplitPlan::Holdout(read_buckets(&mut r)?),
            1 => {
                let n_folds = binio::read_u32(&mut r)? as usize;
                let mut folds = Vec::with_capacity(n_folds);
                for _ in 0..n_folds {
                    folds.push(read_buckets(&mut r)?);
                }
                SplitPlan::KFold(folds)
            }
            tag => return Err(DatasetError::Corrupt(format!("unknown split tag {tag}"))),
        };
        Ok(PreparedDataset {
            t_len,
            units,
            samples,
            split,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_buckets<W: Write>(w: &mut W, buckets: &SplitBuckets) -> Result<(), DatasetError> {
    for list in [&buckets.train, &buckets.validation, &buckets.test] {
        binio::write_u32(w, list.len() as u32)?;
        for sid in list {
            binio::write_str(w, sid)?;
        }
    }
    Ok(())
}

fn read_buckets<R: Read>(r: &mut R) -> Result<SplitBuckets, DatasetError> {
    let mut lists = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = binio::read_u32(r)? as usize;
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            list.push(binio::read_str(r)?);
        }
        lists.push(list);
    }
    let test = lists.pop().unwrap();
    let validation = lists.pop().unwrap();
    let train = lists.pop().unwrap();
    Ok(SplitBuckets {
        train,
        validation,
        test,
    })
}

fn read_time<R: Read>(r: &mut R, sid: &str) -> Result<DateTime<Utc>, DatasetError> {
    let secs = binio::read_i64(r)?;
    Utc.timestamp_opt(secs, 0)
        .single()
        .ok_or_else(|| DatasetError::Corrupt(format!("storm {sid}: bad timestamp {secs}")))
}

fn read_point(lat: f64, lon: f64, sid: &str) -> Result<GeoPoint, DatasetError> {
    GeoPoint::new(lat, lon)
        .map_err(|e| DatasetError::Corrupt(format!("storm {sid}: {e}")))
}
