//! Evaluation of trained heads, reference baselines, the k-fold protocol,
//! and per-storm forecast traces.

use thiserror::Error;

use crate::dataset::{PreparedDataset, SplitBuckets, SplitPlan};
use crate::geo::{haversine_km, GeoPoint};
use crate::metrics::{self, MetricsError};
use crate::nn::{LandfallModel, ModelConfig, ModelError, TargetKind};
use crate::scale::{ScaleError, ScalerStats};
use crate::train::{predict_sample, train_model, EpochStats, TrainConfig, TrainError};
use crate::{derive_seed, SeedStream, STEP_HOURS};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("evaluation needs a non-empty sample set")]
    EmptySampleSet,
    #[error("dataset split is {got}, expected {want}")]
    WrongSplit { want: &'static str, got: &'static str },
    #[error("storm {0} not found in the dataset")]
    UnknownUnit(String),
    #[error("storm {sid} is too short to trace with window {t_len}")]
    UntraceableUnit { sid: String, t_len: usize },
}

/// Location-head errors over one sample set, in raw units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationEval {
    pub rmse_lat: f64,
    pub rmse_lon: f64,
    pub mae_lat: f64,
    pub mae_lon: f64,
    /// Mean great-circle distance between predicted and actual landfall.
    pub mae_distance_km: f64,
    pub n_samples: usize,
}

/// Time-head errors over one sample set, in hours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeEval {
    pub rmse_hours: f64,
    pub mae_hours: f64,
    pub n_samples: usize,
}

/// Errors of the two reference baselines over the same sample set:
/// persistence (landfall at the last observed position) for location, and
/// current distance over recent speed for time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineEval {
    pub location_mae_distance_km: f64,
    pub time_rmse_hours: f64,
    pub time_mae_hours: f64,
    pub n_samples: usize,
}

/// Clamps a raw prediction onto the sphere so distances stay defined even
/// for a wild, untrained head.
fn clamp_point(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat.clamp(-90.0, 90.0), lon).expect("latitude clamped into range")
}

/// Evaluates a location head on the given samples.
pub fn evaluate_location(
    model: &LandfallModel,
    data: &PreparedDataset,
    scaler: &ScalerStats,
    idx: &[usize],
) -> Result<LocationEval, EvalError> {
    if idx.is_empty() {
        return Err(EvalError::EmptySampleSet);
    }
    let mut pred_lat = Vec::with_capacity(idx.len());
    let mut pred_lon = Vec::with_capacity(idx.len());
    let mut act_lat = Vec::with_capacity(idx.len());
    let mut act_lon = Vec::with_capacity(idx.len());
    let mut pred_pts = Vec::with_capacity(idx.len());
    let mut act_pts = Vec::with_capacity(idx.len());
    for &i in idx {
        let pred = predict_sample(model, data, scaler, TargetKind::Location, i)?;
        let s = &data.samples()[i];
        pred_lat.push(pred[0]);
        pred_lon.push(pred[1]);
        act_lat.push(s.target_lat);
        act_lon.push(s.target_lon);
        pred_pts.push(clamp_point(pred[0], pred[1]));
        act_pts.push(clamp_point(s.target_lat, s.target_lon));
    }
    Ok(LocationEval {
        rmse_lat: metrics::rmse(&pred_lat, &act_lat)?,
        rmse_lon: metrics::rmse(&pred_lon, &act_lon)?,
        mae_lat: metrics::mae(&pred_lat, &act_lat)?,
        mae_lon: metrics::mae(&pred_lon, &act_lon)?,
        mae_distance_km: metrics::mean_distance_km(&pred_pts, &act_pts)?,
        n_samples: idx.len(),
    })
}

/// Evaluates a time head on the given samples.
pub fn evaluate_time(
    model: &LandfallModel,
    data: &PreparedDataset,
    scaler: &ScalerStats,
    idx: &[usize],
) -> Result<TimeEval, EvalError> {
    if idx.is_empty() {
        return Err(EvalError::EmptySampleSet);
    }
    let mut pred = Vec::with_capacity(idx.len());
    let mut actual = Vec::with_capacity(idx.len());
    for &i in idx {
        pred.push(predict_sample(model, data, scaler, TargetKind::Time, i)?[0]);
        actual.push(data.samples()[i].target_hours);
    }
    Ok(TimeEval {
        rmse_hours: metrics::rmse(&pred, &actual)?,
        mae_hours: metrics::mae(&pred, &actual)?,
        n_samples: idx.len(),
    })
}

/// Persistence location forecast: landfall at the last observed position.
pub fn persistence_location(data: &PreparedDataset, sample_idx: usize) -> GeoPoint {
    let s = &data.samples()[sample_idx];
    data.units()[s.unit].track[s.span.end]
}

/// Distance-over-speed time forecast: remaining distance to land at the
/// window end, divided by the speed over the last observed step.
pub fn distance_speed_hours(data: &PreparedDataset, sample_idx: usize) -> f64 {
    let s = &data.samples()[sample_idx];
    let unit = &data.units()[s.unit];
    let end = s.span.end;
    let dist = unit.dist_to_land_km[end];
    let step_km = haversine_km(unit.track[end - 1], unit.track[end]);
    let speed_kmh = (step_km / STEP_HOURS).max(1e-6);
    dist / speed_kmh
}

/// Evaluates both baselines on the given samples.
pub fn evaluate_baselines(data: &PreparedDataset, idx: &[usize]) -> Result<BaselineEval, EvalError> {
    if idx.is_empty() {
        return Err(EvalError::EmptySampleSet);
    }
    let mut pred_pts = Vec::with_capacity(idx.len());
    let mut act_pts = Vec::with_capacity(idx.len());
    let mut pred_hours = Vec::with_capacity(idx.len());
    let mut act_hours = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &data.samples()[i];
        pred_pts.push(persistence_location(data, i));
        act_pts.push(clamp_point(s.target_lat, s.target_lon));
        pred_hours.push(distance_speed_hours(data, i));
        act_hours.push(s.target_hours);
    }
    Ok(BaselineEval {
        location_mae_distance_km: metrics::mean_distance_km(&pred_pts, &act_pts)?,
        time_rmse_hours: metrics::rmse(&pred_hours, &act_hours)?,
        time_mae_hours: metrics::mae(&pred_hours, &act_hours)?,
        n_samples: idx.len(),
    })
}

/// A trained head with the scaler it was fit with.
pub struct TrainedHead {
    pub model: LandfallModel,
    pub scaler: ScalerStats,
    pub history: Vec<EpochStats>,
}

/// Fits the scaler on the train bucket and trains one head against the
/// validation bucket.
pub fn train_head(
    data: &PreparedDataset,
    target: TargetKind,
    model_config: ModelConfig,
    train_config: &TrainConfig,
    scale_latlon: bool,
    init_seed: u64,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<TrainedHead, EvalError> {
    let scaler = ScalerStats::fit(data, train_idx, target, scale_latlon)?;
    let mut model = LandfallModel::new(model_config, init_seed)?;
    let history = train_model(&mut model, target, data, &scaler, train_idx, val_idx, train_config)?;
    Ok(TrainedHead {
        model,
        scaler,
        history,
    })
}

/// Everything produced by one fold of the k-fold protocol.
pub struct FoldReport {
    pub fold: usize,
    pub location: LocationEval,
    pub time: TimeEval,
    pub baseline: BaselineEval,
    pub location_head: TrainedHead,
    pub time_head: TrainedHead,
}

/// Shared settings of a k-fold run. The two heads train with the same
/// hyperparameters except for their epoch counts and learning rates.
pub struct KFoldConfig {
    pub location_model: ModelConfig,
    pub time_model: ModelConfig,
    pub location_train: TrainConfig,
    pub time_train: TrainConfig,
    pub scale_latlon: bool,
}

/// Runs the k-fold protocol stored in the dataset's split plan: for each
/// fold, fits scalers and trains both heads on that fold's train bucket,
/// then evaluates heads and baselines on the fold's test bucket.
pub fn run_kfold(data: &PreparedDataset, config: &KFoldConfig) -> Result<Vec<FoldReport>, EvalError> {
    let folds: &[SplitBuckets] = match data.split() {
        SplitPlan::KFold(folds) => folds,
        SplitPlan::Holdout(_) => {
            return Err(EvalError::WrongSplit {
                want: "kfold",
                got: "holdout",
            })
        }
    };

    let mut reports = Vec::with_capacity(folds.len());
    for (fold, buckets) in folds.iter().enumerate() {
        let train_idx = data.samples_in(&buckets.train);
        let val_idx = data.samples_in(&buckets.validation);
        let test_idx = data.samples_in(&buckets.test);

        let location_head = train_head(
            data,
            TargetKind::Location,
            config.location_model.clone(),
            &config.location_train,
            config.scale_latlon,
            derive_seed(config.location_train.seed, SeedStream::Init, fold as u64),
            &train_idx,
            &val_idx,
        )?;
        let time_head = train_head(
            data,
            TargetKind::Time,
            config.time_model.clone(),
            &config.time_train,
            config.scale_latlon,
            derive_seed(config.time_train.seed, SeedStream::Init, fold as u64),
            &train_idx,
            &val_idx,
        )?;

        let location = evaluate_location(&location_head.model, data, &location_head.scaler, &test_idx)?;
        let time = evaluate_time(&time_head.model, data, &time_head.scaler, &test_idx)?;
        let baseline = evaluate_baselines(data, &test_idx)?;
        reports.push(FoldReport {
            fold,
            location,
            time,
            baseline,
            location_head,
            time_head,
        });
    }
    Ok(reports)
}

/// One row of a per-storm forecast trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub sid: String,
    pub t_end: chrono::DateTime<chrono::Utc>,
    /// Hours between the storm's first fix and the window end.
    pub hours_since_formation: f64,
    pub pred_lat: f64,
    pub pred_lon: f64,
    pub pred_hours: f64,
    pub actual_lat: f64,
    pub actual_lon: f64,
    pub actual_hours: f64,
    /// Great-circle error of the predicted landfall point, km.
    pub location_error_km: f64,
}

/// Replays both heads over every admissible window of one storm, earliest
/// first: the first row sits `3 * (t_len - 1)` hours after formation, the
/// last one 12 hours before landfall.
pub fn trace_unit(
    data: &PreparedDataset,
    sid: &str,
    location: (&LandfallModel, &ScalerStats),
    time: (&LandfallModel, &ScalerStats),
) -> Result<Vec<TraceRow>, EvalError> {
    let (unit_idx, unit) = data
        .unit_by_sid(sid)
        .ok_or_else(|| EvalError::UnknownUnit(sid.to_string()))?;
    let sample_idx: Vec<usize> = data
        .samples()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.unit == unit_idx)
        .map(|(i, _)| i)
        .collect();
    if sample_idx.is_empty() {
        return Err(EvalError::UntraceableUnit {
            sid: sid.to_string(),
            t_len: data.t_len(),
        });
    }

    let mut rows = Vec::with_capacity(sample_idx.len());
    for i in sample_idx {
        let s = &data.samples()[i];
        let loc_pred = predict_sample(location.0, data, location.1, TargetKind::Location, i)?;
        let time_pred = predict_sample(time.0, data, time.1, TargetKind::Time, i)?;
        let pred_point = clamp_point(loc_pred[0], loc_pred[1]);
        rows.push(TraceRow {
            sid: sid.to_string(),
            t_end: data.t_end(i),
            hours_since_formation: s.span.end as f64 * STEP_HOURS,
            pred_lat: loc_pred[0],
            pred_lon: loc_pred[1],
            pred_hours: time_pred[0],
            actual_lat: s.target_lat,
            actual_lon: s.target_lon,
            actual_hours: s.target_hours,
            location_error_km: haversine_km(pred_point, unit.landfall),
        });
    }
    Ok(rows)
}
