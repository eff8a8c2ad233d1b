//! CSV rendering of training histories, fold metrics, summaries, traces,
//! and predictions.
//!
//! Every renderer is a pure function of its rows, numbers are written in
//! shortest round-trip form, and group orderings are sorted, so rendering
//! the same data twice yields identical bytes.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{FoldReport, TraceRow};
use crate::metrics::{MetricsError, Stat};
use crate::train::EpochStats;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot summarize an empty set of fold rows")]
    NoRows,
}

/// Formats a timestamp the way every CSV in this crate does.
pub fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn render<T: Serialize>(rows: &[T]) -> Result<String, ReportError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer.into_inner().expect("flushing an in-memory writer cannot fail");
    Ok(String::from_utf8(bytes).expect("serialized rows are UTF-8"))
}

/// One epoch of a training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_mse: f64,
    /// Empty when the run had no validation samples.
    pub val_mse: Option<f64>,
}

pub fn history_csv(history: &[EpochStats]) -> Result<String, ReportError> {
    let rows: Vec<HistoryRow> = history
        .iter()
        .map(|e| HistoryRow {
            epoch: e.epoch,
            train_mse: e.train_mse,
            val_mse: e.val_mse,
        })
        .collect();
    render(&rows)
}

/// Test metrics of one fold (or of a single holdout evaluation, as fold 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetricsRow {
    pub basin: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub fold: usize,
    pub dataset_size: usize,
    pub n_test_samples: usize,
    pub rmse_lat: f64,
    pub rmse_lon: f64,
    pub mae_lat: f64,
    pub mae_lon: f64,
    pub mae_distance_km: f64,
    pub rmse_time: f64,
    pub mae_time: f64,
    pub baseline_distance_km: f64,
    pub baseline_rmse_time: f64,
    pub baseline_mae_time: f64,
}

impl FoldMetricsRow {
    pub fn from_fold(basin: String, t: usize, dataset_size: usize, report: &FoldReport) -> Self {
        FoldMetricsRow {
            basin,
            t,
            fold: report.fold,
            dataset_size,
            n_test_samples: report.location.n_samples,
            rmse_lat: report.location.rmse_lat,
            rmse_lon: report.location.rmse_lon,
            mae_lat: report.location.mae_lat,
            mae_lon: report.location.mae_lon,
            mae_distance_km: report.location.mae_distance_km,
            rmse_time: report.time.rmse_hours,
            mae_time: report.time.mae_hours,
            baseline_distance_km: report.baseline.location_mae_distance_km,
            baseline_rmse_time: report.baseline.time_rmse_hours,
            baseline_mae_time: report.baseline.time_mae_hours,
        }
    }
}

pub fn fold_metrics_csv(rows: &[FoldMetricsRow]) -> Result<String, ReportError> {
    render(rows)
}

pub fn parse_fold_metrics<R: Read>(reader: R) -> Result<Vec<FoldMetricsRow>, ReportError> {
    let mut rows = Vec::new();
    for record in csv::Reader::from_reader(reader).deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

/// Aggregated metrics of one (basin, T) group: mean and population standard
/// deviation over its folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub basin: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub dataset_size: usize,
    pub n_folds: usize,
    pub rmse_lat: f64,
    pub std_rmse_lat: f64,
    pub rmse_lon: f64,
    pub std_rmse_lon: f64,
    pub mae_lat: f64,
    pub std_mae_lat: f64,
    pub mae_lon: f64,
    pub std_mae_lon: f64,
    pub mae_distance_km: f64,
    pub std_mae_distance_km: f64,
    pub rmse_time: f64,
    pub std_rmse_time: f64,
    pub mae_time: f64,
    pub std_mae_time: f64,
    pub baseline_distance_km: f64,
    pub std_baseline_distance_km: f64,
    pub baseline_mae_time: f64,
    pub std_baseline_mae_time: f64,
}

/// Groups fold rows by (basin, T), sorted, and aggregates each group.
pub fn summarize(rows: &[FoldMetricsRow]) -> Result<Vec<SummaryRow>, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::NoRows);
    }
    let mut groups: BTreeMap<(String, usize), Vec<&FoldMetricsRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.basin.clone(), row.t)).or_default().push(row);
    }

    let mut out = Vec::with_capacity(groups.len());
    for ((basin, t), members) in groups {
        let stat = |pick: fn(&FoldMetricsRow) -> f64| -> Result<Stat, ReportError> {
            let values: Vec<f64> = members.iter().map(|r| pick(r)).collect();
            Ok(Stat::of(&values)?)
        };
        let rmse_lat = stat(|r| r.rmse_lat)?;
        let rmse_lon = stat(|r| r.rmse_lon)?;
        let mae_lat = stat(|r| r.mae_lat)?;
        let mae_lon = stat(|r| r.mae_lon)?;
        let mae_distance = stat(|r| r.mae_distance_km)?;
        let rmse_time = stat(|r| r.rmse_time)?;
        let mae_time = stat(|r| r.mae_time)?;
        let base_dist = stat(|r| r.baseline_distance_km)?;
        let base_time = stat(|r| r.baseline_mae_time)?;
        out.push(SummaryRow {
            basin,
            t,
            dataset_size: members[0].dataset_size,
            n_folds: members.len(),
            rmse_lat: rmse_lat.mean,
            std_rmse_lat: rmse_lat.std,
            rmse_lon: rmse_lon.mean,
            std_rmse_lon: rmse_lon.std,
            mae_lat: mae_lat.mean,
            std_mae_lat: mae_lat.std,
            mae_lon: mae_lon.mean,
            std_mae_lon: mae_lon.std,
            mae_distance_km: mae_distance.mean,
            std_mae_distance_km: mae_distance.std,
            rmse_time: rmse_time.mean,
            std_rmse_time: rmse_time.std,
            mae_time: mae_time.mean,
            std_mae_time: mae_time.std,
            baseline_distance_km: base_dist.mean,
            std_baseline_distance_km: base_dist.std,
            baseline_mae_time: base_time.mean,
            std_baseline_mae_time: base_time.std,
        });
    }
    Ok(out)
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String, ReportError> {
    render(rows)
}

/// Serialized form of an [`eval::TraceRow`](crate::eval::TraceRow).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceCsvRow {
    pub sid: String,
    pub t_end: String,
    pub hours_since_formation: f64,
    pub pred_lat: f64,
    pub pred_lon: f64,
    pub pred_hours: f64,
    pub actual_lat: f64,
    pub actual_lon: f64,
    pub actual_hours: f64,
    pub location_error_km: f64,
}

pub fn trace_csv(rows: &[TraceRow]) -> Result<String, ReportError> {
    let csv_rows: Vec<TraceCsvRow> = rows
        .iter()
        .map(|r| TraceCsvRow {
            sid: r.sid.clone(),
            t_end: format_time(&r.t_end),
            hours_since_formation: r.hours_since_formation,
            pred_lat: r.pred_lat,
            pred_lon: r.pred_lon,
            pred_hours: r.pred_hours,
            actual_lat: r.actual_lat,
            actual_lon: r.actual_lon,
            actual_hours: r.actual_hours,
            location_error_km: r.location_error_km,
        })
        .collect();
    render(&csv_rows)
}

/// One location-head prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationPredictionRow {
    pub sid: String,
    pub t_end: String,
    pub pred_lat: f64,
    pub pred_lon: f64,
    pub actual_lat: f64,
    pub actual_lon: f64,
    pub error_km: f64,
}

pub fn location_predictions_csv(rows: &[LocationPredictionRow]) -> Result<String, ReportError> {
    render(rows)
}

/// One time-head prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimePredictionRow {
    pub sid: String,
    pub t_end: String,
    pub pred_hours: f64,
    pub actual_hours: f64,
    pub abs_error_hours: f64,
}

pub fn time_predictions_csv(rows: &[TimePredictionRow]) -> Result<String, ReportError> {
    render(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fold_row(basin: &str, t: usize, fold: usize, rmse_lat: f64) -> FoldMetricsRow {
        FoldMetricsRow {
            basin: basin.to_string(),
            t,
            fold,
            dataset_size: 40,
            n_test_samples: 25,
            rmse_lat,
            rmse_lon: 0.5,
            mae_lat: 0.25,
            mae_lon: 0.4,
            mae_distance_km: 120.0,
            rmse_time: 6.0,
            mae_time: 4.5,
            baseline_distance_km: 300.0,
            baseline_rmse_time: 9.0,
            baseline_mae_time: 7.0,
        }
    }

    #[test]
    fn history_csv_is_stable_and_handles_missing_validation() {
        let history = vec![
            EpochStats {
                epoch: 0,
                train_mse: 1.5,
                val_mse: Some(2.25),
            },
            EpochStats {
                epoch: 1,
                train_mse: 0.75,
                val_mse: None,
            },
        ];
        let text = history_csv(&history).unwrap();
        assert_eq!(text, "epoch,train_mse,val_mse\n0,1.5,2.25\n1,0.75,\n");
        assert_eq!(text, history_csv(&history).unwrap());
    }

    #[test]
    fn fold_metrics_round_trip_through_csv() {
        let rows = vec![fold_row("WP", 4, 0, 1.0), fold_row("WP", 4, 1, 3.0)];
        let text = fold_metrics_csv(&rows).unwrap();
        assert!(text.starts_with("basin,T,fold,dataset_size,n_test_samples,rmse_lat"));
        let parsed = parse_fold_metrics(text.as_bytes()).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn summary_aggregates_mean_and_population_std() {
        let rows = vec![
            fold_row("WP", 4, 0, 1.0),
            fold_row("WP", 4, 1, 3.0),
            fold_row("NI", 4, 0, 2.0),
        ];
        let summary = summarize(&rows).unwrap();
        assert_eq!(summary.len(), 2);
        // Groups come out sorted by (basin, T).
        assert_eq!(summary[0].basin, "NI");
        assert_eq!(summary[1].basin, "WP");

        let wp = &summary[1];
        assert_eq!(wp.n_folds, 2);
        assert_eq!(wp.rmse_lat, 2.0);
        assert_eq!(wp.std_rmse_lat, 1.0);
        // A metric identical across folds has zero spread.
        assert_eq!(wp.std_mae_time, 0.0);

        let ni = &summary[0];
        assert_eq!(ni.n_folds, 1);
        assert_eq!(ni.std_rmse_lat, 0.0);

        let text = summary_csv(&summary).unwrap();
        assert!(text.starts_with("basin,T,dataset_size,n_folds,"));
        assert!(text.contains("std_mae_distance_km"));
    }

    #[test]
    fn summarize_rejects_empty_input() {
        assert!(matches!(summarize(&[]), Err(ReportError::NoRows)));
    }

    #[test]
    fn trace_and_prediction_renderers_emit_headers() {
        let trace = vec![TraceRow {
            sid: "WP-SYN-000".into(),
            t_end: chrono::TimeZone::with_ymd_and_hms(&Utc, 2020, 1, 1, 9, 0, 0).unwrap(),
            hours_since_formation: 9.0,
            pred_lat: 15.5,
            pred_lon: 120.25,
            pred_hours: 30.0,
            actual_lat: 16.0,
            actual_lon: 122.0,
            actual_hours: 27.0,
            location_error_km: 190.5,
        }];
        let text = trace_csv(&trace).unwrap();
        assert!(text.starts_with("sid,t_end,hours_since_formation,pred_lat"));
        assert!(text.contains("2020-01-01T09:00:00Z"));
        assert_eq!(text.lines().count(), 2);

        let loc = vec![LocationPredictionRow {
            sid: "A".into(),
            t_end: "2020-01-01T00:00:00Z".into(),
            pred_lat: 1.0,
            pred_lon: 2.0,
            actual_lat: 1.5,
            actual_lon: 2.5,
            error_km: 77.0,
        }];
        assert!(location_predictions_csv(&loc)
            .unwrap()
            .starts_with("sid,t_end,pred_lat,pred_lon,actual_lat,actual_lon,error_km"));

        let time = vec![TimePredictionRow {
            sid: "A".into(),
            t_end: "2020-01-01T00:00:00Z".into(),
            pred_hours: 20.0,
            actual_hours: 22.5,
            abs_error_hours: 2.5,
        }];
        assert!(time_predictions_csv(&time)
            .unwrap()
            .starts_with("sid,t_end,pred_hours,actual_hours,abs_error_hours"));
    }
}
