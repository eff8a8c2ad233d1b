//! Regression error metrics and simple aggregation over folds.

use thiserror::Error;

use crate::geo::{haversine_km, GeoPoint};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metric needs equally long, non-empty series (got {pred} predictions, {actual} actuals)")]
    BadSeries { pred: usize, actual: usize },
}

fn check(pred: usize, actual: usize) -> Result<(), MetricsError> {
    if pred == 0 || pred != actual {
        return Err(MetricsError::BadSeries { pred, actual });
    }
    Ok(())
}

/// Root mean squared error over paired series.
pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64, MetricsError> {
    check(pred.len(), actual.len())?;
    let mse = pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Mean absolute error over paired series.
pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64, MetricsError> {
    check(pred.len(), actual.len())?;
    Ok(pred
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Mean great-circle distance in km between predicted and actual points.
pub fn mean_distance_km(pred: &[GeoPoint], actual: &[GeoPoint]) -> Result<f64, MetricsError> {
    check(pred.len(), actual.len())?;
    Ok(pred
        .iter()
        .zip(actual)
        .map(|(p, a)| haversine_km(*p, *a))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Mean and population standard deviation of a series. A single value has
/// standard deviation zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Result<Stat, MetricsError> {
        check(values.len(), values.len())?;
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Stat {
            mean,
            std: var.sqrt(),
        })
    }
}
