//! Standardization of model inputs and regression targets.
//!
//! Channel statistics are fit over the training samples' frames only (a fix
//! shared by several overlapping windows is counted once per window, matching
//! per-sample semantics). Location targets get their own mean/std so that
//! predictions can be mapped back to degrees; time-to-landfall is trained on
//! raw hours and passes through unscaled.
//!
//! Variances are computed in two passes (mean first, then squared
//! deviations), so restandardizing the training data with the fitted stats
//! yields mean 0 and variance 1 to near machine precision even for channels
//! whose values sit far from zero, like geopotential.

use thiserror::Error;

use crate::dataset::PreparedDataset;
use crate::nn::TargetKind;
use crate::tensor::Tensor;
use crate::{GRID, MODEL_CHANNELS};

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("cannot fit scaler on an empty sample set")]
    EmptySampleSet,
    #[error("scaler has {got} channel stats, expected {want}")]
    ChannelArity { want: usize, got: usize },
}

/// Per-channel and per-target standardization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerStats {
    /// Per-channel means, length 12.
    pub channel_mean: Vec<f64>,
    /// Per-channel population standard deviations, length 12.
    pub channel_std: Vec<f64>,
    /// Whether the positional channels (`lats`, `longs`) are standardized.
    /// When false they pass through in raw degrees.
    pub scale_latlon: bool,
    /// Target means: `[lat, lon]` for the location head, empty for time.
    pub target_mean: Vec<f64>,
    /// Target standard deviations, same layout as `target_mean`.
    pub target_std: Vec<f64>,
}

impl ScalerStats {
    /// Fits statistics on the given training samples. `target` decides
    /// whether target stats are collected (location) or left empty (time).
    pub fn fit(
        data: &PreparedDataset,
        train_idx: &[usize],
        target: TargetKind,
        scale_latlon: bool,
    ) -> Result<Self, ScaleError> {
        if train_idx.is_empty() {
            return Err(ScaleError::EmptySampleSet);
        }
        let cells = GRID * GRID;
        let mut sums = vec![0.0f64; MODEL_CHANNELS];
        let mut count = 0usize;
        for &idx in train_idx {
            for frame in data.window_frames(idx) {
                for (c, sum) in sums.iter_mut().enumerate() {
                    let channel = &frame[c * cells..(c + 1) * cells];
                    *sum += channel.iter().map(|&v| v as f64).sum::<f64>();
                }
                count += 1;
            }
        }
        let n = (count * cells) as f64;
        let channel_mean: Vec<f64> = sums.iter().map(|s| s / n).collect();

        let mut sq = vec![0.0f64; MODEL_CHANNELS];
        for &idx in train_idx {
            for frame in data.window_frames(idx) {
                for (c, acc) in sq.iter_mut().enumerate() {
                    let mean = channel_mean[c];
                    let channel = &frame[c * cells..(c + 1) * cells];
                    *acc += channel
                        .iter()
                        .map(|&v| {
                            let d = v as f64 - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
            }
        }
        let channel_std: Vec<f64> = sq.iter().map(|s| (s / n).sqrt()).collect();

        let (target_mean, target_std) = match target {
            TargetKind::Location => {
                let lats: Vec<f64> = train_idx
                    .iter()
                    .map(|&i| data.samples()[i].target_lat)
                    .collect();
                let lons: Vec<f64> = train_idx
                    .iter()
                    .map(|&i| data.samples()[i].target_lon)
                    .collect();
                let (m_lat, s_lat) = mean_std(&lats);
                let (m_lon, s_lon) = mean_std(&lons);
                (vec![m_lat, m_lon], vec![s_lat, s_lon])
            }
            TargetKind::Time => (Vec::new(), Vec::new()),
        };

        Ok(ScalerStats {
            channel_mean,
            channel_std,
            scale_latlon,
            target_mean,
            target_std,
        })
    }

    pub fn validate(&self) -> Result<(), ScaleError> {
        if self.channel_mean.len() != MODEL_CHANNELS || self.channel_std.len() != MODEL_CHANNELS {
            return Err(ScaleError::ChannelArity {
                want: MODEL_CHANNELS,
                got: self.channel_mean.len().min(self.channel_std.len()),
            });
        }
        Ok(())
    }

    /// Standardizes one value of channel `c`. Zero-variance channels map to
    /// zero rather than dividing by zero.
    pub fn scale_channel_value(&self, c: usize, v: f64) -> f64 {
        if !self.scale_latlon && c < 2 {
            return v;
        }
        let std = self.channel_std[c];
        if std == 0.0 {
            0.0
        } else {
            (v - self.channel_mean[c]) / std
        }
    }

    /// Builds the scaled model input `[t_len, 12, 33, 33]` for one sample.
    pub fn scaled_window(&self, data: &PreparedDataset, sample_idx: usize) -> Tensor {
        let cells = GRID * GRID;
        let frames = data.window_frames(sample_idx);
        let mut out = Vec::with_capacity(frames.len() * MODEL_CHANNELS * cells);
        for frame in &frames {
            for c in 0..MODEL_CHANNELS {
                let channel = &frame[c * cells..(c + 1) * cells];
                out.extend(channel.iter().map(|&v| self.scale_channel_value(c, v as f64)));
            }
        }
        Tensor::from_vec(&[frames.len(), MODEL_CHANNELS, GRID, GRID], out)
            .expect("window dimensions are consistent by construction")
    }

    /// The training target for one sample in model space: scaled `[lat, lon]`
    /// for the location head, raw `[hours]` for the time head.
    pub fn scaled_target(&self, data: &PreparedDataset, sample_idx: usize, target: TargetKind) -> Vec<f64> {
        let s = &data.samples()[sample_idx];
        match target {
            TargetKind::Location => {
                let (lat, lon) = self.scale_location(s.target_lat, s.target_lon);
                vec![lat, lon]
            }
            TargetKind::Time => vec![s.target_hours],
        }
    }

    pub fn scale_location(&self, lat: f64, lon: f64) -> (f64, f64) {
        (
            scale_one(lat, self.target_mean[0], self.target_std[0]),
            scale_one(lon, self.target_mean[1], self.target_std[1]),
        )
    }

    /// Maps a location-head prediction back to degrees.
    pub fn unscale_location(&self, lat: f64, lon: f64) -> (f64, f64) {
        (
            lat * self.target_std[0] + self.target_mean[0],
            lon * self.target_std[1] + self.target_mean[1],
        )
    }
}

fn scale_one(v: f64, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        (v - mean) / std
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
