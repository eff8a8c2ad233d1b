//! Model checkpoints: architecture, head kind, scaler statistics, and all
//! parameter tensors in one self-describing binary file.
//!
//! The descriptor travels as JSON so a checkpoint stays inspectable with a
//! hex dump and stays stable as long as the config schema is; parameters are
//! stored per-name with explicit shapes and round-trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::nn::{LandfallModel, ModelConfig, ModelError, TargetKind};
use crate::scale::ScalerStats;

const CHECKPOINT_MAGIC: &[u8; 4] = b"TCLM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Descriptor {
    target: TargetKind,
    config: ModelConfig,
}

/// A loaded checkpoint: the trained head plus everything needed to run it.
pub struct Checkpoint {
    pub model: LandfallModel,
    pub target: TargetKind,
    pub scaler: ScalerStats,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    model: &LandfallModel,
    target: TargetKind,
    scaler: &ScalerStats,
) -> Result<(), CheckpointError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    binio::write_u32(&mut w, CHECKPOINT_VERSION)?;
    let descriptor = Descriptor {
        target,
        config: model.config().clone(),
    };
    binio::write_str(&mut w, &serde_json::to_string(&descriptor)?)?;

    binio::write_f64_slice(&mut w, &scaler.channel_mean)?;
    binio::write_f64_slice(&mut w, &scaler.channel_std)?;
    binio::write_u8(&mut w, u8::from(scaler.scale_latlon))?;
    binio::write_u32(&mut w, scaler.target_mean.len() as u32)?;
    for i in 0..scaler.target_mean.len() {
        binio::write_f64(&mut w, scaler.target_mean[i])?;
        binio::write_f64(&mut w, scaler.target_std[i])?;
    }

    let params = model.params();
    binio::write_u32(&mut w, params.len() as u32)?;
    for (name, tensor) in params {
        binio::write_str(&mut w, &name)?;
        binio::write_u32(&mut w, tensor.shape().len() as u32)?;
        for &dim in tensor.shape() {
            binio::write_u32(&mut w, dim as u32)?;
        }
        binio::write_f64_slice(&mut w, tensor.data())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let magic = binio::read_magic(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic {
            found: magic,
            expected: *CHECKPOINT_MAGIC,
        });
    }
    let version = binio::read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let descriptor: Descriptor = serde_json::from_str(&binio::read_str(&mut r)?)?;
    if descriptor.config.head_width != descriptor.target.head_width() {
        return Err(CheckpointError::Corrupt(format!(
            "{} head stored with width {}",
            descriptor.target, descriptor.config.head_width
        )));
    }

    let channel_mean = binio::read_f64_vec(&mut r, crate::MODEL_CHANNELS)?;
    let channel_std = binio::read_f64_vec(&mut r, crate::MODEL_CHANNELS)?;
    let scale_latlon = match binio::read_u8(&mut r)? {
        0 => false,
        1 => true,
        other => {
            return Err(CheckpointError::Corrupt(format!(
                "scale_latlon flag byte {other}"
            )))
        }
    };
    let n_targets = binio::read_u32(&mut r)? as usize;
    if n_targets > 2 {
        return Err(CheckpointError::Corrupt(format!(
            "{n_targets} target statistics"
        )));
    }
    let mut target_mean = Vec::with_capacity(n_targets);
    let mut target_std = Vec::with_capacity(n_targets);
    for _ in 0..n_targets {
        target_mean.push(binio::read_f64(&mut r)?);
        target_std.push(binio::read_f64(&mut r)?);
    }
    let scaler = ScalerStats {
        channel_mean,
        channel_std,
        scale_latlon,
        target_mean,
        target_std,
    };

    // Rebuild the architecture, then overwrite every parameter in order,
    // verifying each stored name and shape against the model's layout.
    let mut model = LandfallModel::new(descriptor.config, 0)?;
    let expected_names: Vec<String> = model.params().iter().map(|(n, _)| n.clone()).collect();
    let n_params = binio::read_u32(&mut r)? as usize;
    if n_params != expected_names.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} parameter tensors, model has {}",
            n_params,
            expected_names.len()
        )));
    }
    let mut params = model.params_mut();
    for (i, tensor) in params.iter_mut().enumerate() {
        let name = binio::read_str(&mut r)?;
        if name != expected_names[i] {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {i} named {name}, expected {}",
                expected_names[i]
            )));
        }
        let rank = binio::read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(binio::read_u32(&mut r)? as usize);
        }
        if shape != tensor.shape() {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {name}: stored shape {shape:?}, model expects {:?}",
                tensor.shape()
            )));
        }
        let data = binio::read_f64_vec(&mut r, tensor.numel())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {name}: non-finite value"
            )));
        }
        tensor.data_mut().copy_from_slice(&data);
    }
    drop(params);
    Ok(Checkpoint {
        model,
        target: descriptor.target,
        scaler,
    })
}

pub fn save_checkpoint(
    path: &Path,
    model: &LandfallModel,
    target: TargetKind,
    scaler: &ScalerStats,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, target, scaler)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
