//! The landfall regressor: a CNN encoder applied to every frame of the input
//! window with shared weights, a stack of LSTM layers over the encoded
//! sequence, and a small dense head.
//!
//! Parameters live in [`Tensor`]s owned by the model. For each forward pass
//! they are leased onto a [`Tape`] exactly once ([`LandfallModel::lease`]),
//! so a weight reused across timesteps accumulates all of its timestep
//! gradients on a single tape node.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::{GRID, MODEL_CHANNELS};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("input shape {got:?} does not match the model's expected {want:?}")]
    BadInput { want: Vec<usize>, got: Vec<usize> },
}

/// Which quantity the head regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// Landfall latitude and longitude (two outputs, trained on scaled
    /// coordinates).
    Location,
    /// Hours until landfall (one output, trained on raw hours).
    Time,
}

impl TargetKind {
    pub fn head_width(self) -> usize {
        match self {
            TargetKind::Location => 2,
            TargetKind::Time => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Location => "location",
            TargetKind::Time => "time",
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "location" => Ok(TargetKind::Location),
            "time" => Ok(TargetKind::Time),
            other => Err(format!("unknown target '{other}' (expected location or time)")),
        }
    }
}

impl std::fmt::Display for TargetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Activation applied to the LSTM candidate vector and cell output. The
/// conventional cell uses tanh; relu is kept as a switch for experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellActivation {
    Tanh,
    Relu,
}

impl CellActivation {
    pub fn as_str(self) -> &'static str {
        match self {
            CellActivation::Tanh => "tanh",
            CellActivation::Relu => "relu",
        }
    }
}

impl std::fmt::Display for CellActivation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CellActivation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(CellActivation::Tanh),
            "relu" => Ok(CellActivation::Relu),
            other => Err(format!("unknown cell activation '{other}' (expected tanh or relu)")),
        }
    }
}

/// Architecture hyperparameters.
///
/// The defaults reproduce the reference network: three 3x3 conv stages of
/// 16/32/32 filters each followed by 2x2 max pooling (33 -> 15 -> 6 -> 2
/// spatially), a 64-wide frame embedding, LSTM layers of 112 and 64 units,
/// and a 32-wide dense layer before the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Window length in frames.
    pub t_len: usize,
    /// Channels per input frame.
    pub in_channels: usize,
    /// Input height and width.
    pub grid: usize,
    /// Output channels of each conv stage.
    pub conv_channels: Vec<usize>,
    /// Square kernel size shared by all conv stages.
    pub conv_kernel: usize,
    /// Width of the per-frame embedding produced by the encoder.
    pub feature_dim: usize,
    /// Hidden sizes of the stacked LSTM layers.
    pub lstm_hidden: Vec<usize>,
    /// Width of the dense layer between the LSTM stack and the head.
    pub dense_dim: usize,
    /// 2 for location, 1 for time.
    pub head_width: usize,
    pub cell_activation: CellActivation,
}

impl ModelConfig {
    pub fn default_for(target: TargetKind, t_len: usize) -> Self {
        ModelConfig {
            t_len,
            in_channels: MODEL_CHANNELS,
            grid: GRID,
            conv_channels: vec![16, 32, 32],
            conv_kernel: 3,
            feature_dim: 64,
            lstm_hidden: vec![112, 64],
            dense_dim: 32,
            head_width: target.head_width(),
            cell_activation: CellActivation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadConfig(msg));
        if self.t_len == 0 {
            return bad("window length must be positive".into());
        }
        if self.in_channels == 0 || self.grid == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.conv_channels.is_empty() || self.lstm_hidden.is_empty() {
            return bad("need at least one conv stage and one recurrent layer".into());
        }
        if self.conv_kernel == 0 {
            return bad("kernel size must be positive".into());
        }
        if self.feature_dim == 0 || self.dense_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        if !(self.head_width == 1 || self.head_width == 2) {
            return bad(format!("head width must be 1 or 2, got {}", self.head_width));
        }
        self.spatial_after_encoder()?;
        Ok(())
    }

    /// Side length after all conv+pool stages.
    fn spatial_after_encoder(&self) -> Result<usize, ModelError> {
        let mut s = self.grid;
        for (stage, _) in self.conv_channels.iter().enumerate() {
            if s < self.conv_kernel {
                return Err(ModelError::BadConfig(format!(
                    "conv stage {stage}: kernel {} larger than remaining extent {s}",
                    self.conv_kernel
                )));
            }
            s = s - self.conv_kernel + 1;
            if s < 2 {
                return Err(ModelError::BadConfig(format!(
                    "conv stage {stage}: extent {s} too small for 2x2 pooling"
                )));
            }
            s /= 2;
        }
        Ok(s)
    }

    fn flatten_dim(&self) -> Result<usize, ModelError> {
        let s = self.spatial_after_encoder()?;
        Ok(self.conv_channels[self.conv_channels.len() - 1] * s * s)
    }
}

struct AffinePair {
    w: Tensor,
    b: Tensor,
}

/// CNN + LSTM regressor with owned parameters.
pub struct LandfallModel {
    config: ModelConfig,
    convs: Vec<AffinePair>,
    feature: AffinePair,
    lstms: Vec<AffinePair>,
    dense: AffinePair,
    head: AffinePair,
}

/// Tape handles for one lease of the model's parameters, in the same order
/// as [`LandfallModel::params`].
pub struct ModelVars {
    convs: Vec<(Var, Var)>,
    feature: (Var, Var),
    lstms: Vec<(Var, Var)>,
    dense: (Var, Var),
    head: (Var, Var),
}

impl ModelVars {
    fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in &self.convs {
            out.push(w);
            out.push(b);
        }
        out.push(self.feature.0);
        out.push(self.feature.1);
        for &(w, b) in &self.lstms {
            out.push(w);
            out.push(b);
        }
        out.push(self.dense.0);
        out.push(self.dense.1);
        out.push(self.head.0);
        out.push(self.head.1);
        out
    }
}

impl LandfallModel {
    /// Builds a model with freshly initialized parameters. Conv and dense
    /// weights are Glorot-uniform; LSTM weights are uniform in
    /// +/- 1/sqrt(hidden) with forget-gate biases set to 1 so cells start
    /// out remembering.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut convs = Vec::new();
        let mut in_c = config.in_channels;
        for &out_c in &config.conv_channels {
            let k = config.conv_kernel;
            let fan_in = in_c * k * k;
            let fan_out = out_c * k * k;
            let w = glorot(&mut rng, &[out_c, in_c, k, k], fan_in, fan_out);
            let b = Tensor::zeros(&[out_c]).unwrap().with_grad();
            convs.push(AffinePair { w, b });
            in_c = out_c;
        }

        let flat = config.flatten_dim()?;
        let feature = dense_pair(&mut rng, flat, config.feature_dim);

        let mut lstms = Vec::new();
        let mut in_dim = config.feature_dim;
        for &hidden in &config.lstm_hidden {
            let bound = 1.0 / (hidden as f64).sqrt();
            let w = uniform(&mut rng, &[4 * hidden, in_dim + hidden], bound);
            let mut b = Tensor::zeros(&[4 * hidden, 1]).unwrap();
            for i in hidden..2 * hidden {
                b.data_mut()[i] = 1.0;
            }
            lstms.push(AffinePair { w, b: b.with_grad() });
            in_dim = hidden;
        }

        let dense = dense_pair(&mut rng, in_dim, config.dense_dim);
        let head = dense_pair(&mut rng, config.dense_dim, config.head_width);

        Ok(LandfallModel {
            config,
            convs,
            feature,
            lstms,
            dense,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Named parameter tensors in a stable order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, pair) in self.convs.iter().enumerate() {
            out.push((format!("conv{}.w", i + 1), &pair.w));
            out.push((format!("conv{}.b", i + 1), &pair.b));
        }
        out.push(("feature.w".to_string(), &self.feature.w));
        out.push(("feature.b".to_string(), &self.feature.b));
        for (i, pair) in self.lstms.iter().enumerate() {
            out.push((format!("lstm{}.w", i + 1), &pair.w));
            out.push((format!("lstm{}.b", i + 1), &pair.b));
        }
        out.push(("dense.w".to_string(), &self.dense.w));
        out.push(("dense.b".to_string(), &self.dense.b));
        out.push(("head.w".to_string(), &self.head.w));
        out.push(("head.b".to_string(), &self.head.b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for pair in &mut self.convs {
            out.push(&mut pair.w);
            out.push(&mut pair.b);
        }
        out.push(&mut self.feature.w);
        out.push(&mut self.feature.b);
        for pair in &mut self.lstms {
            out.push(&mut pair.w);
            out.push(&mut pair.b);
        }
        out.push(&mut self.dense.w);
        out.push(&mut self.dense.b);
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Puts every parameter on the tape once.
    pub fn lease(&self, tape: &mut Tape) -> ModelVars {
        let pair = |tape: &mut Tape, p: &AffinePair| (tape.param(&p.w), tape.param(&p.b));
        ModelVars {
            convs: self.convs.iter().map(|p| pair(tape, p)).collect(),
            feature: pair(tape, &self.feature),
            lstms: self.lstms.iter().map(|p| pair(tape, p)).collect(),
            dense: pair(tape, &self.dense),
            head: pair(tape, &self.head),
        }
    }

    /// Full forward pass over one window. `sample` must be
    /// `[t_len, in_channels, grid, grid]`; the result is `[head_width]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        sample: Var,
    ) -> Result<Var, ModelError> {
        let want = vec![
            self.config.t_len,
            self.config.in_channels,
            self.config.grid,
            self.config.grid,
        ];
        if tape.shape(sample) != want.as_slice() {
            return Err(ModelError::BadInput {
                want,
                got: tape.shape(sample).to_vec(),
            });
        }

        let frame_shape = [self.config.in_channels, self.config.grid, self.config.grid];
        let mut states: Vec<(Var, Var)> = Vec::new();
        for &hidden in &self.config.lstm_hidden {
            let h = tape.input(&[hidden, 1], vec![0.0; hidden], false)?;
            let c = tape.input(&[hidden, 1], vec![0.0; hidden], false)?;
            states.push((h, c));
        }

        let mut top = states[states.len() - 1].0;
        for t in 0..self.config.t_len {
            let raw = tape.slice_rows(sample, t, 1)?;
            let frame = tape.reshape(raw, &frame_shape)?;
            let feat = self.encode_frame(tape, vars, frame)?;

            let mut x = feat;
            for (layer, &(w, b)) in vars.lstms.iter().enumerate() {
                let (h, c) = states[layer];
                let hidden = self.config.lstm_hidden[layer];
                let (h_new, c_new) =
                    lstm_step(tape, w, b, x, h, c, hidden, self.config.cell_activation)?;
                states[layer] = (h_new, c_new);
                x = h_new;
            }
            top = x;
        }

        let z = affine(tape, vars.dense, top)?;
        let z = tape.relu(z)?;
        let out = affine(tape, vars.head, z)?;
        Ok(tape.reshape(out, &[self.config.head_width])?)
    }

    /// Shared-weight encoder for a single `[C,H,W]` frame.
    fn encode_frame(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        frame: Var,
    ) -> Result<Var, ModelError> {
        let mut x = frame;
        for &(w, b) in &vars.convs {
            let y = tape.conv2d(x, w, b)?;
            let y = tape.relu(y)?;
            x = tape.maxpool2(y)?;
        }
        let flat: usize = tape.shape(x).iter().product();
        let col = tape.reshape(x, &[flat, 1])?;
        let z = affine(tape, vars.feature, col)?;
        Ok(tape.relu(z)?)
    }

    /// Adds `scale` times the leased parameters' tape gradients into the
    /// model's gradient buffers. Parameters that received no gradient are
    /// skipped.
    pub fn accumulate_grads(
        &mut self,
        tape: &Tape,
        vars: &ModelVars,
        scale: f64,
    ) -> Result<(), ModelError> {
        let handles = vars.all();
        let mut params = self.params_mut();
        debug_assert_eq!(handles.len(), params.len());
        for (param, &var) in params.iter_mut().zip(&handles) {
            if let Some(g) = tape.grad(var) {
                param.add_to_grad(g, scale)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// `w x + b` for a column vector `x`.
fn affine(tape: &mut Tape, (w, b): (Var, Var), x: Var) -> Result<Var, TensorError> {
    let wx = tape.matmul(w, x)?;
    tape.add(wx, b)
}

/// One LSTM cell update. The combined weight `w` is `[4*hidden, in+hidden]`
/// and bias `b` is `[4*hidden, 1]`, with gate rows ordered input, forget,
/// candidate, output:
///
/// ```text
/// [i f g o] = w [x; h] + b
/// c' = sigmoid(f) * c + sigmoid(i) * act(g)
/// h' = sigmoid(o) * act(c')
/// ```
#[allow(clippy::too_many_arguments)]
pub fn lstm_step(
    tape: &mut Tape,
    w: Var,
    b: Var,
    x: Var,
    h: Var,
    c: Var,
    hidden: usize,
    activation: CellActivation,
) -> Result<(Var, Var), TensorError> {
    let act = |tape: &mut Tape, v: Var| match activation {
        CellActivation::Tanh => tape.tanh(v),
        CellActivation::Relu => tape.relu(v),
    };

    let xh = tape.concat_rows(&[x, h])?;
    let wx = tape.matmul(w, xh)?;
    let z = tape.add(wx, b)?;

    let zi = tape.slice_rows(z, 0, hidden)?;
    let zf = tape.slice_rows(z, hidden, hidden)?;
    let zg = tape.slice_rows(z, 2 * hidden, hidden)?;
    let zo = tape.slice_rows(z, 3 * hidden, hidden)?;

    let i = tape.sigmoid(zi)?;
    let f = tape.sigmoid(zf)?;
    let g = act(tape, zg)?;
    let o = tape.sigmoid(zo)?;

    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_new = tape.add(keep, write)?;
    let squash = act(tape, c_new)?;
    let h_new = tape.mul(o, squash)?;
    Ok((h_new, c_new))
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, shape, bound)
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).unwrap().with_grad()
}

fn dense_pair(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> AffinePair {
    AffinePair {
        w: glorot(rng, &[out_dim, in_dim], in_dim, out_dim),
        b: Tensor::zeros(&[out_dim, 1]).unwrap().with_grad(),
    }
}
