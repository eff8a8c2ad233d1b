//! Release gate for the whole pipeline: eleven numbered criteria, each a
//! test that prints one `ACCEPTANCE Cnn <name>: PASS|FAIL` line (run with
//! `--nocapture` to see the lines for passing tests too).
//!
//! Criteria 7 and 8 share two full synthetic end-to-end runs executed once
//! through the compiled binary; everything else drives the library directly.
//! All tolerances and budgets are pinned here as constants.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use landfall::checkpoint::{read_checkpoint, write_checkpoint, CheckpointError};
use landfall::dataset::{
    expected_sample_count, make_split, window_spans, DatasetError, PreparedDataset, SplitBuckets,
    SplitMode, SplitPlan, KFOLD_FOLDS,
};
use landfall::geo::{haversine_km, GeoPoint};
use landfall::ingest::{extract_cyclone_units, Basin, FieldArchive, IngestError, MIN_TRACK_HOURS};
use landfall::metrics::{mae, rmse};
use landfall::nn::{CellActivation, LandfallModel, ModelConfig, TargetKind};
use landfall::report::parse_fold_metrics;
use landfall::scale::ScalerStats;
use landfall::synth::{synthesize_basin, SynthConfig};
use landfall::tensor::{gradcheck, Tape, Tensor, TensorError, Var};
use landfall::train::{mse_loss, train_model, TrainConfig};

/// Relative-error bound for gradient checks on individual operations.
const PRIMITIVE_GRAD_TOL: f64 = 1e-6;
/// Relative-error bound for the assembled model's gradients.
const MODEL_GRAD_TOL: f64 = 1e-5;
/// Wall-clock budget for all gradient checks.
const GRAD_BUDGET: Duration = Duration::from_secs(60);
/// Inclusive band for the default model's parameter count.
const PARAM_BAND: std::ops::RangeInclusive<usize> = 140_000..=175_000;
/// Tolerance for hand-computed metric values.
const ORACLE_TOL: f64 = 1e-12;
/// Great-circle length of one degree of latitude, km, and its tolerance.
const KM_PER_LAT_DEG: f64 = 111.19;
const KM_TOL: f64 = 0.01;
/// Bound on standardized channel moments after fitting.
const MOMENT_TOL: f64 = 1e-9;
/// The overfit run must shrink train MSE by this factor.
const OVERFIT_RATIO: f64 = 1e-3;
const OVERFIT_EPOCHS: usize = 500;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);
/// Wall-clock budget for one full synthetic end-to-end run.
const E2E_BUDGET: Duration = Duration::from_secs(1800);
/// Allowed deviation from the 60:20:20 holdout ratio, in units.
const SPLIT_SLACK: f64 = 1.0;

/// Serializes the timed criteria so budgets are measured without contention.
static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|p| p.into_inner())
}

fn verdict(id: &str, name: &str, outcome: Result<(), String>) {
    match outcome {
        Ok(()) => println!("ACCEPTANCE {id} {name}: PASS"),
        Err(why) => {
            println!("ACCEPTANCE {id} {name}: FAIL");
            panic!("{id} {name}: {why}");
        }
    }
}

fn filled(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("valid shape")
}

/// Synthesizes a small basin and windows it with every unit in the train
/// bucket, for criteria that need real frames but no held-out storms.
fn all_train_dataset(
    basin: Basin,
    n_cyclones: usize,
    seed: u64,
    max_fixes: usize,
    t_len: usize,
) -> Result<PreparedDataset, String> {
    let mut cfg = SynthConfig::new(basin, n_cyclones, seed);
    cfg.max_ocean_fixes = max_fixes;
    let (rows, archive) = synthesize_basin(&cfg).map_err(|e| e.to_string())?;
    let units = extract_cyclone_units(&rows, MIN_TRACK_HOURS).map_err(|e| e.to_string())?;
    let split = SplitPlan::Holdout(SplitBuckets {
        train: units.iter().map(|u| u.sid.clone()).collect(),
        validation: Vec::new(),
        test: Vec::new(),
    });
    PreparedDataset::build(&units, &archive, t_len, split).map_err(|e| e.to_string())
}

// --- criterion 1: gradient correctness ---

fn check_primitive<F>(name: &str, inputs: &[Tensor], build: F) -> Result<(), String>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let report = gradcheck::check(inputs, 1e-5, build).map_err(|e| format!("{name}: {e}"))?;
    if report.max_rel_err < PRIMITIVE_GRAD_TOL {
        Ok(())
    } else {
        Err(format!(
            "{name}: relative error {} over {} elements (tolerance {PRIMITIVE_GRAD_TOL})",
            report.max_rel_err, report.checked
        ))
    }
}

fn primitive_gradients() -> Result<(), String> {
    let a = filled(&[3, 4], 1, -1.0, 1.0);
    let b = filled(&[3, 4], 2, -1.0, 1.0);
    check_primitive("elementwise", &[a, b], |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(s, v[1])?;
        let p = t.mul(d, v[1])?;
        let sc = t.scale(p, -1.7)?;
        t.reduce_mean(sc)
    })?;

    let a = filled(&[4, 3], 3, -1.0, 1.0);
    let b = filled(&[3, 5], 4, -1.0, 1.0);
    check_primitive("matmul", &[a, b], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        t.reduce_mean(y)
    })?;

    // Values bounded away from zero so relu's kink stays out of the stencil.
    let mut x = filled(&[17], 5, 0.2, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for v in x.data_mut() {
        if rng.random_range(0..2) == 1 {
            *v = -*v;
        }
    }
    check_primitive("relu", &[x.clone()], |t, v| {
        let y = t.relu(v[0])?;
        t.reduce_mean(y)
    })?;
    check_primitive("sigmoid", &[x.clone()], |t, v| {
        let y = t.sigmoid(v[0])?;
        t.reduce_mean(y)
    })?;
    check_primitive("tanh", &[x], |t, v| {
        let y = t.tanh(v[0])?;
        t.reduce_mean(y)
    })?;

    let x = filled(&[2, 6, 6], 8, -1.0, 1.0);
    let w = filled(&[3, 2, 3, 3], 9, -0.5, 0.5);
    let b = filled(&[3], 10, -0.2, 0.2);
    check_primitive("conv2d", &[x, w, b], |t, v| {
        let y = t.conv2d(v[0], v[1], v[2])?;
        let sq = t.mul(y, y)?;
        t.reduce_mean(sq)
    })?;

    // Distinct, well-separated values keep the pooling argmax stable.
    let data = (0..(2 * 6 * 6)).map(|i| ((i * 37) % 72) as f64 * 0.1).collect();
    let x = Tensor::from_vec(&[2, 6, 6], data).expect("valid shape");
    check_primitive("maxpool2", &[x], |t, v| {
        let y = t.maxpool2(v[0])?;
        t.reduce_mean(y)
    })?;

    let x = filled(&[4, 6], 6, -1.0, 1.0);
    check_primitive("reshape/slice/concat", &[x], |t, v| {
        let r = t.reshape(v[0], &[8, 3])?;
        let top = t.slice_rows(r, 0, 3)?;
        let bottom = t.slice_rows(r, 3, 5)?;
        let glued = t.concat_rows(&[bottom, top])?;
        let sq = t.mul(glued, glued)?;
        t.reduce_mean(sq)
    })?;

    let x = filled(&[7], 7, -1.0, 1.0);
    check_primitive("reduce_sum", &[x.clone()], |t, v| {
        let s = t.reduce_sum(v[0])?;
        t.scale(s, 0.25)
    })?;
    check_primitive("reduce_mean", &[x], |t, v| t.reduce_mean(v[0]))?;

    // The recurrent cell wiring: gates over a shared affine map.
    let w = filled(&[8, 5], 11, -0.5, 0.5);
    let x = filled(&[5, 1], 12, -1.0, 1.0);
    let b = filled(&[8, 1], 13, -0.3, 0.3);
    let c = filled(&[2, 1], 14, -0.5, 0.5);
    check_primitive("lstm gates", &[w, x, b, c], |t, v| {
        let za = t.matmul(v[0], v[1])?;
        let z = t.add(za, v[2])?;
        let zi = t.slice_rows(z, 0, 2)?;
        let zf = t.slice_rows(z, 2, 2)?;
        let zg = t.slice_rows(z, 4, 2)?;
        let zo = t.slice_rows(z, 6, 2)?;
        let i = t.sigmoid(zi)?;
        let f = t.sigmoid(zf)?;
        let g = t.tanh(zg)?;
        let o = t.sigmoid(zo)?;
        let keep = t.mul(f, v[3])?;
        let write = t.mul(i, g)?;
        let c_new = t.add(keep, write)?;
        let squash = t.tanh(c_new)?;
        let h = t.mul(o, squash)?;
        let sq = t.mul(h, h)?;
        t.reduce_mean(sq)
    })
}

fn full_model_gradients() -> Result<(), String> {
    let config = ModelConfig {
        t_len: 2,
        in_channels: 2,
        grid: 8,
        conv_channels: vec![3],
        conv_kernel: 3,
        feature_dim: 5,
        lstm_hidden: vec![4],
        dense_dim: 4,
        head_width: 2,
        cell_activation: CellActivation::Tanh,
    };
    let mut model = LandfallModel::new(config, 12).map_err(|e| e.to_string())?;
    let window = filled(&[2, 2, 8, 8], 77, -1.0, 1.0);

    let loss_of = |model: &LandfallModel, window: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let vars = model.lease(&mut tape);
        let x = tape.constant(window);
        let out = model.forward(&mut tape, &vars, x).expect("forward");
        let sq = tape.mul(out, out).expect("square");
        let loss = tape.reduce_mean(sq).expect("mean");
        tape.scalar(loss)
    };

    // Analytic pass: parameter gradients through the accumulation path, the
    // window's gradient straight off the tape.
    let (analytic, input_grad) = {
        let mut tape = Tape::new();
        let vars = model.lease(&mut tape);
        let x = tape.param(&window);
        let out = model.forward(&mut tape, &vars, x).map_err(|e| e.to_string())?;
        let sq = tape.mul(out, out).map_err(|e| e.to_string())?;
        let loss = tape.reduce_mean(sq).map_err(|e| e.to_string())?;
        tape.backward(loss).map_err(|e| e.to_string())?;
        model.zero_grads();
        model
            .accumulate_grads(&tape, &vars, 1.0)
            .map_err(|e| e.to_string())?;
        let analytic: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|(_, t)| t.grad().expect("gradient accumulated").to_vec())
            .collect();
        let input_grad = tape.grad(x).expect("window gradient").to_vec();
        (analytic, input_grad)
    };

    let eps = 1e-5;
    let mut max_rel: f64 = 0.0;
    for k in 0..analytic.len() {
        for e in 0..analytic[k].len() {
            let orig = model.params()[k].1.data()[e];
            model.params_mut()[k].data_mut()[e] = orig + eps;
            let plus = loss_of(&model, &window);
            model.params_mut()[k].data_mut()[e] = orig - eps;
            let minus = loss_of(&model, &window);
            model.params_mut()[k].data_mut()[e] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            max_rel = max_rel.max(gradcheck::rel_err(analytic[k][e], fd));
        }
    }

    let mut work = window.clone();
    for e in 0..work.numel() {
        let orig = work.data()[e];
        work.data_mut()[e] = orig + eps;
        let plus = loss_of(&model, &work);
        work.data_mut()[e] = orig - eps;
        let minus = loss_of(&model, &work);
        work.data_mut()[e] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        max_rel = max_rel.max(gradcheck::rel_err(input_grad[e], fd));
    }

    if max_rel < MODEL_GRAD_TOL {
        Ok(())
    } else {
        Err(format!(
            "full model: relative error {max_rel} (tolerance {MODEL_GRAD_TOL})"
        ))
    }
}

#[test]
fn criterion_01_gradient_correctness() {
    let _guard = heavy();
    verdict(
        "C01",
        "gradient-correctness",
        (|| {
            let start = Instant::now();
            primitive_gradients()?;
            full_model_gradients()?;
            let elapsed = start.elapsed();
            if elapsed > GRAD_BUDGET {
                return Err(format!("took {elapsed:?}, budget {GRAD_BUDGET:?}"));
            }
            Ok(())
        })(),
    );
}

// --- criterion 2: windowing oracle ---

#[test]
fn criterion_02_windowing_oracle() {
    verdict(
        "C02",
        "windowing-oracle",
        (|| {
            let cases = [(37usize, 8usize, 27usize), (11, 8, 1), (10, 8, 0), (7, 4, 1), (6, 4, 0)];
            for (ocean_len, t_len, want) in cases {
                let counted = expected_sample_count(ocean_len, t_len);
                if counted != want {
                    return Err(format!(
                        "count({ocean_len}, {t_len}) = {counted}, expected {want}"
                    ));
                }
                let windowing = window_spans(ocean_len, t_len).map_err(|e| e.to_string())?;
                if windowing.spans.len() != want {
                    return Err(format!(
                        "spans({ocean_len}, {t_len}) yielded {}, expected {want}",
                        windowing.spans.len()
                    ));
                }
            }

            let data = all_train_dataset(Basin::NI, 5, 41, 14, 4)?;
            if data.samples().is_empty() {
                return Err("no samples generated".into());
            }
            for (i, s) in data.samples().iter().enumerate() {
                if s.target_hours < 12.0 {
                    return Err(format!("sample {i} leads only {} h", s.target_hours));
                }
            }
            Ok(())
        })(),
    );
}

// --- criterion 3: parameter budget ---

#[test]
fn criterion_03_parameter_budget() {
    verdict(
        "C03",
        "parameter-budget",
        (|| {
            let mut counts = Vec::new();
            for t_len in [2usize, 4, 8, 16] {
                let config = ModelConfig::default_for(TargetKind::Location, t_len);
                let model = LandfallModel::new(config, 9).map_err(|e| e.to_string())?;
                counts.push(model.parameter_count());
            }
            let at_8 = counts[2];
            if !PARAM_BAND.contains(&at_8) {
                return Err(format!(
                    "default model has {at_8} parameters, outside {PARAM_BAND:?}"
                ));
            }
            if counts.iter().any(|&c| c != at_8) {
                return Err(format!("count varies with window length: {counts:?}"));
            }
            Ok(())
        })(),
    );
}

// --- criterion 4: metric oracles ---

#[test]
fn criterion_04_metric_oracles() {
    verdict(
        "C04",
        "metric-oracles",
        (|| {
            let pred = [1.0, 2.0, 3.0];
            let zeros = [0.0; 3];

            let mut tape = Tape::new();
            let p = tape
                .input(&[3], pred.to_vec(), false)
                .map_err(|e| e.to_string())?;
            let loss = mse_loss(&mut tape, p, &zeros).map_err(|e| e.to_string())?;
            let mse = tape.scalar(loss);
            if (mse - 14.0 / 3.0).abs() > ORACLE_TOL {
                return Err(format!("mse {mse}, expected {}", 14.0 / 3.0));
            }

            let r = rmse(&pred, &zeros).map_err(|e| e.to_string())?;
            if (r - (14.0f64 / 3.0).sqrt()).abs() > ORACLE_TOL {
                return Err(format!("rmse {r}"));
            }
            let m = mae(&pred, &zeros).map_err(|e| e.to_string())?;
            if (m - 2.0).abs() > ORACLE_TOL {
                return Err(format!("mae {m}"));
            }
            if rmse(&pred, &pred).map_err(|e| e.to_string())? != 0.0 {
                return Err("rmse of identical series not zero".into());
            }
            let p2 = [2.0, 4.0, 4.0];
            let a2 = [1.0, 2.0, 8.0];
            let r2 = rmse(&p2, &a2).map_err(|e| e.to_string())?;
            if (r2 - 7.0f64.sqrt()).abs() > ORACLE_TOL {
                return Err(format!("rmse {r2}, expected sqrt 7"));
            }
            let m2 = mae(&p2, &a2).map_err(|e| e.to_string())?;
            if (m2 - 7.0 / 3.0).abs() > ORACLE_TOL {
                return Err(format!("mae {m2}, expected 7/3"));
            }

            let mut rng = ChaCha8Rng::seed_from_u64(404);
            for trial in 0..1000 {
                let len = rng.random_range(1..=32);
                let a: Vec<f64> = (0..len).map(|_| rng.random_range(-100.0..100.0)).collect();
                let b: Vec<f64> = (0..len).map(|_| rng.random_range(-100.0..100.0)).collect();
                let r = rmse(&a, &b).map_err(|e| e.to_string())?;
                let m = mae(&a, &b).map_err(|e| e.to_string())?;
                if r < m - ORACLE_TOL {
                    return Err(format!("trial {trial}: rmse {r} < mae {m}"));
                }
            }

            let here = GeoPoint::new(10.0, 50.0).map_err(|e| e.to_string())?;
            if haversine_km(here, here) != 0.0 {
                return Err("nonzero distance between identical points".into());
            }
            let north = GeoPoint::new(11.0, 50.0).map_err(|e| e.to_string())?;
            let d = haversine_km(here, north);
            if (d - KM_PER_LAT_DEG).abs() > KM_TOL {
                return Err(format!("one degree of latitude measured {d} km"));
            }
            Ok(())
        })(),
    );
}

// --- criterion 5: scaler ---

#[test]
fn criterion_05_scaler() {
    verdict(
        "C05",
        "scaler",
        (|| {
            let data = all_train_dataset(Basin::WP, 6, 23, 12, 4)?;
            let idx: Vec<usize> = (0..data.samples().len()).collect();
            let scaler = ScalerStats::fit(&data, &idx, TargetKind::Location, true)
                .map_err(|e| e.to_string())?;

            let channels = scaler.channel_mean.len();
            let mut values_per_channel = 0usize;
            let mut sums = vec![0.0f64; channels];
            let mut sumsq = vec![0.0f64; channels];
            for &i in &idx {
                let window = scaler.scaled_window(&data, i);
                let cells = window.numel() / (data.t_len() * channels);
                for (e, &v) in window.data().iter().enumerate() {
                    let c = (e / cells) % channels;
                    sums[c] += v;
                    sumsq[c] += v * v;
                }
                values_per_channel += data.t_len() * cells;
            }
            let n = values_per_channel as f64;
            for c in 0..channels {
                let mean = sums[c] / n;
                let var = sumsq[c] / n - mean * mean;
                if scaler.channel_std[c] == 0.0 {
                    if sumsq[c] != 0.0 {
                        return Err(format!("zero-variance channel {c} not mapped to 0"));
                    }
                    continue;
                }
                if mean.abs() > MOMENT_TOL {
                    return Err(format!("channel {c} mean {mean} after scaling"));
                }
                if (var - 1.0).abs() > MOMENT_TOL {
                    return Err(format!("channel {c} variance {var} after scaling"));
                }
            }

            // A degenerate channel maps to 0 rather than dividing by zero.
            let flat = ScalerStats {
                channel_mean: vec![5.0; channels],
                channel_std: vec![0.0; channels],
                scale_latlon: true,
                target_mean: Vec::new(),
                target_std: Vec::new(),
            };
            if flat.scale_channel_value(3, 7.25) != 0.0 || flat.scale_channel_value(3, 5.0) != 0.0
            {
                return Err("zero-variance channel does not map to 0".into());
            }

            // Location targets are standardized and invert exactly; time
            // targets pass through in raw hours.
            let s = &data.samples()[0];
            let scaled = scaler.scaled_target(&data, 0, TargetKind::Location);
            let want = scaler.scale_location(s.target_lat, s.target_lon);
            if scaled != vec![want.0, want.1] {
                return Err("location target not standardized".into());
            }
            let (lat, lon) = scaler.unscale_location(scaled[0], scaled[1]);
            if (lat - s.target_lat).abs() > ORACLE_TOL || (lon - s.target_lon).abs() > ORACLE_TOL
            {
                return Err("location target does not round-trip".into());
            }
            let time_scaler = ScalerStats::fit(&data, &idx, TargetKind::Time, true)
                .map_err(|e| e.to_string())?;
            for &i in &idx {
                let t = time_scaler.scaled_target(&data, i, TargetKind::Time);
                if t != vec![data.samples()[i].target_hours] {
                    return Err(format!(
                        "time target {t:?} differs from raw hours {}",
                        data.samples()[i].target_hours
                    ));
                }
            }
            Ok(())
        })(),
    );
}

// --- criterion 6: overfit smoke test ---

#[test]
fn criterion_06_overfit_smoke() {
    let _guard = heavy();
    verdict(
        "C06",
        "overfit-smoke",
        (|| {
            let start = Instant::now();
            let data = all_train_dataset(Basin::WP, 4, 5, 10, 4)?;
            let train_idx: Vec<usize> = (0..4)
                .map(|u| {
                    data.samples()
                        .iter()
                        .position(|s| s.unit == u)
                        .ok_or_else(|| format!("unit {u} has no samples"))
                })
                .collect::<Result<_, _>>()?;

            let scaler = ScalerStats::fit(&data, &train_idx, TargetKind::Location, true)
                .map_err(|e| e.to_string())?;
            let config = ModelConfig {
                t_len: data.t_len(),
                in_channels: 12,
                grid: 33,
                conv_channels: vec![8],
                conv_kernel: 3,
                feature_dim: 16,
                lstm_hidden: vec![12],
                dense_dim: 8,
                head_width: 2,
                cell_activation: CellActivation::Tanh,
            };
            let mut model = LandfallModel::new(config, 7).map_err(|e| e.to_string())?;
            // Adam's per-component steps must stay small next to the feature
            // layer's Glorot scale, or the encoder degenerates to a constant
            // before it can separate the samples.
            let train_config = TrainConfig {
                epochs: OVERFIT_EPOCHS,
                batch_size: 1,
                learning_rate: 0.001,
                seed: 3,
            };
            let history = train_model(
                &mut model,
                TargetKind::Location,
                &data,
                &scaler,
                &train_idx,
                &[],
                &train_config,
            )
            .map_err(|e| e.to_string())?;

            let first = history[0].train_mse;
            let best = history
                .iter()
                .map(|e| e.train_mse)
                .fold(f64::INFINITY, f64::min);
            let elapsed = start.elapsed();
            if best > OVERFIT_RATIO * first {
                return Err(format!(
                    "train MSE shrank from {first} to {best}, needed a {OVERFIT_RATIO} ratio"
                ));
            }
            if elapsed > OVERFIT_BUDGET {
                return Err(format!("took {elapsed:?}, budget {OVERFIT_BUDGET:?}"));
            }
            Ok(())
        })(),
    );
}

// --- criteria 7 and 8: synthetic end-to-end, rerun for determinism ---

/// Artifacts compared byte-for-byte between the two end-to-end runs.
const E2E_OUTPUTS: [&str; 25] = [
    "tracks.csv",
    "fields.tclf",
    "data.tcld",
    "eval/fold_metrics.csv",
    "summary.csv",
    "eval/fold0_location.tclm",
    "eval/fold0_time.tclm",
    "eval/fold0_location_history.csv",
    "eval/fold0_time_history.csv",
    "eval/fold1_location.tclm",
    "eval/fold1_time.tclm",
    "eval/fold1_location_history.csv",
    "eval/fold1_time_history.csv",
    "eval/fold2_location.tclm",
    "eval/fold2_time.tclm",
    "eval/fold2_location_history.csv",
    "eval/fold2_time_history.csv",
    "eval/fold3_location.tclm",
    "eval/fold3_time.tclm",
    "eval/fold3_location_history.csv",
    "eval/fold3_time_history.csv",
    "eval/fold4_location.tclm",
    "eval/fold4_time.tclm",
    "eval/fold4_location_history.csv",
    "eval/fold4_time_history.csv",
];

struct E2eRun {
    dir: TempDir,
    elapsed: Duration,
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_landfall"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| format!("spawning the binary: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

/// One full pipeline at T=4 on a 40-cyclone basin: synth, prepare with a
/// 5-fold split, per-fold training and evaluation of both heads, report.
fn e2e_run() -> Result<E2eRun, String> {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let start = Instant::now();
    cli(
        dir.path(),
        &[
            "synth", "--basin", "WP", "--cyclones", "40", "--seed", "7",
            "--min-fixes", "8", "--max-fixes", "14", "--out-dir", ".",
        ],
    )?;
    cli(
        dir.path(),
        &[
            "prepare", "--tracks", "tracks.csv", "--fields", "fields.tclf",
            "--window-hours", "12", "--split", "kfold", "--seed", "11",
            "--out", "data.tcld",
        ],
    )?;
    cli(
        dir.path(),
        &[
            "evaluate", "--data", "data.tcld",
            "--location-epochs", "15", "--location-learning-rate", "0.005",
            "--time-epochs", "50", "--time-learning-rate", "0.03",
            "--batch-size", "8", "--seed", "42", "--out-dir", "eval",
        ],
    )?;
    cli(dir.path(), &["report", "eval/fold_metrics.csv", "--out", "summary.csv"])?;
    Ok(E2eRun {
        dir,
        elapsed: start.elapsed(),
    })
}

struct E2e {
    first: Result<E2eRun, String>,
    second: Result<E2eRun, String>,
}

static E2E: OnceLock<E2e> = OnceLock::new();

fn e2e() -> &'static E2e {
    E2E.get_or_init(|| {
        let _guard = heavy();
        E2e {
            first: e2e_run(),
            second: e2e_run(),
        }
    })
}

#[test]
fn criterion_07_synthetic_end_to_end() {
    verdict(
        "C07",
        "synthetic-end-to-end",
        (|| {
            let run = e2e().first.as_ref().map_err(|e| e.clone())?;
            if run.elapsed > E2E_BUDGET {
                return Err(format!("took {:?}, budget {E2E_BUDGET:?}", run.elapsed));
            }

            let file = fs::File::open(run.dir.path().join("eval/fold_metrics.csv"))
                .map_err(|e| e.to_string())?;
            let rows = parse_fold_metrics(std::io::BufReader::new(file))
                .map_err(|e| e.to_string())?;
            if rows.len() != KFOLD_FOLDS {
                return Err(format!("{} folds reported", rows.len()));
            }
            let n = rows.len() as f64;
            let model_km: f64 = rows.iter().map(|r| r.mae_distance_km).sum::<f64>() / n;
            let persistence_km: f64 =
                rows.iter().map(|r| r.baseline_distance_km).sum::<f64>() / n;
            let model_h: f64 = rows.iter().map(|r| r.mae_time).sum::<f64>() / n;
            let baseline_h: f64 = rows.iter().map(|r| r.baseline_mae_time).sum::<f64>() / n;
            if model_km >= persistence_km {
                return Err(format!(
                    "location {model_km:.1} km does not beat persistence {persistence_km:.1} km"
                ));
            }
            if model_h >= baseline_h {
                return Err(format!(
                    "time {model_h:.2} h does not beat distance/speed {baseline_h:.2} h"
                ));
            }
            Ok(())
        })(),
    );
}

#[test]
fn criterion_08_determinism() {
    verdict(
        "C08",
        "determinism",
        (|| {
            let first = e2e().first.as_ref().map_err(|e| e.clone())?;
            let second = e2e().second.as_ref().map_err(|e| e.clone())?;
            for name in E2E_OUTPUTS {
                let a = fs::read(first.dir.path().join(name))
                    .map_err(|e| format!("{name}: {e}"))?;
                let b = fs::read(second.dir.path().join(name))
                    .map_err(|e| format!("{name}: {e}"))?;
                if a != b {
                    return Err(format!("{name} differs between same-seed runs"));
                }
            }
            Ok(())
        })(),
    );
}

// --- criterion 9: split hygiene ---

#[test]
fn criterion_09_split_hygiene() {
    verdict(
        "C09",
        "split-hygiene",
        (|| {
            use std::collections::BTreeSet;
            for seed in 0..100u64 {
                let n = 5 + (seed as usize % 16);
                let ids: Vec<String> = (0..n).map(|i| format!("U{i:02}")).collect();
                let all: BTreeSet<&str> = ids.iter().map(String::as_str).collect();

                let SplitPlan::Holdout(buckets) =
                    make_split(&ids, SplitMode::Holdout, seed).map_err(|e| e.to_string())?
                else {
                    return Err("holdout mode produced a k-fold plan".into());
                };
                check_buckets(&buckets, &all, seed)?;
                let (tr, va, te) = (
                    buckets.train.len() as f64,
                    buckets.validation.len() as f64,
                    buckets.test.len() as f64,
                );
                let nf = n as f64;
                if (tr - 0.6 * nf).abs() > SPLIT_SLACK
                    || (va - 0.2 * nf).abs() > SPLIT_SLACK
                    || (te - 0.2 * nf).abs() > SPLIT_SLACK
                {
                    return Err(format!(
                        "seed {seed}: split {tr}/{va}/{te} of {n} strays from 60:20:20"
                    ));
                }

                let SplitPlan::KFold(folds) =
                    make_split(&ids, SplitMode::KFold, seed).map_err(|e| e.to_string())?
                else {
                    return Err("kfold mode produced a holdout plan".into());
                };
                let mut tests: BTreeSet<&str> = BTreeSet::new();
                for fold in &folds {
                    check_buckets(fold, &all, seed)?;
                    for id in &fold.test {
                        if !tests.insert(id) {
                            return Err(format!("seed {seed}: {id} tested in two folds"));
                        }
                    }
                }
                if tests.len() != n {
                    return Err(format!("seed {seed}: test folds cover {} of {n}", tests.len()));
                }
            }

            // Sample-level check on a real dataset: windows inherit their
            // unit's bucket, so the three index sets are disjoint and cover
            // every sample.
            let mut cfg = SynthConfig::new(Basin::NI, 6, 31);
            cfg.max_ocean_fixes = 12;
            let (rows, archive) = synthesize_basin(&cfg).map_err(|e| e.to_string())?;
            let units = extract_cyclone_units(&rows, MIN_TRACK_HOURS).map_err(|e| e.to_string())?;
            let ids: Vec<String> = units.iter().map(|u| u.sid.clone()).collect();
            let split = make_split(&ids, SplitMode::Holdout, 8).map_err(|e| e.to_string())?;
            let data =
                PreparedDataset::build(&units, &archive, 4, split).map_err(|e| e.to_string())?;
            let SplitPlan::Holdout(buckets) = data.split() else {
                return Err("expected a holdout plan".into());
            };
            let train: BTreeSet<usize> = data.samples_in(&buckets.train).into_iter().collect();
            let val: BTreeSet<usize> = data.samples_in(&buckets.validation).into_iter().collect();
            let test: BTreeSet<usize> = data.samples_in(&buckets.test).into_iter().collect();
            if !train.is_disjoint(&val) || !train.is_disjoint(&test) || !val.is_disjoint(&test) {
                return Err("a sample landed in two buckets".into());
            }
            if train.len() + val.len() + test.len() != data.samples().len() {
                return Err("bucket sample sets do not cover the dataset".into());
            }
            Ok(())
        })(),
    );
}

fn check_buckets(
    buckets: &SplitBuckets,
    all: &std::collections::BTreeSet<&str>,
    seed: u64,
) -> Result<(), String> {
    use std::collections::BTreeSet;
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for id in buckets
        .train
        .iter()
        .chain(&buckets.validation)
        .chain(&buckets.test)
    {
        if !seen.insert(id) {
            return Err(format!("seed {seed}: unit {id} appears in two buckets"));
        }
    }
    if seen != *all {
        return Err(format!("seed {seed}: buckets do not cover every unit"));
    }
    Ok(())
}

// --- criterion 10: format round-trips ---

#[test]
fn criterion_10_format_round_trips() {
    verdict(
        "C10",
        "format-round-trips",
        (|| {
            let mut cfg = SynthConfig::new(Basin::SI, 2, 3);
            cfg.max_ocean_fixes = 10;
            let (rows, archive) = synthesize_basin(&cfg).map_err(|e| e.to_string())?;

            let mut fields_bytes = Vec::new();
            archive.write_to(&mut fields_bytes).map_err(|e| e.to_string())?;
            let reread = FieldArchive::read_from(&fields_bytes[..]).map_err(|e| e.to_string())?;
            let mut again = Vec::new();
            reread.write_to(&mut again).map_err(|e| e.to_string())?;
            if fields_bytes != again {
                return Err("field archive does not round-trip bit-exactly".into());
            }
            let mut corrupt = fields_bytes.clone();
            corrupt[0] = b'X';
            if !matches!(
                FieldArchive::read_from(&corrupt[..]),
                Err(IngestError::BadMagic { .. })
            ) {
                return Err("field archive accepted a bad magic".into());
            }
            let mut corrupt = fields_bytes.clone();
            corrupt[4] = 99;
            if !matches!(
                FieldArchive::read_from(&corrupt[..]),
                Err(IngestError::UnsupportedVersion(99))
            ) {
                return Err("field archive accepted version 99".into());
            }

            let units = extract_cyclone_units(&rows, MIN_TRACK_HOURS).map_err(|e| e.to_string())?;
            let split = SplitPlan::Holdout(SplitBuckets {
                train: units.iter().map(|u| u.sid.clone()).collect(),
                validation: Vec::new(),
                test: Vec::new(),
            });
            let data =
                PreparedDataset::build(&units, &archive, 4, split).map_err(|e| e.to_string())?;
            let mut data_bytes = Vec::new();
            data.write_to(&mut data_bytes).map_err(|e| e.to_string())?;
            let reread = PreparedDataset::read_from(&data_bytes[..]).map_err(|e| e.to_string())?;
            let mut again = Vec::new();
            reread.write_to(&mut again).map_err(|e| e.to_string())?;
            if data_bytes != again {
                return Err("prepared dataset does not round-trip bit-exactly".into());
            }
            let mut corrupt = data_bytes.clone();
            corrupt[0] = b'X';
            if !matches!(
                PreparedDataset::read_from(&corrupt[..]),
                Err(DatasetError::BadMagic { .. })
            ) {
                return Err("dataset accepted a bad magic".into());
            }
            let mut corrupt = data_bytes.clone();
            corrupt[4] = 9;
            if !matches!(
                PreparedDataset::read_from(&corrupt[..]),
                Err(DatasetError::UnsupportedVersion(9))
            ) {
                return Err("dataset accepted version 9".into());
            }

            let idx: Vec<usize> = (0..data.samples().len()).collect();
            let scaler = ScalerStats::fit(&data, &idx, TargetKind::Time, true)
                .map_err(|e| e.to_string())?;
            let config = ModelConfig {
                t_len: 4,
                in_channels: 12,
                grid: 33,
                conv_channels: vec![4],
                conv_kernel: 3,
                feature_dim: 8,
                lstm_hidden: vec![6],
                dense_dim: 6,
                head_width: 1,
                cell_activation: CellActivation::Tanh,
            };
            let model = LandfallModel::new(config, 21).map_err(|e| e.to_string())?;
            let mut ckpt_bytes = Vec::new();
            write_checkpoint(&mut ckpt_bytes, &model, TargetKind::Time, &scaler)
                .map_err(|e| e.to_string())?;
            let reread = read_checkpoint(&ckpt_bytes[..]).map_err(|e| e.to_string())?;
            let mut again = Vec::new();
            write_checkpoint(&mut again, &reread.model, reread.target, &reread.scaler)
                .map_err(|e| e.to_string())?;
            if ckpt_bytes != again {
                return Err("checkpoint does not round-trip bit-exactly".into());
            }
            let mut corrupt = ckpt_bytes.clone();
            corrupt[0] = b'X';
            if !matches!(
                read_checkpoint(&corrupt[..]),
                Err(CheckpointError::BadMagic { .. })
            ) {
                return Err("checkpoint accepted a bad magic".into());
            }
            let mut corrupt = ckpt_bytes.clone();
            corrupt[4] = 7;
            if !matches!(
                read_checkpoint(&corrupt[..]),
                Err(CheckpointError::UnsupportedVersion(7))
            ) {
                return Err("checkpoint accepted version 7".into());
            }
            Ok(())
        })(),
    );
}

// --- criterion 11: trace contract ---

#[test]
fn criterion_11_trace_contract() {
    verdict(
        "C11",
        "trace-contract",
        (|| {
            let mut cfg = SynthConfig::new(Basin::WP, 8, 13);
            cfg.min_ocean_fixes = 12;
            cfg.max_ocean_fixes = 16;
            let (rows, archive) = synthesize_basin(&cfg).map_err(|e| e.to_string())?;
            let units = extract_cyclone_units(&rows, MIN_TRACK_HOURS).map_err(|e| e.to_string())?;
            let ids: Vec<String> = units.iter().map(|u| u.sid.clone()).collect();
            let split = make_split(&ids, SplitMode::Holdout, 3).map_err(|e| e.to_string())?;
            let data =
                PreparedDataset::build(&units, &archive, 8, split).map_err(|e| e.to_string())?;

            let SplitPlan::Holdout(buckets) = data.split() else {
                return Err("expected a holdout plan".into());
            };
            let sid = buckets.test[0].clone();
            let train_idx = data.samples_in(&buckets.train);

            let loc_scaler = ScalerStats::fit(&data, &train_idx, TargetKind::Location, true)
                .map_err(|e| e.to_string())?;
            let time_scaler = ScalerStats::fit(&data, &train_idx, TargetKind::Time, true)
                .map_err(|e| e.to_string())?;
            let loc_model = LandfallModel::new(
                ModelConfig::default_for(TargetKind::Location, data.t_len()),
                1,
            )
            .map_err(|e| e.to_string())?;
            let time_model =
                LandfallModel::new(ModelConfig::default_for(TargetKind::Time, data.t_len()), 2)
                    .map_err(|e| e.to_string())?;

            let trace = landfall::eval::trace_unit(
                &data,
                &sid,
                (&loc_model, &loc_scaler),
                (&time_model, &time_scaler),
            )
            .map_err(|e| e.to_string())?;

            let (_, unit) = data.unit_by_sid(&sid).ok_or("traced unit missing")?;
            if trace.len() != unit.ocean_len() - 10 {
                return Err(format!(
                    "{} rows for a {}-fix storm at window 8",
                    trace.len(),
                    unit.ocean_len()
                ));
            }
            if trace[0].hours_since_formation != 21.0 {
                return Err(format!(
                    "first forecast at {} h after formation, expected 21",
                    trace[0].hours_since_formation
                ));
            }
            for row in &trace {
                if row.actual_hours < 12.0 {
                    return Err(format!("forecast {} h before landfall", row.actual_hours));
                }
            }
            let last = trace.last().expect("nonempty trace");
            if last.actual_hours != 12.0 {
                return Err(format!(
                    "last forecast {} h before landfall, expected 12",
                    last.actual_hours
                ));
            }
            Ok(())
        })(),
    );
}
