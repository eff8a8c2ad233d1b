//! Command-line pipeline for the landfall forecaster.
//!
//! Eight subcommands cover the full workflow: `synth` writes a synthetic
//! basin, `ingest` validates track and field files, `prepare` windows them
//! into a training-ready dataset, `train` fits one head on a holdout split,
//! `evaluate` scores heads (running the whole k-fold protocol when the
//! dataset carries one), `predict` and `trace` emit per-sample CSVs, and
//! `report` aggregates fold metrics into a summary table.
//!
//! Settings resolve as command-line flag, then `--config` TOML entry, then
//! built-in default. Failures print one `error[class]: message` line and
//! exit with 2 (usage), 3 (data), or 4 (numeric); partially written outputs
//! are removed on the way out.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use landfall::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use landfall::dataset::{make_split, DatasetError, PreparedDataset, SplitMode, SplitPlan};
use landfall::eval::{
    evaluate_baselines, evaluate_location, evaluate_time, run_kfold, trace_unit, EvalError,
    FoldReport, KFoldConfig,
};
use landfall::ingest::{
    extract_cyclone_units, parse_tracks, write_tracks, Basin, CycloneUnit, FieldArchive,
    IngestError, MIN_TRACK_HOURS,
};
use landfall::nn::{CellActivation, ModelConfig, ModelError, TargetKind};
use landfall::report::{
    fold_metrics_csv, format_time, history_csv, location_predictions_csv, parse_fold_metrics,
    summarize, summary_csv, time_predictions_csv, trace_csv, FoldMetricsRow,
    LocationPredictionRow, ReportError, TimePredictionRow,
};
use landfall::scale::{ScaleError, ScalerStats};
use landfall::synth::{synthesize_basin, SynthConfig, SynthError};
use landfall::train::{predict_sample, train_model, TrainConfig, TrainError};
use landfall::tensor::TensorError;
use landfall::STEP_HOURS;

/// Failure classes, each mapped to its own exit code.
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn class(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::NoCyclones | SynthError::BadFixBounds { .. } => {
                CliError::Usage(e.to_string())
            }
            SynthError::Geo(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ScaleError> for CliError {
    fn from(e: ScaleError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::Tensor(inner) => CliError::Numeric(inner.to_string()),
            TrainError::EmptyTrainSet => CliError::Data(e.to_string()),
            TrainError::Model(inner) => inner.into(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Train(inner) => inner.into(),
            EvalError::Model(inner) => inner.into(),
            EvalError::Scale(inner) => inner.into(),
            EvalError::Metrics(_) => CliError::Numeric(e.to_string()),
            EvalError::EmptySampleSet
            | EvalError::WrongSplit { .. }
            | EvalError::UnknownUnit(_)
            | EvalError::UntraceableUnit { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Removes registered output files unless the command commits them, so a
/// failed run never leaves truncated artifacts behind.
struct OutputGuard {
    pending: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        OutputGuard {
            pending: Vec::new(),
            committed: false,
        }
    }

    fn register(&mut self, path: &Path) {
        self.pending.push(path.to_path_buf());
    }

    fn commit(&mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for path in &self.pending {
                let _ = fs::remove_file(path);
            }
        }
    }
}

fn basename(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[derive(Parser)]
#[command(
    name = "landfall",
    version,
    about = "Tropical-cyclone landfall forecasting pipeline"
)]
struct Cli {
    /// TOML config file consulted for any setting not given as a flag.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic basin: track CSV plus field archive.
    Synth(SynthArgs),
    /// Validate track and field files and list the usable cyclones.
    Ingest(IngestArgs),
    /// Window tracks and fields into a prepared dataset with a split plan.
    Prepare(PrepareArgs),
    /// Train one head on a holdout dataset and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate heads on the dataset's test split (k-fold trains per fold).
    Evaluate(EvaluateArgs),
    /// Write per-sample predictions of one checkpoint.
    Predict(PredictArgs),
    /// Replay both heads over one storm's lifetime.
    Trace(TraceArgs),
    /// Merge fold metric files into a grouped summary table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Basin code: NI, SI, WP, EP, SP, or NA.
    #[arg(long)]
    basin: Option<String>,
    /// Number of cyclones to generate.
    #[arg(long)]
    cyclones: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fewest over-ocean fixes per storm (>= 8).
    #[arg(long)]
    min_fixes: Option<usize>,
    /// Most over-ocean fixes per storm (<= 40).
    #[arg(long)]
    max_fixes: Option<usize>,
    /// Directory receiving tracks.csv and fields.tclf.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// Best-track CSV.
    #[arg(long)]
    tracks: PathBuf,
    /// Field archive; when given, snapshot counts are checked per storm.
    #[arg(long)]
    fields: Option<PathBuf>,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    fields: PathBuf,
    /// Window length in hours; must be a multiple of 3 with at least 2 fixes.
    #[arg(long)]
    window_hours: Option<usize>,
    /// Split mode: holdout or kfold.
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Prepared dataset with a holdout split.
    #[arg(long)]
    data: PathBuf,
    /// Head to train: location or time.
    #[arg(long)]
    target: Option<TargetKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standardize the positional channels (true) or pass them raw (false).
    #[arg(long)]
    scale_latlon: Option<bool>,
    /// LSTM cell activation: tanh or relu.
    #[arg(long)]
    cell_activation: Option<CellActivation>,
    /// Directory receiving the checkpoint and training history.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Location checkpoint (holdout datasets only).
    #[arg(long)]
    location_checkpoint: Option<PathBuf>,
    /// Time checkpoint (holdout datasets only).
    #[arg(long)]
    time_checkpoint: Option<PathBuf>,
    /// Epochs for the location head of a k-fold run.
    #[arg(long)]
    location_epochs: Option<usize>,
    /// Epochs for the time head of a k-fold run.
    #[arg(long)]
    time_epochs: Option<usize>,
    /// Learning rate for the location head of a k-fold run.
    #[arg(long)]
    location_learning_rate: Option<f64>,
    /// Learning rate for the time head of a k-fold run.
    #[arg(long)]
    time_learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale_latlon: Option<bool>,
    #[arg(long)]
    cell_activation: Option<CellActivation>,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sample set: train, validation, test (holdout splits), or all.
    #[arg(long, default_value = "test")]
    bucket: String,
    /// Restrict to one storm id (overrides --bucket).
    #[arg(long)]
    sid: Option<String>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    location_checkpoint: PathBuf,
    #[arg(long)]
    time_checkpoint: PathBuf,
    /// Storm id to replay.
    #[arg(long)]
    sid: String,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Fold metric CSVs produced by evaluate.
    #[arg(required = true, value_name = "FOLD_METRICS")]
    inputs: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

/// Optional overrides loaded from the `--config` TOML file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    synth: SynthSection,
    #[serde(default)]
    prepare: PrepareSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    evaluate: EvaluateSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSection {
    basin: Option<String>,
    cyclones: Option<usize>,
    seed: Option<u64>,
    min_fixes: Option<usize>,
    max_fixes: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrepareSection {
    window_hours: Option<usize>,
    split: Option<String>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    target: Option<String>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    seed: Option<u64>,
    scale_latlon: Option<bool>,
    cell_activation: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateSection {
    location_epochs: Option<usize>,
    time_epochs: Option<usize>,
    location_learning_rate: Option<f64>,
    time_learning_rate: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    scale_latlon: Option<bool>,
    cell_activation: Option<String>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", basename(p))))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad config {}: {e}", basename(p))))
        }
    }
}

fn parse_from_str<T: std::str::FromStr<Err = String>>(
    value: Option<String>,
    what: &str,
) -> Result<Option<T>, CliError> {
    value
        .map(|s| s.parse::<T>())
        .transpose()
        .map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file_config = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args, &file_config.synth),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Prepare(args) => cmd_prepare(args, &file_config.prepare),
        Command::Train(args) => cmd_train(args, &file_config.train),
        Command::Evaluate(args) => cmd_evaluate(args, &file_config.evaluate),
        Command::Predict(args) => cmd_predict(args),
        Command::Trace(args) => cmd_trace(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_synth(args: SynthArgs, section: &SynthSection) -> Result<(), CliError> {
    let basin_name = args
        .basin
        .or_else(|| section.basin.clone())
        .unwrap_or_else(|| "WP".to_string());
    let basin: Basin = basin_name
        .parse()
        .map_err(|e: String| CliError::Usage(e))?;
    let mut config = SynthConfig::new(
        basin,
        args.cyclones.or(section.cyclones).unwrap_or(40),
        args.seed.or(section.seed).unwrap_or(7),
    );
    if let Some(min) = args.min_fixes.or(section.min_fixes) {
        config.min_ocean_fixes = min;
    }
    if let Some(max) = args.max_fixes.or(section.max_fixes) {
        config.max_ocean_fixes = max;
    }

    println!("synth.basin = {}", config.basin);
    println!("synth.cyclones = {}", config.n_cyclones);
    println!("synth.seed = {}", config.seed);
    println!("synth.min_fixes = {}", config.min_ocean_fixes);
    println!("synth.max_fixes = {}", config.max_ocean_fixes);

    let (rows, archive) = synthesize_basin(&config)?;

    fs::create_dir_all(&args.out_dir)?;
    let tracks_path = args.out_dir.join("tracks.csv");
    let fields_path = args.out_dir.join("fields.tclf");
    let mut guard = OutputGuard::new();
    guard.register(&tracks_path);
    guard.register(&fields_path);

    let mut track_bytes = Vec::new();
    write_tracks(&mut track_bytes, &rows)?;
    fs::write(&tracks_path, track_bytes)?;
    archive.save(&fields_path)?;
    guard.commit();

    println!(
        "wrote {} fixes for {} cyclones to {} and {}",
        rows.len(),
        config.n_cyclones,
        basename(&tracks_path),
        basename(&fields_path)
    );
    Ok(())
}

fn load_units(tracks: &Path) -> Result<Vec<CycloneUnit>, CliError> {
    let file = fs::File::open(tracks)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", basename(tracks))))?;
    let rows = parse_tracks(std::io::BufReader::new(file))?;
    Ok(extract_cyclone_units(&rows, MIN_TRACK_HOURS)?)
}

fn cmd_ingest(args: IngestArgs) -> Result<(), CliError> {
    let units = load_units(&args.tracks)?;
    if units.is_empty() {
        return Err(CliError::Data(format!(
            "{} contains no usable cyclones",
            basename(&args.tracks)
        )));
    }
    let archive = args
        .fields
        .as_deref()
        .map(FieldArchive::load)
        .transpose()?;

    for unit in &units {
        if let Some(archive) = &archive {
            let snaps = archive.get(&unit.sid)?;
            if snaps.len() != unit.ocean_len() {
                return Err(CliError::Data(format!(
                    "storm {}: {} field snapshots for {} ocean fixes",
                    unit.sid,
                    snaps.len(),
                    unit.ocean_len()
                )));
            }
        }
        println!(
            "unit {} basin={} fixes={} duration_h={} landfall={}",
            unit.sid,
            unit.basin,
            unit.ocean_len(),
            unit.duration_hours(),
            format_time(&unit.landfall_time)
        );
    }
    println!("ok: {} usable cyclones", units.len());
    Ok(())
}

fn cmd_prepare(args: PrepareArgs, section: &PrepareSection) -> Result<(), CliError> {
    let window_hours = args
        .window_hours
        .or(section.window_hours)
        .unwrap_or(12);
    let step = STEP_HOURS as usize;
    if window_hours % step != 0 || window_hours / step < 2 {
        return Err(CliError::Usage(format!(
            "window must be a multiple of {step} h covering at least 2 fixes, got {window_hours} h"
        )));
    }
    let t_len = window_hours / step;
    let split_mode = match args.split {
        Some(mode) => mode,
        None => parse_from_str::<SplitMode>(section.split.clone(), "config prepare.split")?
            .unwrap_or(SplitMode::Holdout),
    };
    let seed = args.seed.or(section.seed).unwrap_or(11);

    println!("prepare.window_hours = {window_hours}");
    println!(
        "prepare.split = {}",
        match split_mode {
            SplitMode::Holdout => "holdout",
            SplitMode::KFold => "kfold",
        }
    );
    println!("prepare.seed = {seed}");

    let units = load_units(&args.tracks)?;
    let archive = FieldArchive::load(&args.fields)?;
    let ids: Vec<String> = units.iter().map(|u| u.sid.clone()).collect();
    let split = make_split(&ids, split_mode, seed)?;
    let data = PreparedDataset::build(&units, &archive, t_len, split)?;

    if data.samples().is_empty() {
        return Err(CliError::Data(format!(
            "no training samples: every storm is shorter than window + lead ({} fixes)",
            t_len + 3
        )));
    }

    let mut guard = OutputGuard::new();
    guard.register(&args.out);
    data.save(&args.out)?;
    guard.commit();

    println!(
        "wrote {} samples over {} cyclones to {}",
        data.samples().len(),
        data.units().len(),
        basename(&args.out)
    );
    Ok(())
}

/// Resolved training settings for one head.
struct HeadSettings {
    train: TrainConfig,
    scale_latlon: bool,
    cell_activation: CellActivation,
}

fn resolve_train(args: &TrainArgs, section: &TrainSection) -> Result<(TargetKind, HeadSettings), CliError> {
    let target = match args.target {
        Some(t) => t,
        None => parse_from_str::<TargetKind>(section.target.clone(), "config train.target")?
            .unwrap_or(TargetKind::Location),
    };
    let cell_activation = match args.cell_activation {
        Some(a) => a,
        None => parse_from_str::<CellActivation>(
            section.cell_activation.clone(),
            "config train.cell_activation",
        )?
        .unwrap_or(CellActivation::Tanh),
    };
    let defaults = TrainConfig::default();
    let settings = HeadSettings {
        train: TrainConfig {
            epochs: args.epochs.or(section.epochs).unwrap_or(defaults.epochs),
            batch_size: args
                .batch_size
                .or(section.batch_size)
                .unwrap_or(defaults.batch_size),
            learning_rate: args
                .learning_rate
                .or(section.learning_rate)
                .unwrap_or(defaults.learning_rate),
            seed: args.seed.or(section.seed).unwrap_or(defaults.seed),
        },
        scale_latlon: args.scale_latlon.or(section.scale_latlon).unwrap_or(true),
        cell_activation,
    };
    Ok((target, settings))
}

fn holdout_buckets(data: &PreparedDataset) -> Result<&landfall::dataset::SplitBuckets, CliError> {
    match data.split() {
        SplitPlan::Holdout(buckets) => Ok(buckets),
        SplitPlan::KFold(_) => Err(CliError::Data(
            "this dataset carries a k-fold split; use evaluate to run the full protocol".into(),
        )),
    }
}

fn cmd_train(args: TrainArgs, section: &TrainSection) -> Result<(), CliError> {
    let (target, settings) = resolve_train(&args, section)?;
    let data = PreparedDataset::load(&args.data)?;
    let buckets = holdout_buckets(&data)?;
    let train_idx = data.samples_in(&buckets.train);
    let val_idx = data.samples_in(&buckets.validation);

    println!("train.target = {target}");
    println!("train.epochs = {}", settings.train.epochs);
    println!("train.batch_size = {}", settings.train.batch_size);
    println!("train.learning_rate = {}", settings.train.learning_rate);
    println!("train.seed = {}", settings.train.seed);
    println!("train.scale_latlon = {}", settings.scale_latlon);
    println!("train.cell_activation = {}", settings.cell_activation);

    let scaler = ScalerStats::fit(&data, &train_idx, target, settings.scale_latlon)?;
    let mut config = ModelConfig::default_for(target, data.t_len());
    config.cell_activation = settings.cell_activation;
    let init_seed = landfall::derive_seed(settings.train.seed, landfall::SeedStream::Init, 0);
    let mut model = landfall::nn::LandfallModel::new(config, init_seed)?;
    println!("model.parameters = {}", model.parameter_count());

    let history = train_model(
        &mut model,
        target,
        &data,
        &scaler,
        &train_idx,
        &val_idx,
        &settings.train,
    )?;

    fs::create_dir_all(&args.out_dir)?;
    let ckpt_path = args.out_dir.join(format!("{target}.tclm"));
    let history_path = args.out_dir.join(format!("{target}_history.csv"));
    let mut guard = OutputGuard::new();
    guard.register(&ckpt_path);
    guard.register(&history_path);
    save_checkpoint(&ckpt_path, &model, target, &scaler)?;
    fs::write(&history_path, history_csv(&history)?)?;
    guard.commit();

    let last = history.last().expect("at least one epoch");
    match last.val_mse {
        Some(val) => println!(
            "final epoch {}: train_mse = {}, val_mse = {}",
            last.epoch, last.train_mse, val
        ),
        None => println!("final epoch {}: train_mse = {}", last.epoch, last.train_mse),
    }
    println!(
        "wrote {} and {}",
        basename(&ckpt_path),
        basename(&history_path)
    );
    Ok(())
}

/// Basin label for metric rows: the common basin, or MIXED.
fn basin_label(data: &PreparedDataset) -> String {
    let mut basins: Vec<Basin> = data.units().iter().map(|u| u.basin).collect();
    basins.sort();
    basins.dedup();
    match basins.as_slice() {
        [one] => one.to_string(),
        _ => "MIXED".to_string(),
    }
}

fn load_head(path: &Path, want: TargetKind) -> Result<Checkpoint, CliError> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.target != want {
        return Err(CliError::Data(format!(
            "{} holds a {} head, expected {}",
            basename(path),
            ckpt.target,
            want
        )));
    }
    Ok(ckpt)
}

fn cmd_evaluate(args: EvaluateArgs, section: &EvaluateSection) -> Result<(), CliError> {
    let data = PreparedDataset::load(&args.data)?;
    match data.split() {
        SplitPlan::Holdout(_) => evaluate_holdout(&args, &data),
        SplitPlan::KFold(_) => evaluate_kfold(&args, section, &data),
    }
}

fn evaluate_holdout(args: &EvaluateArgs, data: &PreparedDataset) -> Result<(), CliError> {
    let (Some(loc_path), Some(time_path)) = (
        args.location_checkpoint.as_deref(),
        args.time_checkpoint.as_deref(),
    ) else {
        return Err(CliError::Usage(
            "holdout evaluation needs --location-checkpoint and --time-checkpoint".into(),
        ));
    };
    let loc = load_head(loc_path, TargetKind::Location)?;
    let time = load_head(time_path, TargetKind::Time)?;

    let buckets = holdout_buckets(data)?;
    let test_idx = data.samples_in(&buckets.test);
    if test_idx.is_empty() {
        return Err(CliError::Data("the test bucket has no samples".into()));
    }

    let location = evaluate_location(&loc.model, data, &loc.scaler, &test_idx)?;
    let time_eval = evaluate_time(&time.model, data, &time.scaler, &test_idx)?;
    let baseline = evaluate_baselines(data, &test_idx)?;

    let row = FoldMetricsRow {
        basin: basin_label(data),
        t: data.t_len(),
        fold: 0,
        dataset_size: data.units().len(),
        n_test_samples: location.n_samples,
        rmse_lat: location.rmse_lat,
        rmse_lon: location.rmse_lon,
        mae_lat: location.mae_lat,
        mae_lon: location.mae_lon,
        mae_distance_km: location.mae_distance_km,
        rmse_time: time_eval.rmse_hours,
        mae_time: time_eval.mae_hours,
        baseline_distance_km: baseline.location_mae_distance_km,
        baseline_rmse_time: baseline.time_rmse_hours,
        baseline_mae_time: baseline.time_mae_hours,
    };

    fs::create_dir_all(&args.out_dir)?;
    let metrics_path = args.out_dir.join("metrics.csv");
    let mut guard = OutputGuard::new();
    guard.register(&metrics_path);
    fs::write(&metrics_path, fold_metrics_csv(std::slice::from_ref(&row))?)?;
    guard.commit();

    println!(
        "test samples = {}, mae_distance_km = {}, baseline_distance_km = {}",
        row.n_test_samples, row.mae_distance_km, row.baseline_distance_km
    );
    println!(
        "mae_time = {}, baseline_mae_time = {}",
        row.mae_time, row.baseline_mae_time
    );
    println!("wrote {}", basename(&metrics_path));
    Ok(())
}

fn evaluate_kfold(
    args: &EvaluateArgs,
    section: &EvaluateSection,
    data: &PreparedDataset,
) -> Result<(), CliError> {
    if args.location_checkpoint.is_some() || args.time_checkpoint.is_some() {
        return Err(CliError::Usage(
            "k-fold evaluation trains its own heads; checkpoint flags apply to holdout datasets".into(),
        ));
    }
    let cell_activation = match args.cell_activation {
        Some(a) => a,
        None => parse_from_str::<CellActivation>(
            section.cell_activation.clone(),
            "config evaluate.cell_activation",
        )?
        .unwrap_or(CellActivation::Tanh),
    };
    let seed = args.seed.or(section.seed).unwrap_or(42);
    let batch_size = args.batch_size.or(section.batch_size).unwrap_or(16);
    let location_train = TrainConfig {
        epochs: args
            .location_epochs
            .or(section.location_epochs)
            .unwrap_or(15),
        batch_size,
        learning_rate: args
            .location_learning_rate
            .or(section.location_learning_rate)
            .unwrap_or(0.005),
        seed,
    };
    let time_train = TrainConfig {
        epochs: args.time_epochs.or(section.time_epochs).unwrap_or(40),
        batch_size,
        learning_rate: args
            .time_learning_rate
            .or(section.time_learning_rate)
            .unwrap_or(0.03),
        seed: seed + 1,
    };
    let scale_latlon = args.scale_latlon.or(section.scale_latlon).unwrap_or(true);

    println!("evaluate.location_epochs = {}", location_train.epochs);
    println!("evaluate.location_learning_rate = {}", location_train.learning_rate);
    println!("evaluate.time_epochs = {}", time_train.epochs);
    println!("evaluate.time_learning_rate = {}", time_train.learning_rate);
    println!("evaluate.batch_size = {batch_size}");
    println!("evaluate.seed = {seed}");
    println!("evaluate.scale_latlon = {scale_latlon}");
    println!("evaluate.cell_activation = {cell_activation}");

    let mut location_model = ModelConfig::default_for(TargetKind::Location, data.t_len());
    location_model.cell_activation = cell_activation;
    let mut time_model = ModelConfig::default_for(TargetKind::Time, data.t_len());
    time_model.cell_activation = cell_activation;
    let config = KFoldConfig {
        location_model,
        time_model,
        location_train,
        time_train,
        scale_latlon,
    };

    let reports = run_kfold(data, &config)?;

    fs::create_dir_all(&args.out_dir)?;
    let mut guard = OutputGuard::new();
    let basin = basin_label(data);
    let mut rows = Vec::with_capacity(reports.len());
    for report in &reports {
        rows.push(FoldMetricsRow::from_fold(
            basin.clone(),
            data.t_len(),
            data.units().len(),
            report,
        ));
    }

    let metrics_path = args.out_dir.join("fold_metrics.csv");
    guard.register(&metrics_path);
    fs::write(&metrics_path, fold_metrics_csv(&rows)?)?;

    for report in &reports {
        let FoldReport {
            fold,
            location_head,
            time_head,
            ..
        } = report;
        let loc_ckpt = args.out_dir.join(format!("fold{fold}_location.tclm"));
        let time_ckpt = args.out_dir.join(format!("fold{fold}_time.tclm"));
        let loc_hist = args.out_dir.join(format!("fold{fold}_location_history.csv"));
        let time_hist = args.out_dir.join(format!("fold{fold}_time_history.csv"));
        guard.register(&loc_ckpt);
        guard.register(&time_ckpt);
        guard.register(&loc_hist);
        guard.register(&time_hist);
        save_checkpoint(
            &loc_ckpt,
            &location_head.model,
            TargetKind::Location,
            &location_head.scaler,
        )?;
        save_checkpoint(
            &time_ckpt,
            &time_head.model,
            TargetKind::Time,
            &time_head.scaler,
        )?;
        fs::write(&loc_hist, history_csv(&location_head.history)?)?;
        fs::write(&time_hist, history_csv(&time_head.history)?)?;
    }
    guard.commit();

    for row in &rows {
        println!(
            "fold {}: mae_distance_km = {} (baseline {}), mae_time = {} (baseline {})",
            row.fold,
            row.mae_distance_km,
            row.baseline_distance_km,
            row.mae_time,
            row.baseline_mae_time
        );
    }
    println!("wrote {} and per-fold artifacts", basename(&metrics_path));
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    if args.sid.is_none()
        && !matches!(args.bucket.as_str(), "train" | "validation" | "test" | "all")
    {
        return Err(CliError::Usage(format!(
            "unknown bucket '{}' (expected train, validation, test, or all)",
            args.bucket
        )));
    }
    let data = PreparedDataset::load(&args.data)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;

    let idx: Vec<usize> = match &args.sid {
        Some(sid) => {
            let (unit_idx, _) = data
                .unit_by_sid(sid)
                .ok_or_else(|| CliError::Data(format!("storm {sid} not found in the dataset")))?;
            data.samples()
                .iter()
                .enumerate()
                .filter(|(_, s)| s.unit == unit_idx)
                .map(|(i, _)| i)
                .collect()
        }
        None => match args.bucket.as_str() {
            "all" => (0..data.samples().len()).collect(),
            name => {
                let buckets = match data.split() {
                    SplitPlan::Holdout(buckets) => buckets,
                    SplitPlan::KFold(_) => {
                        return Err(CliError::Usage(format!(
                            "bucket '{name}' needs a holdout dataset; use --bucket all or --sid"
                        )))
                    }
                };
                let ids = match name {
                    "train" => &buckets.train,
                    "validation" => &buckets.validation,
                    _ => &buckets.test,
                };
                data.samples_in(ids)
            }
        },
    };
    if idx.is_empty() {
        return Err(CliError::Data("no samples match the selection".into()));
    }

    let text = match ckpt.target {
        TargetKind::Location => {
            let mut rows = Vec::with_capacity(idx.len());
            for &i in &idx {
                let pred = predict_sample(&ckpt.model, &data, &ckpt.scaler, ckpt.target, i)?;
                let s = &data.samples()[i];
                let pred_point = landfall::geo::GeoPoint::new(pred[0].clamp(-90.0, 90.0), pred[1])
                    .expect("latitude clamped into range");
                let actual = data.units()[s.unit].landfall;
                rows.push(LocationPredictionRow {
                    sid: data.units()[s.unit].sid.clone(),
                    t_end: format_time(&data.t_end(i)),
                    pred_lat: pred[0],
                    pred_lon: pred[1],
                    actual_lat: s.target_lat,
                    actual_lon: s.target_lon,
                    error_km: landfall::geo::haversine_km(pred_point, actual),
                });
            }
            location_predictions_csv(&rows)?
        }
        TargetKind::Time => {
            let mut rows = Vec::with_capacity(idx.len());
            for &i in &idx {
                let pred = predict_sample(&ckpt.model, &data, &ckpt.scaler, ckpt.target, i)?;
                let s = &data.samples()[i];
                rows.push(TimePredictionRow {
                    sid: data.units()[s.unit].sid.clone(),
                    t_end: format_time(&data.t_end(i)),
                    pred_hours: pred[0],
                    actual_hours: s.target_hours,
                    abs_error_hours: (pred[0] - s.target_hours).abs(),
                });
            }
            time_predictions_csv(&rows)?
        }
    };

    let mut guard = OutputGuard::new();
    guard.register(&args.out);
    fs::write(&args.out, text)?;
    guard.commit();
    println!("wrote {} predictions to {}", idx.len(), basename(&args.out));
    Ok(())
}

fn cmd_trace(args: TraceArgs) -> Result<(), CliError> {
    let data = PreparedDataset::load(&args.data)?;
    let loc = load_head(&args.location_checkpoint, TargetKind::Location)?;
    let time = load_head(&args.time_checkpoint, TargetKind::Time)?;

    let rows = trace_unit(
        &data,
        &args.sid,
        (&loc.model, &loc.scaler),
        (&time.model, &time.scaler),
    )?;

    let mut guard = OutputGuard::new();
    guard.register(&args.out);
    fs::write(&args.out, trace_csv(&rows)?)?;
    guard.commit();
    println!(
        "wrote {} forecasts for {} to {}",
        rows.len(),
        args.sid,
        basename(&args.out)
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for path in &args.inputs {
        let file = fs::File::open(path)
            .map_err(|e| CliError::Data(format!("cannot open {}: {e}", basename(path))))?;
        let mut parsed = parse_fold_metrics(std::io::BufReader::new(file))?;
        rows.append(&mut parsed);
    }
    let summary = summarize(&rows)?;

    let mut guard = OutputGuard::new();
    guard.register(&args.out);
    fs::write(&args.out, summary_csv(&summary)?)?;
    guard.commit();
    println!(
        "aggregated {} fold rows into {} groups in {}",
        rows.len(),
        summary.len(),
        basename(&args.out)
    );
    Ok(())
}
