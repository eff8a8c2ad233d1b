//! Tropical-cyclone landfall forecasting on gridded atmospheric fields.
//!
//! The pipeline turns best-track rows plus per-fix 33x33 field snapshots into
//! sliding windows of 12-channel frames, trains a time-distributed CNN + LSTM
//! regressor for landfall location (scaled lat/lon) and time-to-landfall
//! (hours), and evaluates both heads against persistence-style baselines.
//! Everything downstream of the RNG seed is deterministic: single-threaded
//! training, fixed traversal orders, and binary formats that round-trip
//! bit-exactly.

pub mod binio;
pub mod checkpoint;
pub mod dataset;
pub mod eval;
pub mod geo;
pub mod ingest;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod scale;
pub mod synth;
pub mod tensor;
pub mod train;

/// Grid height and width of every field snapshot.
pub const GRID: usize = 33;
/// Channels stored in a field archive (3 pressure levels x u/v/z, plus SST).
pub const FIELD_CHANNELS: usize = 10;
/// Channels seen by the model: `lats` and `longs` prepended to the fields.
pub const MODEL_CHANNELS: usize = 12;
/// Grid spacing in degrees.
pub const GRID_STEP_DEG: f64 = 0.25;
/// Hours between consecutive track fixes.
pub const STEP_HOURS: f64 = 3.0;
/// Shortest admissible lead time: targets closer than this to landfall are
/// never emitted as samples.
pub const MIN_LEAD_HOURS: f64 = 12.0;

/// Names of the 12 model channels, in storage order.
pub const CHANNEL_NAMES: [&str; MODEL_CHANNELS] = [
    "lats", "longs", "u225", "v225", "z225", "u500", "v500", "z500", "u700", "v700", "z700", "sst",
];

/// Independent consumers of a master seed. Each (stream, index) pair maps to
/// its own sub-seed so that, for example, adding a training epoch never
/// perturbs the synthetic tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    Track = 1,
    Fields = 2,
    Split = 3,
    Fold = 4,
    Init = 5,
    Epoch = 6,
}

/// Derives a sub-seed from a master seed, a stream tag, and an index, using
/// one round of the SplitMix64 finalizer over their combination.
pub fn derive_seed(master: u64, stream: SeedStream, index: u64) -> u64 {
    let mut z = master
        ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
