//! Market data ingestion, rolling windows, fold protocol and a synthetic
//! market generator.

mod folds;
mod frame;
mod synth;
mod windows;

pub use folds::{make_folds, FoldBoundaries, FoldSpec, FoldSplit, WindowSplit};
pub use frame::{
    delivery_index, format_ts, is_aligned, parse_ts, step, FeatureFrame, GapPolicy, LoadOptions, LoadReport,
    RESOLUTION_MINUTES,
};
pub use synth::{generate_synthetic, SynthParams};
pub use windows::{check_minutes, make_windows, n_lags, Window, WindowSet};
