//! Panel ingestion, chronological windowing, and the synthetic generator.

mod panel;
mod synth;
mod windows;

pub use panel::{load_csv, parse_timestamp, read_panel, Panel, TRAIN_FRACTION};
pub use synth::{gen_synthetic, random_diffusion_graph, SeasonalTerm, SyntheticSpec};
pub use windows::{
    layout, make_windows, make_windows_with_scaler, FeatureBuilder, FeatureConfig, ImfMode, Scaler, Split, Splits, WindowedDataset,
};
