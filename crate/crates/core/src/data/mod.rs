//! Data pipeline: trajectory ingestion, synthetic car-following
//! generation, platoon windowing, normalization, and dataset storage.

pub mod ingest;
pub mod normalize;
pub mod platoon;
pub mod store;
pub mod synthetic;

pub use ingest::{ingest_ngsim, ColumnMap, IngestConfig, IngestReport, TrajectoryRecord};
pub use normalize::{
    fit_normalization, normalize_window, ChannelStats, NormalizationStats, NormalizedWindow,
};
pub use platoon::{
    expected_window_count, split_train_test, window_platoons, PlatoonTrajectory, PlatoonWindow,
    VehicleTrack, WindowMeta, FUTURE_LEN, HISTORY_LEN, WINDOW_LEN,
};
pub use store::{load_windows, save_windows};
pub use synthetic::{generate_mixed, generate_synthetic, IdmParams, Scenario};
