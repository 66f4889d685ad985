//! Phantoms, noise, file formats and experiment orchestration.

mod config;
mod noise;
mod phantom;
pub mod rawio;
mod run;

pub use config::{ExperimentConfig, Method};
pub use noise::{add_relative_noise, measured_noise_level};
pub use phantom::{
    block_average, default_ring_radius, make_phantom, make_phantom_within, phantom_shapes,
    rasterize, Ellipse, PhantomKind, DEFAULT_RING_FRACTION, SUPPORT_FRACTION,
};
pub use rawio::{read_raw, read_raw_image, write_pgm, write_raw, RawField};
pub use run::{
    fmt_f64, grid_search, history_csv, run_experiment, simulate, sweep, ExperimentSummary, MetricsRow,
    SearchParam, SearchRow, Setup, Simulation, METRICS_HEADER, SEARCH_HEADER,
};
