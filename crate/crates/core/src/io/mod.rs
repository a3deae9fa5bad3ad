//! Run configuration, CSV tables and SVG line charts.

mod config;
mod csv;
mod svg;

pub use config::{
    load_config, AxisSpec, BetaSearchSpec, ConfigError, OutputFormat, RunConfig, DEFAULT_BETA_TOL,
    DEFAULT_EPOCHS, DEFAULT_REPLICATES, DEFAULT_SAMPLES, DEFAULT_TRIALS,
};
pub use csv::{format_number, write_samples_csv, write_sweep_csv, write_trajectory_csv};
pub use svg::{emit_svg, sweep_series, AxesSpec, Series};
