//! Problem generators, configuration files, reference solutions and output tables.

mod bounds_check;
mod config;
mod problems;
mod reference;
mod runner;
mod table;

pub use bounds_check::{check_bounds, BoundsCheckReport, BoundViolations};
pub use config::{Amplitude, ExperimentConfig, ReferenceSource};
pub use problems::{grid_centers, make_problem_1d, make_problem_2d, Problem};
pub use runner::{reference_points, run_baseline, run_experiment};
pub use reference::{cache_key, cache_path, cached_reference, reference_solution};
pub use table::{
    emit_table, format_scientific, format_table, log_from_json, log_to_json, read_log, sidecar_path, CSV_HEADER,
};
