//! Synthetic benchmark shapes, evaluation and result tables.

mod eval;
mod suite;
mod synth;

pub use eval::{evaluate, evaluate_clouds, point_errors, subsample_indices, CloudResult, EvalReport, COORD_TOLERANCE};
pub use suite::{parse_suite, read_suite, run_benchmark, BenchOptions, BenchTable};
pub use synth::{synth_cloud, Density, ShapeKind, ShapeSpec, NOISE_LEVELS};
