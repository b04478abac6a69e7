//! Factorial classification experiments over representations, scales and
//! metrics, with cached intermediate artifacts and report output.

mod cache;
mod config;
mod grid;
mod pipeline;
mod report;

pub use cache::{content_hash, ArtifactCache};
pub use config::{Precision, RunConfig, SynthPreset, KEYS};
pub use grid::{cell_matrix, representation_set, run_grid, CellResult, ExperimentGrid};
pub use pipeline::{apply_scale, magnitude_representation, source_signal, PipelineConfig};
pub use report::{emit_report, results_csv, results_svg, ReportFiles};
