//! Experiment driver: configs and presets, the runs behind each published
//! table and figure, and the artifacts they write.

pub mod cli;
pub mod config;
pub mod images;
pub mod io;
pub mod report;
pub mod run;

pub use config::{preset, ExperimentConfig, ExperimentKind, SamplerBlock, PRESETS};
pub use report::{analyze_blocks, AnalysisOutput, TableRow};
pub use run::{run_experiment, BlockOutput, RunOutput};
