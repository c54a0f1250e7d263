//! Dataset files, splits, the benchmark grid, ablations, theory checks and
//! report files.

pub mod ablation;
pub mod bench;
pub mod config;
pub mod io;
pub mod report;
pub mod split;
pub mod theory;

pub use ablation::{run_ablation, AblationPoint, AblationReport};
pub use bench::{
    fit_method, prepare_run, run_benchmark, run_cell, Aggregate, BenchmarkReport, Cell,
    ErrorRecord, Fitted, MetricSummary, Provenance, RunData,
};
pub use config::{
    AblationAxis, AblationSettings, ExperimentConfig, McSettings, MethodId, SeedAxis,
    SplitSettings, SyntheticAnnotations, Target,
};
pub use io::{dataset_digest, file_digest, load_dataset, read_dataset, write_dataset};
pub use report::{emit_report, write_json, ReportFormats};
pub use split::{nested_subset, split, split_stratified, Partition};
pub use theory::{check_propositions, TheoryCheck};

#[cfg(test)]
mod tests;
