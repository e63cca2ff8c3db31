//! Experiment orchestration: configuration, partitioning, running a chain
//! with per-round evaluation, and writing results.

mod config;
mod experiment;
mod output;
mod partition;
mod sweep;

pub use config::{
    apply_override, resolve_key, DataConfig, DataSource, EvalConfig, ExperimentConfig, InitConfig,
    ModelChoice, ModelConfig, OutputConfig, OutputFormat, ShiftConfig,
};
pub use experiment::{
    execute, prepare, run_experiment, CommReport, DeviceMetrics, Failure, Prepared, Provenance,
    ResultsBundle, SetMetrics, Summary, TraceRow, SHIFTED_MEAN, SHIFTED_POOLED,
};
pub use output::{
    collect_summaries, emit_results, read_summary, reliability_file, report, write_trace_csv,
    SummaryFile, CONFIG_TOML, ENSEMBLES_JSON, SUMMARY_JSON, TRACE_CSV, TRACE_JSON,
};
pub use partition::{partition_data, PartitionMode};
pub use sweep::{parse_sweep_param, sweep, SweepEntry, SWEEP_CSV};
