//! Experiment harness: config, the two-stage protocol, records and evaluation.

pub mod config;
pub mod eval;
pub mod records;
pub mod runner;

pub use config::{ExperimentConfig, OptimizerKind};
pub use eval::{evaluate_structure, StructureSummary};
pub use records::{read_records, summarize, ConditionSummary, RunRecord, RECORDS_HEADER};
pub use runner::{run_all, run_experiment, run_stage1, run_stage2, Agent, ExperimentReport, RunOutput};
