//! Datasets, task generators, checkpoints and experiment runs.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod experiment;
pub mod tasks;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::{ArchKind, ExperimentConfig, ModelSpec, PipelineSpec, TaskSpec};
pub use data::{load_sequences, save_sequences};
pub use experiment::{run_experiment, run_sweep, ExperimentReport, FinalMetrics, SweepConfig};
pub use tasks::{gen_pianoroll_task, gen_sequence_task};
