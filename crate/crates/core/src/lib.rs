//! Sequence memory networks built around the linear autoencoder for
//! sequences (LAES).
//!
//! The crate provides the closed-form LAES, the Linear Memory Network (LMN)
//! and its multiscale variant (MS-LMN), exact BPTT training, the
//! memory-initialization pipelines, and the experiment harness used by the
//! `lmn` command-line tool.

pub mod error;
pub mod harness;
pub mod laes;
pub mod models;
pub mod numerics;
pub mod pipelines;
pub mod training;

pub use error::{LmnError, Result};
pub use harness::data::{Sequence, SequenceDataset, Split, Target};
pub use harness::{CheckpointMeta, ExperimentConfig};
pub use laes::{DecoderUnroll, LaesFit, LaesParams};
pub use models::{
    ArchSpec, ForwardTrace, LmnParams, ModelParams, MslmnParams, Readout, RnnParams, UrnnParams,
};
pub use numerics::{Matrix, SvdResult};
pub use training::{GradientSet, LossKind, TrainConfig};
