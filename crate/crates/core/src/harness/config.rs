//! Experiment configuration and parameter-budget sizing.
//!
//! ```text
//! {"task": {"kind": "generation", "length": 300},
//!  "model": {"arch": "mslmn", "n_h": 1, "modules": 9, "budget": 1000},
//!  "pipeline": {"kind": "plain"},
//!  "train": {"learning_rate": 0.005, "max_epochs": 5000, "batch_size": 1},
//!  "seed": 0}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LmnError, Result};
use crate::models::{count_params, ArchSpec, Readout};
use crate::training::{LossKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Zero-input waveform continuation, trained and scored on one sequence.
    Generation {
        #[serde(default = "default_gen_length")]
        length: usize,
    },
    Pianoroll {
        #[serde(default = "default_rolls")]
        n_sequences: usize,
        #[serde(default = "default_roll_length")]
        length: usize,
        #[serde(default = "default_notes")]
        n_notes: usize,
    },
    /// Precomputed features with one class label per sequence, read from a
    /// line-delimited JSON corpus.
    Classification { path: PathBuf },
}

fn default_gen_length() -> usize {
    300
}
fn default_rolls() -> usize {
    40
}
fn default_roll_length() -> usize {
    64
}
fn default_notes() -> usize {
    88
}

impl TaskSpec {
    pub fn default_loss(&self) -> LossKind {
        match self {
            TaskSpec::Generation { .. } => LossKind::Nmse,
            TaskSpec::Pianoroll { .. } => LossKind::Bce,
            TaskSpec::Classification { .. } => LossKind::CrossEntropy,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Generation { .. } => "generation",
            TaskSpec::Pianoroll { .. } => "pianoroll",
            TaskSpec::Classification { .. } => "classification",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Rnn,
    Lmn,
    Urnn,
    Mslmn,
}

/// Architecture with either explicit sizes or a parameter budget. With a
/// budget, exactly one size is left unset and resolved to the largest value
/// whose parameter count stays within the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: ArchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_m: Option<usize>,
    /// URNN tape depth (default 10).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_size: Option<usize>,
    /// MS-LMN module count (default 9).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modules: Option<usize>,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
}

const DEFAULT_TAPE: usize = 10;
const DEFAULT_MODULES: usize = 9;

impl ModelSpec {
    pub fn new(arch: ArchKind) -> Self {
        ModelSpec {
            arch,
            n_h: None,
            n_m: None,
            k: None,
            module_size: None,
            modules: None,
            readout: Readout::default(),
            budget: None,
        }
    }

    /// Concrete architecture for the given input and output sizes.
    pub fn resolve(&self, n_x: usize, n_y: usize) -> Result<ArchSpec> {
        let readout = self.readout;
        let k = self.k.unwrap_or(DEFAULT_TAPE);
        let modules = self.modules.unwrap_or(DEFAULT_MODULES);
        // the sizes this architecture uses, in a fixed order
        let sizes: Vec<(&str, Option<usize>)> = match self.arch {
            ArchKind::Rnn | ArchKind::Urnn => vec![("n_h", self.n_h)],
            ArchKind::Lmn => vec![("n_h", self.n_h), ("n_m", self.n_m)],
            ArchKind::Mslmn => vec![("n_h", self.n_h), ("module_size", self.module_size)],
        };
        let build = |v: &[usize]| -> ArchSpec {
            match self.arch {
                ArchKind::Rnn => ArchSpec::Rnn { n_x, n_h: v[0], n_y },
                ArchKind::Urnn => ArchSpec::Urnn { n_x, n_h: v[0], n_y, k },
                ArchKind::Lmn => ArchSpec::Lmn { n_x, n_h: v[0], n_m: v[1], n_y, readout },
                ArchKind::Mslmn => ArchSpec::Mslmn {
                    n_x,
                    n_h: v[0],
                    module_size: v[1],
                    modules,
                    n_y,
                },
            }
        };
        let free: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i].1.is_none()).collect();
        let mut values: Vec<usize> = sizes.iter().map(|s| s.1.unwrap_or(0)).collect();
        match self.budget {
            None => {
                if let Some(&i) = free.first() {
                    return Err(LmnError::invalid(format!(
                        "{} is required when no budget is given",
                        sizes[i].0
                    )));
                }
                Ok(build(&values))
            }
            Some(budget) => {
                if free.len() != 1 {
                    let names: Vec<&str> = sizes.iter().map(|s| s.0).collect();
                    return Err(LmnError::invalid(format!(
                        "with a budget, leave exactly one of {} unset (budget or explicit sizes, not both)",
                        names.join(", ")
                    )));
                }
                let slot = free[0];
                let count_at = |v: usize, values: &mut Vec<usize>| {
                    values[slot] = v;
                    count_params(&build(values))
                };
                if count_at(1, &mut values) > budget {
                    return Err(LmnError::invalid(format!(
                        "budget {budget} is below the smallest {:?} model",
                        self.arch
                    )));
                }
                let mut v = 1;
                while count_at(v + 1, &mut values) <= budget {
                    v += 1;
                }
                values[slot] = v;
                Ok(build(&values))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PipelineSpec {
    /// End-to-end training from random initialization.
    #[default]
    Plain,
    /// URNN training, LAES memory initialization, then LMN fine-tuning.
    /// Each training phase gets the full `train` settings.
    LmnPretrain {
        #[serde(default = "default_tape")]
        tape_depth: usize,
    },
    /// Module-by-module MS-LMN growth.
    MslmnIncremental {
        #[serde(default = "default_stage_epochs")]
        epochs_per_stage: usize,
    },
}

fn default_tape() -> usize {
    DEFAULT_TAPE
}
fn default_stage_epochs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub pipeline: PipelineSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Loss; defaults to nmse, bce or cross-entropy by task. Overrides
    /// `train.loss`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    /// Seeds both the data generator and training.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn loss(&self) -> LossKind {
        self.loss.unwrap_or_else(|| self.task.default_loss())
    }

    /// Training settings with the experiment's loss and seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss(),
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        match (self.pipeline, self.model.arch) {
            (PipelineSpec::LmnPretrain { tape_depth }, ArchKind::Lmn) => {
                if tape_depth == 0 {
                    return Err(LmnError::invalid("tape_depth must be at least 1"));
                }
                if self.model.readout != Readout::Memory {
                    return Err(LmnError::invalid("lmn_pretrain builds a memory-readout LMN"));
                }
            }
            (PipelineSpec::MslmnIncremental { .. }, ArchKind::Mslmn) | (PipelineSpec::Plain, _) => {}
            (p, a) => {
                return Err(LmnError::invalid(format!(
                    "pipeline {p:?} does not apply to architecture {a:?}"
                )))
            }
        }
        if matches!(self.task, TaskSpec::Classification { .. })
            && self.loss() != LossKind::CrossEntropy
        {
            return Err(LmnError::invalid("classification uses the cross_entropy loss"));
        }
        Ok(())
    }
}
