//! Sequence corpora and their line-delimited JSON format.
//!
//! One record per line:
//!
//! ```text
//! {"x": [[0.1, 0.2], [0.3, 0.4]], "y": [[1.0], [0.0]], "split": "train"}
//! {"x": [[0.5, 0.5]], "label": 3}
//! ```
//!
//! `x` is required; at most one of `y` (per-step targets) or `label`
//! (per-sequence class) may be present; `split` defaults to `train`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LmnError, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    None,
    /// Per-step targets, `len × N_y`.
    Steps(Matrix),
    /// Class index for the whole sequence.
    Label(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    /// Inputs, one row per timestep (`len × N_x`; `N_x` may be zero).
    pub x: Matrix,
    pub target: Target,
    pub split: Split,
}

impl Sequence {
    pub fn new(x: Matrix, target: Target) -> Self {
        Sequence {
            x,
            target,
            split: Split::Train,
        }
    }

    pub fn unlabeled(x: Matrix) -> Self {
        Sequence::new(x, Target::None)
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn steps(&self) -> Option<&Matrix> {
        match &self.target {
            Target::Steps(y) => Some(y),
            _ => None,
        }
    }

    pub fn label(&self) -> Option<usize> {
        match self.target {
            Target::Label(c) => Some(c),
            _ => None,
        }
    }
}

/// A corpus of variable-length sequences sharing one element size.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceDataset {
    sequences: Vec<Sequence>,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Sequence>) -> Result<Self> {
        if let Some(first) = sequences.first() {
            let nx = first.x.cols();
            let ny = first.steps().map(|y| y.cols());
            for (i, s) in sequences.iter().enumerate() {
                if s.is_empty() {
                    return Err(LmnError::invalid(format!("sequence {i} is empty")));
                }
                if s.x.cols() != nx {
                    return Err(LmnError::shape(
                        "SequenceDataset",
                        format!("element size {nx}"),
                        format!("sequence {i} with element size {}", s.x.cols()),
                    ));
                }
                let same_kind = matches!(
                    (&first.target, &s.target),
                    (Target::None, Target::None)
                        | (Target::Steps(_), Target::Steps(_))
                        | (Target::Label(_), Target::Label(_))
                );
                if !same_kind {
                    return Err(LmnError::invalid(format!(
                        "sequence {i} mixes target kinds"
                    )));
                }
                if let Some(y) = s.steps() {
                    if y.rows() != s.len() || Some(y.cols()) != ny {
                        return Err(LmnError::shape(
                            "SequenceDataset targets",
                            format!("{}x{}", s.len(), ny.unwrap_or(0)),
                            format!("{}x{} in sequence {i}", y.rows(), y.cols()),
                        ));
                    }
                }
            }
        }
        Ok(SequenceDataset { sequences })
    }

    /// Unlabeled corpus from raw `len × a` element matrices.
    pub fn from_inputs(inputs: Vec<Matrix>) -> Result<Self> {
        SequenceDataset::new(inputs.into_iter().map(Sequence::unlabeled).collect())
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sequence> {
        self.sequences.iter()
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.x.cols())
    }

    /// Output size: target columns, or number of classes for labels.
    pub fn output_dim(&self) -> usize {
        match self.sequences.first().map(|s| &s.target) {
            Some(Target::Steps(y)) => y.cols(),
            Some(Target::Label(_)) => self.num_classes(),
            _ => 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.sequences
            .iter()
            .filter_map(|s| s.label())
            .max()
            .map_or(0, |c| c + 1)
    }

    pub fn max_len(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).max().unwrap_or(0)
    }

    pub fn total_steps(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    /// Sequences tagged with `split`.
    pub fn split(&self, split: Split) -> SequenceDataset {
        SequenceDataset {
            sequences: self
                .sequences
                .iter()
                .filter(|s| s.split == split)
                .cloned()
                .collect(),
        }
    }

    pub fn push(&mut self, seq: Sequence) -> Result<()> {
        let mut all = std::mem::take(&mut self.sequences);
        all.push(seq);
        *self = SequenceDataset::new(all)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default)]
    split: Split,
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str, line: usize) -> Result<Matrix> {
    let cols = rows.first().map_or(0, |r| r.len());
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(LmnError::Parse {
            line,
            message: format!("ragged \"{what}\": row {i} has {} values, expected {cols}", rows[i].len()),
        });
    }
    Matrix::from_rows(rows, cols).map_err(|e| LmnError::Parse {
        line,
        message: e.to_string(),
    })
}

fn parse_record(text: &str, line: usize) -> Result<Sequence> {
    let rec: Record = serde_json::from_str(text).map_err(|e| LmnError::Parse {
        line,
        message: e.to_string(),
    })?;
    let x = rows_to_matrix(&rec.x, "x", line)?;
    if x.rows() == 0 {
        return Err(LmnError::Parse {
            line,
            message: "sequence has no elements".into(),
        });
    }
    let target = match (rec.y, rec.label) {
        (Some(_), Some(_)) => {
            return Err(LmnError::Parse {
                line,
                message: "record has both \"y\" and \"label\"".into(),
            })
        }
        (Some(y), None) => {
            let y = rows_to_matrix(&y, "y", line)?;
            if y.rows() != x.rows() {
                return Err(LmnError::Parse {
                    line,
                    message: format!("\"y\" has {} steps, \"x\" has {}", y.rows(), x.rows()),
                });
            }
            Target::Steps(y)
        }
        (None, Some(c)) => Target::Label(c),
        (None, None) => Target::None,
    };
    Ok(Sequence {
        x,
        target,
        split: rec.split,
    })
}

/// Reads a line-delimited JSON corpus. Blank lines are skipped; a file with
/// no records is an error.
pub fn load_sequences(path: impl AsRef<Path>) -> Result<SequenceDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut sequences = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        sequences.push(parse_record(&line, i + 1)?);
    }
    if sequences.is_empty() {
        return Err(LmnError::Parse {
            line: 0,
            message: "dataset file contains no records".into(),
        });
    }
    SequenceDataset::new(sequences)
}

pub fn save_sequences(dataset: &SequenceDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for s in dataset.iter() {
        let (y, label) = match &s.target {
            Target::None => (None, None),
            Target::Steps(y) => (Some(y.to_rows()), None),
            Target::Label(c) => (None, Some(*c)),
        };
        let rec = Record {
            x: s.x.to_rows(),
            y,
            label,
            split: s.split,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
