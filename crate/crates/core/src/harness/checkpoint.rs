//! JSON checkpoints with shape-tagged tensors.
//!
//! ```text
//! {"format": "lmn-checkpoint", "version": 1,
//!  "arch": {"kind": "lmn", "n_x": 2, ...},
//!  "tensors": [{"name": "w_xh", "shape": [4, 2], "data": [...]}, ...],
//!  "metadata": {"seed": 0, "epoch": 12, "metrics": {"loss": 0.1}}}
//! ```
//!
//! Floats are written with shortest round-trip formatting, so loading
//! reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LmnError, Result};
use crate::models::{ArchSpec, ModelParams, Recurrent};
use crate::numerics::Matrix;

const FORMAT: &str = "lmn-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    arch: ArchSpec,
    tensors: Vec<TensorRecord>,
    #[serde(default)]
    metadata: CheckpointMeta,
}

pub fn save_checkpoint(model: &ModelParams, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        arch: model.arch(),
        tensors: model
            .tensors()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                shape: [t.rows(), t.cols()],
                data: t.as_slice().to_vec(),
            })
            .collect(),
        metadata: meta.clone(),
    };
    let text = serde_json::to_string(&file)?;
    fs::write(path, text)?;
    Ok(())
}

/// Reads and validates a checkpoint. Every tensor must be present with the
/// shape the architecture implies, and the structural constraints of the
/// architecture must hold.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, CheckpointMeta)> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format != FORMAT {
        return Err(LmnError::invalid(format!("not a checkpoint: format \"{}\"", file.format)));
    }
    if file.version != VERSION {
        return Err(LmnError::invalid(format!("unsupported checkpoint version {}", file.version)));
    }
    // build a correctly shaped model, then overwrite every tensor
    let mut model = file.arch.build_random(&mut ChaCha8Rng::seed_from_u64(0))?;
    let expected: Vec<(String, (usize, usize))> = model
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape()))
        .collect();
    if expected.len() != file.tensors.len() {
        return Err(LmnError::Invariant(format!(
            "{} architecture has {} tensors, checkpoint has {}",
            model.kind(),
            expected.len(),
            file.tensors.len()
        )));
    }
    let mut values = Vec::with_capacity(expected.len());
    for ((name, shape), rec) in expected.iter().zip(file.tensors) {
        if &rec.name != name {
            return Err(LmnError::Invariant(format!(
                "expected tensor \"{name}\", found \"{}\"",
                rec.name
            )));
        }
        if (rec.shape[0], rec.shape[1]) != *shape {
            return Err(LmnError::Shape {
                context: "checkpoint tensor",
                expected: format!("{name}: {}x{}", shape.0, shape.1),
                found: format!("{}x{}", rec.shape[0], rec.shape[1]),
            });
        }
        values.push(Matrix::new(shape.0, shape.1, rec.data)?);
    }
    for (slot, value) in model.tensors_mut().into_iter().zip(values) {
        *slot = value;
    }
    if let ModelParams::Mslmn(p) = &model {
        p.check_structure()?;
    }
    Ok((model, file.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Readout;

    fn all_archs() -> Vec<ArchSpec> {
        vec![
            ArchSpec::Rnn { n_x: 2, n_h: 3, n_y: 1 },
            ArchSpec::Lmn { n_x: 2, n_h: 3, n_m: 4, n_y: 2, readout: Readout::Hidden },
            ArchSpec::Urnn { n_x: 1, n_h: 2, n_y: 1, k: 3 },
            ArchSpec::Mslmn { n_x: 0, n_h: 1, module_size: 2, modules: 3, n_y: 1 },
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for (i, arch) in all_archs().into_iter().enumerate() {
            let model = arch.build_random(&mut rng).unwrap();
            let path = dir.path().join(format!("m{i}.json"));
            let meta = CheckpointMeta {
                seed: Some(7),
                epoch: Some(3),
                metrics: [("loss".to_string(), 0.1 + 0.2)].into(),
            };
            save_checkpoint(&model, &meta, &path).unwrap();
            let (back, meta_back) = load_checkpoint(&path).unwrap();
            for ((_, a), (_, b)) in model.tensors().into_iter().zip(back.tensors()) {
                let bits_a: Vec<u64> = a.as_slice().iter().map(|v| v.to_bits()).collect();
                let bits_b: Vec<u64> = b.as_slice().iter().map(|v| v.to_bits()).collect();
                assert_eq!(bits_a, bits_b);
            }
            assert_eq!(meta_back, meta);
        }
    }

    #[test]
    fn tampered_structural_zero_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ms.json");
        let model = all_archs()[3].build_random(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        save_checkpoint(&model, &CheckpointMeta::default(), &path).unwrap();
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        // w_mm is 6x6; entry (2, 0) lies in the block below the diagonal
        v["tensors"][3]["data"][12] = serde_json::json!(0.5);
        fs::write(&path, v.to_string()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(LmnError::Invariant(_))));
    }

    #[test]
    fn truncated_and_unknown_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = all_archs()[0].build_random(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        save_checkpoint(&model, &CheckpointMeta::default(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(LmnError::Json(_))));
        fs::write(&path, text.replace("\"rnn\"", "\"gru\"")).unwrap();
        assert!(load_checkpoint(&path).is_err());
        fs::write(&path, text.replace("[3,2]", "[2,3]")).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
