use serde::{Deserialize, Serialize};

use crate::error::{LmnError, Result};
use crate::harness::data::{Sequence, Target};
use crate::numerics::Matrix;

/// Training objective. The model emits raw readouts; the link applied
/// before comparing with targets depends on the kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error, identity link.
    #[default]
    Mse,
    /// Mean squared error divided by the target variance.
    Nmse,
    /// Binary cross-entropy per cell, sigmoid link.
    Bce,
    /// Categorical cross-entropy on the final step, softmax link.
    CrossEntropy,
}

impl LossKind {
    /// Applies the output link to one row of raw readouts.
    pub fn activate(self, row: &[f64]) -> Vec<f64> {
        match self {
            LossKind::Mse | LossKind::Nmse => row.to_vec(),
            LossKind::Bce => row.iter().map(|&z| sigmoid(z)).collect(),
            LossKind::CrossEntropy => softmax(row),
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(LmnError::shape(
            "loss",
            format!("{}x{}", b.rows(), b.cols()),
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    Ok(())
}

/// Loss on already-activated predictions.
///
/// For `Bce`, predictions are probabilities. For `CrossEntropy`, each row of
/// `predictions` is a class distribution and the matching row of `targets`
/// is one-hot.
pub fn loss(kind: LossKind, predictions: &Matrix, targets: &Matrix) -> Result<f64> {
    check_same_shape(predictions, targets)?;
    let n = predictions.len().max(1) as f64;
    let pairs = || predictions.as_slice().iter().zip(targets.as_slice());
    match kind {
        LossKind::Mse => Ok(pairs().map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n),
        LossKind::Nmse => {
            let var = variance(targets.as_slice().iter().copied());
            if var == 0.0 {
                return Err(LmnError::invalid("NMSE undefined for constant targets"));
            }
            Ok(loss(LossKind::Mse, predictions, targets)? / var)
        }
        LossKind::Bce => {
            const CLIP: f64 = 1e-12;
            let total: f64 = pairs()
                .map(|(&p, &t)| {
                    let p = p.clamp(CLIP, 1.0 - CLIP);
                    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
                })
                .sum();
            Ok(total / n)
        }
        LossKind::CrossEntropy => {
            let rows = predictions.rows().max(1) as f64;
            let total: f64 = pairs()
                .filter(|(_, &t)| t != 0.0)
                .map(|(&p, &t)| -t * p.max(1e-300).ln())
                .sum();
            Ok(total / rows)
        }
    }
}

/// Mean over frames of `TP / (TP + FP + FN)`; a frame with nothing predicted
/// and nothing expected scores 1. Cells are treated as on when `> 0.5`.
pub fn frame_accuracy(predicted: &Matrix, target: &Matrix) -> Result<f64> {
    check_same_shape(predicted, target)?;
    if predicted.rows() == 0 {
        return Ok(1.0);
    }
    let total: f64 = (0..predicted.rows())
        .map(|r| frame_score(predicted.row(r), target.row(r)))
        .sum();
    Ok(total / predicted.rows() as f64)
}

pub(crate) fn frame_score(pred: &[f64], target: &[f64]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(target) {
        match (p > 0.5, t > 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let denom = tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        tp as f64 / denom as f64
    }
}

/// Per-batch scale turning summed cell losses into the batch objective.
pub(crate) fn batch_scale(kind: LossKind, batch: &[&Sequence]) -> Result<f64> {
    match kind {
        LossKind::CrossEntropy => {
            if batch.iter().any(|s| s.label().is_none()) {
                return Err(LmnError::invalid("cross-entropy needs class labels"));
            }
            Ok(1.0 / batch.len().max(1) as f64)
        }
        _ => {
            let mut cells = 0usize;
            for s in batch {
                match s.steps() {
                    Some(y) => cells += y.len(),
                    None => {
                        return Err(LmnError::invalid(format!(
                            "{kind:?} loss needs per-step targets"
                        )))
                    }
                }
            }
            let base = 1.0 / cells.max(1) as f64;
            if kind == LossKind::Nmse {
                let var = variance(
                    batch.iter().flat_map(|s| s.steps().unwrap().as_slice().iter().copied()),
                );
                if var == 0.0 {
                    return Err(LmnError::invalid("NMSE undefined for constant targets"));
                }
                Ok(base / var)
            } else {
                Ok(base)
            }
        }
    }
}

/// Summed loss of one sequence from raw readouts, and its gradient with
/// respect to those readouts, both multiplied by `scale`.
pub(crate) fn sequence_loss_grad(
    kind: LossKind,
    y: &Matrix,
    target: &Target,
    scale: f64,
    want_grad: bool,
) -> Result<(f64, Option<Matrix>)> {
    let mut grad = want_grad.then(|| Matrix::zeros(y.rows(), y.cols()));
    let total = match (kind, target) {
        (LossKind::Mse | LossKind::Nmse, Target::Steps(t)) => {
            check_same_shape(y, t)?;
            let mut s = 0.0;
            for (i, (&p, &q)) in y.as_slice().iter().zip(t.as_slice()).enumerate() {
                let d = p - q;
                s += d * d;
                if let Some(g) = grad.as_mut() {
                    g.as_mut_slice()[i] = 2.0 * d * scale;
                }
            }
            s
        }
        (LossKind::Bce, Target::Steps(t)) => {
            check_same_shape(y, t)?;
            let mut s = 0.0;
            for (i, (&z, &q)) in y.as_slice().iter().zip(t.as_slice()).enumerate() {
                s += softplus(z) - q * z;
                if let Some(g) = grad.as_mut() {
                    g.as_mut_slice()[i] = (sigmoid(z) - q) * scale;
                }
            }
            s
        }
        (LossKind::CrossEntropy, Target::Label(c)) => {
            let last = y.rows().checked_sub(1).ok_or_else(|| LmnError::invalid("empty sequence"))?;
            let z = y.row(last);
            if *c >= z.len() {
                return Err(LmnError::invalid(format!(
                    "label {c} out of range for {} outputs",
                    z.len()
                )));
            }
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            if let Some(g) = grad.as_mut() {
                let p = softmax(z);
                let row = g.row_mut(last);
                for (j, pj) in p.into_iter().enumerate() {
                    row[j] = (pj - if j == *c { 1.0 } else { 0.0 }) * scale;
                }
            }
            lse - z[*c]
        }
        _ => {
            return Err(LmnError::invalid(format!(
                "{kind:?} loss does not match the sequence target"
            )))
        }
    };
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_predictions_score_zero() {
        let t = Matrix::from_fn(4, 2, |i, j| (i * 2 + j) as f64 * 0.1);
        assert_eq!(loss(LossKind::Mse, &t, &t).unwrap(), 0.0);
        assert_eq!(loss(LossKind::Nmse, &t, &t).unwrap(), 0.0);
    }

    #[test]
    fn mean_predictor_has_unit_nmse() {
        let t = Matrix::column(&[1.0, 2.0, 4.0, 9.0]);
        let p = Matrix::column(&[4.0; 4]);
        assert!((loss(LossKind::Nmse, &p, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(loss(LossKind::Nmse, &t, &Matrix::column(&[1.0; 4])).is_err());
    }

    #[test]
    fn coin_flip_bce_is_ln2() {
        let t = Matrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = Matrix::new(2, 2, vec![0.5; 4]).unwrap();
        let l = loss(LossKind::Bce, &p, &t).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let exact = loss(LossKind::Bce, &t, &t).unwrap();
        assert!(exact >= 0.0 && exact < 1e-10);
    }

    #[test]
    fn frame_accuracy_examples() {
        let t = Matrix::new(3, 3, vec![1., 0., 0., 1., 1., 0., 0., 0., 0.]).unwrap();
        assert_eq!(frame_accuracy(&t, &t).unwrap(), 1.0);
        assert_eq!(frame_score(&[1., 1., 0.], &[1., 0., 0.]), 0.5);
        assert_eq!(frame_score(&[0., 0.], &[1., 0.]), 0.0);
        assert_eq!(frame_score(&[0., 0.], &[0., 0.]), 1.0);
    }

    #[test]
    fn logit_bce_matches_probability_bce() {
        let z = Matrix::new(1, 3, vec![-2.0, 0.3, 5.0]).unwrap();
        let t = Matrix::new(1, 3, vec![0.0, 1.0, 1.0]).unwrap();
        let (raw, _) =
            sequence_loss_grad(LossKind::Bce, &z, &Target::Steps(t.clone()), 1.0 / 3.0, false)
                .unwrap();
        let p = Matrix::new(1, 3, z.as_slice().iter().map(|&v| sigmoid(v)).collect()).unwrap();
        assert!((raw - loss(LossKind::Bce, &p, &t).unwrap()).abs() < 1e-14);
    }
}
