//! Losses, exact BPTT, Adam and the early-stopping training loop.

mod bptt;
mod loss;
mod optim;

pub use bptt::{batch_loss, bptt_gradients, grad_check, GradientSet};
pub use loss::{frame_accuracy, loss, sigmoid, softmax, LossKind};
pub use optim::{adam_step, AdamState};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LmnError, Result};
use crate::harness::data::{Sequence, SequenceDataset, Target};
use crate::models::{ModelParams, Recurrent};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_decay: f64,
    pub max_epochs: usize,
    /// Epochs without improvement tolerated before stopping; `None` runs
    /// the full budget.
    pub patience: Option<usize>,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Standard deviation of Gaussian noise added to training inputs.
    pub input_noise_std: f64,
    /// Return the best monitored snapshot rather than the final parameters.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            l2_decay: 0.0,
            max_epochs: 100,
            patience: Some(10),
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            loss: LossKind::Mse,
            input_noise_std: 0.0,
            keep_best: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(LmnError::invalid("Adam betas must lie in (0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(LmnError::invalid("Adam epsilon must be positive"));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(LmnError::invalid("learning rate must be positive"));
        }
        if self.l2_decay.is_nan() || self.l2_decay < 0.0 {
            return Err(LmnError::invalid("L2 decay must be non-negative"));
        }
        if self.input_noise_std.is_nan() || self.input_noise_std < 0.0 {
            return Err(LmnError::invalid("input noise std must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(LmnError::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Epoch 0 is the model before any update.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
    /// A non-finite loss or parameter appeared during this epoch.
    Diverged { epoch: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the lowest monitored loss, or the final parameters
    /// when `keep_best` is off and training did not diverge.
    pub model: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.history.last().map_or(0, |r| r.epoch)
    }
}

/// Activated predictions for one sequence.
pub fn predict(model: &impl Recurrent, x: &Matrix, kind: LossKind) -> Result<Matrix> {
    let tr = model.forward(x)?;
    let mut out = Matrix::zeros(tr.y.rows(), tr.y.cols());
    for t in 0..tr.y.rows() {
        out.row_mut(t).copy_from_slice(&kind.activate(tr.y.row(t)));
    }
    Ok(out)
}

/// Summary metrics over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

pub fn evaluate(model: &ModelParams, dataset: &SequenceDataset, kind: LossKind) -> Result<Metrics> {
    let batch: Vec<&Sequence> = dataset.iter().collect();
    if batch.is_empty() {
        return Err(LmnError::invalid("cannot evaluate on an empty dataset"));
    }
    let mut metrics = Metrics {
        loss: batch_loss(model, &batch, kind)?,
        ..Metrics::default()
    };
    match kind {
        LossKind::Mse | LossKind::Nmse => {
            let mse = batch_loss(model, &batch, LossKind::Mse)?;
            metrics.mse = Some(mse);
            metrics.nmse = batch_loss(model, &batch, LossKind::Nmse).ok();
        }
        LossKind::Bce => {
            let (mut score, mut frames) = (0.0, 0usize);
            for s in &batch {
                let p = predict(model, &s.x, kind)?;
                let t = s.steps().expect("checked by batch_loss");
                score += frame_accuracy(&p, t)? * p.rows() as f64;
                frames += p.rows();
            }
            metrics.frame_accuracy = Some(score / frames.max(1) as f64);
        }
        LossKind::CrossEntropy => {
            let mut hits = 0usize;
            for s in &batch {
                let tr = model.forward(&s.x)?;
                let last = tr.y.row(tr.y.rows() - 1);
                let guess = last
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i);
                if guess == s.label() {
                    hits += 1;
                }
            }
            metrics.accuracy = Some(hits as f64 / batch.len() as f64);
        }
    }
    Ok(metrics)
}

fn params_finite(model: &ModelParams) -> bool {
    model.tensors().iter().all(|(_, t)| t.is_finite())
}

/// Shuffled minibatch Adam with early stopping on the validation loss (or
/// the clean training loss when no validation set is given).
pub fn train(
    model: ModelParams,
    train_set: &SequenceDataset,
    val_set: Option<&SequenceDataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(LmnError::invalid("training set is empty"));
    }
    let val_set = val_set.filter(|v| !v.is_empty());
    let kind = config.loss;
    let all: Vec<&Sequence> = train_set.iter().collect();
    let val: Option<Vec<&Sequence>> = val_set.map(|v| v.iter().collect());
    let measure = |m: &ModelParams| -> Result<EpochRecord> {
        Ok(EpochRecord {
            epoch: 0,
            train_loss: batch_loss(m, &all, kind)?,
            val_loss: val.as_ref().map(|v| batch_loss(m, v, kind)).transpose()?,
        })
    };
    let monitor = |r: &EpochRecord| r.val_loss.unwrap_or(r.train_loss);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = (config.input_noise_std > 0.0)
        .then(|| Normal::new(0.0, config.input_noise_std).expect("validated std"));
    let mut model = model;
    let mut adam = AdamState::new(&model);

    let first = measure(&model)?;
    if !monitor(&first).is_finite() {
        return Err(LmnError::NonFinite("initial loss".into()));
    }
    let mut history = vec![first];
    let mut best = (monitor(&first), 0usize, model.clone());
    let mut since_best = 0usize;
    let mut stop = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..all.len()).collect();

    'epochs: for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let noisy: Vec<Sequence>;
            let batch: Vec<&Sequence> = match &noise {
                Some(dist) => {
                    noisy = chunk
                        .iter()
                        .map(|&i| {
                            let s = all[i];
                            let mut x = s.x.clone();
                            x.as_mut_slice().iter_mut().for_each(|v| *v += dist.sample(&mut rng));
                            Sequence { x, target: s.target.clone(), split: s.split }
                        })
                        .collect();
                    noisy.iter().collect()
                }
                None => chunk.iter().map(|&i| all[i]).collect(),
            };
            let grads = match bptt_gradients(&model, &batch, kind) {
                Ok((_, g)) if g.is_finite() => g,
                Ok(_) | Err(LmnError::NonFinite(_)) => {
                    stop = StopReason::Diverged { epoch };
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            adam_step(&mut adam, &mut model, &grads, config);
            if !params_finite(&model) {
                stop = StopReason::Diverged { epoch };
                break 'epochs;
            }
        }
        let mut record = measure(&model)?;
        record.epoch = epoch;
        let score = monitor(&record);
        if !score.is_finite() {
            stop = StopReason::Diverged { epoch };
            break;
        }
        history.push(record);
        if score < best.0 {
            best = (score, epoch, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.patience.is_some_and(|p| since_best > p) {
            stop = StopReason::EarlyStopped;
            break;
        }
    }
    let diverged = matches!(stop, StopReason::Diverged { .. });
    Ok(TrainOutcome {
        model: if config.keep_best || diverged { best.2 } else { model },
        history,
        best_epoch: best.1,
        stop,
    })
}

/// All sequences as borrowed references, the form the gradient routines take.
pub fn as_batch(dataset: &SequenceDataset) -> Vec<&Sequence> {
    dataset.iter().collect()
}

/// True when every sequence carries the target kind `kind` needs.
pub fn targets_match(dataset: &SequenceDataset, kind: LossKind) -> bool {
    dataset.iter().all(|s| {
        matches!(
            (&s.target, kind),
            (Target::Label(_), LossKind::CrossEntropy)
                | (Target::Steps(_), LossKind::Mse | LossKind::Nmse | LossKind::Bce)
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArchSpec, Readout};
    use rand::Rng;

    fn linear_task(seed: u64) -> SequenceDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs = (0..8)
            .map(|_| {
                let x = Matrix::from_fn(10, 2, |_, _| rng.random_range(-1.0..1.0));
                let y = Matrix::from_fn(10, 1, |t, _| 0.5 * x[(t, 0)] - 0.3 * x[(t, 1)]);
                Sequence::new(x, Target::Steps(y))
            })
            .collect();
        SequenceDataset::new(seqs).unwrap()
    }

    fn small_lmn(seed: u64) -> ModelParams {
        ArchSpec::Lmn { n_x: 2, n_h: 4, n_m: 4, n_y: 1, readout: Readout::Memory }
            .build_random(&mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
    }

    #[test]
    fn loss_decreases_on_learnable_target() {
        let data = linear_task(1);
        let config = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 8,
            max_epochs: 5,
            patience: None,
            ..TrainConfig::default()
        };
        let out = train(small_lmn(2), &data, None, &config).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
        assert_eq!(losses.len(), 6);
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn same_seed_same_history() {
        let data = linear_task(3);
        let config = TrainConfig {
            max_epochs: 4,
            batch_size: 3,
            input_noise_std: 0.1,
            ..TrainConfig::default()
        };
        let a = train(small_lmn(4), &data, None, &config).unwrap();
        let b = train(small_lmn(4), &data, None, &config).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn zero_patience_stops_one_epoch_after_best() {
        let data = linear_task(5);
        let config = TrainConfig {
            learning_rate: 0.5,
            max_epochs: 200,
            patience: Some(0),
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = train(small_lmn(6), &data, None, &config).unwrap();
        if out.stop == StopReason::EarlyStopped {
            assert_eq!(out.epochs_run(), out.best_epoch + 1);
        }
        let best = out
            .history
            .iter()
            .map(|r| r.train_loss)
            .fold(f64::INFINITY, f64::min);
        let again = batch_loss(&out.model, &as_batch(&data), LossKind::Mse).unwrap();
        assert_eq!(again, best);
    }

    #[test]
    fn invalid_config_rejected() {
        let data = linear_task(7);
        let config = TrainConfig { beta1: 1.0, ..TrainConfig::default() };
        assert!(train(small_lmn(1), &data, None, &config).is_err());
    }
}
