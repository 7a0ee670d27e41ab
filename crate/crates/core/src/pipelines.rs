//! Memory-initialization training procedures.
//!
//! [`lmn_train`] trains an unrolled network, compresses its hidden-state
//! tape into an LMN memory with a LAES, and fine-tunes. [`mslmn_train`]
//! grows a multiscale memory one module at a time, initializing each new
//! module from a LAES over subsampled hidden traces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LmnError, Result};
use crate::harness::data::{Sequence, SequenceDataset, Target};
use crate::laes::{self, DecoderUnroll, LaesFit};
use crate::models::{
    max_modules, LmnParams, ModelParams, MslmnParams, Readout, Recurrent, UrnnParams,
};
use crate::numerics::{ridge_solve, Matrix};
use crate::training::{as_batch, batch_loss, train, EpochRecord, LossKind, TrainConfig};

/// Damping of the least-squares readout.
pub const READOUT_RIDGE: f64 = 1e-8;

/// Diagnostics of the URNN → LMN hand-over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmnInitReport {
    /// Mean squared LAES reconstruction error per hidden-trace element,
    /// decoding every prefix from its own memory state.
    pub laes_error: f64,
    pub init_train_loss: f64,
    pub init_val_loss: Option<f64>,
    pub urnn_train_loss: f64,
    pub urnn_val_loss: Option<f64>,
}

/// An LMN initialized from a URNN, with the LAES it was built from.
#[derive(Debug, Clone)]
pub struct UrnnInit {
    pub lmn: LmnParams,
    pub laes: LaesFit,
}

/// Hidden-state traces of `model` over `dataset`, one sequence per input
/// sequence.
pub fn hidden_traces(model: &impl Recurrent, dataset: &SequenceDataset) -> Result<SequenceDataset> {
    let traces = dataset
        .iter()
        .map(|s| Ok(Sequence::unlabeled(model.forward(&s.x)?.h)))
        .collect::<Result<Vec<_>>>()?;
    SequenceDataset::new(traces)
}

/// Builds the LMN whose memory is a LAES over the URNN's hidden states:
/// `W_hm = A`, `W_mm = B`, `W_mh = [W_hh_1 … W_hh_k]·U_k` and
/// `W_out = [W_hy_0 … W_hy_k]·U_{k+1}` with a memory readout. The URNN's
/// hidden and output biases carry over; the memory bias starts at zero.
pub fn init_from_urnn(urnn: &UrnnParams, dataset: &SequenceDataset, n_m: usize) -> Result<UrnnInit> {
    let traces = hidden_traces(urnn, dataset)?;
    let fit = laes::fit(&traces, n_m, false)?;
    let k = urnn.k();
    let n_h = urnn.hidden_size();
    let u_k1 = DecoderUnroll::new(&fit.params, k + 1).u_k;
    let u_k = u_k1.block(0, 0, k * n_h, n_m);

    let hh = urnn.w_hh.iter().skip(1).fold(urnn.w_hh[0].clone(), |acc, w| {
        acc.hcat(w).expect("equal row counts")
    });
    let hy = urnn.w_hy.iter().skip(1).fold(urnn.w_hy[0].clone(), |acc, w| {
        acc.hcat(w).expect("equal row counts")
    });
    let lmn = LmnParams::new(
        urnn.w_xh.clone(),
        hh.matmul(&u_k)?,
        fit.params.a.clone(),
        fit.params.b.clone(),
        hy.matmul(&u_k1)?,
        urnn.b_h.clone(),
        Matrix::zeros(n_m, 1),
        urnn.b_y.clone(),
        Readout::Memory,
    )?;
    Ok(UrnnInit { lmn, laes: fit })
}

#[derive(Debug, Clone)]
pub struct LmnTrainOutcome {
    pub model: LmnParams,
    pub report: LmnInitReport,
    pub urnn_history: Vec<EpochRecord>,
    pub history: Vec<EpochRecord>,
}

fn optional_loss(model: &ModelParams, set: Option<&SequenceDataset>, kind: LossKind) -> Result<Option<f64>> {
    set.filter(|v| !v.is_empty())
        .map(|v| batch_loss(model, &as_batch(v), kind))
        .transpose()
}

/// Three phases: train a URNN with tape depth `k`, compress its hidden
/// states into an `n_m`-unit LAES memory, then fine-tune the resulting LMN.
/// Both training phases use `config`.
pub fn lmn_train(
    train_set: &SequenceDataset,
    val_set: Option<&SequenceDataset>,
    n_h: usize,
    n_m: usize,
    k: usize,
    config: &TrainConfig,
) -> Result<LmnTrainOutcome> {
    let n_x = train_set.input_dim();
    let n_y = train_set.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let urnn = UrnnParams::random(n_x, n_h, n_y, k, &mut rng)?;
    let phase1 = train(ModelParams::Urnn(urnn), train_set, val_set, config)?;
    let ModelParams::Urnn(urnn) = phase1.model else {
        unreachable!("training preserves the architecture")
    };

    let init = init_from_urnn(&urnn, train_set, n_m)?;
    let traces = hidden_traces(&urnn, train_set)?;
    let errs = laes::prefix_errors(&init.laes.params, &traces)?;
    let elements: usize = traces.iter().map(|s| s.len() * (s.len() + 1) / 2 * n_h).sum();

    let kind = config.loss;
    let urnn_model = ModelParams::Urnn(urnn);
    let lmn_model = ModelParams::Lmn(init.lmn);
    let report = LmnInitReport {
        laes_error: errs.total_squared / elements.max(1) as f64,
        init_train_loss: batch_loss(&lmn_model, &as_batch(train_set), kind)?,
        init_val_loss: optional_loss(&lmn_model, val_set, kind)?,
        urnn_train_loss: batch_loss(&urnn_model, &as_batch(train_set), kind)?,
        urnn_val_loss: optional_loss(&urnn_model, val_set, kind)?,
    };

    let phase3 = train(lmn_model, train_set, val_set, config)?;
    let ModelParams::Lmn(model) = phase3.model else {
        unreachable!("training preserves the architecture")
    };
    Ok(LmnTrainOutcome {
        model,
        report,
        urnn_history: phase1.history,
        history: phase3.history,
    })
}

/// Least-squares map from memory states (rows) to targets:
/// `argmin_W ‖M Wᵀ − Y‖² + λ‖W‖²` with `λ = 1e-8`. Returns `W`,
/// `targets.cols × memory.cols`.
pub fn fit_linear_readout(memory: &Matrix, targets: &Matrix) -> Result<Matrix> {
    ridge_solve(memory, targets, READOUT_RIDGE)
}

/// Regression targets for the least-squares readout: raw values for
/// squared losses, clipped logits for sigmoid and softmax outputs.
fn readout_targets(kind: LossKind, values: &[f64]) -> Vec<f64> {
    match kind {
        LossKind::Mse | LossKind::Nmse => values.to_vec(),
        LossKind::Bce | LossKind::CrossEntropy => values
            .iter()
            .map(|&v| {
                let p = v.clamp(0.05, 0.95);
                (p / (1.0 - p)).ln()
            })
            .collect(),
    }
}

/// Keeps the rows of `h` at steps `t` (1-based) divisible by `stride`.
pub fn subsample(h: &Matrix, stride: usize) -> Matrix {
    let keep: Vec<usize> = (1..=h.rows()).filter(|t| t % stride == 0).collect();
    let mut out = Matrix::zeros(keep.len(), h.cols());
    for (i, t) in keep.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(h.row(t - 1));
    }
    out
}

/// Appends module `g + 1` (clock `2^g`) to a trained model.
///
/// The new module's input map and recurrence come from a LAES fit on the
/// hidden traces subsampled at that clock. If the traces support fewer
/// than `n` directions, the remaining units get small random input
/// weights instead. Connections into `h` from the new module and between
/// it and the old modules start at zero, so the hidden trajectory is
/// unchanged. The whole readout is then refit by least squares over the
/// enlarged memory.
pub fn add_module(
    model: &MslmnParams,
    dataset: &SequenceDataset,
    kind: LossKind,
    rng: &mut impl Rng,
) -> Result<MslmnParams> {
    let (n, g, n_h) = (model.module_size(), model.modules(), model.hidden_size());
    let stride = 1usize << g;
    let subs: Vec<Sequence> = dataset
        .iter()
        .map(|s| Ok(subsample(&model.forward_block(&s.x)?.h, stride)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|m| m.rows() > 0)
        .map(Sequence::unlabeled)
        .collect();
    if subs.is_empty() {
        return Err(LmnError::invalid(format!(
            "no sequence reaches step {stride}, so module {} would never update",
            g + 1
        )));
    }
    let subs = SequenceDataset::new(subs)?;
    let max_rank = subs.total_steps().min(subs.max_len() * n_h);
    let p = n.min(max_rank);
    let fit = laes::fit(&subs, p, false)?;

    let total = n * g;
    let grown = total + n;
    let mut w_mh = Matrix::zeros(n_h, grown);
    w_mh.set_block(0, 0, &model.w_mh);
    let mut w_hm = Matrix::zeros(grown, n_h);
    w_hm.set_block(0, 0, &model.w_hm);
    w_hm.set_block(total, 0, &fit.params.a);
    let bound = 0.1 / (n_h.max(1) as f64).sqrt();
    for r in total + p..grown {
        for c in 0..n_h {
            w_hm[(r, c)] = rng.random_range(-bound..bound);
        }
    }
    let mut w_mm = Matrix::zeros(grown, grown);
    w_mm.set_block(0, 0, &model.w_mm);
    w_mm.set_block(total, total, &fit.params.b);
    let mut b_m = Matrix::zeros(grown, 1);
    b_m.set_block(0, 0, &model.b_m);

    let n_y = model.output_size();
    let mut next = MslmnParams::new(
        n,
        g + 1,
        model.w_xh.clone(),
        w_mh,
        w_hm,
        w_mm,
        Matrix::zeros(n_y, grown),
        model.b_h.clone(),
        b_m,
        model.b_y.clone(),
    )?;
    let (w_my, b_y) = fit_readout_with_bias(&next, dataset, kind)?;
    next.w_my = w_my;
    next.b_y = b_y;
    Ok(next)
}

/// Least-squares readout (weights and bias) of an MS-LMN's memory.
/// Per-step targets use every step; class labels use the final step.
pub fn fit_readout_with_bias(
    model: &MslmnParams,
    dataset: &SequenceDataset,
    kind: LossKind,
) -> Result<(Matrix, Matrix)> {
    let grown = model.memory_size();
    let n_y = model.output_size();
    let mut feats: Vec<f64> = Vec::new();
    let mut targs: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for s in dataset.iter() {
        let m = model.forward_block(&s.x)?.m.expect("MS-LMN trace has memory");
        match &s.target {
            Target::Steps(y) => {
                for t in 0..s.len() {
                    feats.extend_from_slice(m.row(t));
                    feats.push(1.0);
                    targs.extend(readout_targets(kind, y.row(t)));
                    rows += 1;
                }
            }
            Target::Label(c) => {
                feats.extend_from_slice(m.row(s.len() - 1));
                feats.push(1.0);
                let onehot: Vec<f64> = (0..n_y).map(|j| if j == *c { 1.0 } else { 0.0 }).collect();
                targs.extend(readout_targets(kind, &onehot));
                rows += 1;
            }
            Target::None => return Err(LmnError::invalid("readout fit needs targets")),
        }
    }
    let features = Matrix::new(rows, grown + 1, feats)?;
    let targets = Matrix::new(rows, n_y, targs)?;
    let w = fit_linear_readout(&features, &targets)?;
    Ok((w.block(0, 0, n_y, grown), w.block(0, grown, n_y, 1)))
}

/// Stage layout of incremental MS-LMN training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncrementalSchedule {
    /// Fixed epoch budget of every stage but the last.
    pub epochs_per_stage: usize,
    /// Final module count `g`.
    pub modules: usize,
    /// Units per module.
    pub module_size: usize,
}

impl IncrementalSchedule {
    pub fn validate(&self, l_max: usize) -> Result<()> {
        if self.modules == 0 {
            return Err(LmnError::invalid("schedule needs at least one module"));
        }
        let cap = max_modules(l_max);
        if self.modules > cap {
            return Err(LmnError::invalid(format!(
                "{} modules exceed the {cap} clock rates sequences of length {l_max} can use",
                self.modules
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StageRecord {
    pub modules: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct MslmnTrainOutcome {
    pub model: MslmnParams,
    pub stages: Vec<StageRecord>,
}

/// Trains one module, then alternates [`add_module`] and end-to-end
/// training until `schedule.modules` exist. Intermediate stages run
/// `epochs_per_stage` epochs without early stopping; the final stage uses
/// `config` as given.
pub fn mslmn_train(
    train_set: &SequenceDataset,
    val_set: Option<&SequenceDataset>,
    n_h: usize,
    schedule: &IncrementalSchedule,
    config: &TrainConfig,
) -> Result<MslmnTrainOutcome> {
    schedule.validate(train_set.max_len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MslmnParams::random(
        train_set.input_dim(),
        n_h,
        schedule.module_size,
        1,
        train_set.output_dim(),
        &mut rng,
    )?;
    let stage_config = TrainConfig {
        max_epochs: schedule.epochs_per_stage,
        patience: None,
        keep_best: false,
        ..config.clone()
    };
    let mut stages = Vec::with_capacity(schedule.modules);
    for stage in 1..=schedule.modules {
        if stage > 1 {
            model = add_module(&model, train_set, config.loss, &mut rng)?;
        }
        let cfg = if stage == schedule.modules { config } else { &stage_config };
        let out = train(ModelParams::Mslmn(model), train_set, val_set, cfg)?;
        let ModelParams::Mslmn(m) = out.model else {
            unreachable!("training preserves the architecture")
        };
        model = m;
        stages.push(StageRecord { modules: stage, history: out.history });
    }
    Ok(MslmnTrainOutcome { model, stages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::numerical_rank;
    use crate::laes::build_data_matrix;

    fn inputs(seed: u64, n: usize, len: usize, n_x: usize) -> SequenceDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seqs = (0..n)
            .map(|_| {
                let x = Matrix::from_fn(len, n_x, |_, _| rng.random_range(-1.0..1.0));
                let y = Matrix::from_fn(len, 1, |t, _| x[(t, 0)] * 0.5);
                Sequence::new(x, Target::Steps(y))
            })
            .collect();
        SequenceDataset::new(seqs).unwrap()
    }

    #[test]
    fn exact_rank_init_reproduces_urnn() {
        let data = inputs(1, 2, 6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let urnn = UrnnParams::random(2, 3, 1, 3, &mut rng).unwrap();
        let traces = hidden_traces(&urnn, &data).unwrap();
        let rank = numerical_rank(&build_data_matrix(&traces).unwrap());
        let init = init_from_urnn(&urnn, &data, rank).unwrap();
        for s in data.iter() {
            let a = urnn.forward(&s.x).unwrap();
            let b = init.lmn.forward(&s.x).unwrap();
            assert!(a.y.max_abs_diff(&b.y) < 1e-8, "{}", a.y.max_abs_diff(&b.y));
            assert!(a.h.max_abs_diff(&b.h) < 1e-8);
        }
    }

    #[test]
    fn readout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Matrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let w = Matrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
        let y = m.matmul(&w.transpose()).unwrap();
        let fit = fit_linear_readout(&m, &y).unwrap();
        let resid = m.matmul(&fit.transpose()).unwrap().sub(&y).unwrap().max_abs();
        assert!(resid <= 1e-8);
        assert_eq!(fit_linear_readout(&m, &Matrix::zeros(30, 2)).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn subsample_keeps_clock_steps() {
        let h = Matrix::column(&[1., 2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(subsample(&h, 2).as_slice(), &[2., 4., 6., 8.]);
        assert_eq!(subsample(&h, 8).as_slice(), &[8.]);
        assert_eq!(subsample(&h, 16).rows(), 0);
    }

    #[test]
    fn add_module_keeps_old_blocks_and_hidden_path() {
        let data = inputs(4, 3, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let old = MslmnParams::random(2, 3, 2, 1, 1, &mut rng).unwrap();
        let new = add_module(&old, &data, LossKind::Mse, &mut rng).unwrap();
        assert_eq!(new.modules(), 2);
        assert_eq!(new.w_xh, old.w_xh);
        assert_eq!(new.b_h, old.b_h);
        assert_eq!(new.w_mh.block(0, 0, 3, 2), old.w_mh);
        assert_eq!(new.w_hm.block(0, 0, 2, 3), old.w_hm);
        assert_eq!(new.w_mm.block(0, 0, 2, 2), old.w_mm);
        assert_eq!(new.w_mm.block(0, 2, 2, 2).max_abs(), 0.0);
        new.check_structure().unwrap();
        for s in data.iter() {
            let a = old.forward_block(&s.x).unwrap();
            let b = new.forward_block(&s.x).unwrap();
            assert_eq!(a.h, b.h);
        }
    }

    #[test]
    fn schedule_caps_modules() {
        let s = IncrementalSchedule { epochs_per_stage: 1, modules: 4, module_size: 2 };
        assert!(s.validate(8).is_ok());
        assert!(s.validate(7).is_err());
    }

    #[test]
    fn single_stage_schedule_runs_once() {
        let data = inputs(6, 4, 8, 2);
        let schedule = IncrementalSchedule { epochs_per_stage: 2, modules: 1, module_size: 2 };
        let config = TrainConfig { max_epochs: 3, ..TrainConfig::default() };
        let out = mslmn_train(&data, None, 3, &schedule, &config).unwrap();
        assert_eq!(out.stages.len(), 1);
        assert_eq!(out.model.modules(), 1);
        let three = IncrementalSchedule { modules: 3, ..schedule };
        let out = mslmn_train(&data, None, 3, &three, &config).unwrap();
        assert_eq!(out.stages.len(), 3);
        assert_eq!(out.stages[0].history.len(), 3);
    }
}
