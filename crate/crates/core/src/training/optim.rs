use crate::models::Recurrent;
use crate::numerics::Matrix;

use super::{GradientSet, TrainConfig};

/// Adam moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &impl Recurrent) -> Self {
        let zeros: Vec<Matrix> = model
            .tensors()
            .into_iter()
            .map(|(_, t)| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with L2 decay folded into the gradient.
pub fn adam_step(
    state: &mut AdamState,
    model: &mut impl Recurrent,
    grads: &GradientSet,
    config: &TrainConfig,
) {
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let lr = config.learning_rate;
    let decay = config.l2_decay;
    for (i, param) in model.tensors_mut().into_iter().enumerate() {
        let g = grads.tensors[i].as_slice();
        let m = state.m[i].as_mut_slice();
        let v = state.v[i].as_mut_slice();
        for (j, w) in param.as_mut_slice().iter_mut().enumerate() {
            let gj = g[j] + decay * *w;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= lr * mh / (vh.sqrt() + config.epsilon);
        }
    }
    model.enforce_structure();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::RnnParams;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut model = RnnParams::zeros(1, 1, 1);
        model.w_xh = Matrix::column(&[0.7]);
        let mut grads = GradientSet::zeros_like(&model);
        grads.tensors[0] = Matrix::column(&[-3.0]);
        let config = TrainConfig::default();
        let mut state = AdamState::new(&model);
        adam_step(&mut state, &mut model, &grads, &config);
        let moved = model.w_xh[(0, 0)] - 0.7;
        assert!((moved - config.learning_rate).abs() < 1e-9);
        assert_eq!(model.w_hh[(0, 0)], 0.0);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut model = RnnParams::zeros(2, 2, 1);
        model.w_hh = Matrix::identity(2);
        let before = model.clone();
        let grads = GradientSet::zeros_like(&model);
        let mut state = AdamState::new(&model);
        adam_step(&mut state, &mut model, &grads, &TrainConfig::default());
        assert_eq!(model, before);
    }
}
