use rand::Rng;

use super::{check_input, check_shape, tanh_in_place, uniform_init, ForwardTrace, Recurrent};
use crate::error::Result;
use crate::numerics::{gemv_add, Matrix};

/// Elman network: `h^t = tanh(W_xh x^t + W_hh h^{t-1} + b_h)`, `y^t = W_hy h^t + b_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    pub w_xh: Matrix,
    pub w_hh: Matrix,
    pub w_hy: Matrix,
    pub b_h: Matrix,
    pub b_y: Matrix,
}

impl RnnParams {
    pub fn new(w_xh: Matrix, w_hh: Matrix, w_hy: Matrix, b_h: Matrix, b_y: Matrix) -> Result<Self> {
        let n_h = w_xh.rows();
        let n_y = w_hy.rows();
        check_shape("w_hh", &w_hh, n_h, n_h)?;
        check_shape("w_hy", &w_hy, n_y, n_h)?;
        check_shape("b_h", &b_h, n_h, 1)?;
        check_shape("b_y", &b_y, n_y, 1)?;
        Ok(RnnParams { w_xh, w_hh, w_hy, b_h, b_y })
    }

    pub fn zeros(n_x: usize, n_h: usize, n_y: usize) -> Self {
        RnnParams {
            w_xh: Matrix::zeros(n_h, n_x),
            w_hh: Matrix::zeros(n_h, n_h),
            w_hy: Matrix::zeros(n_y, n_h),
            b_h: Matrix::zeros(n_h, 1),
            b_y: Matrix::zeros(n_y, 1),
        }
    }

    pub fn random(n_x: usize, n_h: usize, n_y: usize, rng: &mut impl Rng) -> Self {
        RnnParams {
            w_xh: uniform_init(n_h, n_x, n_x, rng),
            w_hh: uniform_init(n_h, n_h, n_h, rng),
            w_hy: uniform_init(n_y, n_h, n_h, rng),
            b_h: uniform_init(n_h, 1, n_h, rng),
            b_y: uniform_init(n_y, 1, n_h, rng),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.rows()
    }
}

impl Recurrent for RnnParams {
    fn input_size(&self) -> usize {
        self.w_xh.cols()
    }

    fn output_size(&self) -> usize {
        self.w_hy.rows()
    }

    fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        check_input("rnn_forward", self.input_size(), x)?;
        let (len, n_h, n_y) = (x.rows(), self.hidden_size(), self.output_size());
        let mut h = Matrix::zeros(len, n_h);
        let mut y = Matrix::zeros(len, n_y);
        let mut prev = vec![0.0; n_h];
        for t in 0..len {
            let mut a = self.b_h.as_slice().to_vec();
            gemv_add(&mut a, &self.w_xh, x.row(t));
            gemv_add(&mut a, &self.w_hh, &prev);
            tanh_in_place(&mut a);
            let yt = y.row_mut(t);
            yt.copy_from_slice(self.b_y.as_slice());
            gemv_add(yt, &self.w_hy, &a);
            h.row_mut(t).copy_from_slice(&a);
            prev = a;
        }
        Ok(ForwardTrace { h, m: None, y, active: None })
    }

    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w_xh".into(), &self.w_xh),
            ("w_hh".into(), &self.w_hh),
            ("w_hy".into(), &self.w_hy),
            ("b_h".into(), &self.b_h),
            ("b_y".into(), &self.b_y),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_xh, &mut self.w_hh, &mut self.w_hy, &mut self.b_h, &mut self.b_y]
    }
}
