use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_input, check_shape, tanh_in_place, uniform_init, ForwardTrace, Recurrent, RnnParams,
};
use crate::error::Result;
use crate::numerics::{gemv_add, Matrix};

/// Which state feeds the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    /// `y^t = W_out m^t + b_y` (LMN-m).
    #[default]
    Memory,
    /// `y^t = W_out h^t + b_y` (LMN-h).
    Hidden,
}

/// Linear Memory Network.
///
/// ```text
/// h^t = tanh(W_xh x^t + W_mh m^{t-1} + b_h)
/// m^t = W_hm h^t + W_mm m^{t-1} + b_m
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct LmnParams {
    pub w_xh: Matrix,
    pub w_mh: Matrix,
    pub w_hm: Matrix,
    pub w_mm: Matrix,
    pub w_out: Matrix,
    pub b_h: Matrix,
    pub b_m: Matrix,
    pub b_y: Matrix,
    pub readout: Readout,
}

impl LmnParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        w_xh: Matrix,
        w_mh: Matrix,
        w_hm: Matrix,
        w_mm: Matrix,
        w_out: Matrix,
        b_h: Matrix,
        b_m: Matrix,
        b_y: Matrix,
        readout: Readout,
    ) -> Result<Self> {
        let n_h = w_xh.rows();
        let n_m = w_mm.rows();
        let n_y = w_out.rows();
        check_shape("w_mh", &w_mh, n_h, n_m)?;
        check_shape("w_hm", &w_hm, n_m, n_h)?;
        check_shape("w_mm", &w_mm, n_m, n_m)?;
        let read_dim = match readout {
            Readout::Memory => n_m,
            Readout::Hidden => n_h,
        };
        check_shape("w_out", &w_out, n_y, read_dim)?;
        check_shape("b_h", &b_h, n_h, 1)?;
        check_shape("b_m", &b_m, n_m, 1)?;
        check_shape("b_y", &b_y, n_y, 1)?;
        Ok(LmnParams { w_xh, w_mh, w_hm, w_mm, w_out, b_h, b_m, b_y, readout })
    }

    pub fn zeros(n_x: usize, n_h: usize, n_m: usize, n_y: usize, readout: Readout) -> Self {
        let read_dim = match readout {
            Readout::Memory => n_m,
            Readout::Hidden => n_h,
        };
        LmnParams {
            w_xh: Matrix::zeros(n_h, n_x),
            w_mh: Matrix::zeros(n_h, n_m),
            w_hm: Matrix::zeros(n_m, n_h),
            w_mm: Matrix::zeros(n_m, n_m),
            w_out: Matrix::zeros(n_y, read_dim),
            b_h: Matrix::zeros(n_h, 1),
            b_m: Matrix::zeros(n_m, 1),
            b_y: Matrix::zeros(n_y, 1),
            readout,
        }
    }

    pub fn random(
        n_x: usize,
        n_h: usize,
        n_m: usize,
        n_y: usize,
        readout: Readout,
        rng: &mut impl Rng,
    ) -> Self {
        let read_dim = match readout {
            Readout::Memory => n_m,
            Readout::Hidden => n_h,
        };
        LmnParams {
            w_xh: uniform_init(n_h, n_x, n_x, rng),
            w_mh: uniform_init(n_h, n_m, n_m, rng),
            w_hm: uniform_init(n_m, n_h, n_h, rng),
            w_mm: uniform_init(n_m, n_m, n_m, rng),
            w_out: uniform_init(n_y, read_dim, read_dim, rng),
            b_h: uniform_init(n_h, 1, n_h, rng),
            b_m: uniform_init(n_m, 1, n_m, rng),
            b_y: uniform_init(n_y, 1, read_dim, rng),
            readout,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_xh.rows()
    }

    pub fn memory_size(&self) -> usize {
        self.w_mm.rows()
    }
}

impl Recurrent for LmnParams {
    fn input_size(&self) -> usize {
        self.w_xh.cols()
    }

    fn output_size(&self) -> usize {
        self.w_out.rows()
    }

    fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        check_input("lmn_forward", self.input_size(), x)?;
        let (len, n_h, n_m) = (x.rows(), self.hidden_size(), self.memory_size());
        let mut h = Matrix::zeros(len, n_h);
        let mut m = Matrix::zeros(len, n_m);
        let mut y = Matrix::zeros(len, self.output_size());
        let mut prev = vec![0.0; n_m];
        for t in 0..len {
            let mut a = self.b_h.as_slice().to_vec();
            gemv_add(&mut a, &self.w_xh, x.row(t));
            gemv_add(&mut a, &self.w_mh, &prev);
            tanh_in_place(&mut a);
            let mut mt = self.b_m.as_slice().to_vec();
            gemv_add(&mut mt, &self.w_hm, &a);
            gemv_add(&mut mt, &self.w_mm, &prev);
            let yt = y.row_mut(t);
            yt.copy_from_slice(self.b_y.as_slice());
            match self.readout {
                Readout::Memory => gemv_add(yt, &self.w_out, &mt),
                Readout::Hidden => gemv_add(yt, &self.w_out, &a),
            }
            h.row_mut(t).copy_from_slice(&a);
            m.row_mut(t).copy_from_slice(&mt);
            prev = mt;
        }
        Ok(ForwardTrace { h, m: Some(m), y, active: None })
    }

    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w_xh".into(), &self.w_xh),
            ("w_mh".into(), &self.w_mh),
            ("w_hm".into(), &self.w_hm),
            ("w_mm".into(), &self.w_mm),
            ("w_out".into(), &self.w_out),
            ("b_h".into(), &self.b_h),
            ("b_m".into(), &self.b_m),
            ("b_y".into(), &self.b_y),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.w_xh,
            &mut self.w_mh,
            &mut self.w_hm,
            &mut self.w_mm,
            &mut self.w_out,
            &mut self.b_h,
            &mut self.b_m,
            &mut self.b_y,
        ]
    }
}

/// The LMN whose memory is a copy of the RNN's hidden state: `W_hm = I`,
/// `W_mm = 0`, `W_mh = W_hh`, with an `h` readout equal to the RNN's.
pub fn rnn_to_lmn(rnn: &RnnParams) -> LmnParams {
    let n_h = rnn.hidden_size();
    LmnParams {
        w_xh: rnn.w_xh.clone(),
        w_mh: rnn.w_hh.clone(),
        w_hm: Matrix::identity(n_h),
        w_mm: Matrix::zeros(n_h, n_h),
        w_out: rnn.w_hy.clone(),
        b_h: rnn.b_h.clone(),
        b_m: Matrix::zeros(n_h, 1),
        b_y: rnn.b_y.clone(),
        readout: Readout::Hidden,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut impl Rng, len: usize, n_x: usize) -> Matrix {
        Matrix::from_fn(len, n_x, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_memory_copies_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = LmnParams::random(2, 3, 3, 1, Readout::Memory, &mut rng);
        p.w_hm = Matrix::identity(3);
        p.w_mm = Matrix::zeros(3, 3);
        p.b_m = Matrix::zeros(3, 1);
        let tr = p.forward(&random_seq(&mut rng, 7, 2)).unwrap();
        assert_eq!(tr.m.unwrap(), tr.h);
    }

    #[test]
    fn zero_everything_stays_zero() {
        let p = LmnParams::zeros(2, 3, 4, 2, Readout::Memory);
        let tr = p.forward(&Matrix::zeros(5, 2)).unwrap();
        assert_eq!(tr.h.max_abs() + tr.m.unwrap().max_abs() + tr.y.max_abs(), 0.0);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for readout in [Readout::Memory, Readout::Hidden] {
            let p = LmnParams::random(2, 3, 4, 2, readout, &mut rng);
            let x = random_seq(&mut rng, 6, 2);
            let tr = p.forward(&x).unwrap();
            let mut mp = vec![0.0; 4];
            for t in 0..6 {
                let h: Vec<f64> = (0..3)
                    .map(|i| {
                        let mut a = p.b_h[(i, 0)];
                        a += (0..2).map(|j| p.w_xh[(i, j)] * x[(t, j)]).sum::<f64>();
                        a += (0..4).map(|j| p.w_mh[(i, j)] * mp[j]).sum::<f64>();
                        a.tanh()
                    })
                    .collect();
                let m: Vec<f64> = (0..4)
                    .map(|i| {
                        p.b_m[(i, 0)]
                            + (0..3).map(|j| p.w_hm[(i, j)] * h[j]).sum::<f64>()
                            + (0..4).map(|j| p.w_mm[(i, j)] * mp[j]).sum::<f64>()
                    })
                    .collect();
                let src = if readout == Readout::Memory { &m } else { &h };
                for o in 0..2 {
                    let v = p.b_y[(o, 0)]
                        + src.iter().enumerate().map(|(j, s)| p.w_out[(o, j)] * s).sum::<f64>();
                    assert!((tr.y[(t, o)] - v).abs() < 1e-13);
                }
                for i in 0..4 {
                    assert!((tr.m.as_ref().unwrap()[(t, i)] - m[i]).abs() < 1e-13);
                }
                mp = m;
            }
        }
    }

    #[test]
    fn embedded_rnn_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rnn = RnnParams::random(3, 5, 2, &mut rng);
        let lmn = rnn_to_lmn(&rnn);
        let x = random_seq(&mut rng, 12, 3);
        let a = rnn.forward(&x).unwrap();
        let b = lmn.forward(&x).unwrap();
        assert!(a.h.max_abs_diff(&b.h) <= 1e-14);
        assert!(a.y.max_abs_diff(&b.y) <= 1e-14);
    }

    #[test]
    fn readout_shape_checked() {
        let p = LmnParams::zeros(1, 2, 3, 1, Readout::Memory);
        let bad = LmnParams::new(
            p.w_xh, p.w_mh, p.w_hm, p.w_mm, p.w_out, p.b_h, p.b_m, p.b_y,
            Readout::Hidden,
        );
        assert!(bad.is_err());
    }
}
