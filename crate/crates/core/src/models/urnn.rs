use rand::Rng;

use super::{check_input, check_shape, tanh_in_place, uniform_init, ForwardTrace, Recurrent};
use crate::error::{LmnError, Result};
use crate::numerics::{gemv_add, Matrix};

/// Unrolled recurrent model with direct connections to the last `k` hidden
/// states. States before the first step read as zero.
///
/// ```text
/// h^t = tanh(W_xh x^t + Σ_{i=1..k} W_hh[i] h^{t-i} + b_h)
/// y^t = Σ_{i=0..k} W_hy[i] h^{t-i} + b_y
/// ```
///
/// `w_hh[i - 1]` holds `W_hh[i]`; `w_hy[i]` holds `W_hy[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnnParams {
    pub w_xh: Matrix,
    pub w_hh: Vec<Matrix>,
    pub w_hy: Vec<Matrix>,
    pub b_h: Matrix,
    pub b_y: Matrix,
}

impl UrnnParams {
    pub fn new(
        w_xh: Matrix,
        w_hh: Vec<Matrix>,
        w_hy: Vec<Matrix>,
        b_h: Matrix,
        b_y: Matrix,
    ) -> Result<Self> {
        let k = w_hh.len();
        if k == 0 {
            return Err(LmnError::invalid("URNN needs at least one recurrent matrix"));
        }
        if w_hy.len() != k + 1 {
            return Err(LmnError::shape(
                "URNN output matrices",
                format!("{} (k + 1)", k + 1),
                w_hy.len(),
            ));
        }
        let n_h = w_xh.rows();
        let n_y = b_y.rows();
        for w in &w_hh {
            check_shape("w_hh", w, n_h, n_h)?;
        }
        for w in &w_hy {
            check_shape("w_hy", w, n_y, n_h)?;
        }
        check_shape("b_h", &b_h, n_h, 1)?;
        check_shape("b_y", &b_y, n_y, 1)?;
        Ok(UrnnParams { w_xh, w_hh, w_hy, b_h, b_y })
    }

    pub fn random(n_x: usize, n_h: usize, n_y: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        if k == 0 {
            return Err(LmnError::invalid("URNN needs k >= 1"));
        }
        let fan = n_h * k;
        let w_xh = uniform_init(n_h, n_x, n_x, rng);
        let w_hh = (0..k).map(|_| uniform_init(n_h, n_h, fan, rng)).collect();
        let w_hy = (0..=k).map(|_| uniform_init(n_y, n_h, fan + n_h, rng)).collect();
        Ok(UrnnParams {
            w_xh,
            w_hh,
            w_hy,
            b_h: uniform_init(n_h, 1, n_h, rng),
            b_y: uniform_init(n_y, 1, n_h, rng),
        })
    }

    pub fn k(&self) -> usize {
        self.w_hh.len()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_xh.rows()
    }
}

impl Recurrent for UrnnParams {
    fn input_size(&self) -> usize {
        self.w_xh.cols()
    }

    fn output_size(&self) -> usize {
        self.b_y.rows()
    }

    fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        check_input("urnn_forward", self.input_size(), x)?;
        let (len, n_h, k) = (x.rows(), self.hidden_size(), self.k());
        let mut h = Matrix::zeros(len, n_h);
        let mut y = Matrix::zeros(len, self.output_size());
        for t in 0..len {
            let mut a = self.b_h.as_slice().to_vec();
            gemv_add(&mut a, &self.w_xh, x.row(t));
            for i in 1..=k.min(t) {
                gemv_add(&mut a, &self.w_hh[i - 1], h.row(t - i));
            }
            tanh_in_place(&mut a);
            h.row_mut(t).copy_from_slice(&a);
            let mut yt = self.b_y.as_slice().to_vec();
            for i in 0..=k.min(t) {
                gemv_add(&mut yt, &self.w_hy[i], h.row(t - i));
            }
            y.row_mut(t).copy_from_slice(&yt);
        }
        Ok(ForwardTrace { h, m: None, y, active: None })
    }

    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("w_xh".to_string(), &self.w_xh)];
        for (i, w) in self.w_hh.iter().enumerate() {
            out.push((format!("w_hh_{}", i + 1), w));
        }
        for (i, w) in self.w_hy.iter().enumerate() {
            out.push((format!("w_hy_{i}"), w));
        }
        out.push(("b_h".into(), &self.b_h));
        out.push(("b_y".into(), &self.b_y));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.w_xh];
        out.extend(self.w_hh.iter_mut());
        out.extend(self.w_hy.iter_mut());
        out.push(&mut self.b_h);
        out.push(&mut self.b_y);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::RnnParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_one_is_an_rnn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut u = UrnnParams::random(2, 4, 2, 1, &mut rng).unwrap();
        u.w_hy[1] = Matrix::zeros(2, 4);
        let rnn = RnnParams::new(
            u.w_xh.clone(),
            u.w_hh[0].clone(),
            u.w_hy[0].clone(),
            u.b_h.clone(),
            u.b_y.clone(),
        )
        .unwrap();
        let x = Matrix::from_fn(9, 2, |_, _| rng.random_range(-1.0..1.0));
        let a = u.forward(&x).unwrap();
        let b = rnn.forward(&x).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-14);
    }

    #[test]
    fn no_recurrence_is_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut u = UrnnParams::random(1, 2, 1, 3, &mut rng).unwrap();
        for w in &mut u.w_hh {
            w.fill(0.0);
        }
        let x = Matrix::column(&[0.5, -0.2, 0.9, 0.1]);
        let tr = u.forward(&x).unwrap();
        for t in 0..4 {
            for i in 0..2 {
                let want = (u.w_xh[(i, 0)] * x[(t, 0)] + u.b_h[(i, 0)]).tanh();
                assert_eq!(tr.h[(t, i)], want);
            }
        }
    }

    #[test]
    fn matches_naive_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n_x, n_h, n_y, k, len) = (2, 3, 2, 3, 7);
        let u = UrnnParams::random(n_x, n_h, n_y, k, &mut rng).unwrap();
        let x = Matrix::from_fn(len, n_x, |_, _| rng.random_range(-1.0..1.0));
        let tr = u.forward(&x).unwrap();
        let mut tape: Vec<Vec<f64>> = Vec::new();
        let past = |tape: &Vec<Vec<f64>>, t: usize, i: usize| -> Vec<f64> {
            if t >= i { tape[t - i].clone() } else { vec![0.0; n_h] }
        };
        for t in 0..len {
            let h: Vec<f64> = (0..n_h)
                .map(|r| {
                    let mut a = u.b_h[(r, 0)];
                    for c in 0..n_x {
                        a += u.w_xh[(r, c)] * x[(t, c)];
                    }
                    for i in 1..=k {
                        let hp = past(&tape, t, i);
                        for c in 0..n_h {
                            a += u.w_hh[i - 1][(r, c)] * hp[c];
                        }
                    }
                    a.tanh()
                })
                .collect();
            tape.push(h);
            for o in 0..n_y {
                let mut v = u.b_y[(o, 0)];
                for i in 0..=k {
                    let hp = past(&tape, t, i);
                    for c in 0..n_h {
                        v += u.w_hy[i][(o, c)] * hp[c];
                    }
                }
                assert!((tr.y[(t, o)] - v).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn wrong_tape_lengths_rejected() {
        let z = || Matrix::zeros(2, 2);
        let b = || Matrix::zeros(2, 1);
        assert!(UrnnParams::new(z(), vec![z()], vec![z()], b(), b()).is_err());
        assert!(UrnnParams::new(z(), vec![], vec![z()], b(), b()).is_err());
        assert!(UrnnParams::new(z(), vec![z()], vec![z(), z()], b(), b()).is_ok());
    }
}
