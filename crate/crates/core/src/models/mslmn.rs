use rand::Rng;

use super::{
    check_input, check_shape, tanh_in_place, uniform_init, ForwardTrace, LmnParams, Readout,
    Recurrent,
};
use crate::error::{LmnError, Result};
use crate::numerics::{gemv_add, gemv_rows_add, Matrix};

/// Largest module index (1-based) updating at step `t ≥ 1`: the biggest
/// `i ≤ g` with `2^{i-1}` dividing `t`.
pub fn active_modules(t: usize, g: usize) -> usize {
    debug_assert!(t >= 1 && g >= 1);
    (t.trailing_zeros() as usize + 1).min(g)
}

/// Most modules a corpus with sequences up to `l_max` can exercise.
pub fn max_modules(l_max: usize) -> usize {
    if l_max == 0 {
        0
    } else {
        l_max.ilog2() as usize + 1
    }
}

/// Multiscale LMN: `g` memory modules of `n` units each, module `k`
/// (1-based) ticking every `2^{k-1}` steps.
///
/// The memory tensors act on the concatenation `m = [m_1; …; m_g]`.
/// `w_mm` is block upper triangular: module `k` reads modules `i ≥ k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MslmnParams {
    module_size: usize,
    modules: usize,
    pub w_xh: Matrix,
    pub w_mh: Matrix,
    pub w_hm: Matrix,
    pub w_mm: Matrix,
    pub w_my: Matrix,
    pub b_h: Matrix,
    pub b_m: Matrix,
    pub b_y: Matrix,
}

impl MslmnParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        module_size: usize,
        modules: usize,
        w_xh: Matrix,
        w_mh: Matrix,
        w_hm: Matrix,
        w_mm: Matrix,
        w_my: Matrix,
        b_h: Matrix,
        b_m: Matrix,
        b_y: Matrix,
    ) -> Result<Self> {
        if modules == 0 {
            return Err(LmnError::invalid("MS-LMN needs at least one module"));
        }
        let n_h = w_xh.rows();
        let total = module_size * modules;
        let n_y = w_my.rows();
        check_shape("w_mh", &w_mh, n_h, total)?;
        check_shape("w_hm", &w_hm, total, n_h)?;
        check_shape("w_mm", &w_mm, total, total)?;
        check_shape("w_my", &w_my, n_y, total)?;
        check_shape("b_h", &b_h, n_h, 1)?;
        check_shape("b_m", &b_m, total, 1)?;
        check_shape("b_y", &b_y, n_y, 1)?;
        let p = MslmnParams {
            module_size,
            modules,
            w_xh,
            w_mh,
            w_hm,
            w_mm,
            w_my,
            b_h,
            b_m,
            b_y,
        };
        p.check_structure()?;
        Ok(p)
    }

    pub fn random(
        n_x: usize,
        n_h: usize,
        module_size: usize,
        modules: usize,
        n_y: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if modules == 0 {
            return Err(LmnError::invalid("MS-LMN needs at least one module"));
        }
        let total = module_size * modules;
        let mut p = MslmnParams {
            module_size,
            modules,
            w_xh: uniform_init(n_h, n_x, n_x, rng),
            w_mh: uniform_init(n_h, total, total, rng),
            w_hm: uniform_init(total, n_h, n_h, rng),
            w_mm: uniform_init(total, total, total, rng),
            w_my: uniform_init(n_y, total, total, rng),
            b_h: uniform_init(n_h, 1, n_h, rng),
            b_m: uniform_init(total, 1, total, rng),
            b_y: uniform_init(n_y, 1, total, rng),
        };
        p.enforce_structure();
        Ok(p)
    }

    /// Single-module model sharing an LMN-m's weights.
    pub fn from_lmn(lmn: &LmnParams) -> Result<Self> {
        if lmn.readout != Readout::Memory {
            return Err(LmnError::invalid("only a memory readout maps to one MS-LMN module"));
        }
        MslmnParams::new(
            lmn.memory_size(),
            1,
            lmn.w_xh.clone(),
            lmn.w_mh.clone(),
            lmn.w_hm.clone(),
            lmn.w_mm.clone(),
            lmn.w_out.clone(),
            lmn.b_h.clone(),
            lmn.b_m.clone(),
            lmn.b_y.clone(),
        )
    }

    pub fn module_size(&self) -> usize {
        self.module_size
    }

    pub fn modules(&self) -> usize {
        self.modules
    }

    pub fn hidden_size(&self) -> usize {
        self.w_xh.rows()
    }

    /// Units across all modules.
    pub fn memory_size(&self) -> usize {
        self.module_size * self.modules
    }

    /// True for entries of `w_mm` that must stay zero.
    #[inline]
    pub fn is_structural_zero(&self, r: usize, c: usize) -> bool {
        self.module_size > 0 && c / self.module_size < r / self.module_size
    }

    pub fn structural_zero_count(&self) -> usize {
        self.modules * (self.modules - 1) / 2 * self.module_size * self.module_size
    }

    pub fn check_structure(&self) -> Result<()> {
        let total = self.memory_size();
        for r in 0..total {
            for c in 0..total {
                if self.is_structural_zero(r, c) && self.w_mm[(r, c)] != 0.0 {
                    return Err(LmnError::Invariant(format!(
                        "w_mm[{r}, {c}] lies below the block diagonal but is {}",
                        self.w_mm[(r, c)]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Direct per-module evaluation: every block is extracted and module
    /// updates are written out one at a time.
    pub fn forward_reference(&self, x: &Matrix) -> Result<ForwardTrace> {
        check_input("mslmn_forward_reference", self.input_size(), x)?;
        let (n, g, n_h) = (self.module_size, self.modules, self.hidden_size());
        let len = x.rows();
        let n_y = self.output_size();
        let hm: Vec<Matrix> = (0..g).map(|k| self.w_hm.block(k * n, 0, n, n_h)).collect();
        let mh: Vec<Matrix> = (0..g).map(|i| self.w_mh.block(0, i * n, n_h, n)).collect();
        let my: Vec<Matrix> = (0..g).map(|i| self.w_my.block(0, i * n, n_y, n)).collect();
        let mm: Vec<Vec<Matrix>> = (0..g)
            .map(|k| (k..g).map(|i| self.w_mm.block(k * n, i * n, n, n)).collect())
            .collect();
        let bm: Vec<&[f64]> = (0..g).map(|k| &self.b_m.as_slice()[k * n..(k + 1) * n]).collect();

        let mut state: Vec<Vec<f64>> = vec![vec![0.0; n]; g];
        let mut h = Matrix::zeros(len, n_h);
        let mut m = Matrix::zeros(len, n * g);
        let mut y = Matrix::zeros(len, n_y);
        let mut active = Vec::with_capacity(len);
        for t in 1..=len {
            let mut a = self.b_h.as_slice().to_vec();
            gemv_add(&mut a, &self.w_xh, x.row(t - 1));
            for i in 0..g {
                gemv_add(&mut a, &mh[i], &state[i]);
            }
            tanh_in_place(&mut a);
            let mut next = state.clone();
            for k in 0..g {
                if t % (1usize << k) != 0 {
                    continue;
                }
                let mut mk = bm[k].to_vec();
                gemv_add(&mut mk, &hm[k], &a);
                for (j, i) in (k..g).enumerate() {
                    gemv_add(&mut mk, &mm[k][j], &state[i]);
                }
                next[k] = mk;
            }
            state = next;
            let mut yt = self.b_y.as_slice().to_vec();
            for i in 0..g {
                gemv_add(&mut yt, &my[i], &state[i]);
            }
            h.row_mut(t - 1).copy_from_slice(&a);
            for k in 0..g {
                m.row_mut(t - 1)[k * n..(k + 1) * n].copy_from_slice(&state[k]);
            }
            y.row_mut(t - 1).copy_from_slice(&yt);
            active.push(active_modules(t, g));
        }
        Ok(ForwardTrace { h, m: Some(m), y, active: Some(active) })
    }

    /// Block evaluation on the concatenated memory: only the first
    /// `i_max · n` rows are recomputed, and each block row skips the
    /// columns below the diagonal.
    pub fn forward_block(&self, x: &Matrix) -> Result<ForwardTrace> {
        check_input("mslmn_forward_block", self.input_size(), x)?;
        let (n, g, n_h) = (self.module_size, self.modules, self.hidden_size());
        let total = n * g;
        let len = x.rows();
        let mut h = Matrix::zeros(len, n_h);
        let mut m = Matrix::zeros(len, total);
        let mut y = Matrix::zeros(len, self.output_size());
        let mut active = Vec::with_capacity(len);
        let mut prev = vec![0.0; total];
        for t in 1..=len {
            let mut a = self.b_h.as_slice().to_vec();
            gemv_add(&mut a, &self.w_xh, x.row(t - 1));
            gemv_add(&mut a, &self.w_mh, &prev);
            tanh_in_place(&mut a);
            let i_max = active_modules(t, g);
            let rows = i_max * n;
            let mut mt = prev.clone();
            mt[..rows].copy_from_slice(&self.b_m.as_slice()[..rows]);
            gemv_rows_add(&mut mt[..rows], &self.w_hm, &a, 0, rows, 0);
            for k in 0..i_max {
                let r0 = k * n;
                gemv_rows_add(&mut mt[r0..r0 + n], &self.w_mm, &prev, r0, r0 + n, r0);
            }
            let yt = y.row_mut(t - 1);
            yt.copy_from_slice(self.b_y.as_slice());
            gemv_add(yt, &self.w_my, &mt);
            h.row_mut(t - 1).copy_from_slice(&a);
            m.row_mut(t - 1).copy_from_slice(&mt);
            active.push(i_max);
            prev = mt;
        }
        Ok(ForwardTrace { h, m: Some(m), y, active: Some(active) })
    }
}

impl Recurrent for MslmnParams {
    fn input_size(&self) -> usize {
        self.w_xh.cols()
    }

    fn output_size(&self) -> usize {
        self.w_my.rows()
    }

    fn forward(&self, x: &Matrix) -> Result<ForwardTrace> {
        self.forward_block(x)
    }

    fn tensors(&self) -> Vec<(String, &Matrix)> {
        vec![
            ("w_xh".into(), &self.w_xh),
            ("w_mh".into(), &self.w_mh),
            ("w_hm".into(), &self.w_hm),
            ("w_mm".into(), &self.w_mm),
            ("w_my".into(), &self.w_my),
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
            &mut self.w_my,
            &mut self.b_h,
            &mut self.b_m,
            &mut self.b_y,
        ]
    }

    fn enforce_structure(&mut self) {
        let n = self.module_size;
        if n == 0 {
            return;
        }
        let total = self.memory_size();
        for r in n..total {
            let end = (r / n) * n;
            self.w_mm.row_mut(r)[..end].fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(rng: &mut impl Rng, len: usize, n_x: usize) -> Matrix {
        Matrix::from_fn(len, n_x, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn active_module_examples() {
        assert_eq!(active_modules(1, 5), 1);
        assert_eq!(active_modules(8, 4), 4);
        assert_eq!(active_modules(6, 4), 2);
        assert_eq!(active_modules(64, 3), 3);
        assert_eq!(max_modules(300), 9);
        assert_eq!(max_modules(1), 1);
    }

    #[test]
    fn single_module_is_an_lmn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lmn = LmnParams::random(2, 3, 4, 2, Readout::Memory, &mut rng);
        let ms = MslmnParams::from_lmn(&lmn).unwrap();
        let x = seq(&mut rng, 10, 2);
        let a = lmn.forward(&x).unwrap();
        assert!(a.max_abs_diff(&ms.forward_block(&x).unwrap()) <= 1e-14);
        assert!(a.max_abs_diff(&ms.forward_reference(&x).unwrap()) <= 1e-14);
    }

    #[test]
    fn block_matches_reference_and_hand_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MslmnParams::random(2, 3, 2, 3, 2, &mut rng).unwrap();
        let x = seq(&mut rng, 12, 2);
        let r = p.forward_reference(&x).unwrap();
        let b = p.forward_block(&x).unwrap();
        assert!(r.max_abs_diff(&b) <= 1e-12);
        // module 3 updates only at t = 4, 8, 12
        let m = b.m.unwrap();
        for t in 1..12 {
            let changed = m.row(t)[4..6] != m.row(t - 1)[4..6];
            assert_eq!(changed, (t + 1) % 4 == 0, "t = {}", t + 1);
        }
        assert_eq!(&m.row(0)[2..6], &[0.0; 4]);
    }

    #[test]
    fn odd_steps_hold_slow_modules_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MslmnParams::random(1, 2, 3, 4, 1, &mut rng).unwrap();
        let m = p.forward_block(&seq(&mut rng, 20, 1)).unwrap().m.unwrap();
        for t in (3..=20).step_by(2) {
            assert_eq!(m.row(t - 1)[3..], m.row(t - 2)[3..]);
        }
    }

    #[test]
    fn construction_rejects_lower_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = MslmnParams::random(1, 2, 2, 2, 1, &mut rng).unwrap();
        assert_eq!(p.w_mm[(2, 0)], 0.0);
        assert_eq!(p.w_mm[(3, 1)], 0.0);
        assert_ne!(p.w_mm[(0, 3)], 0.0);
        let mut w_mm = p.w_mm.clone();
        w_mm[(3, 0)] = 1e-3;
        let bad = MslmnParams::new(
            2, 2, p.w_xh, p.w_mh, p.w_hm, w_mm, p.w_my, p.b_h, p.b_m, p.b_y,
        );
        assert!(matches!(bad, Err(LmnError::Invariant(_))));
    }

    #[test]
    fn top_module_path_at_power_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = MslmnParams::random(2, 3, 2, 4, 1, &mut rng).unwrap();
        let x = seq(&mut rng, 8, 2);
        let tr = p.forward_block(&x).unwrap();
        assert_eq!(tr.active.as_ref().unwrap()[7], 4);
        assert!(tr.max_abs_diff(&p.forward_reference(&x).unwrap()) <= 1e-12);
    }
}
