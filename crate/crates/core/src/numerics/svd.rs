//! Truncated singular value decompositions.
//!
//! Factors are stored so that `input ≈ u · diag(s) · vᵀ`. Each singular pair
//! is sign-normalized: the largest-magnitude entry of every `u` column is
//! positive (first index wins ties).

use nalgebra::DMatrix;

use super::Matrix;
use crate::error::{LmnError, Result};

/// Rank-`r` factorization `u · diag(s) · vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Left factor, `rows × r`, orthonormal columns.
    pub u: Matrix,
    /// Singular values, non-increasing and non-negative.
    pub s: Vec<f64>,
    /// Right factor, `cols × r`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Rebuilds `u · diag(s) · vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (c, s) in self.s.iter().enumerate() {
                us[(r, c)] *= s;
            }
        }
        us.matmul(&self.v.transpose())
            .expect("factor shapes are consistent by construction")
    }
}

/// Top-`p` singular triplets of `m`.
pub fn svd_truncated(m: &Matrix, p: usize) -> Result<SvdResult> {
    let max_rank = m.rows().min(m.cols());
    if p == 0 || p > max_rank {
        return Err(LmnError::invalid(format!(
            "svd rank {p} outside 1..={max_rank} for a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    let (u, s, v) = dense_svd(&m.to_nalgebra());
    Ok(finish(u, s, v, p))
}

/// Numerical rank using the usual `max(rows, cols) · ε · σ_max` cutoff.
pub fn numerical_rank(m: &Matrix) -> usize {
    if m.is_empty() {
        return 0;
    }
    let (_, s, _) = dense_svd(&m.to_nalgebra());
    rank_of(&s, m.rows(), m.cols())
}

pub(crate) fn rank_of(s: &[f64], rows: usize, cols: usize) -> usize {
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
    s.iter().filter(|&&v| v > tol).count()
}

/// Rank-`p` factorization of the horizontal concatenation of `slices`,
/// folding in one slice at a time.
///
/// Only the running factors and the current slice are live during the
/// update. Each step projects the slice onto the current left basis,
/// orthogonalizes the residual by QR, and re-diagonalizes the small
/// `(r + a) × (r + a)` core before truncating back to rank `p`.
pub fn svd_incremental(slices: &[Matrix], p: usize) -> Result<SvdResult> {
    let mut it = slices.iter();
    let first = it
        .next()
        .ok_or_else(|| LmnError::invalid("svd_incremental needs at least one slice"))?;
    let rows = first.rows();
    if let Some(bad) = slices.iter().position(|s| s.rows() != rows) {
        return Err(LmnError::shape(
            "svd_incremental",
            format!("{rows} rows in every slice"),
            format!("slice {bad} with {} rows", slices[bad].rows()),
        ));
    }
    let total_cols: usize = slices.iter().map(|s| s.cols()).sum();
    let max_rank = rows.min(total_cols);
    if p == 0 || p > max_rank {
        return Err(LmnError::invalid(format!(
            "svd rank {p} outside 1..={max_rank} for {rows} rows and {total_cols} columns"
        )));
    }

    let mut state = IncrementalSvd::new(rows, p);
    for slice in slices {
        state.push(slice);
    }
    Ok(state.finish())
}

/// Running state of the column-wise incremental SVD.
pub(crate) struct IncrementalSvd {
    p: usize,
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
}

impl IncrementalSvd {
    pub(crate) fn new(rows: usize, p: usize) -> Self {
        IncrementalSvd {
            p,
            u: DMatrix::zeros(rows, 0),
            s: Vec::new(),
            v: DMatrix::zeros(0, 0),
        }
    }

    pub(crate) fn push(&mut self, slice: &Matrix) {
        let c = slice.to_nalgebra();
        let r = self.s.len();
        let a = c.ncols();
        let n = self.v.nrows();

        // Two rounds of Gram-Schmidt keep the residual orthogonal to `u`.
        let mut l = self.u.transpose() * &c;
        let mut h = &c - &self.u * &l;
        let l2 = self.u.transpose() * &h;
        h -= &self.u * &l2;
        l += l2;

        let qr = h.qr();
        let j = qr.q();
        let k = qr.r();
        let q = j.ncols();

        let mut core = DMatrix::zeros(r + q, r + a);
        for i in 0..r {
            core[(i, i)] = self.s[i];
        }
        core.view_mut((0, r), (r, a)).copy_from(&l);
        core.view_mut((r, r), (q, a)).copy_from(&k);

        let (cu, cs, cv) = dense_svd(&core);
        let keep = self.p.min(cs.len());

        let mut basis = DMatrix::zeros(self.u.nrows(), r + q);
        basis.view_mut((0, 0), (self.u.nrows(), r)).copy_from(&self.u);
        basis.view_mut((0, r), (self.u.nrows(), q)).copy_from(&j);
        self.u = basis * cu.columns(0, keep);

        let mut v_new = DMatrix::zeros(n + a, keep);
        if r > 0 {
            let top = &self.v * cv.view((0, 0), (r, keep));
            v_new.view_mut((0, 0), (n, keep)).copy_from(&top);
        }
        v_new
            .view_mut((n, 0), (a, keep))
            .copy_from(&cv.view((r, 0), (a, keep)));
        self.v = v_new;
        self.s = cs[..keep].to_vec();
    }

    pub(crate) fn finish(self) -> SvdResult {
        let k = self.s.len();
        finish(self.u, self.s, self.v, k)
    }
}

/// Thin SVD with singular values sorted in descending order.
fn dense_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return (
            DMatrix::zeros(m.nrows(), 0),
            Vec::new(),
            DMatrix::zeros(m.ncols(), 0),
        );
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v requested");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut u_sorted = DMatrix::zeros(u.nrows(), k);
    let mut v_sorted = DMatrix::zeros(v_t.ncols(), k);
    let mut s_sorted = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u.column(src));
        v_sorted.set_column(dst, &v_t.row(src).transpose());
        s_sorted.push(s[src].max(0.0));
    }
    (u_sorted, s_sorted, v_sorted)
}

fn finish(mut u: DMatrix<f64>, s: Vec<f64>, mut v: DMatrix<f64>, p: usize) -> SvdResult {
    for j in 0..p {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..u.nrows() {
            let a = u[(i, j)].abs();
            if a > best_abs + 1e-12 {
                best_abs = a;
                best = i;
            }
        }
        if u.nrows() > 0 && u[(best, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }
    SvdResult {
        u: Matrix::from_nalgebra(&u.columns(0, p).into_owned()),
        s: s[..p].to_vec(),
        v: Matrix::from_nalgebra(&v.columns(0, p).into_owned()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormality_error(m: &Matrix) -> f64 {
        let g = m.transpose().matmul(m).unwrap();
        g.max_abs_diff(&Matrix::identity(m.cols()))
    }

    /// Reconstruction through the eigendecomposition of the Gram matrix
    /// `MᵀM = V Λ Vᵀ`: `M = (M V) Vᵀ`, independent of the SVD path.
    fn gram_oracle_reconstruction(m: &Matrix) -> Matrix {
        let g = m.transpose().matmul(m).unwrap().to_nalgebra();
        let eig = g.symmetric_eigen();
        let v = Matrix::from_nalgebra(&eig.eigenvectors);
        m.matmul(&v).unwrap().matmul(&v.transpose()).unwrap()
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let svd = svd_truncated(&Matrix::identity(2), 2).unwrap();
        assert!((svd.s[0] - 1.0).abs() < 1e-14 && (svd.s[1] - 1.0).abs() < 1e-14);
        let uv = svd.u.matmul(&svd.v.transpose()).unwrap();
        assert!(uv.max_abs_diff(&Matrix::identity(2)) < 1e-14);
    }

    #[test]
    fn diagonal_rank_one() {
        let m = Matrix::new(2, 2, vec![3., 0., 0., 0.]).unwrap();
        let svd = svd_truncated(&m, 1).unwrap();
        assert!((svd.s[0] - 3.0).abs() < 1e-14);
        assert!(svd.reconstruct().max_abs_diff(&m) < 1e-14);
        // sign convention: largest |u| entry positive
        assert!(svd.u[(0, 0)] > 0.0);
    }

    #[test]
    fn full_rank_matches_gram_oracle() {
        let m = random(6, 4, 7);
        let svd = svd_truncated(&m, 4).unwrap();
        let oracle = gram_oracle_reconstruction(&m);
        assert!(oracle.max_abs_diff(&m) < 1e-10);
        assert!(svd.reconstruct().max_abs_diff(&m) < 1e-9);
        assert!(orthonormality_error(&svd.u) < 1e-10);
        assert!(orthonormality_error(&svd.v) < 1e-10);
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_bounds_are_checked() {
        let m = random(3, 5, 1);
        assert!(svd_truncated(&m, 0).is_err());
        assert!(svd_truncated(&m, 4).is_err());
        assert!(svd_incremental(&[], 1).is_err());
        assert!(svd_incremental(&[random(3, 2, 1), random(4, 2, 2)], 1).is_err());
    }

    #[test]
    fn rank_deficient_is_not_an_error() {
        let a = random(5, 2, 3);
        let m = a.matmul(&random(2, 4, 4)).unwrap();
        let svd = svd_truncated(&m, 4).unwrap();
        assert!(svd.s[2] < 1e-12 && svd.s[3] < 1e-12);
        assert_eq!(numerical_rank(&m), 2);
    }

    #[test]
    fn single_slice_matches_truncated() {
        let m = random(7, 5, 11);
        let a = svd_truncated(&m, 3).unwrap().reconstruct();
        let b = svd_incremental(std::slice::from_ref(&m), 3).unwrap().reconstruct();
        assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn exact_rank_in_three_slices() {
        let m = random(9, 3, 5).matmul(&random(3, 9, 6)).unwrap();
        let slices: Vec<Matrix> = (0..3).map(|i| m.block(0, 3 * i, 9, 3)).collect();
        let svd = svd_incremental(&slices, 3).unwrap();
        assert!(svd.reconstruct().max_abs_diff(&m) < 1e-8);
        assert!(orthonormality_error(&svd.u) < 1e-10);
        assert!(orthonormality_error(&svd.v) < 1e-10);
    }

    #[test]
    fn random_slices_within_ten_percent() {
        let m = random(20, 12, 21);
        let slices: Vec<Matrix> = (0..4).map(|i| m.block(0, 3 * i, 20, 3)).collect();
        let inc = svd_incremental(&slices, 6).unwrap();
        let exact = svd_truncated(&m, 6).unwrap();
        let e_inc = inc.reconstruct().sub(&m).unwrap().frobenius_norm();
        let e_exact = exact.reconstruct().sub(&m).unwrap().frobenius_norm();
        assert!(e_inc <= 1.1 * e_exact, "{e_inc} vs {e_exact}");
    }

    #[test]
    fn singular_values_are_prefix_stable() {
        let m = random(8, 6, 2);
        let a = svd_truncated(&m, 3).unwrap();
        let b = svd_truncated(&m, 4).unwrap();
        for i in 0..3 {
            assert!((a.s[i] - b.s[i]).abs() < 1e-10);
        }
    }
}
