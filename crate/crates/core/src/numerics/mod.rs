//! Dense matrix primitives and SVD backends.

mod matrix;
mod svd;

pub use matrix::{gemv_add, gemv_rows_add, gemv_t_add, outer_add, Matrix};
pub use svd::{numerical_rank, svd_incremental, svd_truncated, SvdResult};

pub(crate) use svd::IncrementalSvd;

use crate::error::{LmnError, Result};

/// Solves `min_W ‖F Wᵀ − Y‖² + λ‖W‖²` and returns `W` (`Y.cols × F.cols`).
pub fn ridge_solve(features: &Matrix, targets: &Matrix, lambda: f64) -> Result<Matrix> {
    if features.rows() != targets.rows() {
        return Err(LmnError::shape(
            "ridge_solve",
            format!("{} target rows", features.rows()),
            targets.rows(),
        ));
    }
    let f = features.to_nalgebra();
    let y = targets.to_nalgebra();
    let mut gram = f.transpose() * &f;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = f.transpose() * y;
    let chol = gram
        .cholesky()
        .ok_or_else(|| LmnError::NonFinite("ridge normal equations are not positive definite".into()))?;
    let w_t = chol.solve(&rhs);
    Ok(Matrix::from_nalgebra(&w_t.transpose()))
}
