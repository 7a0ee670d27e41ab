//! Linear autoencoder for sequences.
//!
//! The encoder is the linear recurrence `m^t = A x^t + B m^{t-1}` with
//! `m^0 = 0`; the decoder maps `m^t` back to `(x^t, m^{t-1})` through
//! `[Aᵀ; Bᵀ]`. Training is closed-form: the right singular vectors of the
//! data matrix Ξ (one row per timestep holding the reversed prefix
//! `[x^t, x^{t-1}, …, x^1, 0, …]`) give the optimal encoder.

use serde::{Deserialize, Serialize};

use crate::error::{LmnError, Result};
use crate::harness::data::SequenceDataset;
use crate::numerics::{gemv_add, gemv_t_add, svd_truncated, IncrementalSvd, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaesParams {
    /// Input map, `p × a`.
    pub a: Matrix,
    /// Memory recurrence, `p × p`.
    pub b: Matrix,
}

impl LaesParams {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if b.rows() != a.rows() || b.cols() != a.rows() {
            return Err(LmnError::shape(
                "LaesParams",
                format!("{0}x{0} recurrence", a.rows()),
                format!("{}x{}", b.rows(), b.cols()),
            ));
        }
        Ok(LaesParams { a, b })
    }

    /// Memory size `p`.
    pub fn memory_size(&self) -> usize {
        self.a.rows()
    }

    /// Element size `a`.
    pub fn input_size(&self) -> usize {
        self.a.cols()
    }

    /// Memory states `m^1..m^l`, one row per timestep.
    pub fn encode(&self, seq: &Matrix) -> Result<Matrix> {
        if seq.cols() != self.input_size() {
            return Err(LmnError::shape("LAES encode", self.input_size(), seq.cols()));
        }
        let p = self.memory_size();
        let mut out = Matrix::zeros(seq.rows(), p);
        let mut prev = vec![0.0; p];
        for t in 0..seq.rows() {
            let mut m = vec![0.0; p];
            gemv_add(&mut m, &self.a, seq.row(t));
            gemv_add(&mut m, &self.b, &prev);
            out.row_mut(t).copy_from_slice(&m);
            prev = m;
        }
        Ok(out)
    }

    /// One decoder step: `(Aᵀ m, Bᵀ m)`.
    pub fn decode_step(&self, m: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if m.len() != self.memory_size() {
            return Err(LmnError::shape("LAES decode", self.memory_size(), m.len()));
        }
        let mut x = vec![0.0; self.input_size()];
        gemv_t_add(&mut x, &self.a, m);
        let mut prev = vec![0.0; self.memory_size()];
        gemv_t_add(&mut prev, &self.b, m);
        Ok((x, prev))
    }

    /// Reconstructs `x̃^t, x̃^{t-1}, …, x̃^{t-k+1}` (one per row) from `m^t`.
    pub fn decode_sequence(&self, m: &[f64], k: usize) -> Result<Matrix> {
        if k == 0 {
            return Err(LmnError::invalid("decode depth must be at least 1"));
        }
        let mut out = Matrix::zeros(k, self.input_size());
        let mut state = m.to_vec();
        for j in 0..k {
            let (x, prev) = self.decode_step(&state)?;
            out.row_mut(j).copy_from_slice(&x);
            state = prev;
        }
        Ok(out)
    }
}

/// Stacked decoder `U_k = [Aᵀ; AᵀBᵀ; …; Aᵀ(B^{k-1})ᵀ]`, `(k·a) × p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderUnroll {
    pub u_k: Matrix,
    pub k: usize,
}

impl DecoderUnroll {
    pub fn new(params: &LaesParams, k: usize) -> Self {
        let a = params.input_size();
        let p = params.memory_size();
        let mut u_k = Matrix::zeros(k * a, p);
        let b_t = params.b.transpose();
        let mut block = params.a.transpose();
        for j in 0..k {
            u_k.set_block(j * a, 0, &block);
            if j + 1 < k {
                block = block.matmul(&b_t).expect("square recurrence");
            }
        }
        DecoderUnroll { u_k, k }
    }

    /// `U_k · m`, one decoded element per row.
    pub fn decode(&self, m: &[f64]) -> Result<Matrix> {
        let flat = self.u_k.matvec(m)?;
        let a = self.u_k.rows() / self.k.max(1);
        Matrix::new(self.k, a, flat)
    }
}

/// Result of a closed-form LAES fit.
#[derive(Debug, Clone)]
pub struct LaesFit {
    pub params: LaesParams,
    /// Retained singular values of Ξ.
    pub singular_values: Vec<f64>,
    /// `‖Ξ‖²_F − Σ σ_i²`: squared Frobenius energy lost by truncation.
    pub discarded_energy: f64,
}

fn check_corpus(dataset: &SequenceDataset) -> Result<(usize, usize, usize)> {
    if dataset.is_empty() {
        return Err(LmnError::invalid("LAES needs a non-empty corpus"));
    }
    let a = dataset.input_dim();
    if a == 0 {
        return Err(LmnError::invalid("LAES needs elements of size at least 1"));
    }
    Ok((dataset.total_steps(), dataset.max_len(), a))
}

/// Data matrix Ξ: one row per timestep of every sequence (sequences stacked
/// in order), columns `l_max · a`, shorter sequences zero-padded on the right.
pub fn build_data_matrix(dataset: &SequenceDataset) -> Result<Matrix> {
    let (rows, l_max, a) = check_corpus(dataset)?;
    let mut xi = Matrix::zeros(rows, l_max * a);
    let mut r = 0;
    for seq in dataset.iter() {
        for t in 0..seq.len() {
            let row = xi.row_mut(r);
            for lag in 0..=t {
                row[lag * a..(lag + 1) * a].copy_from_slice(seq.x.row(t - lag));
            }
            r += 1;
        }
    }
    Ok(xi)
}

/// Column block `lag` of Ξ (`rows × a`), built without materializing Ξ.
pub fn data_matrix_slice(dataset: &SequenceDataset, lag: usize) -> Result<Matrix> {
    let (rows, _, a) = check_corpus(dataset)?;
    let mut slice = Matrix::zeros(rows, a);
    let mut r = 0;
    for seq in dataset.iter() {
        for t in 0..seq.len() {
            if t >= lag {
                slice.row_mut(r).copy_from_slice(seq.x.row(t - lag));
            }
            r += 1;
        }
    }
    Ok(slice)
}

/// Closed-form LAES with memory size `p`.
///
/// With `streaming`, Ξ is decomposed one `rows × a` column slice at a time
/// and never materialized.
pub fn fit(dataset: &SequenceDataset, p: usize, streaming: bool) -> Result<LaesFit> {
    let (rows, l_max, a) = check_corpus(dataset)?;
    let max_rank = rows.min(l_max * a);
    if p == 0 || p > max_rank {
        return Err(LmnError::invalid(format!(
            "memory size {p} outside 1..={max_rank} for a {rows}x{} data matrix",
            l_max * a
        )));
    }

    let total_energy: f64 = dataset
        .iter()
        .map(|s| {
            // row t holds the whole prefix, so element x^j appears len - j times
            let l = s.len();
            (0..l)
                .map(|j| (l - j) as f64 * s.x.row(j).iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
        })
        .sum();

    let svd = if streaming {
        let mut inc = IncrementalSvd::new(rows, p);
        for lag in 0..l_max {
            inc.push(&data_matrix_slice(dataset, lag)?);
        }
        inc.finish()
    } else {
        svd_truncated(&build_data_matrix(dataset)?, p)?
    };

    // The row-space factor plays the role of Ω: its first `a` rows give Aᵀ
    // and the one-block shift R gives B = Ωᵀ R Ω.
    let omega = &svd.v;
    let k = omega.cols();
    let n = omega.rows();
    let mut enc_a = Matrix::zeros(p, a);
    let mut enc_b = Matrix::zeros(p, p);
    for i in 0..k {
        for c in 0..a {
            enc_a[(i, c)] = omega[(c, i)];
        }
    }
    for r in 0..n - a {
        let shifted = omega.row(r + a);
        let base = omega.row(r);
        for i in 0..k {
            let si = shifted[i];
            if si == 0.0 {
                continue;
            }
            for j in 0..k {
                enc_b[(i, j)] += si * base[j];
            }
        }
    }

    let kept: f64 = svd.s.iter().map(|s| s * s).sum();
    Ok(LaesFit {
        params: LaesParams::new(enc_a, enc_b)?,
        singular_values: svd.s,
        discarded_energy: (total_energy - kept).max(0.0),
    })
}

/// Mean squared element error of full-sequence decoding, bucketed by
/// distance into the past.
///
/// Each sequence is encoded to its final state, decoded back to `x^1`, and
/// bucket `j` averages the error of the element `j` steps before the end.
pub fn reconstruction_error_profile(
    params: &LaesParams,
    dataset: &SequenceDataset,
) -> Result<Vec<f64>> {
    let l_max = dataset.max_len();
    let mut sums = vec![0.0; l_max];
    let mut counts = vec![0usize; l_max];
    for seq in dataset.iter() {
        let states = params.encode(&seq.x)?;
        let l = seq.len();
        let decoded = params.decode_sequence(states.row(l - 1), l)?;
        for j in 0..l {
            let target = seq.x.row(l - 1 - j);
            for (d, x) in decoded.row(j).iter().zip(target) {
                sums[j] += (d - x) * (d - x);
            }
            counts[j] += target.len();
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect())
}

/// Reconstruction errors of decoding every prefix from its own memory state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefixErrors {
    /// Σ over sequences, timesteps t and decoded elements of squared error.
    pub total_squared: f64,
    /// Largest absolute element error.
    pub max_abs: f64,
}

/// Encodes each sequence, decodes every `m^t` back to `x^1`, and compares
/// against the original prefix.
pub fn prefix_errors(params: &LaesParams, dataset: &SequenceDataset) -> Result<PrefixErrors> {
    let mut total = 0.0;
    let mut max_abs: f64 = 0.0;
    for seq in dataset.iter() {
        let states = params.encode(&seq.x)?;
        for t in 0..seq.len() {
            let decoded = params.decode_sequence(states.row(t), t + 1)?;
            for j in 0..=t {
                for (d, x) in decoded.row(j).iter().zip(seq.x.row(t - j)) {
                    let e = d - x;
                    total += e * e;
                    max_abs = max_abs.max(e.abs());
                }
            }
        }
    }
    Ok(PrefixErrors {
        total_squared: total,
        max_abs,
    })
}
