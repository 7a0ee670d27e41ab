//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lmn_core::{Matrix, Sequence, SequenceDataset, Target};

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `n` sequences of length `len` with `n_x` inputs and `n_y` per-step targets.
pub fn regression_corpus(n: usize, len: usize, n_x: usize, n_y: usize, seed: u64) -> SequenceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs = (0..n)
        .map(|_| {
            let x = Matrix::from_fn(len, n_x, |_, _| rng.random_range(-1.0..1.0));
            let y = Matrix::from_fn(len, n_y, |_, _| rng.random_range(-1.0..1.0));
            Sequence::new(x, Target::Steps(y))
        })
        .collect();
    SequenceDataset::new(seqs).expect("consistent shapes")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
