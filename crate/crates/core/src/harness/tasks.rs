//! Seeded synthetic benchmarks.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::data::{Sequence, SequenceDataset, Split, Target};
use crate::error::{LmnError, Result};
use crate::numerics::Matrix;

/// Frames per motif in the piano-roll task.
pub const MOTIF_LEN: usize = 8;

/// Single zero-input sequence whose target is a pseudo-audio waveform: one
/// slow sinusoid (period 60 to 150 steps), four faster ones with periods
/// between 6 and 60 steps and amplitudes shrinking with frequency, plus a
/// little noise. Rescaled to span exactly [-1, 1].
pub fn gen_sequence_task(seed: u64, length: usize) -> Result<SequenceDataset> {
    if length == 0 {
        return Err(LmnError::invalid("length must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut components = vec![(rng.random_range(60.0..150.0), 1.0, rng.random_range(0.0..2.0 * PI))];
    for _ in 0..4 {
        let period: f64 = (rng.random_range(6f64.ln()..60f64.ln())).exp();
        let amp = 0.7 * (period / 60.0).sqrt();
        components.push((period, amp, rng.random_range(0.0..2.0 * PI)));
    }
    let noise = Normal::new(0.0, 0.02).expect("valid std");
    let mut y: Vec<f64> = (0..length)
        .map(|t| {
            let t = t as f64;
            components
                .iter()
                .map(|&(p, a, ph)| a * (2.0 * PI * t / p + ph).sin())
                .sum::<f64>()
                + noise.sample(&mut rng)
        })
        .collect();
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        for v in &mut y {
            *v = 2.0 * (*v - lo) / (hi - lo) - 1.0;
        }
        // pin the extremes exactly
        let imin = argmin(&y);
        let imax = argmax(&y);
        y[imin] = -1.0;
        y[imax] = 1.0;
    } else {
        y.fill(0.0);
    }
    let seq = Sequence::new(Matrix::zeros(length, 0), Target::Steps(Matrix::column(&y)));
    SequenceDataset::new(vec![seq])
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap_or(0)
}

/// Binary piano rolls built from a bank of seeded motifs.
///
/// Each sequence picks 2 to 4 motifs of [`MOTIF_LEN`] frames, repeats each
/// one 2 or 3 times in a row, and cycles through that block until long
/// enough. Every frame holds 1 to 4 notes. Targets are the inputs shifted
/// one step ahead. The first 70% of sequences are tagged train, the next
/// 15% val and the rest test.
pub fn gen_pianoroll_task(
    seed: u64,
    n_sequences: usize,
    length: usize,
    n_notes: usize,
) -> Result<SequenceDataset> {
    if n_sequences == 0 || length == 0 || n_notes == 0 {
        return Err(LmnError::invalid("piano-roll sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank_size = 8;
    let span = n_notes.min(24);
    let base = (n_notes - span) / 2;
    let bank: Vec<Vec<Vec<usize>>> = (0..bank_size)
        .map(|_| {
            (0..MOTIF_LEN)
                .map(|_| {
                    let k = rng.random_range(1..=4usize.min(span));
                    sample(&mut rng, span, k).into_iter().map(|n| base + n).collect()
                })
                .collect()
        })
        .collect();

    let n_train = (n_sequences as f64 * 0.7).round().max(1.0) as usize;
    let n_val = (n_sequences as f64 * 0.15).round() as usize;
    let mut sequences = Vec::with_capacity(n_sequences);
    for i in 0..n_sequences {
        let n_motifs = rng.random_range(2..=4usize);
        let picks = sample(&mut rng, bank_size, n_motifs).into_vec();
        let mut block: Vec<&Vec<usize>> = Vec::new();
        for &m in &picks {
            for _ in 0..rng.random_range(2..=3usize) {
                block.extend(bank[m].iter());
            }
        }
        let mut roll = Matrix::zeros(length + 1, n_notes);
        for t in 0..=length {
            for &note in block[t % block.len()] {
                roll[(t, note)] = 1.0;
            }
        }
        let x = roll.block(0, 0, length, n_notes);
        let y = roll.block(1, 0, length, n_notes);
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        sequences.push(Sequence::new(x, Target::Steps(y)).with_split(split));
    }
    SequenceDataset::new(sequences)
}
