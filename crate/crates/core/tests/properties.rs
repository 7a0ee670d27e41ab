use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lmn_core::laes::{self, build_data_matrix};
use lmn_core::models::{active_modules, max_modules, Recurrent};
use lmn_core::numerics::numerical_rank;
use lmn_core::{LaesParams, Matrix, MslmnParams, Sequence, SequenceDataset};

fn corpus(seed: u64, n: usize, max_len: usize, a: usize) -> SequenceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs = (0..n)
        .map(|_| {
            let l = rng.random_range(1..=max_len);
            Sequence::unlabeled(Matrix::from_fn(l, a, |_, _| rng.random_range(-1.0..1.0)))
        })
        .collect();
    SequenceDataset::new(seqs).unwrap()
}

fn random_laes(seed: u64, p: usize, a: usize) -> LaesParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a_m = Matrix::from_fn(p, a, |_, _| rng.random_range(-1.0..1.0));
    let b_m = Matrix::from_fn(p, p, |_, _| rng.random_range(-0.5..0.5));
    LaesParams::new(a_m, b_m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoder_is_linear(seed in any::<u64>(), p in 1usize..5, a in 1usize..4, len in 1usize..10,
                         alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let params = random_laes(seed, p, a);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let x1 = Matrix::from_fn(len, a, |_, _| rng.random_range(-1.0..1.0));
        let x2 = Matrix::from_fn(len, a, |_, _| rng.random_range(-1.0..1.0));
        let mixed = x1.scale(alpha).add(&x2.scale(beta)).unwrap();
        let lhs = params.encode(&mixed).unwrap();
        let rhs = params.encode(&x1).unwrap().scale(alpha)
            .add(&params.encode(&x2).unwrap().scale(beta)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10);
    }

    #[test]
    fn truncation_error_never_rises(seed in any::<u64>(), n in 1usize..4, len in 1usize..8, a in 1usize..4) {
        let ds = corpus(seed, n, len, a);
        let rank = numerical_rank(&build_data_matrix(&ds).unwrap());
        let mut prev = f64::INFINITY;
        for p in 1..=rank {
            let e = laes::fit(&ds, p, false).unwrap().discarded_energy;
            prop_assert!(e <= prev + 1e-10);
            prev = e;
        }
        prop_assert!(prev.abs() <= 1e-8);
    }

    #[test]
    fn exact_rank_round_trips(seed in any::<u64>(), n in 1usize..4, len in 1usize..8, a in 1usize..4) {
        let ds = corpus(seed, n, len, a);
        let rank = numerical_rank(&build_data_matrix(&ds).unwrap());
        let fit = laes::fit(&ds, rank, false).unwrap();
        prop_assert!(laes::prefix_errors(&fit.params, &ds).unwrap().max_abs <= 1e-8);
    }

    #[test]
    fn block_matches_reference(seed in any::<u64>(), g in 1usize..5, n in 1usize..4, n_h in 1usize..5,
                               n_x in 0usize..3, len in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MslmnParams::random(n_x, n_h, n, g, 2, &mut rng).unwrap();
        let x = Matrix::from_fn(len, n_x, |_, _| rng.random_range(-1.0..1.0));
        let a = model.forward_block(&x).unwrap();
        let b = model.forward_reference(&x).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-12);
    }

    #[test]
    fn slow_modules_hold_between_ticks(seed in any::<u64>(), g in 2usize..5, n in 1usize..3, len in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MslmnParams::random(1, 3, n, g, 1, &mut rng).unwrap();
        let x = Matrix::from_fn(len, 1, |_, _| rng.random_range(-1.0..1.0));
        let m = model.forward(&x).unwrap().m.unwrap();
        for t in 2..=len {
            for k in 1..=g {
                if t % (1 << (k - 1)) != 0 {
                    for c in (k - 1) * n..k * n {
                        prop_assert_eq!(m[(t - 1, c)].to_bits(), m[(t - 2, c)].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn active_modules_follow_two_adic_valuation(t in 1usize..100_000, g in 1usize..12) {
        let i = active_modules(t, g);
        prop_assert!(i >= 1 && i <= g);
        prop_assert_eq!(i, g.min(t.trailing_zeros() as usize + 1));
        // doubling t never lowers the count
        prop_assert!(active_modules(2 * t, g) >= i);
        prop_assert!(max_modules(t) >= 1);
    }
}
