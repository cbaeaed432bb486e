//! Optimized metrics vs naive double-loop oracles on random pairs.

mod common;

use common::*;
use edgediff::metrics::{e_measure, mae, s_measure, weighted_fbeta};
use edgediff::Grid;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Grid, Grid) {
    let fg_prob = rng.gen_range(0.05..0.95);
    let pred = Grid::from_fn(h, w, |_, _| rng.gen_range(0.0..=1.0));
    let gt = Grid::from_fn(h, w, |_, _| if rng.gen_bool(fg_prob) { 1.0 } else { 0.0 });
    (pred, gt)
}

#[test]
fn two_hundred_random_pairs_agree_to_1e9() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let (pred, gt) = random_pair(&mut rng, 16, 16);
        let checks = [
            ("mae", mae(&pred, &gt).unwrap(), oracle_mae(&pred, &gt)),
            ("s_measure", s_measure(&pred, &gt).unwrap(), oracle_s_measure(&pred, &gt)),
            ("e_measure", e_measure(&pred, &gt).unwrap(), oracle_e_measure(&pred, &gt)),
            (
                "weighted_fbeta",
                weighted_fbeta(&pred, &gt).unwrap(),
                oracle_weighted_fbeta(&pred, &gt),
            ),
        ];
        for (name, fast, slow) in checks {
            assert!(
                (fast - slow).abs() < 1e-9,
                "case {case}: {name} {fast:.12} vs oracle {slow:.12}"
            );
        }
    }
}

#[test]
fn degenerate_masks_agree_with_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pred = Grid::from_fn(12, 12, |_, _| rng.gen_range(0.0..=1.0));
    for gt in [Grid::zeros(12, 12), Grid::filled(12, 12, 1.0)] {
        assert!((s_measure(&pred, &gt).unwrap() - oracle_s_measure(&pred, &gt)).abs() < 1e-12);
        assert!((e_measure(&pred, &gt).unwrap() - oracle_e_measure(&pred, &gt)).abs() < 1e-12);
        assert!(
            (weighted_fbeta(&pred, &gt).unwrap() - oracle_weighted_fbeta(&pred, &gt)).abs()
                < 1e-12
        );
    }
}

#[test]
fn binary_predictions_agree_including_ties() {
    // Binary inputs exercise the distance-transform tie-breaking paths.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let gt = Grid::from_fn(11, 13, |_, _| if rng.gen_bool(0.3) { 1.0 } else { 0.0 });
        let pred = Grid::from_fn(11, 13, |_, _| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
        let fast = weighted_fbeta(&pred, &gt).unwrap();
        let slow = oracle_weighted_fbeta(&pred, &gt);
        assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
    }
}
