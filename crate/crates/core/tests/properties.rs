//! Algebraic identities and invariants of the losses and metrics.

use cdbench_core::distill::{
    dkd_loss_weighted, kl_kd_loss, logit_standardize, ls_loss, mds_filter, se2d_loss,
};
use cdbench_core::matrix::argmax;
use cdbench_core::metrics::{forgetting, kurtosis};
use cdbench_core::nn::softmax_t;
use cdbench_core::{AccuracyMatrix, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn logits(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_rows, 2..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-8.0..8.0f64, r * c)
            .prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })
}

fn logit_pair(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
    (1..=max_rows, 2..=max_cols).prop_flat_map(|(r, c)| {
        let side = move || {
            prop::collection::vec(-8.0..8.0f64, r * c)
                .prop_map(move |v| Matrix::new(r, c, v).unwrap())
        };
        (side(), side())
    })
}

fn random_logits(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

proptest! {
    #[test]
    fn tempered_softmax_rows_are_distributions(z in logits(6, 7), t in 0.5..20.0f64) {
        let p = softmax_t(&z, t).unwrap();
        for row in p.iter_rows() {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_is_nonnegative((s, t) in logit_pair(6, 7), temp in 0.5..20.0f64) {
        prop_assert!(kl_kd_loss(&s, &t, temp).unwrap().loss >= 0.0);
    }

    #[test]
    fn standardization_keeps_the_argmax(z in logits(6, 7)) {
        let std = logit_standardize(&z);
        for r in 0..z.rows() {
            prop_assert_eq!(argmax(std.row(r)), argmax(z.row(r)));
        }
    }

    #[test]
    fn ls_ignores_per_row_shift_and_positive_scale(
        (s, t) in logit_pair(5, 6),
        shift in -5.0..5.0f64,
        scale in 0.2..5.0f64,
    ) {
        // the variance floor only matters for nearly constant rows
        prop_assume!(s.iter_rows().all(|r| {
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = r.iter().copied().fold(f64::INFINITY, f64::min);
            max - min > 1.0
        }));
        let moved = s.map(|v| scale * v + shift);
        let a = ls_loss(&s, &t, 2.0).unwrap().loss;
        let b = ls_loss(&moved, &t, 2.0).unwrap().loss;
        prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0));
    }

    #[test]
    fn mds_mask_follows_row_permutations(z in logits(12, 5), rot in 0usize..12) {
        let n = z.rows();
        let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let permuted = z.select_rows(&order);
        let base = mds_filter(&z, 0.25, 0.75, 2.0).unwrap();
        let moved = mds_filter(&permuted, 0.25, 0.75, 2.0).unwrap();
        let mapped: Vec<bool> = order.iter().map(|&i| base[i]).collect();
        prop_assert_eq!(moved, mapped);
    }

    #[test]
    fn kurtosis_is_affine_invariant(
        values in prop::collection::vec(-10.0..10.0f64, 8..40),
        scale in 0.1..10.0f64,
        shift in -50.0..50.0f64,
    ) {
        prop_assume!(values.iter().any(|&v| (v - values[0]).abs() > 1e-3));
        let k = kurtosis(&values).unwrap();
        let moved: Vec<f64> = values.iter().map(|v| scale * v + shift).collect();
        prop_assert!((kurtosis(&moved).unwrap() - k).abs() < 1e-6 * k);
    }
}

#[test]
fn kl_of_identical_logits_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (b, c) = (rng.random_range(1..=8), rng.random_range(2..=10));
        let z = random_logits(&mut rng, b, c, 3.0);
        for t in [1.0, 4.0, 10.0] {
            assert_eq!(kl_kd_loss(&z, &z, t).unwrap().loss, 0.0);
        }
    }
}

#[test]
fn dkd_with_non_target_mass_weights_reduces_to_kl() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (b, c) = (rng.random_range(1..=8), rng.random_range(2..=10));
        let t = [1.0, 2.0, 4.0, 10.0][rng.random_range(0..4)];
        let s = random_logits(&mut rng, b, c, 3.0);
        let z = random_logits(&mut rng, b, c, 3.0);
        let pt = softmax_t(&z, t).unwrap();
        let betas: Vec<f64> = (0..b).map(|r| 1.0 - pt.get(r, argmax(z.row(r)))).collect();
        let dkd = dkd_loss_weighted(&s, &z, t, 1.0, &betas).unwrap();
        let kl = kl_kd_loss(&s, &z, t).unwrap();
        assert!((dkd.loss - kl.loss).abs() < 1e-9, "{} vs {}", dkd.loss, kl.loss);
    }
}

#[test]
fn se2d_without_external_rows_is_exactly_kl() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (b, c) = (rng.random_range(1..=8), rng.random_range(2..=6));
        let s = random_logits(&mut rng, b, c, 3.0);
        let z = random_logits(&mut rng, b, c, 3.0);
        let empty = Matrix::zeros(0, c);
        let se2d = se2d_loss(&s, &z, &empty, &empty, 4.0).unwrap();
        let kl = kl_kd_loss(&s, &z, 4.0).unwrap();
        assert_eq!(se2d.loss, kl.loss);
        assert_eq!(se2d.d_all, kl.dlogits);
        assert_eq!(se2d.d_ext.rows(), 0);
    }
}

fn max_scan(trajectory: &[f64], t: usize) -> f64 {
    let mut best = trajectory[0];
    for &a in &trajectory[1..t] {
        if a > best {
            best = a;
        }
    }
    best - trajectory[t]
}

#[test]
fn forgetting_matches_max_scan_on_the_tenth_grid() {
    let grid: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let mut checked = 0usize;
    for len in 2..=5u32 {
        for code in 0..11usize.pow(len) {
            let mut c = code;
            let trajectory: Vec<f64> = (0..len)
                .map(|_| {
                    let v = grid[c % 11];
                    c /= 11;
                    v
                })
                .collect();
            let a = AccuracyMatrix::new(vec![0], vec![trajectory.clone()]).unwrap();
            for t in 1..trajectory.len() {
                assert_eq!(forgetting(&a, 0, t).unwrap(), max_scan(&trajectory, t));
                checked += 1;
            }
        }
    }
    assert!(checked > 600_000);
}

#[test]
fn kurtosis_of_normal_draws_is_three() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
    let k = kurtosis(&draws).unwrap();
    assert!((k - 3.0).abs() < 0.1, "kurtosis {k}");
}
