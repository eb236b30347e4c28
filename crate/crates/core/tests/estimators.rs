//! Measurement updates and threshold gating against direct oracles.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use raps_core::estimators::{
    kf_update, map_update_with_selection, td_select, td_update, weighted_information, weighted_map_cost, TdConfig,
};
use raps_core::linalg::spd_inverse;
use raps_core::{Matrix, MeasurementBatch, SelectionVector, StateBelief};

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn min_eig(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.min()
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (StateBelief<f64>, MeasurementBatch<f64>) {
    let l = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut p = l.matmul(&l.transpose()).unwrap();
    for i in 0..n {
        p[(i, i)] += 0.2;
    }
    let mean: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let rows = Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let values = (0..m).map(|_| rng.random_range(-10.0..10.0)).collect();
    let sigmas = (0..m).map(|_| rng.random_range(0.3..3.0)).collect();
    (
        StateBelief::new(mean, p, 0.0).unwrap(),
        MeasurementBatch::new(values, rows, sigmas, 0.0).unwrap(),
    )
}

fn random_bools(rng: &mut ChaCha8Rng, m: usize) -> Vec<bool> {
    (0..m).map(|_| rng.random_bool(0.5)).collect()
}

/// Normal equations of the stacked problem `[L⁻ᵀ; W^½ H] x ≈ [L⁻ᵀ x̄; W^½ y]`.
fn wls_oracle(belief: &StateBelief<f64>, batch: &MeasurementBatch<f64>, b: &[bool]) -> (DVector<f64>, DMatrix<f64>) {
    let n = belief.dim();
    let prior_info = to_na(&belief.covariance).try_inverse().unwrap();
    let mut normal = prior_info.clone();
    let mut rhs = &prior_info * DVector::from_column_slice(&belief.mean);
    for i in (0..batch.len()).filter(|&i| b[i]) {
        let h = DVector::from_column_slice(batch.row(i));
        let w = 1.0 / (batch.sigmas[i] * batch.sigmas[i]);
        normal += &h * h.transpose() * w;
        rhs += &h * (w * batch.values[i]);
    }
    let x = normal.clone().lu().solve(&rhs).unwrap();
    assert_eq!(x.len(), n);
    (x, normal)
}

#[test]
fn update_matches_stacked_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let n = rng.random_range(1..=9);
        let m = rng.random_range(0..=12);
        let (belief, batch) = random_instance(&mut rng, n, m);
        for b in [vec![true; m], random_bools(&mut rng, m)] {
            let out = map_update_with_selection(&belief, &batch, &SelectionVector::from_bools(&b)).unwrap();
            let (x_ref, info_ref) = wls_oracle(&belief, &batch, &b);
            let scale = 1.0 + x_ref.amax();
            for j in 0..n {
                assert!((out.estimate[j] - x_ref[j]).abs() <= 1e-9 * scale);
            }
            assert!((to_na(&out.information) - &info_ref).amax() <= 1e-9 * info_ref.amax());
            let cov_ref = info_ref.try_inverse().unwrap();
            assert!((to_na(&out.posterior.covariance) - &cov_ref).amax() <= 1e-9 * cov_ref.amax());
        }
    }
}

#[test]
fn kf_is_the_all_ones_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (n, m) = (rng.random_range(1..=9), rng.random_range(0..=10));
        let (belief, batch) = random_instance(&mut rng, n, m);
        let kf = kf_update(&belief, &batch).unwrap();
        let ones = map_update_with_selection(&belief, &batch, &SelectionVector::ones(m)).unwrap();
        assert_eq!(kf, ones);
    }
}

#[test]
fn repeated_measurements_shrink_variance() {
    let belief = StateBelief::new(vec![0.0], Matrix::from_diag(&[4.0]), 0.0).unwrap();
    for m in [1usize, 5, 50, 500] {
        let rows = Matrix::from_fn(m, 1, |_, _| 1.0);
        let batch = MeasurementBatch::new(vec![2.0; m], rows, vec![1.5; m], 0.0).unwrap();
        let out = kf_update(&belief, &batch).unwrap();
        let var = 1.0 / (0.25 + m as f64 / 2.25);
        assert!((out.posterior.covariance[(0, 0)] - var).abs() < 1e-12);
        assert!((out.estimate[0] - var * (m as f64 * 2.0 / 2.25)).abs() < 1e-12);
    }
}

#[test]
fn estimate_has_zero_cost_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-4;
    for _ in 0..200 {
        let (n, m) = (rng.random_range(1..=9), rng.random_range(1..=12));
        let (belief, batch) = random_instance(&mut rng, n, m);
        let b = random_bools(&mut rng, m);
        let w: Vec<f64> = b.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        let out = map_update_with_selection(&belief, &batch, &SelectionVector::from_bools(&b)).unwrap();
        let prior_info = spd_inverse(&belief.covariance).unwrap();
        let cost = |x: &[f64]| weighted_map_cost(&belief.mean, &prior_info, &batch, &w, x).unwrap();
        let c0 = cost(&out.estimate);
        let mut grad_sq = 0.0;
        for j in 0..n {
            let mut xp = out.estimate.clone();
            let mut xm = out.estimate.clone();
            xp[j] += h;
            xm[j] -= h;
            let g = (cost(&xp) - cost(&xm)) / (2.0 * h);
            grad_sq += g * g;
        }
        assert!(
            grad_sq.sqrt() <= 1e-8 * (1.0 + c0),
            "gradient {} at cost {c0}",
            grad_sq.sqrt()
        );
    }
}

#[test]
fn information_is_monotone_in_the_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let (n, m) = (rng.random_range(1..=9), rng.random_range(1..=15));
        let (belief, batch) = random_instance(&mut rng, n, m);
        let prior_info = spd_inverse(&belief.covariance).unwrap();
        let small: Vec<f64> = (0..m).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let large: Vec<f64> = small
            .iter()
            .map(|&v| if v == 1.0 || rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let j_small = to_na(&weighted_information(&prior_info, &batch, &small).unwrap());
        let j_large = to_na(&weighted_information(&prior_info, &batch, &large).unwrap());
        assert!(min_eig(&j_large - &j_small) >= -1e-10);
        assert!(min_eig(&j_small - to_na(&prior_info)) >= -1e-10);
    }
}

#[test]
fn singular_prior_is_rejected() {
    let belief = StateBelief::new(vec![0.0, 0.0], Matrix::from_diag(&[1.0, 0.0]), 0.0).unwrap();
    let batch =
        MeasurementBatch::new(vec![1.0], Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(), vec![1.0], 0.0).unwrap();
    assert!(kf_update(&belief, &batch).is_err());
}

fn two_measurement_case() -> (StateBelief<f64>, MeasurementBatch<f64>) {
    // innovation deviation sqrt(3 + 1) = 2
    let belief = StateBelief::new(vec![1.0, 0.0], Matrix::from_diag(&[3.0, 1.0]), 0.0).unwrap();
    let rows = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let batch = MeasurementBatch::new(vec![1.0, 7.0], rows, vec![1.0, 1.0], 0.0).unwrap();
    (belief, batch)
}

#[test]
fn td_gates_on_normalized_innovation() {
    let (belief, batch) = two_measurement_case();
    let b = td_select(&belief, &batch, &TdConfig::new(2.0).unwrap()).unwrap();
    assert_eq!(b.to_bools(), vec![true, false]);
    let all = td_select(&belief, &batch, &TdConfig::new(1e9).unwrap()).unwrap();
    assert_eq!(all.to_bools(), vec![true, true]);
    assert!(TdConfig::new(0.0).is_err());
}

#[test]
fn td_with_huge_gate_is_kf() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (belief, batch) = random_instance(&mut rng, 4, 6);
        let td = td_update(&belief, &batch, &TdConfig::new(1e12).unwrap()).unwrap();
        assert_eq!(td.update, kf_update(&belief, &batch).unwrap());
    }
}

#[test]
fn td_drops_single_large_outlier() {
    let belief = StateBelief::new(vec![0.0; 3], Matrix::from_diag(&[0.01; 3]), 0.0).unwrap();
    let rows = Matrix::from_rows(&[
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![0.6, 0.8, 0.0],
        vec![0.0, 0.6, 0.8],
    ])
    .unwrap();
    let mut values = vec![0.3, -0.5, 0.2, 0.1, -0.4];
    values[3] = 10.0;
    let batch = MeasurementBatch::new(values, rows, vec![1.0; 5], 0.0).unwrap();
    let td = td_update(&belief, &batch, &TdConfig::new(2.0).unwrap()).unwrap();
    assert_eq!(td.selection.to_bools(), vec![true, true, true, false, true]);
}

#[test]
fn kf_information_dominates_td() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..300 {
        let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=12));
        let (belief, batch) = random_instance(&mut rng, n, m);
        let td = td_update(&belief, &batch, &TdConfig::new(1.0).unwrap()).unwrap();
        let kf = kf_update(&belief, &batch).unwrap();
        assert!(min_eig(to_na(&kf.information) - to_na(&td.update.information)) >= -1e-10);
    }
}

#[test]
fn td_acceptance_rate_matches_normal_cdf() {
    // outlier-free scalar trials: truth drawn from the prior, then measured
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = TdConfig::new(2.0).unwrap();
    let trials = 100_000;
    let mut accepted = 0usize;
    let std = Normal::new(0.0, 1.0).unwrap();
    for _ in 0..trials {
        let p: f64 = rng.random_range(0.5..5.0);
        let sigma: f64 = rng.random_range(0.5..3.0);
        let mean = rng.random_range(-10.0..10.0);
        let truth = mean + p.sqrt() * std.sample(&mut rng);
        let y = truth + sigma * std.sample(&mut rng);
        let belief = StateBelief::new(vec![mean], Matrix::from_diag(&[p]), 0.0).unwrap();
        let batch = MeasurementBatch::new(vec![y], Matrix::from_diag(&[1.0]), vec![sigma], 0.0).unwrap();
        if td_select(&belief, &batch, &cfg).unwrap().to_bools()[0] {
            accepted += 1;
        }
    }
    let rate = accepted as f64 / trials as f64;
    assert!((rate - 0.9545).abs() <= 0.005, "acceptance rate {rate}");
}

proptest! {
    #[test]
    fn td_depends_only_on_normalized_residual(
        p in 0.1..10.0f64, sigma in 0.1..5.0f64, innov in -20.0..20.0f64, k in 0.01..100.0f64, lambda in 0.5..4.0f64,
    ) {
        // scaling the innovation by k and the innovation variance by k²
        let cfg = TdConfig::new(lambda).unwrap();
        let decide = |p: f64, s: f64, e: f64| {
            let belief = StateBelief::new(vec![0.0], Matrix::from_diag(&[p]), 0.0).unwrap();
            let batch = MeasurementBatch::new(vec![e], Matrix::from_diag(&[1.0]), vec![s], 0.0).unwrap();
            td_select(&belief, &batch, &cfg).unwrap().to_bools()[0]
        };
        let r = innov.abs() / (p + sigma * sigma).sqrt();
        prop_assume!((r - lambda).abs() > 1e-9);
        prop_assert_eq!(decide(p, sigma, innov), decide(p * k * k, sigma * k, innov * k));
        prop_assert_eq!(decide(p, sigma, innov), r <= lambda);
    }
}
