//! Branch-and-bound selections against exhaustive enumeration, and the
//! algebraic properties of the risk and the information matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raps_core::estimators::kf_update;
use raps_core::selector::*;
use raps_core::{Error, InfoSpec, Matrix, MeasurementBatch, SelectionVector, SolveReport, SolveStatus, StateBelief};

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Random instance whose diagonal spec lies strictly between the prior and
/// the all-measurements information; about a quarter of the measurements
/// carry large errors.
fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> RapsInstance<f64> {
    let l = Matrix::from_fn(n, n, |_, _| rng.random_range(-0.7..0.7));
    let mut prior = l.matmul(&l.transpose()).unwrap();
    for i in 0..n {
        prior[(i, i)] += 0.3;
    }
    let mean: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let truth: Vec<f64> = mean.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
    let rows = Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let sigmas: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
    let values = (0..m)
        .map(|i| {
            let hx: f64 = rows.row(i).iter().zip(&truth).map(|(a, b)| a * b).sum();
            let outlier = if rng.random_bool(0.25) {
                rng.random_range(-20.0..20.0)
            } else {
                0.0
            };
            hx + sigmas[i] * rng.random_range(-1.5..1.5) + outlier
        })
        .collect();
    let batch = MeasurementBatch::new(values, rows, sigmas, 0.0).unwrap();
    let ones = posterior_information(
        &RapsInstance::new(mean.clone(), prior.clone(), batch.clone(), InfoSpec::zeros(n)).unwrap(),
        &SelectionVector::ones(m),
    )
    .unwrap();
    let spec = (0..n)
        .map(|j| prior[(j, j)] + rng.random_range(0.1..0.7) * (ones[(j, j)] - prior[(j, j)]))
        .collect();
    RapsInstance::new(mean, prior, batch, InfoSpec::new(spec).unwrap()).unwrap()
}

fn assert_same_risk(bnb: &SolveReport<f64>, ex: &SolveReport<f64>, what: &str) {
    assert_eq!(bnb.status, ex.status, "{what}");
    assert!(
        (bnb.risk - ex.risk).abs() <= 1e-6,
        "{what}: {} vs {}",
        bnb.risk,
        ex.risk
    );
}

#[test]
fn diag_branch_and_bound_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = BnbOptions::default();
    for k in 0..200 {
        let inst = random_instance(&mut rng, 4, 10);
        let bnb = solve_diag_raps(&inst, &opts).unwrap();
        let ex = exhaustive_raps(&inst, RapsMode::Diag).unwrap();
        assert_same_risk(&bnb, &ex, &format!("instance {k}"));
        assert!(inst.satisfies(&bnb.posterior_information, RapsMode::Diag).unwrap());
    }
}

#[test]
fn full_branch_and_bound_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let opts = BnbOptions::default();
    for k in 0..100 {
        let mut inst = random_instance(&mut rng, 3, 8);
        if k % 2 == 1 {
            // a general matrix bound: the diagonal spec rotated
            let d = inst.spec.matrix();
            let (c, s) = (0.8f64, 0.6f64);
            let rot = Matrix::from_rows(&[vec![c, -s, 0.0], vec![s, c, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
            let general = rot.matmul(&d).unwrap().matmul(&rot.transpose()).unwrap().symmetrize();
            inst.spec = InfoSpec::general(general).unwrap();
        }
        let bnb = solve_full_raps(&inst, &opts).unwrap();
        let ex = exhaustive_raps(&inst, RapsMode::Full).unwrap();
        assert_same_risk(&bnb, &ex, &format!("instance {k}"));
        if bnb.status == SolveStatus::Optimal {
            assert!(inst.satisfies(&bnb.posterior_information, RapsMode::Full).unwrap());
        }
    }
}

#[test]
fn scalar_state_full_equals_diag() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let opts = BnbOptions::default();
    for _ in 0..50 {
        let inst = random_instance(&mut rng, 1, 9);
        let d = solve_diag_raps(&inst, &opts).unwrap();
        let f = solve_full_raps(&inst, &opts).unwrap();
        assert_eq!(d.status, f.status);
        assert_eq!(d.selection, f.selection);
        assert!((d.risk - f.risk).abs() <= 1e-12 * (1.0 + d.risk));
    }
}

#[test]
fn alternative_search_settings_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let dfs = BnbOptions {
        branching: BranchRule::LowestIndex,
        node_order: NodeOrder::DepthFirst,
        ..BnbOptions::default()
    };
    for _ in 0..40 {
        let inst = random_instance(&mut rng, 3, 9);
        let ex = exhaustive_raps(&inst, RapsMode::Diag).unwrap();
        assert_same_risk(&solve_diag_raps(&inst, &dfs).unwrap(), &ex, "depth first");
    }
}

#[test]
fn huge_outliers_do_not_break_big_m() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let opts = BnbOptions {
        big_m_multiplier: 3.0,
        ..BnbOptions::default()
    };
    for _ in 0..40 {
        let mut inst = random_instance(&mut rng, 3, 9);
        let bad: Vec<usize> = (0..9).filter(|_| rng.random_bool(0.3)).collect();
        for &i in &bad {
            inst.batch.values[i] += if rng.random_bool(0.5) { 1e6 } else { -1e6 };
        }
        let bnb = solve_diag_raps(&inst, &opts).unwrap();
        let ex = exhaustive_raps(&inst, RapsMode::Diag).unwrap();
        if ex.status == SolveStatus::Optimal {
            assert_same_risk(&bnb, &ex, "outliers");
            assert!(bad.iter().all(|&i| !bnb.selection.to_bools()[i]) || bnb.risk > 1e6);
        } else {
            assert_eq!(bnb.status, SolveStatus::InfeasibleSpec);
        }
    }
}

#[test]
fn full_spec_costs_at_least_diag_spec() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..60 {
        let inst = random_instance(&mut rng, 3, 10);
        let d = solve_diag_raps(&inst, &BnbOptions::default()).unwrap();
        let f = solve_full_raps(&inst, &BnbOptions::default()).unwrap();
        if f.status == SolveStatus::Optimal {
            assert_eq!(d.status, SolveStatus::Optimal);
            assert!(d.risk <= f.risk + 1e-6);
        }
    }
}

#[test]
fn selection_never_riskier_than_kf_when_kf_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let opts = BnbOptions::default();
    for _ in 0..100 {
        let inst = random_instance(&mut rng, 4, 12);
        let r = solve_diag_raps(&inst, &opts).unwrap();
        let ones = SelectionVector::ones(inst.m());
        let j1 = posterior_information(&inst, &ones).unwrap();
        if inst.satisfies(&j1, RapsMode::Diag).unwrap() {
            let (kf_risk, _) = optimal_risk_for_selection(&inst, &ones).unwrap();
            assert!(r.risk <= kf_risk + opts.gap_tol);
        } else {
            assert_eq!(r.status, SolveStatus::InfeasibleSpec);
        }
    }
}

#[test]
fn infeasible_spec_returns_kf_payload() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut inst = random_instance(&mut rng, 3, 6);
    let ones = posterior_information(&inst, &SelectionVector::ones(6)).unwrap();
    inst.spec = InfoSpec::new(vec![ones[(0, 0)] * 2.0, 0.0, 0.0]).unwrap();
    let belief = StateBelief::new(inst.prior_mean.clone(), inst.prior_covariance().unwrap(), 0.0).unwrap();
    let kf = kf_update(&belief, &inst.batch).unwrap();
    for r in [
        solve_diag_raps(&inst, &BnbOptions::default()).unwrap(),
        solve_full_raps(&inst, &BnbOptions::default()).unwrap(),
        exhaustive_raps(&inst, RapsMode::Diag).unwrap(),
    ] {
        assert_eq!(r.status, SolveStatus::InfeasibleSpec);
        assert_eq!(r.selection, SelectionVector::ones(6));
        for j in 0..3 {
            assert!((r.estimate[j] - kf.estimate[j]).abs() < 1e-9);
        }
    }
}

#[test]
fn spec_reachable_only_with_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut inst = random_instance(&mut rng, 2, 5);
    let ones = posterior_information(&inst, &SelectionVector::ones(5)).unwrap();
    inst.spec = InfoSpec::new(vec![ones[(0, 0)] * (1.0 - 1e-13), ones[(1, 1)] * (1.0 - 1e-13)]).unwrap();
    let ex = exhaustive_raps(&inst, RapsMode::Diag).unwrap();
    let bnb = solve_diag_raps(&inst, &BnbOptions::default()).unwrap();
    assert_eq!(ex.selection, SelectionVector::ones(5));
    assert_eq!(bnb.selection, SelectionVector::ones(5));
    assert_eq!(ex.status, SolveStatus::Optimal);
}

#[test]
fn solves_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..10 {
        let inst = random_instance(&mut rng, 3, 10);
        for solve in [solve_diag_raps::<f64>, solve_full_raps::<f64>] {
            let mut a = solve(&inst, &BnbOptions::default()).unwrap();
            let mut b = solve(&inst, &BnbOptions::default()).unwrap();
            a.wall_time_s = 0.0;
            b.wall_time_s = 0.0;
            assert_eq!(a, b);
        }
    }
}

#[test]
fn node_limit_keeps_best_incumbent() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let inst = random_instance(&mut rng, 4, 12);
    let opts = BnbOptions {
        node_limit: 1,
        ..BnbOptions::default()
    };
    let r = solve_diag_raps(&inst, &opts).unwrap();
    let ex = exhaustive_raps(&inst, RapsMode::Diag).unwrap();
    assert!(inst.satisfies(&r.posterior_information, RapsMode::Diag).unwrap());
    assert!(r.risk >= ex.risk - 1e-9);
    if r.status == SolveStatus::IterationLimit {
        assert!(r.gap >= 0.0 && r.risk - r.gap <= ex.risk + 1e-6);
    }
}

#[test]
fn options_are_validated() {
    let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(22), 2, 4);
    for opts in [
        BnbOptions {
            big_m_multiplier: 2.0,
            ..BnbOptions::default()
        },
        BnbOptions {
            gap_tol: 0.0,
            ..BnbOptions::default()
        },
    ] {
        assert!(matches!(solve_diag_raps(&inst, &opts), Err(Error::InvalidParams(_))));
    }
}

#[test]
fn exhaustive_search_is_guarded() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let inst = random_instance(&mut rng, 2, EXHAUSTIVE_MAX_M + 1);
    assert!(matches!(
        exhaustive_raps(&inst, RapsMode::Diag),
        Err(Error::TooManyMeasurements { .. })
    ));
}

#[test]
fn lmi_cuts_keep_every_feasible_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut checked = 0;
    while checked < 30 {
        let inst = random_instance(&mut rng, 3, 8);
        let jd = inst.spec.matrix();
        // a relaxed point, usually LMI-infeasible
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..0.6)).collect();
        let j = posterior_information(&inst, &SelectionVector::relaxed(w).unwrap()).unwrap();
        let Some(v) = lmi_cut(&j, &jd).unwrap() else { continue };
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(j.quad_form(&v) < jd.quad_form(&v) - 1e-8);
        let mut feasible = 0;
        for mask in 0u32..256 {
            let b: Vec<bool> = (0..8).map(|i| mask >> i & 1 == 1).collect();
            let jb = posterior_information(&inst, &SelectionVector::from_bools(&b)).unwrap();
            let lmin = SymmetricEigen::new(to_na(&jb) - to_na(&jd)).eigenvalues.min();
            if lmin >= -1e-9 {
                feasible += 1;
                assert!(jb.quad_form(&v) >= jd.quad_form(&v) - 1e-9);
            }
        }
        if feasible > 0 {
            checked += 1;
        }
    }
}

#[test]
fn lmi_cut_examples() {
    let eye = Matrix::<f64>::identity(2);
    assert_eq!(lmi_cut(&eye.scale(2.0), &eye).unwrap(), None);
    let v = lmi_cut(&Matrix::from_diag(&[2.0, 0.0]), &eye).unwrap().unwrap();
    assert!(v[0].abs() < 1e-12 && (v[1].abs() - 1.0).abs() < 1e-12);
    let asym = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
    assert!(lmi_cut(&asym, &eye).is_err());
}

#[test]
fn noiseless_consistent_measurements_cost_only_the_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..20 {
        let mut inst = random_instance(&mut rng, 3, 12);
        let truth: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        for i in 0..12 {
            inst.batch.values[i] = inst.batch.row(i).iter().zip(&truth).map(|(a, b)| a * b).sum();
        }
        let ones = SelectionVector::ones(12);
        let (risk, x) = optimal_risk_for_selection(&inst, &ones).unwrap();
        let dx: Vec<f64> = x.iter().zip(&inst.prior_mean).map(|(a, b)| a - b).collect();
        let prior_term = inst.prior_info.quad_form(&dx);
        let meas_term = risk - prior_term;
        assert!(meas_term >= -1e-9 && meas_term <= risk);
        assert!((risk - evaluate_risk(&inst, &ones, &x).unwrap()).abs() < 1e-12 * (1.0 + risk));
        // with the prior pulled onto the truth, the measurement term vanishes
        inst.prior_mean = truth.clone();
        let (risk, x) = optimal_risk_for_selection(&inst, &ones).unwrap();
        assert!(risk < 1e-18 && x.iter().zip(&truth).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}

#[test]
fn optimal_risk_is_minimal_over_x() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, 4, 10);
        let b: Vec<bool> = (0..10).map(|_| rng.random_bool(0.5)).collect();
        let b = SelectionVector::from_bools(&b);
        let (risk, x_hat) = optimal_risk_for_selection(&inst, &b).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = x_hat
                .iter()
                .map(|v| v + rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-6..1)))
                .collect();
            assert!(risk <= evaluate_risk(&inst, &b, &x).unwrap() + 1e-12 * (1.0 + risk));
        }
    }
}

#[test]
fn risk_examples() {
    let rows = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let batch = MeasurementBatch::new(vec![2.0, 5.0], rows, vec![2.0, 1.0], 0.0).unwrap();
    let inst = RapsInstance::new(vec![0.0, 0.0], Matrix::identity(2), batch, InfoSpec::zeros(2)).unwrap();
    assert_eq!(
        evaluate_risk(&inst, &SelectionVector::zeros(2), &[0.0, 0.0]).unwrap(),
        0.0
    );
    // one selected residual equal to its sigma
    let first = SelectionVector::from_bools(&[true, false]);
    assert_eq!(evaluate_risk(&inst, &first, &[0.0, 0.0]).unwrap(), 1.0);
    let mut expected = Matrix::identity(2);
    expected[(0, 0)] += 0.25;
    assert_eq!(posterior_information(&inst, &first).unwrap(), expected);
    assert!(evaluate_risk(&inst, &SelectionVector::relaxed(vec![0.5, 0.5]).unwrap(), &[0.0, 0.0]).is_err());
}

proptest! {
    #[test]
    fn information_is_linear_in_the_selection(seed in 0u64..1000, t in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 3, 7);
        let b0: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..1.0)).collect();
        let b1: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..1.0)).collect();
        let bt: Vec<f64> = b0.iter().zip(&b1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
        let j = |b: Vec<f64>| posterior_information(&inst, &SelectionVector::relaxed(b).unwrap()).unwrap();
        let mix = &j(b0).scale(1.0 - t) + &j(b1).scale(t);
        prop_assert!((&j(bt) - &mix).max_abs() <= 1e-12 * mix.max_abs());
    }

    #[test]
    fn risk_matches_term_by_term_sum(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 4, 9);
        let b: Vec<bool> = (0..9).map(|_| rng.random_bool(0.5)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut naive = 0.0;
        for i in 0..9 {
            if b[i] {
                let mut hx = 0.0;
                for j in 0..4 {
                    hx += inst.batch.rows[(i, j)] * x[j];
                }
                let r = (inst.batch.values[i] - hx) / inst.batch.sigmas[i];
                naive += r * r;
            }
        }
        for r in 0..4 {
            for c in 0..4 {
                naive += (x[r] - inst.prior_mean[r]) * inst.prior_info[(r, c)] * (x[c] - inst.prior_mean[c]);
            }
        }
        let risk = evaluate_risk(&inst, &SelectionVector::from_bools(&b), &x).unwrap();
        prop_assert!(risk >= 0.0);
        prop_assert!((risk - naive).abs() <= 1e-12 * (1.0 + naive));
    }
}
