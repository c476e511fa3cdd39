use nalgebra::DMatrix;
use nlc_admm::oracle::random_point_check;
use nlc_admm::problem::ConsensusProblem;
use nlc_admm::reference::{solve_reference, ReferenceOptions};
use nlc_admm::zoo::{self, RobustSvmConfig};

fn every_oracle_passes(p: &ConsensusProblem, what: &str) {
    for (i, (name, o)) in p.oracles().into_iter().enumerate() {
        let err = random_point_check(o.as_ref(), 100, 2.0, 17 + i as u64);
        assert!(err <= 1e-5, "{what}, {name}: {err:e}");
    }
}

#[test]
fn gradients_of_every_zoo_oracle_at_100_points() {
    every_oracle_passes(&zoo::toy_1d_qp(), "toy");
    every_oracle_passes(
        &zoo::separable_quadratic(&[vec![1.0, 2.0], vec![-3.0, 0.5]]),
        "separable",
    );
    let ball = zoo::generate_enclosing_ball(&zoo::random_points(10, 3, 1), 3).unwrap();
    every_oracle_passes(&ball, "ball");
    let (svm, inst) = zoo::generate_robust_svm(&RobustSvmConfig::default()).unwrap();
    every_oracle_passes(&svm, "svm");
    every_oracle_passes(&inst.problem_with_slack_unit(3.0).unwrap(), "svm unit 3");
    every_oracle_passes(&svm.with_constraint_scale(10.0).unwrap(), "svm scale 10");
}

#[test]
fn svm_covariances_are_psd_with_bounded_entries() {
    for seed in 0..3 {
        let inst = zoo::sample_robust_svm(&RobustSvmConfig {
            n_points: 40,
            n_features: 7,
            seed,
            cov_scale: 1.0,
            ..RobustSvmConfig::default()
        })
        .unwrap();
        let n = inst.n_features;
        for f in &inst.factors {
            let f = DMatrix::from_row_slice(n, n, f);
            let sigma = f.transpose() * &f;
            assert!(sigma.amax() <= 1.0 + 1e-12);
            let eig = sigma.symmetric_eigenvalues();
            assert!(eig.min() >= -1e-12, "{eig}");
        }
    }
}

#[test]
fn ball_of_two_and_three_points() {
    let opts = ReferenceOptions::default();
    // diameter (0,0)-(2,0): center (1,0), s = r² = 1
    let two = zoo::generate_enclosing_ball(&[vec![0.0, 0.0], vec![2.0, 0.0]], 2).unwrap();
    let r = solve_reference(&two, &opts).unwrap();
    assert!(
        (r.z_star[0] - 1.0).abs() < 1e-5 && r.z_star[1].abs() < 1e-5,
        "{:?}",
        r.z_star
    );
    assert!((r.f_star - 1.0).abs() < 1e-5);

    // acute triangle: circumcircle of (0,0),(4,0),(1,3) has center (2,1), r² = 5
    let tri = vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![1.0, 3.0]];
    let r = solve_reference(&zoo::generate_enclosing_ball(&tri, 3).unwrap(), &opts).unwrap();
    assert!(
        (r.z_star[0] - 2.0).abs() < 1e-5 && (r.z_star[1] - 1.0).abs() < 1e-5,
        "{:?}",
        r.z_star
    );
    assert!((r.f_star - 5.0).abs() < 1e-5);

    // obtuse triangle: the longest side is a diameter
    let obtuse = vec![vec![0.0, 0.0], vec![4.0, 0.0], vec![2.0, 0.5]];
    let r = solve_reference(&zoo::generate_enclosing_ball(&obtuse, 1).unwrap(), &opts).unwrap();
    assert!(
        (r.z_star[0] - 2.0).abs() < 1e-5 && r.z_star[1].abs() < 1e-5,
        "{:?}",
        r.z_star
    );
    assert!((r.f_star - 4.0).abs() < 1e-5);
}

/// Far-apart classes with zero covariance: the optimum is the hard-margin
/// SVM, `f* = ½‖w*‖²` with zero slacks.
#[test]
fn separable_svm_has_zero_slack() {
    let mut inst = zoo::sample_robust_svm(&RobustSvmConfig {
        n_points: 4,
        n_features: 2,
        m_batches: 2,
        cov_scale: 0.0,
        flip_fraction: 0.0,
        ..RobustSvmConfig::default()
    })
    .unwrap();
    inst.points = vec![vec![2.0, 0.0], vec![3.0, 1.0], vec![-2.0, 0.0], vec![-3.0, -1.0]];
    inst.labels = vec![1.0, 1.0, -1.0, -1.0];
    // margin 1 at x = ±(2, 0): w* = (1/2, 0)
    let r = solve_reference(&inst.problem().unwrap(), &ReferenceOptions::default()).unwrap();
    assert!(
        (r.z_star[0] - 0.5).abs() < 1e-4 && r.z_star[1].abs() < 1e-4,
        "{:?}",
        r.z_star
    );
    assert!((r.f_star - 0.125).abs() < 1e-4, "{}", r.f_star);
    let slack: f64 = r.x_star.iter().flat_map(|x| x[2..].iter()).map(|v| v.abs()).sum();
    assert!(slack < 1e-4);
}
