use std::sync::Arc;

use nlc_admm::admm::{self, AdmmOptions, IterationMetrics, SolverState, StoppingRule};
use nlc_admm::baseline::{baseline_solve, BaselineOptions};
use nlc_admm::error::SolveError;
use nlc_admm::harness::AssignmentPolicy;
use nlc_admm::linalg::Matrix;
use nlc_admm::oracle::{AffineOracle, ClosureOracle, DiagQuadratic, Oracle};
use nlc_admm::problem::{ConsensusProblem, ConstraintBatch};
use nlc_admm::zoo::{self, RobustSvmConfig};
use proptest::prelude::*;

fn small_svm() -> ConsensusProblem {
    zoo::generate_robust_svm(&RobustSvmConfig {
        n_points: 40,
        n_features: 5,
        m_batches: 8,
        seed: 4,
        ..RobustSvmConfig::default()
    })
    .unwrap()
    .0
}

fn untimed(trace: &[IterationMetrics]) -> Vec<IterationMetrics> {
    trace.iter().map(|m| IterationMetrics { elapsed_ns: 0, ..*m }).collect()
}

#[test]
fn traces_are_bit_identical_across_worker_counts_and_policies() {
    let p = small_svm();
    let run = |workers, policy| {
        let opts = AdmmOptions {
            rho: 10.0,
            stopping: StoppingRule::iterations(25),
            workers,
            policy,
            ..AdmmOptions::default()
        };
        admm::solve(&p, &opts, None).unwrap()
    };
    let base = run(1, AssignmentPolicy::Contiguous);
    for (w, policy) in [
        (2, AssignmentPolicy::Contiguous),
        (4, AssignmentPolicy::RoundRobin),
        (8, AssignmentPolicy::Contiguous),
        (11, AssignmentPolicy::RoundRobin),
    ] {
        let other = run(w, policy);
        assert_eq!(untimed(&base.trace), untimed(&other.trace), "workers {w}");
        assert_eq!(base.state, other.state, "workers {w}");
    }
}

#[test]
fn baseline_is_deterministic_across_worker_counts() {
    let p = small_svm();
    let run = |workers| {
        let opts = BaselineOptions {
            rho_outer: 10.0,
            rho_admm: 10.0,
            max_outer: 3,
            max_middle: 50,
            outer_tol: 1e-12,
            inner_admm_tol: 1e-2,
            workers,
            ..BaselineOptions::default()
        };
        baseline_solve(&p, &opts, None)
    };
    let a = run(1);
    let b = run(4);
    match (a, b) {
        (Ok(a), Ok(b)) => {
            assert_eq!(untimed(&a.trace), untimed(&b.trace));
            assert_eq!(a.work, b.work);
        }
        (Err(a), Err(b)) => assert_eq!(a, b),
        (a, b) => panic!("outcomes differ: {:?} vs {:?}", a.is_ok(), b.is_ok()),
    }
}

/// Batches whose single constraint is the constant `c > 0`: every round adds
/// exactly `ρ c²` to each `μ`.
fn constant_violation(m: usize, c: f64) -> ConsensusProblem {
    let batches = (0..m)
        .map(|i| ConstraintBatch {
            index: i,
            objective: Arc::new(DiagQuadratic {
                diag: vec![1.0],
                center: vec![i as f64],
                offset: 0.0,
            }),
            ineq: Some(Arc::new(AffineOracle::new(Matrix::zeros(1, 1), vec![c])) as Oracle),
            eq: None,
            local_dim: 0,
        })
        .collect();
    ConsensusProblem::new(1, batches).unwrap()
}

#[test]
fn every_batch_updates_its_duals_exactly_once_per_round() {
    let p = constant_violation(5, 0.5);
    for workers in [1, 2, 3, 5, 7] {
        let opts = AdmmOptions {
            rho: 2.0,
            stopping: StoppingRule::iterations(6),
            workers,
            ..AdmmOptions::default()
        };
        let out = admm::solve(&p, &opts, None).unwrap();
        for mu in &out.state.mu_g {
            assert_eq!(mu, &vec![6.0 * 2.0 * 0.25], "workers {workers}");
        }
    }
}

fn with_objective(p: &ConsensusProblem, batch: usize, objective: Oracle) -> ConsensusProblem {
    let mut batches = p.batches.clone();
    batches[batch].objective = objective;
    ConsensusProblem::new(p.shared_dim, batches).unwrap()
}

#[test]
fn panicking_worker_is_reported_with_its_id() {
    let p = constant_violation(8, 0.0);
    let bad = with_objective(&p, 3, Arc::new(ClosureOracle::new(1, 1, |_| panic!("oracle exploded"))));
    let opts = AdmmOptions {
        rho: 1.0,
        stopping: StoppingRule::iterations(3),
        workers: 4,
        ..AdmmOptions::default()
    };
    // contiguous: worker 1 owns batches 2 and 3
    match admm::solve(&bad, &opts, None) {
        Err(SolveError::WorkerFailure { worker_id, cause }) => {
            assert_eq!(worker_id, 1);
            assert!(cause.contains("oracle exploded"), "{cause}");
        }
        other => panic!("expected a worker failure, got {other:?}"),
    }
}

#[test]
fn non_finite_objective_names_the_batch() {
    let p = constant_violation(4, 0.0);
    let bad = with_objective(
        &p,
        2,
        Arc::new(ClosureOracle::new(1, 1, |_| (vec![f64::NAN], Matrix::zeros(1, 1)))),
    );
    for workers in [1, 3] {
        let opts = AdmmOptions {
            rho: 1.0,
            stopping: StoppingRule::iterations(3),
            workers,
            ..AdmmOptions::default()
        };
        match admm::solve(&bad, &opts, None) {
            Err(SolveError::Inner { batch, .. }) => assert_eq!(batch, 2),
            other => panic!("expected an inner failure, got {other:?}"),
        }
    }
}

#[test]
fn separable_quadratic_converges_to_the_mean() {
    let centers = vec![vec![1.0, 0.0], vec![3.0, -2.0], vec![-1.0, 5.0]];
    let p = zoo::separable_quadratic(&centers);
    let opts = AdmmOptions {
        rho: 1.0,
        stopping: StoppingRule::residual(1e-8, 2000),
        inner: nlc_admm::lbfgs::InnerSolverOptions::default().with_grad_tol(1e-12),
        ..AdmmOptions::default()
    };
    let out = admm::solve(&p, &opts, None).unwrap();
    assert!(out.converged);
    assert!((out.state.z[0] - 1.0).abs() < 1e-6 && (out.state.z[1] - 1.0).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mu_stays_nonnegative_on_random_balls(
        seed in 0u64..1000,
        n_points in 2usize..12,
        dim in 1usize..4,
        m_frac in 0.0f64..1.0,
        rho in 0.05f64..200.0,
        scale in prop_oneof![Just(1.0), Just(10.0)],
    ) {
        let m = 1 + ((n_points - 1) as f64 * m_frac) as usize;
        let p = zoo::generate_enclosing_ball(&zoo::random_points(n_points, dim, seed), m)
            .unwrap()
            .with_constraint_scale(scale)
            .unwrap();
        let opts = AdmmOptions { rho, stopping: StoppingRule::iterations(15), ..AdmmOptions::default() };
        let mut worst = f64::INFINITY;
        let state = SolverState::zeros(&p, rho);
        admm::solve_observed(&p, state, &opts, None, &mut |s, _| worst = worst.min(s.min_mu_g())).unwrap();
        prop_assert!(worst >= 0.0, "min mu {}", worst);
    }
}
