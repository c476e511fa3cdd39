//! Invariant suite run by `nlc-admm verify`.

use std::fmt;

use nlc_admm::admm::{self, AdmmOptions, ReferenceSolution, SolverState, StoppingRule};
use nlc_admm::oracle::{check_affine, random_point_check};
use nlc_admm::problem::ConsensusProblem;

pub const GRADIENT_POINTS: usize = 100;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const GRADIENT_RADIUS: f64 = 2.0;
/// Relative slack allowed in `V^{k+1} ≤ V^k + tol·(1 + V⁰)`.
pub const V_DESCENT_TOL: f64 = 1e-6;

const SEED: u64 = 0x0e1f;
const AFFINE_TRIALS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

/// Finite differences and the weighted-gradient path of every oracle at
/// [`GRADIENT_POINTS`] random points.
pub fn check_gradients(problem: &ConsensusProblem) -> CheckResult {
    let mut worst = 0.0_f64;
    let mut worst_name = String::new();
    for (i, (name, oracle)) in problem.oracles().into_iter().enumerate() {
        let err = random_point_check(oracle.as_ref(), GRADIENT_POINTS, GRADIENT_RADIUS, SEED + i as u64);
        if !(err <= worst) {
            worst = err;
            worst_name = name;
        }
    }
    CheckResult {
        name: "gradient",
        passed: worst <= GRADIENT_TOL,
        detail: format!("max relative error {worst:.3e} ({worst_name}), tol {GRADIENT_TOL:e}"),
    }
}

pub fn check_affinity(problem: &ConsensusProblem) -> CheckResult {
    let bad: Vec<usize> = problem
        .batches
        .iter()
        .enumerate()
        .filter(|(i, b)| {
            b.eq.as_ref()
                .is_some_and(|h| !check_affine(h.as_ref(), AFFINE_TRIALS, SEED + *i as u64))
        })
        .map(|(i, _)| i)
        .collect();
    let n_eq = problem.batches.iter().filter(|b| b.eq.is_some()).count();
    CheckResult {
        name: "affine",
        passed: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("{n_eq} equality oracles affine")
        } else {
            format!("equality oracles of batches {bad:?} are not affine")
        },
    }
}

/// Runs the extended method for `opts.stopping.max_iters` rounds against
/// `reference` and checks `μ ≥ 0` after every round and the descent of `V^k`.
pub fn check_run(problem: &ConsensusProblem, reference: &ReferenceSolution, opts: &AdmmOptions) -> Vec<CheckResult> {
    let mut opts = *opts;
    opts.stopping = StoppingRule::iterations(opts.stopping.max_iters);
    let mut min_mu = f64::INFINITY;
    let mut negative_at = None;
    let mut observer = |s: &SolverState, _: &admm::IterationMetrics| {
        let m = s.min_mu_g();
        if m < 0.0 && negative_at.is_none() {
            negative_at = Some(s.k);
        }
        min_mu = min_mu.min(m);
    };
    let state = SolverState::zeros(problem, opts.rho);
    let out = match admm::solve_observed(problem, state, &opts, Some(reference), &mut observer) {
        Ok(out) => out,
        Err(e) => {
            return ["mu_nonneg", "v_descent"]
                .into_iter()
                .map(|name| CheckResult {
                    name,
                    passed: false,
                    detail: format!("solver failed: {e}"),
                })
                .collect()
        }
    };
    let mu = CheckResult {
        name: "mu_nonneg",
        passed: negative_at.is_none(),
        detail: match negative_at {
            None => format!("min mu {min_mu:e} over {} rounds", out.state.k),
            Some(k) => format!("negative mu at round {k}, min {min_mu:e}"),
        },
    };
    let vs: Vec<f64> = out.trace.iter().filter_map(|m| m.v_k).collect();
    let v = match vs.first() {
        None => CheckResult {
            name: "v_descent",
            passed: false,
            detail: "no V values recorded".into(),
        },
        Some(&v0) => {
            let tol = V_DESCENT_TOL * (1.0 + v0);
            let (worst, at) = vs
                .windows(2)
                .enumerate()
                .map(|(k, w)| (w[1] - w[0], k + 2))
                .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a });
            CheckResult {
                name: "v_descent",
                passed: worst <= tol,
                detail: format!(
                    "V0 {v0:.4e}, final {:.4e}, largest increase {worst:.3e} at k={at}, tol {tol:.3e}",
                    vs[vs.len() - 1]
                ),
            }
        }
    };
    vec![mu, v]
}

pub fn verify(problem: &ConsensusProblem, reference: &ReferenceSolution, opts: &AdmmOptions) -> Vec<CheckResult> {
    let mut out = vec![check_gradients(problem), check_affinity(problem)];
    out.extend(check_run(problem, reference, opts));
    out
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use nlc_admm::linalg::Matrix;
    use nlc_admm::oracle::{ClosureOracle, Oracle};
    use nlc_admm::problem::ConstraintBatch;
    use nlc_admm::reference;
    use nlc_admm::zoo;

    use super::*;

    fn toy_opts() -> AdmmOptions {
        AdmmOptions {
            rho: 100.0,
            stopping: StoppingRule::iterations(200),
            ..AdmmOptions::default()
        }
    }

    #[test]
    fn toy_problem_passes_everything() {
        let p = zoo::toy_1d_qp();
        let mut long = toy_opts();
        long.stopping = StoppingRule::iterations(10 * long.stopping.max_iters);
        let run = admm::solve(&p, &long, None).unwrap();
        let r = reference::with_run_duals(reference::toy_reference(&p), &run.state);
        let results = verify(&p, &r, &toy_opts());
        let names: Vec<&str> = results.iter().map(|r| r.name).collect();
        assert_eq!(names, ["gradient", "affine", "mu_nonneg", "v_descent"]);
        assert!(all_passed(&results), "{results:?}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        // f(x) = x², reported derivative 2x + 0.1
        let bad: Oracle = Arc::new(ClosureOracle::new(1, 1, |x| {
            (vec![x[0] * x[0]], Matrix::from_rows(&[vec![2.0 * x[0] + 0.1]]))
        }));
        let p = ConsensusProblem::new(
            1,
            vec![ConstraintBatch {
                index: 0,
                objective: bad,
                ineq: None,
                eq: None,
                local_dim: 0,
            }],
        )
        .unwrap();
        let r = check_gradients(&p);
        assert!(!r.passed);
        assert!(r.to_string().starts_with("FAIL gradient"));
    }
}
