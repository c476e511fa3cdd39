//! Three-nested-loop comparator: an augmented Lagrangian over the squared
//! hinge and affine constraints outside, plain consensus ADMM in the
//! middle, the unconstrained inner solver innermost.
//!
//! The outer loop holds `μ` fixed while the middle loop drives consensus to
//! `inner_admm_tol`, then applies `μ ← μ + ρ_outer·g(x)` once. Warm starts
//! carry `x`, `z` and `λ` across outer iterations.

use std::time::Instant;

use crate::admm::{
    absorb_reports, dual_update_lambda, metrics_from_stats, z_update, BatchStats, IterationMetrics, ReferenceSolution,
    SolverState,
};
use crate::error::{LoopLevel, SolveError};
use crate::harness::{self, AssignmentPolicy, RoundRequest};
use crate::lbfgs::InnerSolverOptions;
use crate::linalg;
use crate::problem::ConsensusProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    /// Penalty on the constraints and step of the outer dual update.
    pub rho_outer: f64,
    /// Consensus penalty of the middle loop.
    pub rho_admm: f64,
    /// Stop once `max(‖g(x)‖, ‖h(x)‖) <= outer_tol` after a middle loop.
    pub outer_tol: f64,
    /// Middle loop ends once `max(‖x − z‖, ρ_admm √m ‖Δz‖) <= inner_admm_tol`.
    pub inner_admm_tol: f64,
    pub max_outer: usize,
    /// Per outer iteration.
    pub max_middle: usize,
    /// `ρ_outer` is multiplied by this after every outer update.
    pub growth: f64,
    /// Stop as soon as `‖z − z*‖_∞` drops to this; needs a reference.
    pub reference_tol_inf: Option<f64>,
    pub inner: InnerSolverOptions,
    pub workers: usize,
    pub policy: AssignmentPolicy,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            rho_outer: 1.0,
            rho_admm: 1.0,
            outer_tol: 1e-6,
            inner_admm_tol: 1e-6,
            max_outer: 100,
            max_middle: 10_000,
            growth: 1.0,
            reference_tol_inf: None,
            inner: InnerSolverOptions::default(),
            workers: 1,
            policy: AssignmentPolicy::Contiguous,
        }
    }
}

impl BaselineOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        let positive = [
            ("rho_outer", self.rho_outer),
            ("rho_admm", self.rho_admm),
            ("outer_tol", self.outer_tol),
            ("inner_admm_tol", self.inner_admm_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SolveError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return Err(SolveError::InvalidConfig(format!(
                "growth must be >= 1, got {}",
                self.growth
            )));
        }
        if self.max_outer == 0 || self.max_middle == 0 {
            return Err(SolveError::InvalidConfig("iteration limits must be positive".into()));
        }
        if let Some(t) = self.reference_tol_inf {
            if !(t > 0.0) {
                return Err(SolveError::InvalidConfig(format!(
                    "reference tolerance must be positive, got {t}"
                )));
            }
        }
        self.inner
            .validate()
            .map_err(|e| SolveError::InvalidConfig(e.to_string()))
    }
}

/// Work spent by a baseline run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCounters {
    pub outer_iters: usize,
    pub middle_iters: usize,
    pub inner_iters: usize,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub state: SolverState,
    /// One entry per middle iteration, tagged with its outer iteration.
    pub trace: Vec<IterationMetrics>,
    pub converged: bool,
    pub work: WorkCounters,
}

/// Runs the baseline from the all-zero state.
pub fn baseline_solve(
    problem: &ConsensusProblem,
    opts: &BaselineOptions,
    reference: Option<&ReferenceSolution>,
) -> Result<BaselineOutcome, SolveError> {
    opts.validate()?;
    if opts.reference_tol_inf.is_some() && reference.is_none() {
        return Err(SolveError::InvalidConfig(
            "reference-distance stopping needs a reference".into(),
        ));
    }
    if let Some(r) = reference {
        if !r.matches(problem) {
            return Err(SolveError::InvalidConfig("reference does not match the problem".into()));
        }
    }
    let mut state = SolverState::zeros(problem, opts.rho_admm);
    let s = problem.shared_dim;
    let m = problem.m();
    let start = Instant::now();
    let init = state.clone();
    harness::with_transport(problem, &init, opts.workers, opts.policy, |transport| {
        let mut trace = Vec::new();
        let mut work = WorkCounters::default();
        let mut rho_outer = opts.rho_outer;
        for outer in 1..=opts.max_outer {
            work.outer_iters = outer;
            let mut middle = 0;
            let last = loop {
                if middle == opts.max_middle {
                    return Err(SolveError::MaxItersExceeded {
                        level: LoopLevel::Middle,
                        max_iters: opts.max_middle,
                    });
                }
                let req = RoundRequest {
                    z: &state.z,
                    lambdas: &state.lambda,
                    rho_constraint: rho_outer,
                    rho_consensus: opts.rho_admm,
                    update_duals: false,
                    inner: opts.inner,
                };
                let reports = transport.round(&req)?;
                let stats = absorb_reports(&mut state, reports);
                let inner_iters: usize = stats.iter().map(|(_, it)| it).sum();
                work.inner_iters += inner_iters;
                work.middle_iters += 1;
                middle += 1;

                let z_prev = std::mem::take(&mut state.z);
                let xs: Vec<&[f64]> = state.x.iter().map(|x| &x[..s]).collect();
                let ls: Vec<&[f64]> = state.lambda.iter().map(Vec::as_slice).collect();
                state.z = z_update(&xs, &ls, opts.rho_admm);
                for i in 0..m {
                    let r = linalg::sub(&state.x[i][..s], &state.z);
                    state.lambda[i] = dual_update_lambda(&state.lambda[i], &r, opts.rho_admm);
                }
                state.k += 1;

                let batch_stats: Vec<BatchStats> = stats.iter().map(|(st, _)| *st).collect();
                let mut metrics = metrics_from_stats(&state, problem, &batch_stats, reference, Some(&z_prev));
                metrics.inner_iters = inner_iters;
                metrics.elapsed_ns = start.elapsed().as_nanos() as u64;
                metrics.outer_iter = Some(outer);
                if !metrics.f_k.is_finite() || !linalg::all_finite(&state.z) {
                    return Err(SolveError::NonFiniteValue(format!("middle iteration {}", state.k)));
                }
                let hit_reference = matches!(
                    (opts.reference_tol_inf, metrics.dist_z_inf),
                    (Some(t), Some(d)) if d <= t
                );
                let dual_res = opts.rho_admm * (m as f64).sqrt() * metrics.z_change;
                let middle_done = metrics.r_consensus_norm.max(dual_res) <= opts.inner_admm_tol;
                trace.push(metrics);
                if hit_reference {
                    return Ok(BaselineOutcome {
                        state: state.clone(),
                        trace,
                        converged: true,
                        work,
                    });
                }
                if middle_done {
                    break metrics;
                }
            };
            if opts.reference_tol_inf.is_none() && last.r_g_norm.max(last.r_h_norm) <= opts.outer_tol {
                return Ok(BaselineOutcome {
                    state: state.clone(),
                    trace,
                    converged: true,
                    work,
                });
            }
            absorb_reports(&mut state, transport.dual_step(rho_outer)?);
            rho_outer *= opts.growth;
        }
        Err(SolveError::MaxItersExceeded {
            level: LoopLevel::Outer,
            max_iters: opts.max_outer,
        })
    })
}
