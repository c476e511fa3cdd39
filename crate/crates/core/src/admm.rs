//! The two-loop extended ADMM and its building blocks.
//!
//! Inequality constraints `g0(x) <= 0` enter the augmented Lagrangian as
//! equalities `max(0, g0(x))² = 0` with multipliers `μ_g`; affine equalities
//! carry `μ_h`; batch copies of the shared variable are tied to `z` through
//! `λ`. One outer iteration is: every batch minimizes its piece of the
//! augmented Lagrangian and updates its own `μ`, then the coordinator
//! averages into `z` and moves every `λ`.

use std::time::Instant;

use crate::error::{InnerError, SolveError};
use crate::harness::{self, AssignmentPolicy, BatchReport, RoundRequest};
use crate::lbfgs::{self, InnerResult, InnerSolverOptions, SmoothObjective};
use crate::linalg::{self, dist_inf, dist_sq, norm_sq};
use crate::oracle::hinge_sq;
use crate::problem::{ConsensusProblem, ConstraintBatch, GeneralProblem};

/// Primal and dual iterates of the consensus solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub k: usize,
    /// Batch vectors `[shared | local]`.
    pub x: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub mu_g: Vec<Vec<f64>>,
    pub mu_h: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub rho: f64,
}

impl SolverState {
    /// All-zero start.
    pub fn zeros(problem: &ConsensusProblem, rho: f64) -> Self {
        let s = problem.shared_dim;
        Self {
            k: 0,
            x: (0..problem.m()).map(|i| vec![0.0; problem.batch_dim(i)]).collect(),
            z: vec![0.0; s],
            mu_g: problem.batches.iter().map(|b| vec![0.0; b.n_ineq()]).collect(),
            mu_h: problem.batches.iter().map(|b| vec![0.0; b.n_eq()]).collect(),
            lambda: vec![vec![0.0; s]; problem.m()],
            rho,
        }
    }

    pub fn check_dims(&self, problem: &ConsensusProblem) -> Result<(), SolveError> {
        let m = problem.m();
        let ok = self.x.len() == m
            && self.mu_g.len() == m
            && self.mu_h.len() == m
            && self.lambda.len() == m
            && self.z.len() == problem.shared_dim
            && problem.batches.iter().enumerate().all(|(i, b)| {
                self.x[i].len() == problem.batch_dim(i)
                    && self.mu_g[i].len() == b.n_ineq()
                    && self.mu_h[i].len() == b.n_eq()
                    && self.lambda[i].len() == problem.shared_dim
            });
        if ok {
            Ok(())
        } else {
            Err(SolveError::InvalidConfig(
                "state dimensions do not match the problem".into(),
            ))
        }
    }

    /// Smallest `μ_g` component over all batches (`+∞` if there are none).
    pub fn min_mu_g(&self) -> f64 {
        self.mu_g.iter().flatten().fold(f64::INFINITY, |m, &v| m.min(v))
    }
}

/// High-accuracy solution used for distances and `V^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub z_star: Vec<f64>,
    pub x_star: Vec<Vec<f64>>,
    pub f_star: f64,
    pub mu_g_star: Vec<Vec<f64>>,
    pub mu_h_star: Vec<Vec<f64>>,
    pub lambda_star: Vec<Vec<f64>>,
}

impl ReferenceSolution {
    /// Primal-only reference with zero duals.
    pub fn primal(problem: &ConsensusProblem, z_star: Vec<f64>, x_star: Vec<Vec<f64>>, f_star: f64) -> Self {
        Self {
            z_star,
            x_star,
            f_star,
            mu_g_star: problem.batches.iter().map(|b| vec![0.0; b.n_ineq()]).collect(),
            mu_h_star: problem.batches.iter().map(|b| vec![0.0; b.n_eq()]).collect(),
            lambda_star: vec![vec![0.0; problem.shared_dim]; problem.m()],
        }
    }

    pub fn matches(&self, problem: &ConsensusProblem) -> bool {
        self.z_star.len() == problem.shared_dim
            && self.mu_g_star.len() == problem.m()
            && self.lambda_star.len() == problem.m()
            && problem
                .batches
                .iter()
                .zip(&self.mu_g_star)
                .all(|(b, mu)| mu.len() == b.n_ineq())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationMetrics {
    pub k: usize,
    /// `Σ f_i(x_i)`
    pub f_k: f64,
    pub r_g_norm: f64,
    pub r_h_norm: f64,
    pub r_consensus_norm: f64,
    pub z_change: f64,
    pub dist_z_2: Option<f64>,
    pub dist_z_inf: Option<f64>,
    pub dist_lambda: Option<f64>,
    pub v_k: Option<f64>,
    /// Inner-solver iterations spent in this round, summed over batches.
    pub inner_iters: usize,
    pub elapsed_ns: u64,
    /// Set by the three-loop baseline.
    pub outer_iter: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoppingMode {
    /// Residuals and `z` movement small.
    Residual,
    /// `‖z^k − z*‖_∞` small; needs a reference.
    ReferenceDistance,
    /// Run exactly `max_iters` iterations.
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub mode: StoppingMode,
    pub tol_residual: f64,
    pub tol_z_change: f64,
    pub tol_reference_inf: f64,
    pub max_iters: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            mode: StoppingMode::Residual,
            tol_residual: 1e-4,
            tol_z_change: 1e-6,
            tol_reference_inf: 5e-3,
            max_iters: 10_000,
        }
    }
}

impl StoppingRule {
    pub fn reference(tol_inf: f64, max_iters: usize) -> Self {
        Self {
            mode: StoppingMode::ReferenceDistance,
            tol_reference_inf: tol_inf,
            max_iters,
            ..Self::default()
        }
    }

    pub fn residual(tol: f64, max_iters: usize) -> Self {
        Self {
            mode: StoppingMode::Residual,
            tol_residual: tol,
            max_iters,
            ..Self::default()
        }
    }

    pub fn iterations(max_iters: usize) -> Self {
        Self {
            mode: StoppingMode::MaxIters,
            max_iters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if self.tol_residual > 0.0 && self.tol_z_change > 0.0 && self.tol_reference_inf > 0.0 {
            Ok(())
        } else {
            Err(SolveError::InvalidConfig(format!("non-positive tolerance in {self:?}")))
        }
    }

    pub fn is_met(&self, m: &IterationMetrics) -> bool {
        match self.mode {
            StoppingMode::Residual => {
                m.r_g_norm.max(m.r_h_norm).max(m.r_consensus_norm) <= self.tol_residual
                    && m.z_change <= self.tol_z_change
            }
            StoppingMode::ReferenceDistance => m.dist_z_inf.is_some_and(|d| d <= self.tol_reference_inf),
            StoppingMode::MaxIters => false,
        }
    }
}

/// Value and gradients of the augmented Lagrangian of a [`GeneralProblem`]:
///
/// `f1(x) + f2(z) + ρ/2‖g(x)‖² + μᵀg(x) + ρ/2‖h1(x)+h2(z)‖² + λᵀ(h1(x)+h2(z))`
/// with `g = max(0, g0)²`.
pub fn augmented_lagrangian(
    problem: &GeneralProblem,
    x: &[f64],
    z: &[f64],
    mu: &[f64],
    lambda: &[f64],
    rho: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>), SolveError> {
    if rho <= 0.0 {
        return Err(SolveError::InvalidConfig("rho must be positive".into()));
    }
    if x.len() != problem.n1()
        || z.len() != problem.n2()
        || mu.len() != problem.g0.dim_out()
        || lambda.len() != problem.h1.dim_out()
    {
        return Err(SolveError::InvalidConfig(
            "augmented Lagrangian argument dimensions".into(),
        ));
    }
    let mut gx = vec![0.0; x.len()];
    let mut gz = vec![0.0; z.len()];
    let mut v = [0.0];
    problem.f1.weighted_gradient(x, &mut |_, _| 1.0, &mut v, &mut gx);
    let mut value = v[0];
    problem.f2.weighted_gradient(z, &mut |_, _| 1.0, &mut v, &mut gz);
    value += v[0];

    let mut g0 = vec![0.0; mu.len()];
    problem
        .g0
        .weighted_gradient(x, &mut |j, t| ineq_weight(t, mu[j], rho), &mut g0, &mut gx);
    value += ineq_value(&g0, mu, rho);

    // residual r = h1(x) + h2(z); both pieces share the weight ρ r + λ
    let m = lambda.len();
    let mut h1 = vec![0.0; m];
    let mut h2 = vec![0.0; m];
    problem.h1.values(x, &mut h1);
    problem.h2.values(z, &mut h2);
    let r: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
    let w: Vec<f64> = r.iter().zip(lambda).map(|(ri, li)| rho * ri + li).collect();
    problem.h1.weighted_gradient(x, &mut |j, _| w[j], &mut h1, &mut gx);
    problem.h2.weighted_gradient(z, &mut |j, _| w[j], &mut h2, &mut gz);
    value += eq_value(&r, lambda, rho);

    if !value.is_finite() || !linalg::all_finite(&gx) || !linalg::all_finite(&gz) {
        return Err(SolveError::NonFiniteValue("augmented Lagrangian".into()));
    }
    Ok((value, gx, gz))
}

/// Derivative of `ρ/2·max(0,t)⁴ + μ·max(0,t)²` in `t`.
#[inline]
fn ineq_weight(t: f64, mu: f64, rho: f64) -> f64 {
    if t > 0.0 {
        2.0 * rho * t * t * t + 2.0 * mu * t
    } else {
        0.0
    }
}

fn ineq_value(g0: &[f64], mu: &[f64], rho: f64) -> f64 {
    let mut acc = 0.0;
    for (&t, &m) in g0.iter().zip(mu) {
        let g = hinge_sq(t);
        acc += 0.5 * rho * g * g + m * g;
    }
    acc
}

fn eq_value(h: &[f64], mu: &[f64], rho: f64) -> f64 {
    let mut acc = 0.0;
    for (&t, &m) in h.iter().zip(mu) {
        acc += 0.5 * rho * t * t + m * t;
    }
    acc
}

/// Everything a batch needs for its x-update.
#[derive(Debug, Clone, Copy)]
pub struct BatchDuals<'a> {
    pub z: &'a [f64],
    pub mu_g: &'a [f64],
    pub mu_h: &'a [f64],
    pub lambda: &'a [f64],
    /// Penalty on the inequality and affine constraints.
    pub rho_constraint: f64,
    /// Penalty on the consensus constraint.
    pub rho_consensus: f64,
}

/// The batch's piece of the augmented Lagrangian as a function of `x_i`.
///
/// The first `z.len()` coordinates of `x_i` are the shared part.
pub struct BatchLagrangian<'a> {
    pub batch: &'a ConstraintBatch,
    pub duals: BatchDuals<'a>,
    pub dim: usize,
}

impl SmoothObjective for BatchLagrangian<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = &self.duals;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut v = [0.0];
        self.batch.objective.weighted_gradient(x, &mut |_, _| 1.0, &mut v, grad);
        let mut value = v[0];
        if let Some(g0) = &self.batch.ineq {
            let mut vals = vec![0.0; g0.dim_out()];
            let (rho, mu) = (d.rho_constraint, d.mu_g);
            g0.weighted_gradient(x, &mut |j, t| ineq_weight(t, mu[j], rho), &mut vals, grad);
            value += ineq_value(&vals, mu, rho);
        }
        if let Some(h) = &self.batch.eq {
            let mut vals = vec![0.0; h.dim_out()];
            let (rho, mu) = (d.rho_constraint, d.mu_h);
            h.weighted_gradient(x, &mut |j, t| rho * t + mu[j], &mut vals, grad);
            value += eq_value(&vals, mu, rho);
        }
        let rho = d.rho_consensus;
        for (s, (&zs, &ls)) in d.z.iter().zip(d.lambda).enumerate() {
            let r = x[s] - zs;
            value += 0.5 * rho * r * r + ls * r;
            grad[s] += rho * r + ls;
        }
        value
    }
}

/// Inexact `argmin` of the batch augmented Lagrangian, warm-started at
/// `x_prev`.
///
/// `μ_g` must be componentwise nonnegative; otherwise the subproblem is not
/// convex.
pub fn x_update_batch(
    batch: &ConstraintBatch,
    x_prev: &[f64],
    duals: &BatchDuals<'_>,
    inner: &InnerSolverOptions,
) -> Result<InnerResult, SolveError> {
    debug_assert!(duals.mu_g.iter().all(|&m| m >= 0.0), "negative inequality dual");
    let obj = BatchLagrangian {
        batch,
        duals: *duals,
        dim: x_prev.len(),
    };
    lbfgs::minimize(&obj, x_prev, inner).map_err(|source: InnerError| SolveError::Inner {
        batch: batch.index,
        source,
    })
}

/// `z = (ρ Σ x_i + Σ λ_i) / (ρ m)`, summed in batch order.
pub fn z_update(x_shared: &[&[f64]], lambdas: &[&[f64]], rho: f64) -> Vec<f64> {
    let m = x_shared.len();
    assert_eq!(m, lambdas.len(), "one multiplier per batch");
    assert!(m >= 1 && rho > 0.0);
    let n = x_shared[0].len();
    let mut sx = vec![0.0; n];
    let mut sl = vec![0.0; n];
    for x in x_shared {
        linalg::axpy(1.0, &x[..n], &mut sx);
    }
    for l in lambdas {
        linalg::axpy(1.0, l, &mut sl);
    }
    let denom = rho * m as f64;
    sx.iter().zip(&sl).map(|(a, b)| (rho * a + b) / denom).collect()
}

/// `μ + ρ g`. With `μ >= 0` and `g >= 0` the result stays nonnegative.
pub fn dual_update_mu(mu: &[f64], g_value: &[f64], rho: f64) -> Vec<f64> {
    mu.iter().zip(g_value).map(|(m, g)| m + rho * g).collect()
}

/// `λ + ρ r`.
pub fn dual_update_lambda(lambda: &[f64], residual: &[f64], rho: f64) -> Vec<f64> {
    lambda.iter().zip(residual).map(|(l, r)| l + rho * r).collect()
}

/// Per-batch contributions to the objective and residual norms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchStats {
    pub f: f64,
    /// `‖max(0, g0_i(x_i))²‖²`
    pub g_sq: f64,
    /// `‖h_i(x_i)‖²`
    pub h_sq: f64,
}

/// Evaluates a batch at `x`, returning stats plus the raw `g0` and `h` values.
pub fn batch_eval(batch: &ConstraintBatch, x: &[f64]) -> (BatchStats, Vec<f64>, Vec<f64>) {
    let f = crate::oracle::scalar_value(batch.objective.as_ref(), x);
    let mut g0 = vec![0.0; batch.n_ineq()];
    if let Some(o) = &batch.ineq {
        o.values(x, &mut g0);
    }
    let mut h = vec![0.0; batch.n_eq()];
    if let Some(o) = &batch.eq {
        o.values(x, &mut h);
    }
    let mut g_sq = 0.0;
    for &t in &g0 {
        let g = hinge_sq(t);
        g_sq += g * g;
    }
    (
        BatchStats {
            f,
            g_sq,
            h_sq: norm_sq(&h),
        },
        g0,
        h,
    )
}

/// Fills every metric from the state alone.
pub fn compute_metrics(
    state: &SolverState,
    problem: &ConsensusProblem,
    reference: Option<&ReferenceSolution>,
    z_prev: Option<&[f64]>,
) -> IterationMetrics {
    let stats: Vec<BatchStats> = problem
        .batches
        .iter()
        .zip(&state.x)
        .map(|(b, x)| batch_eval(b, x).0)
        .collect();
    metrics_from_stats(state, problem, &stats, reference, z_prev)
}

pub(crate) fn metrics_from_stats(
    state: &SolverState,
    problem: &ConsensusProblem,
    stats: &[BatchStats],
    reference: Option<&ReferenceSolution>,
    z_prev: Option<&[f64]>,
) -> IterationMetrics {
    let s = problem.shared_dim;
    let mut f_k = 0.0;
    let mut g_sq = 0.0;
    let mut h_sq = 0.0;
    for st in stats {
        f_k += st.f;
        g_sq += st.g_sq;
        h_sq += st.h_sq;
    }
    let mut cons_sq = 0.0;
    for x in &state.x {
        cons_sq += dist_sq(&x[..s], &state.z);
    }
    let z_change = z_prev.map_or(0.0, |zp| dist_sq(&state.z, zp).sqrt());
    let mut m = IterationMetrics {
        k: state.k,
        f_k,
        r_g_norm: g_sq.sqrt(),
        r_h_norm: h_sq.sqrt(),
        r_consensus_norm: cons_sq.sqrt(),
        z_change,
        dist_z_2: None,
        dist_z_inf: None,
        dist_lambda: None,
        v_k: None,
        inner_iters: 0,
        elapsed_ns: 0,
        outer_iter: None,
    };
    if let Some(r) = reference {
        let dz = dist_sq(&state.z, &r.z_star);
        let mut dl = 0.0;
        for (l, ls) in state.lambda.iter().zip(&r.lambda_star) {
            dl += dist_sq(l, ls);
        }
        let mut dmu = 0.0;
        for (mu, ms) in state.mu_g.iter().zip(&r.mu_g_star) {
            dmu += dist_sq(mu, ms);
        }
        let mut dmuh = 0.0;
        for (mu, ms) in state.mu_h.iter().zip(&r.mu_h_star) {
            dmuh += dist_sq(mu, ms);
        }
        m.dist_z_2 = Some(dz.sqrt());
        m.dist_z_inf = Some(dist_inf(&state.z, &r.z_star));
        m.dist_lambda = Some(dl.sqrt());
        m.v_k = Some(lyapunov(dmu, dmuh + dl, dz, state.rho, problem.m()));
    }
    m
}

/// `V = (1/ρ)‖μ_g−μ_g*‖² + (1/ρ)‖(μ_h,λ)−(μ_h*,λ*)‖² + ρ‖h2(z)−h2(z*)‖²`,
/// where `h2(z) = (−z, …, −z)` has `m` copies.
fn lyapunov(dmu_sq: f64, dlambda_sq: f64, dz_sq: f64, rho: f64, m: usize) -> f64 {
    dmu_sq / rho + dlambda_sq / rho + rho * m as f64 * dz_sq
}

/// Options for [`solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmOptions {
    pub rho: f64,
    pub stopping: StoppingRule,
    pub inner: InnerSolverOptions,
    pub workers: usize,
    pub policy: AssignmentPolicy,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            stopping: StoppingRule::default(),
            inner: InnerSolverOptions::default(),
            workers: 1,
            policy: AssignmentPolicy::Contiguous,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub state: SolverState,
    pub trace: Vec<IterationMetrics>,
    pub converged: bool,
    pub total_inner_iters: usize,
}

impl SolveOutcome {
    pub fn last(&self) -> Option<&IterationMetrics> {
        self.trace.last()
    }
}

/// Runs the extended ADMM from the all-zero start until the stopping rule
/// fires or `max_iters` is reached (then `converged = false`).
pub fn solve(
    problem: &ConsensusProblem,
    opts: &AdmmOptions,
    reference: Option<&ReferenceSolution>,
) -> Result<SolveOutcome, SolveError> {
    solve_from(problem, SolverState::zeros(problem, opts.rho), opts, reference)
}

/// As [`solve`], continuing from a given state.
pub fn solve_from(
    problem: &ConsensusProblem,
    state: SolverState,
    opts: &AdmmOptions,
    reference: Option<&ReferenceSolution>,
) -> Result<SolveOutcome, SolveError> {
    solve_observed(problem, state, opts, reference, &mut |_, _| {})
}

/// [`solve_from`] calling `observer` with the state and metrics after every
/// iteration.
pub fn solve_observed(
    problem: &ConsensusProblem,
    mut state: SolverState,
    opts: &AdmmOptions,
    reference: Option<&ReferenceSolution>,
    observer: &mut dyn FnMut(&SolverState, &IterationMetrics),
) -> Result<SolveOutcome, SolveError> {
    if !(opts.rho > 0.0) {
        return Err(SolveError::InvalidConfig("rho must be positive".into()));
    }
    opts.stopping.validate()?;
    opts.inner
        .validate()
        .map_err(|e| SolveError::InvalidConfig(e.to_string()))?;
    state.check_dims(problem)?;
    if opts.stopping.mode == StoppingMode::ReferenceDistance && reference.is_none() {
        return Err(SolveError::InvalidConfig(
            "reference-distance stopping needs a reference".into(),
        ));
    }
    if let Some(r) = reference {
        if !r.matches(problem) {
            return Err(SolveError::InvalidConfig("reference does not match the problem".into()));
        }
    }
    state.rho = opts.rho;
    let rho = opts.rho;
    let s = problem.shared_dim;
    let start = Instant::now();

    let init = state.clone();
    harness::with_transport(problem, &init, opts.workers, opts.policy, |transport| {
        let mut trace = Vec::new();
        let mut converged = false;
        let mut total_inner = 0;
        while state.k < opts.stopping.max_iters {
            let req = RoundRequest {
                z: &state.z,
                lambdas: &state.lambda,
                rho_constraint: rho,
                rho_consensus: rho,
                update_duals: true,
                inner: opts.inner,
            };
            let reports = transport.round(&req)?;
            let stats = absorb_reports(&mut state, reports);
            let inner_iters: usize = stats.iter().map(|(_, it)| it).sum();
            total_inner += inner_iters;

            let z_prev = std::mem::take(&mut state.z);
            let xs: Vec<&[f64]> = state.x.iter().map(|x| &x[..s]).collect();
            let ls: Vec<&[f64]> = state.lambda.iter().map(Vec::as_slice).collect();
            state.z = z_update(&xs, &ls, rho);
            for i in 0..problem.m() {
                let r = linalg::sub(&state.x[i][..s], &state.z);
                state.lambda[i] = dual_update_lambda(&state.lambda[i], &r, rho);
            }
            state.k += 1;

            let batch_stats: Vec<BatchStats> = stats.iter().map(|(st, _)| *st).collect();
            let mut m = metrics_from_stats(&state, problem, &batch_stats, reference, Some(&z_prev));
            m.inner_iters = inner_iters;
            m.elapsed_ns = start.elapsed().as_nanos() as u64;
            if !m.f_k.is_finite() || !linalg::all_finite(&state.z) {
                return Err(SolveError::NonFiniteValue(format!("iteration {}", state.k)));
            }
            let stop = opts.stopping.is_met(&m);
            observer(&state, &m);
            trace.push(m);
            if stop {
                converged = true;
                break;
            }
        }
        if opts.stopping.mode == StoppingMode::MaxIters {
            converged = state.k >= opts.stopping.max_iters;
        }
        Ok(SolveOutcome {
            state: state.clone(),
            trace,
            converged,
            total_inner_iters: total_inner,
        })
    })
}

/// Copies worker results into the coordinator's state; returns per-batch
/// stats and inner iteration counts in batch order.
pub(crate) fn absorb_reports(state: &mut SolverState, reports: Vec<BatchReport>) -> Vec<(BatchStats, usize)> {
    let mut out = Vec::with_capacity(reports.len());
    for r in reports {
        let i = r.index;
        state.x[i] = r.local.x;
        state.mu_g[i] = r.local.mu_g;
        state.mu_h[i] = r.local.mu_h;
        out.push((r.stats, r.inner_iters));
    }
    out
}
