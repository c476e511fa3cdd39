//! High-accuracy solutions used as ground truth by distances, `V^k` and the
//! acceptance checks.
//!
//! Two independent routes work on the merged problem (all batches collapsed
//! into one over `[shared | local_1 … local_m]`):
//!
//! * [`solve_reference`]: a classical augmented Lagrangian on the original
//!   inequalities, `ψ(t) = (max(0, ν + ρt)² − ν²)/(2ρ)`, which converges
//!   linearly and yields the KKT multipliers `ν`;
//! * [`solve_penalty_oracle`]: plain quadratic penalties `ρ/2‖max(0,g0)‖²`
//!   for an increasing schedule, with no multipliers at all.
//!
//! The squared-hinge form used by the ADMM has no finite multiplier for an
//! active constraint, so neither route runs that form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::admm::{ReferenceSolution, SolverState};
use crate::error::{FormatError, ReferenceError, SolveError};
use crate::lbfgs::{self, InnerSolverOptions, SmoothObjective};
use crate::linalg::{self, Matrix};
use crate::oracle::{scalar_value_grad, FunctionOracle};
use crate::problem::{ConsensusProblem, ConstraintBatch};
use crate::zoo::{RobustSvmInstance, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceOptions {
    /// Bound on constraint violation and complementarity.
    pub tight_tol: f64,
    pub rho0: f64,
    pub rho_max: f64,
    pub max_outer: usize,
    pub inner: InnerSolverOptions,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self {
            tight_tol: 1e-9,
            rho0: 10.0,
            rho_max: 1e8,
            max_outer: 200,
            inner: InnerSolverOptions::default()
                .with_grad_tol(1e-10)
                .with_max_iters(50_000),
        }
    }
}

/// Primal point and KKT multipliers of the merged problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedSolution {
    pub x: Vec<f64>,
    pub f: f64,
    /// Multipliers of the original inequalities `g0 <= 0`, in merged order.
    pub nu_g: Vec<f64>,
    pub nu_h: Vec<f64>,
    pub violation: f64,
    pub complementarity: f64,
    pub outer_iters: usize,
}

struct PhrObjective<'a> {
    f: &'a dyn FunctionOracle,
    g: Option<&'a dyn FunctionOracle>,
    h: Option<&'a dyn FunctionOracle>,
    nu_g: &'a [f64],
    nu_h: &'a [f64],
    rho: f64,
}

impl SmoothObjective for PhrObjective<'_> {
    fn dim(&self) -> usize {
        self.f.dim_in()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut value = scalar_value_grad(self.f, x, grad);
        let rho = self.rho;
        if let Some(g) = self.g {
            let mut vals = vec![0.0; g.dim_out()];
            let nu = self.nu_g;
            g.weighted_gradient(x, &mut |j, t| (nu[j] + rho * t).max(0.0), &mut vals, grad);
            for (t, n) in vals.iter().zip(nu) {
                let a = (n + rho * t).max(0.0);
                value += (a * a - n * n) / (2.0 * rho);
            }
        }
        if let Some(h) = self.h {
            let mut vals = vec![0.0; h.dim_out()];
            let nu = self.nu_h;
            h.weighted_gradient(x, &mut |j, t| nu[j] + rho * t, &mut vals, grad);
            for (t, n) in vals.iter().zip(nu) {
                value += n * t + 0.5 * rho * t * t;
            }
        }
        value
    }
}

fn merged_batch(problem: &ConsensusProblem) -> ConstraintBatch {
    let mut merged = problem.merged();
    merged.batches.swap_remove(0)
}

fn violation(g0: &[f64], h: &[f64]) -> f64 {
    let vg = g0.iter().fold(0.0f64, |m, &t| m.max(t));
    vg.max(linalg::norm_inf(h))
}

fn values(o: &Option<crate::oracle::Oracle>, x: &[f64]) -> Vec<f64> {
    match o {
        Some(o) => {
            let mut v = vec![0.0; o.dim_out()];
            o.values(x, &mut v);
            v
        }
        None => Vec::new(),
    }
}

/// Classical augmented Lagrangian on the merged problem.
///
/// The penalty grows tenfold whenever the violation fails to shrink by a
/// factor of four.
pub fn phr_solve(problem: &ConsensusProblem, opts: &ReferenceOptions) -> Result<MergedSolution, ReferenceError> {
    let b = merged_batch(problem);
    phr_loop(
        vec![0.0; problem.merged_dim()],
        b.n_ineq(),
        b.n_eq(),
        opts,
        |x, nu_g, nu_h, rho| {
            let obj = PhrObjective {
                f: b.objective.as_ref(),
                g: b.ineq.as_deref(),
                h: b.eq.as_deref(),
                nu_g,
                nu_h,
                rho,
            };
            let res = lbfgs::minimize(&obj, x, &opts.inner).map_err(|e| SolveError::Inner { batch: 0, source: e })?;
            Ok((res.x_min, res.grad_norm))
        },
        |x| (values(&b.ineq, x), values(&b.eq, x)),
        |x| crate::oracle::scalar_value(b.objective.as_ref(), x),
    )
}

/// Outer multiplier loop shared by the generic and structured solvers.
/// `step` minimizes the augmented Lagrangian from a warm start and returns
/// the minimizer with its gradient norm.
fn phr_loop(
    mut x: Vec<f64>,
    n_g: usize,
    n_h: usize,
    opts: &ReferenceOptions,
    mut step: impl FnMut(&[f64], &[f64], &[f64], f64) -> Result<(Vec<f64>, f64), ReferenceError>,
    constraints: impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>),
    objective: impl Fn(&[f64]) -> f64,
) -> Result<MergedSolution, ReferenceError> {
    let mut nu_g = vec![0.0; n_g];
    let mut nu_h = vec![0.0; n_h];
    let mut rho = opts.rho0;
    let mut prev_viol = f64::INFINITY;
    for outer in 1..=opts.max_outer {
        let (x_new, grad_norm) = step(&x, &nu_g, &nu_h, rho)?;
        x = x_new;
        let (g0, h) = constraints(&x);
        for (n, &t) in nu_g.iter_mut().zip(&g0) {
            *n = (*n + rho * t).max(0.0);
        }
        for (n, &t) in nu_h.iter_mut().zip(&h) {
            *n += rho * t;
        }
        let viol = violation(&g0, &h);
        let compl = g0.iter().zip(&nu_g).fold(0.0f64, |m, (&t, &n)| m.max(n.min(-t).abs()));
        if viol <= opts.tight_tol && compl <= opts.tight_tol && grad_norm <= opts.inner.grad_tol.max(1e-8) {
            return Ok(MergedSolution {
                f: objective(&x),
                x,
                nu_g,
                nu_h,
                violation: viol,
                complementarity: compl,
                outer_iters: outer,
            });
        }
        if viol > 0.25 * prev_viol {
            rho = (rho * 10.0).min(opts.rho_max);
        }
        prev_viol = viol;
    }
    Err(ReferenceError::NoConvergence(format!(
        "augmented Lagrangian stopped after {} outer iterations at violation {prev_viol:e}",
        opts.max_outer
    )))
}

/// The same augmented Lagrangian specialised to a robust SVM instance, with
/// every slack minimized in closed form so the inner solve runs over `w`
/// alone. Returns the merged point and multipliers in the layout of
/// `inst.problem()`.
pub fn solve_robust_svm_merged(
    inst: &RobustSvmInstance,
    opts: &ReferenceOptions,
) -> Result<MergedSolution, ReferenceError> {
    inst.validate()?;
    let n = inst.n_features;
    let order: Vec<usize> = inst.batches.iter().flatten().copied().collect();
    let np = order.len();
    let sigma: Vec<Matrix> = order.iter().map(|&i| inst.factor(i).gram()).collect();
    let reduced = SvmReduced {
        inst,
        order: &order,
        sigma: &sigma,
    };
    // merged multiplier layout: per batch, cone rows then slack rows
    let mut cone_row = vec![0; np];
    let mut slack_row = vec![0; np];
    let mut off = 0;
    let mut k = 0;
    for b in &inst.batches {
        for j in 0..b.len() {
            cone_row[k] = off + j;
            slack_row[k] = off + b.len() + j;
            k += 1;
        }
        off += 2 * b.len();
    }
    let gather = |nu: &[f64]| -> (Vec<f64>, Vec<f64>) {
        (
            cone_row.iter().map(|&r| nu[r]).collect(),
            slack_row.iter().map(|&r| nu[r]).collect(),
        )
    };
    phr_loop(
        vec![0.0; n + np],
        2 * np,
        0,
        opts,
        |x, nu_g, _, rho| {
            let (nu_c, nu_s) = gather(nu_g);
            let obj = SvmReducedObjective {
                reduced: &reduced,
                nu_c: &nu_c,
                nu_s: &nu_s,
                rho,
            };
            let res =
                lbfgs::minimize(&obj, &x[..n], &opts.inner).map_err(|e| SolveError::Inner { batch: 0, source: e })?;
            let mut merged = res.x_min.clone();
            let mut sw = vec![0.0; n];
            for k in 0..np {
                let (r, _) = reduced.margin(k, &res.x_min, &mut sw);
                merged.push(slack_minimizer(r, nu_c[k], nu_s[k], inst.c, rho).0);
            }
            Ok((merged, res.grad_norm))
        },
        |x| {
            let (w, xi) = x.split_at(n);
            let mut g0 = vec![0.0; 2 * np];
            let mut sw = vec![0.0; n];
            for k in 0..np {
                g0[cone_row[k]] = reduced.margin(k, w, &mut sw).0 - xi[k];
                g0[slack_row[k]] = -xi[k];
            }
            (g0, Vec::new())
        },
        |x| inst.objective(&x[..n], &x[n..]),
    )
}

struct SvmReduced<'a> {
    inst: &'a RobustSvmInstance,
    /// Point indices in merged order.
    order: &'a [usize],
    sigma: &'a [Matrix],
}

impl SvmReduced<'_> {
    /// `1 + κ‖F w‖ − y xᵀw` for the `k`-th point in merged order, with
    /// `Σ w` left in `sw`; also returns the smoothed norm.
    fn margin(&self, k: usize, w: &[f64], sw: &mut [f64]) -> (f64, f64) {
        let i = self.order[k];
        self.sigma[k].mul_vec_into(w, sw);
        let s = (linalg::dot(w, sw).max(0.0) + NORM_EPS * NORM_EPS).sqrt();
        let r = 1.0 + self.inst.kappa[i] * (s - NORM_EPS) - self.inst.labels[i] * linalg::dot(w, &self.inst.points[i]);
        (r, s)
    }
}

/// Minimizer over `ξ` of `cξ + ψ(ν_c, r − ξ) + ψ(ν_s, −ξ)` together with
/// the updated cone multiplier `max(0, ν_c + ρ(r − ξ))`.
fn slack_minimizer(r: f64, nu_c: f64, nu_s: f64, c: f64, rho: f64) -> (f64, f64) {
    // derivative c − a_c(ξ) − a_s(ξ) is nondecreasing, zero crossings of
    // a_c and a_s at these breakpoints
    let bc = r + nu_c / rho;
    let bs = nu_s / rho;
    let lo = bc.min(bs);
    let active_sum = (nu_c + rho * (r - lo)).max(0.0) + (nu_s - rho * lo).max(0.0);
    let xi = if active_sum <= c {
        (nu_c + rho * r + nu_s - c) / (2.0 * rho)
    } else if bc > bs {
        r + (nu_c - c) / rho
    } else {
        (nu_s - c) / rho
    };
    (xi, (nu_c + rho * (r - xi)).max(0.0))
}

fn psi(nu: f64, t: f64, rho: f64) -> f64 {
    let a = (nu + rho * t).max(0.0);
    (a * a - nu * nu) / (2.0 * rho)
}

struct SvmReducedObjective<'a> {
    reduced: &'a SvmReduced<'a>,
    nu_c: &'a [f64],
    nu_s: &'a [f64],
    rho: f64,
}

impl SmoothObjective for SvmReducedObjective<'_> {
    fn dim(&self) -> usize {
        self.reduced.inst.n_features
    }

    fn value_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let inst = self.reduced.inst;
        let c = inst.c;
        let rho = self.rho;
        grad.copy_from_slice(w);
        let mut value = 0.5 * linalg::norm_sq(w);
        let mut sw = vec![0.0; w.len()];
        for (k, &i) in self.reduced.order.iter().enumerate() {
            let (r, s) = self.reduced.margin(k, w, &mut sw);
            let (xi, a) = slack_minimizer(r, self.nu_c[k], self.nu_s[k], c, rho);
            value += c * xi + psi(self.nu_c[k], r - xi, rho) + psi(self.nu_s[k], -xi, rho);
            if a != 0.0 {
                // envelope theorem: only the explicit dependence on w counts
                linalg::axpy(a * inst.kappa[i] / s, &sw, grad);
                linalg::axpy(-a * inst.labels[i], &inst.points[i], grad);
            }
        }
        value
    }
}

/// High-accuracy primal solution plus consensus multipliers.
///
/// `λ_i* = −∇_shared (f_i + ν_iᵀ g0_i + η_iᵀ h_i)(x_i*)` from the KKT
/// multipliers. The squared-hinge duals `μ*` have no finite KKT value and
/// are left at zero; see [`with_run_duals`].
pub fn solve_reference(
    problem: &ConsensusProblem,
    opts: &ReferenceOptions,
) -> Result<ReferenceSolution, ReferenceError> {
    let sol = phr_solve(problem, opts)?;
    Ok(reference_from_merged(problem, &sol))
}

pub fn reference_from_merged(problem: &ConsensusProblem, sol: &MergedSolution) -> ReferenceSolution {
    let s = problem.shared_dim;
    let x_star = problem.split_merged(&sol.x);
    let z_star = sol.x[..s].to_vec();
    let f_star = problem.objective(&x_star);
    let mut lambda_star = Vec::with_capacity(problem.m());
    let mut og = 0;
    let mut oh = 0;
    for (b, xi) in problem.batches.iter().zip(&x_star) {
        let mut grad = vec![0.0; xi.len()];
        b.objective
            .weighted_gradient(xi, &mut |_, _| 1.0, &mut [0.0], &mut grad);
        if let Some(g) = &b.ineq {
            let nu = &sol.nu_g[og..og + b.n_ineq()];
            g.weighted_gradient(xi, &mut |j, _| nu[j], &mut vec![0.0; b.n_ineq()], &mut grad);
        }
        if let Some(h) = &b.eq {
            let nu = &sol.nu_h[oh..oh + b.n_eq()];
            h.weighted_gradient(xi, &mut |j, _| nu[j], &mut vec![0.0; b.n_eq()], &mut grad);
        }
        og += b.n_ineq();
        oh += b.n_eq();
        lambda_star.push(grad[..s].iter().map(|v| -v).collect());
    }
    let mut r = ReferenceSolution::primal(problem, z_star, x_star, f_star);
    r.lambda_star = lambda_star;
    r
}

/// Closed-form solution of `min (x − 2)²  s.t.  x ≤ 1`: `x* = 1`, `f* = 1`,
/// and `λ* = −(2(x* − 2) + ν*) = 0` with `ν* = 2`.
pub fn toy_reference(problem: &ConsensusProblem) -> ReferenceSolution {
    ReferenceSolution::primal(problem, vec![1.0], vec![vec![1.0]], 1.0)
}

/// Reference for [`RobustSvmInstance::problem_with_slack_unit`]; the
/// constraint scale does not enter `z*`, `f*` or `λ*`.
pub fn robust_svm_reference(
    inst: &RobustSvmInstance,
    slack_unit: f64,
    opts: &ReferenceOptions,
) -> Result<ReferenceSolution, ReferenceError> {
    let sol = solve_robust_svm_merged(inst, opts)?;
    let mut r = reference_from_merged(&inst.problem()?, &sol);
    let n = inst.n_features;
    for x in &mut r.x_star {
        for v in &mut x[n..] {
            *v /= slack_unit;
        }
    }
    Ok(r)
}

/// Replaces the dual part of `reference` by the duals of a long run of the
/// same configuration. `μ` grows monotonically along a run, so these bound
/// every earlier iterate from above.
pub fn with_run_duals(mut reference: ReferenceSolution, long_run: &SolverState) -> ReferenceSolution {
    reference.mu_g_star = long_run.mu_g.clone();
    reference.mu_h_star = long_run.mu_h.clone();
    reference.lambda_star = long_run.lambda.clone();
    reference
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyResult {
    /// Merged primal point at the last penalty.
    pub x: Vec<f64>,
    pub f: f64,
    /// `(ρ_K f_K − ρ_{K−1} f_{K−1}) / (ρ_K − ρ_{K−1})`, cancelling the
    /// `O(1/ρ)` bias of the penalty optimum.
    pub f_extrapolated: f64,
    /// `(ρ, f, violation)` per schedule step.
    pub steps: Vec<(f64, f64, f64)>,
}

struct PenaltyObjective<'a> {
    f: &'a dyn FunctionOracle,
    g: Option<&'a dyn FunctionOracle>,
    h: Option<&'a dyn FunctionOracle>,
    rho: f64,
}

impl SmoothObjective for PenaltyObjective<'_> {
    fn dim(&self) -> usize {
        self.f.dim_in()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut value = scalar_value_grad(self.f, x, grad);
        let rho = self.rho;
        if let Some(g) = self.g {
            let mut vals = vec![0.0; g.dim_out()];
            g.weighted_gradient(x, &mut |_, t| rho * t.max(0.0), &mut vals, grad);
            for t in vals {
                let a = t.max(0.0);
                value += 0.5 * rho * a * a;
            }
        }
        if let Some(h) = self.h {
            let mut vals = vec![0.0; h.dim_out()];
            h.weighted_gradient(x, &mut |_, t| rho * t, &mut vals, grad);
            value += 0.5 * rho * linalg::norm_sq(&vals);
        }
        value
    }
}

/// `1, 2, 4, …` up to and including `to`.
pub fn doubling_schedule(from: f64, to: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = from;
    while r <= to * (1.0 + 1e-12) {
        out.push(r);
        r *= 2.0;
    }
    out
}

/// Quadratic-penalty solves of the merged problem over `rho_schedule`,
/// each warm-started from the previous one.
pub fn solve_penalty_oracle(
    problem: &ConsensusProblem,
    rho_schedule: &[f64],
    inner: &InnerSolverOptions,
) -> Result<PenaltyResult, ReferenceError> {
    if rho_schedule.is_empty() || rho_schedule.iter().any(|&r| !(r > 0.0)) {
        return Err(SolveError::InvalidConfig("penalty schedule must be non-empty and positive".into()).into());
    }
    let b = merged_batch(problem);
    let mut x = vec![0.0; problem.merged_dim()];
    let mut steps = Vec::with_capacity(rho_schedule.len());
    for &rho in rho_schedule {
        let obj = PenaltyObjective {
            f: b.objective.as_ref(),
            g: b.ineq.as_deref(),
            h: b.eq.as_deref(),
            rho,
        };
        let res = lbfgs::minimize(&obj, &x, inner)
            .map_err(|e| ReferenceError::NoConvergence(format!("penalty step rho = {rho}: {e}")))?;
        x = res.x_min;
        let f = crate::oracle::scalar_value(b.objective.as_ref(), &x);
        steps.push((rho, f, violation(&values(&b.ineq, &x), &values(&b.eq, &x))));
    }
    let (rk, fk, _) = *steps.last().expect("schedule is non-empty");
    let f_extrapolated = match steps.len() {
        1 => fk,
        n => {
            let (rp, fp, _) = steps[n - 2];
            (rk * fk - rp * fp) / (rk - rp)
        }
    };
    Ok(PenaltyResult {
        x,
        f: fk,
        f_extrapolated,
        steps,
    })
}

const CACHE_MAGIC: &str = "nlc-admm-reference";
const CACHE_VERSION: u32 = 1;

/// Writes a reference as versioned text, every number with 17 significant
/// digits so it reads back bit-for-bit.
pub fn format_reference(r: &ReferenceSolution, instance_hash: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CACHE_MAGIC} {CACHE_VERSION}");
    let _ = writeln!(out, "instance {instance_hash}");
    let _ = writeln!(out, "f_star {:.16e}", r.f_star);
    write_vec(&mut out, "z_star", &r.z_star);
    for (name, vs) in [
        ("x_star", &r.x_star),
        ("mu_g_star", &r.mu_g_star),
        ("mu_h_star", &r.mu_h_star),
        ("lambda_star", &r.lambda_star),
    ] {
        let _ = writeln!(out, "{name} {}", vs.len());
        for v in vs {
            write_vec(&mut out, "-", v);
        }
    }
    out
}

fn write_vec(out: &mut String, name: &str, v: &[f64]) {
    let _ = write!(out, "{name} {}", v.len());
    for x in v {
        let _ = write!(out, " {x:.16e}");
    }
    out.push('\n');
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), FormatError> {
        let (i, line) = self.it.next().ok_or(FormatError::Parse {
            line: 0,
            msg: format!("unexpected end of file, expected {key}"),
        })?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.first() != Some(&key) {
            return Err(FormatError::Parse {
                line: i + 1,
                msg: format!("expected {key}"),
            });
        }
        Ok((i + 1, toks[1..].to_vec()))
    }

    fn vec(&mut self, key: &str) -> Result<Vec<f64>, FormatError> {
        let (line, toks) = self.next(key)?;
        let n: usize = parse_tok(toks.first().copied(), line)?;
        if toks.len() != n + 1 {
            return Err(FormatError::Parse {
                line,
                msg: format!("expected {n} values"),
            });
        }
        toks[1..].iter().map(|t| parse_tok(Some(t), line)).collect()
    }

    fn vecs(&mut self, key: &str) -> Result<Vec<Vec<f64>>, FormatError> {
        let (line, toks) = self.next(key)?;
        let n: usize = parse_tok(toks.first().copied(), line)?;
        (0..n).map(|_| self.vec("-")).collect()
    }
}

fn parse_tok<T: std::str::FromStr>(t: Option<&str>, line: usize) -> Result<T, FormatError> {
    t.and_then(|s| s.parse().ok()).ok_or(FormatError::Parse {
        line,
        msg: format!("bad token {t:?}"),
    })
}

/// Parses [`format_reference`] output; `expected_hash` guards against a
/// cache entry of another instance.
pub fn parse_reference(text: &str, expected_hash: Option<&str>) -> Result<ReferenceSolution, FormatError> {
    let mut lines = Lines {
        it: text.lines().enumerate(),
    };
    let (_, magic) = lines.next(CACHE_MAGIC)?;
    if magic != [CACHE_VERSION.to_string()] {
        return Err(FormatError::Version(magic.join(" ")));
    }
    let (line, hash) = lines.next("instance")?;
    let hash = hash.first().ok_or(FormatError::Parse {
        line,
        msg: "missing hash".into(),
    })?;
    if let Some(e) = expected_hash {
        if e != *hash {
            return Err(FormatError::HashMismatch {
                expected: e.to_string(),
                found: hash.to_string(),
            });
        }
    }
    let (line, f) = lines.next("f_star")?;
    let f_star = parse_tok(f.first().copied(), line)?;
    Ok(ReferenceSolution {
        f_star,
        z_star: lines.vec("z_star")?,
        x_star: lines.vecs("x_star")?,
        mu_g_star: lines.vecs("mu_g_star")?,
        mu_h_star: lines.vecs("mu_h_star")?,
        lambda_star: lines.vecs("lambda_star")?,
    })
}

pub fn cache_path(dir: &Path, instance_hash: &str, tag: &str) -> PathBuf {
    dir.join(format!("{instance_hash}-{tag}.ref"))
}

/// Loads the cached reference for `instance_hash`, or computes and stores it.
/// An unreadable or mismatching cache file is recomputed and overwritten.
pub fn cached_reference<E>(
    dir: &Path,
    instance_hash: &str,
    tag: &str,
    compute: impl FnOnce() -> Result<ReferenceSolution, E>,
) -> Result<ReferenceSolution, E>
where
    E: From<FormatError>,
{
    let path = cache_path(dir, instance_hash, tag);
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(r) = parse_reference(&text, Some(instance_hash)) {
            return Ok(r);
        }
    }
    let r = compute()?;
    std::fs::create_dir_all(dir).map_err(FormatError::from)?;
    std::fs::write(&path, format_reference(&r, instance_hash)).map_err(FormatError::from)?;
    Ok(r)
}
