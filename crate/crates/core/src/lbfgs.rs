//! Limited-memory BFGS with backtracking Armijo line search.
//!
//! Used for every x-update and for the innermost loop of the baseline. All
//! subproblems are unconstrained, so there is no bound handling.

use std::collections::VecDeque;

use crate::error::InnerError;
use crate::linalg::{self, dot, norm_inf};
use crate::oracle::{scalar_value_grad, FunctionOracle};

/// Maximum number of step halvings before the line search gives up.
pub const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchParams {
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            backtrack: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSolverOptions {
    /// Stop once `‖∇f‖_∞ <= grad_tol`.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub line_search: LineSearchParams,
}

impl Default for InnerSolverOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iters: 500,
            memory: 10,
            line_search: LineSearchParams::default(),
        }
    }
}

impl InnerSolverOptions {
    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }

    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn validate(&self) -> Result<(), InnerError> {
        let ls = &self.line_search;
        let ok = self.grad_tol > 0.0
            && self.max_iters >= 1
            && self.memory >= 1
            && ls.c1 > 0.0
            && ls.c1 < 1.0
            && ls.backtrack > 0.0
            && ls.backtrack < 1.0;
        if ok {
            Ok(())
        } else {
            Err(InnerError::InvalidOptions(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub x_min: Vec<f64>,
    pub f_min: f64,
    /// `‖∇f(x_min)‖_∞`
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective/gradient evaluations, line-search trials included.
    pub evaluations: usize,
    pub converged: bool,
}

/// A smooth scalar objective with gradient.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    /// Returns `f(x)` and overwrites `grad` with `∇f(x)`.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Adapts a scalar [`FunctionOracle`].
pub struct OracleObjective<'a>(pub &'a dyn FunctionOracle);

impl SmoothObjective for OracleObjective<'_> {
    fn dim(&self) -> usize {
        self.0.dim_in()
    }
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        scalar_value_grad(self.0, x, grad)
    }
}

/// Adapts a closure `(x, grad) -> f`.
pub struct FnObjective<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> SmoothObjective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    cap: usize,
}

impl History {
    fn new(cap: usize) -> Self {
        Self {
            pairs: VecDeque::with_capacity(cap),
            cap,
        }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if sy <= 1e-12 * linalg::norm2(&s) * linalg::norm2(&y) {
            return false;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = vec![0.0; self.pairs.len()];
        for (k, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &q);
            alphas[k] = a;
            linalg::axpy(-a, y, &mut q);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for (k, (s, y, rho)) in self.pairs.iter().enumerate() {
            let b = rho * dot(y, &q);
            linalg::axpy(alphas[k] - b, s, &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

enum Search {
    Accepted {
        x: Vec<f64>,
        f: f64,
        g: Vec<f64>,
    },
    /// Predicted decrease is below the floating-point resolution of `f`.
    Stalled,
    Failed,
}

struct Counter<'a> {
    obj: &'a dyn SmoothObjective,
    evals: usize,
}

impl Counter<'_> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evals += 1;
        self.obj.value_grad(x, g)
    }
}

fn line_search(
    obj: &mut Counter<'_>,
    x: &[f64],
    f: f64,
    g: &[f64],
    d: &[f64],
    alpha0: f64,
    ls: &LineSearchParams,
) -> Search {
    let gd = dot(g, d);
    let mut alpha = alpha0;
    let mut xt = vec![0.0; x.len()];
    let mut gt = vec![0.0; x.len()];
    for _ in 0..=MAX_HALVINGS {
        for ((t, xi), di) in xt.iter_mut().zip(x).zip(d) {
            *t = xi + alpha * di;
        }
        let ft = obj.eval(&xt, &mut gt);
        if ft.is_finite() && linalg::all_finite(&gt) {
            if ft <= f + ls.c1 * alpha * gd {
                return refine(obj, x, f, gd, d, alpha, xt, ft, gt);
            }
            // Near the minimizer the Armijo test compares differences below
            // the rounding of `f`; fall back to the slope along `d`.
            let dt = dot(&gt, d);
            if ft <= f + NOISE_FLOOR * (1.0 + f.abs()) && WOLFE_SIGMA * gd <= dt && dt <= -WOLFE_UPPER * gd {
                return Search::Accepted { x: xt, f: ft, g: gt };
            }
        }
        alpha *= ls.backtrack;
    }
    if -alpha0 * gd <= 64.0 * f64::EPSILON * (1.0 + f.abs()) {
        Search::Stalled
    } else {
        Search::Failed
    }
}

/// One secant step along `d` from an accepted trial point.
///
/// The slopes at `0` and `alpha` give the 1-D minimizer of the
/// interpolating quadratic; it is evaluated only when the model predicts a
/// gain that is not negligible next to the decrease already achieved, and
/// kept only if it is actually lower. On quadratics this makes the line
/// search exact.
#[allow(clippy::too_many_arguments)]
fn refine(
    obj: &mut Counter<'_>,
    x: &[f64],
    f: f64,
    gd: f64,
    d: &[f64],
    alpha: f64,
    xt: Vec<f64>,
    ft: f64,
    gt: Vec<f64>,
) -> Search {
    let dt = dot(&gt, d);
    let curvature = (dt - gd) / alpha;
    if curvature > 0.0 {
        let star = alpha - dt / curvature;
        let gain = 0.5 * curvature * (alpha - star).powi(2);
        if star > 0.0 && gain > REFINE_RATIO * (f - ft) {
            let xs: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + star * b).collect();
            let mut gs = vec![0.0; x.len()];
            let fs = obj.eval(&xs, &mut gs);
            if fs.is_finite() && fs < ft && linalg::all_finite(&gs) {
                return Search::Accepted { x: xs, f: fs, g: gs };
            }
        }
    }
    Search::Accepted { x: xt, f: ft, g: gt }
}

const REFINE_RATIO: f64 = 1e-3;

/// Relative increase of `f` tolerated by the slope-based acceptance.
pub const NOISE_FLOOR: f64 = 1e4 * f64::EPSILON;
const WOLFE_SIGMA: f64 = 0.9;
const WOLFE_UPPER: f64 = 0.8;

/// Minimizes a smooth objective from `x0`.
///
/// Every accepted step satisfies Armijo or, once decreases fall below the
/// rounding of `f`, an approximate Wolfe slope condition that lets `f` rise
/// by at most `NOISE_FLOOR·(1+|f|)`. If the line
/// search cannot make progress because the achievable decrease is below
/// rounding, the current point is returned with `converged = false`.
pub fn minimize(
    objective: &dyn SmoothObjective,
    x0: &[f64],
    opts: &InnerSolverOptions,
) -> Result<InnerResult, InnerError> {
    opts.validate()?;
    assert_eq!(x0.len(), objective.dim(), "x0 dimension mismatch");
    let mut obj = Counter {
        obj: objective,
        evals: 0,
    };
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    let mut f = obj.eval(&x, &mut g);
    if !f.is_finite() || !linalg::all_finite(&g) {
        return Err(InnerError::NonFiniteValue { iteration: 0 });
    }
    let mut hist = History::new(opts.memory);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        let gnorm = norm_inf(&g);
        if gnorm <= opts.grad_tol {
            converged = true;
            break;
        }
        let mut steepest = hist.pairs.is_empty();
        let mut d = if steepest {
            g.iter().map(|v| -v).collect()
        } else {
            hist.direction(&g)
        };
        if !(dot(&g, &d) < 0.0) {
            hist.pairs.clear();
            steepest = true;
            d = g.iter().map(|v| -v).collect();
        }
        let alpha0 = if steepest {
            (1.0 / linalg::norm2(&g)).min(1.0)
        } else {
            1.0
        };
        let mut outcome = line_search(&mut obj, &x, f, &g, &d, alpha0, &opts.line_search);
        if matches!(outcome, Search::Failed) && !steepest {
            hist.pairs.clear();
            d = g.iter().map(|v| -v).collect();
            let a0 = (1.0 / linalg::norm2(&g)).min(1.0);
            outcome = line_search(&mut obj, &x, f, &g, &d, a0, &opts.line_search);
        }
        match outcome {
            Search::Accepted { x: xn, f: fn_, g: gn } => {
                let s = linalg::sub(&xn, &x);
                let y = linalg::sub(&gn, &g);
                hist.push(s, y);
                x = xn;
                f = fn_;
                g = gn;
                iterations += 1;
            }
            Search::Stalled => break,
            Search::Failed => {
                return Err(InnerError::LineSearchFailure {
                    iteration: iterations,
                    halvings: MAX_HALVINGS,
                    grad_norm: gnorm,
                })
            }
        }
    }
    let grad_norm = norm_inf(&g);
    if !converged && grad_norm <= opts.grad_tol {
        converged = true;
    }
    Ok(InnerResult {
        x_min: x,
        f_min: f,
        grad_norm,
        iterations,
        evaluations: obj.evals,
        converged,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::oracle::DiagQuadratic;
    use proptest::prelude::*;

    fn run<F: Fn(&[f64], &mut [f64]) -> f64>(dim: usize, f: F, x0: &[f64], opts: InnerSolverOptions) -> InnerResult {
        minimize(&FnObjective { dim, f }, x0, &opts).unwrap()
    }

    #[test]
    fn one_dimensional_quadratic() {
        let r = run(
            1,
            |x, g| {
                g[0] = 2.0 * (x[0] - 1.0);
                (x[0] - 1.0).powi(2)
            },
            &[0.0],
            InnerSolverOptions::default().with_grad_tol(1e-10),
        );
        assert!(r.converged);
        assert!((r.x_min[0] - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn ill_conditioned_diagonal_quadratic() {
        let q = DiagQuadratic {
            diag: vec![1.0, 100.0],
            center: vec![0.0, 0.0],
            offset: 0.0,
        };
        let r = minimize(
            &OracleObjective(&q),
            &[1.0, 1.0],
            &InnerSolverOptions::default().with_grad_tol(1e-9),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.x_min.iter().all(|v| v.abs() <= 1e-6), "{:?}", r.x_min);
    }

    /// Grid search over [0, 2] at resolution 1e-6 for (x-2)² + 5 max(0, x-1)⁴.
    pub(crate) fn penalty_composite_grid_min() -> f64 {
        let f = |x: f64| (x - 2.0).powi(2) + 5.0 * (x - 1.0).max(0.0).powi(4);
        let mut best = (f64::INFINITY, 0.0);
        let n = 2_000_000;
        for i in 0..=n {
            let x = 2.0 * i as f64 / n as f64;
            let v = f(x);
            if v < best.0 {
                best = (v, x);
            }
        }
        best.1
    }

    #[test]
    fn penalty_shaped_composite_matches_grid() {
        let grid = penalty_composite_grid_min();
        let r = run(
            1,
            |x, g| {
                let a = (x[0] - 1.0).max(0.0);
                g[0] = 2.0 * (x[0] - 2.0) + 20.0 * a.powi(3);
                (x[0] - 2.0).powi(2) + 5.0 * a.powi(4)
            },
            &[0.0],
            InnerSolverOptions::default().with_grad_tol(1e-10),
        );
        assert!((r.x_min[0] - grid).abs() <= 1e-4, "{} vs {grid}", r.x_min[0]);
    }

    #[test]
    fn nan_objective_is_reported() {
        let e = minimize(
            &FnObjective {
                dim: 1,
                f: |_: &[f64], _: &mut [f64]| f64::NAN,
            },
            &[0.0],
            &InnerSolverOptions::default(),
        )
        .unwrap_err();
        assert_eq!(e, InnerError::NonFiniteValue { iteration: 0 });
    }

    #[test]
    fn wrong_gradient_triggers_line_search_failure() {
        let e = minimize(
            &FnObjective {
                dim: 1,
                f: |x: &[f64], g: &mut [f64]| {
                    g[0] = -2.0 * (x[0] - 3.0);
                    (x[0] - 3.0).powi(2)
                },
            },
            &[0.0],
            &InnerSolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(e, InnerError::LineSearchFailure { .. }));
    }

    #[test]
    fn rejects_bad_options() {
        let mut o = InnerSolverOptions::default();
        o.line_search.c1 = 1.5;
        assert!(o.validate().is_err());
        assert!(InnerSolverOptions::default().with_grad_tol(0.0).validate().is_err());
    }

    #[test]
    fn rosenbrock() {
        let r = run(
            2,
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            &[-1.2, 1.0],
            InnerSolverOptions::default().with_grad_tol(1e-8).with_max_iters(2000),
        );
        assert!(r.converged);
        assert!((r.x_min[0] - 1.0).abs() < 1e-6 && (r.x_min[1] - 1.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn quadratics_converge_fast_with_monotone_descent(
            diag in proptest::collection::vec(0.5f64..50.0, 1..8),
            start in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let n = diag.len();
            let q = DiagQuadratic { diag, center: vec![0.3; n], offset: 1.0 };
            let x0 = &start[..n];
            let opts = InnerSolverOptions::default().with_grad_tol(1e-10);
            let r = minimize(&OracleObjective(&q), x0, &opts).unwrap();
            prop_assert!(r.converged);
            prop_assert!(r.iterations <= n + 5, "{} iterations for dim {}", r.iterations, n);
            let f0 = crate::oracle::scalar_value(&q, x0);
            prop_assert!(r.f_min <= f0);
        }
    }
}
