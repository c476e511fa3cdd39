//! Differentiable function oracles and the checks run against them.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{self, Matrix};

/// A vector-valued function `R^dim_in -> R^dim_out` with an exact Jacobian.
///
/// Implementations hold no mutable state, so one oracle can be evaluated
/// from several workers at once.
pub trait FunctionOracle: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;

    /// Writes the function value at `x` into `out`.
    fn values(&self, x: &[f64], out: &mut [f64]);

    /// Dense Jacobian at `x`, `dim_out × dim_in`.
    fn jacobian(&self, x: &[f64]) -> Matrix;

    fn eval(&self, x: &[f64]) -> (Vec<f64>, Matrix) {
        let mut v = vec![0.0; self.dim_out()];
        self.values(x, &mut v);
        (v, self.jacobian(x))
    }

    /// Writes the values into `values` and adds `Σ_j w_j ∇F_j(x)` to `grad`,
    /// where `w_j = weight(j, F_j(x))`.
    ///
    /// This is the hot path of every augmented-Lagrangian evaluation. The
    /// default goes through the dense Jacobian; problem oracles override it
    /// to skip rows whose weight is zero.
    fn weighted_gradient(
        &self,
        x: &[f64],
        weight: &mut dyn FnMut(usize, f64) -> f64,
        values: &mut [f64],
        grad: &mut [f64],
    ) {
        self.values(x, values);
        let jac = self.jacobian(x);
        for (j, &v) in values.iter().enumerate() {
            let w = weight(j, v);
            if w != 0.0 {
                linalg::axpy(w, jac.row(j), grad);
            }
        }
    }
}

/// Shared handle to an oracle.
pub type Oracle = Arc<dyn FunctionOracle>;

/// Value and gradient of a scalar oracle (`dim_out == 1`). The gradient is
/// written into `grad`, overwriting it.
pub fn scalar_value_grad(oracle: &dyn FunctionOracle, x: &[f64], grad: &mut [f64]) -> f64 {
    debug_assert_eq!(oracle.dim_out(), 1);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut v = [0.0];
    oracle.weighted_gradient(x, &mut |_, _| 1.0, &mut v, grad);
    v[0]
}

pub fn scalar_value(oracle: &dyn FunctionOracle, x: &[f64]) -> f64 {
    let mut v = [0.0];
    oracle.values(x, &mut v);
    v[0]
}

/// `x ↦ A x + b`.
#[derive(Debug, Clone)]
pub struct AffineOracle {
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl AffineOracle {
    pub fn new(a: Matrix, b: Vec<f64>) -> Self {
        assert_eq!(a.rows(), b.len(), "offset length must equal row count");
        Self { a, b }
    }
}

impl FunctionOracle for AffineOracle {
    fn dim_in(&self) -> usize {
        self.a.cols()
    }
    fn dim_out(&self) -> usize {
        self.a.rows()
    }
    fn values(&self, x: &[f64], out: &mut [f64]) {
        self.a.mul_vec_into(x, out);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
    }
    fn jacobian(&self, _x: &[f64]) -> Matrix {
        self.a.clone()
    }
    fn weighted_gradient(
        &self,
        x: &[f64],
        weight: &mut dyn FnMut(usize, f64) -> f64,
        values: &mut [f64],
        grad: &mut [f64],
    ) {
        self.values(x, values);
        for (j, &v) in values.iter().enumerate() {
            let w = weight(j, v);
            if w != 0.0 {
                linalg::axpy(w, self.a.row(j), grad);
            }
        }
    }
}

/// `x ↦ ½ (x-c)ᵀ diag(d) (x-c) + offset`, a separable convex quadratic.
#[derive(Debug, Clone)]
pub struct DiagQuadratic {
    pub diag: Vec<f64>,
    pub center: Vec<f64>,
    pub offset: f64,
}

impl FunctionOracle for DiagQuadratic {
    fn dim_in(&self) -> usize {
        self.diag.len()
    }
    fn dim_out(&self) -> usize {
        1
    }
    fn values(&self, x: &[f64], out: &mut [f64]) {
        let mut acc = self.offset;
        for ((xi, ci), di) in x.iter().zip(&self.center).zip(&self.diag) {
            let r = xi - ci;
            acc += 0.5 * di * r * r;
        }
        out[0] = acc;
    }
    fn jacobian(&self, x: &[f64]) -> Matrix {
        let row: Vec<f64> = x
            .iter()
            .zip(&self.center)
            .zip(&self.diag)
            .map(|((xi, ci), di)| di * (xi - ci))
            .collect();
        Matrix::from_row_major(1, row.len(), row)
    }
    fn weighted_gradient(
        &self,
        x: &[f64],
        weight: &mut dyn FnMut(usize, f64) -> f64,
        values: &mut [f64],
        grad: &mut [f64],
    ) {
        self.values(x, values);
        let w = weight(0, values[0]);
        if w != 0.0 {
            for (((g, xi), ci), di) in grad.iter_mut().zip(x).zip(&self.center).zip(&self.diag) {
                *g += w * di * (xi - ci);
            }
        }
    }
}

type EvalFn = dyn Fn(&[f64]) -> (Vec<f64>, Matrix) + Send + Sync;

/// Oracle built from a closure returning value and Jacobian. Intended for
/// tests and small hand-written problems.
pub struct ClosureOracle {
    dim_in: usize,
    dim_out: usize,
    f: Box<EvalFn>,
}

impl ClosureOracle {
    pub fn new(
        dim_in: usize,
        dim_out: usize,
        f: impl Fn(&[f64]) -> (Vec<f64>, Matrix) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim_in,
            dim_out,
            f: Box::new(f),
        }
    }
}

impl FunctionOracle for ClosureOracle {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.dim_out
    }
    fn values(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&(self.f)(x).0);
    }
    fn jacobian(&self, x: &[f64]) -> Matrix {
        (self.f)(x).1
    }
    fn eval(&self, x: &[f64]) -> (Vec<f64>, Matrix) {
        (self.f)(x)
    }
}

/// Componentwise `g = max(0, g0)²` with its Jacobian.
///
/// Row `j` of the Jacobian is `2·max(0, g0_j)` times row `j` of `g0_jacobian`,
/// so inactive and boundary rows are exactly zero.
pub fn squared_hinge(g0_value: &[f64], g0_jacobian: &Matrix) -> (Vec<f64>, Matrix) {
    assert_eq!(g0_value.len(), g0_jacobian.rows());
    let mut jac = g0_jacobian.clone();
    let mut g = Vec::with_capacity(g0_value.len());
    for (j, &v) in g0_value.iter().enumerate() {
        let a = v.max(0.0);
        g.push(a * a);
        let s = 2.0 * a;
        for e in jac.row_mut(j) {
            *e *= s;
        }
    }
    (g, jac)
}

/// Scalar squared hinge `max(0, t)²`.
#[inline]
pub fn hinge_sq(t: f64) -> f64 {
    let a = t.max(0.0);
    a * a
}

/// The composite `x ↦ max(0, g0(x))²` as an oracle.
pub struct SquaredHingeOracle(pub Oracle);

impl FunctionOracle for SquaredHingeOracle {
    fn dim_in(&self) -> usize {
        self.0.dim_in()
    }
    fn dim_out(&self) -> usize {
        self.0.dim_out()
    }
    fn values(&self, x: &[f64], out: &mut [f64]) {
        self.0.values(x, out);
        for v in out {
            *v = hinge_sq(*v);
        }
    }
    fn jacobian(&self, x: &[f64]) -> Matrix {
        let (v, j) = self.0.eval(x);
        squared_hinge(&v, &j).1
    }
}

/// `x ↦ s·F(x)` for a positive constant `s`.
pub struct ScaledOracle {
    pub inner: Oracle,
    pub scale: f64,
}

impl FunctionOracle for ScaledOracle {
    fn dim_in(&self) -> usize {
        self.inner.dim_in()
    }
    fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }
    fn values(&self, x: &[f64], out: &mut [f64]) {
        self.inner.values(x, out);
        out.iter_mut().for_each(|v| *v *= self.scale);
    }
    fn jacobian(&self, x: &[f64]) -> Matrix {
        let mut j = self.inner.jacobian(x);
        j.scale(self.scale);
        j
    }
    fn weighted_gradient(
        &self,
        x: &[f64],
        weight: &mut dyn FnMut(usize, f64) -> f64,
        values: &mut [f64],
        grad: &mut [f64],
    ) {
        let s = self.scale;
        self.inner
            .weighted_gradient(x, &mut |j, v| s * weight(j, s * v), values, grad);
        values.iter_mut().for_each(|v| *v *= s);
    }
}

/// Midpoint test of `h(αx + (1-α)y) = αh(x) + (1-α)h(y)` on random triples.
pub fn check_affine(oracle: &dyn FunctionOracle, trials: usize, seed: u64) -> bool {
    assert!(trials >= 1, "trials must be >= 1");
    let n = oracle.dim_in();
    let m = oracle.dim_out();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hx = vec![0.0; m];
    let mut hy = vec![0.0; m];
    let mut hm = vec![0.0; m];
    for _ in 0..trials {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let alpha: f64 = rng.gen_range(-0.5..1.5);
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        oracle.values(&x, &mut hx);
        oracle.values(&y, &mut hy);
        oracle.values(&mid, &mut hm);
        for j in 0..m {
            let combo = alpha * hx[j] + (1.0 - alpha) * hy[j];
            let scale = 1.0 + hx[j].abs().max(hy[j].abs()).max(hm[j].abs());
            let err = (hm[j] - combo).abs() / scale;
            if !(err <= 1e-10) {
                return false;
            }
        }
    }
    true
}

const FD_DIRECTIONS: usize = 6;
const FD_SEED: u64 = 0x005e_edfd;

/// Largest relative disagreement between central differences and the
/// Jacobian action, over all outputs and a fixed set of probe directions.
///
/// Probes every coordinate axis when `dim_in` is small, otherwise a fixed
/// set of random unit directions. Each direction is tried at steps
/// `h·(1+‖x‖)` for `h` in `1e-6..1e-3` and the best step is kept, so
/// roundoff on large affine values does not masquerade as a gradient error.
pub fn finite_diff_check(oracle: &dyn FunctionOracle, x: &[f64]) -> f64 {
    let n = oracle.dim_in();
    assert_eq!(x.len(), n, "point dimension must equal dim_in");
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    if n <= FD_DIRECTIONS {
        for i in 0..n {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            dirs.push(d);
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(FD_SEED);
        for _ in 0..FD_DIRECTIONS {
            let mut d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nd = linalg::norm2(&d);
            d.iter_mut().for_each(|v| *v /= nd);
            dirs.push(d);
        }
    }
    finite_diff_check_dirs(oracle, x, &dirs)
}

pub fn finite_diff_check_dirs(oracle: &dyn FunctionOracle, x: &[f64], dirs: &[Vec<f64>]) -> f64 {
    let m = oracle.dim_out();
    let (_, jac) = oracle.eval(x);
    let scale = 1.0 + linalg::norm2(x);
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    let mut worst = 0.0_f64;
    for d in dirs {
        let jd = jac.mul_vec(d);
        let mut best = vec![f64::INFINITY; m];
        for h in [1e-6, 1e-5, 1e-4, 1e-3] {
            let eps = h * scale;
            let xp: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + eps * b).collect();
            let xm: Vec<f64> = x.iter().zip(d).map(|(a, b)| a - eps * b).collect();
            oracle.values(&xp, &mut plus);
            oracle.values(&xm, &mut minus);
            for j in 0..m {
                let fd = (plus[j] - minus[j]) / (2.0 * eps);
                let err = (fd - jd[j]).abs() / jd[j].abs().max(1.0);
                if err.is_nan() {
                    best[j] = f64::INFINITY;
                } else {
                    best[j] = best[j].min(err);
                }
            }
        }
        for b in best {
            worst = worst.max(b);
        }
    }
    worst
}

/// Largest relative gap between `weighted_gradient` with weights `w` and
/// `Jᵀw` from the dense Jacobian.
pub fn weighted_gradient_check(oracle: &dyn FunctionOracle, x: &[f64], w: &[f64]) -> f64 {
    let jac = oracle.jacobian(x);
    let mut dense = vec![0.0; oracle.dim_in()];
    for (j, &wj) in w.iter().enumerate() {
        linalg::axpy(wj, jac.row(j), &mut dense);
    }
    let mut values = vec![0.0; oracle.dim_out()];
    let mut fast = vec![0.0; oracle.dim_in()];
    oracle.weighted_gradient(x, &mut |j, _| w[j], &mut values, &mut fast);
    let scale = 1.0 + dense.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    fast.iter()
        .zip(&dense)
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max)
}

/// Worst of [`finite_diff_check`] and [`weighted_gradient_check`] over
/// `points` seeded random points with coordinates in `[-radius, radius]`.
pub fn random_point_check(oracle: &dyn FunctionOracle, points: usize, radius: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let x: Vec<f64> = (0..oracle.dim_in()).map(|_| rng.gen_range(-radius..=radius)).collect();
        let w: Vec<f64> = (0..oracle.dim_out()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let err = finite_diff_check(oracle, &x).max(weighted_gradient_check(oracle, &x, &w));
        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
    }
    worst
}
