//! Problem generators: robust SVM, smallest enclosing ball, and small
//! analytic problems.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ZooError;
use crate::linalg::{self, Matrix};
use crate::oracle::{AffineOracle, DiagQuadratic, FunctionOracle, Oracle};
use crate::problem::{ConsensusProblem, ConstraintBatch};

/// Smoothing radius of the norm in the cone constraints.
pub const NORM_EPS: f64 = 1e-8;

/// `√(‖v‖² + ε²) − ε`
#[inline]
pub fn smoothed_norm(v: &[f64]) -> f64 {
    let s = (linalg::norm_sq(v) + NORM_EPS * NORM_EPS).sqrt();
    s - NORM_EPS
}

/// Splits `0..n` into `m` consecutive ranges whose lengths differ by at most one.
pub fn contiguous_batches(n: usize, m: usize) -> Vec<Vec<usize>> {
    crate::harness::make_assignment(n, m, crate::harness::AssignmentPolicy::Contiguous)
        .into_iter()
        .map(|a| a.batches)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustSvmConfig {
    pub n_points: usize,
    pub n_features: usize,
    pub m_batches: usize,
    pub c: f64,
    pub delta: f64,
    pub seed: u64,
    /// Fraction of labels flipped after labelling by the ground truth.
    pub flip_fraction: f64,
    /// Multiplies every covariance factor; `Σ_i` scales with its square.
    pub cov_scale: f64,
}

impl Default for RobustSvmConfig {
    fn default() -> Self {
        Self {
            n_points: 200,
            n_features: 10,
            m_batches: 4,
            c: 1.0,
            delta: 0.5,
            seed: 0,
            flip_fraction: 0.05,
            cov_scale: DEFAULT_COV_SCALE,
        }
    }
}

/// Slack unit that balances the curvature of `w` and the slacks in the
/// batch subproblems; iterates of the outer loop do not depend on it.
pub fn auto_slack_unit(n_features: usize) -> f64 {
    (n_features as f64).sqrt().max(1.0)
}

/// With unit scale every point's cone term outweighs its label pull and the
/// optimum collapses to `w = 0`.
pub const DEFAULT_COV_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustSvmInstance {
    pub n_features: usize,
    pub points: Vec<Vec<f64>>,
    /// `±1`
    pub labels: Vec<f64>,
    /// Row-major `n × n` factors `F_i` with `Σ_i = F_iᵀ F_i`.
    pub factors: Vec<Vec<f64>>,
    pub kappa: Vec<f64>,
    pub c: f64,
    /// Point indices per batch.
    pub batches: Vec<Vec<usize>>,
    pub seed: u64,
}

pub fn kappa_from_delta(delta: f64) -> f64 {
    (delta / (1.0 - delta)).sqrt()
}

/// Draws an instance and builds its consensus problem.
///
/// Shared variable `w`; batch `b` owns the slacks `ξ` of its points. Each
/// point contributes `1 − ξ + κ‖F w‖_ε − y wᵀx ≤ 0` and `−ξ ≤ 0`.
pub fn generate_robust_svm(cfg: &RobustSvmConfig) -> Result<(ConsensusProblem, RobustSvmInstance), ZooError> {
    let inst = sample_robust_svm(cfg)?;
    Ok((inst.problem()?, inst))
}

pub fn sample_robust_svm(cfg: &RobustSvmConfig) -> Result<RobustSvmInstance, ZooError> {
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(ZooError::InvalidConfig(format!("delta = {} not in (0,1)", cfg.delta)));
    }
    if cfg.n_points == 0 || cfg.n_features == 0 {
        return Err(ZooError::InvalidConfig(
            "need at least one point and one feature".into(),
        ));
    }
    if cfg.m_batches == 0 || cfg.m_batches > cfg.n_points {
        return Err(ZooError::InvalidConfig(format!(
            "m_batches = {} must be in 1..={}",
            cfg.m_batches, cfg.n_points
        )));
    }
    if !(0.0..=1.0).contains(&cfg.flip_fraction) || !(cfg.c > 0.0) || !(cfg.cov_scale >= 0.0) {
        return Err(ZooError::InvalidConfig(
            "flip_fraction, c or cov_scale out of range".into(),
        ));
    }
    let n = cfg.n_features;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w_true: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let nrm = linalg::norm2(&w_true).max(f64::MIN_POSITIVE);
    w_true.iter_mut().for_each(|v| *v /= nrm);

    let points: Vec<Vec<f64>> = (0..cfg.n_points)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let mut labels: Vec<f64> = points
        .iter()
        .map(|x| if linalg::dot(&w_true, x) >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    let n_flip = (cfg.flip_fraction * cfg.n_points as f64).round() as usize;
    for i in sample(&mut rng, cfg.n_points, n_flip) {
        labels[i] = -labels[i];
    }

    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let factors = (0..cfg.n_points)
        .map(|_| {
            let mut f = Matrix::from_row_major(
                n,
                n,
                (0..n * n).map(|_| rng.gen_range(-1.0..=1.0) * inv_sqrt_n).collect(),
            );
            // entries of FᵀF are bounded by 1 by Cauchy–Schwarz; keep the
            // bound explicit in case the sampling law changes
            let peak = f.gram().max_abs();
            if peak > 1.0 {
                f.scale(1.0 / peak.sqrt());
            }
            f.scale(cfg.cov_scale);
            f.as_slice().to_vec()
        })
        .collect();

    let kappa = vec![kappa_from_delta(cfg.delta); cfg.n_points];
    Ok(RobustSvmInstance {
        n_features: n,
        points,
        labels,
        factors,
        kappa,
        c: cfg.c,
        batches: contiguous_batches(cfg.n_points, cfg.m_batches),
        seed: cfg.seed,
    })
}

impl RobustSvmInstance {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn factor(&self, i: usize) -> Matrix {
        Matrix::from_row_major(self.n_features, self.n_features, self.factors[i].clone())
    }

    pub fn validate(&self) -> Result<(), ZooError> {
        let n = self.n_features;
        let np = self.points.len();
        let bad = |s: &str| Err(ZooError::InvalidConfig(s.to_string()));
        if n == 0 || np == 0 {
            return bad("empty instance");
        }
        if self.labels.len() != np || self.factors.len() != np || self.kappa.len() != np {
            return bad("per-point field lengths differ");
        }
        if self.points.iter().any(|p| p.len() != n) || self.factors.iter().any(|f| f.len() != n * n) {
            return bad("point or factor dimension");
        }
        if self.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return bad("labels must be ±1");
        }
        if !(self.c > 0.0) || self.kappa.iter().any(|&k| !(k >= 0.0)) {
            return bad("c must be positive and kappa nonnegative");
        }
        let mut seen = vec![false; np];
        for b in &self.batches {
            if b.is_empty() {
                return bad("empty batch");
            }
            for &i in b {
                if i >= np || seen[i] {
                    return bad("batches must partition the points");
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("batches must cover every point");
        }
        Ok(())
    }

    /// The consensus problem for this instance.
    pub fn problem(&self) -> Result<ConsensusProblem, ZooError> {
        self.problem_with_slack_unit(1.0)
    }

    /// The consensus problem with local variables `ζ = ξ / unit`.
    pub fn problem_with_slack_unit(&self, unit: f64) -> Result<ConsensusProblem, ZooError> {
        self.validate()?;
        if !(unit > 0.0 && unit.is_finite()) {
            return Err(ZooError::InvalidConfig(format!(
                "slack unit must be positive, got {unit}"
            )));
        }
        let n = self.n_features;
        let m = self.batches.len();
        let batches = self
            .batches
            .iter()
            .enumerate()
            .map(|(b, idx)| {
                let nb = idx.len();
                let objective: Oracle = Arc::new(SvmObjective {
                    n,
                    nb,
                    w_weight: 1.0 / m as f64,
                    c: self.c * unit,
                });
                let ineq: Oracle = Arc::new(SvmConstraints {
                    n,
                    points: idx.iter().map(|&i| self.points[i].clone()).collect(),
                    labels: idx.iter().map(|&i| self.labels[i]).collect(),
                    sigma: idx.iter().map(|&i| self.factor(i).gram()).collect(),
                    kappa: idx.iter().map(|&i| self.kappa[i]).collect(),
                    unit,
                });
                ConstraintBatch {
                    index: b,
                    objective,
                    ineq: Some(ineq),
                    eq: None,
                    local_dim: nb,
                }
            })
            .collect();
        Ok(ConsensusProblem::new(n, batches)?)
    }

    /// `½‖w‖² + c Σ ξ`
    pub fn objective(&self, w: &[f64], xi: &[f64]) -> f64 {
        0.5 * linalg::norm_sq(w) + self.c * xi.iter().sum::<f64>()
    }

    /// Smallest feasible slack of point `i` for a given `w`.
    pub fn slack(&self, i: usize, w: &[f64]) -> f64 {
        let fw = self.factor(i).mul_vec(w);
        (1.0 + self.kappa[i] * smoothed_norm(&fw) - self.labels[i] * linalg::dot(w, &self.points[i])).max(0.0)
    }
}

/// `a‖w‖²/2 + c Σ ξ` over `[w | ξ]`.
struct SvmObjective {
    n: usize,
    nb: usize,
    w_weight: f64,
    c: f64,
}

impl FunctionOracle for SvmObjective {
    fn dim_in(&self) -> usize {
        self.n + self.nb
    }
    fn dim_out(&self) -> usize {
        1
    }
    fn values(&self, x: &[f64], out: &mut [f64]) {
        let (w, xi) = x.split_at(self.n);
        out[0] = 0.5 * self.w_weight * linalg::norm_sq(w) + self.c * xi.iter().sum::<f64>();
    }
    fn jacobian(&self, x: &[f64]) -> Matrix {
        let mut g = vec![0.0; self.dim_in()];
        self.weighted_gradient(x, &mut |_, _| 1.0, &mut [0.0], &mut g);
        Matrix::from_row_major(1, self.dim_in(), g)
    }
    fn weighted_gradient(
        &self,
        x: &[f64],
        weight: &mut dyn FnMut(usize, f64) -> f64,
        values: &mut [f64],
        grad: &mut [f64],
    ) {
        self.values(x, values);
        let wt = weight(0, values[0]);
        if wt == 0.0 {
            return;
        }
        for j in 0..self.n {
            grad[j] += wt * self.w_weight * x[j];
        }
        for g in &mut grad[self.n..] {
            *g += wt * self.c;
        }
    }
}

/// Cone constraints of one batch followed by the slack sign constraints.
///
/// Holds `Σ_j = F_jᵀF_j` rather than `F_j`: one product `Σ_j w` yields both
/// `‖F_j w‖ = √(wᵀΣ_j w)` and its gradient.
struct SvmConstraints {
    n: usize,
    points: Vec<Vec<f64>>,
    labels: Vec<f64>,
    sigma: Vec<Matrix>,
    kappa: Vec<f64>,
    /// `ξ = unit · x_local`
    unit: f64,
}

impl SvmConstraints {
    fn nb(&self) -> usize {
        self.points.len()
    }

    /// Writes `Σ_j w` into `sw` and returns the cone constraint value and
    /// `√(‖F_j w‖² + ε²)`.
    fn cone(&self, j: usize, w: &[f64], xi: &[f64], sw: &mut [f64]) -> (f64, f64) {
        self.sigma[j].mul_vec_into(w, sw);
        let s = (linalg::dot(w, sw).max(0.0) + NORM_EPS * NORM_EPS).sqrt();
        let v =
            1.0 - self.unit * xi[j] + self.kappa[j] * (s - NORM_EPS) - self.labels[j] * linalg::dot(w, &self.points[j]);
        (v, s)
    }
}

impl FunctionOracle for SvmConstraints {
    fn dim_in(&self) -> usize {
        self.n + self.nb()
    }
    fn dim_out(&self) -> usize {
        2 * self.nb()
    }
    fn values(&self, x: &[f64], out: &mut [f64]) {
        let (w, xi) = x.split_at(self.n);
        let nb = self.nb();
        let mut sw = vec![0.0; self.n];
        for j in 0..nb {
            out[j] = self.cone(j, w, xi, &mut sw).0;
            out[nb + j] = -self.unit * xi[j];
        }
    }
    fn jacobian(&self, x: &[f64]) -> Matrix {
        let n = self.n;
        let nb = self.nb();
        let (w, xi) = x.split_at(n);
        let mut jac = Matrix::zeros(2 * nb, self.dim_in());
        let mut sw = vec![0.0; n];
        for j in 0..nb {
            let (_, s) = self.cone(j, w, xi, &mut sw);
            let row = jac.row_mut(j);
            linalg::axpy(self.kappa[j] / s, &sw, &mut row[..n]);
            linalg::axpy(-self.labels[j], &self.points[j], &mut row[..n]);
            row[n + j] = -self.unit;
            jac.row_mut(nb + j)[n + j] = -self.unit;
        }
        jac
    }
    fn weighted_gradient(
        &self,
        x: &[f64],
        weight: &mut dyn FnMut(usize, f64) -> f64,
        values: &mut [f64],
        grad: &mut [f64],
    ) {
        let n = self.n;
        let nb = self.nb();
        let (w, xi) = x.split_at(n);
        let mut sw = vec![0.0; n];
        for j in 0..nb {
            let (v, s) = self.cone(j, w, xi, &mut sw);
            values[j] = v;
            let wt = weight(j, v);
            if wt == 0.0 {
                continue;
            }
            // ∇_w: κ Σw/√(wᵀΣw+ε²) − y x ;  ∂_ξ = −unit
            linalg::axpy(wt * self.kappa[j] / s, &sw, &mut grad[..n]);
            linalg::axpy(-wt * self.labels[j], &self.points[j], &mut grad[..n]);
            grad[n + j] -= wt * self.unit;
        }
        for j in 0..nb {
            let v = -self.unit * xi[j];
            values[nb + j] = v;
            let wt = weight(nb + j, v);
            grad[n + j] -= wt * self.unit;
        }
    }
}

/// Smallest enclosing ball over the shared variables `(center, s)`; the
/// radius is `√max(s, 0)`.
///
/// Each batch carries `s/m` and the constraints `‖p − center‖² − s ≤ 0` of
/// its points.
pub fn generate_enclosing_ball(points: &[Vec<f64>], m_batches: usize) -> Result<ConsensusProblem, ZooError> {
    if points.is_empty() {
        return Err(ZooError::InvalidConfig("need at least one point".into()));
    }
    let n = points[0].len();
    if n == 0 || points.iter().any(|p| p.len() != n) {
        return Err(ZooError::InvalidConfig("points must share a positive dimension".into()));
    }
    if m_batches == 0 || m_batches > points.len() {
        return Err(ZooError::InvalidConfig(format!("m_batches = {m_batches} out of range")));
    }
    let m = m_batches as f64;
    let batches = contiguous_batches(points.len(), m_batches)
        .into_iter()
        .enumerate()
        .map(|(b, idx)| {
            let mut row = vec![0.0; n + 1];
            row[n] = 1.0 / m;
            let objective: Oracle = Arc::new(AffineOracle::new(Matrix::from_row_major(1, n + 1, row), vec![0.0]));
            let ineq: Oracle = Arc::new(BallConstraints {
                points: idx.iter().map(|&i| points[i].clone()).collect(),
            });
            ConstraintBatch {
                index: b,
                objective,
                ineq: Some(ineq),
                eq: None,
                local_dim: 0,
            }
        })
        .collect();
    Ok(ConsensusProblem::new(n + 1, batches)?)
}

/// `‖p_j − c‖² − s` over `[c | s]`.
struct BallConstraints {
    points: Vec<Vec<f64>>,
}

impl FunctionOracle for BallConstraints {
    fn dim_in(&self) -> usize {
        self.points[0].len() + 1
    }
    fn dim_out(&self) -> usize {
        self.points.len()
    }
    fn values(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len() - 1;
        for (o, p) in out.iter_mut().zip(&self.points) {
            *o = linalg::dist_sq(p, &x[..n]) - x[n];
        }
    }
    fn jacobian(&self, x: &[f64]) -> Matrix {
        let n = x.len() - 1;
        let mut jac = Matrix::zeros(self.points.len(), n + 1);
        for (j, p) in self.points.iter().enumerate() {
            let row = jac.row_mut(j);
            for k in 0..n {
                row[k] = 2.0 * (x[k] - p[k]);
            }
            row[n] = -1.0;
        }
        jac
    }
}

/// `min (x−2)² s.t. x ≤ 1`, one batch, `x` shared. Optimum `x* = 1`, `f* = 1`.
pub fn toy_1d_qp() -> ConsensusProblem {
    let objective: Oracle = Arc::new(DiagQuadratic {
        diag: vec![2.0],
        center: vec![2.0],
        offset: 0.0,
    });
    let ineq: Oracle = Arc::new(AffineOracle::new(Matrix::from_rows(&[vec![1.0]]), vec![-1.0]));
    ConsensusProblem::new(
        1,
        vec![ConstraintBatch {
            index: 0,
            objective,
            ineq: Some(ineq),
            eq: None,
            local_dim: 0,
        }],
    )
    .expect("toy problem is well formed")
}

/// `min Σ_i ½‖x − a_i‖²` over a shared `x` with `m` batches and no
/// constraints; the optimum is the mean of the `a_i`.
pub fn separable_quadratic(centers: &[Vec<f64>]) -> ConsensusProblem {
    let n = centers[0].len();
    let batches = centers
        .iter()
        .enumerate()
        .map(|(i, a)| ConstraintBatch {
            index: i,
            objective: Arc::new(DiagQuadratic {
                diag: vec![1.0; n],
                center: a.clone(),
                offset: 0.0,
            }),
            ineq: None,
            eq: None,
            local_dim: 0,
        })
        .collect();
    ConsensusProblem::new(n, batches).expect("separable problem is well formed")
}

/// Uniform points in `[-1, 1]^dim` from a seed.
pub fn random_points(count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect()
}
