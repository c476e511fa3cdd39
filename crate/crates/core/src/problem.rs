//! Problem data model: the two-block form and its consensus specialization.

use std::sync::Arc;

use crate::error::ProblemError;
use crate::linalg::{self, Matrix};
use crate::oracle::{check_affine, FunctionOracle, Oracle};

const AFFINE_TRIALS: usize = 8;
const AFFINE_SEED: u64 = 0xaff1;

/// `min f1(x) + f2(z)  s.t.  max(0, g0(x))² = 0,  h1(x) + h2(z) = 0`.
#[derive(Clone)]
pub struct GeneralProblem {
    pub f1: Oracle,
    pub f2: Oracle,
    pub g0: Oracle,
    pub h1: Oracle,
    pub h2: Oracle,
}

impl GeneralProblem {
    pub fn new(f1: Oracle, f2: Oracle, g0: Oracle, h1: Oracle, h2: Oracle) -> Result<Self, ProblemError> {
        let p = Self { f1, f2, g0, h1, h2 };
        p.validate()?;
        Ok(p)
    }

    pub fn n1(&self) -> usize {
        self.f1.dim_in()
    }

    pub fn n2(&self) -> usize {
        self.f2.dim_in()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let n1 = self.n1();
        let n2 = self.n2();
        if self.f1.dim_out() != 1 || self.f2.dim_out() != 1 {
            return Err(ProblemError::Dimension("f1 and f2 must be scalar".into()));
        }
        if self.g0.dim_in() != n1 || self.h1.dim_in() != n1 {
            return Err(ProblemError::Dimension("g0 and h1 must act on x".into()));
        }
        if self.h2.dim_in() != n2 {
            return Err(ProblemError::Dimension("h2 must act on z".into()));
        }
        if self.h1.dim_out() != self.h2.dim_out() {
            return Err(ProblemError::Dimension(format!(
                "h1 has {} outputs but h2 has {}",
                self.h1.dim_out(),
                self.h2.dim_out()
            )));
        }
        if !check_affine(self.h1.as_ref(), AFFINE_TRIALS, AFFINE_SEED) {
            return Err(ProblemError::NotAffine("h1".into()));
        }
        if !check_affine(self.h2.as_ref(), AFFINE_TRIALS, AFFINE_SEED) {
            return Err(ProblemError::NotAffine("h2".into()));
        }
        Ok(())
    }
}

/// One batch of constraints together with its share of the objective.
///
/// Every oracle acts on the batch vector `[shared | local]` of length
/// `shared_dim + local_dim`.
#[derive(Clone)]
pub struct ConstraintBatch {
    pub index: usize,
    pub objective: Oracle,
    /// Convex inequality constraints `g0_i(x) <= 0`.
    pub ineq: Option<Oracle>,
    /// Affine equality constraints `h_i(x) = 0`.
    pub eq: Option<Oracle>,
    pub local_dim: usize,
}

impl ConstraintBatch {
    pub fn n_ineq(&self) -> usize {
        self.ineq.as_ref().map_or(0, |o| o.dim_out())
    }

    pub fn n_eq(&self) -> usize {
        self.eq.as_ref().map_or(0, |o| o.dim_out())
    }
}

/// `min Σ f_i(x_i)  s.t.  max(0, g_i(x_i))² = 0,  h_i(x_i) = 0,  x_i^shared = z`.
#[derive(Clone)]
pub struct ConsensusProblem {
    pub shared_dim: usize,
    pub batches: Vec<ConstraintBatch>,
}

impl ConsensusProblem {
    pub fn new(shared_dim: usize, batches: Vec<ConstraintBatch>) -> Result<Self, ProblemError> {
        let p = Self { shared_dim, batches };
        p.validate()?;
        Ok(p)
    }

    pub fn m(&self) -> usize {
        self.batches.len()
    }

    pub fn batch_dim(&self, i: usize) -> usize {
        self.shared_dim + self.batches[i].local_dim
    }

    pub fn total_ineq(&self) -> usize {
        self.batches.iter().map(ConstraintBatch::n_ineq).sum()
    }

    pub fn total_eq(&self) -> usize {
        self.batches.iter().map(ConstraintBatch::n_eq).sum()
    }

    /// Number of scalar variables after merging all batches.
    pub fn merged_dim(&self) -> usize {
        self.shared_dim + self.batches.iter().map(|b| b.local_dim).sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.batches.is_empty() {
            return Err(ProblemError::Dimension("at least one batch is required".into()));
        }
        if self.shared_dim == 0 {
            return Err(ProblemError::Dimension("shared_dim must be >= 1".into()));
        }
        for (i, b) in self.batches.iter().enumerate() {
            let dim = self.shared_dim + b.local_dim;
            if b.objective.dim_in() != dim || b.objective.dim_out() != 1 {
                return Err(ProblemError::Dimension(format!(
                    "batch {i}: objective must be scalar on {dim} variables"
                )));
            }
            for (name, o) in [("ineq", &b.ineq), ("eq", &b.eq)] {
                if let Some(o) = o {
                    if o.dim_in() != dim {
                        return Err(ProblemError::Dimension(format!(
                            "batch {i}: {name} oracle takes {} inputs, expected {dim}",
                            o.dim_in()
                        )));
                    }
                }
            }
            if let Some(h) = &b.eq {
                if !check_affine(h.as_ref(), AFFINE_TRIALS, AFFINE_SEED + i as u64) {
                    return Err(ProblemError::NotAffine(format!("batch {i} equality")));
                }
            }
        }
        Ok(())
    }

    /// The objective `Σ f_i(x_i)`.
    pub fn objective(&self, xs: &[Vec<f64>]) -> f64 {
        let mut acc = 0.0;
        for (b, x) in self.batches.iter().zip(xs) {
            acc += crate::oracle::scalar_value(b.objective.as_ref(), x);
        }
        acc
    }

    /// Batch vectors built from a single merged point (all copies of the
    /// shared part equal `z`).
    pub fn split_merged(&self, merged: &[f64]) -> Vec<Vec<f64>> {
        let s = self.shared_dim;
        let mut off = s;
        self.batches
            .iter()
            .map(|b| {
                let mut x = Vec::with_capacity(s + b.local_dim);
                x.extend_from_slice(&merged[..s]);
                x.extend_from_slice(&merged[off..off + b.local_dim]);
                off += b.local_dim;
                x
            })
            .collect()
    }

    /// Every oracle the solver evaluates, labelled by batch and role. The
    /// squared hinge of each inequality is listed next to it.
    pub fn oracles(&self) -> Vec<(String, Oracle)> {
        let mut out = Vec::new();
        for (i, b) in self.batches.iter().enumerate() {
            out.push((format!("batch {i} objective"), b.objective.clone()));
            if let Some(g) = &b.ineq {
                out.push((format!("batch {i} ineq"), g.clone()));
                out.push((
                    format!("batch {i} ineq squared hinge"),
                    Arc::new(crate::oracle::SquaredHingeOracle(g.clone())) as Oracle,
                ));
            }
            if let Some(h) = &b.eq {
                out.push((format!("batch {i} eq"), h.clone()));
            }
        }
        out
    }

    /// The same problem with every inequality `g0_i <= 0` replaced by the
    /// equivalent `s·g0_i <= 0`.
    ///
    /// Under the squared hinge this multiplies the constraint part of the
    /// augmented Lagrangian by `s⁴` while leaving the consensus part alone.
    pub fn with_constraint_scale(&self, s: f64) -> Result<ConsensusProblem, ProblemError> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(ProblemError::Dimension(format!(
                "constraint scale {s} must be positive"
            )));
        }
        let batches = self
            .batches
            .iter()
            .map(|b| ConstraintBatch {
                ineq: b
                    .ineq
                    .clone()
                    .map(|g| Arc::new(crate::oracle::ScaledOracle { inner: g, scale: s }) as Oracle),
                ..b.clone()
            })
            .collect();
        ConsensusProblem::new(self.shared_dim, batches)
    }

    /// Collapses all batches into a single batch over
    /// `[shared | local_1 | ... | local_m]`, constraints stacked in batch order.
    pub fn merged(&self) -> ConsensusProblem {
        let layout = Arc::new(MergeLayout::new(self));
        let objective: Oracle = Arc::new(MergedOracle {
            layout: layout.clone(),
            parts: self.batches.iter().map(|b| Some(b.objective.clone())).collect(),
            sum_outputs: true,
        });
        let ineq = self.batches.iter().any(|b| b.ineq.is_some()).then(|| {
            Arc::new(MergedOracle {
                layout: layout.clone(),
                parts: self.batches.iter().map(|b| b.ineq.clone()).collect(),
                sum_outputs: false,
            }) as Oracle
        });
        let eq = self.batches.iter().any(|b| b.eq.is_some()).then(|| {
            Arc::new(MergedOracle {
                layout: layout.clone(),
                parts: self.batches.iter().map(|b| b.eq.clone()).collect(),
                sum_outputs: false,
            }) as Oracle
        });
        ConsensusProblem {
            shared_dim: self.shared_dim,
            batches: vec![ConstraintBatch {
                index: 0,
                objective,
                ineq,
                eq,
                local_dim: self.merged_dim() - self.shared_dim,
            }],
        }
    }
}

struct MergeLayout {
    shared: usize,
    /// Offset of each batch's local block in the merged vector.
    local_offsets: Vec<usize>,
    local_dims: Vec<usize>,
    total: usize,
}

impl MergeLayout {
    fn new(p: &ConsensusProblem) -> Self {
        let mut off = p.shared_dim;
        let mut local_offsets = Vec::new();
        let mut local_dims = Vec::new();
        for b in &p.batches {
            local_offsets.push(off);
            local_dims.push(b.local_dim);
            off += b.local_dim;
        }
        Self {
            shared: p.shared_dim,
            local_offsets,
            local_dims,
            total: off,
        }
    }

    fn gather(&self, i: usize, merged: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&merged[..self.shared]);
        let o = self.local_offsets[i];
        out.extend_from_slice(&merged[o..o + self.local_dims[i]]);
    }

    fn scatter_add(&self, i: usize, part: &[f64], merged: &mut [f64]) {
        linalg::axpy(1.0, &part[..self.shared], &mut merged[..self.shared]);
        let o = self.local_offsets[i];
        linalg::axpy(1.0, &part[self.shared..], &mut merged[o..o + self.local_dims[i]]);
    }
}

struct MergedOracle {
    layout: Arc<MergeLayout>,
    parts: Vec<Option<Oracle>>,
    /// Scalar objectives are summed; constraint oracles are stacked.
    sum_outputs: bool,
}

impl MergedOracle {
    fn part_dims(&self) -> impl Iterator<Item = (usize, &dyn FunctionOracle)> {
        self.parts
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_deref().map(|o| (i, o)))
    }
}

impl FunctionOracle for MergedOracle {
    fn dim_in(&self) -> usize {
        self.layout.total
    }

    fn dim_out(&self) -> usize {
        if self.sum_outputs {
            1
        } else {
            self.part_dims().map(|(_, o)| o.dim_out()).sum()
        }
    }

    fn values(&self, x: &[f64], out: &mut [f64]) {
        let mut xi = Vec::new();
        if self.sum_outputs {
            let mut acc = 0.0;
            let mut v = [0.0];
            for (i, o) in self.part_dims() {
                self.layout.gather(i, x, &mut xi);
                o.values(&xi, &mut v);
                acc += v[0];
            }
            out[0] = acc;
        } else {
            let mut off = 0;
            for (i, o) in self.part_dims() {
                self.layout.gather(i, x, &mut xi);
                let k = o.dim_out();
                o.values(&xi, &mut out[off..off + k]);
                off += k;
            }
        }
    }

    fn jacobian(&self, x: &[f64]) -> Matrix {
        let n = self.layout.total;
        let mut jac = Matrix::zeros(self.dim_out(), n);
        let mut xi = Vec::new();
        let mut row_off = 0;
        let s = self.layout.shared;
        for (i, o) in self.part_dims() {
            self.layout.gather(i, x, &mut xi);
            let pj = o.jacobian(&xi);
            let lo = self.layout.local_offsets[i];
            for r in 0..pj.rows() {
                let target = if self.sum_outputs { 0 } else { row_off + r };
                let src = pj.row(r);
                let dst = jac.row_mut(target);
                for c in 0..s {
                    dst[c] += src[c];
                }
                for c in s..src.len() {
                    dst[lo + c - s] += src[c];
                }
            }
            if !self.sum_outputs {
                row_off += pj.rows();
            }
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
        let mut xi = Vec::new();
        let mut gi = Vec::new();
        if self.sum_outputs {
            let mut acc = 0.0;
            let mut parts = Vec::new();
            for (i, o) in self.part_dims() {
                self.layout.gather(i, x, &mut xi);
                let mut v = [0.0];
                o.values(&xi, &mut v);
                parts.push(v[0]);
                acc += v[0];
            }
            values[0] = acc;
            let w = weight(0, acc);
            if w != 0.0 {
                for (i, o) in self.part_dims() {
                    self.layout.gather(i, x, &mut xi);
                    gi.clear();
                    gi.resize(xi.len(), 0.0);
                    let mut v = [0.0];
                    o.weighted_gradient(&xi, &mut |_, _| w, &mut v, &mut gi);
                    self.layout.scatter_add(i, &gi, grad);
                }
            }
        } else {
            let mut off = 0;
            for (i, o) in self.part_dims() {
                self.layout.gather(i, x, &mut xi);
                gi.clear();
                gi.resize(xi.len(), 0.0);
                let k = o.dim_out();
                o.weighted_gradient(&xi, &mut |j, v| weight(off + j, v), &mut values[off..off + k], &mut gi);
                self.layout.scatter_add(i, &gi, grad);
                off += k;
            }
        }
    }
}
