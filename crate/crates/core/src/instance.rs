//! Replayable problem instances stored as versioned JSON.
//!
//! ```json
//! { "format": "nlc-admm-instance", "version": 1,
//!   "problem": { "kind": "robust_svm", "n_features": 2, "points": [[..]], ... } }
//! ```
//!
//! `kind` is one of `toy_qp`, `enclosing_ball` (`points`, `m_batches`) or
//! `robust_svm` (the fields of [`RobustSvmInstance`]). The instance hash is
//! the SHA-256 of the compact serialization and keys the reference cache.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::admm::ReferenceSolution;
use crate::error::{FormatError, ReferenceError, ZooError};
use crate::problem::ConsensusProblem;
use crate::reference::{self, ReferenceOptions};
use crate::zoo::{self, RobustSvmInstance};

pub const FORMAT: &str = "nlc-admm-instance";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Instance {
    ToyQp,
    EnclosingBall { points: Vec<Vec<f64>>, m_batches: usize },
    RobustSvm(RobustSvmInstance),
}

/// Equivalent reformulations applied when building the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formulation {
    /// Every inequality `g0 <= 0` becomes `s·g0 <= 0`.
    pub constraint_scale: f64,
    /// Robust SVM only: the local variables are `ξ / slack_unit`.
    pub slack_unit: f64,
}

impl Default for Formulation {
    fn default() -> Self {
        Self {
            constraint_scale: 1.0,
            slack_unit: 1.0,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    format: String,
    version: u32,
    problem: Instance,
}

impl Instance {
    pub fn build(&self) -> Result<ConsensusProblem, ZooError> {
        match self {
            Instance::ToyQp => Ok(zoo::toy_1d_qp()),
            Instance::EnclosingBall { points, m_batches } => zoo::generate_enclosing_ball(points, *m_batches),
            Instance::RobustSvm(inst) => inst.problem(),
        }
    }

    pub fn build_with(&self, f: &Formulation) -> Result<ConsensusProblem, ZooError> {
        let p = match self {
            Instance::RobustSvm(inst) => inst.problem_with_slack_unit(f.slack_unit)?,
            other => other.build()?,
        };
        Ok(p.with_constraint_scale(f.constraint_scale)?)
    }

    /// Primal reference and KKT `λ*` for `build_with(f)`: closed form for
    /// the toy problem, the slack-eliminating solver for the robust SVM and
    /// the generic augmented Lagrangian otherwise. `μ*` is zero.
    pub fn reference(&self, f: &Formulation, opts: &ReferenceOptions) -> Result<ReferenceSolution, ReferenceError> {
        match self {
            Instance::ToyQp => Ok(reference::toy_reference(&self.build()?)),
            Instance::RobustSvm(inst) => reference::robust_svm_reference(inst, f.slack_unit, opts),
            Instance::EnclosingBall { .. } => reference::solve_reference(&self.build()?, opts),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Instance::ToyQp => "toy_qp",
            Instance::EnclosingBall { .. } => "enclosing_ball",
            Instance::RobustSvm(_) => "robust_svm",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&InstanceFile {
            format: FORMAT.into(),
            version: VERSION,
            problem: self.clone(),
        })
        .expect("instances always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        if v.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
            return Err(FormatError::Parse {
                line: 1,
                msg: format!("not an {FORMAT} file"),
            });
        }
        let version = v.get("version").and_then(|f| f.as_u64());
        if version != Some(u64::from(VERSION)) {
            return Err(FormatError::Version(format!("{version:?}")));
        }
        let file: InstanceFile = serde_json::from_value(v)?;
        if let Instance::RobustSvm(inst) = &file.problem {
            inst.validate()?;
        }
        Ok(file.problem)
    }

    /// Hex SHA-256 of [`Instance::to_json`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::RobustSvmConfig;

    #[test]
    fn round_trip_is_exact_and_hash_stable() {
        let cfg = RobustSvmConfig {
            n_points: 7,
            n_features: 3,
            m_batches: 2,
            ..RobustSvmConfig::default()
        };
        let inst = Instance::RobustSvm(zoo::sample_robust_svm(&cfg).unwrap());
        let back = Instance::from_json(&inst.to_json()).unwrap();
        assert_eq!(back, inst);
        assert_eq!(back.hash(), inst.hash());
        let other = Instance::RobustSvm(zoo::sample_robust_svm(&RobustSvmConfig { seed: 1, ..cfg }).unwrap());
        assert_ne!(other.hash(), inst.hash());
    }

    #[test]
    fn rejects_wrong_version_and_format() {
        let text = Instance::ToyQp.to_json();
        assert!(matches!(
            Instance::from_json(&text.replace("\"version\":1", "\"version\":9")),
            Err(FormatError::Version(_))
        ));
        assert!(matches!(
            Instance::from_json(&text.replace(FORMAT, "other")),
            Err(FormatError::Parse { .. })
        ));
    }

    #[test]
    fn rejects_inconsistent_svm() {
        let mut inst = zoo::sample_robust_svm(&RobustSvmConfig {
            n_points: 4,
            n_features: 2,
            m_batches: 2,
            ..RobustSvmConfig::default()
        })
        .unwrap();
        inst.batches = vec![vec![0, 1], vec![1, 2, 3]];
        let text = Instance::RobustSvm(inst).to_json();
        assert!(matches!(Instance::from_json(&text), Err(FormatError::Zoo(_))));
    }
}
