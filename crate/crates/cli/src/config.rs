//! Experiment configuration.
//!
//! A TOML file with the sections `[problem]`, `[solver]`, `[baseline]`,
//! `[reference]` and `[scaling]`; every key is optional. Precedence, lowest
//! first: built-in defaults, the config file, command-line flags.
//!
//! ```toml
//! [problem]
//! kind = "robust_svm"        # toy_qp | enclosing_ball | robust_svm
//! n_points = 200
//! n_features = 10
//! m_batches = 4
//! seed = 0
//! constraint_scale = 10.0
//!
//! [solver]
//! kind = "extended"          # extended | baseline
//! rho = 10.0
//! tol_mode = "reference"     # residual | reference | iterations
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use nlc_admm::admm::{StoppingMode, StoppingRule};
use nlc_admm::baseline::BaselineOptions;
use nlc_admm::harness::AssignmentPolicy;
use nlc_admm::lbfgs::InnerSolverOptions;
use nlc_admm::reference::ReferenceOptions;
use nlc_admm::zoo::RobustSvmConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub baseline: BaselineConfig,
    pub reference: ReferenceConfig,
    pub scaling: ScalingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    ToyQp,
    EnclosingBall,
    RobustSvm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Load this instance file instead of generating one.
    pub instance: Option<PathBuf>,
    pub n_points: usize,
    /// Feature count of the SVM, dimension of the ball points.
    pub n_features: usize,
    pub m_batches: usize,
    pub seed: u64,
    pub c: f64,
    pub delta: f64,
    pub flip_fraction: f64,
    pub cov_scale: f64,
    pub constraint_scale: f64,
    /// Robust SVM only; defaults to `nlc_admm::zoo::auto_slack_unit`.
    pub slack_unit: Option<f64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let svm = RobustSvmConfig::default();
        Self {
            kind: ProblemKind::RobustSvm,
            instance: None,
            n_points: svm.n_points,
            n_features: svm.n_features,
            m_batches: svm.m_batches,
            seed: svm.seed,
            c: svm.c,
            delta: svm.delta,
            flip_fraction: svm.flip_fraction,
            cov_scale: svm.cov_scale,
            constraint_scale: 1.0,
            slack_unit: None,
        }
    }
}

impl ProblemConfig {
    pub fn svm_config(&self) -> RobustSvmConfig {
        RobustSvmConfig {
            n_points: self.n_points,
            n_features: self.n_features,
            m_batches: self.m_batches,
            c: self.c,
            delta: self.delta,
            seed: self.seed,
            flip_fraction: self.flip_fraction,
            cov_scale: self.cov_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Extended,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TolMode {
    Residual,
    Reference,
    Iterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub rho: f64,
    pub workers: usize,
    /// `contiguous` or `round_robin`.
    pub policy: String,
    pub tol_mode: TolMode,
    pub tol_residual: f64,
    pub tol_z_change: f64,
    pub tol_reference: f64,
    pub max_iters: usize,
    pub inner_grad_tol: f64,
    pub inner_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let stop = StoppingRule::default();
        let inner = InnerSolverOptions::default();
        Self {
            kind: SolverKind::Extended,
            rho: 1.0,
            workers: 1,
            policy: "contiguous".into(),
            tol_mode: TolMode::Residual,
            tol_residual: stop.tol_residual,
            tol_z_change: stop.tol_z_change,
            tol_reference: stop.tol_reference_inf,
            max_iters: stop.max_iters,
            inner_grad_tol: inner.grad_tol,
            inner_max_iters: inner.max_iters,
        }
    }
}

impl SolverConfig {
    pub fn policy(&self) -> Result<AssignmentPolicy, CliError> {
        AssignmentPolicy::from_str(&self.policy).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn stopping(&self) -> StoppingRule {
        let mode = match self.tol_mode {
            TolMode::Residual => StoppingMode::Residual,
            TolMode::Reference => StoppingMode::ReferenceDistance,
            TolMode::Iterations => StoppingMode::MaxIters,
        };
        StoppingRule {
            mode,
            tol_residual: self.tol_residual,
            tol_z_change: self.tol_z_change,
            tol_reference_inf: self.tol_reference,
            max_iters: self.max_iters,
        }
    }

    pub fn inner(&self) -> InnerSolverOptions {
        InnerSolverOptions::default()
            .with_grad_tol(self.inner_grad_tol)
            .with_max_iters(self.inner_max_iters)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Defaults to `solver.rho`.
    pub rho_outer: Option<f64>,
    pub outer_tol: f64,
    pub inner_admm_tol: f64,
    pub max_outer: usize,
    pub max_middle: usize,
    pub growth: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let b = BaselineOptions::default();
        Self {
            rho_outer: None,
            outer_tol: 1e-3,
            inner_admm_tol: 1e-3,
            max_outer: 1000,
            max_middle: b.max_middle,
            growth: b.growth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub tight_tol: f64,
    /// When positive, `μ*` and `λ*` come from an extended run this many
    /// times longer than `solver.max_iters`.
    pub dual_run_factor: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            tight_tol: ReferenceOptions::default().tight_tol,
            dual_run_factor: 0,
        }
    }
}

impl ReferenceConfig {
    pub fn options(&self) -> ReferenceOptions {
        ReferenceOptions {
            tight_tol: self.tight_tol,
            ..ReferenceOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// `values` are batch counts; one worker per batch, fixed total data.
    Nodes,
    /// `values` are point counts.
    Data,
    /// `values` are `‖z − z*‖_∞` tolerances.
    Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub study: Study,
    pub values: Vec<f64>,
    pub seeds: usize,
    pub solvers: Vec<SolverKind>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            study: Study::Nodes,
            values: vec![4.0, 8.0, 12.0, 16.0],
            seeds: 10,
            solvers: vec![SolverKind::Extended, SolverKind::Baseline],
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn baseline_options(&self) -> Result<BaselineOptions, CliError> {
        let s = &self.solver;
        let b = &self.baseline;
        Ok(BaselineOptions {
            rho_outer: b.rho_outer.unwrap_or(s.rho),
            rho_admm: s.rho,
            outer_tol: b.outer_tol,
            inner_admm_tol: b.inner_admm_tol,
            max_outer: b.max_outer,
            max_middle: b.max_middle,
            growth: b.growth,
            reference_tol_inf: (s.tol_mode == TolMode::Reference).then_some(s.tol_reference),
            inner: s.inner(),
            workers: s.workers,
            policy: s.policy()?,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let p = &self.problem;
        if !(p.constraint_scale > 0.0 && p.constraint_scale.is_finite()) {
            return bad(format!("constraint_scale must be positive, got {}", p.constraint_scale));
        }
        if let Some(u) = p.slack_unit {
            if !(u > 0.0 && u.is_finite()) {
                return bad(format!("slack_unit must be positive, got {u}"));
            }
        }
        if p.kind == ProblemKind::EnclosingBall && p.instance.is_none() && (p.n_points == 0 || p.n_features == 0) {
            return bad("enclosing ball needs at least one point of positive dimension".into());
        }
        let s = &self.solver;
        if !(s.rho > 0.0 && s.rho.is_finite()) {
            return bad(format!("rho must be positive, got {}", s.rho));
        }
        if s.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        s.policy()?;
        s.stopping().validate().map_err(|e| CliError::Config(e.to_string()))?;
        s.inner().validate().map_err(|e| CliError::Config(e.to_string()))?;
        if s.kind == SolverKind::Baseline {
            self.baseline_options()?
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.scaling.seeds == 0 {
            return bad("scaling.seeds must be at least 1".into());
        }
        Ok(())
    }
}
