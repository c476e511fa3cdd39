//! One experiment cell: instance, reference, solver run.

use std::path::Path;

use nlc_admm::admm::{self, AdmmOptions, IterationMetrics, ReferenceSolution, SolverState, StoppingRule};
use nlc_admm::baseline::{self, WorkCounters};
use nlc_admm::instance::{Formulation, Instance};
use nlc_admm::problem::ConsensusProblem;
use nlc_admm::reference::{self, ReferenceOptions};
use nlc_admm::zoo;

use crate::config::{Config, ProblemConfig, ProblemKind, SolverKind};
use crate::CliError;

pub fn load_or_generate(cfg: &ProblemConfig) -> Result<Instance, CliError> {
    if let Some(path) = &cfg.instance {
        return Ok(Instance::load(path)?);
    }
    Ok(match cfg.kind {
        ProblemKind::ToyQp => Instance::ToyQp,
        ProblemKind::EnclosingBall => Instance::EnclosingBall {
            points: zoo::random_points(cfg.n_points, cfg.n_features, cfg.seed),
            m_batches: cfg.m_batches,
        },
        ProblemKind::RobustSvm => Instance::RobustSvm(zoo::sample_robust_svm(&cfg.svm_config())?),
    })
}

/// An instance with its problem and reference, ready to run.
#[derive(Clone)]
pub struct Prepared {
    pub instance: Instance,
    pub hash: String,
    pub formulation: Formulation,
    pub problem: ConsensusProblem,
    pub reference: ReferenceSolution,
}

impl Prepared {
    pub fn new(
        instance: Instance,
        formulation: Formulation,
        opts: &ReferenceOptions,
        cache: Option<&Path>,
    ) -> Result<Self, CliError> {
        let problem = instance.build_with(&formulation)?;
        let hash = instance.hash();
        let compute = || instance.reference(&formulation, opts);
        let reference = match cache {
            // the scale does not enter the stored values, the slack unit does
            Some(dir) => reference::cached_reference(dir, &hash, &format!("u{:e}", formulation.slack_unit), compute)?,
            None => compute()?,
        };
        Ok(Self {
            instance,
            hash,
            formulation,
            problem,
            reference,
        })
    }

    pub fn from_config(cfg: &Config, cache: Option<&Path>) -> Result<Self, CliError> {
        let instance = load_or_generate(&cfg.problem)?;
        let slack_unit = match &instance {
            Instance::RobustSvm(inst) => cfg
                .problem
                .slack_unit
                .unwrap_or_else(|| zoo::auto_slack_unit(inst.n_features)),
            _ => 1.0,
        };
        let formulation = Formulation {
            constraint_scale: cfg.problem.constraint_scale,
            slack_unit,
        };
        let mut prepared = Self::new(instance, formulation, &cfg.reference.options(), cache)?;
        if cfg.reference.dual_run_factor > 0 {
            prepared.reference = long_run_duals(cfg, &prepared)?;
        }
        Ok(prepared)
    }
}

/// Reference whose `μ*`, `λ*` are the final duals of an extended run
/// `dual_run_factor` times longer than `solver.max_iters`.
pub fn long_run_duals(cfg: &Config, prepared: &Prepared) -> Result<ReferenceSolution, CliError> {
    let mut opts = extended_options(cfg)?;
    opts.stopping = StoppingRule::iterations(cfg.solver.max_iters * cfg.reference.dual_run_factor);
    let out = admm::solve(&prepared.problem, &opts, None)?;
    Ok(reference::with_run_duals(prepared.reference.clone(), &out.state))
}

pub fn extended_options(cfg: &Config) -> Result<AdmmOptions, CliError> {
    let s = &cfg.solver;
    Ok(AdmmOptions {
        rho: s.rho,
        stopping: s.stopping(),
        inner: s.inner(),
        workers: s.workers,
        policy: s.policy()?,
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub solver: SolverKind,
    pub trace: Vec<IterationMetrics>,
    pub converged: bool,
    pub state: SolverState,
    /// Rounds of the extended method, middle iterations of the baseline.
    pub iterations: usize,
    pub inner_iters: usize,
    /// Baseline only.
    pub work: Option<WorkCounters>,
}

impl RunResult {
    pub fn last(&self) -> Option<&IterationMetrics> {
        self.trace.last()
    }
}

pub fn run(cfg: &Config, prepared: &Prepared) -> Result<RunResult, CliError> {
    run_with(cfg, prepared, &mut |_, _| {})
}

/// [`run`] with a per-iteration observer (extended solver only).
pub fn run_with(
    cfg: &Config,
    prepared: &Prepared,
    observer: &mut dyn FnMut(&SolverState, &IterationMetrics),
) -> Result<RunResult, CliError> {
    let reference = Some(&prepared.reference);
    match cfg.solver.kind {
        SolverKind::Extended => {
            let opts = extended_options(cfg)?;
            let state = SolverState::zeros(&prepared.problem, opts.rho);
            let out = admm::solve_observed(&prepared.problem, state, &opts, reference, observer)?;
            Ok(RunResult {
                solver: SolverKind::Extended,
                iterations: out.state.k,
                inner_iters: out.total_inner_iters,
                converged: out.converged,
                trace: out.trace,
                state: out.state,
                work: None,
            })
        }
        SolverKind::Baseline => {
            let out = baseline::baseline_solve(&prepared.problem, &cfg.baseline_options()?, reference)?;
            Ok(RunResult {
                solver: SolverKind::Baseline,
                iterations: out.work.middle_iters,
                inner_iters: out.work.inner_iters,
                converged: out.converged,
                trace: out.trace,
                state: out.state,
                work: Some(out.work),
            })
        }
    }
}

/// `|f − f*| / max(1, |f*|)`
pub fn relative_gap(f: f64, f_star: f64) -> f64 {
    (f - f_star).abs() / f_star.abs().max(1.0)
}
