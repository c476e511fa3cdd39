//! Node, data and accuracy studies: iterations to reach the reference
//! tolerance over a grid of settings and seeds.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{Config, SolverKind, Study, TolMode};
use crate::experiment::{self, Prepared};
use crate::CliError;

/// One solver run of one grid point and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub value: f64,
    pub seed: u64,
    pub solver: SolverKind,
    pub iterations: usize,
    pub inner_iters: usize,
    pub converged: bool,
    /// Set when the cell failed; the study continues.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub value: f64,
    pub solver: SolverKind,
    pub runs: usize,
    /// Runs that reached the tolerance; the statistics cover these only.
    pub converged: usize,
    pub mean_iters: f64,
    pub std_iters: f64,
    pub mean_inner: f64,
    pub std_inner: f64,
}

/// The config of one grid point and seed index. Runs always stop on the
/// reference distance.
pub fn cell_config(base: &Config, value: f64, seed_index: usize) -> Config {
    let mut cfg = base.clone();
    cfg.problem.seed = base.problem.seed + seed_index as u64;
    cfg.solver.tol_mode = TolMode::Reference;
    match base.scaling.study {
        Study::Nodes => {
            cfg.problem.m_batches = value as usize;
            cfg.solver.workers = value as usize;
        }
        Study::Data => cfg.problem.n_points = value as usize,
        Study::Accuracy => cfg.solver.tol_reference = value,
    }
    cfg
}

fn solver_name(s: SolverKind) -> &'static str {
    match s {
        SolverKind::Extended => "extended",
        SolverKind::Baseline => "baseline",
    }
}

/// Runs every grid point, seed and solver, reporting each run to
/// `progress` as it finishes.
pub fn run_study(
    cfg: &Config,
    cache: Option<&Path>,
    progress: &mut dyn FnMut(&CellRun),
) -> Result<Vec<CellRun>, CliError> {
    if cfg.scaling.values.is_empty() || cfg.scaling.solvers.is_empty() {
        return Err(CliError::Config(
            "scaling needs at least one value and one solver".into(),
        ));
    }
    if cfg.scaling.values.iter().any(|v| !(*v > 0.0)) {
        return Err(CliError::Config("scaling values must be positive".into()));
    }
    let mut runs = Vec::new();
    for &value in &cfg.scaling.values {
        for i in 0..cfg.scaling.seeds {
            let cell = cell_config(cfg, value, i);
            cell.validate()?;
            let prepared = Prepared::from_config(&cell, cache);
            for &solver in &cfg.scaling.solvers {
                let mut run_cfg = cell.clone();
                run_cfg.solver.kind = solver;
                let outcome = prepared
                    .as_ref()
                    .map_err(|e| e.to_string())
                    .and_then(|p| experiment::run(&run_cfg, p).map_err(|e| e.to_string()));
                let run = match outcome {
                    Ok(r) => CellRun {
                        value,
                        seed: cell.problem.seed,
                        solver,
                        iterations: r.iterations,
                        inner_iters: r.inner_iters,
                        converged: r.converged,
                        error: None,
                    },
                    Err(e) => CellRun {
                        value,
                        seed: cell.problem.seed,
                        solver,
                        iterations: 0,
                        inner_iters: 0,
                        converged: false,
                        error: Some(e),
                    },
                };
                progress(&run);
                runs.push(run);
            }
        }
    }
    Ok(runs)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per grid point and solver, in first-appearance order.
pub fn summarize(runs: &[CellRun]) -> Vec<CellSummary> {
    let mut keys: Vec<(f64, SolverKind)> = Vec::new();
    for r in runs {
        if !keys.contains(&(r.value, r.solver)) {
            keys.push((r.value, r.solver));
        }
    }
    keys.into_iter()
        .map(|(value, solver)| {
            let cell: Vec<&CellRun> = runs.iter().filter(|r| r.value == value && r.solver == solver).collect();
            let ok: Vec<&&CellRun> = cell.iter().filter(|r| r.converged).collect();
            let (mean_iters, std_iters) = mean_std(&ok.iter().map(|r| r.iterations as f64).collect::<Vec<_>>());
            let (mean_inner, std_inner) = mean_std(&ok.iter().map(|r| r.inner_iters as f64).collect::<Vec<_>>());
            CellSummary {
                value,
                solver,
                runs: cell.len(),
                converged: ok.len(),
                mean_iters,
                std_iters,
                mean_inner,
                std_inner,
            }
        })
        .collect()
}

pub fn runs_csv(study: Study, runs: &[CellRun]) -> String {
    let mut out = String::from("study,value,seed,solver,iterations,inner_iters,converged,error\n");
    for r in runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            study_name(study),
            r.value,
            r.seed,
            solver_name(r.solver),
            r.iterations,
            r.inner_iters,
            r.converged,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
        );
    }
    out
}

pub fn summary_csv(study: Study, cells: &[CellSummary]) -> String {
    let mut out =
        String::from("study,value,solver,runs,converged,mean_iters,std_iters,mean_inner_iters,std_inner_iters\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.3},{:.3},{:.1},{:.1}",
            study_name(study),
            c.value,
            solver_name(c.solver),
            c.runs,
            c.converged,
            c.mean_iters,
            c.std_iters,
            c.mean_inner,
            c.std_inner
        );
    }
    out
}

fn study_name(s: Study) -> &'static str {
    match s {
        Study::Nodes => "nodes",
        Study::Data => "data",
        Study::Accuracy => "accuracy",
    }
}
