//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test --release -p nlc-admm-cli --test acceptance` runs everything;
//! criterion numbers as trailing arguments select a subset. The process
//! exits non-zero on a failed criterion only when `NLC_ACCEPTANCE_STRICT`
//! is set, so the workspace test run reports the lines without aborting.
//! References are cached in `NLC_ADMM_CACHE` or under the cargo target dir.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nlc_admm::admm::{self, AdmmOptions, IterationMetrics, ReferenceSolution, SolverState, StoppingRule};
use nlc_admm::baseline::{baseline_solve, BaselineOptions};
use nlc_admm::lbfgs::InnerSolverOptions;
use nlc_admm::oracle::random_point_check;
use nlc_admm::problem::ConsensusProblem;
use nlc_admm::reference::{
    self, doubling_schedule, solve_penalty_oracle, solve_reference, with_run_duals, ReferenceOptions,
};
use nlc_admm::zoo::{self, RobustSvmConfig};
use nlc_admm_cli::config::{Config, ProblemKind, SolverKind, TolMode};
use nlc_admm_cli::experiment::{self, relative_gap, Prepared};
use nlc_admm_cli::output::metrics_csv;

const SEEDS: u64 = 10;
/// Stopping tolerance on `‖z − z*‖_∞` of the scaling experiments.
const Z_TOL: f64 = 5e-3;

type Outcome = Result<(bool, String), String>;

fn cache_dir() -> PathBuf {
    std::env::var_os(nlc_admm_cli::CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("reference-cache"))
}

fn within(limit: Duration, started: Instant) -> (bool, String) {
    let t = started.elapsed();
    (t <= limit, format!("{:.1}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---- problem settings ------------------------------------------------------

/// Desk-scale robust SVM: 200 points, 10 features, 4 batches.
fn desk_svm(seed: u64) -> RobustSvmConfig {
    RobustSvmConfig {
        seed,
        ..RobustSvmConfig::default()
    }
}

fn ball_points(seed: u64) -> Vec<Vec<f64>> {
    zoo::random_points(10, 2, seed)
}

/// Config of the 50-feature scaling experiments.
fn scaling_config(n_points: usize, m_batches: usize, seed: u64) -> Config {
    let mut cfg = Config::default();
    cfg.problem.kind = ProblemKind::RobustSvm;
    cfg.problem.n_points = n_points;
    cfg.problem.n_features = 50;
    cfg.problem.m_batches = m_batches;
    cfg.problem.seed = seed;
    cfg.problem.constraint_scale = 10.0;
    cfg.solver.rho = 20.0;
    cfg.solver.workers = 1;
    cfg.solver.tol_mode = TolMode::Reference;
    cfg.solver.tol_reference = Z_TOL;
    cfg.solver.max_iters = 20_000;
    cfg
}

/// Runs the extended method under `cfg`; `(iterations, inner iterations, converged)`.
fn scaling_run(cfg: &Config) -> Result<(usize, usize, bool), String> {
    let cache = cache_dir();
    let prepared = Prepared::from_config(cfg, Some(&cache)).map_err(|e| e.to_string())?;
    let r = experiment::run(cfg, &prepared).map_err(|e| e.to_string())?;
    Ok((r.iterations, r.inner_iters, r.converged))
}

// ---- criterion 1 -------------------------------------------------------------

fn mu_min_over_run(p: &ConsensusProblem, rho: f64, iters: usize) -> Result<f64, String> {
    let opts = AdmmOptions {
        rho,
        stopping: StoppingRule::iterations(iters),
        ..AdmmOptions::default()
    };
    let mut worst = f64::INFINITY;
    admm::solve_observed(p, SolverState::zeros(p, rho), &opts, None, &mut |s, _| {
        worst = worst.min(s.min_mu_g())
    })
    .map_err(|e| e.to_string())?;
    Ok(worst)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = mu_min_over_run(&zoo::toy_1d_qp(), 2000.0, 500)?;
    let mut runs = 1;
    for seed in 0..SEEDS {
        let ball = zoo::generate_enclosing_ball(&ball_points(seed), 2).map_err(|e| e.to_string())?;
        worst = worst.min(mu_min_over_run(&ball, 100.0, 300)?);
        let (svm, _) = zoo::generate_robust_svm(&desk_svm(seed)).map_err(|e| e.to_string())?;
        let svm = svm.with_constraint_scale(10.0).map_err(|e| e.to_string())?;
        worst = worst.min(mu_min_over_run(&svm, 10.0, 100)?);
        runs += 2;
    }
    let (fast, t) = within(Duration::from_secs(120), start);
    Ok((worst >= 0.0 && fast, format!("min mu {worst:e} over {runs} runs, {t}")))
}

// ---- criteria 2 and 3 --------------------------------------------------------

struct TraceCase {
    name: &'static str,
    problem: ConsensusProblem,
    reference: ReferenceSolution,
    opts: AdmmOptions,
    /// The long run for `μ*`, `λ*` is this many times `opts.stopping.max_iters`.
    dual_run_factor: usize,
}

fn trace_cases() -> Result<Vec<TraceCase>, String> {
    let inner = InnerSolverOptions::default().with_grad_tol(1e-8);
    let toy = zoo::toy_1d_qp();
    let ball = zoo::generate_enclosing_ball(&ball_points(7), 2).map_err(|e| e.to_string())?;
    let ball_ref = solve_reference(&ball, &ReferenceOptions::default()).map_err(|e| e.to_string())?;
    let inst = zoo::sample_robust_svm(&desk_svm(0)).map_err(|e| e.to_string())?;
    let unit = zoo::auto_slack_unit(inst.n_features);
    let svm = inst
        .problem_with_slack_unit(unit)
        .and_then(|p| Ok(p.with_constraint_scale(10.0)?))
        .map_err(|e| e.to_string())?;
    let svm_ref =
        reference::robust_svm_reference(&inst, unit, &ReferenceOptions::default()).map_err(|e| e.to_string())?;
    let residual = |tol_z, max| {
        let mut s = StoppingRule::residual(1e-3, max);
        s.tol_z_change = tol_z;
        s
    };
    Ok(vec![
        TraceCase {
            name: "toy",
            reference: reference::toy_reference(&toy),
            problem: toy,
            opts: AdmmOptions {
                rho: 2000.0,
                stopping: residual(5e-7, 3400),
                inner,
                ..AdmmOptions::default()
            },
            dual_run_factor: 10,
        },
        TraceCase {
            name: "ball",
            problem: ball,
            reference: ball_ref,
            opts: AdmmOptions {
                rho: 100.0,
                stopping: residual(1e-5, 2200),
                inner,
                ..AdmmOptions::default()
            },
            dual_run_factor: 10,
        },
        TraceCase {
            name: "svm",
            problem: svm,
            reference: svm_ref,
            opts: AdmmOptions {
                rho: 10.0,
                stopping: residual(1e-5, 2800),
                inner,
                ..AdmmOptions::default()
            },
            dual_run_factor: 3,
        },
    ])
}

struct TraceRun {
    name: &'static str,
    trace: Vec<IterationMetrics>,
    converged: bool,
    f_star: f64,
}

/// Each case once: long run for the duals, then the measured run.
fn trace_runs() -> Result<Vec<TraceRun>, String> {
    let mut out = Vec::new();
    for c in trace_cases()? {
        let mut long = c.opts;
        long.stopping = StoppingRule::iterations(c.opts.stopping.max_iters * c.dual_run_factor);
        let run = admm::solve(&c.problem, &long, None).map_err(|e| e.to_string())?;
        let reference = with_run_duals(c.reference, &run.state);
        let out_run = admm::solve(&c.problem, &c.opts, Some(&reference)).map_err(|e| e.to_string())?;
        out.push(TraceRun {
            name: c.name,
            trace: out_run.trace,
            converged: out_run.converged,
            f_star: reference.f_star,
        });
    }
    Ok(out)
}

fn criterion_2(runs: &[TraceRun], started: Instant) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let vs: Vec<f64> = r.trace.iter().map(|m| m.v_k.expect("reference given")).collect();
        let tol = 1e-6 * (1.0 + vs[0]);
        let worst = vs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        ok &= worst <= tol;
        parts.push(format!(
            "{} max increase {worst:.2e} (tol {tol:.2e}, {} iters)",
            r.name,
            vs.len()
        ));
    }
    let (fast, t) = within(Duration::from_secs(600), started);
    Ok((ok && fast, format!("{}; {t}", parts.join("; "))))
}

fn criterion_3(runs: &[TraceRun], started: Instant) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let last = r.trace.last().ok_or("empty trace")?;
        let res = last.r_g_norm.max(last.r_h_norm).max(last.r_consensus_norm);
        let gap = relative_gap(last.f_k, r.f_star);
        ok &= r.converged && res <= 1e-3 && last.k <= 5000 && gap <= 1e-2;
        parts.push(format!("{} k={} residual {res:.2e} f gap {gap:.2e}", r.name, last.k));
    }
    let (fast, t) = within(Duration::from_secs(600), started);
    Ok((ok && fast, format!("{}; {t}", parts.join("; "))))
}

// ---- criteria 4 and 6 --------------------------------------------------------

struct DataRuns {
    /// `(iterations, converged)` per seed.
    at_2000: Vec<(usize, bool)>,
    at_500: Vec<(usize, bool)>,
    time_2000: Duration,
}

fn data_runs(with_500: bool) -> Result<DataRuns, String> {
    let start = Instant::now();
    let mut at_2000 = Vec::new();
    for seed in 0..SEEDS {
        let (k, _, conv) = scaling_run(&scaling_config(2000, 8, seed))?;
        at_2000.push((k, conv));
    }
    let time_2000 = start.elapsed();
    let mut at_500 = Vec::new();
    if with_500 {
        for seed in 0..SEEDS {
            let (k, _, conv) = scaling_run(&scaling_config(500, 8, seed))?;
            at_500.push((k, conv));
        }
    }
    Ok(DataRuns {
        at_2000,
        at_500,
        time_2000,
    })
}

fn criterion_4(d: &DataRuns) -> Outcome {
    let hits = d.at_2000.iter().filter(|(k, c)| *c && *k <= 20_000).count();
    let fast = d.time_2000 <= Duration::from_secs(1800);
    let iters: Vec<usize> = d.at_2000.iter().map(|r| r.0).collect();
    Ok((
        hits >= 9 && fast,
        format!(
            "{hits}/{SEEDS} seeds reached {Z_TOL:e}, iterations {iters:?}, {:.0}s of 1800s",
            d.time_2000.as_secs_f64()
        ),
    ))
}

fn criterion_6(d: &DataRuns) -> Outcome {
    let all = d.at_2000.iter().chain(&d.at_500).all(|r| r.1);
    let m2000 = mean(&d.at_2000.iter().map(|r| r.0 as f64).collect::<Vec<_>>());
    let m500 = mean(&d.at_500.iter().map(|r| r.0 as f64).collect::<Vec<_>>());
    Ok((
        all && m2000 < m500,
        format!("mean iterations {m2000:.1} at 2000 points vs {m500:.1} at 500 points"),
    ))
}

// ---- criterion 5 ---------------------------------------------------------------

fn criterion_5() -> Outcome {
    let mut iters = [Vec::new(), Vec::new()];
    for (slot, nodes) in [4usize, 16].into_iter().enumerate() {
        for seed in 0..SEEDS {
            let mut cfg = scaling_config(2000, nodes, seed);
            cfg.solver.workers = nodes;
            let (k, _, conv) = scaling_run(&cfg)?;
            if !conv {
                return Ok((
                    false,
                    format!("{nodes} nodes, seed {seed}: no convergence in {k} iterations"),
                ));
            }
            iters[slot].push(k as f64);
        }
    }
    let (m4, m16) = (mean(&iters[0]), mean(&iters[1]));
    Ok((
        m16 <= 2.5 * m4,
        format!(
            "mean iterations {m4:.1} at 4 nodes, {m16:.1} at 16 nodes, ratio {:.2}",
            m16 / m4
        ),
    ))
}

// ---- criterion 7 ---------------------------------------------------------------

fn criterion_7() -> Outcome {
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..SEEDS {
        let mut cfg = Config::default();
        cfg.problem.seed = seed;
        cfg.problem.constraint_scale = 10.0;
        cfg.solver.rho = 10.0;
        cfg.solver.tol_mode = TolMode::Reference;
        cfg.solver.tol_reference = Z_TOL;
        cfg.solver.max_iters = 20_000;
        let cache = cache_dir();
        let prepared = Prepared::from_config(&cfg, Some(&cache)).map_err(|e| e.to_string())?;
        cfg.solver.kind = SolverKind::Extended;
        let ext = experiment::run(&cfg, &prepared).map_err(|e| e.to_string())?;
        cfg.solver.kind = SolverKind::Baseline;
        let base = experiment::run(&cfg, &prepared);
        let (base_work, base_ok) = match &base {
            Ok(b) => (b.inner_iters, b.converged),
            Err(_) => (usize::MAX, false),
        };
        if ext.converged && (!base_ok || ext.inner_iters < base_work) {
            wins += 1;
        }
        pairs.push(format!(
            "{}/{}",
            ext.inner_iters,
            if base_ok { base_work.to_string() } else { "fail".into() }
        ));
    }
    Ok((
        wins >= 8,
        format!(
            "extended used fewer inner iterations on {wins}/{SEEDS} seeds (extended/baseline: {})",
            pairs.join(" ")
        ),
    ))
}

// ---- criterion 8 ---------------------------------------------------------------

/// Smallest circle through 2 or 3 of the points that contains them all.
fn exhaustive_ball(points: &[Vec<f64>]) -> ([f64; 2], f64) {
    let contains = |c: [f64; 2], r2: f64| {
        points
            .iter()
            .all(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= r2 * (1.0 + 1e-12) + 1e-15)
    };
    let mut best = ([0.0, 0.0], f64::INFINITY);
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            let c = [(points[i][0] + points[j][0]) / 2.0, (points[i][1] + points[j][1]) / 2.0];
            let r2 = (points[i][0] - c[0]).powi(2) + (points[i][1] - c[1]).powi(2);
            if r2 < best.1 && contains(c, r2) {
                best = (c, r2);
            }
            for k in j + 1..n {
                let (a, b, q) = (&points[i], &points[j], &points[k]);
                let d = 2.0 * (a[0] * (b[1] - q[1]) + b[0] * (q[1] - a[1]) + q[0] * (a[1] - b[1]));
                if d.abs() < 1e-14 {
                    continue;
                }
                let (sa, sb, sq) = (
                    a[0] * a[0] + a[1] * a[1],
                    b[0] * b[0] + b[1] * b[1],
                    q[0] * q[0] + q[1] * q[1],
                );
                let c = [
                    (sa * (b[1] - q[1]) + sb * (q[1] - a[1]) + sq * (a[1] - b[1])) / d,
                    (sa * (q[0] - b[0]) + sb * (a[0] - q[0]) + sq * (b[0] - a[0])) / d,
                ];
                let r2 = (a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2);
                if r2 < best.1 && contains(c, r2) {
                    best = (c, r2);
                }
            }
        }
    }
    best
}

fn criterion_8() -> Outcome {
    let tight = InnerSolverOptions::default().with_grad_tol(1e-10);
    let schedule = doubling_schedule(1.0, (1u64 << 20) as f64);
    let penalty_inner = InnerSolverOptions::default()
        .with_grad_tol(1e-12)
        .with_max_iters(200_000);
    let pts = ball_points(3);
    let svm = zoo::generate_robust_svm(&RobustSvmConfig {
        n_points: 40,
        n_features: 5,
        m_batches: 4,
        seed: 1,
        ..RobustSvmConfig::default()
    })
    .map_err(|e| e.to_string())?
    .0;
    let cases = [
        ("toy", zoo::toy_1d_qp()),
        (
            "ball",
            zoo::generate_enclosing_ball(&pts, 2).map_err(|e| e.to_string())?,
        ),
        ("svm", svm),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, p) in cases {
        assert!(p.merged_dim() <= 50);
        let scaled = p.with_constraint_scale(10.0).map_err(|e| e.to_string())?;
        let reference = solve_reference(&p, &ReferenceOptions::default()).map_err(|e| e.to_string())?;
        let penalty = solve_penalty_oracle(&p, &schedule, &penalty_inner).map_err(|e| e.to_string())?;
        let mut stop = StoppingRule::residual(1e-6, 20_000);
        stop.tol_z_change = 1e-7;
        let ext = admm::solve(
            &scaled,
            &AdmmOptions {
                rho: 1000.0,
                stopping: stop,
                inner: tight,
                ..AdmmOptions::default()
            },
            None,
        )
        .map_err(|e| e.to_string())?;
        let base = baseline_solve(
            &scaled,
            &BaselineOptions {
                rho_outer: 10.0,
                rho_admm: 10.0,
                growth: 10.0,
                outer_tol: 1e-8,
                inner_admm_tol: 1e-7,
                max_outer: 40,
                inner: tight,
                ..BaselineOptions::default()
            },
            None,
        )
        .map_err(|e| e.to_string())?;
        let f_ext = ext.last().ok_or("empty trace")?.f_k;
        let f_base = base.trace.last().ok_or("empty trace")?.f_k;
        let fs = [reference.f_star, penalty.f_extrapolated, f_ext, f_base];
        let spread = fs
            .iter()
            .flat_map(|a| fs.iter().map(move |b| relative_gap(*a, *b)))
            .fold(0.0, f64::max);
        ok &= spread <= 1e-3;
        parts.push(format!("{name} f* spread {spread:.1e}"));
        if name == "ball" {
            let (c, r2) = exhaustive_ball(&pts);
            let err = (reference.z_star[0] - c[0])
                .abs()
                .max((reference.z_star[1] - c[1]).abs())
                .max((reference.f_star - r2).abs());
            ok &= err <= 1e-5;
            parts.push(format!("ball vs exhaustive support oracle {err:.1e}"));
        }
    }
    Ok((ok, parts.join("; ")))
}

// ---- criterion 9 ---------------------------------------------------------------

/// Metric CSV without the wall-clock column.
fn metric_columns(trace: &[IterationMetrics]) -> String {
    metrics_csv(trace)
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            if f.len() > 1 {
                f.remove(11);
            }
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn criterion_9() -> Outcome {
    let mut cfg = Config::default();
    cfg.problem.constraint_scale = 10.0;
    cfg.solver.rho = 10.0;
    cfg.solver.tol_mode = TolMode::Reference;
    cfg.solver.tol_reference = Z_TOL;
    let cache = cache_dir();
    let prepared = Prepared::from_config(&cfg, Some(&cache)).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for solver in [SolverKind::Extended, SolverKind::Baseline] {
        cfg.solver.kind = solver;
        let mut tables = Vec::new();
        for w in [1, 2, 8] {
            cfg.solver.workers = w;
            let trace = match experiment::run(&cfg, &prepared) {
                Ok(r) => r.trace,
                Err(e) => return Ok((false, format!("{solver:?} with {w} workers: {e}"))),
            };
            tables.push(metric_columns(&trace));
        }
        let same = tables.windows(2).all(|t| t[0] == t[1]);
        ok &= same;
        parts.push(format!(
            "{solver:?}: {} rows, identical {same}",
            tables[0].lines().count() - 2
        ));
    }
    Ok((ok, format!("workers 1/2/8; {}", parts.join("; "))))
}

// ---- criterion 10 --------------------------------------------------------------

fn criterion_10() -> Outcome {
    let mut problems = vec![
        ("toy".to_string(), zoo::toy_1d_qp()),
        (
            "ball".to_string(),
            zoo::generate_enclosing_ball(&ball_points(0), 3).map_err(|e| e.to_string())?,
        ),
    ];
    let inst = zoo::sample_robust_svm(&desk_svm(0)).map_err(|e| e.to_string())?;
    for unit in [1.0, zoo::auto_slack_unit(inst.n_features)] {
        let p = inst.problem_with_slack_unit(unit).map_err(|e| e.to_string())?;
        problems.push((
            format!("svm unit {unit:.3}"),
            p.with_constraint_scale(10.0).map_err(|e| e.to_string())?,
        ));
        problems.push((format!("svm unit {unit:.3} unscaled"), p));
    }
    let mut worst = 0.0_f64;
    let mut count = 0;
    for (name, p) in &problems {
        for (i, (oracle_name, o)) in p.oracles().into_iter().enumerate() {
            let err = random_point_check(o.as_ref(), 100, 2.0, 1000 + i as u64);
            if err > 1e-5 {
                return Ok((false, format!("{name}, {oracle_name}: {err:e}")));
            }
            worst = worst.max(err);
            count += 1;
        }
    }
    Ok((
        true,
        format!("{count} oracles, 100 points each, max relative error {worst:.2e}"),
    ))
}

// ---- driver --------------------------------------------------------------------

fn report(n: usize, outcome: Outcome, failed: &mut usize) {
    let line = match outcome {
        Ok((true, detail)) => format!("criterion {n:>2}: PASS  {detail}"),
        Ok((false, detail)) => {
            *failed += 1;
            format!("criterion {n:>2}: FAIL  {detail}")
        }
        Err(e) => {
            *failed += 1;
            format!("criterion {n:>2}: FAIL  error: {e}")
        }
    };
    println!("{line}");
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut failed = 0;

    if want(1) {
        report(1, criterion_1(), &mut failed);
    }
    if want(2) || want(3) {
        let started = Instant::now();
        match trace_runs() {
            Ok(runs) => {
                if want(2) {
                    report(2, criterion_2(&runs, started), &mut failed);
                }
                if want(3) {
                    report(3, criterion_3(&runs, started), &mut failed);
                }
            }
            Err(e) => {
                for n in [2, 3].into_iter().filter(|&n| want(n)) {
                    report(n, Err(e.clone()), &mut failed);
                }
            }
        }
    }
    if want(4) || want(6) {
        match data_runs(want(6)) {
            Ok(d) => {
                if want(4) {
                    report(4, criterion_4(&d), &mut failed);
                }
                if want(6) {
                    report(6, criterion_6(&d), &mut failed);
                }
            }
            Err(e) => {
                for n in [4, 6].into_iter().filter(|&n| want(n)) {
                    report(n, Err(e.clone()), &mut failed);
                }
            }
        }
    }
    if want(5) {
        report(5, criterion_5(), &mut failed);
    }
    if want(7) {
        report(7, criterion_7(), &mut failed);
    }
    if want(8) {
        report(8, criterion_8(), &mut failed);
    }
    if want(9) {
        report(9, criterion_9(), &mut failed);
    }
    if want(10) {
        report(10, criterion_10(), &mut failed);
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 && std::env::var_os("NLC_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
