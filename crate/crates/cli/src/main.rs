use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlc_admm_cli::config::{Config, SolverKind, Study, TolMode};
use nlc_admm_cli::experiment::{self, Prepared};
use nlc_admm_cli::output::{self, Metadata};
use nlc_admm_cli::{scaling, verify, CliError, CACHE_ENV};

/// Extended ADMM for consensus problems with nonlinear constraints.
///
/// Settings come from built-in defaults, then `--config`, then flags.
/// References are cached in the directory named by NLC_ADMM_CACHE when set.
///
/// Exit codes: 0 success, 1 config or I/O error, 2 solver error,
/// 3 reference failure, 4 failed invariant (verify).
#[derive(Parser)]
#[command(name = "nlc-admm", version = nlc_admm_cli::BUILD_TAG)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and write metrics.csv and meta.json.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run a node, data or accuracy study and write runs.csv, summary.csv
    /// and meta.json.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        study: Option<Study>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Run the invariant suite and print one PASS/FAIL line per invariant.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Instance file to check instead of the configured problem.
        #[arg(long)]
        instance: Option<PathBuf>,
    },
    /// Write the configured instance to a JSON file.
    Generate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    tol_mode: Option<TolMode>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output directory; for `generate`, the instance file.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<Config, CliError> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(v) = self.solver {
            cfg.solver.kind = v;
        }
        if let Some(v) = self.workers {
            cfg.solver.workers = v;
        }
        if let Some(v) = self.rho {
            cfg.solver.rho = v;
        }
        if let Some(v) = self.seed {
            cfg.problem.seed = v;
        }
        if let Some(v) = self.tol_mode {
            cfg.solver.tol_mode = v;
        }
        if let Some(v) = self.max_iters {
            cfg.solver.max_iters = v;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn cmd_run(common: &Common) -> Result<(), CliError> {
    let cfg = common.config()?;
    cfg.validate()?;
    let out = common.out_dir()?;
    let cache = cache_dir();
    let prepared = Prepared::from_config(&cfg, cache.as_deref())?;
    let result = experiment::run(&cfg, &prepared)?;
    std::fs::write(out.join("metrics.csv"), output::metrics_csv(&result.trace))?;
    let cmd = command_line();
    Metadata::new(&cmd, &cfg, Some(&prepared.hash)).write(&out.join("meta.json"))?;
    if let Some(last) = result.last() {
        println!(
            "k={} converged={} f={:.10e} f*={:.10e} r_g={:.3e} r_h={:.3e} r_consensus={:.3e} inner_iters={}",
            last.k,
            result.converged,
            last.f_k,
            prepared.reference.f_star,
            last.r_g_norm,
            last.r_h_norm,
            last.r_consensus_norm,
            result.inner_iters
        );
    }
    Ok(())
}

fn cmd_scaling(
    common: &Common,
    study: Option<Study>,
    values: Option<Vec<f64>>,
    seeds: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = common.config()?;
    if let Some(s) = study {
        cfg.scaling.study = s;
    }
    if let Some(v) = values {
        cfg.scaling.values = v;
    }
    if let Some(n) = seeds {
        cfg.scaling.seeds = n;
    }
    cfg.validate()?;
    let out = common.out_dir()?;
    let cache = cache_dir();
    let runs = scaling::run_study(&cfg, cache.as_deref(), &mut |r| match &r.error {
        None => eprintln!(
            "value={} seed={} solver={:?} iterations={} inner={} converged={}",
            r.value, r.seed, r.solver, r.iterations, r.inner_iters, r.converged
        ),
        Some(e) => eprintln!("value={} seed={} solver={:?} FAILED: {e}", r.value, r.seed, r.solver),
    })?;
    let summary = scaling::summarize(&runs);
    std::fs::write(out.join("runs.csv"), scaling::runs_csv(cfg.scaling.study, &runs))?;
    let text = scaling::summary_csv(cfg.scaling.study, &summary);
    std::fs::write(out.join("summary.csv"), &text)?;
    let cmd = command_line();
    Metadata::new(&cmd, &cfg, None).write(&out.join("meta.json"))?;
    print!("{text}");
    Ok(())
}

/// Squared-hinge problems have no finite KKT multipliers at degenerate
/// optima, so V is measured against duals of a run this many times longer.
const VERIFY_DUAL_RUN_FACTOR: usize = 10;

/// `Ok(false)` when some invariant failed.
fn cmd_verify(common: &Common, instance: Option<&Path>) -> Result<bool, CliError> {
    let mut cfg = common.config()?;
    if let Some(p) = instance {
        cfg.problem.instance = Some(p.to_path_buf());
    }
    if cfg.reference.dual_run_factor == 0 {
        cfg.reference.dual_run_factor = VERIFY_DUAL_RUN_FACTOR;
    }
    cfg.validate()?;
    let cache = cache_dir();
    let prepared = Prepared::from_config(&cfg, cache.as_deref())?;
    let opts = experiment::extended_options(&cfg)?;
    let results = verify::verify(&prepared.problem, &prepared.reference, &opts);
    for r in &results {
        println!("{r}");
    }
    Ok(verify::all_passed(&results))
}

fn cmd_generate(common: &Common) -> Result<(), CliError> {
    let cfg = common.config()?;
    cfg.validate()?;
    let path = common
        .out
        .clone()
        .ok_or_else(|| CliError::Config("generate needs --out FILE".into()))?;
    let instance = experiment::load_or_generate(&cfg.problem)?;
    instance.save(&path)?;
    println!("{} {}", instance.hash(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common } => cmd_run(common).map(|_| true),
        Command::Scaling {
            common,
            study,
            values,
            seeds,
        } => cmd_scaling(common, *study, values.clone(), *seeds).map(|_| true),
        Command::Verify { common, instance } => cmd_verify(common, instance.as_deref()),
        Command::Generate { common } => cmd_generate(common).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
