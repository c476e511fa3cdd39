//! Worker/coordinator execution of the per-batch updates.
//!
//! Each worker owns the local state `(x_i, μ_g,i, μ_h,i)` of its batches.
//! A round sends `z` and the `λ_i` out, runs the x- and μ-updates of every
//! owned batch, and collects the reports back in batch-index order, so the
//! coordinator's reductions never depend on which worker answered first.

use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc;
use std::thread;

use crate::admm::{self, BatchDuals, BatchStats, SolverState};
use crate::error::SolveError;
use crate::lbfgs::InnerSolverOptions;
use crate::problem::{ConsensusProblem, ConstraintBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssignmentPolicy {
    /// Consecutive blocks of batches, earlier workers taking the extra one.
    #[default]
    Contiguous,
    /// Batch `i` goes to worker `i mod workers`.
    RoundRobin,
}

impl std::str::FromStr for AssignmentPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "contiguous" => Ok(Self::Contiguous),
            "round-robin" | "round_robin" => Ok(Self::RoundRobin),
            _ => Err(format!("unknown assignment policy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerAssignment {
    pub worker_id: usize,
    /// Ascending batch indices.
    pub batches: Vec<usize>,
}

/// Partitions `0..m` over `workers` workers; batch counts differ by at most
/// one. Workers beyond `m` receive no batches.
pub fn make_assignment(m: usize, workers: usize, policy: AssignmentPolicy) -> Vec<WorkerAssignment> {
    assert!(workers >= 1, "need at least one worker");
    let mut out: Vec<WorkerAssignment> = (0..workers)
        .map(|w| WorkerAssignment {
            worker_id: w,
            batches: Vec::new(),
        })
        .collect();
    match policy {
        AssignmentPolicy::RoundRobin => {
            for i in 0..m {
                out[i % workers].batches.push(i);
            }
        }
        AssignmentPolicy::Contiguous => {
            let base = m / workers;
            let extra = m % workers;
            let mut next = 0;
            for (w, a) in out.iter_mut().enumerate() {
                let len = base + usize::from(w < extra);
                a.batches.extend(next..next + len);
                next += len;
            }
        }
    }
    out
}

/// Local state of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalState {
    pub x: Vec<f64>,
    pub mu_g: Vec<f64>,
    pub mu_h: Vec<f64>,
}

/// Coordinator → worker payload of one round.
#[derive(Debug, Clone, Copy)]
pub struct RoundRequest<'a> {
    pub z: &'a [f64],
    /// One multiplier per batch, in batch order.
    pub lambdas: &'a [Vec<f64>],
    pub rho_constraint: f64,
    pub rho_consensus: f64,
    /// Apply the μ-updates after the x-update.
    pub update_duals: bool,
    pub inner: InnerSolverOptions,
}

/// Worker → coordinator payload for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchReport {
    pub index: usize,
    /// State after the round.
    pub local: LocalState,
    /// Evaluated at the new `x_i`.
    pub stats: BatchStats,
    pub inner_iters: usize,
    pub inner_converged: bool,
}

/// Executes rounds over some set of workers.
pub trait Transport {
    /// One x-update (and optional μ-update) of every batch. Reports come
    /// back sorted by batch index.
    fn round(&mut self, req: &RoundRequest<'_>) -> Result<Vec<BatchReport>, SolveError>;

    /// μ-updates only, at the current `x_i`.
    fn dual_step(&mut self, rho: f64) -> Result<Vec<BatchReport>, SolveError>;
}

fn local_round(
    batch: &ConstraintBatch,
    local: &mut LocalState,
    req: &RoundRequest<'_>,
) -> Result<BatchReport, SolveError> {
    let i = batch.index;
    let duals = BatchDuals {
        z: req.z,
        mu_g: &local.mu_g,
        mu_h: &local.mu_h,
        lambda: &req.lambdas[i],
        rho_constraint: req.rho_constraint,
        rho_consensus: req.rho_consensus,
    };
    let res = admm::x_update_batch(batch, &local.x, &duals, &req.inner)?;
    local.x = res.x_min;
    let stats = if req.update_duals {
        local_duals(batch, local, req.rho_constraint)
    } else {
        admm::batch_eval(batch, &local.x).0
    };
    Ok(BatchReport {
        index: i,
        local: local.clone(),
        stats,
        inner_iters: res.iterations,
        inner_converged: res.converged,
    })
}

fn local_duals(batch: &ConstraintBatch, local: &mut LocalState, rho: f64) -> BatchStats {
    let (stats, g0, h) = admm::batch_eval(batch, &local.x);
    let g: Vec<f64> = g0.iter().map(|&t| crate::oracle::hinge_sq(t)).collect();
    local.mu_g = admm::dual_update_mu(&local.mu_g, &g, rho);
    local.mu_h = admm::dual_update_mu(&local.mu_h, &h, rho);
    stats
}

fn dual_report(batch: &ConstraintBatch, local: &mut LocalState, rho: f64) -> BatchReport {
    let stats = local_duals(batch, local, rho);
    BatchReport {
        index: batch.index,
        local: local.clone(),
        stats,
        inner_iters: 0,
        inner_converged: true,
    }
}

/// Runs every batch on the calling thread.
pub struct InlineTransport<'p> {
    problem: &'p ConsensusProblem,
    locals: Vec<LocalState>,
}

impl<'p> InlineTransport<'p> {
    pub fn new(problem: &'p ConsensusProblem, state: &SolverState) -> Self {
        Self {
            problem,
            locals: initial_locals(state),
        }
    }
}

impl Transport for InlineTransport<'_> {
    fn round(&mut self, req: &RoundRequest<'_>) -> Result<Vec<BatchReport>, SolveError> {
        self.problem
            .batches
            .iter()
            .zip(&mut self.locals)
            .map(|(b, l)| local_round(b, l, req))
            .collect()
    }

    fn dual_step(&mut self, rho: f64) -> Result<Vec<BatchReport>, SolveError> {
        Ok(self
            .problem
            .batches
            .iter()
            .zip(&mut self.locals)
            .map(|(b, l)| dual_report(b, l, rho))
            .collect())
    }
}

fn initial_locals(state: &SolverState) -> Vec<LocalState> {
    (0..state.x.len())
        .map(|i| LocalState {
            x: state.x[i].clone(),
            mu_g: state.mu_g[i].clone(),
            mu_h: state.mu_h[i].clone(),
        })
        .collect()
}

enum Command {
    Round {
        z: Vec<f64>,
        lambdas: Vec<Vec<f64>>,
        rho_constraint: f64,
        rho_consensus: f64,
        update_duals: bool,
        inner: InnerSolverOptions,
    },
    Duals {
        rho: f64,
    },
    Stop,
}

type Reply = (usize, Result<Vec<BatchReport>, SolveError>);

/// Persistent worker threads connected by channels; the coordinator waits
/// for every worker before returning a round.
pub struct ChannelTransport {
    senders: Vec<mpsc::Sender<Command>>,
    replies: mpsc::Receiver<Reply>,
    m: usize,
}

impl ChannelTransport {
    fn broadcast(&mut self, make: impl Fn() -> Command) -> Result<Vec<BatchReport>, SolveError> {
        for (w, tx) in self.senders.iter().enumerate() {
            tx.send(make()).map_err(|_| SolveError::WorkerFailure {
                worker_id: w,
                cause: "worker channel closed".into(),
            })?;
        }
        let mut slots: Vec<Option<BatchReport>> = vec![None; self.m];
        let mut first_err: Option<(usize, SolveError)> = None;
        for _ in 0..self.senders.len() {
            let (w, res) = self.replies.recv().map_err(|_| SolveError::WorkerFailure {
                worker_id: usize::MAX,
                cause: "all workers disconnected".into(),
            })?;
            match res {
                Ok(reports) => {
                    for r in reports {
                        let i = r.index;
                        slots[i] = Some(r);
                    }
                }
                // keep the lowest worker id so the error does not depend on timing
                Err(e) => {
                    if first_err.as_ref().is_none_or(|(fw, _)| w < *fw) {
                        first_err = Some((w, e));
                    }
                }
            }
        }
        if let Some((_, e)) = first_err {
            return Err(e);
        }
        slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| SolveError::WorkerFailure {
                    worker_id: usize::MAX,
                    cause: format!("no report for batch {i}"),
                })
            })
            .collect()
    }
}

impl Transport for ChannelTransport {
    fn round(&mut self, req: &RoundRequest<'_>) -> Result<Vec<BatchReport>, SolveError> {
        self.broadcast(|| Command::Round {
            z: req.z.to_vec(),
            lambdas: req.lambdas.to_vec(),
            rho_constraint: req.rho_constraint,
            rho_consensus: req.rho_consensus,
            update_duals: req.update_duals,
            inner: req.inner,
        })
    }

    fn dual_step(&mut self, rho: f64) -> Result<Vec<BatchReport>, SolveError> {
        self.broadcast(|| Command::Duals { rho })
    }
}

fn worker_loop(
    worker_id: usize,
    problem: &ConsensusProblem,
    mut owned: Vec<(usize, LocalState)>,
    commands: mpsc::Receiver<Command>,
    replies: mpsc::Sender<Reply>,
) {
    while let Ok(cmd) = commands.recv() {
        let result = panic::catch_unwind(AssertUnwindSafe(|| match &cmd {
            Command::Round {
                z,
                lambdas,
                rho_constraint,
                rho_consensus,
                update_duals,
                inner,
            } => {
                let req = RoundRequest {
                    z,
                    lambdas,
                    rho_constraint: *rho_constraint,
                    rho_consensus: *rho_consensus,
                    update_duals: *update_duals,
                    inner: *inner,
                };
                owned
                    .iter_mut()
                    .map(|(i, l)| local_round(&problem.batches[*i], l, &req))
                    .collect::<Result<Vec<_>, _>>()
            }
            Command::Duals { rho } => Ok(owned
                .iter_mut()
                .map(|(i, l)| dual_report(&problem.batches[*i], l, *rho))
                .collect()),
            Command::Stop => Ok(Vec::new()),
        }));
        if matches!(cmd, Command::Stop) {
            return;
        }
        let result = result.unwrap_or_else(|p| {
            let cause = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            Err(SolveError::WorkerFailure { worker_id, cause })
        });
        if replies.send((worker_id, result)).is_err() {
            return;
        }
    }
}

/// Calls `f` with a transport over `workers` workers initialised from
/// `state`. One worker runs inline; more use scoped threads that are joined
/// before this returns.
pub fn with_transport<R>(
    problem: &ConsensusProblem,
    state: &SolverState,
    workers: usize,
    policy: AssignmentPolicy,
    f: impl FnOnce(&mut dyn Transport) -> Result<R, SolveError>,
) -> Result<R, SolveError> {
    if workers == 0 {
        return Err(SolveError::InvalidConfig("workers must be at least 1".into()));
    }
    if workers == 1 {
        return f(&mut InlineTransport::new(problem, state));
    }
    let assignments = make_assignment(problem.m(), workers, policy);
    let locals = initial_locals(state);
    thread::scope(|scope| {
        let (reply_tx, reply_rx) = mpsc::channel();
        let mut senders = Vec::with_capacity(workers);
        for a in &assignments {
            let (tx, rx) = mpsc::channel();
            senders.push(tx);
            let owned: Vec<(usize, LocalState)> = a.batches.iter().map(|&i| (i, locals[i].clone())).collect();
            let reply_tx = reply_tx.clone();
            let id = a.worker_id;
            scope.spawn(move || worker_loop(id, problem, owned, rx, reply_tx));
        }
        drop(reply_tx);
        let mut transport = ChannelTransport {
            senders,
            replies: reply_rx,
            m: problem.m(),
        };
        let out = f(&mut transport);
        for tx in &transport.senders {
            let _ = tx.send(Command::Stop);
        }
        out
    })
}
