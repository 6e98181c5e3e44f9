//! Deterministic discrete-event simulation of asynchronous workers, the
//! network monitor, and the baseline protocols.

use crate::config::{stream_rng, ConfigError, Environment, ExperimentConfig, Protocol, SnapshotMode};
use crate::consensus::{self, ConsensusError, LearningRateCheck, ModelVector, QuadraticLoss, UpdateParams};
use crate::linalg::{self, Matrix};
use crate::metrics;
use crate::network::{Edge, LinkTimeModel, NetworkError, Topology};
use crate::policy::{self, PolicyError, PolicyMatrix, PolicyResult, PolicySearch};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use thiserror::Error;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("beta must lie in [0, 1], got {0}")]
    BetaOutOfRange(f64),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("models diverged at step {0}")]
    Diverged(u64),
}

/// EMA step; `prev = None` means no observation yet.
pub fn ema_update(prev: Option<f64>, observed: f64, beta: f64) -> Result<f64, SimError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(SimError::BetaOutOfRange(beta));
    }
    Ok(match prev {
        None => observed,
        Some(p) => beta * p + (1.0 - beta) * observed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    UniformAsync,
    SyncAllreduce,
    UniformAsyncWithMonitor,
}

impl From<Baseline> for Protocol {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::UniformAsync => Protocol::UniformAsync,
            Baseline::SyncAllreduce => Protocol::SyncAllreduce,
            Baseline::UniformAsyncWithMonitor => Protocol::UniformAsyncWithMonitor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: u64,
    pub clock: f64,
    /// active node; None for the initial state
    pub node: Option<usize>,
    /// pulled neighbor; equals `node` for a local-only step, None for allreduce
    pub neighbor: Option<usize>,
    pub iter_time: f64,
    pub deviation: f64,
    pub spread: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyChange {
    pub clock: f64,
    pub rho: f64,
    pub tbar: f64,
    pub lambda2: f64,
    pub t_convergence: f64,
    pub policy: Matrix,
    /// iteration-time matrix the policy was computed from
    pub times: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub clock: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TimeBudget,
    StepBudget,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub protocol: Protocol,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub x_star: Vec<f64>,
    pub initial_deviation: f64,
    pub trace: Vec<TraceRow>,
    pub policy_log: Vec<PolicyChange>,
    pub lambda_history: Vec<LambdaPoint>,
    pub final_models: Vec<Vec<f64>>,
    pub local_steps: Vec<u64>,
    pub stop_reason: StopReason,
    pub end_clock: f64,
    pub learning_rate: LearningRateCheck,
    pub warnings: Vec<String>,
}

impl RunRecord {
    /// Completed worker iterations (rows after the initial state).
    pub fn steps(&self) -> u64 {
        self.trace.last().map_or(0, |r| r.k)
    }

    pub fn final_deviation(&self) -> f64 {
        self.trace.last().map_or(self.initial_deviation, |r| r.deviation)
    }

    /// First clock at which deviation <= eps * deviation(0).
    pub fn time_to_epsilon(&self, eps: f64) -> Option<f64> {
        metrics::time_to_epsilon(&self.trace, self.initial_deviation, eps)
    }
}

#[derive(Debug, Clone)]
pub struct WorkerState {
    pub id: usize,
    pub model: ModelVector,
    pub probs: Vec<f64>,
    pub ema_times: Vec<Option<f64>>,
    pub local_step: u64,
    pub rho: f64,
    pub busy_until: f64,
    pending: Option<(Vec<f64>, f64)>,
    rng: ChaCha8Rng,
}

impl WorkerState {
    /// Inverse-CDF selection over nodes 0..M in index order.
    fn select_neighbor(&mut self) -> usize {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut last = self.id;
        for (m, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = m;
            if u < acc {
                return m;
            }
        }
        last
    }
}

#[derive(Debug, Clone)]
pub struct MonitorState {
    pub period: f64,
    pub last_times: Option<Matrix>,
    pub current: Option<PolicyResult>,
    pub lambda_history: Vec<LambdaPoint>,
}

impl MonitorState {
    /// Largest lambda_2 seen so far.
    pub fn lambda_max(&self) -> Option<f64> {
        self.lambda_history.iter().map(|p| p.lambda2).reduce(f64::max)
    }
}

#[derive(Debug, Clone)]
enum EventKind {
    SlowdownChange,
    MonitorCycle,
    WorkerComplete { neighbor: usize, duration: f64, snapshot: Option<ModelVector> },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::SlowdownChange => 0,
            EventKind::MonitorCycle => 1,
            EventKind::WorkerComplete { .. } => 2,
        }
    }
}

#[derive(Debug, Clone)]
struct SimEvent {
    fire_time: f64,
    node: usize,
    seq: u64,
    kind: EventKind,
}

impl SimEvent {
    fn key(&self) -> (f64, u8, usize, u64) {
        (self.fire_time, self.kind.rank(), self.node, self.seq)
    }
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3))
    }
}

/// Initial coupling weight when the config leaves it open.
pub fn default_rho(alpha: f64, topology: &Topology) -> f64 {
    1.0 / (4.0 * alpha * topology.max_degree().max(1) as f64)
}

/// Runs `config.protocol` with `config.seed`.
pub fn run_simulation(config: &ExperimentConfig) -> Result<RunRecord, SimError> {
    run(config, config.protocol, config.seed)
}

pub fn run_baseline(config: &ExperimentConfig, variant: Baseline) -> Result<RunRecord, SimError> {
    run(config, variant.into(), config.seed)
}

pub fn run(config: &ExperimentConfig, protocol: Protocol, seed: u64) -> Result<RunRecord, SimError> {
    config.validate()?;
    let env = config.environment(seed)?;
    run_in_environment(config, protocol, seed, env)
}

/// Runs against an explicit environment (links, losses, initial models).
pub fn run_in_environment(config: &ExperimentConfig, protocol: Protocol, seed: u64, env: Environment) -> Result<RunRecord, SimError> {
    let mut cfg = config.clone();
    cfg.protocol = protocol;
    cfg.seed = seed;
    Simulation::new(cfg, env)?.run()
}

struct Simulation {
    cfg: ExperimentConfig,
    links: LinkTimeModel,
    losses: Vec<QuadraticLoss>,
    x_star: ModelVector,
    workers: Vec<WorkerState>,
    monitor: MonitorState,
    queue: BinaryHeap<Reverse<SimEvent>>,
    seq: u64,
    k: u64,
    trace: Vec<TraceRow>,
    policy_log: Vec<PolicyChange>,
    warnings: Vec<String>,
    initial_deviation: f64,
    objective_rho: f64,
}

impl Simulation {
    fn new(cfg: ExperimentConfig, env: Environment) -> Result<Self, SimError> {
        if !(0.0..=1.0).contains(&cfg.beta) {
            return Err(SimError::BetaOutOfRange(cfg.beta));
        }
        let topology = env.links.topology().clone();
        let n = topology.node_count();
        if env.losses.len() != n || env.initial_models.len() != n {
            return Err(ConfigError::Invalid(vec!["environment size does not match topology".into()]).into());
        }
        let x_star = consensus::optimum_oracle(&env.losses)?;
        let rho0 = cfg.rho.unwrap_or_else(|| default_rho(cfg.alpha, &topology));
        let uniform = PolicyMatrix::uniform(&topology);
        let workers = (0..n)
            .map(|i| WorkerState {
                id: i,
                model: env.initial_models[i].clone(),
                probs: uniform.row(i).to_vec(),
                ema_times: vec![None; n],
                local_step: 0,
                rho: rho0,
                busy_until: 0.0,
                pending: None,
                rng: stream_rng(cfg.seed, i as u64),
            })
            .collect();
        let monitor = MonitorState { period: cfg.monitor_period, last_times: None, current: None, lambda_history: Vec::new() };
        let mut sim = Simulation {
            links: env.links,
            losses: env.losses,
            x_star,
            workers,
            monitor,
            queue: BinaryHeap::new(),
            seq: 0,
            k: 0,
            trace: Vec::new(),
            policy_log: Vec::new(),
            warnings: Vec::new(),
            initial_deviation: 0.0,
            objective_rho: rho0,
            cfg,
        };
        let lr = consensus::validate_learning_rate(sim.cfg.alpha, &sim.losses);
        if let Some(w) = &lr.warning {
            sim.warnings.push(w.clone());
        }
        Ok(sim)
    }

    fn topology(&self) -> &Topology {
        self.links.topology()
    }

    fn push(&mut self, fire_time: f64, node: usize, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(SimEvent { fire_time, node, seq: self.seq, kind }));
    }

    fn models(&self) -> Vec<ModelVector> {
        self.workers.iter().map(|w| w.model.clone()).collect()
    }

    fn record_row(&mut self, clock: f64, node: Option<usize>, neighbor: Option<usize>, iter_time: f64) -> Result<f64, SimError> {
        let xs = self.models();
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(SimError::Diverged(self.k));
        }
        let deviation = metrics::deviation(&xs, &self.x_star);
        let spread = metrics::consensus_spread(&xs);
        let objective = consensus::global_objective(&xs, &self.losses, self.objective_rho, self.topology());
        self.trace.push(TraceRow { k: self.k, clock, node, neighbor, iter_time, deviation, spread, objective });
        Ok(deviation)
    }

    fn target_reached(&self, deviation: f64) -> bool {
        self.cfg.stop.target_epsilon.is_some_and(|eps| deviation <= eps * self.initial_deviation)
    }

    fn step_budget_hit(&self) -> bool {
        self.cfg.stop.max_steps.is_some_and(|s| self.k >= s)
    }

    fn run(mut self) -> Result<RunRecord, SimError> {
        self.initial_deviation = self.record_row(0.0, None, None, 0.0)?;
        let (reason, end_clock) = if self.cfg.protocol == Protocol::SyncAllreduce {
            self.run_allreduce()?
        } else {
            self.run_async()?
        };
        let lr = consensus::validate_learning_rate(self.cfg.alpha, &self.losses);
        Ok(RunRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            protocol: self.cfg.protocol,
            seed: self.cfg.seed,
            x_star: self.x_star.0.clone(),
            initial_deviation: self.initial_deviation,
            trace: self.trace,
            policy_log: self.policy_log,
            lambda_history: self.monitor.lambda_history,
            final_models: self.workers.iter().map(|w| w.model.0.clone()).collect(),
            local_steps: self.workers.iter().map(|w| w.local_step).collect(),
            stop_reason: reason,
            end_clock,
            learning_rate: lr,
            warnings: self.warnings,
            config: self.cfg,
        })
    }

    fn initial_stop(&self) -> Option<StopReason> {
        if self.step_budget_hit() {
            Some(StopReason::StepBudget)
        } else if self.cfg.stop.max_time.is_some_and(|t| t <= 0.0) {
            Some(StopReason::TimeBudget)
        } else if self.target_reached(self.initial_deviation) {
            Some(StopReason::TargetReached)
        } else {
            None
        }
    }

    fn run_async(&mut self) -> Result<(StopReason, f64), SimError> {
        if let Some(r) = self.initial_stop() {
            return Ok((r, 0.0));
        }
        let max_time = self.cfg.stop.max_time.unwrap_or(f64::INFINITY);
        let starts: Vec<f64> = self.links.schedule().iter().map(|e| e.start_time).filter(|&t| t > 0.0 && t <= max_time).collect();
        for t in starts {
            self.push(t, 0, EventKind::SlowdownChange);
        }
        if self.cfg.protocol.uses_monitor() {
            self.monitor_cycle(0.0);
            self.push(self.monitor.period, 0, EventKind::MonitorCycle);
        }
        for i in 0..self.workers.len() {
            self.start_iteration(i, 0.0)?;
        }
        while let Some(Reverse(ev)) = self.queue.pop() {
            if ev.fire_time > max_time {
                return Ok((StopReason::TimeBudget, max_time));
            }
            match ev.kind {
                EventKind::SlowdownChange => {}
                EventKind::MonitorCycle => {
                    self.monitor_cycle(ev.fire_time);
                    self.push(ev.fire_time + self.monitor.period, 0, EventKind::MonitorCycle);
                }
                EventKind::WorkerComplete { neighbor, duration, snapshot } => {
                    let deviation = self.complete_iteration(ev.node, neighbor, duration, snapshot, ev.fire_time)?;
                    if self.target_reached(deviation) {
                        return Ok((StopReason::TargetReached, ev.fire_time));
                    }
                    if self.step_budget_hit() {
                        return Ok((StopReason::StepBudget, ev.fire_time));
                    }
                    self.start_iteration(ev.node, ev.fire_time)?;
                }
            }
        }
        Ok((StopReason::TimeBudget, max_time))
    }

    fn start_iteration(&mut self, i: usize, clock: f64) -> Result<(), SimError> {
        let w = &mut self.workers[i];
        if let Some((probs, rho)) = w.pending.take() {
            w.probs = probs;
            w.rho = rho;
        }
        let m = w.select_neighbor();
        let duration = self.links.iteration_time(i, m, clock)?;
        let snapshot = (self.cfg.snapshot == SnapshotMode::Start && m != i).then(|| self.workers[m].model.clone());
        self.workers[i].busy_until = clock + duration;
        self.push(clock + duration, i, EventKind::WorkerComplete { neighbor: m, duration, snapshot });
        Ok(())
    }

    fn complete_iteration(&mut self, i: usize, m: usize, duration: f64, snapshot: Option<ModelVector>, clock: f64) -> Result<f64, SimError> {
        let alpha = self.cfg.alpha;
        let x_m = snapshot.unwrap_or_else(|| self.workers[m].model.clone());
        let d_sum = if m == i { 0.0 } else { self.topology().d(i, m) + self.topology().d(m, i) };
        let w = &mut self.workers[i];
        let g = self.losses[i].local_gradient(&w.model, &mut w.rng);
        w.model = match self.cfg.protocol {
            Protocol::Netmax => {
                let params = UpdateParams { alpha, rho: w.rho, d_sum, p_im: w.probs[m] };
                consensus::two_step_update(&w.model, &g, &x_m, params)?
            }
            _ => {
                let weight = if m == i { 0.0 } else { 0.5 };
                consensus::weighted_update(&w.model, &g, &x_m, alpha, weight)
            }
        };
        if m != i {
            w.ema_times[m] = Some(ema_update(w.ema_times[m], duration, self.cfg.beta)?);
        }
        w.local_step += 1;
        self.k += 1;
        self.record_row(clock, Some(i), Some(m), duration)
    }

    fn monitor_cycle(&mut self, clock: f64) {
        let n = self.workers.len();
        let base = self.links.base_iteration_times();
        let topology = self.topology().clone();
        let times = Matrix::from_fn(n, n, |i, m| {
            if topology.has_edge(i, m) {
                self.workers[i].ema_times[m].unwrap_or(base[(i, m)])
            } else {
                0.0
            }
        });
        let search: PolicySearch = self.cfg.policy_search();
        match policy::generate_policy_matrix(&search, &times, &topology) {
            Ok(res) => {
                self.monitor.lambda_history.push(LambdaPoint { clock, lambda2: res.lambda2 });
                for (i, w) in self.workers.iter_mut().enumerate() {
                    w.pending = Some((res.policy.row(i).to_vec(), res.rho));
                }
                self.objective_rho = res.rho;
                self.policy_log.push(PolicyChange {
                    clock,
                    rho: res.rho,
                    tbar: res.tbar,
                    lambda2: res.lambda2,
                    t_convergence: res.t_convergence,
                    policy: res.policy.matrix().clone(),
                    times: times.clone(),
                });
                self.monitor.current = Some(res);
            }
            Err(e) => {
                let msg = format!("monitor cycle at t={clock}: {e}; keeping previous policy");
                log::warn!("{msg}");
                self.warnings.push(msg);
            }
        }
        self.monitor.last_times = Some(times);
    }

    /// Barrier rounds: every node takes a gradient step, then all models
    /// are replaced by their exact average. A round costs
    /// max_i (C_i + slowest incident link).
    fn run_allreduce(&mut self) -> Result<(StopReason, f64), SimError> {
        if let Some(r) = self.initial_stop() {
            return Ok((r, 0.0));
        }
        let n = self.workers.len();
        let dim = self.x_star.dim();
        let max_time = self.cfg.stop.max_time.unwrap_or(f64::INFINITY);
        let mut clock = 0.0;
        loop {
            if self.cfg.stop.max_steps.is_some_and(|s| self.k + n as u64 > s) {
                return Ok((StopReason::StepBudget, clock));
            }
            let mut round = 0.0f64;
            for i in 0..n {
                let mut slowest = 0.0f64;
                for m in self.topology().neighbors(i) {
                    slowest = slowest.max(self.links.effective_comm_time(i, m, clock)?);
                }
                round = round.max(self.links.compute_times()[i] + slowest);
            }
            if clock + round > max_time {
                return Ok((StopReason::TimeBudget, max_time));
            }
            clock += round;
            let mut avg = vec![0.0; dim];
            for (i, w) in self.workers.iter_mut().enumerate() {
                let g = self.losses[i].local_gradient(&w.model, &mut w.rng);
                for ((a, x), gk) in avg.iter_mut().zip(&w.model.0).zip(&g.0) {
                    *a += (x - self.cfg.alpha * gk) / n as f64;
                }
            }
            let mut deviation = 0.0;
            for i in 0..n {
                self.workers[i].model = ModelVector(avg.clone());
                self.workers[i].local_step += 1;
                self.k += 1;
                deviation = self.record_row(clock, Some(i), None, round)?;
            }
            if self.target_reached(deviation) {
                return Ok((StopReason::TargetReached, clock));
            }
        }
    }
}

/// Link usage counts (undirected) from a trace, skipping local-only steps.
pub fn link_usage(trace: &[TraceRow]) -> Vec<(Edge, u64)> {
    let mut counts: std::collections::BTreeMap<Edge, u64> = Default::default();
    for r in trace {
        if let (Some(i), Some(m)) = (r.node, r.neighbor) {
            if i != m {
                *counts.entry(Edge::new(i, m)).or_default() += 1;
            }
        }
    }
    counts.into_iter().collect()
}

/// Sum of non-self iteration durations over all iterations, per node.
pub fn mean_iteration_times(trace: &[TraceRow], n: usize) -> Vec<f64> {
    let mut total = vec![0.0; n];
    let mut count = vec![0u64; n];
    for r in trace {
        if let Some(i) = r.node {
            count[i] += 1;
            if r.neighbor != Some(i) {
                total[i] += r.iter_time;
            }
        }
    }
    total.iter().zip(&count).map(|(t, &c)| if c == 0 { 0.0 } else { t / c as f64 }).collect()
}

/// Squared distance between two stacked states; used by tests.
pub fn state_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| linalg::dist_sq(x, y)).sum()
}
