//! Convergence metrics, runtime bound checks, and result files.

use crate::config::{ExperimentConfig, Protocol};
use crate::consensus::ModelVector;
use crate::linalg;
use crate::network::Topology;
use crate::policy::PolicyMatrix;
use crate::sim::{self, LambdaPoint, PolicyChange, RunRecord, SimError, StopReason, TraceRow};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SLACK: f64 = 0.10;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("lambda = {0} is outside (0, 1)")]
    DegenerateLambda(f64),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed metrics file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Sum over nodes of ||x_i - x*||^2.
pub fn deviation(xs: &[ModelVector], x_star: &ModelVector) -> f64 {
    xs.iter().map(|x| linalg::dist_sq(x.as_slice(), x_star.as_slice())).sum()
}

/// max over pairs of ||x_i - x_m||.
pub fn consensus_spread(xs: &[ModelVector]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in xs.iter().enumerate() {
        for b in &xs[i + 1..] {
            best = best.max(linalg::dist_sq(a.as_slice(), b.as_slice()));
        }
    }
    best.sqrt()
}

/// First clock with deviation <= eps * init_dev.
pub fn time_to_epsilon(trace: &[TraceRow], init_dev: f64, eps: f64) -> Option<f64> {
    trace.iter().find(|r| r.deviation <= eps * init_dev).map(|r| r.clock)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// one lambda for the whole run
    Static,
    /// running maximum of the monitor's lambda history
    Dynamic,
}

/// lambda^k * init_dev + alpha^2 sigma^2 lambda / (1 - lambda).
pub fn theorem_bound(lambda: f64, k: u64, init_dev: f64, alpha: f64, sigma: f64) -> Result<f64, MetricsError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(MetricsError::DegenerateLambda(lambda));
    }
    let decay = if k <= i32::MAX as u64 { lambda.powi(k as i32) } else { (k as f64 * lambda.ln()).exp() };
    Ok(decay * init_dev + alpha * alpha * sigma * sigma * lambda / (1.0 - lambda))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub kind: BoundKind,
    /// lambda in force at each step; a single entry is reused for every step
    pub lambdas: Vec<f64>,
    pub alpha: f64,
    pub sigma: f64,
    pub assumptions_met: bool,
}

impl BoundParams {
    pub fn fixed(lambda: f64, alpha: f64, sigma: f64) -> Self {
        BoundParams { kind: BoundKind::Static, lambdas: vec![lambda], alpha, sigma, assumptions_met: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub bounds: Vec<f64>,
    pub violations: usize,
    /// max over steps of deviation / bound - 1 (may be negative)
    pub max_relative_violation: f64,
    pub assumptions_met: bool,
    pub slack: f64,
}

impl BoundReport {
    /// True when the check is binding and nothing exceeded bound * (1 + slack).
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn binding(&self) -> bool {
        self.assumptions_met
    }
}

/// Compares a (mean) deviation trace, indexed by global step, against the
/// theorem bound. Violations are only counted when assumptions hold.
pub fn check_bound_trace(mean_dev: &[f64], params: &BoundParams, slack: f64) -> Result<BoundReport, MetricsError> {
    if mean_dev.is_empty() {
        return Err(MetricsError::InvalidArgument("empty deviation trace".into()));
    }
    if params.lambdas.is_empty() {
        return Err(MetricsError::InvalidArgument("no lambda values".into()));
    }
    let init_dev = mean_dev[0];
    let mut running = f64::NEG_INFINITY;
    let mut bounds = Vec::with_capacity(mean_dev.len());
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for (k, &dev) in mean_dev.iter().enumerate() {
        let lam = params.lambdas[k.min(params.lambdas.len() - 1)];
        let lam = match params.kind {
            BoundKind::Static => lam,
            BoundKind::Dynamic => {
                running = running.max(lam);
                running
            }
        };
        let b = theorem_bound(lam, k as u64, init_dev, params.alpha, params.sigma)?;
        bounds.push(b);
        let rel = if b > 0.0 { dev / b - 1.0 } else if dev > 0.0 { f64::INFINITY } else { 0.0 };
        worst = worst.max(rel);
        if params.assumptions_met && dev > b * (1.0 + slack) {
            violations += 1;
        }
    }
    Ok(BoundReport { kind: params.kind, bounds, violations, max_relative_violation: worst, assumptions_met: params.assumptions_met, slack })
}

/// Exact expected deviation E||x^k - x* 1||^2 for identical diagonal
/// quadratics, propagating per-coordinate second moments over the random
/// choice of (i, m) with i uniform and m ~ P[i].
///
/// `errors[i]` is x_i(0) - x*, `curvature` the shared diagonal of A,
/// `noise_var` the per-coordinate gradient-noise variance.
#[allow(clippy::too_many_arguments)]
pub fn expected_deviation_trace(
    policy: &PolicyMatrix,
    topology: &Topology,
    alpha: f64,
    rho: f64,
    curvature: &[f64],
    errors: &[ModelVector],
    noise_var: f64,
    steps: usize,
) -> Result<Vec<f64>, MetricsError> {
    let n = topology.node_count();
    if errors.len() != n || policy.node_count() != n {
        return Err(MetricsError::InvalidArgument("state size does not match topology".into()));
    }
    if errors.iter().any(|e| e.dim() != curvature.len()) {
        return Err(MetricsError::InvalidArgument("curvature length does not match model dimension".into()));
    }
    let pn = 1.0 / n as f64;
    // (i, m, prob, weight) for every move with positive probability
    let mut moves = Vec::new();
    for i in 0..n {
        for m in 0..n {
            let p = policy.get(i, m);
            if p <= 0.0 {
                continue;
            }
            let w = if m == i { 0.0 } else { alpha * rho * (topology.d(i, m) + topology.d(m, i)) / (2.0 * p) };
            moves.push((i, m, pn * p, w));
        }
    }
    let mut states: Vec<Vec<f64>> = (0..curvature.len())
        .map(|c| {
            let e: Vec<f64> = errors.iter().map(|x| x.0[c]).collect();
            let mut s = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..n {
                    s[a * n + b] = e[a] * e[b];
                }
            }
            s
        })
        .collect();
    let trace_of = |states: &[Vec<f64>]| -> f64 { states.iter().map(|s| (0..n).map(|a| s[a * n + a]).sum::<f64>()).sum() };
    let mut out = Vec::with_capacity(steps + 1);
    out.push(trace_of(&states));
    let mut next = vec![0.0; n * n];
    let mut t = vec![0.0; n * n];
    for _ in 0..steps {
        for (c, s) in states.iter_mut().enumerate() {
            let g = 1.0 - alpha * curvature[c];
            next.iter_mut().for_each(|v| *v = 0.0);
            for &(i, m, prob, w) in &moves {
                // row i of G: (1-w) g at i, w at m
                let (gi, gm) = ((1.0 - w) * g, w);
                t.copy_from_slice(s);
                for col in 0..n {
                    t[i * n + col] = if m == i { g * s[i * n + col] } else { gi * s[i * n + col] + gm * s[m * n + col] };
                }
                // right-multiply by G^T: only column i changes
                for row in 0..n {
                    let v = if m == i { g * t[row * n + i] } else { gi * t[row * n + i] + gm * t[row * n + m] };
                    t[row * n + i] = v;
                }
                t[i * n + i] += (1.0 - w) * (1.0 - w) * alpha * alpha * noise_var;
                for (acc, v) in next.iter_mut().zip(&t) {
                    *acc += prob * v;
                }
            }
            s.copy_from_slice(&next);
        }
        out.push(trace_of(&states));
    }
    Ok(out)
}

/// Per-step mean deviation over runs, truncated to the shortest trace.
pub fn mean_deviation_by_step(records: &[RunRecord]) -> Vec<f64> {
    let len = records.iter().map(|r| r.trace.len()).min().unwrap_or(0);
    (0..len).map(|k| records.iter().map(|r| r.trace[k].deviation).sum::<f64>() / records.len() as f64).collect()
}

/// Per-step running max of the lambda in force, taking the max over runs.
/// Step k uses policies announced at or before that step's clock.
pub fn lambda_by_step(records: &[RunRecord], len: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; len];
    for r in records {
        let mut h = 0;
        let mut current = f64::NEG_INFINITY;
        for (k, slot) in out.iter_mut().enumerate().take(r.trace.len()) {
            while h < r.lambda_history.len() && r.lambda_history[h].clock <= r.trace[k].clock {
                current = current.max(r.lambda_history[h].lambda2);
                h += 1;
            }
            *slot = slot.max(current);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RateCheck {
    pub horizons: Vec<u64>,
    pub mean_final_deviation: Vec<f64>,
    /// least-squares slope of ln(deviation) against ln(horizon)
    pub slope: f64,
}

/// Re-runs the config with alpha = c / sqrt(K) for each horizon K (in
/// global steps) and fits the decay slope of the final mean deviation.
pub fn rate_check(config: &ExperimentConfig, horizons: &[u64], c: f64, seeds: &[u64]) -> Result<RateCheck, MetricsError> {
    if horizons.len() < 2 || seeds.is_empty() {
        return Err(MetricsError::InvalidArgument("need two horizons and one seed".into()));
    }
    let mut means = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let mut cfg = config.clone();
        cfg.alpha = c / (h as f64).sqrt();
        cfg.stop.max_steps = Some(h);
        cfg.stop.max_time = None;
        cfg.stop.target_epsilon = None;
        let finals: Vec<f64> = seeds
            .par_iter()
            .map(|&s| sim::run(&cfg, cfg.protocol, s).map(|r| r.final_deviation()))
            .collect::<Result<_, _>>()?;
        means.push(finals.iter().sum::<f64>() / finals.len() as f64);
    }
    let xs: Vec<f64> = horizons.iter().map(|&h| (h as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.max(f64::MIN_POSITIVE).ln()).collect();
    let nx = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / nx, ys.iter().sum::<f64>() / nx);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(RateCheck { horizons: horizons.to_vec(), mean_final_deviation: means, slope: sxy / sxx })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpsilonTime {
    pub epsilon: f64,
    pub time: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinkUsage {
    pub a: usize,
    pub b: usize,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsSummary {
    pub schema_version: u32,
    pub protocol: Protocol,
    pub seed: u64,
    pub steps: u64,
    pub end_clock: f64,
    pub stop_reason: StopReason,
    pub initial_deviation: f64,
    pub final_deviation: f64,
    pub final_spread: f64,
    pub time_to_epsilon: Vec<EpsilonTime>,
    pub link_usage: Vec<LinkUsage>,
    pub self_steps: u64,
    pub policy_log: Vec<PolicyChange>,
    pub lambda_history: Vec<LambdaPoint>,
    pub learning_rate_ok: bool,
    pub warnings: Vec<String>,
    pub config: ExperimentConfig,
}

pub fn summarize(record: &RunRecord) -> MetricsSummary {
    let time_to_epsilon = record
        .config
        .report_epsilons
        .iter()
        .map(|&epsilon| EpsilonTime { epsilon, time: record.time_to_epsilon(epsilon) })
        .collect();
    let link_usage = sim::link_usage(&record.trace).into_iter().map(|(e, count)| LinkUsage { a: e.a, b: e.b, count }).collect();
    let self_steps = record.trace.iter().filter(|r| r.node.is_some() && r.node == r.neighbor).count() as u64;
    let last = record.trace.last();
    MetricsSummary {
        schema_version: METRICS_SCHEMA_VERSION,
        protocol: record.protocol,
        seed: record.seed,
        steps: record.steps(),
        end_clock: record.end_clock,
        stop_reason: record.stop_reason,
        initial_deviation: record.initial_deviation,
        final_deviation: record.final_deviation(),
        final_spread: last.map_or(0.0, |r| r.spread),
        time_to_epsilon,
        link_usage,
        self_steps,
        policy_log: record.policy_log.clone(),
        lambda_history: record.lambda_history.clone(),
        learning_rate_ok: record.learning_rate.ok,
        warnings: record.warnings.clone(),
        config: record.config.clone(),
    }
}

#[derive(Serialize)]
struct TraceLine<'a> {
    schema_version: u32,
    #[serde(flatten)]
    row: &'a TraceRow,
}

/// One JSON object per trace row, newline terminated.
pub fn trace_jsonl(trace: &[TraceRow]) -> String {
    let mut out = String::new();
    for row in trace {
        let line = serde_json::to_string(&TraceLine { schema_version: METRICS_SCHEMA_VERSION, row }).expect("trace rows serialize");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Parses a JSONL trace written by `trace_jsonl`.
pub fn read_trace_jsonl(text: &str) -> Result<Vec<TraceRow>, MetricsError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Writes `trace.jsonl` and `summary.json` into `dir`.
pub fn write_metrics(record: &RunRecord, dir: &Path) -> Result<MetricsSummary, MetricsError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trace.jsonl"), trace_jsonl(&record.trace))?;
    let summary = summarize(record);
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

pub fn read_summary(path: &Path) -> Result<MetricsSummary, MetricsError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// CSV for external plotting.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("k,clock,node,neighbor,iter_time,deviation,spread,objective\n");
    let opt = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.k,
            r.clock,
            opt(r.node),
            opt(r.neighbor),
            r.iter_time,
            r.deviation,
            r.spread,
            r.objective
        );
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProtocolRuns {
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    pub times: Vec<Option<f64>>,
    pub mean_time: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Comparison {
    pub epsilon: f64,
    pub runs: Vec<ProtocolRuns>,
    /// per protocol, mean of (other time / reference time) over seeds
    pub mean_speedup: Vec<Option<f64>>,
    /// per protocol, seeds on which the reference was strictly faster
    pub reference_wins: Vec<usize>,
}

/// Runs every protocol in `config.protocols` (or `config.protocol`) on the
/// seed sweep and compares time to `epsilon`. The first protocol is the
/// reference.
pub fn compare(config: &ExperimentConfig, epsilon: f64) -> Result<Comparison, MetricsError> {
    let protocols = if config.protocols.is_empty() { vec![config.protocol] } else { config.protocols.clone() };
    let seeds = config.sweep_seeds();
    let mut runs = Vec::new();
    for &p in &protocols {
        let times: Vec<Option<f64>> = seeds
            .par_iter()
            .map(|&s| sim::run(config, p, s).map(|r| r.time_to_epsilon(epsilon)))
            .collect::<Result<_, _>>()?;
        let mean_time = if times.iter().all(Option::is_some) {
            Some(times.iter().flatten().sum::<f64>() / times.len() as f64)
        } else {
            None
        };
        runs.push(ProtocolRuns { protocol: p, seeds: seeds.clone(), times, mean_time });
    }
    let reference = runs[0].times.clone();
    let mut mean_speedup = Vec::new();
    let mut reference_wins = Vec::new();
    for r in &runs {
        let ratios: Option<Vec<f64>> = r.times.iter().zip(&reference).map(|(o, re)| Some(o.as_ref()? / re.as_ref()?)).collect();
        mean_speedup.push(ratios.map(|v| v.iter().sum::<f64>() / v.len() as f64));
        reference_wins.push(
            r.times
                .iter()
                .zip(&reference)
                .filter(|(o, re)| match (o, re) {
                    (_, None) => false,
                    (None, Some(_)) => true,
                    (Some(o), Some(re)) => re < o,
                })
                .count(),
        );
    }
    Ok(Comparison { epsilon, runs, mean_speedup, reference_wins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Topology;

    fn row(k: u64, clock: f64, deviation: f64) -> TraceRow {
        TraceRow { k, clock, node: Some(0), neighbor: Some(1), iter_time: 1.0, deviation, spread: 0.0, objective: 0.0 }
    }

    #[test]
    fn deviation_examples() {
        let xs = ModelVector(vec![3.0]);
        assert_eq!(deviation(&[xs.clone(), xs.clone()], &xs), 0.0);
        let d = deviation(&[ModelVector(vec![4.0]), ModelVector(vec![2.0])], &xs);
        assert!((d - 2.0).abs() < 1e-15);
    }

    #[test]
    fn spread_is_max_pairwise_distance() {
        let xs = vec![ModelVector(vec![0.0, 0.0]), ModelVector(vec![3.0, 4.0]), ModelVector(vec![1.0, 0.0])];
        assert!((consensus_spread(&xs) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(theorem_bound(0.5, 0, 3.0, 0.1, 0.0).unwrap(), 3.0);
        assert!(theorem_bound(0.5, 200, 3.0, 0.1, 0.0).unwrap() < 1e-50);
        let v = theorem_bound(0.82, 10, 4.0, 0.1, 1.0).unwrap();
        let exact = 4.0 * 0.82f64.powi(10) + 0.01 * 0.82 / 0.18;
        assert!((v - exact).abs() < 1e-14);
        assert!((v - 0.59535).abs() < 1e-4);
        assert!(matches!(theorem_bound(1.0, 1, 1.0, 0.1, 0.0), Err(MetricsError::DegenerateLambda(_))));
        assert!(matches!(theorem_bound(0.0, 1, 1.0, 0.1, 0.0), Err(MetricsError::DegenerateLambda(_))));
    }

    #[test]
    fn time_to_epsilon_monotone() {
        let trace: Vec<TraceRow> = (0..10).map(|k| row(k, k as f64, 0.5f64.powi(k as i32))).collect();
        let t1 = time_to_epsilon(&trace, 1.0, 0.1).unwrap();
        let t2 = time_to_epsilon(&trace, 1.0, 0.01).unwrap();
        assert!(t1 <= t2);
        assert_eq!(time_to_epsilon(&trace, 1.0, 1e-9), None);
        assert_eq!(time_to_epsilon(&[], 1.0, 0.1), None);
    }

    #[test]
    fn gating_and_negative_control() {
        let trace: Vec<f64> = (0..50).map(|k| 0.89f64.powi(k)).collect();
        let ok = check_bound_trace(&trace, &BoundParams::fixed(0.9, 0.1, 0.0), 0.0).unwrap();
        assert!(ok.passed());
        let wrong = check_bound_trace(&trace, &BoundParams::fixed(0.45, 0.1, 0.0), 0.1).unwrap();
        assert!(wrong.violations > 0);
        let mut gated = BoundParams::fixed(0.45, 0.1, 0.0);
        gated.assumptions_met = false;
        let r = check_bound_trace(&trace, &gated, 0.1).unwrap();
        assert_eq!(r.violations, 0);
        assert!(!r.binding());
    }

    #[test]
    fn dynamic_uses_running_max() {
        let trace = vec![1.0, 0.9, 0.85, 0.8];
        let params = BoundParams { kind: BoundKind::Dynamic, lambdas: vec![0.5, 0.9, 0.6, 0.6], alpha: 0.1, sigma: 0.0, assumptions_met: true };
        let r = check_bound_trace(&trace, &params, 0.0).unwrap();
        assert!((r.bounds[2] - 0.81).abs() < 1e-12);
        assert!((r.bounds[3] - 0.729).abs() < 1e-12);
    }

    #[test]
    fn expected_trace_matches_one_node_pair() {
        // M = 2 with P = [[0,1],[1,0]] reduces to a closed form
        let topo = Topology::fully_connected(2).unwrap();
        let p = PolicyMatrix::uniform(&topo);
        let e = vec![ModelVector(vec![1.0]), ModelVector(vec![-1.0])];
        let tr = expected_deviation_trace(&p, &topo, 0.5, 0.5, &[0.0], &e, 0.0, 1).unwrap();
        // w = 0.25; either node moves to 0.75*x_i + 0.25*x_m = +-0.5
        assert!((tr[1] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn jsonl_and_csv() {
        let trace = vec![row(0, 0.0, 1.0), row(1, 1.5, 0.5)];
        let text = trace_jsonl(&trace);
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"schema_version\":1,"));
        assert_eq!(read_trace_jsonl(&text).unwrap(), trace);
        let csv = trace_csv(&trace);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().starts_with("1,1.5,0,1,"));
    }
}
