//! Communication-policy generation: feasible intervals, the per-row LP,
//! the gossip expectation matrix Y, its second eigenvalue and the nested
//! grid search over (rho, t-bar).

use crate::linalg::{self, LinalgError, Matrix, PowerOptions};
use crate::lp::{LinearProgram, LpError, Relation};
use crate::network::Topology;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MARGIN: f64 = 1e-6;
const ROW_TOL: f64 = 1e-9;
/// Relative tolerance under which two link times count as equal.
const TIME_CLASS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("learning rate must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("policy LP is infeasible")]
    Infeasible,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("edge ({0}, {1}) has zero selection probability")]
    ZeroProbabilityEdge(usize, usize),
    #[error("eigensolver did not converge: {0}")]
    NotConverged(String),
    #[error("lambda_2 = {0} is outside (0, 1)")]
    DegenerateLambda(f64),
    #[error("no feasible policy on the search grid")]
    NoFeasiblePolicy,
    #[error("node {0} has zero expected iteration time")]
    ZeroIterationTime(usize),
    #[error("approximation bound needs M > 3, got {0}")]
    InvalidM(usize),
    #[error("approximation bound needs 0 < a < 1, got {0}")]
    InvalidA(f64),
}

impl From<LinalgError> for PolicyError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::NotConverged { .. } => PolicyError::NotConverged(e.to_string()),
            other => PolicyError::InvalidArgument(other.to_string()),
        }
    }
}

/// Row-stochastic neighbor-selection matrix; entry (i, i) is the
/// probability that node i runs a local-only step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyMatrix {
    probs: Matrix,
}

impl PolicyMatrix {
    /// Uniform over neighbors, no self-selection.
    pub fn uniform(topology: &Topology) -> Self {
        let n = topology.node_count();
        let probs = Matrix::from_fn(n, n, |i, m| {
            let deg = topology.degree(i);
            if deg == 0 {
                (i == m) as u8 as f64
            } else if topology.has_edge(i, m) {
                1.0 / deg as f64
            } else {
                0.0
            }
        });
        PolicyMatrix { probs }
    }

    /// Checks shape, entry range, row sums and support.
    pub fn new(probs: Matrix, topology: &Topology) -> Result<Self, PolicyError> {
        let n = topology.node_count();
        if probs.rows() != n || probs.cols() != n {
            return Err(PolicyError::InvalidArgument(format!("policy is {}x{}, expected {n}x{n}", probs.rows(), probs.cols())));
        }
        for i in 0..n {
            for m in 0..n {
                let p = probs[(i, m)];
                if !(-ROW_TOL..=1.0 + ROW_TOL).contains(&p) {
                    return Err(PolicyError::InvalidArgument(format!("p[{i}][{m}] = {p} outside [0, 1]")));
                }
                if i != m && !topology.has_edge(i, m) && p != 0.0 {
                    return Err(PolicyError::InvalidArgument(format!("p[{i}][{m}] > 0 on a non-edge")));
                }
            }
            let s: f64 = probs.row(i).iter().sum();
            if (s - 1.0).abs() > ROW_TOL {
                return Err(PolicyError::InvalidArgument(format!("row {i} sums to {s}")));
            }
        }
        Ok(PolicyMatrix { probs })
    }

    /// No validation; for diagnostics and negative tests.
    pub fn from_matrix_unchecked(probs: Matrix) -> Self {
        PolicyMatrix { probs }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.probs
    }

    pub fn node_count(&self) -> usize {
        self.probs.rows()
    }

    pub fn get(&self, i: usize, m: usize) -> f64 {
        self.probs[(i, m)]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    /// max - min over all off-diagonal entries on edges.
    pub fn off_diagonal_spread(&self, topology: &Topology) -> f64 {
        let vals: Vec<f64> = topology.edges().iter().flat_map(|e| [self.get(e.a, e.b), self.get(e.b, e.a)]).collect();
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if vals.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GossipExpectation {
    pub y: Matrix,
    pub alpha: f64,
    pub rho: f64,
}

impl GossipExpectation {
    /// Smallest strictly positive entry.
    pub fn min_positive_entry(&self) -> Option<f64> {
        self.y.as_slice().iter().copied().filter(|&v| v > 0.0).reduce(f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleIntervals {
    pub rho_low: f64,
    pub rho_high: f64,
    pub tbar_low: f64,
    pub tbar_high: f64,
}

impl FeasibleIntervals {
    pub fn tbar_empty(&self) -> bool {
        self.tbar_low > self.tbar_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: PolicyMatrix,
    pub rho: f64,
    pub tbar: f64,
    pub lambda2: f64,
    pub t_convergence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySearch {
    pub alpha: f64,
    pub outer_rounds: usize,
    pub inner_rounds: usize,
    pub epsilon: f64,
    pub margin: f64,
}

impl Default for PolicySearch {
    fn default() -> Self {
        PolicySearch { alpha: 0.1, outer_rounds: 16, inner_rounds: 16, epsilon: 0.01, margin: DEFAULT_MARGIN }
    }
}

pub fn rho_interval(alpha: f64) -> Result<(f64, f64), PolicyError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(PolicyError::NonPositiveAlpha(alpha));
    }
    Ok((0.0, 0.5 / alpha))
}

fn check_times(times: &Matrix, topology: &Topology) -> Result<(), PolicyError> {
    let n = topology.node_count();
    if times.rows() != n || times.cols() != n {
        return Err(PolicyError::InvalidArgument(format!("time matrix is {}x{}, expected {n}x{n}", times.rows(), times.cols())));
    }
    for e in topology.edges() {
        for (i, m) in [(e.a, e.b), (e.b, e.a)] {
            let t = times[(i, m)];
            if !(t > 0.0 && t.is_finite()) {
                return Err(PolicyError::InvalidArgument(format!("iteration time t[{i}][{m}] = {t} must be positive")));
            }
        }
    }
    Ok(())
}

/// (L, U) bounds on t-bar for a given rho.
pub fn tbar_interval(alpha: f64, rho: f64, times: &Matrix, topology: &Topology) -> Result<(f64, f64), PolicyError> {
    check_times(times, topology)?;
    let n = topology.node_count();
    let mf = n as f64;
    let mut low = f64::NEG_INFINITY;
    let mut high = f64::INFINITY;
    for i in 0..n {
        let mut s = 0.0;
        let mut tmax = 0.0f64;
        for m in 0..n {
            if i != m {
                let dsum = topology.d(i, m) + topology.d(m, i);
                s += times[(i, m)] * dsum;
                tmax = tmax.max(times[(i, m)] * topology.d(i, m));
            }
        }
        low = low.max(alpha * rho / mf * s);
        high = high.min(tmax / mf);
    }
    Ok((low, high))
}

pub fn feasible_intervals(alpha: f64, rho: f64, times: &Matrix, topology: &Topology) -> Result<FeasibleIntervals, PolicyError> {
    let (rho_low, rho_high) = rho_interval(alpha)?;
    let (tbar_low, tbar_high) = tbar_interval(alpha, rho, times, topology)?;
    Ok(FeasibleIntervals { rho_low, rho_high, tbar_low, tbar_high })
}

fn map_lp(e: LpError) -> PolicyError {
    match e {
        LpError::Infeasible => PolicyError::Infeasible,
        other => PolicyError::NumericalFailure(other.to_string()),
    }
}

/// Lower bound on p_im for an edge, clipped at 0.
fn edge_floor(alpha: f64, rho: f64, margin: f64) -> f64 {
    (2.0 * alpha * rho + margin).max(0.0)
}

/// Solves one row: neighbors with equal times form one class whose mass
/// is split evenly, so the answer does not depend on node labels.
fn solve_row(i: usize, target: f64, floor: f64, times: &Matrix, topology: &Topology) -> Result<Vec<f64>, PolicyError> {
    let n = topology.node_count();
    let mut nbrs = topology.neighbors(i);
    let mut row = vec![0.0; n];
    if nbrs.is_empty() {
        if target.abs() > ROW_TOL {
            return Err(PolicyError::Infeasible);
        }
        row[i] = 1.0;
        return Ok(row);
    }
    nbrs.sort_by(|&a, &b| times[(i, a)].total_cmp(&times[(i, b)]).then(a.cmp(&b)));
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for m in nbrs.iter().copied() {
        match classes.last_mut() {
            Some(c) if (times[(i, m)] - times[(i, c[0])]).abs() <= TIME_CLASS_TOL * times[(i, c[0])] => c.push(m),
            _ => classes.push(vec![m]),
        }
    }
    let k = classes.len();
    let class_time: Vec<f64> = classes.iter().map(|c| c.iter().map(|&m| times[(i, m)]).sum::<f64>() / c.len() as f64).collect();
    let floor_time: f64 = nbrs.iter().map(|&m| times[(i, m)] * floor).sum();
    let free_mass = 1.0 - floor * nbrs.len() as f64;
    if free_mass < -ROW_TOL {
        return Err(PolicyError::Infeasible);
    }
    // variables: extra mass per class, then the self slack
    let mut obj = vec![0.0; k + 1];
    obj[k] = 1.0;
    let mut lp = LinearProgram::minimize(obj);
    let mut time_row = class_time.clone();
    time_row.push(0.0);
    lp.constraint(time_row, Relation::Eq, target - floor_time);
    lp.constraint(vec![1.0; k + 1], Relation::Eq, free_mass.max(0.0));
    let sol = lp.solve().map_err(map_lp)?;
    let extra_mass: f64 = sol.x[..k].iter().sum();
    let nbr_times: Vec<f64> = nbrs.iter().map(|&m| times[(i, m)]).collect();
    let extra = match min_norm_face_point(&nbr_times, extra_mass, target - floor_time) {
        Some(q) => q,
        None => {
            // fall back to the simplex vertex
            let mut q = Vec::with_capacity(nbrs.len());
            for (c, members) in classes.iter().enumerate() {
                q.extend(std::iter::repeat_n(sol.x[c] / members.len() as f64, members.len()));
            }
            q
        }
    };
    for (&m, q) in nbrs.iter().zip(&extra) {
        row[m] = floor + q;
    }
    let used: f64 = nbrs.iter().map(|&m| row[m]).sum();
    row[i] = (1.0 - used).max(0.0);
    Ok(row)
}

/// Minimum-norm q >= 0 with sum q = mass and sum t q = budget, for `t`
/// sorted ascending. The solution has the form q_k = max(0, a + b t_k),
/// so its support is a prefix (b < 0) or a suffix (b > 0) of the sorted
/// times; every such support is tried.
fn min_norm_face_point(t: &[f64], mass: f64, budget: f64) -> Option<Vec<f64>> {
    let n = t.len();
    let scale = mass.abs().max(budget.abs()).max(1e-300);
    if mass <= 1e-14 {
        return (budget.abs() <= 1e-9 * budget.abs().max(1.0)).then(|| vec![0.0; n]);
    }
    let tol = 1e-10 * scale;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let supports = (1..=n).map(|j| 0..j).chain((1..n).map(|j| j..n));
    for range in supports {
        let active = &t[range.clone()];
        let na = active.len() as f64;
        let st: f64 = active.iter().sum();
        let stt: f64 = active.iter().map(|v| v * v).sum();
        let det = na * stt - st * st;
        let spread = active[active.len() - 1] - active[0];
        let q: Vec<f64> = if spread <= TIME_CLASS_TOL * active[0] {
            // equal times: only the mass constraint is independent
            if (budget - mass * st / na).abs() > 1e-9 * scale.max(1.0) {
                continue;
            }
            let inside = range.clone();
            (0..n).map(|k| if inside.contains(&k) { mass / na } else { 0.0 }).collect()
        } else {
            let a = (stt * mass - st * budget) / det;
            let b = (na * budget - st * mass) / det;
            let ok = (0..n).all(|k| {
                let v = a + b * t[k];
                if range.contains(&k) {
                    v >= -tol
                } else {
                    v <= tol
                }
            });
            if !ok {
                continue;
            }
            (0..n).map(|k| if range.contains(&k) { (a + b * t[k]).max(0.0) } else { 0.0 }).collect()
        };
        let norm: f64 = q.iter().map(|v| v * v).sum();
        if best.as_ref().is_none_or(|(bn, _)| norm < *bn) {
            best = Some((norm, q));
        }
    }
    best.map(|(_, q)| q)
}

/// Minimizes the total self-selection probability subject to equal
/// per-node expected iteration time `M * tbar`, the edge floor
/// `2 alpha rho + margin`, edge support and row-stochasticity.
pub fn solve_policy_lp(
    alpha: f64,
    rho: f64,
    tbar: f64,
    times: &Matrix,
    topology: &Topology,
    margin: f64,
) -> Result<PolicyMatrix, PolicyError> {
    rho_interval(alpha)?;
    check_times(times, topology)?;
    if !(rho >= 0.0 && tbar.is_finite() && margin.is_finite()) {
        return Err(PolicyError::InvalidArgument(format!("rho = {rho}, tbar = {tbar}, margin = {margin}")));
    }
    let n = topology.node_count();
    let target = n as f64 * tbar;
    let floor = edge_floor(alpha, rho, margin);
    let mut probs = Matrix::zeros(n, n);
    for i in 0..n {
        let row = solve_row(i, target, floor, times, topology)?;
        probs.row_mut(i).copy_from_slice(&row);
    }
    Ok(PolicyMatrix { probs })
}

/// The same program as one coupled LP over all entries. Reference route
/// for checking the per-row decomposition; returns (policy, objective).
pub fn solve_policy_lp_joint(
    alpha: f64,
    rho: f64,
    tbar: f64,
    times: &Matrix,
    topology: &Topology,
    margin: f64,
) -> Result<(PolicyMatrix, f64), PolicyError> {
    rho_interval(alpha)?;
    check_times(times, topology)?;
    let n = topology.node_count();
    let nv = n * n;
    let floor = edge_floor(alpha, rho, margin);
    let mut obj = vec![0.0; nv];
    for i in 0..n {
        obj[i * n + i] = 1.0;
    }
    let mut lp = LinearProgram::minimize(obj);
    for i in 0..n {
        let mut sum_row = vec![0.0; nv];
        let mut time_row = vec![0.0; nv];
        for m in 0..n {
            sum_row[i * n + m] = 1.0;
            if i != m {
                time_row[i * n + m] = times[(i, m)] * topology.d(i, m);
            }
        }
        lp.constraint(sum_row, Relation::Eq, 1.0);
        lp.constraint(time_row, Relation::Eq, n as f64 * tbar);
        for m in 0..n {
            if i == m {
                continue;
            }
            let mut c = vec![0.0; nv];
            c[i * n + m] = 1.0;
            if topology.has_edge(i, m) {
                lp.constraint(c, Relation::Ge, floor);
            } else {
                lp.constraint(c, Relation::Eq, 0.0);
            }
        }
    }
    let sol = lp.solve().map_err(map_lp)?;
    let probs = Matrix::from_fn(n, n, |i, m| sol.x[i * n + m]);
    Ok((PolicyMatrix { probs }, sol.objective))
}

/// Y = E[D^T D] for a feasible policy (so every node is active with
/// probability 1/M).
pub fn build_gossip_expectation(
    policy: &PolicyMatrix,
    alpha: f64,
    rho: f64,
    topology: &Topology,
) -> Result<GossipExpectation, PolicyError> {
    let n = topology.node_count();
    if policy.node_count() != n {
        return Err(PolicyError::InvalidArgument("policy size does not match topology".into()));
    }
    let pn = 1.0 / n as f64;
    let ar = alpha * rho;
    let ar2 = ar * ar;
    // gamma_im for every ordered edge; zero where the term is skipped
    let mut gamma = Matrix::zeros(n, n);
    for i in 0..n {
        for m in 0..n {
            if i == m {
                continue;
            }
            let dsum = topology.d(i, m) + topology.d(m, i);
            let p = policy.get(i, m);
            if dsum > 0.0 && p <= 0.0 {
                return Err(PolicyError::ZeroProbabilityEdge(i, m));
            }
            if p > 0.0 {
                gamma[(i, m)] = dsum / (2.0 * p);
            }
        }
    }
    let mut y = Matrix::zeros(n, n);
    for i in 0..n {
        for m in (i + 1)..n {
            let (pim, pmi) = (policy.get(i, m), policy.get(m, i));
            let (gim, gmi) = (gamma[(i, m)], gamma[(m, i)]);
            let v = ar * (pn * pim * gim + pn * pmi * gmi) - ar2 * (pn * pim * gim * gim + pn * pmi * gmi * gmi);
            y[(i, m)] = v;
            y[(m, i)] = v;
        }
    }
    for i in 0..n {
        let mut lin = 0.0;
        let mut quad = 0.0;
        for m in 0..n {
            if m == i {
                continue;
            }
            let (pim, pmi) = (policy.get(i, m), policy.get(m, i));
            let (gim, gmi) = (gamma[(i, m)], gamma[(m, i)]);
            lin += pn * pim * gim;
            quad += pn * pim * gim * gim + pn * pmi * gmi * gmi;
        }
        y[(i, i)] = 1.0 - 2.0 * ar * lin + ar2 * quad;
    }
    Ok(GossipExpectation { y, alpha, rho })
}

pub fn second_largest_eigenvalue(y: &GossipExpectation) -> Result<f64, PolicyError> {
    Ok(linalg::second_largest_eigenvalue(&y.y, PowerOptions::default())?)
}

/// t-bar * ln(eps) / ln(lambda_2).
pub fn convergence_time(tbar: f64, lambda2: f64, epsilon: f64) -> Result<f64, PolicyError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(PolicyError::InvalidArgument(format!("epsilon = {epsilon} must lie in (0, 1)")));
    }
    if !(lambda2 > 0.0 && lambda2 < 1.0) {
        return Err(PolicyError::DegenerateLambda(lambda2));
    }
    Ok(tbar * epsilon.ln() / lambda2.ln())
}

struct Candidate {
    rho: f64,
    tbar: f64,
    lambda2: f64,
    t_conv: f64,
    policy: PolicyMatrix,
}

fn evaluate_point(search: &PolicySearch, rho: f64, tbar: f64, times: &Matrix, topology: &Topology) -> Option<Candidate> {
    let policy = solve_policy_lp(search.alpha, rho, tbar, times, topology, search.margin).ok()?;
    let y = build_gossip_expectation(&policy, search.alpha, rho, topology).ok()?;
    let lambda2 = second_largest_eigenvalue(&y).ok()?;
    let t_conv = convergence_time(tbar, lambda2, search.epsilon).unwrap_or(f64::INFINITY);
    Some(Candidate { rho, tbar, lambda2, t_conv, policy })
}

/// Nested grid search over rho (outer) and t-bar (inner).
pub fn generate_policy_matrix(search: &PolicySearch, times: &Matrix, topology: &Topology) -> Result<PolicyResult, PolicyError> {
    let (rho_low, rho_high) = rho_interval(search.alpha)?;
    if search.outer_rounds == 0 || search.inner_rounds == 0 {
        return Err(PolicyError::InvalidArgument("outer and inner rounds must be at least 1".into()));
    }
    if !(search.epsilon > 0.0 && search.epsilon < 1.0) {
        return Err(PolicyError::InvalidArgument(format!("epsilon = {} must lie in (0, 1)", search.epsilon)));
    }
    check_times(times, topology)?;
    let k_max = search.outer_rounds;
    let r_max = search.inner_rounds;
    let mut grid = Vec::with_capacity(k_max * r_max);
    for k in 1..=k_max {
        let rho = rho_low + k as f64 * (rho_high - rho_low) / k_max as f64;
        let (low, high) = tbar_interval(search.alpha, rho, times, topology)?;
        if low > high {
            continue;
        }
        for r in 1..=r_max {
            grid.push((rho, low + r as f64 * (high - low) / r_max as f64));
        }
    }
    let candidates: Vec<Candidate> = grid
        .par_iter()
        .filter_map(|&(rho, tbar)| evaluate_point(search, rho, tbar, times, topology))
        .collect();
    let best = candidates
        .into_iter()
        .filter(|c| c.t_conv.is_finite())
        .min_by(|a, b| {
            a.t_conv
                .total_cmp(&b.t_conv)
                .then(a.lambda2.total_cmp(&b.lambda2))
                .then(a.rho.total_cmp(&b.rho))
                .then(a.tbar.total_cmp(&b.tbar))
        })
        .ok_or(PolicyError::NoFeasiblePolicy)?;
    Ok(PolicyResult {
        policy: best.policy,
        rho: best.rho,
        tbar: best.tbar,
        lambda2: best.lambda2,
        t_convergence: best.t_conv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub passed: bool,
    pub worst_violation: f64,
}

impl ConstraintCheck {
    fn from_violation(worst: f64, tol: f64) -> Self {
        ConstraintCheck { passed: worst <= tol, worst_violation: worst.max(0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub row_stochastic: ConstraintCheck,
    pub non_negative: ConstraintCheck,
    pub edge_support: ConstraintCheck,
    /// p_im >= 2 alpha rho + margin, and strictly above 2 alpha rho.
    pub lower_bound: ConstraintCheck,
    /// relative spread of the per-node expected iteration times
    pub equal_iteration_time: ConstraintCheck,
}

impl FeasibilityReport {
    pub fn all_passed(&self) -> bool {
        self.row_stochastic.passed
            && self.non_negative.passed
            && self.edge_support.passed
            && self.lower_bound.passed
            && self.equal_iteration_time.passed
    }
}

pub fn check_feasibility(
    policy: &PolicyMatrix,
    alpha: f64,
    rho: f64,
    times: &Matrix,
    topology: &Topology,
    margin: f64,
) -> FeasibilityReport {
    let n = topology.node_count();
    let p = policy.matrix();
    let mut row_worst = 0.0f64;
    let mut neg_worst = 0.0f64;
    let mut support_worst = 0.0f64;
    let mut lb_worst = 0.0f64;
    let mut strict_ok = true;
    let mut tbars = Vec::with_capacity(n);
    for i in 0..n.min(p.rows()) {
        row_worst = row_worst.max((p.row(i).iter().sum::<f64>() - 1.0).abs());
        let mut tb = 0.0;
        for m in 0..n.min(p.cols()) {
            let v = p[(i, m)];
            neg_worst = neg_worst.max(-v);
            if i == m {
                continue;
            }
            if topology.has_edge(i, m) {
                lb_worst = lb_worst.max(2.0 * alpha * rho + margin - v);
                strict_ok &= v > 2.0 * alpha * rho;
                if times.rows() > i && times.cols() > m {
                    tb += times[(i, m)] * v;
                }
            } else {
                support_worst = support_worst.max(v.abs());
            }
        }
        tbars.push(tb);
    }
    let hi = tbars.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = tbars.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if tbars.is_empty() || hi <= 0.0 { 0.0 } else { (hi - lo) / hi };
    let shape_ok = p.rows() == n && p.cols() == n;
    let mut lower_bound = ConstraintCheck::from_violation(lb_worst, 1e-12);
    lower_bound.passed &= strict_ok;
    FeasibilityReport {
        row_stochastic: ConstraintCheck { passed: shape_ok && row_worst <= ROW_TOL, worst_violation: row_worst },
        non_negative: ConstraintCheck::from_violation(neg_worst, 0.0),
        edge_support: ConstraintCheck::from_violation(support_worst, 0.0),
        lower_bound,
        equal_iteration_time: ConstraintCheck::from_violation(spread, 1e-9),
    }
}

/// Harmonic weighting of per-node expected iteration times.
pub fn selection_probabilities_from_times(tbars: &[f64]) -> Result<Vec<f64>, PolicyError> {
    if tbars.len() == 1 {
        return Ok(vec![1.0]);
    }
    if let Some(i) = tbars.iter().position(|&t| !(t > 0.0)) {
        return Err(PolicyError::ZeroIterationTime(i));
    }
    let total: f64 = tbars.iter().map(|t| 1.0 / t).sum();
    Ok(tbars.iter().map(|t| (1.0 / t) / total).collect())
}

/// Per-node expected iteration time sum_m t_im p_im d_im.
pub fn expected_iteration_times(policy: &PolicyMatrix, times: &Matrix, topology: &Topology) -> Vec<f64> {
    let n = topology.node_count();
    (0..n)
        .map(|i| (0..n).filter(|&m| m != i).map(|m| times[(i, m)] * policy.get(i, m) * topology.d(i, m)).sum())
        .collect()
}

/// Long-run share of global steps taken by each node.
pub fn expected_selection_probabilities(policy: &PolicyMatrix, times: &Matrix, topology: &Topology) -> Result<Vec<f64>, PolicyError> {
    selection_probabilities_from_times(&expected_iteration_times(policy, times, topology))
}

/// Bound on the ratio between the grid-search optimum and the true
/// optimum of the nonlinear program.
pub fn approximation_ratio_bound(m: usize, a: f64, upper: f64, lower: f64) -> Result<f64, PolicyError> {
    if m <= 3 {
        return Err(PolicyError::InvalidM(m));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(PolicyError::InvalidA(a));
    }
    if !(lower > 0.0 && upper >= lower && upper.is_finite()) {
        return Err(PolicyError::InvalidArgument(format!("need 0 < L <= U, got L = {lower}, U = {upper}")));
    }
    let mf = m as f64;
    let num = ((mf - 1.0) / (mf - 3.0)).ln();
    // ln(1-2a+a^M) - ln(1-2a+a^{M+1}) without cancellation
    let am = a.powi(m as i32);
    let base = 1.0 - 2.0 * a + am * a;
    let den = (am * (1.0 - a) / base).ln_1p();
    Ok(upper / lower * num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> (Topology, Matrix) {
        let t = Topology::fully_connected(2).unwrap();
        let times = Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        (t, times)
    }

    #[test]
    fn rho_interval_examples() {
        assert_eq!(rho_interval(0.1).unwrap(), (0.0, 5.0));
        assert_eq!(rho_interval(0.5).unwrap(), (0.0, 1.0));
        assert_eq!(rho_interval(0.0), Err(PolicyError::NonPositiveAlpha(0.0)));
    }

    #[test]
    fn tbar_interval_examples() {
        let (t, times) = two_node();
        let (l, u) = tbar_interval(0.1, 1.0, &times, &t).unwrap();
        assert!((l - 0.1).abs() < 1e-15 && (u - 0.5).abs() < 1e-15);
        let (l, u2) = tbar_interval(0.1, 1e-9, &times, &t).unwrap();
        assert!(l < 1e-9 && u2 == u);
        let (l, u) = tbar_interval(0.1, 5.0, &times, &t).unwrap();
        assert!((l - 0.5).abs() < 1e-15 && (u - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lp_examples() {
        let (t, times) = two_node();
        let p = solve_policy_lp(0.1, 1.0, 0.5, &times, &t, DEFAULT_MARGIN).unwrap();
        assert!(p.matrix().max_abs_diff(&Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()) < 1e-12);
        let p = solve_policy_lp(0.1, 1.0, 0.2, &times, &t, DEFAULT_MARGIN).unwrap();
        let want = Matrix::from_rows(vec![vec![0.6, 0.4], vec![0.4, 0.6]]).unwrap();
        assert!(p.matrix().max_abs_diff(&want) < 1e-12);
        assert!((p.get(0, 0) + p.get(1, 1) - 1.2).abs() < 1e-12);
        assert_eq!(solve_policy_lp(0.1, 1.0, 0.6, &times, &t, DEFAULT_MARGIN), Err(PolicyError::Infeasible));
    }

    #[test]
    fn gossip_golden() {
        let (t, _) = two_node();
        let p = PolicyMatrix::new(Matrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(), &t).unwrap();
        let y = build_gossip_expectation(&p, 0.1, 1.0, &t).unwrap();
        let want = [[0.91, 0.09], [0.09, 0.91]];
        for i in 0..2 {
            for m in 0..2 {
                assert!((y.y[(i, m)] - want[i][m]).abs() < 1e-12);
            }
        }
        assert!((second_largest_eigenvalue(&y).unwrap() - 0.82).abs() < 1e-12);
        let y0 = build_gossip_expectation(&p, 0.1, 0.0, &t).unwrap();
        assert_eq!(y0.y, Matrix::identity(2));
    }

    #[test]
    fn zero_probability_edge() {
        let t = Topology::fully_connected(3).unwrap();
        let p = Matrix::from_rows(vec![vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]]).unwrap();
        let p = PolicyMatrix::new(p, &t).unwrap();
        assert_eq!(build_gossip_expectation(&p, 0.1, 1.0, &t), Err(PolicyError::ZeroProbabilityEdge(0, 2)));
    }

    #[test]
    fn convergence_time_examples() {
        let v = convergence_time(1.0, 0.82, 0.01).unwrap();
        assert!((v - 23.20558529781804).abs() < 1e-10);
        assert!(convergence_time(1.0, 1e-300, 0.01).unwrap() < 0.01);
        assert!((convergence_time(1.0, 0.3, 0.3).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(convergence_time(1.0, 1.0, 0.01), Err(PolicyError::DegenerateLambda(1.0)));
        assert_eq!(convergence_time(1.0, 0.0, 0.01), Err(PolicyError::DegenerateLambda(0.0)));
    }

    #[test]
    fn grid_search_two_node() {
        let (t, times) = two_node();
        let s = PolicySearch { outer_rounds: 8, inner_rounds: 8, ..Default::default() };
        let r = generate_policy_matrix(&s, &times, &t).unwrap();
        assert!(r.lambda2 > 0.0 && r.lambda2 < 1.0);
        let fine = generate_policy_matrix(&PolicySearch { outer_rounds: 64, inner_rounds: 64, ..s }, &times, &t).unwrap();
        assert!((r.t_convergence - fine.t_convergence).abs() <= 0.05 * fine.t_convergence);
    }

    #[test]
    fn grid_search_infeasible() {
        let (t, times) = two_node();
        let s = PolicySearch { outer_rounds: 1, ..Default::default() };
        // rho = 5 makes L = U = 0.5 and the only point needs p_12 = 1 < 2 alpha rho
        assert_eq!(generate_policy_matrix(&s, &times, &t), Err(PolicyError::NoFeasiblePolicy));
    }

    #[test]
    fn homogeneous_is_uniform() {
        let t = Topology::fully_connected(4).unwrap();
        let times = Matrix::from_fn(4, 4, |i, m| if i == m { 0.0 } else { 1.0 });
        let r = generate_policy_matrix(&PolicySearch::default(), &times, &t).unwrap();
        assert!(r.policy.off_diagonal_spread(&t) <= 1e-6);
    }

    #[test]
    fn feasibility_report() {
        let t = Topology::fully_connected(3).unwrap();
        let times = Matrix::from_fn(3, 3, |i, m| if i == m { 0.0 } else { 1.0 });
        let u = PolicyMatrix::uniform(&t);
        assert!(check_feasibility(&u, 0.1, 1.0, &times, &t, DEFAULT_MARGIN).all_passed());
        let bad = Matrix::from_rows(vec![vec![0.0, 0.5, 0.4], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]]).unwrap();
        let rep = check_feasibility(&PolicyMatrix::from_matrix_unchecked(bad), 0.1, 1.0, &times, &t, DEFAULT_MARGIN);
        assert!(!rep.row_stochastic.passed);
        assert!((rep.row_stochastic.worst_violation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn selection_probability_examples() {
        assert_eq!(selection_probabilities_from_times(&[1.0, 3.0]).unwrap(), vec![0.75, 0.25]);
        assert_eq!(selection_probabilities_from_times(&[0.0]).unwrap(), vec![1.0]);
        assert_eq!(selection_probabilities_from_times(&[1.0, 0.0]), Err(PolicyError::ZeroIterationTime(1)));
        let (t, times) = two_node();
        let p = solve_policy_lp(0.1, 1.0, 0.2, &times, &t, DEFAULT_MARGIN).unwrap();
        let ps = expected_selection_probabilities(&p, &times, &t).unwrap();
        assert!(ps.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn approximation_bound() {
        let v = approximation_ratio_bound(5, 0.1, 2.0, 1.0).unwrap();
        assert!((v / 123_227.012_611_466_88 - 1.0).abs() < 1e-9);
        let w = approximation_ratio_bound(5, 0.1, 1.0, 1.0).unwrap();
        assert!((2.0 * w - v).abs() < 1e-9 * v);
        let z = approximation_ratio_bound(4, 0.25, 1.0, 1.0).unwrap();
        assert!(z.is_finite() && z > 0.0);
        assert_eq!(approximation_ratio_bound(3, 0.1, 1.0, 1.0), Err(PolicyError::InvalidM(3)));
        assert_eq!(approximation_ratio_bound(5, 1.0, 1.0, 1.0), Err(PolicyError::InvalidA(1.0)));
    }
}
