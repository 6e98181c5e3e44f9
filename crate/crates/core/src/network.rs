//! Worker graph and the (time-varying) link timing environment.

use crate::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("graph is disconnected (node {0} unreachable from node 0)")]
    DisconnectedGraph(usize),
    #[error("adjacency is asymmetric at ({0}, {1})")]
    AsymmetricAdjacency(usize, usize),
    #[error("self loop at node {0}")]
    SelfLoopPresent(usize),
    #[error("({0}, {1}) is not an edge of the topology")]
    UnknownEdge(usize, usize),
    #[error("adjacency must be a non-empty square 0/1 matrix: {0}")]
    MalformedAdjacency(String),
    #[error("invalid link times: {0}")]
    InvalidTimes(String),
    #[error("invalid slowdown schedule: {0}")]
    InvalidSchedule(String),
}

/// Undirected, connected worker graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<u8>>", into = "Vec<Vec<u8>>")]
pub struct Topology {
    n: usize,
    adj: Vec<bool>,
}

/// Checks a raw 0/1 adjacency matrix: symmetric, zero diagonal, connected.
pub fn validate_topology(adjacency: &[Vec<u8>]) -> Result<(), NetworkError> {
    let n = adjacency.len();
    if n == 0 {
        return Err(NetworkError::MalformedAdjacency("no nodes".into()));
    }
    for (i, row) in adjacency.iter().enumerate() {
        if row.len() != n {
            return Err(NetworkError::MalformedAdjacency(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        if let Some(v) = row.iter().find(|&&v| v > 1) {
            return Err(NetworkError::MalformedAdjacency(format!("entry {v} in row {i} is not 0/1")));
        }
    }
    for i in 0..n {
        if adjacency[i][i] != 0 {
            return Err(NetworkError::SelfLoopPresent(i));
        }
        for m in (i + 1)..n {
            if adjacency[i][m] != adjacency[m][i] {
                return Err(NetworkError::AsymmetricAdjacency(i, m));
            }
        }
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for m in 0..n {
            if adjacency[i][m] == 1 && !seen[m] {
                seen[m] = true;
                queue.push_back(m);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(NetworkError::DisconnectedGraph(i)),
        None => Ok(()),
    }
}

impl Topology {
    pub fn from_adjacency(adjacency: Vec<Vec<u8>>) -> Result<Self, NetworkError> {
        validate_topology(&adjacency)?;
        let n = adjacency.len();
        let adj = adjacency.into_iter().flatten().map(|v| v == 1).collect();
        Ok(Topology { n, adj })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, NetworkError> {
        let mut a = vec![vec![0u8; n]; n];
        for &(i, m) in edges {
            if i >= n || m >= n {
                return Err(NetworkError::MalformedAdjacency(format!("edge ({i}, {m}) out of range")));
            }
            a[i][m] = 1;
            a[m][i] = 1;
        }
        Self::from_adjacency(a)
    }

    pub fn fully_connected(n: usize) -> Result<Self, NetworkError> {
        let edges: Vec<_> = (0..n).flat_map(|i| ((i + 1)..n).map(move |m| (i, m))).collect();
        Self::from_edges(n, &edges)
    }

    pub fn ring(n: usize) -> Result<Self, NetworkError> {
        let edges: Vec<_> = match n {
            0 | 1 => vec![],
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::from_edges(n, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, m: usize) -> bool {
        i < self.n && m < self.n && self.adj[i * self.n + m]
    }

    /// d_{i,m} as a number.
    pub fn d(&self, i: usize, m: usize) -> f64 {
        if self.has_edge(i, m) {
            1.0
        } else {
            0.0
        }
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.n).filter(|&m| self.has_edge(i, m)).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&m| self.has_edge(i, m)).count()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// Undirected edges with `a < b`, in row-major order.
    pub fn edges(&self) -> Vec<Edge> {
        (0..self.n)
            .flat_map(|i| ((i + 1)..self.n).map(move |m| (i, m)))
            .filter(|&(i, m)| self.has_edge(i, m))
            .map(|(i, m)| Edge::new(i, m))
            .collect()
    }

    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        (0..self.n).map(|i| (0..self.n).map(|m| self.has_edge(i, m) as u8).collect()).collect()
    }
}

impl TryFrom<Vec<Vec<u8>>> for Topology {
    type Error = NetworkError;
    fn try_from(a: Vec<Vec<u8>>) -> Result<Self, Self::Error> {
        Topology::from_adjacency(a)
    }
}

impl From<Topology> for Vec<Vec<u8>> {
    fn from(t: Topology) -> Self {
        t.adjacency()
    }
}

/// Undirected link, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Edge {
    pub a: usize,
    pub b: usize,
}

impl Edge {
    pub fn new(i: usize, m: usize) -> Self {
        Edge { a: i.min(m), b: i.max(m) }
    }

    pub fn touches(&self, i: usize, m: usize) -> bool {
        *self == Edge::new(i, m)
    }
}

impl From<(usize, usize)> for Edge {
    fn from((i, m): (usize, usize)) -> Self {
        Edge::new(i, m)
    }
}

impl From<Edge> for (usize, usize) {
    fn from(e: Edge) -> Self {
        (e.a, e.b)
    }
}

/// From `start_time` on, `link` is slowed by `factor` (replacing any
/// earlier assignment). A factor of 1 restores the base times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowdownEvent {
    pub start_time: f64,
    pub link: Edge,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTimeModel {
    topology: Topology,
    compute: Vec<f64>,
    base_comm: Matrix,
    schedule: Vec<SlowdownEvent>,
}

impl LinkTimeModel {
    /// `base_comm` entries off the edge set are ignored and stored as 0.
    pub fn new(
        topology: Topology,
        compute: Vec<f64>,
        base_comm: Matrix,
        schedule: Vec<SlowdownEvent>,
    ) -> Result<Self, NetworkError> {
        let n = topology.node_count();
        if compute.len() != n {
            return Err(NetworkError::InvalidTimes(format!("{} compute times for {n} nodes", compute.len())));
        }
        if let Some(i) = compute.iter().position(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(NetworkError::InvalidTimes(format!("compute time of node {i} must be positive")));
        }
        if base_comm.rows() != n || base_comm.cols() != n {
            return Err(NetworkError::InvalidTimes(format!(
                "comm matrix is {}x{}, expected {n}x{n}",
                base_comm.rows(),
                base_comm.cols()
            )));
        }
        let mut comm = Matrix::zeros(n, n);
        for e in topology.edges() {
            let (x, y) = (base_comm[(e.a, e.b)], base_comm[(e.b, e.a)]);
            if !(x > 0.0 && x.is_finite()) {
                return Err(NetworkError::InvalidTimes(format!("comm time on ({}, {}) must be positive", e.a, e.b)));
            }
            if (x - y).abs() > 1e-12 * x.abs().max(1.0) {
                return Err(NetworkError::InvalidTimes(format!("comm times on ({}, {}) are not symmetric", e.a, e.b)));
            }
            comm[(e.a, e.b)] = x;
            comm[(e.b, e.a)] = x;
        }
        let mut prev = f64::NEG_INFINITY;
        for ev in &schedule {
            if !topology.has_edge(ev.link.a, ev.link.b) {
                return Err(NetworkError::UnknownEdge(ev.link.a, ev.link.b));
            }
            if !(ev.factor >= 1.0 && ev.factor.is_finite()) {
                return Err(NetworkError::InvalidSchedule(format!("factor {} below 1", ev.factor)));
            }
            if !ev.start_time.is_finite() || ev.start_time <= prev {
                return Err(NetworkError::InvalidSchedule("start times must be strictly increasing".into()));
            }
            prev = ev.start_time;
        }
        Ok(LinkTimeModel { topology, compute, base_comm: comm, schedule })
    }

    /// Uniform compute and communication times.
    pub fn homogeneous(topology: Topology, compute: f64, comm: f64) -> Result<Self, NetworkError> {
        let n = topology.node_count();
        Self::new(topology, vec![compute; n], Matrix::filled(n, n, comm), Vec::new())
    }

    pub fn with_schedule(self, schedule: Vec<SlowdownEvent>) -> Result<Self, NetworkError> {
        Self::new(self.topology, self.compute, self.base_comm, schedule)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn compute_times(&self) -> &[f64] {
        &self.compute
    }

    pub fn base_comm(&self) -> &Matrix {
        &self.base_comm
    }

    pub fn schedule(&self) -> &[SlowdownEvent] {
        &self.schedule
    }

    fn active_event(&self, clock: f64) -> Option<&SlowdownEvent> {
        let idx = self.schedule.partition_point(|e| e.start_time <= clock);
        idx.checked_sub(1).map(|k| &self.schedule[k])
    }

    pub fn effective_comm_time(&self, i: usize, m: usize, clock: f64) -> Result<f64, NetworkError> {
        if !self.topology.has_edge(i, m) {
            return Err(NetworkError::UnknownEdge(i, m));
        }
        let base = self.base_comm[(i, m)];
        Ok(match self.active_event(clock) {
            Some(ev) if ev.link.touches(i, m) => base * ev.factor,
            _ => base,
        })
    }

    /// max(C_i, N_im); a self-iteration costs C_i.
    pub fn iteration_time(&self, i: usize, m: usize, clock: f64) -> Result<f64, NetworkError> {
        if i >= self.topology.node_count() {
            return Err(NetworkError::UnknownEdge(i, m));
        }
        if i == m {
            return Ok(self.compute[i]);
        }
        Ok(self.compute[i].max(self.effective_comm_time(i, m, clock)?))
    }

    /// Iteration times at `clock` on edges, 0 elsewhere (including the diagonal).
    pub fn iteration_time_matrix(&self, clock: f64) -> Matrix {
        let n = self.topology.node_count();
        Matrix::from_fn(n, n, |i, m| {
            if self.topology.has_edge(i, m) {
                self.iteration_time(i, m, clock).unwrap_or(0.0)
            } else {
                0.0
            }
        })
    }

    /// Iteration times with no slowdown applied.
    pub fn base_iteration_times(&self) -> Matrix {
        let n = self.topology.node_count();
        Matrix::from_fn(n, n, |i, m| {
            if self.topology.has_edge(i, m) {
                self.compute[i].max(self.base_comm[(i, m)])
            } else {
                0.0
            }
        })
    }
}

/// Rotating single-link slowdown: every `rotation_interval` a uniformly
/// random link is slowed by a factor drawn uniformly from
/// `[factor_min, factor_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowdownRegime {
    #[serde(default = "default_factor_min")]
    pub factor_min: f64,
    #[serde(default = "default_factor_max")]
    pub factor_max: f64,
    pub rotation_interval: f64,
    #[serde(default)]
    pub start_time: f64,
}

fn default_factor_min() -> f64 {
    2.0
}

fn default_factor_max() -> f64 {
    100.0
}

impl SlowdownRegime {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if !(self.factor_min >= 1.0 && self.factor_max >= self.factor_min && self.factor_max.is_finite()) {
            return Err(NetworkError::InvalidSchedule(format!(
                "factor range [{}, {}] must satisfy 1 <= min <= max",
                self.factor_min, self.factor_max
            )));
        }
        if !(self.rotation_interval > 0.0 && self.rotation_interval.is_finite()) {
            return Err(NetworkError::InvalidSchedule("rotation interval must be positive".into()));
        }
        if !(self.start_time >= 0.0 && self.start_time.is_finite()) {
            return Err(NetworkError::InvalidSchedule("start time must be non-negative".into()));
        }
        Ok(())
    }

    /// Events covering `[start_time, horizon]`.
    pub fn generate(&self, topology: &Topology, horizon: f64, seed: u64) -> Result<Vec<SlowdownEvent>, NetworkError> {
        self.validate()?;
        let edges = topology.edges();
        if edges.is_empty() {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        let mut j = 0u64;
        loop {
            let start = self.start_time + j as f64 * self.rotation_interval;
            if start > horizon {
                break;
            }
            let link = edges[rng.random_range(0..edges.len())];
            let factor = if self.factor_max > self.factor_min {
                rng.random_range(self.factor_min..=self.factor_max)
            } else {
                self.factor_min
            };
            out.push(SlowdownEvent { start_time: start, link, factor });
            j += 1;
        }
        Ok(out)
    }
}
