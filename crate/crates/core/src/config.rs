//! Experiment configuration document, validation, overrides and the
//! construction of the simulated environment.

use crate::consensus::{ModelVector, NoiseKind, QuadraticLoss};
use crate::linalg::Matrix;
use crate::network::{LinkTimeModel, NetworkError, SlowdownEvent, SlowdownRegime, Topology};
use crate::policy::{PolicySearch, DEFAULT_MARGIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;
use thiserror::Error;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// RNG streams split from the run seed; workers use streams 0..M.
pub const STREAM_INIT: u64 = 1 << 32;
pub const STREAM_LOSS: u64 = (1 << 32) + 1;
pub const STREAM_SLOWDOWN: u64 = (1 << 32) + 2;
pub const STREAM_COMM: u64 = (1 << 32) + 3;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

impl ConfigError {
    fn invalid(msg: impl Into<String>) -> Self {
        ConfigError::Invalid(vec![msg.into()])
    }
}

impl From<serde_json::Error> for ConfigError {
    fn from(e: serde_json::Error) -> Self {
        ConfigError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Netmax,
    #[serde(alias = "uniform-async")]
    UniformAsync,
    #[serde(alias = "sync-allreduce")]
    SyncAllreduce,
    #[serde(alias = "uniform-async-with-monitor")]
    UniformAsyncWithMonitor,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Netmax => "netmax",
            Protocol::UniformAsync => "uniform_async",
            Protocol::SyncAllreduce => "sync_allreduce",
            Protocol::UniformAsyncWithMonitor => "uniform_async_with_monitor",
        }
    }

    pub fn uses_monitor(&self) -> bool {
        matches!(self, Protocol::Netmax | Protocol::UniformAsyncWithMonitor)
    }
}

impl std::str::FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(Value::String(s.to_string())).map_err(|_| {
            format!("unknown protocol `{s}` (netmax, uniform_async, sync_allreduce, uniform_async_with_monitor)")
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    FullyConnected { nodes: usize },
    Ring { nodes: usize },
    Explicit { adjacency: Vec<Vec<u8>> },
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology, NetworkError> {
        match self {
            TopologySpec::FullyConnected { nodes } => Topology::fully_connected(*nodes),
            TopologySpec::Ring { nodes } => Topology::ring(*nodes),
            TopologySpec::Explicit { adjacency } => Topology::from_adjacency(adjacency.clone()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TopologySpec::FullyConnected { nodes } | TopologySpec::Ring { nodes } => *nodes,
            TopologySpec::Explicit { adjacency } => adjacency.len(),
        }
    }
}

/// A scalar shared by all nodes or one value per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerNode {
    Uniform(f64),
    Values(Vec<f64>),
}

impl PerNode {
    pub fn expand(&self, n: usize) -> Result<Vec<f64>, ConfigError> {
        match self {
            PerNode::Uniform(v) => Ok(vec![*v; n]),
            PerNode::Values(v) if v.len() == n => Ok(v.clone()),
            PerNode::Values(v) => Err(ConfigError::invalid(format!("{} per-node values for {n} nodes", v.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommSpec {
    Uniform { value: f64 },
    Matrix { values: Matrix },
    /// symmetric, uniform in [low, high] per link
    Random {
        low: f64,
        high: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkTimesSpec {
    pub compute: PerNode,
    pub comm: CommSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SlowdownSpec {
    None,
    Rotating {
        #[serde(default = "default_factor_min")]
        factor_min: f64,
        #[serde(default = "default_factor_max")]
        factor_max: f64,
        rotation_interval: f64,
        #[serde(default)]
        start_time: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Events { events: Vec<SlowdownEvent> },
}

fn default_factor_min() -> f64 {
    2.0
}

fn default_factor_max() -> f64 {
    100.0
}

impl SlowdownSpec {
    pub fn regime(&self) -> Option<SlowdownRegime> {
        match *self {
            SlowdownSpec::Rotating { factor_min, factor_max, rotation_interval, start_time, .. } => {
                Some(SlowdownRegime { factor_min, factor_max, rotation_interval, start_time })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curvature {
    /// diag(linspace(mu, lips, dim)), shared by every node
    Linspace,
    /// an independent random SPD matrix per node with spectrum in [mu, lips]
    RandomSpd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossNodes {
    /// per-node diagonal A_i and centers b_i; a single row is shared by all nodes
    Diagonal { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
    Generated {
        mu: f64,
        lips: f64,
        #[serde(default = "default_curvature")]
        curvature: Curvature,
        /// b_i ~ N(0, center_scale^2) per coordinate
        center_scale: f64,
        /// all nodes share one center
        #[serde(default)]
        identical: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

fn default_curvature() -> Curvature {
    Curvature::Linspace
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    pub dim: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub noise: NoiseKind,
    pub nodes: LossNodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Common { value: f64 },
    /// x_i = x* + scale * N(0, I)
    Random { scale: f64 },
    Explicit { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSpec {
    #[serde(default)]
    pub max_time: Option<f64>,
    #[serde(default)]
    pub max_steps: Option<u64>,
    /// stop once deviation <= target * deviation(0)
    #[serde(default)]
    pub target_epsilon: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotMode {
    /// read the neighbor's model when the iteration completes
    #[default]
    Completion,
    /// read it when the iteration starts (stale pull)
    Start,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub topology: TopologySpec,
    pub link_times: LinkTimesSpec,
    #[serde(default = "default_slowdown")]
    pub slowdown: SlowdownSpec,
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// coupling weight before the first policy arrives; default 1/(4 alpha max_degree)
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_monitor_period")]
    pub monitor_period: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_rounds")]
    pub outer_rounds: usize,
    #[serde(default = "default_rounds")]
    pub inner_rounds: usize,
    #[serde(default = "default_margin")]
    pub lp_margin: f64,
    pub loss: LossSpec,
    pub init: InitSpec,
    pub stop: StopSpec,
    #[serde(default = "default_report_epsilons")]
    pub report_epsilons: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// seed sweep for `compare`; empty means just `seed`
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// protocols for `compare`; the first is the reference
    #[serde(default)]
    pub protocols: Vec<Protocol>,
    #[serde(default)]
    pub snapshot: SnapshotMode,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_slowdown() -> SlowdownSpec {
    SlowdownSpec::None
}
fn default_protocol() -> Protocol {
    Protocol::Netmax
}
fn default_alpha() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    0.9
}
fn default_monitor_period() -> f64 {
    5.0
}
fn default_epsilon() -> f64 {
    0.01
}
fn default_rounds() -> usize {
    16
}
fn default_margin() -> f64 {
    DEFAULT_MARGIN
}
fn default_report_epsilons() -> Vec<f64> {
    vec![0.1, 0.01, 0.001]
}

/// Everything a run needs, materialized from a config and a seed.
#[derive(Debug, Clone)]
pub struct Environment {
    pub links: LinkTimeModel,
    pub losses: Vec<QuadraticLoss>,
    pub initial_models: Vec<ModelVector>,
}

/// Per-purpose generator split from the run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn policy_search(&self) -> PolicySearch {
        PolicySearch {
            alpha: self.alpha,
            outer_rounds: self.outer_rounds,
            inner_rounds: self.inner_rounds,
            epsilon: self.epsilon,
            margin: self.lp_margin,
        }
    }

    pub fn sweep_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Applies `key.path=value` overrides; the value is parsed as JSON and
    /// taken as a plain string if that fails.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| ConfigError::Override(raw.into(), "expected key=value".into()))?;
            let value: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
            set_path(&mut doc, key.trim(), value).map_err(|e| ConfigError::Override(raw.into(), e))?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(doc).map_err(|e| ConfigError::Override("(combined)".into(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Single validation pass; reports every problem found.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            errs.push(format!("schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})", self.schema_version));
        }
        let topology = match self.topology.build() {
            Ok(t) => Some(t),
            Err(e) => {
                errs.push(format!("topology: {e}"));
                None
            }
        };
        let n = self.topology.node_count();
        if n == 0 {
            errs.push("topology needs at least one node".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            errs.push(format!("alpha must be positive, got {}", self.alpha));
        }
        if let Some(rho) = self.rho {
            if !(rho >= 0.0 && rho < 0.5 / self.alpha) {
                errs.push(format!("rho must lie in [0, 0.5/alpha), got {rho}"));
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            errs.push(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.monitor_period > 0.0 && self.monitor_period.is_finite()) {
            errs.push("monitor_period must be positive".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            errs.push("epsilon must lie in (0, 1)".into());
        }
        if self.outer_rounds == 0 || self.inner_rounds == 0 {
            errs.push("outer_rounds and inner_rounds must be at least 1".into());
        }
        if !self.lp_margin.is_finite() {
            errs.push("lp_margin must be finite".into());
        }
        if self.report_epsilons.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            errs.push("report_epsilons must lie in (0, 1]".into());
        }
        if self.stop.max_time.is_none() && self.stop.max_steps.is_none() {
            errs.push("stop needs max_time or max_steps".into());
        }
        if let Some(t) = self.stop.max_time {
            if !(t >= 0.0 && t.is_finite()) {
                errs.push("stop.max_time must be non-negative".into());
            }
        }
        if let Some(e) = self.stop.target_epsilon {
            if !(e > 0.0 && e < 1.0) {
                errs.push("stop.target_epsilon must lie in (0, 1)".into());
            }
        }
        if self.loss.dim == 0 {
            errs.push("loss.dim must be positive".into());
        }
        if !(self.loss.sigma >= 0.0 && self.loss.sigma.is_finite()) {
            errs.push("loss.sigma must be non-negative".into());
        }
        match &self.loss.nodes {
            LossNodes::Diagonal { a, b } => {
                for (name, rows) in [("a", a), ("b", b)] {
                    if !(rows.len() == 1 || rows.len() == n) {
                        errs.push(format!("loss.nodes.{name} needs 1 or {n} rows"));
                    }
                    if rows.iter().any(|r| r.len() != self.loss.dim) {
                        errs.push(format!("loss.nodes.{name} rows must have {} entries", self.loss.dim));
                    }
                }
                if a.iter().flatten().any(|v| !(*v > 0.0)) {
                    errs.push("loss.nodes.a entries must be positive".into());
                }
            }
            LossNodes::Generated { mu, lips, center_scale, .. } => {
                if !(*mu > 0.0 && lips >= mu && lips.is_finite()) {
                    errs.push("loss.nodes needs 0 < mu <= lips".into());
                }
                if !(*center_scale >= 0.0) {
                    errs.push("loss.nodes.center_scale must be non-negative".into());
                }
            }
        }
        if let InitSpec::Explicit { values } = &self.init {
            if values.len() != n || values.iter().any(|r| r.len() != self.loss.dim) {
                errs.push(format!("init.values must be {n} rows of {} entries", self.loss.dim));
            }
        }
        match &self.link_times.compute {
            PerNode::Uniform(c) if !(*c > 0.0) => errs.push("compute time must be positive".into()),
            PerNode::Values(v) if v.len() != n || v.iter().any(|c| !(*c > 0.0)) => {
                errs.push(format!("compute times must be {n} positive values"))
            }
            _ => {}
        }
        match &self.link_times.comm {
            CommSpec::Uniform { value } if !(*value > 0.0) => errs.push("comm time must be positive".into()),
            CommSpec::Random { low, high, .. } if !(*low > 0.0 && high >= low) => {
                errs.push("comm random range needs 0 < low <= high".into())
            }
            _ => {}
        }
        if let Some(regime) = self.slowdown.regime() {
            if let Err(e) = regime.validate() {
                errs.push(e.to_string());
            }
        }
        if errs.is_empty() {
            if let Some(t) = &topology {
                if let Err(e) = self.link_model_for_seed(t, self.seed) {
                    errs.push(e.to_string());
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    fn link_model_for_seed(&self, topology: &Topology, seed: u64) -> Result<LinkTimeModel, ConfigError> {
        let n = topology.node_count();
        let compute = self.link_times.compute.expand(n)?;
        let comm = match &self.link_times.comm {
            CommSpec::Uniform { value } => Matrix::filled(n, n, *value),
            CommSpec::Matrix { values } => values.clone(),
            CommSpec::Random { low, high, seed: s } => {
                let mut rng = match s {
                    Some(s) => ChaCha8Rng::seed_from_u64(*s),
                    None => stream_rng(seed, STREAM_COMM),
                };
                let mut m = Matrix::zeros(n, n);
                for e in topology.edges() {
                    let v = if high > low { rng.random_range(*low..=*high) } else { *low };
                    m[(e.a, e.b)] = v;
                    m[(e.b, e.a)] = v;
                }
                m
            }
        };
        let schedule = match &self.slowdown {
            SlowdownSpec::None => Vec::new(),
            SlowdownSpec::Events { events } => events.clone(),
            SlowdownSpec::Rotating { seed: s, .. } => {
                let regime = self.slowdown.regime().expect("rotating slowdown");
                let horizon = self.stop.max_time.unwrap_or(regime.rotation_interval * 10_000.0);
                regime.generate(topology, horizon, s.unwrap_or_else(|| stream_seed(seed, STREAM_SLOWDOWN)))?
            }
        };
        Ok(LinkTimeModel::new(topology.clone(), compute, comm, schedule)?)
    }

    /// Builds links, losses and initial models for one seed.
    pub fn environment(&self, seed: u64) -> Result<Environment, ConfigError> {
        let topology = self.topology.build()?;
        let n = topology.node_count();
        let links = self.link_model_for_seed(&topology, seed)?;
        let dim = self.loss.dim;
        let sigma = self.loss.sigma;
        let bad = |e: crate::consensus::ConsensusError| ConfigError::invalid(format!("loss: {e}"));
        let losses: Vec<QuadraticLoss> = match &self.loss.nodes {
            LossNodes::Diagonal { a, b } => (0..n)
                .map(|i| {
                    let ai = if a.len() == 1 { &a[0] } else { &a[i] };
                    let bi = if b.len() == 1 { &b[0] } else { &b[i] };
                    QuadraticLoss::diagonal(ai.clone(), bi.clone(), sigma)
                })
                .collect::<Result<_, _>>()
                .map_err(bad)?,
            LossNodes::Generated { mu, lips, curvature, center_scale, identical, seed: s } => {
                let mut rng = match s {
                    Some(s) => ChaCha8Rng::seed_from_u64(*s),
                    None => stream_rng(seed, STREAM_LOSS),
                };
                let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n);
                for i in 0..n {
                    if *identical && i > 0 {
                        centers.push(centers[0].clone());
                    } else {
                        centers.push(gaussian_vec(dim, *center_scale, &mut rng));
                    }
                }
                let linspace: Vec<f64> = (0..dim)
                    .map(|k| if dim == 1 { *mu } else { mu + (lips - mu) * k as f64 / (dim - 1) as f64 })
                    .collect();
                let mut out: Vec<QuadraticLoss> = Vec::with_capacity(n);
                for (i, b) in centers.into_iter().enumerate() {
                    let loss = match curvature {
                        Curvature::Linspace => QuadraticLoss::diagonal(linspace.clone(), b, sigma),
                        Curvature::RandomSpd if *identical && i > 0 => QuadraticLoss::dense(out[0].a().clone(), b, sigma),
                        Curvature::RandomSpd => QuadraticLoss::random_spd(dim, *mu, *lips, b, sigma, &mut rng),
                    }
                    .map_err(bad)?;
                    out.push(loss);
                }
                out
            }
        };
        let losses: Vec<QuadraticLoss> = losses.into_iter().map(|l| l.with_noise(self.loss.noise)).collect();
        let initial_models = match &self.init {
            InitSpec::Common { value } => vec![ModelVector::filled(dim, *value); n],
            InitSpec::Explicit { values } => values.iter().cloned().map(ModelVector).collect(),
            InitSpec::Random { scale } => {
                let xs = crate::consensus::optimum_oracle(&losses).map_err(bad)?;
                let mut rng = stream_rng(seed, STREAM_INIT);
                (0..n)
                    .map(|_| {
                        let d = gaussian_vec(dim, *scale, &mut rng);
                        ModelVector(xs.0.iter().zip(d).map(|(a, b)| a + b).collect())
                    })
                    .collect()
            }
        };
        Ok(Environment { links, losses, initial_models })
    }

    /// Heterogeneous comparison setup: 8 fully connected nodes, unit
    /// compute and link times, one link at a time slowed 10x, rotating
    /// every 20 simulated seconds.
    pub fn canonical_heterogeneous() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            topology: TopologySpec::FullyConnected { nodes: 8 },
            link_times: LinkTimesSpec { compute: PerNode::Uniform(1.0), comm: CommSpec::Uniform { value: 1.0 } },
            slowdown: SlowdownSpec::Rotating {
                factor_min: 10.0,
                factor_max: 10.0,
                rotation_interval: 20.0,
                start_time: 0.0,
                seed: None,
            },
            protocol: Protocol::Netmax,
            alpha: 0.1,
            rho: None,
            beta: 0.5,
            monitor_period: 5.0,
            epsilon: 0.01,
            outer_rounds: 32,
            inner_rounds: 16,
            lp_margin: DEFAULT_MARGIN,
            loss: LossSpec {
                dim: 4,
                sigma: 0.01,
                noise: NoiseKind::Gaussian,
                nodes: LossNodes::Generated {
                    mu: 1.0,
                    lips: 2.0,
                    curvature: Curvature::Linspace,
                    center_scale: 0.5,
                    identical: false,
                    seed: None,
                },
            },
            init: InitSpec::Common { value: 5.0 },
            stop: StopSpec { max_time: Some(1000.0), max_steps: None, target_epsilon: Some(0.01) },
            report_epsilons: vec![0.1, 0.01],
            seed: 0,
            seeds: (0..20).collect(),
            protocols: vec![Protocol::Netmax, Protocol::UniformAsync, Protocol::SyncAllreduce],
            snapshot: SnapshotMode::Completion,
            output_dir: None,
        }
    }

    /// Same as the heterogeneous setup with every link at its base time.
    pub fn canonical_homogeneous() -> Self {
        ExperimentConfig {
            slowdown: SlowdownSpec::None,
            outer_rounds: 16,
            protocols: vec![Protocol::Netmax, Protocol::UniformAsync],
            ..Self::canonical_heterogeneous()
        }
    }
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    stream_rng(seed, stream).random()
}

fn gaussian_vec<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let last = k + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| format!("`{part}` is not an array index"))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| format!("index {idx} out of range ({len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("`{part}` does not address an object field")),
        };
    }
    Err("empty key".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [ExperimentConfig::canonical_heterogeneous(), ExperimentConfig::canonical_homogeneous()] {
            cfg.validate().unwrap();
            let text = cfg.to_json_pretty();
            let back = ExperimentConfig::from_json_str(&text).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn defaults_materialize() {
        let text = r#"{
            "topology": {"kind": "ring", "nodes": 4},
            "link_times": {"compute": 0.2, "comm": {"kind": "uniform", "value": 1.0}},
            "loss": {"dim": 2, "nodes": {"kind": "diagonal", "a": [[1.0, 1.0]], "b": [[0.0, 0.0]]}},
            "init": {"kind": "common", "value": 1.0},
            "stop": {"max_steps": 10}
        }"#;
        let cfg = ExperimentConfig::from_json_str(text).unwrap();
        assert_eq!((cfg.alpha, cfg.beta, cfg.epsilon, cfg.outer_rounds, cfg.inner_rounds), (0.1, 0.9, 0.01, 16, 16));
        assert_eq!(cfg.lp_margin, 1e-6);
        let v: Value = serde_json::from_str(&cfg.to_json_pretty()).unwrap();
        assert_eq!(v["beta"], 0.9);
        assert_eq!(v["schema_version"], 1);
    }

    #[test]
    fn parse_error_has_location() {
        let err = ExperimentConfig::from_json_str("{\n  \"topology\": [,\n}").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn validation_collects_errors() {
        let mut cfg = ExperimentConfig::canonical_homogeneous();
        cfg.alpha = -1.0;
        cfg.beta = 2.0;
        match cfg.validate() {
            Err(ConfigError::Invalid(v)) => assert!(v.len() >= 2, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides() {
        let cfg = ExperimentConfig::canonical_homogeneous();
        let o = cfg.with_overrides(&["seed=7", "loss.sigma=0.5", "protocol=uniform_async", "topology.nodes=4"]).unwrap();
        assert_eq!(o.seed, 7);
        assert_eq!(o.loss.sigma, 0.5);
        assert_eq!(o.protocol, Protocol::UniformAsync);
        assert_eq!(o.topology.node_count(), 4);
        assert!(cfg.with_overrides(&["alpha"]).is_err());
        assert!(cfg.with_overrides(&["alpha=-3"]).is_err());
    }

    #[test]
    fn environment_is_seeded() {
        let cfg = ExperimentConfig::canonical_heterogeneous();
        let a = cfg.environment(3).unwrap();
        let b = cfg.environment(3).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.links, b.links);
        let c = cfg.environment(4).unwrap();
        assert_ne!(a.losses, c.losses);
        assert_eq!(a.links.schedule().len(), 51);
        assert!(a.links.schedule().iter().all(|e| e.factor == 10.0));
    }

    #[test]
    fn protocol_names() {
        assert_eq!("uniform-async".parse::<Protocol>().unwrap(), Protocol::UniformAsync);
        assert_eq!("netmax".parse::<Protocol>().unwrap(), Protocol::Netmax);
        assert!("gossip".parse::<Protocol>().is_err());
    }
}
