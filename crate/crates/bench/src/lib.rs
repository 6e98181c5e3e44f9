//! Shared benchmark fixtures.

use netmax_core::config::{ExperimentConfig, StopSpec, TopologySpec};
use netmax_core::linalg::Matrix;
use netmax_core::network::Topology;

/// Fully connected heterogeneous instance with `nodes` workers: the
/// canonical preset resized, materialized at seed 0.
pub fn heterogeneous_instance(nodes: usize) -> (Topology, Matrix) {
    let mut cfg = ExperimentConfig::canonical_heterogeneous();
    cfg.topology = TopologySpec::FullyConnected { nodes };
    let env = cfg.environment(0).expect("preset builds");
    (env.links.topology().clone(), env.links.base_iteration_times())
}

/// Canonical heterogeneous config capped at `max_time` seconds of simulated time.
pub fn short_run_config(max_time: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::canonical_heterogeneous();
    cfg.stop = StopSpec { max_time: Some(max_time), max_steps: None, target_epsilon: None };
    cfg
}
