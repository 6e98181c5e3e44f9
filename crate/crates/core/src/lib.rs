//! Simulator and numerical library for decentralized asynchronous
//! consensus SGD with network-aware neighbor selection.

// `!(x > 0.0)` deliberately rejects NaN; index loops mirror the matrix math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod consensus;
pub mod linalg;
pub mod lp;
pub mod metrics;
pub mod network;
pub mod policy;
pub mod sim;
pub mod suite;
