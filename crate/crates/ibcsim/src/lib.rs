//! Deterministic discrete-event simulator and benchmark harness for
//! cross-chain token transfers over an IBC-style channel between two
//! Tendermint-like chains, relayed by one or more uncoordinated relayers.
//!
//! The model reproduces the characteristic performance behavior of this
//! stack at desk scale: the serialized RPC server that dominates transfer
//! latency, batch-wise relayer pipelines, account-sequence submission
//! limits, block event-stream overflow, and the throughput collapse of
//! redundant multi-relayer delivery.

pub mod analysis;
pub mod chain;
pub mod config;
pub mod engine;
pub mod ibc;
pub mod presets;
pub mod relayer;
pub mod rpc;
pub mod runner;
pub mod sim;
pub mod workload;

pub use analysis::{build_lifecycles, classify, latency_breakdown, throughput, StatusClass};
pub use config::{Scenario, SweepAxis, SweepSpec, WorkloadShape};
pub use engine::SimTime;
pub use runner::{build_report, run_sweep, run_to_dir, sweep_to_dir, Report};
pub use sim::{run_scenario, RunResult, World};
