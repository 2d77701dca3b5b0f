//! Reference scenarios for the calibrated defaults: the latency-breakdown
//! burst, submission-spread sweep, relayer throughput curves, the
//! commit-only rate sweep and the event-stream overflow case.
//!
//! These are the configurations the shipped defaults were fitted against
//! (`ibcsim calibrate` re-runs them and prints achieved-vs-target numbers).

use crate::config::{Scenario, WorkloadShape};

/// 5,000 transfers submitted within one block, one relayer, 200 ms RTT to
/// the remote chain.
pub fn breakdown_burst() -> Scenario {
    let mut sc = Scenario::default();
    sc.name = "breakdown-5000x1".into();
    sc.workload.shape = WorkloadShape::Spread { total_transfers: 5_000, spread_blocks: 1 };
    sc.workload.duration_blocks = 1;
    sc.horizon_blocks = 130;
    sc
}

/// The same 5,000 transfers spread over `blocks` windows.
pub fn spread_burst(blocks: u64) -> Scenario {
    let mut sc = breakdown_burst();
    sc.name = format!("spread-{blocks}");
    sc.workload.shape =
        WorkloadShape::Spread { total_transfers: 5_000, spread_blocks: blocks };
    sc.horizon_blocks = blocks + 100;
    sc
}

/// Continuous-rate scenario measured over a 50-block window.
pub fn relayer_throughput(rate_rps: u64, dest_rtt_ms: u64, relayers: u32) -> Scenario {
    let mut sc = Scenario::default();
    sc.name = format!("tput-{rate_rps}rps-{dest_rtt_ms}ms-{relayers}r");
    sc.workload.shape = WorkloadShape::Rate { input_rate_rps: rate_rps };
    sc.workload.duration_blocks = 50;
    sc.horizon_blocks = 50;
    sc.network.dest_rtt_ms = dest_rtt_ms;
    sc.relayer_count = relayers;
    sc
}

/// Transfer-commit-only sweep point: no relayers, 15 submission windows,
/// generous drain so everything that reached the mempool can commit.
pub fn commit_only(rate_rps: u64) -> Scenario {
    let mut sc = Scenario::default();
    sc.name = format!("commit-{rate_rps}rps");
    sc.workload.shape = WorkloadShape::Rate { input_rate_rps: rate_rps };
    sc.workload.duration_blocks = 15;
    sc.relayer_count = 0;
    sc.horizon_blocks = 15;
    sc.drain_blocks = 60;
    sc
}

/// The event-stream overflow scenario: one block of 1,000 transactions with
/// 100 transfers each, then trailing single-transfer submissions.
pub fn overflow_block(clear_interval_blocks: u64) -> Scenario {
    let mut sc = Scenario::default();
    sc.name = format!("overflow-clear{clear_interval_blocks}");
    sc.workload.shape = WorkloadShape::Spread { total_transfers: 100_000, spread_blocks: 1 };
    sc.workload.duration_blocks = 1;
    sc.workload.trailing_singles = 10;
    sc.workload.trailing_gap_blocks = 3;
    sc.source_chain.block_max_msgs = 120_000;
    sc.source_chain.mempool_max_msgs = 120_000;
    sc.dest_chain.block_max_msgs = 120_000;
    sc.dest_chain.mempool_max_msgs = 120_000;
    // shortened timeout so 4x the timeout horizon stays desk-sized
    sc.channel.timeout_offset_blocks = 60;
    sc.relayer.clear_interval_blocks = clear_interval_blocks;
    sc.relayer.clear_batch_max_msgs = 20_000;
    sc.horizon_blocks = 240;
    sc
}
