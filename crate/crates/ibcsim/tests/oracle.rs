//! Desk-scale oracle fixtures: exhaustive hand-computed event timelines for
//! tiny scenarios (<= 3 transfers, <= 5 blocks), checked against simulator
//! step timestamps exactly.
//!
//! Every expected value below is derived by hand from the timing rules, not
//! from running the simulator: queries arrive after half an RTT, the RPC
//! server serves FIFO one query at a time, ticks fire every 5,000 ms with
//! zero block overhead, and the worker lane runs
//! extract -> confirm -> pull -> build -> broadcast per block batch.

use ibcsim::chain::TxHash;
use ibcsim::config::{
    BatchDispatch, ChainConfig, ChannelConfig, NetworkConfig, RelayerConfig, Scenario,
    WorkloadShape, WorkloadSpec,
};
use ibcsim::engine::SimTime;
use ibcsim::relayer::{RelayStep, WORKLOAD_ACTOR};
use ibcsim::sim::{run_scenario, RunResult};
use ibcsim::StatusClass;

/// Round-number service times so each hop is hand-computable:
/// broadcast 10 ms, confirm 5 ms, pull 50 ms + 20 ms/msg, proof 5 ms + 1
/// ms/packet; extraction 1 ms/msg, build 1 ms/msg, tx prep 100 ms.
fn oracle_chain() -> ChainConfig {
    let mut c = ChainConfig::default();
    c.min_block_interval_ms = 5_000;
    c.block_base_overhead_ms = 0;
    c.block_per_msg_overhead_us = 0;
    c.rpc.broadcast_base_us = 10_000;
    c.rpc.broadcast_per_msg_us = 0;
    c.rpc.confirm_base_us = 5_000;
    c.rpc.pull_base_us = 50_000;
    c.rpc.pull_per_transfer_msg_us = 20_000;
    c.rpc.pull_per_recv_msg_us = 20_000;
    c.rpc.pull_page_threshold_msgs = 1_000_000; // indexed lookups only
    c.rpc.proof_base_us = 5_000;
    c.rpc.proof_per_packet_us = 1_000;
    c
}

fn oracle_scenario(total_transfers: u64, msgs_per_tx: u64) -> Scenario {
    let mut sc = Scenario::default();
    sc.name = "oracle".into();
    sc.seed = 7;
    sc.horizon_blocks = 5;
    sc.drain_blocks = 0;
    sc.source_chain = oracle_chain();
    sc.dest_chain = oracle_chain();
    sc.channel = ChannelConfig { timeout_offset_blocks: 200, timeout_offset_ms: 0 };
    sc.network = NetworkConfig { source_rtt_ms: 0, dest_rtt_ms: 200 };
    sc.relayer = RelayerConfig {
        max_msgs_per_tx: 100,
        clear_interval_blocks: 0,
        clear_batch_max_msgs: 1_000,
        accounts_per_chain: 4,
        build_per_msg_us: 1_000,
        tx_prep_ms: 100,
        extract_base_us: 0,
        extract_per_msg_us: 1_000,
        batch_dispatch: BatchDispatch::Immediate,
        confirmation_timeout_ms: 30_000,
        stagger_ms: 0,
        task_jitter_percent: 0,
    };
    sc.relayer_count = 1;
    sc.workload = WorkloadSpec {
        shape: WorkloadShape::Spread { total_transfers, spread_blocks: 1 },
        msgs_per_tx,
        num_accounts: 0,
        duration_blocks: 1,
        amount_milli: 1_000,
        denom: "atom".into(),
        poll_period_ms: 1_000,
        confirm_timeout_ms: 60_000,
        trailing_singles: 0,
        trailing_gap_blocks: 0,
    };
    sc.capture_trace = true;
    sc
}

/// Successful step records of one packet, as (step, time_ms), with the
/// transfer broadcast taken from the submission log via the origin tx.
fn steps_of(run: &RunResult, seq: u64) -> Vec<(RelayStep, u64)> {
    let mut out = Vec::new();
    let origin_tx: TxHash = run.packets[(seq - 1) as usize].origin_tx;
    for ev in &run.relay_log {
        if !ev.ok {
            continue;
        }
        if ev.relayer == WORKLOAD_ACTOR
            && ev.step == RelayStep::TransferBroadcast
            && ev.tx_hash == origin_tx
        {
            out.push((RelayStep::TransferBroadcast, ev.time_ms));
        } else if ev.seq == seq && ev.step != RelayStep::TransferBroadcast {
            out.push((ev.step, ev.time_ms));
        }
    }
    out.sort_by_key(|(s, _)| *s as u8);
    out
}

fn assert_exact(run: &RunResult, seq: u64, expected: &[(RelayStep, u64)]) {
    let got = steps_of(run, seq);
    assert_eq!(
        got, expected,
        "packet {seq}: timeline mismatch\n got: {got:?}\nwant: {expected:?}"
    );
}

#[test]
fn single_transfer_timeline_matches_hand_computation() {
    let run = run_scenario(oracle_scenario(1, 100));
    assert_eq!(run.packets.len(), 1);

    // Hand derivation:
    //   t=0      submit tx1; source RPC serves broadcast [0,10] -> accepted
    //   t=5000   source block 2 commits the transfer (zero overhead)
    //   t=5001   extraction of 1 event (1 ms/msg)
    //   t=5006   confirm reply (5 ms service, 0 RTT)
    //   t=5076   data pull reply (50 + 20 ms service)
    //   t=5177   recv build + tx prep done (1 + 100 ms)
    //   t=5387   recv broadcast acked (100 ms out + 10 ms service + 100 back)
    //   t=10000  dest block 3 commits the recv (next dest tick)
    //   t=10101  dest delivery at +100, extraction 1 ms
    //   t=10306  recv confirm (100 + 5 + 100)
    //   t=10576  ack data pull (100 + 70 + 100)
    //   t=10677  ack build + prep (101 ms)
    //   t=10687  ack broadcast on the local source endpoint (10 ms)
    //   t=15000  source block 4 commits the ack
    //   t=15001  extraction; t=15006 ack confirm -> completed
    let expected = [
        (RelayStep::TransferBroadcast, 10),
        (RelayStep::TransferExtraction, 5_001),
        (RelayStep::TransferConfirmation, 5_006),
        (RelayStep::TransferDataPull, 5_076),
        (RelayStep::RecvBuild, 5_177),
        (RelayStep::RecvBroadcast, 5_387),
        (RelayStep::RecvExtraction, 10_101),
        (RelayStep::RecvConfirmation, 10_306),
        (RelayStep::RecvDataPull, 10_576),
        (RelayStep::AckBuild, 10_677),
        (RelayStep::AckBroadcast, 10_687),
        (RelayStep::AckExtraction, 15_001),
        (RelayStep::AckConfirmation, 15_006),
    ];
    assert_exact(&run, 1, &expected);

    // end state: voucher minted, commitment acked, conservation intact
    assert_eq!(run.acked_on_source, 1);
    assert_eq!(run.receipts_on_dest, 1);
    assert_eq!(run.audits[0].escrow_total, 1_000);
    assert_eq!(run.audits[1].voucher_total, 1_000);
    assert_eq!(run.audits[0].open_commitments, 0);

    let set = ibcsim::build_lifecycles(&run);
    assert_eq!(set.lifecycles[0].status, StatusClass::Completed);
}

#[test]
fn two_transfers_one_block_interleave_exactly() {
    // msgs_per_tx = 1 forces two single-message transactions from two
    // accounts; both commit in source block 2.
    let run = run_scenario(oracle_scenario(2, 1));
    assert_eq!(run.packets.len(), 2);

    // Broadcasts serialize at the source RPC: tx1 [0,10], tx2 [10,20].
    // Extraction covers both events (2 ms). Confirm queries serialize:
    // replies at 5007 and 5012. Pulls are per origin transaction:
    // [5012,5082] and [5082,5152]. One recv transaction carries both
    // packets (build 2 ms + prep 100 ms). The ack data pull covers both
    // packets of the recv tx (50 + 40 = 90 ms service).
    let expected_seq1 = [
        (RelayStep::TransferBroadcast, 10),
        (RelayStep::TransferExtraction, 5_002),
        (RelayStep::TransferConfirmation, 5_007),
        (RelayStep::TransferDataPull, 5_082),
        (RelayStep::RecvBuild, 5_254),
        (RelayStep::RecvBroadcast, 5_464),
        (RelayStep::RecvExtraction, 10_102),
        (RelayStep::RecvConfirmation, 10_307),
        (RelayStep::RecvDataPull, 10_597),
        (RelayStep::AckBuild, 10_699),
        (RelayStep::AckBroadcast, 10_709),
        (RelayStep::AckExtraction, 15_002),
        (RelayStep::AckConfirmation, 15_007),
    ];
    let expected_seq2 = [
        (RelayStep::TransferBroadcast, 20),
        (RelayStep::TransferExtraction, 5_002),
        (RelayStep::TransferConfirmation, 5_012),
        (RelayStep::TransferDataPull, 5_152),
        (RelayStep::RecvBuild, 5_254),
        (RelayStep::RecvBroadcast, 5_464),
        (RelayStep::RecvExtraction, 10_102),
        (RelayStep::RecvConfirmation, 10_307),
        (RelayStep::RecvDataPull, 10_597),
        (RelayStep::AckBuild, 10_699),
        (RelayStep::AckBroadcast, 10_709),
        (RelayStep::AckExtraction, 15_002),
        (RelayStep::AckConfirmation, 15_007),
    ];
    assert_exact(&run, 1, &expected_seq1);
    assert_exact(&run, 2, &expected_seq2);

    assert_eq!(run.audits[1].voucher_total, 2_000);
    assert_eq!(run.acked_on_source, 2);
}

#[test]
fn expired_packet_is_refunded_through_the_clear_path() {
    let mut sc = oracle_scenario(1, 100);
    // 4-second timestamp bound: the recv lands in the 10,000 ms dest block
    // and is rejected; clearing at every 2nd source block refunds it.
    sc.channel = ChannelConfig { timeout_offset_blocks: 0, timeout_offset_ms: 4_000 };
    sc.relayer.clear_interval_blocks = 2;
    let run = run_scenario(sc);
    assert_eq!(run.packets.len(), 1);
    let p = &run.packets[0].packet;
    assert_eq!(p.timeout_timestamp.as_millis(), 9_000);
    assert_eq!(p.timeout_height, 0);

    // Same pipeline through recv broadcast as the success fixture. The recv
    // commits at 10,000 but is rejected (block time past 9,000): no receipt.
    // The clear at source height 4 (delivered 15,000) finds the commitment:
    //   15,006 commitment scan reply (5 + 1 ms, 0 RTT)
    //   15,212 receipt scan reply from dest (100 + 6 + 100), view
    //          (height 4, time 15,000) -> expired, undelivered
    //   15,313 timeout build + prep (101 ms)
    //   15,323 timeout broadcast accepted (local, 10 ms)
    //   20,000 source block 5 commits the refund
    //   20,006 extraction (1 ms) + confirm (5 ms) -> closed as timed out
    let steps = steps_of(&run, 1);
    let find = |s: RelayStep| steps.iter().find(|(st, _)| *st == s).map(|(_, t)| *t);
    assert_eq!(find(RelayStep::RecvBroadcast), Some(5_387));
    assert_eq!(find(RelayStep::RecvExtraction), None, "rejected recv records no success");
    assert_eq!(find(RelayStep::TimeoutBuild), Some(15_313));
    assert_eq!(find(RelayStep::TimeoutBroadcast), Some(15_323));
    assert_eq!(find(RelayStep::TimeoutConfirmation), Some(20_006));

    // refund restores the sender exactly; nothing remains escrowed
    assert_eq!(run.audits[0].escrow_total, 0);
    assert_eq!(run.audits[0].refunded_total, 1_000);
    assert_eq!(run.audits[1].voucher_total, 0);
    assert_eq!(run.receipts_on_dest, 0);

    let set = ibcsim::build_lifecycles(&run);
    assert_eq!(set.lifecycles[0].status, StatusClass::TimedOut);
}

#[test]
fn empty_scenario_ticks_to_the_horizon() {
    let mut sc = oracle_scenario(1, 100);
    sc.workload.shape = WorkloadShape::Spread { total_transfers: 1, spread_blocks: 1 };
    sc.relayer_count = 0;
    sc.horizon_blocks = 50;
    // a single transfer committed at 5,000; everything after is empty ticks
    let run = run_scenario(sc);
    // 50 post-genesis blocks at exactly the 5,000 ms interval
    assert_eq!(run.horizon_time, SimTime::from_millis(250_000));
    let src = &run.blocks[0];
    assert_eq!(src.len(), 51);
    assert!(src.iter().skip(2).all(|b| b.interval_ms == 5_000));
}

#[test]
fn same_seed_reproduces_the_trace_byte_for_byte() {
    let a = run_scenario(oracle_scenario(2, 1));
    let b = run_scenario(oracle_scenario(2, 1));
    assert_eq!(a.trace_hash, b.trace_hash);
    assert_eq!(a.trace_text, b.trace_text);
    assert!(a.trace_text.as_ref().unwrap().lines().count() > 50);
}

