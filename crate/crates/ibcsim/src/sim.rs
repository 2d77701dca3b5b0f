//! The simulation world: event dispatch, chain/relayer/workload wiring and
//! the run loop.
//!
//! One `World` is one simulation instance with a single logical clock; it
//! owns all mutable state, so instances can run in parallel threads without
//! sharing anything.

use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chain::{BlockEvents, BlockRecord, Chain, ChainMsg, MsgKind, TxHash};
use crate::config::{ChainId, Scenario, DEST, SOURCE};
use crate::engine::{payload_digest, EventQueue, SimTime, Trace};
use crate::ibc::{conservation_holds, LedgerAudit, Packet, PacketSeq};
use crate::relayer::{RelayErrorCounters, RelayLogEvent, Relayer};
use crate::rpc::{self, RpcQuery, RpcReply};
use crate::workload::{Workload, WorkloadCounters, WorkloadLogEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Issuer {
    Workload,
    Lane { relayer: u32, lane: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subscriber {
    Workload,
    Relayer(u32),
}

#[derive(Debug)]
pub enum Event {
    BlockTick { chain: ChainId },
    BlockCommit { chain: ChainId },
    RpcArrival { chain: ChainId, issuer: Issuer, query: RpcQuery },
    RpcServed { chain: ChainId, issuer: Issuer, query: RpcQuery },
    RpcDelivered { chain: ChainId, issuer: Issuer, reply: RpcReply },
    StreamDeliver { sub: Subscriber, payload: Rc<BlockEvents> },
    LaneWake { relayer: u32, lane: usize },
    WorkloadPoll { slot: u32 },
    ConfirmDeadline { relayer: u32, tx: TxHash },
}

impl Event {
    fn kind_label(&self) -> &'static str {
        match self {
            Event::BlockTick { .. } => "block_tick",
            Event::BlockCommit { .. } => "block_commit",
            Event::RpcArrival { .. } => "rpc_arrival",
            Event::RpcServed { .. } => "rpc_served",
            Event::RpcDelivered { .. } => "rpc_delivered",
            Event::StreamDeliver { .. } => "stream_deliver",
            Event::LaneWake { .. } => "lane_wake",
            Event::WorkloadPoll { .. } => "workload_poll",
            Event::ConfirmDeadline { .. } => "confirm_deadline",
        }
    }
}

/// Everything a committed packet needs downstream: full packet data for
/// recv construction plus the origin transaction for lifecycle assembly.
#[derive(Debug, Clone)]
pub struct PacketInfo {
    pub packet: Packet,
    pub origin_tx: TxHash,
}

/// Shared state handed to component handlers; components live outside so
/// the borrow splits cleanly.
pub struct Core {
    pub queue: EventQueue<Event>,
    pub chains: Vec<Chain>,
    pub packets: Vec<PacketInfo>,
    pub relay_log: Vec<RelayLogEvent>,
    pub workload_log: Vec<WorkloadLogEvent>,
    pub trace: Option<Trace>,
    rng: ChaCha8Rng,
    next_tx: TxHash,
    source_rtt_half: SimTime,
    dest_rtt_half: SimTime,
}

impl Core {
    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn schedule_in(&mut self, delay: SimTime, event: Event) {
        self.queue.schedule_after(delay, event);
    }

    pub fn rtt_half(&self, chain: ChainId) -> SimTime {
        if chain == SOURCE {
            self.source_rtt_half
        } else {
            self.dest_rtt_half
        }
    }

    /// Send a query toward a chain's RPC endpoint; it arrives after half an
    /// RTT and then queues FIFO at the serialized server.
    pub fn issue_query(&mut self, issuer: Issuer, chain: ChainId, query: RpcQuery) {
        let delay = self.rtt_half(chain);
        self.schedule_in(delay, Event::RpcArrival { chain, issuer, query });
    }

    pub fn next_tx_hash(&mut self) -> TxHash {
        self.next_tx += 1;
        self.next_tx
    }

    pub fn log_relay(&mut self, ev: RelayLogEvent) {
        self.relay_log.push(ev);
    }

    pub fn log_workload(&mut self, ev: WorkloadLogEvent) {
        self.workload_log.push(ev);
    }

    pub fn packet(&self, seq: PacketSeq) -> &PacketInfo {
        &self.packets[(seq - 1) as usize]
    }

    pub fn fee_for(&self, chain: ChainId, msgs: &[ChainMsg]) -> u64 {
        self.chains[chain].fee_for(msgs)
    }

    pub fn account_sequence(&self, chain: ChainId, account: u32) -> u64 {
        self.chains[chain].accounts[account as usize].sequence
    }

    /// Apply the configured +/- percent jitter (seeded, deterministic).
    pub fn jitter(&mut self, dur: SimTime, percent: u64) -> SimTime {
        if percent == 0 {
            return dur;
        }
        let factor = 100 - percent + self.rng.random_range(0..=2 * percent);
        SimTime::from_micros(dur.as_micros() * factor / 100)
    }
}

pub struct World {
    pub scenario: Scenario,
    pub core: Core,
    pub relayers: Vec<Relayer>,
    pub workload: Workload,
    horizon_height: u64,
    pub horizon_time: Option<SimTime>,
}

/// Full output of one simulation run; all analysis is computed from this.
pub struct RunResult {
    pub scenario: Scenario,
    pub horizon_time: SimTime,
    pub end_time: SimTime,
    pub relay_log: Vec<RelayLogEvent>,
    pub workload_log: Vec<WorkloadLogEvent>,
    pub workload_counters: WorkloadCounters,
    pub blocks: Vec<Vec<BlockRecord>>,
    pub packets: Vec<PacketInfo>,
    pub audits: Vec<LedgerAudit>,
    pub relayer_errors: Vec<RelayErrorCounters>,
    /// Chain-side truth used by analysis cross-checks.
    pub acked_on_source: u64,
    pub receipts_on_dest: u64,
    pub dest_final_height: u64,
    pub dest_final_time: SimTime,
    pub events_dispatched: u64,
    pub trace_text: Option<String>,
    pub trace_hash: Option<String>,
}

impl World {
    pub fn new(scenario: Scenario) -> Self {
        scenario.validate().expect("scenario validated before World::new");
        let wl_accounts =
            scenario.workload.effective_accounts(scenario.source_chain.min_block_interval_ms);
        let per_relayer = scenario.relayer.accounts_per_chain;
        let n_rel = scenario.relayer_count;

        let src_total = wl_accounts + n_rel * per_relayer;
        let dst_total = 1 + n_rel * per_relayer;
        let mut source = Chain::new(SOURCE, scenario.source_chain.clone(), src_total as usize);
        let dest = Chain::new(DEST, scenario.dest_chain.clone(), dst_total as usize);
        source.timeout_offset_blocks = scenario.channel.timeout_offset_blocks;
        source.timeout_offset_ms = scenario.channel.timeout_offset_ms;

        // Fund workload senders generously enough for the whole schedule.
        let schedule_total = crate::workload::build_schedule(
            &scenario.workload,
            scenario.source_chain.min_block_interval_ms,
        )
        .total_transfers();
        let fund = scenario.workload.amount_milli.saturating_mul(schedule_total.max(1));
        for a in 0..wl_accounts {
            source.fund(a, &scenario.workload.denom, fund);
        }

        let relayers: Vec<Relayer> = (0..n_rel)
            .map(|r| {
                let src_accs: Vec<u32> =
                    (0..per_relayer).map(|k| wl_accounts + r * per_relayer + k).collect();
                let dst_accs: Vec<u32> =
                    (0..per_relayer).map(|k| 1 + r * per_relayer + k).collect();
                Relayer::new(r, scenario.relayer.clone(), src_accs, dst_accs)
            })
            .collect();

        let workload = Workload::new(
            scenario.workload.clone(),
            scenario.source_chain.min_block_interval_ms,
            0,
        );

        let core = Core {
            queue: EventQueue::new(),
            chains: vec![source, dest],
            packets: Vec::new(),
            relay_log: Vec::new(),
            workload_log: Vec::new(),
            trace: scenario.capture_trace.then(Trace::default),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            next_tx: 0,
            source_rtt_half: SimTime::from_millis(scenario.network.source_rtt_ms / 2),
            dest_rtt_half: SimTime::from_millis(scenario.network.dest_rtt_ms / 2),
        };

        World {
            horizon_height: 1 + scenario.horizon_blocks,
            scenario,
            core,
            relayers,
            workload,
            horizon_time: None,
        }
    }

    fn start(&mut self) {
        for chain in [SOURCE, DEST] {
            let interval =
                SimTime::from_millis(self.core.chains[chain].cfg.min_block_interval_ms);
            self.core.schedule_in(interval, Event::BlockTick { chain });
        }
        for r in &mut self.relayers {
            let offset = SimTime::from_millis(self.scenario.relayer.stagger_ms * r.id as u64);
            if offset > SimTime::ZERO {
                // hold both lanes busy until the stagger offset passes
                r.hold_lanes();
                for lane in 0..2 {
                    self.core
                        .queue
                        .schedule(offset, Event::LaneWake { relayer: r.id, lane })
                        .unwrap();
                }
            }
        }
        // genesis commit opens the first submission window
        self.workload.on_source_block(&mut self.core);
    }

    /// Run to the configured horizon (plus drain). Returns the final result.
    pub fn run(mut self) -> RunResult {
        self.start();
        let drain_cap = self.horizon_height + self.scenario.drain_blocks;
        let far = SimTime::from_millis(u64::MAX / 2_000);
        while let Some((fire_at, seq, event)) = self.core.queue.pop_until(far) {
            if let Some(trace) = &mut self.core.trace {
                trace.record(fire_at, seq, event.kind_label(), payload_digest(&event));
            }
            let committed_source = matches!(event, Event::BlockCommit { chain } if chain == SOURCE);
            self.dispatch(event);
            if committed_source {
                let h = self.core.chains[SOURCE].height;
                if h >= self.horizon_height && self.horizon_time.is_none() {
                    self.horizon_time = Some(self.core.now());
                    if self.scenario.drain_blocks == 0 {
                        break;
                    }
                }
                if self.horizon_time.is_some() && (h >= drain_cap || self.is_quiescent()) {
                    break;
                }
            }
        }
        self.finish()
    }

    fn is_quiescent(&self) -> bool {
        self.workload.is_quiescent()
            && self.relayers.iter().all(|r| r.is_quiescent())
            && self.core.chains.iter().all(|c| c.mempool_len() == 0)
    }

    fn finish(self) -> RunResult {
        let core = self.core;
        let horizon_time = self.horizon_time.unwrap_or_else(|| core.now());
        let trace_text = core.trace.as_ref().map(|t| t.to_text());
        let trace_hash = core.trace.as_ref().map(|t| t.sha256_hex());
        RunResult {
            scenario: self.scenario,
            horizon_time,
            end_time: core.now(),
            relay_log: core.relay_log,
            workload_log: core.workload_log,
            workload_counters: self.workload.counters.clone(),
            blocks: core.chains.iter().map(|c| c.blocks.clone()).collect(),
            packets: core.packets,
            audits: core.chains.iter().map(|c| c.ibc.audit()).collect(),
            relayer_errors: self.relayers.iter().map(|r| r.errors.clone()).collect(),
            acked_on_source: core.chains[SOURCE].ibc.acked_count() as u64,
            receipts_on_dest: core.chains[DEST].ibc.receipt_count() as u64,
            dest_final_height: core.chains[DEST].height,
            dest_final_time: core.chains[DEST].last_commit,
            events_dispatched: core.queue.dispatched(),
            trace_text,
            trace_hash,
        }
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::BlockTick { chain } => {
                let now = self.core.now();
                let commit_at = self.core.chains[chain].begin_block(now);
                self.core
                    .queue
                    .schedule(commit_at, Event::BlockCommit { chain })
                    .expect("commit is never in the past");
            }
            Event::BlockCommit { chain } => {
                let now = self.core.now();
                let events = self.core.chains[chain].commit_block(now);
                // counterparty view used for stamping packet timeouts
                let other = 1 - chain;
                self.core.chains[other].counterparty_height = events.height;

                if chain == SOURCE {
                    for ev in &events.events {
                        if ev.kind == MsgKind::Transfer && ev.result.is_ok() {
                            let packet = self.core.chains[SOURCE]
                                .ibc
                                .commitment(ev.seq)
                                .expect("fresh commitment exists")
                                .clone();
                            debug_assert_eq!(
                                self.core.packets.len() as u64 + 1,
                                packet.sequence
                            );
                            self.core
                                .packets
                                .push(PacketInfo { packet, origin_tx: ev.tx_hash });
                        }
                    }
                }
                debug_assert!(conservation_holds(
                    &self.core.chains[SOURCE].ibc,
                    &self.core.chains[DEST].ibc
                ));

                let interval =
                    SimTime::from_millis(self.core.chains[chain].cfg.min_block_interval_ms);
                self.core.schedule_in(interval, Event::BlockTick { chain });

                let payload = Rc::new(events);
                for r in 0..self.relayers.len() {
                    let delay = self.core.rtt_half(chain);
                    self.core.schedule_in(
                        delay,
                        Event::StreamDeliver {
                            sub: Subscriber::Relayer(r as u32),
                            payload: payload.clone(),
                        },
                    );
                }
                if chain == SOURCE {
                    let delay = self.core.rtt_half(SOURCE);
                    self.core.schedule_in(
                        delay,
                        Event::StreamDeliver { sub: Subscriber::Workload, payload },
                    );
                }
            }
            Event::RpcArrival { chain, issuer, query } => {
                let now = self.core.now();
                let svc = rpc::service_time(&self.core.chains[chain], &query);
                let start = self.core.chains[chain].rpc_busy_until.max(now);
                let ready = start + svc;
                self.core.chains[chain].rpc_busy_until = ready;
                self.core
                    .queue
                    .schedule(ready, Event::RpcServed { chain, issuer, query })
                    .expect("service completes in the future");
            }
            Event::RpcServed { chain, issuer, query } => {
                let now = self.core.now();
                let reply = rpc::execute(&mut self.core.chains[chain], query, now);
                let delay = self.core.rtt_half(chain);
                self.core.schedule_in(delay, Event::RpcDelivered { chain, issuer, reply });
            }
            Event::RpcDelivered { issuer, reply, .. } => match issuer {
                Issuer::Workload => match reply {
                    RpcReply::BroadcastResult { hash, result, .. } => {
                        self.workload.on_broadcast_result(&mut self.core, hash, result)
                    }
                    RpcReply::ConfirmResult { hash, status, .. } => {
                        self.workload.on_confirm_result(&mut self.core, hash, status)
                    }
                    _ => {}
                },
                Issuer::Lane { relayer, lane } => {
                    let r = &mut self.relayers[relayer as usize];
                    match reply {
                        RpcReply::BroadcastResult { hash, result, .. } => {
                            r.on_broadcast_result(&mut self.core, hash, result)
                        }
                        RpcReply::ConfirmResult { hash, status, tag } => {
                            r.on_confirm_result(&mut self.core, lane, hash, status, tag)
                        }
                        RpcReply::PullResult { tag, .. } => {
                            r.on_pull_result(&mut self.core, lane, tag)
                        }
                        RpcReply::Commitments { tag, packets, .. } => {
                            r.on_commitments(&mut self.core, lane, tag, packets)
                        }
                        RpcReply::Receipts { tag, entries, view_height, view_time } => r
                            .on_receipts(
                                &mut self.core,
                                lane,
                                tag,
                                entries,
                                view_height,
                                view_time,
                            ),
                        RpcReply::BlockMsgs { .. } => {}
                    }
                }
            },
            Event::StreamDeliver { sub, payload } => match sub {
                Subscriber::Workload => self.workload.on_source_block(&mut self.core),
                Subscriber::Relayer(id) => {
                    self.relayers[id as usize].on_stream(&mut self.core, payload)
                }
            },
            Event::LaneWake { relayer, lane } => {
                self.relayers[relayer as usize].on_lane_wake(&mut self.core, lane)
            }
            Event::WorkloadPoll { slot } => self.workload.on_poll(&mut self.core, slot),
            Event::ConfirmDeadline { relayer, tx } => {
                self.relayers[relayer as usize].on_confirm_deadline(&mut self.core, tx)
            }
        }
    }
}

/// Convenience entry point: build and run one scenario.
pub fn run_scenario(scenario: Scenario) -> RunResult {
    World::new(scenario).run()
}
