//! Hermes-like relayer: event subscription, sequential block handling, the
//! 13-step transfer pipeline, message batching, per-account broadcast and
//! confirm discipline, periodic packet clearing and uncoordinated
//! multi-relayer behavior.
//!
//! Each relayer runs two worker lanes, one per chain subscription. A lane
//! processes one block batch at a time through
//! extract -> confirm -> data pull -> build/sign -> broadcast, and only then
//! picks up the next block, so a large block occupies the pipeline for its
//! full processing span. Relayers never share state; duplicate deliveries
//! are resolved solely by on-chain rejection.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;

use serde::Serialize;

use crate::chain::{BlockEvents, ChainMsg, MsgKind, Transaction, TxHash, TxStatus};
use crate::config::{BatchDispatch, ChainId, RelayerConfig, DEST, SOURCE};
use crate::engine::SimTime;
use crate::ibc::PacketSeq;
use crate::rpc::{PullFlow, QueryTag, RpcQuery};
use crate::sim::{Core, Event, Issuer};

pub const WORKLOAD_ACTOR: u32 = u32::MAX;
const WATCHDOG_BATCH: u64 = u64::MAX;

/// The 13 lifecycle steps plus the timeout-path labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum RelayStep {
    TransferBroadcast = 0,
    TransferExtraction = 1,
    TransferConfirmation = 2,
    TransferDataPull = 3,
    RecvBuild = 4,
    RecvBroadcast = 5,
    RecvExtraction = 6,
    RecvConfirmation = 7,
    RecvDataPull = 8,
    AckBuild = 9,
    AckBroadcast = 10,
    AckExtraction = 11,
    AckConfirmation = 12,
    TimeoutBuild = 13,
    TimeoutBroadcast = 14,
    TimeoutConfirmation = 15,
}

impl RelayStep {
    pub const LIFECYCLE_STEPS: usize = 13;

    pub fn label(self) -> &'static str {
        match self {
            RelayStep::TransferBroadcast => "transfer_broadcast",
            RelayStep::TransferExtraction => "transfer_extraction",
            RelayStep::TransferConfirmation => "transfer_confirmation",
            RelayStep::TransferDataPull => "transfer_data_pull",
            RelayStep::RecvBuild => "recv_build",
            RelayStep::RecvBroadcast => "recv_broadcast",
            RelayStep::RecvExtraction => "recv_extraction",
            RelayStep::RecvConfirmation => "recv_confirmation",
            RelayStep::RecvDataPull => "recv_data_pull",
            RelayStep::AckBuild => "ack_build",
            RelayStep::AckBroadcast => "ack_broadcast",
            RelayStep::AckExtraction => "ack_extraction",
            RelayStep::AckConfirmation => "ack_confirmation",
            RelayStep::TimeoutBuild => "timeout_build",
            RelayStep::TimeoutBroadcast => "timeout_broadcast",
            RelayStep::TimeoutConfirmation => "timeout_confirmation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayErrorKind {
    RedundantPacket,
    AccountSequenceMismatch,
    NoConfirmation,
    FailedToCollectEvents,
    MempoolFull,
}

/// One structured relayer log record; the sole input of the analysis side.
#[derive(Debug, Clone, Serialize)]
pub struct RelayLogEvent {
    pub time_ms: u64,
    pub relayer: u32,
    pub step: RelayStep,
    pub seq: PacketSeq,
    pub tx_hash: TxHash,
    pub ok: bool,
    pub error: Option<RelayErrorKind>,
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct RelayErrorCounters {
    pub redundant_packet: u64,
    pub account_sequence_mismatch: u64,
    pub no_confirmation: u64,
    pub failed_to_collect_events: u64,
    pub mempool_full: u64,
}

impl RelayErrorCounters {
    fn bump(&mut self, kind: RelayErrorKind) {
        match kind {
            RelayErrorKind::RedundantPacket => self.redundant_packet += 1,
            RelayErrorKind::AccountSequenceMismatch => self.account_sequence_mismatch += 1,
            RelayErrorKind::NoConfirmation => self.no_confirmation += 1,
            RelayErrorKind::FailedToCollectEvents => self.failed_to_collect_events += 1,
            RelayErrorKind::MempoolFull => self.mempool_full += 1,
        }
    }
}

/// Purpose of an in-flight relayer transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxPurpose {
    Recv,
    Ack,
    Timeout,
}

#[derive(Debug, Clone)]
struct Slot {
    account: u32,
    seq_view: u64,
    inflight: Option<TxHash>,
}

/// Relay accounts on one chain plus the queue of chunks waiting for a free
/// account. One unconfirmed transaction per account at a time.
#[derive(Debug, Default)]
struct SlotPool {
    slots: Vec<Slot>,
    waiting: VecDeque<OutChunk>,
}

impl SlotPool {
    fn free_slot(&mut self) -> Option<usize> {
        self.slots.iter().position(|s| s.inflight.is_none())
    }
}

/// A built transaction-to-be: packets plus purpose, awaiting an account.
#[derive(Debug, Clone)]
struct OutChunk {
    purpose: TxPurpose,
    packets: Vec<PacketSeq>,
    /// Destination view carried by timeout messages (proof of non-receipt).
    proof_view: Option<(u64, SimTime)>,
}

#[derive(Debug)]
struct InflightTx {
    chain: ChainId,
    slot: usize,
    purpose: TxPurpose,
    packets: Vec<PacketSeq>,
    confirmed: bool,
}

/// One transaction chunk awaiting a data pull.
#[derive(Debug, Clone)]
struct PullChunk {
    packets: Vec<PacketSeq>,
}

#[derive(Debug)]
enum LaneJob {
    Block { height: u64, events: Rc<BlockEvents> },
    /// Height notification on a broken event stream; triggers dispatch and
    /// clear scheduling only.
    HeightOnly { height: u64 },
    Clear { height: u64 },
}

impl LaneJob {
    fn height(&self) -> u64 {
        match self {
            LaneJob::Block { height, .. }
            | LaneJob::HeightOnly { height }
            | LaneJob::Clear { height } => *height,
        }
    }
}

/// Stage of the lane's active batch.
#[derive(Debug)]
enum Stage {
    /// Busy decoding block events; on wake moves to confirms.
    Extracting { events: Rc<BlockEvents> },
    /// Waiting for confirm_tx replies; `left` outstanding.
    Confirming { left: u32 },
    /// Waiting for data-pull chunk replies.
    Pulling { left: u32 },
    /// Busy building + signing outgoing chunks; on wake broadcasts.
    Building,
    /// Clear pass: waiting for the commitment scan.
    ClearCommitments,
    /// Clear pass: waiting for the receipt scan.
    ClearReceipts { packets: Vec<crate::ibc::Packet> },
}

/// Data the active batch accumulates while moving through stages.
#[derive(Debug, Default)]
struct BatchData {
    height: u64,
    /// New transfer packets grouped by origin transaction (source lane) or
    /// ack-pending packets grouped by recv transaction (dest lane).
    pull_chunks: Vec<PullChunk>,
    /// tx -> packets whose confirmation step is logged off that tx.
    confirm_txs: BTreeMap<TxHash, (RelayStep, Vec<PacketSeq>)>,
    /// Chunks to hand to the slot pool once built.
    outgoing: Vec<OutChunk>,
    pull_flow: Option<PullFlow>,
    pull_height: u64,
}

#[derive(Debug, PartialEq, Eq, Clone, Copy)]
enum LaneState {
    Idle,
    Busy,
    Awaiting,
}

struct Lane {
    chain: ChainId,
    jobs: VecDeque<LaneJob>,
    state: LaneState,
    stage: Option<Stage>,
    batch: BatchData,
    batch_id: u64,
    last_event_height: u64,
}

impl Lane {
    fn new(chain: ChainId) -> Self {
        Lane {
            chain,
            jobs: VecDeque::new(),
            state: LaneState::Idle,
            stage: None,
            batch: BatchData::default(),
            batch_id: 0,
            last_event_height: 0,
        }
    }
}

pub struct Relayer {
    pub id: u32,
    pub cfg: RelayerConfig,
    lanes: Vec<Lane>,
    pools: Vec<SlotPool>,
    inflight: BTreeMap<TxHash, InflightTx>,
    /// Packets currently owned by this relayer's pipeline; packet clearing
    /// skips them so a single relayer never duplicates its own deliveries.
    in_pipeline: BTreeSet<PacketSeq>,
    /// Packets this relayer has fully finished with (acked/failed); cleared
    /// packets re-enter only via the commitment scan.
    events_broken: [bool; 2],
    pub errors: RelayErrorCounters,
    next_batch: u64,
    last_clear_height: u64,
    /// Latest (height, time) view of each chain from its stream.
    views: [(u64, SimTime); 2],
}

impl Relayer {
    pub fn new(id: u32, cfg: RelayerConfig, source_accounts: Vec<u32>, dest_accounts: Vec<u32>) -> Self {
        let mk_pool = |accs: Vec<u32>| SlotPool {
            slots: accs
                .into_iter()
                .map(|account| Slot { account, seq_view: 0, inflight: None })
                .collect(),
            waiting: VecDeque::new(),
        };
        Relayer {
            id,
            cfg,
            lanes: vec![Lane::new(SOURCE), Lane::new(DEST)],
            pools: vec![mk_pool(source_accounts), mk_pool(dest_accounts)],
            inflight: BTreeMap::new(),
            in_pipeline: BTreeSet::new(),
            events_broken: [false, false],
            errors: RelayErrorCounters::default(),
            next_batch: 0,
            last_clear_height: 0,
            views: [(1, SimTime::ZERO), (1, SimTime::ZERO)],
        }
    }

    fn issuer(&self, lane: usize) -> Issuer {
        Issuer::Lane { relayer: self.id, lane }
    }

    fn log(
        &mut self,
        core: &mut Core,
        step: RelayStep,
        seq: PacketSeq,
        tx: TxHash,
        ok: bool,
        error: Option<RelayErrorKind>,
    ) {
        if let Some(kind) = error {
            self.errors.bump(kind);
        }
        core.log_relay(RelayLogEvent {
            time_ms: core.now().as_millis(),
            relayer: self.id,
            step,
            seq,
            tx_hash: tx,
            ok,
            error,
        });
    }

    // ------------------------------------------------------------------
    // Subscription deliveries
    // ------------------------------------------------------------------

    pub fn on_stream(&mut self, core: &mut Core, payload: Rc<BlockEvents>) {
        let chain = payload.chain;
        let lane_idx = chain;
        self.views[chain] = (payload.height, payload.timestamp);

        let job = if self.events_broken[chain] {
            LaneJob::HeightOnly { height: payload.height }
        } else if payload.overflow {
            self.log(
                core,
                RelayStep::TransferExtraction,
                0,
                0,
                false,
                Some(RelayErrorKind::FailedToCollectEvents),
            );
            self.events_broken[chain] = true;
            LaneJob::HeightOnly { height: payload.height }
        } else {
            LaneJob::Block { height: payload.height, events: payload.clone() }
        };

        let clear_due = chain == SOURCE
            && self.cfg.clear_interval_blocks > 0
            && payload.height % self.cfg.clear_interval_blocks == 0
            && payload.height > self.last_clear_height;

        let lane = &mut self.lanes[lane_idx];
        lane.last_event_height = payload.height;
        lane.jobs.push_back(job);
        if clear_due {
            self.last_clear_height = payload.height;
            self.lanes[lane_idx].jobs.push_back(LaneJob::Clear { height: payload.height });
        }

        // Height notifications double as liveness probes for in-flight
        // transactions once the event stream is gone.
        if self.events_broken[chain] {
            let pending: Vec<TxHash> = self
                .inflight
                .iter()
                .filter(|(_, t)| t.chain == chain && !t.confirmed)
                .map(|(h, _)| *h)
                .collect();
            for hash in pending {
                core.issue_query(
                    self.issuer(lane_idx),
                    chain,
                    RpcQuery::ConfirmTx { hash, tag: QueryTag { batch: WATCHDOG_BATCH, chunk: 0 } },
                );
            }
        }

        self.try_start(core, lane_idx);
    }

    /// Start the head job if the lane is idle and the dispatch policy allows.
    fn try_start(&mut self, core: &mut Core, lane_idx: usize) {
        loop {
            let lane = &self.lanes[lane_idx];
            if lane.state != LaneState::Idle {
                return;
            }
            let Some(head) = lane.jobs.front() else { return };
            let startable = match self.cfg.batch_dispatch {
                BatchDispatch::Immediate => true,
                BatchDispatch::OnBlockEvent => lane.last_event_height > head.height(),
            };
            if !startable {
                return;
            }
            let job = self.lanes[lane_idx].jobs.pop_front().unwrap();
            match job {
                LaneJob::HeightOnly { .. } => continue,
                LaneJob::Block { events, .. } => {
                    if events.events.is_empty() {
                        continue;
                    }
                    self.begin_extraction(core, lane_idx, events);
                    return;
                }
                LaneJob::Clear { height } => {
                    self.begin_clear(core, lane_idx, height);
                    return;
                }
            }
        }
    }

    fn begin_extraction(&mut self, core: &mut Core, lane_idx: usize, events: Rc<BlockEvents>) {
        let n = events.events.len() as u64;
        let dur = SimTime::from_micros(
            self.cfg.extract_base_us + self.cfg.extract_per_msg_us * n,
        );
        let dur = core.jitter(dur, self.cfg.task_jitter_percent);
        let lane = &mut self.lanes[lane_idx];
        lane.state = LaneState::Busy;
        lane.stage = Some(Stage::Extracting { events });
        lane.batch = BatchData::default();
        lane.batch_id = self.next_batch;
        self.next_batch += 1;
        core.schedule_in(dur, Event::LaneWake { relayer: self.id, lane: lane_idx });
    }

    fn begin_clear(&mut self, core: &mut Core, lane_idx: usize, height: u64) {
        let lane = &mut self.lanes[lane_idx];
        lane.state = LaneState::Awaiting;
        lane.stage = Some(Stage::ClearCommitments);
        lane.batch = BatchData { height, ..Default::default() };
        lane.batch_id = self.next_batch;
        self.next_batch += 1;
        let tag = QueryTag { batch: self.lanes[lane_idx].batch_id, chunk: 0 };
        core.issue_query(
            self.issuer(lane_idx),
            SOURCE,
            RpcQuery::CommitmentScan { limit: self.cfg.clear_batch_max_msgs, tag },
        );
    }

    // ------------------------------------------------------------------
    // Lane wakeups (busy task completion)
    // ------------------------------------------------------------------

    pub fn on_lane_wake(&mut self, core: &mut Core, lane_idx: usize) {
        let stage = self.lanes[lane_idx].stage.take();
        match stage {
            Some(Stage::Extracting { events }) => self.finish_extraction(core, lane_idx, events),
            Some(Stage::Building) => self.finish_build(core, lane_idx),
            Some(other) => {
                self.lanes[lane_idx].stage = Some(other);
            }
            // startup stagger wake: lane becomes eligible for work
            None => {
                self.lanes[lane_idx].state = LaneState::Idle;
                self.try_start(core, lane_idx);
            }
        }
    }

    /// Keep both lanes parked until a scheduled wake (startup stagger).
    pub fn hold_lanes(&mut self) {
        for lane in &mut self.lanes {
            lane.state = LaneState::Busy;
        }
    }

    /// Decode the block: log extraction steps, collect confirmable txs and
    /// pull chunks, and handle the outcomes of our own transactions.
    fn finish_extraction(&mut self, core: &mut Core, lane_idx: usize, events: Rc<BlockEvents>) {
        let chain = events.chain;
        let height = events.height;
        let mut confirm_txs: BTreeMap<TxHash, (RelayStep, Vec<PacketSeq>)> = BTreeMap::new();
        let mut pull_chunks: BTreeMap<TxHash, Vec<PacketSeq>> = BTreeMap::new();

        // Duplicate deliveries surface as "packet messages are redundant";
        // other message failures (e.g. expired recv) are plain failures.
        let err_kind = |e: &Result<(), crate::chain::MsgError>| match e {
            Err(crate::chain::MsgError::Redundant) => Some(RelayErrorKind::RedundantPacket),
            _ => None,
        };
        for ev in &events.events {
            let own = self.inflight.contains_key(&ev.tx_hash);
            if own {
                // Committed own transactions always get a confirm query so
                // their account slot frees, whatever the message outcomes.
                let step = match ev.kind {
                    MsgKind::Recv => RelayStep::RecvConfirmation,
                    MsgKind::Ack => RelayStep::AckConfirmation,
                    _ => RelayStep::TimeoutConfirmation,
                };
                confirm_txs.entry(ev.tx_hash).or_insert_with(|| (step, Vec::new()));
            }
            match (chain, ev.kind) {
                (SOURCE, MsgKind::Transfer) if ev.result.is_ok() => {
                    self.log(core, RelayStep::TransferExtraction, ev.seq, ev.tx_hash, true, None);
                    self.in_pipeline.insert(ev.seq);
                    pull_chunks.entry(ev.tx_hash).or_default().push(ev.seq);
                    confirm_txs
                        .entry(ev.tx_hash)
                        .or_insert_with(|| (RelayStep::TransferConfirmation, Vec::new()))
                        .1
                        .push(ev.seq);
                }
                (SOURCE, MsgKind::Transfer) => {} // failed transfer: nothing to relay
                (DEST, MsgKind::Recv) => {
                    if ev.result.is_ok() {
                        if own {
                            self.log(core, RelayStep::RecvExtraction, ev.seq, ev.tx_hash, true, None);
                            confirm_txs
                                .get_mut(&ev.tx_hash)
                                .expect("own tx registered above")
                                .1
                                .push(ev.seq);
                        }
                        // Every relayer acks every written receipt,
                        // coordinated or not.
                        self.in_pipeline.insert(ev.seq);
                        pull_chunks.entry(ev.tx_hash).or_default().push(ev.seq);
                    } else if own {
                        self.log(
                            core,
                            RelayStep::RecvExtraction,
                            ev.seq,
                            ev.tx_hash,
                            false,
                            err_kind(&ev.result),
                        );
                        self.in_pipeline.remove(&ev.seq);
                    }
                }
                (SOURCE, MsgKind::Ack) if own => {
                    if ev.result.is_ok() {
                        self.log(core, RelayStep::AckExtraction, ev.seq, ev.tx_hash, true, None);
                        confirm_txs
                            .get_mut(&ev.tx_hash)
                            .expect("own tx registered above")
                            .1
                            .push(ev.seq);
                    } else {
                        self.log(
                            core,
                            RelayStep::AckExtraction,
                            ev.seq,
                            ev.tx_hash,
                            false,
                            err_kind(&ev.result),
                        );
                        self.in_pipeline.remove(&ev.seq);
                    }
                }
                (SOURCE, MsgKind::Timeout) if own => {
                    if ev.result.is_ok() {
                        confirm_txs
                            .get_mut(&ev.tx_hash)
                            .expect("own tx registered above")
                            .1
                            .push(ev.seq);
                    } else {
                        self.log(
                            core,
                            RelayStep::TimeoutConfirmation,
                            ev.seq,
                            ev.tx_hash,
                            false,
                            err_kind(&ev.result),
                        );
                        self.in_pipeline.remove(&ev.seq);
                    }
                }
                _ => {}
            }
        }
        let lane = &mut self.lanes[lane_idx];
        lane.batch.height = height;
        lane.batch.pull_chunks =
            pull_chunks.into_values().map(|packets| PullChunk { packets }).collect();
        lane.batch.pull_flow = Some(if chain == SOURCE {
            PullFlow::TransferData
        } else {
            PullFlow::AckData
        });
        lane.batch.pull_height = height;
        lane.batch.confirm_txs = confirm_txs;

        if self.lanes[lane_idx].batch.confirm_txs.is_empty() {
            self.after_confirms(core, lane_idx);
        } else {
            let batch = self.lanes[lane_idx].batch_id;
            let hashes: Vec<TxHash> =
                self.lanes[lane_idx].batch.confirm_txs.keys().copied().collect();
            let n = hashes.len() as u32;
            for hash in hashes {
                core.issue_query(
                    self.issuer(lane_idx),
                    chain,
                    RpcQuery::ConfirmTx { hash, tag: QueryTag { batch, chunk: 0 } },
                );
            }
            let lane = &mut self.lanes[lane_idx];
            lane.state = LaneState::Awaiting;
            lane.stage = Some(Stage::Confirming { left: n });
        }
    }

    /// Confirms are in; issue the batch's data pulls or finish the job.
    fn after_confirms(&mut self, core: &mut Core, lane_idx: usize) {
        let lane = &mut self.lanes[lane_idx];
        if lane.batch.pull_chunks.is_empty() {
            self.finish_job(core, lane_idx);
            return;
        }
        let flow = lane.batch.pull_flow.expect("pull flow set at extraction");
        let height = lane.batch.pull_height;
        let batch = lane.batch_id;
        let chain = lane.chain;
        let chunks: Vec<u64> =
            lane.batch.pull_chunks.iter().map(|c| c.packets.len() as u64).collect();
        lane.state = LaneState::Awaiting;
        lane.stage = Some(Stage::Pulling { left: chunks.len() as u32 });
        for (i, chunk_msgs) in chunks.into_iter().enumerate() {
            core.issue_query(
                self.issuer(lane_idx),
                chain,
                RpcQuery::PullPacketData {
                    flow,
                    height,
                    chunk_msgs,
                    tag: QueryTag { batch, chunk: i as u32 },
                },
            );
        }
    }

    /// Pulls are in; spend build + per-transaction preparation time.
    fn begin_build(&mut self, core: &mut Core, lane_idx: usize) {
        let lane = &mut self.lanes[lane_idx];
        let packets: Vec<PacketSeq> =
            lane.batch.pull_chunks.iter().flat_map(|c| c.packets.iter().copied()).collect();
        let purpose = if lane.chain == SOURCE { TxPurpose::Recv } else { TxPurpose::Ack };
        let max = self.cfg.max_msgs_per_tx as usize;
        let mut outgoing = Vec::new();
        for chunk in packets.chunks(max) {
            outgoing.push(OutChunk { purpose, packets: chunk.to_vec(), proof_view: None });
        }
        let n_msgs = packets.len() as u64;
        let n_txs = outgoing.len() as u64;
        lane.batch.outgoing = outgoing;
        lane.state = LaneState::Busy;
        lane.stage = Some(Stage::Building);
        let dur = SimTime::from_micros(self.cfg.build_per_msg_us * n_msgs)
            + SimTime::from_millis(self.cfg.tx_prep_ms * n_txs);
        let dur = core.jitter(dur, self.cfg.task_jitter_percent);
        core.schedule_in(dur, Event::LaneWake { relayer: self.id, lane: lane_idx });
    }

    fn finish_build(&mut self, core: &mut Core, lane_idx: usize) {
        let outgoing = std::mem::take(&mut self.lanes[lane_idx].batch.outgoing);
        let build_step = |p: TxPurpose| match p {
            TxPurpose::Recv => RelayStep::RecvBuild,
            TxPurpose::Ack => RelayStep::AckBuild,
            TxPurpose::Timeout => RelayStep::TimeoutBuild,
        };
        for chunk in &outgoing {
            for &seq in &chunk.packets {
                self.log(core, build_step(chunk.purpose), seq, 0, true, None);
            }
        }
        for chunk in outgoing {
            let target = match chunk.purpose {
                TxPurpose::Recv => DEST,
                TxPurpose::Ack | TxPurpose::Timeout => SOURCE,
            };
            self.request_broadcast(core, target, chunk);
        }
        self.finish_job(core, lane_idx);
    }

    fn finish_job(&mut self, core: &mut Core, lane_idx: usize) {
        let lane = &mut self.lanes[lane_idx];
        lane.state = LaneState::Idle;
        lane.stage = None;
        lane.batch = BatchData::default();
        self.try_start(core, lane_idx);
    }

    // ------------------------------------------------------------------
    // Broadcast path (account slots)
    // ------------------------------------------------------------------

    fn request_broadcast(&mut self, core: &mut Core, chain: ChainId, chunk: OutChunk) {
        let pool = &mut self.pools[chain];
        match pool.free_slot() {
            Some(slot) => self.broadcast_now(core, chain, slot, chunk),
            None => pool.waiting.push_back(chunk),
        }
    }

    fn broadcast_now(&mut self, core: &mut Core, chain: ChainId, slot_idx: usize, chunk: OutChunk) {
        let hash = core.next_tx_hash();
        let slot = &mut self.pools[chain].slots[slot_idx];
        slot.inflight = Some(hash);
        let account = slot.account;
        let sequence = slot.seq_view;

        let mut msgs = Vec::with_capacity(chunk.packets.len());
        for &seq in &chunk.packets {
            let msg = match chunk.purpose {
                TxPurpose::Recv => ChainMsg::Recv { packet: core.packet(seq).packet.clone() },
                TxPurpose::Ack => ChainMsg::Ack { seq },
                TxPurpose::Timeout => {
                    let (h, t) = chunk.proof_view.expect("timeout chunk carries a proof view");
                    ChainMsg::Timeout { seq, dest_height: h, dest_time: t, dest_has_receipt: false }
                }
            };
            msgs.push(msg);
        }
        let fee = core.fee_for(chain, &msgs);
        let tx = Transaction { hash, account, sequence, msgs, fee_milli: fee };
        self.inflight.insert(
            hash,
            InflightTx {
                chain,
                slot: slot_idx,
                purpose: chunk.purpose,
                packets: chunk.packets.clone(),
                confirmed: false,
            },
        );
        core.schedule_in(
            SimTime::from_millis(self.cfg.confirmation_timeout_ms),
            Event::ConfirmDeadline { relayer: self.id, tx: hash },
        );
        // Broadcasts go through the same serialized RPC server as everything
        // else; the reply routes back via the inflight table.
        core.issue_query(
            Issuer::Lane { relayer: self.id, lane: chain },
            chain,
            RpcQuery::BroadcastTx { tx, tag: QueryTag { batch: WATCHDOG_BATCH, chunk: 1 } },
        );
    }

    pub fn on_broadcast_result(
        &mut self,
        core: &mut Core,
        hash: TxHash,
        result: Result<(), crate::chain::RejectReason>,
    ) {
        let Some(tx) = self.inflight.get(&hash) else { return };
        let chain = tx.chain;
        let purpose = tx.purpose;
        let packets = tx.packets.clone();
        let slot_idx = tx.slot;
        match result {
            Ok(()) => {
                let step = match purpose {
                    TxPurpose::Recv => RelayStep::RecvBroadcast,
                    TxPurpose::Ack => RelayStep::AckBroadcast,
                    TxPurpose::Timeout => RelayStep::TimeoutBroadcast,
                };
                for &seq in &packets {
                    self.log(core, step, seq, hash, true, None);
                }
            }
            Err(reason) => {
                let kind = match reason {
                    crate::chain::RejectReason::AccountSequenceMismatch => {
                        RelayErrorKind::AccountSequenceMismatch
                    }
                    crate::chain::RejectReason::MempoolFull => RelayErrorKind::MempoolFull,
                    _ => RelayErrorKind::NoConfirmation,
                };
                let step = match purpose {
                    TxPurpose::Recv => RelayStep::RecvBroadcast,
                    TxPurpose::Ack => RelayStep::AckBroadcast,
                    TxPurpose::Timeout => RelayStep::TimeoutBroadcast,
                };
                for &seq in &packets {
                    self.log(core, step, seq, hash, false, Some(kind));
                    self.in_pipeline.remove(&seq);
                }
                self.inflight.remove(&hash);
                let slot = &mut self.pools[chain].slots[slot_idx];
                slot.inflight = None;
                self.drain_waiting(core, chain);
            }
        }
    }

    fn drain_waiting(&mut self, core: &mut Core, chain: ChainId) {
        while let Some(slot) = self.pools[chain].free_slot() {
            match self.pools[chain].waiting.pop_front() {
                Some(chunk) => self.broadcast_now(core, chain, slot, chunk),
                None => break,
            }
        }
    }

    /// Confirmation watchdog: a transaction unconfirmed past the timeout is
    /// abandoned ("failed tx: no confirmation") and its account resynced.
    pub fn on_confirm_deadline(&mut self, core: &mut Core, hash: TxHash) {
        let Some(tx) = self.inflight.get(&hash) else { return };
        if tx.confirmed {
            return;
        }
        let chain = tx.chain;
        let slot_idx = tx.slot;
        let packets = tx.packets.clone();
        for &seq in &packets {
            self.log(
                core,
                RelayStep::TransferBroadcast,
                seq,
                hash,
                false,
                Some(RelayErrorKind::NoConfirmation),
            );
            self.in_pipeline.remove(&seq);
        }
        self.inflight.remove(&hash);
        let account = self.pools[chain].slots[slot_idx].account;
        let onchain_seq = core.account_sequence(chain, account);
        let slot = &mut self.pools[chain].slots[slot_idx];
        slot.inflight = None;
        slot.seq_view = onchain_seq;
        self.drain_waiting(core, chain);
    }

    // ------------------------------------------------------------------
    // RPC replies
    // ------------------------------------------------------------------

    pub fn on_confirm_result(
        &mut self,
        core: &mut Core,
        lane_idx: usize,
        hash: TxHash,
        status: TxStatus,
        tag: QueryTag,
    ) {
        // Slot bookkeeping applies to any confirm of an own transaction.
        if matches!(status, TxStatus::Committed { .. }) {
            if let Some(tx) = self.inflight.get_mut(&hash) {
                if !tx.confirmed {
                    tx.confirmed = true;
                    let chain = tx.chain;
                    let slot_idx = tx.slot;
                    let purpose = tx.purpose;
                    let packets = tx.packets.clone();
                    self.inflight.remove(&hash);
                    let slot = &mut self.pools[chain].slots[slot_idx];
                    slot.inflight = None;
                    slot.seq_view += 1;
                    // Terminal steps for packets whose lifecycle closes on
                    // this chain when the stream is broken (no extraction).
                    if self.events_broken[chain] && tag.batch == WATCHDOG_BATCH {
                        let step = match purpose {
                            TxPurpose::Recv => RelayStep::RecvConfirmation,
                            TxPurpose::Ack => RelayStep::AckConfirmation,
                            TxPurpose::Timeout => RelayStep::TimeoutConfirmation,
                        };
                        for &seq in &packets {
                            self.log(core, step, seq, hash, true, None);
                            if step != RelayStep::RecvConfirmation {
                                self.in_pipeline.remove(&seq);
                            }
                        }
                    }
                    self.drain_waiting(core, chain);
                }
            }
        }

        if tag.batch != self.lanes[lane_idx].batch_id {
            return;
        }
        let lane = &mut self.lanes[lane_idx];
        let Some(Stage::Confirming { .. }) = &mut lane.stage else { return };
        if let Some((step, packets)) = lane.batch.confirm_txs.remove(&hash) {
            let terminal = matches!(
                step,
                RelayStep::AckConfirmation | RelayStep::TimeoutConfirmation
            );
            for seq in packets {
                self.log(core, step, seq, hash, true, None);
                if terminal {
                    self.in_pipeline.remove(&seq);
                }
            }
        }
        let lane = &mut self.lanes[lane_idx];
        let Some(Stage::Confirming { left }) = &mut lane.stage else { return };
        *left -= 1;
        if *left == 0 {
            self.after_confirms(core, lane_idx);
        }
    }

    pub fn on_pull_result(&mut self, core: &mut Core, lane_idx: usize, tag: QueryTag) {
        if tag.batch != self.lanes[lane_idx].batch_id {
            return;
        }
        let lane = &mut self.lanes[lane_idx];
        let Some(Stage::Pulling { .. }) = &mut lane.stage else { return };
        let step = match lane.batch.pull_flow {
            Some(PullFlow::TransferData) => RelayStep::TransferDataPull,
            Some(PullFlow::AckData) => RelayStep::RecvDataPull,
            None => return,
        };
        let packets = lane.batch.pull_chunks[tag.chunk as usize].packets.clone();
        for seq in packets {
            self.log(core, step, seq, 0, true, None);
        }
        let lane = &mut self.lanes[lane_idx];
        let Some(Stage::Pulling { left }) = &mut lane.stage else { return };
        *left -= 1;
        if *left == 0 {
            self.begin_build(core, lane_idx);
        }
    }

    pub fn on_commitments(
        &mut self,
        core: &mut Core,
        lane_idx: usize,
        tag: QueryTag,
        packets: Vec<crate::ibc::Packet>,
    ) {
        if tag.batch != self.lanes[lane_idx].batch_id {
            return;
        }
        let pending: Vec<crate::ibc::Packet> = packets
            .into_iter()
            .filter(|p| !self.in_pipeline.contains(&p.sequence))
            .collect();
        if pending.is_empty() {
            self.finish_job(core, lane_idx);
            return;
        }
        let seqs: Vec<PacketSeq> = pending.iter().map(|p| p.sequence).collect();
        let batch = self.lanes[lane_idx].batch_id;
        self.lanes[lane_idx].stage = Some(Stage::ClearReceipts { packets: pending });
        core.issue_query(
            self.issuer(lane_idx),
            DEST,
            RpcQuery::ReceiptScan { seqs, tag: QueryTag { batch, chunk: 0 } },
        );
    }

    pub fn on_receipts(
        &mut self,
        core: &mut Core,
        lane_idx: usize,
        tag: QueryTag,
        entries: Vec<(PacketSeq, bool)>,
        view_height: u64,
        view_time: SimTime,
    ) {
        if tag.batch != self.lanes[lane_idx].batch_id {
            return;
        }
        let Some(Stage::ClearReceipts { packets }) = self.lanes[lane_idx].stage.take() else {
            return;
        };
        let receipt: BTreeMap<PacketSeq, bool> = entries.into_iter().collect();
        let mut recv_live: Vec<PacketSeq> = Vec::new();
        let mut ack_pending: Vec<PacketSeq> = Vec::new();
        let mut expired: Vec<PacketSeq> = Vec::new();
        for p in &packets {
            let delivered = receipt.get(&p.sequence).copied().unwrap_or(false);
            if delivered {
                ack_pending.push(p.sequence);
            } else if p.timed_out_at(view_height, view_time) {
                expired.push(p.sequence);
            } else {
                recv_live.push(p.sequence);
            }
            self.in_pipeline.insert(p.sequence);
        }

        let max = self.cfg.max_msgs_per_tx as usize;
        let mut outgoing = Vec::new();
        for chunk in recv_live.chunks(max) {
            outgoing.push(OutChunk { purpose: TxPurpose::Recv, packets: chunk.to_vec(), proof_view: None });
        }
        for chunk in ack_pending.chunks(max) {
            outgoing.push(OutChunk { purpose: TxPurpose::Ack, packets: chunk.to_vec(), proof_view: None });
        }
        for chunk in expired.chunks(max) {
            outgoing.push(OutChunk {
                purpose: TxPurpose::Timeout,
                packets: chunk.to_vec(),
                proof_view: Some((view_height, view_time)),
            });
        }
        if outgoing.is_empty() {
            self.finish_job(core, lane_idx);
            return;
        }
        let n_msgs: u64 = outgoing.iter().map(|c| c.packets.len() as u64).sum();
        let n_txs = outgoing.len() as u64;
        let lane = &mut self.lanes[lane_idx];
        lane.batch.outgoing = outgoing;
        lane.state = LaneState::Busy;
        lane.stage = Some(Stage::Building);
        let dur = SimTime::from_micros(self.cfg.build_per_msg_us * n_msgs)
            + SimTime::from_millis(self.cfg.tx_prep_ms * n_txs);
        let dur = core.jitter(dur, self.cfg.task_jitter_percent);
        core.schedule_in(dur, Event::LaneWake { relayer: self.id, lane: lane_idx });
    }

    /// True when the relayer holds no queued work, active batches or
    /// unconfirmed transactions (used by the drain stop condition).
    pub fn is_quiescent(&self) -> bool {
        self.inflight.is_empty()
            && self.lanes.iter().all(|l| {
                l.state == LaneState::Idle
                    && l.jobs.iter().all(|j| matches!(j, LaneJob::HeightOnly { .. }))
            })
            && self.pools.iter().all(|p| p.waiting.is_empty())
    }

    pub fn stream_broken(&self, chain: ChainId) -> bool {
        self.events_broken[chain]
    }
}
