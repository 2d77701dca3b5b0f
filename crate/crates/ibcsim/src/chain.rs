//! Tendermint-like chain abstraction: accounts with sequence numbers, a
//! mempool, tick-driven block production with per-message processing
//! overhead, a strictly serialized RPC query server and a capped block
//! event stream.
//!
//! Consensus is abstracted into the tick/commit pair: a tick drains the
//! mempool and the block commits after `base + per_msg * n` processing
//! time. Transactions arriving between tick and commit wait for the next
//! block, which is what starves blocks when submitters miss the window.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;

use crate::config::{ChainConfig, ChainId};
use crate::engine::SimTime;
use crate::ibc::{
    AckError, IbcEndpoint, Packet, PacketData, PacketSeq, RecvError, TimeoutError, voucher_denom,
};

pub type AccountId = u32;
pub type TxHash = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgKind {
    Transfer,
    Recv,
    Ack,
    Timeout,
}

/// A message carried inside a transaction.
#[derive(Debug, Clone)]
pub enum ChainMsg {
    /// Initiate a cross-chain transfer (source chain).
    Transfer { data: PacketData },
    /// Deliver a packet on the destination chain.
    Recv { packet: Packet },
    /// Relay an acknowledgement back to the source chain.
    Ack { seq: PacketSeq },
    /// Refund an expired undelivered packet, carrying the relayer's proof
    /// view of the destination (height/time and non-receipt).
    Timeout { seq: PacketSeq, dest_height: u64, dest_time: SimTime, dest_has_receipt: bool },
}

impl ChainMsg {
    pub fn kind(&self) -> MsgKind {
        match self {
            ChainMsg::Transfer { .. } => MsgKind::Transfer,
            ChainMsg::Recv { .. } => MsgKind::Recv,
            ChainMsg::Ack { .. } => MsgKind::Ack,
            ChainMsg::Timeout { .. } => MsgKind::Timeout,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Transaction {
    pub hash: TxHash,
    pub account: AccountId,
    pub sequence: u64,
    pub msgs: Vec<ChainMsg>,
    pub fee_milli: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgError {
    InsufficientBalance,
    TimeoutElapsed,
    /// Receipt already exists (duplicate recv) or commitment already
    /// deleted (duplicate ack/timeout): redundant delivery.
    Redundant,
    /// Timeout submitted for a packet that is not refundable.
    NotRefundable,
}

/// Per-message execution outcome emitted on the block event stream.
#[derive(Debug, Clone)]
pub struct MsgEvent {
    pub tx_hash: TxHash,
    pub account: AccountId,
    pub kind: MsgKind,
    pub seq: PacketSeq,
    pub result: Result<(), MsgError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxStatus {
    Unknown,
    Pending,
    Committed { height: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    AccountSequenceMismatch,
    MempoolFull,
    InsufficientFeeBalance,
    TooManyMsgs,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::AccountSequenceMismatch => "account sequence mismatch",
            RejectReason::MempoolFull => "mempool full",
            RejectReason::InsufficientFeeBalance => "insufficient fee balance",
            RejectReason::TooManyMsgs => "too many messages per tx",
        }
    }
}

#[derive(Debug, Default)]
pub struct Account {
    pub sequence: u64,
    pub balances: BTreeMap<String, u64>,
    pub fee_balance_milli: u64,
    /// Hash of the not-yet-committed transaction, if any. The chain admits
    /// at most one pending transaction per account, which also enforces the
    /// one-tx-per-account-per-block rule.
    pub pending: Option<TxHash>,
}

/// Committed-block log row (line-delimited export).
#[derive(Debug, Clone, Serialize)]
pub struct BlockRecord {
    pub height: u64,
    pub timestamp_ms: u64,
    pub tx_count: u64,
    pub transfer_msgs: u64,
    pub recv_msgs: u64,
    pub ack_msgs: u64,
    pub timeout_msgs: u64,
    pub failed_msgs: u64,
    pub interval_ms: u64,
    pub event_bytes: u64,
}

/// Events of one committed block, shared with every subscriber.
#[derive(Debug)]
pub struct BlockEvents {
    pub chain: ChainId,
    pub height: u64,
    pub timestamp: SimTime,
    pub events: Vec<MsgEvent>,
    pub event_bytes: u64,
    /// Payload exceeded the stream cap: subscribers receive this marker and
    /// none of the per-message events.
    pub overflow: bool,
}

pub struct PendingBlock {
    pub txs: Vec<Transaction>,
    pub commit_at: SimTime,
}

pub struct Chain {
    pub id: ChainId,
    pub cfg: ChainConfig,
    pub height: u64,
    pub last_commit: SimTime,
    pub accounts: Vec<Account>,
    mempool: VecDeque<Transaction>,
    mempool_msgs: u64,
    pub pending_block: Option<PendingBlock>,
    /// RPC server end-of-service time; exactly one query in service at any
    /// instant.
    pub rpc_busy_until: SimTime,
    pub ibc: IbcEndpoint,
    pub blocks: Vec<BlockRecord>,
    tx_status: BTreeMap<TxHash, TxStatus>,
    /// Per-kind message counts of each committed block, used by the RPC
    /// scan-cost model (indexed by height - 1).
    kind_counts: Vec<[u64; 4]>,
    /// Packet timeout policy, stamped onto outgoing packets at send time.
    pub timeout_offset_blocks: u64,
    pub timeout_offset_ms: u64,
    /// Latest counterparty height known at send time; packets carry
    /// `counterparty_height + timeout_offset_blocks` as their height bound.
    pub counterparty_height: u64,
}

impl Chain {
    /// A chain starts with its genesis block (height 1) committed at t=0.
    pub fn new(id: ChainId, cfg: ChainConfig, num_accounts: usize) -> Self {
        let mut accounts = Vec::with_capacity(num_accounts);
        for _ in 0..num_accounts {
            accounts.push(Account {
                fee_balance_milli: u64::MAX / 4,
                ..Default::default()
            });
        }
        Chain {
            id,
            cfg,
            height: 1,
            last_commit: SimTime::ZERO,
            accounts,
            mempool: VecDeque::new(),
            mempool_msgs: 0,
            pending_block: None,
            rpc_busy_until: SimTime::ZERO,
            ibc: IbcEndpoint::new(),
            blocks: vec![BlockRecord {
                height: 1,
                timestamp_ms: 0,
                tx_count: 0,
                transfer_msgs: 0,
                recv_msgs: 0,
                ack_msgs: 0,
                timeout_msgs: 0,
                failed_msgs: 0,
                interval_ms: 0,
                event_bytes: 0,
            }],
            tx_status: BTreeMap::new(),
            kind_counts: vec![[0; 4]],
            timeout_offset_blocks: 0,
            timeout_offset_ms: 0,
            counterparty_height: 1,
        }
    }

    pub fn fund(&mut self, account: AccountId, denom: &str, amount_milli: u64) {
        *self.accounts[account as usize].balances.entry(denom.to_string()).or_insert(0) +=
            amount_milli;
    }

    pub fn balance(&self, account: AccountId, denom: &str) -> u64 {
        self.accounts[account as usize].balances.get(denom).copied().unwrap_or(0)
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    pub fn fee_for(&self, msgs: &[ChainMsg]) -> u64 {
        let gas: u64 = msgs
            .iter()
            .map(|m| match m.kind() {
                MsgKind::Transfer => self.cfg.gas.transfer,
                MsgKind::Recv => self.cfg.gas.recv,
                MsgKind::Ack => self.cfg.gas.ack,
                MsgKind::Timeout => self.cfg.gas.timeout,
            })
            .sum();
        gas * self.cfg.gas.price_milli_per_gas
    }

    /// CheckTx: admit a transaction into the mempool. Runs at broadcast
    /// service time.
    pub fn submit_tx(&mut self, tx: Transaction) -> Result<(), RejectReason> {
        if tx.msgs.len() as u64 > self.cfg.max_msgs_per_tx {
            return Err(RejectReason::TooManyMsgs);
        }
        let account = &self.accounts[tx.account as usize];
        if account.pending.is_some() || tx.sequence != account.sequence {
            return Err(RejectReason::AccountSequenceMismatch);
        }
        if self.mempool_msgs + tx.msgs.len() as u64 > self.cfg.mempool_max_msgs {
            return Err(RejectReason::MempoolFull);
        }
        if account.fee_balance_milli < tx.fee_milli {
            return Err(RejectReason::InsufficientFeeBalance);
        }
        self.accounts[tx.account as usize].pending = Some(tx.hash);
        self.mempool_msgs += tx.msgs.len() as u64;
        self.tx_status.insert(tx.hash, TxStatus::Pending);
        self.mempool.push_back(tx);
        Ok(())
    }

    pub fn tx_status(&self, hash: TxHash) -> TxStatus {
        self.tx_status.get(&hash).copied().unwrap_or(TxStatus::Unknown)
    }

    /// Tick: snapshot the mempool into the next block. Returns the commit
    /// time; an empty mempool commits an empty block immediately.
    pub fn begin_block(&mut self, now: SimTime) -> SimTime {
        debug_assert!(self.pending_block.is_none());
        let mut txs = Vec::new();
        let mut msgs = 0u64;
        while let Some(tx) = self.mempool.front() {
            let n = tx.msgs.len() as u64;
            if msgs + n > self.cfg.block_max_msgs {
                break;
            }
            msgs += n;
            let tx = self.mempool.pop_front().unwrap();
            txs.push(tx);
        }
        self.mempool_msgs -= msgs;
        let commit_at = if msgs == 0 {
            now
        } else {
            now + SimTime::from_millis(self.cfg.block_base_overhead_ms)
                + SimTime::from_micros(self.cfg.block_per_msg_overhead_us * msgs)
        };
        self.pending_block = Some(PendingBlock { txs, commit_at });
        commit_at
    }

    /// Commit the block begun by [`Chain::begin_block`]: execute every
    /// transaction, advance account sequences, collect fees and emit the
    /// event stream payload.
    pub fn commit_block(&mut self, now: SimTime) -> BlockEvents {
        let pending = self.pending_block.take().expect("begin_block precedes commit");
        debug_assert_eq!(pending.commit_at, now);
        let interval = now.saturating_sub(self.last_commit);
        debug_assert!(
            self.height == 1
                || interval >= SimTime::from_millis(self.cfg.min_block_interval_ms),
            "block interval floor violated"
        );
        self.height += 1;
        self.last_commit = now;
        let height = self.height;

        let mut events = Vec::new();
        let mut counts = [0u64; 4];
        let mut failed = 0u64;
        let mut event_bytes = 0u64;
        let mut seen_accounts: Vec<AccountId> = Vec::with_capacity(pending.txs.len());
        for tx in &pending.txs {
            debug_assert!(
                !seen_accounts.contains(&tx.account),
                "two txs from one account in a block"
            );
            seen_accounts.push(tx.account);

            let account = &mut self.accounts[tx.account as usize];
            debug_assert_eq!(account.sequence, tx.sequence);
            account.sequence += 1;
            account.pending = None;
            account.fee_balance_milli -= tx.fee_milli;
            self.tx_status.insert(tx.hash, TxStatus::Committed { height });

            for msg in &tx.msgs {
                let kind = msg.kind();
                counts[kind as usize] += 1;
                let (seq, result) = self.execute_msg(msg, now);
                if result.is_err() {
                    failed += 1;
                    event_bytes += self.cfg.event_bytes.error;
                } else {
                    event_bytes += match kind {
                        MsgKind::Transfer => self.cfg.event_bytes.transfer,
                        MsgKind::Recv => self.cfg.event_bytes.recv,
                        MsgKind::Ack => self.cfg.event_bytes.ack,
                        MsgKind::Timeout => self.cfg.event_bytes.timeout,
                    };
                }
                events.push(MsgEvent { tx_hash: tx.hash, account: tx.account, kind, seq, result });
            }
        }

        let overflow = event_bytes > self.cfg.event_stream_cap_bytes;
        self.blocks.push(BlockRecord {
            height,
            timestamp_ms: now.as_millis(),
            tx_count: pending.txs.len() as u64,
            transfer_msgs: counts[MsgKind::Transfer as usize],
            recv_msgs: counts[MsgKind::Recv as usize],
            ack_msgs: counts[MsgKind::Ack as usize],
            timeout_msgs: counts[MsgKind::Timeout as usize],
            failed_msgs: failed,
            interval_ms: interval.as_millis(),
            event_bytes,
        });
        self.kind_counts.push(counts);

        BlockEvents { chain: self.id, height, timestamp: now, events, event_bytes, overflow }
    }

    fn execute_msg(&mut self, msg: &ChainMsg, now: SimTime) -> (PacketSeq, Result<(), MsgError>) {
        match msg {
            ChainMsg::Transfer { data } => {
                let sender = &mut self.accounts[data.sender as usize];
                let bal = sender.balances.entry(data.denom.clone()).or_insert(0);
                if *bal < data.amount_milli {
                    return (0, Err(MsgError::InsufficientBalance));
                }
                *bal -= data.amount_milli;
                let timeout_height = if self.timeout_offset_blocks > 0 {
                    self.counterparty_height + self.timeout_offset_blocks
                } else {
                    0
                };
                let timeout_timestamp = if self.timeout_offset_ms > 0 {
                    now + SimTime::from_millis(self.timeout_offset_ms)
                } else {
                    SimTime::ZERO
                };
                let packet = self.ibc.send_packet(
                    data.clone(),
                    timeout_height,
                    timeout_timestamp,
                    self.height,
                    now,
                );
                (packet.sequence, Ok(()))
            }
            ChainMsg::Recv { packet } => match self.ibc.recv_packet(packet, self.height, now) {
                Ok(()) => {
                    let vd = voucher_denom(&packet.data.denom);
                    *self.accounts[packet.data.receiver as usize]
                        .balances
                        .entry(vd)
                        .or_insert(0) += packet.data.amount_milli;
                    (packet.sequence, Ok(()))
                }
                Err(RecvError::TimeoutElapsed) => (packet.sequence, Err(MsgError::TimeoutElapsed)),
                Err(RecvError::Duplicate) => (packet.sequence, Err(MsgError::Redundant)),
            },
            ChainMsg::Ack { seq } => match self.ibc.acknowledge_packet(*seq) {
                Ok(_) => (*seq, Ok(())),
                Err(AckError::UnknownCommitment) => (*seq, Err(MsgError::Redundant)),
            },
            ChainMsg::Timeout { seq, dest_height, dest_time, dest_has_receipt } => {
                match self.ibc.timeout_packet(*seq, *dest_has_receipt, *dest_height, *dest_time) {
                    Ok(packet) => {
                        *self.accounts[packet.data.sender as usize]
                            .balances
                            .entry(packet.data.denom.clone())
                            .or_insert(0) += packet.data.amount_milli;
                        (*seq, Ok(()))
                    }
                    Err(TimeoutError::UnknownCommitment) => (*seq, Err(MsgError::Redundant)),
                    Err(TimeoutError::PacketDelivered) | Err(TimeoutError::NotElapsed) => {
                        (*seq, Err(MsgError::NotRefundable))
                    }
                }
            }
        }
    }

    /// Messages of `kind` committed at `height`, for the RPC scan model.
    pub fn kind_count_at(&self, height: u64, kind: MsgKind) -> u64 {
        self.kind_counts
            .get((height - 1) as usize)
            .map(|c| c[kind as usize])
            .unwrap_or(0)
    }

    pub fn total_msgs_at(&self, height: u64) -> u64 {
        self.kind_counts
            .get((height - 1) as usize)
            .map(|c| c.iter().sum())
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SOURCE;

    fn chain(accounts: usize) -> Chain {
        let mut c = Chain::new(SOURCE, ChainConfig::default(), accounts);
        c.timeout_offset_blocks = 200;
        c.counterparty_height = 1;
        for a in 0..accounts as u32 {
            c.fund(a, "atom", 1_000_000);
        }
        c
    }

    fn transfer_tx(c: &Chain, hash: TxHash, account: AccountId, seq: u64, n: usize) -> Transaction {
        let msgs: Vec<ChainMsg> = (0..n)
            .map(|_| ChainMsg::Transfer {
                data: PacketData {
                    sender: account,
                    receiver: 0,
                    denom: "atom".into(),
                    amount_milli: 1,
                },
            })
            .collect();
        let fee = c.fee_for(&msgs);
        Transaction { hash, account, sequence: seq, msgs, fee_milli: fee }
    }

    #[test]
    fn first_tx_from_fresh_account_accepted() {
        let mut c = chain(1);
        let tx = transfer_tx(&c, 1, 0, 0, 1);
        assert!(c.submit_tx(tx).is_ok());
    }

    #[test]
    fn second_tx_before_commit_rejected_with_sequence_mismatch() {
        let mut c = chain(1);
        c.submit_tx(transfer_tx(&c, 1, 0, 0, 1)).unwrap();
        let err = c.submit_tx(transfer_tx(&c, 2, 0, 1, 1)).unwrap_err();
        assert_eq!(err, RejectReason::AccountSequenceMismatch);
    }

    #[test]
    fn mempool_full_rejects() {
        let mut c = chain(2);
        c.cfg.mempool_max_msgs = 1;
        c.submit_tx(transfer_tx(&c, 1, 0, 0, 1)).unwrap();
        let err = c.submit_tx(transfer_tx(&c, 2, 1, 0, 1)).unwrap_err();
        assert_eq!(err, RejectReason::MempoolFull);
    }

    #[test]
    fn fifty_accounts_commit_5000_transfers_in_one_block() {
        let mut c = chain(50);
        for a in 0..50u32 {
            c.submit_tx(transfer_tx(&c, a as u64 + 1, a, 0, 100)).unwrap();
        }
        let tick = SimTime::from_millis(5_000);
        let commit_at = c.begin_block(tick);
        let ev = {
            // commit happens at the computed time
            assert!(commit_at > tick);
            c.commit_block(commit_at)
        };
        assert_eq!(ev.events.len(), 5_000);
        assert!(ev.events.iter().all(|e| e.result.is_ok()));
        assert_eq!(c.blocks.last().unwrap().transfer_msgs, 5_000);
        assert_eq!(c.ibc.commitment_count(), 5_000);
        assert_eq!(c.ibc.escrow_total(), 5_000);
    }

    #[test]
    fn empty_mempool_commits_empty_block_at_tick() {
        let mut c = chain(1);
        let tick = SimTime::from_millis(5_000);
        let commit_at = c.begin_block(tick);
        assert_eq!(commit_at, tick);
        let ev = c.commit_block(commit_at);
        assert!(ev.events.is_empty());
        assert_eq!(c.blocks.last().unwrap().interval_ms, 5_000);
    }

    #[test]
    fn committed_fee_equals_gas_times_price() {
        let mut c = chain(1);
        let tx = transfer_tx(&c, 1, 0, 0, 100);
        // 100 transfer messages at 36,692 gas and 10 milli per gas unit.
        assert_eq!(tx.fee_milli, 100 * 36_692 * 10);
        let before = c.accounts[0].fee_balance_milli;
        c.submit_tx(tx).unwrap();
        let commit_at = c.begin_block(SimTime::from_millis(5_000));
        c.commit_block(commit_at);
        assert_eq!(before - c.accounts[0].fee_balance_milli, 100 * 36_692 * 10);
    }

    #[test]
    fn event_overflow_flag_set_above_cap() {
        let mut c = chain(1);
        c.cfg.event_stream_cap_bytes = 150;
        c.submit_tx(transfer_tx(&c, 1, 0, 0, 1)).unwrap();
        let commit_at = c.begin_block(SimTime::from_millis(5_000));
        let ev = c.commit_block(commit_at);
        // one transfer event of 200 bytes > 150 cap
        assert!(ev.overflow);
    }

    #[test]
    fn insufficient_balance_fails_only_that_message() {
        let mut c = chain(1);
        c.accounts[0].balances.insert("atom".into(), 1);
        let msgs = vec![
            ChainMsg::Transfer {
                data: PacketData { sender: 0, receiver: 0, denom: "atom".into(), amount_milli: 1 },
            },
            ChainMsg::Transfer {
                data: PacketData { sender: 0, receiver: 0, denom: "atom".into(), amount_milli: 5 },
            },
        ];
        let fee = c.fee_for(&msgs);
        c.submit_tx(Transaction { hash: 1, account: 0, sequence: 0, msgs, fee_milli: fee })
            .unwrap();
        let commit_at = c.begin_block(SimTime::from_millis(5_000));
        let ev = c.commit_block(commit_at);
        assert!(ev.events[0].result.is_ok());
        assert_eq!(ev.events[1].result, Err(MsgError::InsufficientBalance));
        assert_eq!(c.ibc.commitment_count(), 1);
    }
}
