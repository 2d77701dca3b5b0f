//! Workload generation and submission: deterministic per-window schedules
//! driven into the source chain through its RPC endpoint, with per-account
//! confirmation polling.
//!
//! A window opens when the previous source block commits. Submission is
//! open-loop: the scheduled transactions are broadcast at the window open
//! whether or not earlier ones confirmed, and the chain's sequence check
//! rejects an account whose previous transaction is still pending. Failures
//! are recorded and never retried within the run.

use serde::Serialize;

use crate::chain::{ChainMsg, RejectReason, Transaction, TxHash, TxStatus};
use crate::config::{WorkloadSpec, SOURCE};
use crate::engine::SimTime;
use crate::ibc::PacketData;
use crate::rpc::{QueryTag, RpcQuery};
use crate::sim::{Core, Event, Issuer};

/// One scheduled transaction: account slot and its message count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledTx {
    pub account_slot: u32,
    pub msgs: u64,
}

/// Deterministic submission plan: `windows[k]` is submitted when source
/// block `k + 1` commits (window 0 opens at simulation start).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmissionSchedule {
    pub windows: Vec<Vec<ScheduledTx>>,
}

impl SubmissionSchedule {
    pub fn total_transfers(&self) -> u64 {
        self.windows.iter().flatten().map(|t| t.msgs).sum()
    }
}

/// Pure function of the spec: no randomness, no chain state.
pub fn build_schedule(spec: &WorkloadSpec, min_block_interval_ms: u64) -> SubmissionSchedule {
    let mut windows: Vec<Vec<ScheduledTx>> = Vec::new();
    let split_into_txs = |count: u64| -> Vec<ScheduledTx> {
        let mut txs = Vec::new();
        let mut left = count;
        let mut slot = 0u32;
        while left > 0 {
            let n = left.min(spec.msgs_per_tx);
            txs.push(ScheduledTx { account_slot: slot, msgs: n });
            left -= n;
            slot += 1;
        }
        txs
    };
    match spec.shape {
        crate::config::WorkloadShape::Rate { input_rate_rps } => {
            let per_window = input_rate_rps * min_block_interval_ms / 1_000;
            for _ in 0..spec.duration_blocks {
                windows.push(split_into_txs(per_window));
            }
        }
        crate::config::WorkloadShape::Spread { total_transfers, spread_blocks } => {
            let base = total_transfers / spread_blocks;
            let remainder = total_transfers % spread_blocks;
            for w in 0..spread_blocks {
                // earlier windows take the extra transfer
                let count = base + if w < remainder { 1 } else { 0 };
                windows.push(split_into_txs(count));
            }
        }
    }
    if spec.trailing_singles > 0 {
        for _ in 0..spec.trailing_gap_blocks {
            windows.push(Vec::new());
        }
        let singles: Vec<ScheduledTx> = (0..spec.trailing_singles)
            .map(|i| ScheduledTx { account_slot: i as u32, msgs: 1 })
            .collect();
        windows.push(singles);
    }
    SubmissionSchedule { windows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitOutcome {
    Submitted,
    Rejected,
    Confirmed,
    NoConfirmation,
}

/// Workload log row: (time_ms, account, tx_size_msgs, outcome).
#[derive(Debug, Clone, Serialize)]
pub struct WorkloadLogEvent {
    pub time_ms: u64,
    pub account: u32,
    pub tx_hash: TxHash,
    pub msgs: u64,
    pub outcome: SubmitOutcome,
    pub reason: Option<RejectReason>,
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct WorkloadCounters {
    pub requested: u64,
    pub submitted: u64,
    pub rejected: u64,
    pub confirmed: u64,
    pub no_confirmation: u64,
}

#[derive(Debug)]
struct WlAccount {
    /// Chain account index on the source chain.
    chain_account: u32,
    seq_view: u64,
    pending: Option<(TxHash, SimTime, u64)>,
    needs_resync: bool,
    /// Submissions waiting for this account's previous transaction to
    /// confirm (the CLI blocks per account rather than burning a guaranteed
    /// sequence mismatch). Message counts, FIFO.
    deferred: std::collections::VecDeque<u64>,
}

pub struct Workload {
    spec: WorkloadSpec,
    schedule: SubmissionSchedule,
    accounts: Vec<WlAccount>,
    next_window: usize,
    pub counters: WorkloadCounters,
    tx_msgs: std::collections::BTreeMap<TxHash, (u32, u64)>,
}

impl Workload {
    pub fn new(spec: WorkloadSpec, min_block_interval_ms: u64, first_chain_account: u32) -> Self {
        let schedule = build_schedule(&spec, min_block_interval_ms);
        let n = spec.effective_accounts(min_block_interval_ms);
        let accounts = (0..n)
            .map(|i| WlAccount {
                chain_account: first_chain_account + i,
                seq_view: 0,
                pending: None,
                needs_resync: false,
                deferred: std::collections::VecDeque::new(),
            })
            .collect();
        Workload {
            spec,
            schedule,
            accounts,
            next_window: 0,
            counters: WorkloadCounters::default(),
            tx_msgs: std::collections::BTreeMap::new(),
        }
    }

    pub fn num_accounts(&self) -> u32 {
        self.accounts.len() as u32
    }

    pub fn windows_remaining(&self) -> usize {
        self.schedule.windows.len().saturating_sub(self.next_window)
    }

    pub fn is_quiescent(&self) -> bool {
        self.windows_remaining() == 0
            && self.accounts.iter().all(|a| a.pending.is_none() && a.deferred.is_empty())
    }

    /// A source block committed: open the next submission window.
    pub fn on_source_block(&mut self, core: &mut Core) {
        if self.next_window >= self.schedule.windows.len() {
            return;
        }
        let window = self.schedule.windows[self.next_window].clone();
        self.next_window += 1;
        for stx in window {
            self.submit(core, stx);
        }
    }

    fn submit(&mut self, core: &mut Core, stx: ScheduledTx) {
        self.counters.requested += stx.msgs;
        let slot = stx.account_slot as usize;
        if self.accounts[slot].pending.is_some() {
            self.accounts[slot].deferred.push_back(stx.msgs);
            return;
        }
        self.fire(core, stx.account_slot, stx.msgs);
    }

    fn fire(&mut self, core: &mut Core, account_slot: u32, msgs: u64) {
        let slot = account_slot as usize;
        if self.accounts[slot].needs_resync {
            // CLI refetches the on-chain account sequence before reuse.
            let seq = core.account_sequence(SOURCE, self.accounts[slot].chain_account);
            self.accounts[slot].seq_view = seq;
            self.accounts[slot].needs_resync = false;
        }
        let stx = ScheduledTx { account_slot, msgs };
        let account = &self.accounts[slot];
        let sender = account.chain_account;
        let msgs: Vec<ChainMsg> = (0..stx.msgs)
            .map(|_| ChainMsg::Transfer {
                data: PacketData {
                    sender,
                    receiver: 0,
                    denom: self.spec.denom.clone(),
                    amount_milli: self.spec.amount_milli,
                },
            })
            .collect();
        let fee = core.fee_for(SOURCE, &msgs);
        let hash = core.next_tx_hash();
        let tx = Transaction { hash, account: sender, sequence: account.seq_view, msgs, fee_milli: fee };
        self.tx_msgs.insert(hash, (stx.account_slot, stx.msgs));
        core.issue_query(
            Issuer::Workload,
            SOURCE,
            RpcQuery::BroadcastTx { tx, tag: QueryTag { batch: stx.account_slot as u64, chunk: 0 } },
        );
    }

    pub fn on_broadcast_result(
        &mut self,
        core: &mut Core,
        hash: TxHash,
        result: Result<(), RejectReason>,
    ) {
        let Some(&(slot, msgs)) = self.tx_msgs.get(&hash) else { return };
        let account = &mut self.accounts[slot as usize];
        match result {
            Ok(()) => {
                self.counters.submitted += msgs;
                account.pending = Some((hash, core.now(), msgs));
                core.log_workload(WorkloadLogEvent {
                    time_ms: core.now().as_millis(),
                    account: account.chain_account,
                    tx_hash: hash,
                    msgs,
                    outcome: SubmitOutcome::Submitted,
                    reason: None,
                });
                // The submission side also logs the transfer broadcast for
                // the relayer-side lifecycle (CLI-bound submission).
                core.log_relay(crate::relayer::RelayLogEvent {
                    time_ms: core.now().as_millis(),
                    relayer: crate::relayer::WORKLOAD_ACTOR,
                    step: crate::relayer::RelayStep::TransferBroadcast,
                    seq: 0,
                    tx_hash: hash,
                    ok: true,
                    error: None,
                });
                core.schedule_in(
                    SimTime::from_millis(self.spec.poll_period_ms),
                    Event::WorkloadPoll { slot },
                );
            }
            Err(reason) => {
                self.counters.rejected += msgs;
                if reason == RejectReason::AccountSequenceMismatch {
                    account.needs_resync = true;
                }
                core.log_workload(WorkloadLogEvent {
                    time_ms: core.now().as_millis(),
                    account: account.chain_account,
                    tx_hash: hash,
                    msgs,
                    outcome: SubmitOutcome::Rejected,
                    reason: Some(reason),
                });
                self.fire_next_deferred(core, slot);
            }
        }
    }

    fn fire_next_deferred(&mut self, core: &mut Core, slot: u32) {
        if let Some(msgs) = self.accounts[slot as usize].deferred.pop_front() {
            self.fire(core, slot, msgs);
        }
    }

    pub fn on_poll(&mut self, core: &mut Core, slot: u32) {
        let account = &self.accounts[slot as usize];
        let Some((hash, _, _)) = account.pending else { return };
        core.issue_query(
            Issuer::Workload,
            SOURCE,
            RpcQuery::ConfirmTx { hash, tag: QueryTag { batch: slot as u64, chunk: 0 } },
        );
    }

    pub fn on_confirm_result(&mut self, core: &mut Core, hash: TxHash, status: TxStatus) {
        let Some(&(slot, msgs)) = self.tx_msgs.get(&hash) else { return };
        let account = &mut self.accounts[slot as usize];
        let Some((pending_hash, since, _)) = account.pending else { return };
        if pending_hash != hash {
            return;
        }
        match status {
            TxStatus::Committed { .. } => {
                account.pending = None;
                account.seq_view += 1;
                self.counters.confirmed += msgs;
                core.log_workload(WorkloadLogEvent {
                    time_ms: core.now().as_millis(),
                    account: account.chain_account,
                    tx_hash: hash,
                    msgs,
                    outcome: SubmitOutcome::Confirmed,
                    reason: None,
                });
                self.fire_next_deferred(core, slot);
            }
            _ => {
                let waited = core.now().saturating_sub(since);
                if waited >= SimTime::from_millis(self.spec.confirm_timeout_ms) {
                    account.pending = None;
                    account.needs_resync = true;
                    self.counters.no_confirmation += msgs;
                    core.log_workload(WorkloadLogEvent {
                        time_ms: core.now().as_millis(),
                        account: account.chain_account,
                        tx_hash: hash,
                        msgs,
                        outcome: SubmitOutcome::NoConfirmation,
                        reason: None,
                    });
                    self.fire_next_deferred(core, slot);
                } else {
                    core.schedule_in(
                        SimTime::from_millis(self.spec.poll_period_ms),
                        Event::WorkloadPoll { slot },
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorkloadShape;

    fn spec(shape: WorkloadShape) -> WorkloadSpec {
        WorkloadSpec { shape, ..WorkloadSpec::default() }
    }

    #[test]
    fn schedule_5000_in_one_block_is_50_txs() {
        let s = spec(WorkloadShape::Spread { total_transfers: 5_000, spread_blocks: 1 });
        let sched = build_schedule(&s, 5_000);
        assert_eq!(sched.windows.len(), 1);
        assert_eq!(sched.windows[0].len(), 50);
        assert!(sched.windows[0].iter().all(|t| t.msgs == 100));
        assert_eq!(sched.total_transfers(), 5_000);
    }

    #[test]
    fn spread_16_splits_312_or_313_earlier_windows_take_extra() {
        let s = spec(WorkloadShape::Spread { total_transfers: 5_000, spread_blocks: 16 });
        let sched = build_schedule(&s, 5_000);
        let sizes: Vec<u64> =
            sched.windows.iter().map(|w| w.iter().map(|t| t.msgs).sum()).collect();
        assert_eq!(sizes.len(), 16);
        // 5000 = 16*312 + 8: first 8 windows take 313.
        assert!(sizes[..8].iter().all(|&s| s == 313));
        assert!(sizes[8..].iter().all(|&s| s == 312));
        assert_eq!(sizes.iter().sum::<u64>(), 5_000);
    }

    #[test]
    fn rate_20_rps_gives_100_per_window_5000_total() {
        let mut s = spec(WorkloadShape::Rate { input_rate_rps: 20 });
        s.duration_blocks = 50;
        let sched = build_schedule(&s, 5_000);
        assert_eq!(sched.windows.len(), 50);
        assert!(sched.windows.iter().all(|w| w.iter().map(|t| t.msgs).sum::<u64>() == 100));
        assert_eq!(sched.total_transfers(), 5_000);
    }

    #[test]
    fn schedule_is_deterministic() {
        let s = spec(WorkloadShape::Spread { total_transfers: 777, spread_blocks: 7 });
        assert_eq!(build_schedule(&s, 5_000), build_schedule(&s, 5_000));
    }

    #[test]
    fn no_window_assigns_two_txs_to_one_account() {
        let s = spec(WorkloadShape::Rate { input_rate_rps: 1_000 });
        let sched = build_schedule(&s, 5_000);
        for w in &sched.windows {
            let mut slots: Vec<u32> = w.iter().map(|t| t.account_slot).collect();
            let before = slots.len();
            slots.dedup();
            assert_eq!(before, slots.len());
        }
    }

    #[test]
    fn empty_schedule_from_zero_trailing() {
        let s = spec(WorkloadShape::Spread { total_transfers: 1, spread_blocks: 1 });
        let sched = build_schedule(&s, 5_000);
        assert_eq!(sched.windows.len(), 1);
        assert_eq!(sched.windows[0], vec![ScheduledTx { account_slot: 0, msgs: 1 }]);
    }
}
