//! RPC query kinds and the serialized service-time model.
//!
//! Queries occupy the chain's single server for their full service time, in
//! FIFO arrival order. Packet-data pulls are issued per transaction chunk;
//! once a block holds more same-kind messages than the pagination threshold,
//! each chunk query rescans a slice of the block, which is what makes large
//! blocks disproportionately expensive to drain.

use crate::chain::{Chain, MsgKind, Transaction, TxHash, TxStatus};
use crate::config::RpcConfig;
use crate::engine::SimTime;
use crate::ibc::{Packet, PacketSeq};

/// Which packet-data flow a pull belongs to; determines the scan rate and
/// the message kind whose block population drives pagination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PullFlow {
    /// Transfer payloads pulled from the source chain.
    TransferData,
    /// Acknowledgement data pulled from the destination chain.
    AckData,
}

impl PullFlow {
    pub fn scanned_kind(self) -> MsgKind {
        match self {
            PullFlow::TransferData => MsgKind::Transfer,
            PullFlow::AckData => MsgKind::Recv,
        }
    }
}

/// Issuer-side correlation tag echoed back on responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueryTag {
    pub batch: u64,
    pub chunk: u32,
}

#[derive(Debug)]
pub enum RpcQuery {
    BroadcastTx { tx: Transaction, tag: QueryTag },
    ConfirmTx { hash: TxHash, tag: QueryTag },
    /// One chunk of a relayer data pull against a committed block.
    PullPacketData { flow: PullFlow, height: u64, chunk_msgs: u64, tag: QueryTag },
    /// Full block content query (analysis-side data connector).
    PullBlockMsgs { height: u64 },
    /// Targeted scan of open packet commitments (packet clearing).
    CommitmentScan { limit: u64, tag: QueryTag },
    /// Targeted receipt/ack lookup for specific sequences plus the chain's
    /// current height/time view (doubles as a non-receipt proof).
    ReceiptScan { seqs: Vec<PacketSeq>, tag: QueryTag },
}

#[derive(Debug)]
pub enum RpcReply {
    BroadcastResult {
        hash: TxHash,
        tag: QueryTag,
        result: Result<(), crate::chain::RejectReason>,
    },
    ConfirmResult {
        hash: TxHash,
        tag: QueryTag,
        status: TxStatus,
    },
    PullResult {
        flow: PullFlow,
        tag: QueryTag,
    },
    BlockMsgs {
        height: u64,
        msg_count: u64,
    },
    Commitments {
        tag: QueryTag,
        packets: Vec<Packet>,
        truncated: bool,
    },
    Receipts {
        tag: QueryTag,
        /// (sequence, has_receipt, acked_on_source_known) per requested seq.
        entries: Vec<(PacketSeq, bool)>,
        view_height: u64,
        view_time: SimTime,
    },
}

/// Service time of `query` against the chain's current state.
pub fn service_time(chain: &Chain, query: &RpcQuery) -> SimTime {
    let rpc: &RpcConfig = &chain.cfg.rpc;
    let us = match query {
        RpcQuery::BroadcastTx { tx, .. } => {
            rpc.broadcast_base_us + rpc.broadcast_per_msg_us * tx.msgs.len() as u64
        }
        RpcQuery::ConfirmTx { .. } => rpc.confirm_base_us,
        RpcQuery::PullPacketData { flow, height, chunk_msgs, .. } => {
            let rate = match flow {
                PullFlow::TransferData => rpc.pull_per_transfer_msg_us,
                PullFlow::AckData => rpc.pull_per_recv_msg_us,
            };
            let kind_count = chain.kind_count_at(*height, flow.scanned_kind());
            let scanned = if kind_count <= rpc.pull_page_threshold_msgs {
                *chunk_msgs
            } else {
                (kind_count * rpc.pull_scan_percent / 100)
                    .max(*chunk_msgs)
                    .min(rpc.pull_scan_cap_msgs)
            };
            rpc.pull_base_us + rate * scanned
        }
        RpcQuery::PullBlockMsgs { height } => {
            let transfers = chain.kind_count_at(*height, MsgKind::Transfer);
            let recvs = chain.kind_count_at(*height, MsgKind::Recv)
                + chain.kind_count_at(*height, MsgKind::Ack)
                + chain.kind_count_at(*height, MsgKind::Timeout);
            rpc.pull_base_us
                + rpc.pull_per_transfer_msg_us * transfers
                + rpc.pull_per_recv_msg_us * recvs
        }
        RpcQuery::CommitmentScan { limit, .. } => {
            let n = (chain.ibc.commitment_count() as u64).min(*limit);
            rpc.proof_base_us + rpc.proof_per_packet_us * n
        }
        RpcQuery::ReceiptScan { seqs, .. } => {
            rpc.proof_base_us + rpc.proof_per_packet_us * seqs.len() as u64
        }
    };
    SimTime::from_micros(us)
}

/// Execute `query` at service completion time, producing the reply.
pub fn execute(chain: &mut Chain, query: RpcQuery, _now: SimTime) -> RpcReply {
    match query {
        RpcQuery::BroadcastTx { tx, tag } => {
            let hash = tx.hash;
            let result = chain.submit_tx(tx);
            RpcReply::BroadcastResult { hash, tag, result }
        }
        RpcQuery::ConfirmTx { hash, tag } => {
            RpcReply::ConfirmResult { hash, tag, status: chain.tx_status(hash) }
        }
        RpcQuery::PullPacketData { flow, tag, .. } => RpcReply::PullResult { flow, tag },
        RpcQuery::PullBlockMsgs { height } => {
            RpcReply::BlockMsgs { height, msg_count: chain.total_msgs_at(height) }
        }
        RpcQuery::CommitmentScan { limit, tag } => {
            let mut packets: Vec<Packet> = Vec::new();
            let mut truncated = false;
            for p in chain.ibc.open_commitments() {
                if packets.len() as u64 >= limit {
                    truncated = true;
                    break;
                }
                packets.push(p.clone());
            }
            RpcReply::Commitments { tag, packets, truncated }
        }
        RpcQuery::ReceiptScan { seqs, tag } => {
            let entries =
                seqs.iter().map(|&s| (s, chain.ibc.has_receipt(s))).collect();
            RpcReply::Receipts {
                tag,
                entries,
                view_height: chain.height,
                view_time: chain.last_commit,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::ChainMsg;
    use crate::config::{ChainConfig, SOURCE};
    use crate::ibc::PacketData;

    fn chain_with_block(transfers: u64, recvs_as_acks: bool) -> Chain {
        let mut cfg = ChainConfig::default();
        cfg.block_max_msgs = 1_000_000;
        cfg.mempool_max_msgs = 1_000_000;
        let accounts = transfers.div_ceil(100) as usize;
        let mut c = Chain::new(SOURCE, cfg, accounts.max(1));
        c.timeout_offset_blocks = 200;
        let mut hash = 1u64;
        let mut left = transfers;
        for a in 0..accounts as u32 {
            let n = left.min(100);
            left -= n;
            c.fund(a, "atom", 10 * n);
            let msgs: Vec<ChainMsg> = (0..n)
                .map(|_| ChainMsg::Transfer {
                    data: PacketData {
                        sender: a,
                        receiver: 0,
                        denom: "atom".into(),
                        amount_milli: 1,
                    },
                })
                .collect();
            let fee = c.fee_for(&msgs);
            c.submit_tx(Transaction { hash, account: a, sequence: 0, msgs, fee_milli: fee })
                .unwrap();
            hash += 1;
        }
        let commit_at = c.begin_block(SimTime::from_millis(5_000));
        c.commit_block(commit_at);
        let _ = recvs_as_acks;
        c
    }

    #[test]
    fn confirm_with_base_5ms_on_idle_server_takes_5ms() {
        let mut c = chain_with_block(1, false);
        c.cfg.rpc.confirm_base_us = 5_000;
        let svc = service_time(&c, &RpcQuery::ConfirmTx { hash: 1, tag: QueryTag::default() });
        assert_eq!(svc.as_millis(), 5);
    }

    #[test]
    fn block_content_query_of_2000_transfers_costs_about_2_9s() {
        let c = chain_with_block(2_000, false);
        let svc = service_time(&c, &RpcQuery::PullBlockMsgs { height: 2 });
        // 50ms base + 1.45ms x 2000 = 2,950ms
        assert_eq!(svc.as_millis(), 2_950);
    }

    #[test]
    fn small_block_pulls_resolve_indexed() {
        let c = chain_with_block(500, false);
        let svc = service_time(
            &c,
            &RpcQuery::PullPacketData {
                flow: PullFlow::TransferData,
                height: 2,
                chunk_msgs: 100,
                tag: QueryTag::default(),
            },
        );
        // below the pagination threshold: base + rate x chunk
        assert_eq!(svc.as_millis(), 50 + 145);
    }

    #[test]
    fn large_block_pulls_pay_the_scan_cap() {
        let c = chain_with_block(5_000, false);
        let svc = service_time(
            &c,
            &RpcQuery::PullPacketData {
                flow: PullFlow::TransferData,
                height: 2,
                chunk_msgs: 100,
                tag: QueryTag::default(),
            },
        );
        // 5,000 x 40% = 2,000, capped at 1,500 scanned messages
        assert_eq!(svc.as_millis(), 50 + 1_450 * 1_500 / 1_000);
    }
}
