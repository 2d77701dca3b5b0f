//! IBC channel/packet state machine: commitments, receipts,
//! acknowledgements, timeouts and escrow/voucher token accounting.
//!
//! One unordered channel connects the two chains; each chain holds one
//! [`IbcEndpoint`]. The source endpoint escrows sent amounts and tracks
//! packet commitments; the destination endpoint records receipts exactly
//! once and mints channel-qualified vouchers.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::engine::SimTime;

/// Per-channel packet sequence. Sequence 1 is the first packet.
pub type PacketSeq = u64;

pub const CHANNEL_ID: &str = "channel-0";

/// Fungible token transfer payload carried by a packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketData {
    pub sender: u32,
    pub receiver: u32,
    pub denom: String,
    pub amount_milli: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub sequence: PacketSeq,
    pub data: PacketData,
    /// Destination-chain height bound; the packet cannot be received in a
    /// block at a greater height.
    pub timeout_height: u64,
    /// Destination-chain timestamp bound (0 = unset).
    pub timeout_timestamp: SimTime,
    pub send_height: u64,
    pub send_time: SimTime,
}

impl Packet {
    pub fn timed_out_at(&self, dest_height: u64, dest_time: SimTime) -> bool {
        if self.timeout_height > 0 && dest_height > self.timeout_height {
            return true;
        }
        if self.timeout_timestamp > SimTime::ZERO && dest_time > self.timeout_timestamp {
            return true;
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RecvError {
    /// Timeout bound already elapsed on the destination; no receipt written.
    TimeoutElapsed,
    /// Receipt already exists; duplicate delivery by an uncoordinated
    /// relayer.
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AckError {
    /// Commitment already deleted (acked or timed out); redundant delivery.
    UnknownCommitment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TimeoutError {
    UnknownCommitment,
    /// Receipt exists on the destination: the packet was delivered.
    PacketDelivered,
    NotElapsed,
}

/// End-of-run ledger audit row, exported per channel end.
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct LedgerAudit {
    pub escrow_total: u64,
    pub voucher_total: u64,
    pub refunded_total: u64,
    pub open_commitments: u64,
    pub open_commitment_amount: u64,
}

/// Channel-end state on one chain. A chain acts as the source role for
/// packets it sends and the destination role for packets it receives.
#[derive(Debug, Default)]
pub struct IbcEndpoint {
    next_sequence: PacketSeq,
    /// Outgoing packets with undeleted commitments, keyed by sequence.
    commitments: BTreeMap<PacketSeq, Packet>,
    /// Sequences received on this chain (destination role).
    receipts: BTreeSet<PacketSeq>,
    /// Acks written on this chain, pending relay back to the source.
    acks_written: BTreeSet<PacketSeq>,
    /// Sequences whose commitment was deleted by an acknowledgement.
    acked: BTreeSet<PacketSeq>,
    /// Sequences refunded through the timeout path.
    refunded: BTreeSet<PacketSeq>,
    /// Escrowed amount per denom (source role).
    escrow: BTreeMap<String, u64>,
    /// Voucher supply per voucher denom (destination role).
    vouchers: BTreeMap<String, u64>,
    refunded_amount: u64,
}

/// Voucher denomination for tokens that arrived through a channel; tokens
/// from different channels are distinct denominations.
pub fn voucher_denom(denom: &str) -> String {
    format!("ibc/{CHANNEL_ID}/{denom}")
}

impl IbcEndpoint {
    pub fn new() -> Self {
        IbcEndpoint { next_sequence: 1, ..Default::default() }
    }

    pub fn next_sequence(&self) -> PacketSeq {
        self.next_sequence
    }

    /// Source role: escrow the amount and record the packet commitment.
    /// Balance sufficiency is checked by the caller (account module) before
    /// funds move.
    pub fn send_packet(
        &mut self,
        data: PacketData,
        timeout_height: u64,
        timeout_timestamp: SimTime,
        send_height: u64,
        send_time: SimTime,
    ) -> Packet {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        *self.escrow.entry(data.denom.clone()).or_insert(0) += data.amount_milli;
        let packet =
            Packet { sequence, data, timeout_height, timeout_timestamp, send_height, send_time };
        self.commitments.insert(sequence, packet.clone());
        packet
    }

    /// Destination role: record the receipt and mint the voucher. Exactly
    /// one receipt may ever exist per sequence.
    pub fn recv_packet(
        &mut self,
        packet: &Packet,
        at_height: u64,
        at_time: SimTime,
    ) -> Result<(), RecvError> {
        if packet.timed_out_at(at_height, at_time) {
            return Err(RecvError::TimeoutElapsed);
        }
        if self.receipts.contains(&packet.sequence) {
            return Err(RecvError::Duplicate);
        }
        self.receipts.insert(packet.sequence);
        self.acks_written.insert(packet.sequence);
        let vd = voucher_denom(&packet.data.denom);
        *self.vouchers.entry(vd).or_insert(0) += packet.data.amount_milli;
        Ok(())
    }

    /// Source role: the ack round-trip completed; delete the commitment.
    pub fn acknowledge_packet(&mut self, sequence: PacketSeq) -> Result<Packet, AckError> {
        match self.commitments.remove(&sequence) {
            Some(p) => {
                self.acked.insert(sequence);
                Ok(p)
            }
            None => Err(AckError::UnknownCommitment),
        }
    }

    /// Source role: refund an expired undelivered packet. The caller
    /// supplies the destination view proving non-receipt and elapsed
    /// timeout.
    pub fn timeout_packet(
        &mut self,
        sequence: PacketSeq,
        dest_has_receipt: bool,
        dest_height: u64,
        dest_time: SimTime,
    ) -> Result<Packet, TimeoutError> {
        let packet = match self.commitments.get(&sequence) {
            Some(p) => p.clone(),
            None => return Err(TimeoutError::UnknownCommitment),
        };
        if dest_has_receipt {
            return Err(TimeoutError::PacketDelivered);
        }
        if !packet.timed_out_at(dest_height, dest_time) {
            return Err(TimeoutError::NotElapsed);
        }
        self.commitments.remove(&sequence);
        let e = self
            .escrow
            .get_mut(&packet.data.denom)
            .expect("escrow entry exists for committed packet");
        *e -= packet.data.amount_milli;
        self.refunded.insert(sequence);
        self.refunded_amount += packet.data.amount_milli;
        Ok(packet)
    }

    pub fn commitment(&self, sequence: PacketSeq) -> Option<&Packet> {
        self.commitments.get(&sequence)
    }

    pub fn open_commitments(&self) -> impl Iterator<Item = &Packet> {
        self.commitments.values()
    }

    pub fn commitment_count(&self) -> usize {
        self.commitments.len()
    }

    pub fn has_receipt(&self, sequence: PacketSeq) -> bool {
        self.receipts.contains(&sequence)
    }

    pub fn receipt_count(&self) -> usize {
        self.receipts.len()
    }

    pub fn is_acked(&self, sequence: PacketSeq) -> bool {
        self.acked.contains(&sequence)
    }

    pub fn acked_count(&self) -> usize {
        self.acked.len()
    }

    pub fn is_refunded(&self, sequence: PacketSeq) -> bool {
        self.refunded.contains(&sequence)
    }

    pub fn escrow_total(&self) -> u64 {
        self.escrow.values().sum()
    }

    pub fn voucher_total(&self) -> u64 {
        self.vouchers.values().sum()
    }

    pub fn voucher_supply(&self, voucher_denom: &str) -> u64 {
        self.vouchers.get(voucher_denom).copied().unwrap_or(0)
    }

    pub fn audit(&self) -> LedgerAudit {
        LedgerAudit {
            escrow_total: self.escrow_total(),
            voucher_total: self.voucher_total(),
            refunded_total: self.refunded_amount,
            open_commitments: self.commitments.len() as u64,
            open_commitment_amount: self
                .commitments
                .values()
                .map(|p| p.data.amount_milli)
                .sum(),
        }
    }
}

/// Conservation identity across the two channel ends: everything escrowed
/// on the source equals minted vouchers plus the amounts of packets that
/// are neither received nor refunded. A received-but-unacked packet keeps
/// its commitment open, but its value already lives in the voucher supply.
pub fn conservation_holds(source: &IbcEndpoint, dest: &IbcEndpoint) -> bool {
    let escrow = source.escrow_total();
    let undelivered: u64 = source
        .commitments
        .values()
        .filter(|p| !dest.receipts.contains(&p.sequence))
        .map(|p| p.data.amount_milli)
        .sum();
    let vouchers = dest.voucher_total();
    escrow == vouchers + undelivered
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(amount: u64) -> PacketData {
        PacketData { sender: 0, receiver: 0, denom: "atom".into(), amount_milli: amount }
    }

    fn send(ep: &mut IbcEndpoint, amount: u64) -> Packet {
        ep.send_packet(data(amount), 200, SimTime::ZERO, 1, SimTime::ZERO)
    }

    #[test]
    fn send_escrows_and_commits() {
        let mut ep = IbcEndpoint::new();
        let p = send(&mut ep, 10);
        assert_eq!(p.sequence, 1);
        assert_eq!(ep.escrow_total(), 10);
        assert_eq!(ep.commitment_count(), 1);
    }

    #[test]
    fn sequences_strictly_increase() {
        let mut ep = IbcEndpoint::new();
        assert_eq!(send(&mut ep, 1).sequence, 1);
        assert_eq!(send(&mut ep, 1).sequence, 2);
    }

    #[test]
    fn recv_mints_voucher_and_writes_ack() {
        let mut src = IbcEndpoint::new();
        let mut dst = IbcEndpoint::new();
        let p = send(&mut src, 10);
        dst.recv_packet(&p, 5, SimTime::from_millis(1)).unwrap();
        assert!(dst.has_receipt(1));
        assert_eq!(dst.voucher_supply(&voucher_denom("atom")), 10);
        assert!(conservation_holds(&src, &dst));
    }

    #[test]
    fn duplicate_recv_rejected_without_state_change() {
        let mut src = IbcEndpoint::new();
        let mut dst = IbcEndpoint::new();
        let p = send(&mut src, 10);
        dst.recv_packet(&p, 5, SimTime::ZERO).unwrap();
        assert_eq!(dst.recv_packet(&p, 6, SimTime::ZERO), Err(RecvError::Duplicate));
        assert_eq!(dst.voucher_total(), 10);
        assert_eq!(dst.receipt_count(), 1);
    }

    #[test]
    fn recv_after_timeout_height_rejected() {
        let mut src = IbcEndpoint::new();
        let mut dst = IbcEndpoint::new();
        let p = send(&mut src, 10);
        assert_eq!(dst.recv_packet(&p, 201, SimTime::ZERO), Err(RecvError::TimeoutElapsed));
        assert_eq!(dst.voucher_total(), 0);
        assert!(!dst.has_receipt(1));
    }

    #[test]
    fn ack_deletes_commitment_and_replay_fails() {
        let mut src = IbcEndpoint::new();
        send(&mut src, 10);
        src.acknowledge_packet(1).unwrap();
        assert_eq!(src.commitment_count(), 0);
        assert_eq!(src.acknowledge_packet(1), Err(AckError::UnknownCommitment));
    }

    #[test]
    fn timeout_refunds_exactly_the_escrowed_amount() {
        let mut src = IbcEndpoint::new();
        send(&mut src, 10);
        let p = src.timeout_packet(1, false, 201, SimTime::ZERO).unwrap();
        assert_eq!(p.data.amount_milli, 10);
        assert_eq!(src.escrow_total(), 0);
        assert!(src.is_refunded(1));
    }

    #[test]
    fn timeout_rejected_when_delivered_or_live() {
        let mut src = IbcEndpoint::new();
        send(&mut src, 10);
        assert_eq!(src.timeout_packet(1, true, 201, SimTime::ZERO), Err(TimeoutError::PacketDelivered));
        assert_eq!(src.timeout_packet(1, false, 10, SimTime::ZERO), Err(TimeoutError::NotElapsed));
        assert_eq!(src.escrow_total(), 10);
    }

    #[test]
    fn ack_and_timeout_are_exclusive() {
        let mut src = IbcEndpoint::new();
        send(&mut src, 10);
        src.acknowledge_packet(1).unwrap();
        assert_eq!(
            src.timeout_packet(1, false, 500, SimTime::ZERO),
            Err(TimeoutError::UnknownCommitment)
        );
    }

    #[test]
    fn bulk_send_conserves_escrow() {
        let mut src = IbcEndpoint::new();
        let mut total = 0u64;
        for i in 1..=5_000u64 {
            let amount = 1 + (i % 7);
            send(&mut src, amount);
            total += amount;
        }
        assert_eq!(src.commitment_count(), 5_000);
        assert_eq!(src.escrow_total(), total);
    }
}
