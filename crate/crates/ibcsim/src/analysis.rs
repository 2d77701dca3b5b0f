//! Post-processing: reconstructs per-transfer lifecycles from the relayer
//! and workload logs, classifies completion status at the horizon, and
//! computes throughput, latency breakdowns and relayer-scalability
//! comparisons.
//!
//! Everything here is a pure fold over the immutable run output; metrics
//! come from the relayer-side log, with chain-side truth used only for
//! cross-checks.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::chain::TxHash;
use crate::engine::SimTime;
use crate::ibc::PacketSeq;
use crate::relayer::{RelayStep, WORKLOAD_ACTOR};
use crate::sim::RunResult;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("zero-length measurement window")]
    ZeroWindow,
    #[error("runs are not comparable: {0}")]
    Incomparable(String),
}

/// Completion status of one requested transfer at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusClass {
    /// transfer + receive + acknowledge all recorded
    Completed,
    /// transfer + receive only
    PartiallyCompleted,
    /// transfer only, timeout not yet elapsed
    Initiated,
    /// refunded through the timeout path
    TimedOut,
    /// past its timeout with no refund at the horizon
    Stuck,
    /// rejected before reaching the chain
    NotCommitted,
}

#[derive(Debug, Clone, Default, Serialize, PartialEq, Eq)]
pub struct StatusHistogram {
    pub completed: u64,
    pub partially_completed: u64,
    pub initiated: u64,
    pub timed_out: u64,
    pub stuck: u64,
    pub not_committed: u64,
}

impl StatusHistogram {
    pub fn total(&self) -> u64 {
        self.completed
            + self.partially_completed
            + self.initiated
            + self.timed_out
            + self.stuck
            + self.not_committed
    }
}

/// Reconstructed lifecycle: first successful record of each of the 13
/// steps, absent if unreached.
#[derive(Debug, Clone)]
pub struct TransferLifecycle {
    pub seq: PacketSeq,
    pub steps: [Option<SimTime>; RelayStep::LIFECYCLE_STEPS],
    pub timed_out_at: Option<SimTime>,
    pub status: StatusClass,
}

impl TransferLifecycle {
    pub fn step(&self, s: RelayStep) -> Option<SimTime> {
        self.steps[s as usize]
    }

    pub fn completed_at(&self) -> Option<SimTime> {
        self.steps[RelayStep::AckConfirmation as usize]
    }

    /// Present timestamps must be non-decreasing in step order.
    pub fn respects_partial_order(&self) -> bool {
        let mut last = SimTime::ZERO;
        for t in self.steps.iter().flatten() {
            if *t < last {
                return false;
            }
            last = *t;
        }
        true
    }
}

/// Lifecycles plus run context needed by the metric functions.
pub struct LifecycleSet {
    pub lifecycles: Vec<TransferLifecycle>,
    pub requested: u64,
    pub horizon_time: SimTime,
}

/// Assemble lifecycles from the run logs.
///
/// Per step the earliest successful record wins; with several uncoordinated
/// relayers the winners' records form the canonical lifecycle (per-relayer
/// monotonicity is asserted separately on each relayer's own records).
pub fn build_lifecycles(run: &RunResult) -> LifecycleSet {
    let n = run.packets.len();
    let mut steps = vec![[None::<SimTime>; RelayStep::LIFECYCLE_STEPS]; n];
    let mut timed_out = vec![None::<SimTime>; n];

    // Transfer broadcasts are logged per transaction before sequences are
    // assigned; map them onto packets through the origin transaction.
    let mut tx_broadcast: BTreeMap<TxHash, SimTime> = BTreeMap::new();
    for ev in &run.relay_log {
        if ev.relayer == WORKLOAD_ACTOR && ev.step == RelayStep::TransferBroadcast && ev.ok {
            tx_broadcast.entry(ev.tx_hash).or_insert(SimTime::from_millis(ev.time_ms));
        }
    }
    for (i, p) in run.packets.iter().enumerate() {
        steps[i][RelayStep::TransferBroadcast as usize] =
            tx_broadcast.get(&p.origin_tx).copied();
    }

    for ev in &run.relay_log {
        if !ev.ok || ev.seq == 0 {
            continue;
        }
        let idx = (ev.seq - 1) as usize;
        if idx >= n {
            continue;
        }
        let t = SimTime::from_millis(ev.time_ms);
        if ev.step == RelayStep::TimeoutConfirmation {
            if timed_out[idx].is_none() {
                timed_out[idx] = Some(t);
            }
            continue;
        }
        let s = ev.step as usize;
        if s < RelayStep::LIFECYCLE_STEPS {
            let slot = &mut steps[idx][s];
            if slot.map(|prev| t < prev).unwrap_or(true) {
                *slot = Some(t);
            }
        }
    }

    let horizon_time = run.horizon_time;
    let mut lifecycles = Vec::with_capacity(n);
    for (i, info) in run.packets.iter().enumerate() {
        let completed = steps[i][RelayStep::AckConfirmation as usize].is_some();
        let delivered = steps[i][RelayStep::RecvExtraction as usize].is_some()
            || steps[i][RelayStep::RecvConfirmation as usize].is_some();
        let status = if let Some(t) = timed_out[i] {
            let _ = t;
            StatusClass::TimedOut
        } else if completed {
            StatusClass::Completed
        } else if delivered {
            StatusClass::PartiallyCompleted
        } else if info.packet.timed_out_at(run.dest_final_height, run.dest_final_time) {
            StatusClass::Stuck
        } else {
            StatusClass::Initiated
        };
        lifecycles.push(TransferLifecycle {
            seq: (i + 1) as u64,
            steps: steps[i],
            timed_out_at: timed_out[i],
            status,
        });
    }

    LifecycleSet { lifecycles, requested: run.workload_counters.requested, horizon_time }
}

/// Status histogram at the horizon; classes partition the requested set.
pub fn classify(set: &LifecycleSet) -> StatusHistogram {
    let mut h = StatusHistogram::default();
    for lc in &set.lifecycles {
        match lc.status {
            StatusClass::Completed => h.completed += 1,
            StatusClass::PartiallyCompleted => h.partially_completed += 1,
            StatusClass::Initiated => h.initiated += 1,
            StatusClass::TimedOut => h.timed_out += 1,
            StatusClass::Stuck => h.stuck += 1,
            StatusClass::NotCommitted => unreachable!("lifecycles exist only for committed"),
        }
    }
    h.not_committed = set.requested.saturating_sub(set.lifecycles.len() as u64);
    h
}

/// Completed transfers per simulated second within `[0, window]`.
pub fn throughput(set: &LifecycleSet, window: SimTime) -> Result<f64, AnalysisError> {
    if window == SimTime::ZERO {
        return Err(AnalysisError::ZeroWindow);
    }
    let completed = set
        .lifecycles
        .iter()
        .filter(|lc| lc.completed_at().map(|t| t <= window).unwrap_or(false))
        .count();
    Ok(completed as f64 / window.as_secs_f64())
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseBreakdown {
    /// End-to-end span from first transfer broadcast to last ack
    /// confirmation, in seconds.
    pub total_secs: f64,
    pub transfer_phase_secs: f64,
    pub recv_phase_secs: f64,
    pub ack_phase_secs: f64,
    pub transfer_phase_pct: f64,
    pub recv_phase_pct: f64,
    pub ack_phase_pct: f64,
    /// Combined transfer-data-pull + recv-data-pull share of the total.
    pub pull_pct: f64,
    pub transfer_pull_secs: f64,
    pub recv_pull_secs: f64,
    pub first_completion_secs: f64,
    pub last_completion_secs: f64,
    /// Cumulative completions over time: (secs, completed_count).
    pub completion_curve: Vec<(f64, u64)>,
}

/// Phase spans of a single submission burst, measured the way the reference
/// breakdown slices them: consecutive segments ending at the last
/// transfer-pull, last recv-pull and last ack confirmation.
pub fn latency_breakdown(set: &LifecycleSet) -> Option<PhaseBreakdown> {
    let completed: Vec<&TransferLifecycle> =
        set.lifecycles.iter().filter(|lc| lc.completed_at().is_some()).collect();
    if completed.is_empty() {
        return None;
    }
    let start = completed
        .iter()
        .filter_map(|lc| lc.step(RelayStep::TransferBroadcast))
        .min()
        .unwrap_or(SimTime::ZERO);
    let max_step = |s: RelayStep| -> SimTime {
        completed.iter().filter_map(|lc| lc.step(s)).max().unwrap_or(start)
    };
    let t_pull_end = max_step(RelayStep::TransferDataPull);
    let r_pull_end = max_step(RelayStep::RecvDataPull);
    let end = max_step(RelayStep::AckConfirmation);
    let secs = |a: SimTime, b: SimTime| b.saturating_sub(a).as_secs_f64();

    let total = secs(start, end);
    let transfer_phase = secs(start, t_pull_end);
    let recv_phase = secs(t_pull_end, r_pull_end);
    let ack_phase = secs(r_pull_end, end);

    // Pull spans: from the earliest pull start proxy (its phase's confirm
    // completion) to the last pull record.
    let min_step = |s: RelayStep| -> Option<SimTime> {
        completed.iter().filter_map(|lc| lc.step(s)).min()
    };
    let t_pull_start = min_step(RelayStep::TransferConfirmation).unwrap_or(start);
    let r_pull_start = min_step(RelayStep::RecvConfirmation).unwrap_or(t_pull_end);
    let transfer_pull = secs(t_pull_start, t_pull_end);
    let recv_pull = secs(r_pull_start, r_pull_end);

    let mut completions: Vec<SimTime> =
        completed.iter().filter_map(|lc| lc.completed_at()).collect();
    completions.sort_unstable();
    let curve: Vec<(f64, u64)> = completions
        .iter()
        .enumerate()
        .map(|(i, t)| (t.saturating_sub(start).as_secs_f64(), (i + 1) as u64))
        .collect();

    let pct = |x: f64| if total > 0.0 { 100.0 * x / total } else { 0.0 };
    Some(PhaseBreakdown {
        total_secs: total,
        transfer_phase_secs: transfer_phase,
        recv_phase_secs: recv_phase,
        ack_phase_secs: ack_phase,
        transfer_phase_pct: pct(transfer_phase),
        recv_phase_pct: pct(recv_phase),
        ack_phase_pct: pct(ack_phase),
        pull_pct: pct(transfer_pull + recv_pull),
        transfer_pull_secs: transfer_pull,
        recv_pull_secs: recv_pull,
        first_completion_secs: completions
            .first()
            .map(|t| t.saturating_sub(start).as_secs_f64())
            .unwrap_or(0.0),
        last_completion_secs: completions
            .last()
            .map(|t| t.saturating_sub(start).as_secs_f64())
            .unwrap_or(0.0),
        completion_curve: curve,
    })
}

/// One run's entry in a relayer-scalability comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ScalabilityEntry {
    pub relayer_count: u32,
    pub peak_tfps: f64,
    pub peak_rate_rps: u64,
    pub redundant_errors: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalabilityReport {
    pub entries: Vec<ScalabilityEntry>,
    /// Peak-throughput delta of each entry relative to the first, percent.
    pub peak_delta_pct: Vec<f64>,
}

/// Compare throughput curves that differ only in relayer count.
pub fn scalability_report(
    entries: Vec<ScalabilityEntry>,
) -> Result<ScalabilityReport, AnalysisError> {
    if entries.len() < 2 {
        return Err(AnalysisError::Incomparable("need at least two runs".into()));
    }
    let base = entries[0].peak_tfps;
    if base <= 0.0 {
        return Err(AnalysisError::Incomparable("baseline peak is zero".into()));
    }
    let deltas = entries.iter().map(|e| 100.0 * (e.peak_tfps - base) / base).collect();
    Ok(ScalabilityReport { entries, peak_delta_pct: deltas })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lc(steps: &[(RelayStep, u64)], status: StatusClass) -> TransferLifecycle {
        let mut arr = [None; RelayStep::LIFECYCLE_STEPS];
        for (s, ms) in steps {
            arr[*s as usize] = Some(SimTime::from_millis(*ms));
        }
        TransferLifecycle { seq: 1, steps: arr, timed_out_at: None, status }
    }

    #[test]
    fn partial_order_checked_over_present_steps() {
        let good = lc(
            &[
                (RelayStep::TransferBroadcast, 1),
                (RelayStep::TransferExtraction, 2),
                (RelayStep::AckConfirmation, 9),
            ],
            StatusClass::Completed,
        );
        assert!(good.respects_partial_order());
        let bad = lc(
            &[(RelayStep::TransferExtraction, 5), (RelayStep::TransferConfirmation, 3)],
            StatusClass::Initiated,
        );
        assert!(!bad.respects_partial_order());
    }

    #[test]
    fn zero_completed_is_zero_tfps() {
        let set = LifecycleSet {
            lifecycles: vec![lc(&[(RelayStep::TransferBroadcast, 1)], StatusClass::Initiated)],
            requested: 1,
            horizon_time: SimTime::from_millis(1_000),
        };
        assert_eq!(throughput(&set, SimTime::from_millis(1_000)).unwrap(), 0.0);
        assert!(throughput(&set, SimTime::ZERO).is_err());
    }

    #[test]
    fn histogram_partitions_requested() {
        let set = LifecycleSet {
            lifecycles: vec![
                lc(&[(RelayStep::AckConfirmation, 10)], StatusClass::Completed),
                lc(&[(RelayStep::TransferBroadcast, 1)], StatusClass::Initiated),
            ],
            requested: 5,
            horizon_time: SimTime::from_millis(100),
        };
        let h = classify(&set);
        assert_eq!(h.completed, 1);
        assert_eq!(h.initiated, 1);
        assert_eq!(h.not_committed, 3);
        assert_eq!(h.total(), 5);
    }

    #[test]
    fn scalability_needs_two_runs() {
        assert!(scalability_report(vec![ScalabilityEntry {
            relayer_count: 1,
            peak_tfps: 10.0,
            peak_rate_rps: 140,
            redundant_errors: 0,
        }])
        .is_err());
    }

    #[test]
    fn completion_curve_is_monotone() {
        let mk = |t| lc(&[(RelayStep::TransferBroadcast, 0), (RelayStep::AckConfirmation, t)], StatusClass::Completed);
        let set = LifecycleSet {
            lifecycles: vec![mk(30), mk(10), mk(20)],
            requested: 3,
            horizon_time: SimTime::from_millis(100),
        };
        let b = latency_breakdown(&set).unwrap();
        let counts: Vec<u64> = b.completion_curve.iter().map(|(_, c)| *c).collect();
        assert_eq!(counts, vec![1, 2, 3]);
        let times: Vec<f64> = b.completion_curve.iter().map(|(t, _)| *t).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }
}
