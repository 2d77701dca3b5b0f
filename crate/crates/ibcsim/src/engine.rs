//! Discrete-event core: virtual clock, ordered event queue, seeded RNG and
//! trace capture.
//!
//! The queue dispatches events in `(fire_at, seq)` order where `seq` is a
//! monotone insertion counter, so simultaneous events fire in FIFO order and
//! a given (seed, scenario) pair always replays the identical schedule.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Virtual simulation time.
///
/// Stored with microsecond resolution so that sub-millisecond per-message
/// service costs accumulate exactly; every external surface (logs, traces,
/// reports) uses integer milliseconds.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn as_millis(self) -> u64 {
        self.0 / 1_000
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    /// Seconds as a float, for report output only.
    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl std::ops::Add<SimTime> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign<SimTime> for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl fmt::Debug for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.as_millis())
    }
}

/// Cancellation ticket returned by [`EventQueue::schedule`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Ticket(u64);

#[derive(Debug, thiserror::Error)]
pub enum ScheduleError {
    /// Scheduling into the past is a logic bug in the caller, not a runtime
    /// condition, so it is surfaced as an error instead of being clamped.
    #[error("event scheduled at {fire_at} before current clock {now}")]
    FireAtInPast { fire_at: SimTime, now: SimTime },
}

struct Queued<E> {
    fire_at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Queued<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl<E> Eq for Queued<E> {}
impl<E> PartialOrd for Queued<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Queued<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse so the earliest (fire_at, seq)
        // pops first.
        other
            .fire_at
            .cmp(&self.fire_at)
            .then(other.seq.cmp(&self.seq))
    }
}

/// Ordered event queue with a virtual clock.
pub struct EventQueue<E> {
    heap: BinaryHeap<Queued<E>>,
    now: SimTime,
    next_seq: u64,
    cancelled: Vec<u64>,
    dispatched: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            cancelled: Vec::new(),
            dispatched: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn is_empty(&self) -> bool {
        self.heap.len() == self.cancelled.len()
    }

    /// Enqueue `payload` to fire at `fire_at`. Returns a ticket usable with
    /// [`EventQueue::cancel`].
    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<Ticket, ScheduleError> {
        if fire_at < self.now {
            return Err(ScheduleError::FireAtInPast { fire_at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Queued { fire_at, seq, payload });
        Ok(Ticket(seq))
    }

    /// Convenience wrapper for `now + delay`.
    pub fn schedule_after(&mut self, delay: SimTime, payload: E) -> Ticket {
        let at = self.now + delay;
        self.schedule(at, payload).expect("now + delay is never in the past")
    }

    /// Lazily drop a scheduled event. Cancelling an already-fired ticket is a
    /// no-op.
    pub fn cancel(&mut self, ticket: Ticket) {
        self.cancelled.push(ticket.0);
    }

    /// Pop the next non-cancelled event at or before `horizon`, advancing the
    /// clock to its fire time.
    pub fn pop_until(&mut self, horizon: SimTime) -> Option<(SimTime, u64, E)> {
        loop {
            let head_fire = self.heap.peek()?.fire_at;
            if head_fire > horizon {
                return None;
            }
            let q = self.heap.pop().unwrap();
            if let Some(pos) = self.cancelled.iter().position(|&c| c == q.seq) {
                self.cancelled.swap_remove(pos);
                continue;
            }
            debug_assert!(q.fire_at >= self.now, "clock monotonicity");
            self.now = q.fire_at;
            self.dispatched += 1;
            return Some((q.fire_at, q.seq, q.payload));
        }
    }

    /// Advance the clock without dispatching (used when a run drains the
    /// queue before its horizon).
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }
}

/// FNV-1a over the debug rendering of an event payload; stable across
/// platforms, used only for trace records.
pub fn payload_digest(payload: &impl fmt::Debug) -> u64 {
    let s = format!("{payload:?}");
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Ordered event log: one record per dispatched event,
/// `fire_at_ms seq kind digest`.
#[derive(Default)]
pub struct Trace {
    lines: Vec<String>,
}

impl Trace {
    pub fn record(&mut self, fire_at: SimTime, seq: u64, kind: &str, digest: u64) {
        self.lines
            .push(format!("{} {} {} {:016x}", fire_at.as_millis(), seq, kind, digest));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn to_text(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }

    /// SHA-256 over the rendered trace; two runs are considered identical
    /// when their hashes match byte for byte.
    pub fn sha256_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.to_text().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_ordering_dispatches_earliest_first() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_millis(5), "A").unwrap();
        q.schedule(SimTime::from_millis(3), "B").unwrap();
        let first = q.pop_until(SimTime::from_millis(100)).unwrap();
        let second = q.pop_until(SimTime::from_millis(100)).unwrap();
        assert_eq!(first.2, "B");
        assert_eq!(second.2, "A");
    }

    #[test]
    fn fifo_tie_break_on_equal_fire_at() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_millis(5), "A").unwrap();
        q.schedule(SimTime::from_millis(5), "B").unwrap();
        assert_eq!(q.pop_until(SimTime::from_millis(5)).unwrap().2, "A");
        assert_eq!(q.pop_until(SimTime::from_millis(5)).unwrap().2, "B");
    }

    #[test]
    fn rejects_fire_at_in_past() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_millis(10), ()).unwrap();
        q.pop_until(SimTime::from_millis(10)).unwrap();
        assert!(q.schedule(SimTime::from_millis(5), ()).is_err());
    }

    #[test]
    fn boundary_is_inclusive() {
        let mut q = EventQueue::new();
        for ms in [1, 2, 3] {
            q.schedule(SimTime::from_millis(ms), ms).unwrap();
        }
        let mut n = 0;
        while q.pop_until(SimTime::from_millis(2)).is_some() {
            n += 1;
        }
        assert_eq!(n, 2);
    }

    #[test]
    fn cancelled_events_do_not_fire() {
        let mut q = EventQueue::new();
        let t = q.schedule(SimTime::from_millis(1), "dead").unwrap();
        q.schedule(SimTime::from_millis(2), "live").unwrap();
        q.cancel(t);
        assert_eq!(q.pop_until(SimTime::from_millis(10)).unwrap().2, "live");
        assert!(q.pop_until(SimTime::from_millis(10)).is_none());
    }

    #[test]
    fn empty_queue_advances_clock_manually() {
        let mut q = EventQueue::<()>::new();
        assert!(q.pop_until(SimTime::from_millis(1000)).is_none());
        q.advance_to(SimTime::from_millis(1000));
        assert_eq!(q.now().as_millis(), 1000);
        assert_eq!(q.dispatched(), 0);
    }
}
