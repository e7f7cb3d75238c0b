//! Discrete-event engine: integer microsecond clock, a future-event set with
//! FIFO tie-breaking, and named deterministic random streams.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Virtual time in integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Rounds to the nearest microsecond; negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if s.is_nan() || s <= 0.0 {
            SimTime(0)
        } else {
            SimTime((s * 1e6).round() as u64)
        }
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e3
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    /// Time to push `bytes` through a `rate_bps` pipe, rounded up to whole
    /// microseconds so that measured rates never exceed the configured rate.
    pub fn serialization(bytes: u64, rate_bps: u64) -> SimTime {
        assert!(rate_bps > 0, "serialization at zero rate");
        let bits_us = bytes as u128 * 8 * 1_000_000;
        SimTime(bits_us.div_ceil(rate_bps as u128) as u64)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(
            self.0
                .checked_sub(rhs.0)
                .expect("SimTime subtraction underflow"),
        )
    }
}

impl fmt::Display for SimTime {
    /// Seconds with exactly six decimals, e.g. `12.000250`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Handle returned by [`EventQueue::schedule`]; permits cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<E> {
    fire_at: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Time-ordered future-event set driving the virtual clock.
pub struct EventQueue<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    cancelled: HashSet<u64>,
    executed: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            executed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events popped so far.
    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Schedules `event` at `fire_at`.
    ///
    /// Scheduling in the past is a programming error and panics.
    pub fn schedule(&mut self, fire_at: SimTime, event: E) -> EventHandle {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: fire_at={} now={}",
            fire_at,
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            fire_at,
            seq,
            event,
        });
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> EventHandle {
        self.schedule(self.now + delay, event)
    }

    /// Cancels a pending event. Cancelling an already executed event is a no-op.
    pub fn cancel(&mut self, handle: EventHandle) {
        if handle.0 < self.next_seq {
            self.cancelled.insert(handle.0);
        }
    }

    /// Pops the next live event with `fire_at <= t_end`, advancing the clock.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<(SimTime, E)> {
        loop {
            let top = self.heap.peek()?;
            if top.fire_at > t_end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&entry.seq) {
                continue;
            }
            debug_assert!(entry.fire_at >= self.now);
            self.now = entry.fire_at;
            self.executed += 1;
            return Some((entry.fire_at, entry.event));
        }
    }

    /// Executes every event with `fire_at <= t_end` in (time, insertion) order.
    /// The handler may schedule further events. Returns the final clock.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, E),
    {
        while let Some((_, ev)) = self.pop_due(t_end) {
            handler(self, ev);
        }
        self.now
    }
}

/// Deterministic random stream keyed by `(seed, stream_id)`.
///
/// The key is hashed with SHA-256 into a ChaCha8 seed, so draws are identical
/// across runs and platforms and independent between stream ids.
pub fn rng_stream(seed: u64, stream_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream_id.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn now_event_runs_before_next_microsecond() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_micros(1), "later");
        q.schedule(SimTime::ZERO, "now");
        let mut order = vec![];
        q.run_until(SimTime::from_secs(1), |_, e| order.push(e));
        assert_eq!(order, vec!["now", "later"]);
    }

    #[test]
    fn ties_execute_in_insertion_order() {
        let mut q = EventQueue::new();
        for i in 0..50 {
            q.schedule(SimTime::from_millis(5), i);
        }
        let mut order = vec![];
        q.run_until(SimTime::from_secs(1), |_, e| order.push(e));
        assert_eq!(order, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn cancelled_event_never_runs() {
        let mut q = EventQueue::new();
        let h = q.schedule(SimTime::from_millis(1), 1);
        q.schedule(SimTime::from_millis(2), 2);
        q.cancel(h);
        let mut seen = vec![];
        q.run_until(SimTime::from_secs(1), |_, e| seen.push(e));
        assert_eq!(seen, vec![2]);
    }

    #[test]
    fn empty_queue_terminates() {
        let mut q: EventQueue<()> = EventQueue::new();
        let end = q.run_until(SimTime::from_secs(30), |_, _| {});
        assert!(end <= SimTime::from_secs(30));
    }

    #[test]
    fn run_until_is_inclusive_and_stops() {
        let mut q = EventQueue::new();
        for s in 1..=3 {
            q.schedule(SimTime::from_secs(s), s);
        }
        let mut n = 0;
        let end = q.run_until(SimTime::from_secs(2), |_, _| n += 1);
        assert_eq!(n, 2);
        assert_eq!(end, SimTime::from_secs(2));
        assert_eq!(q.pending(), 1);
    }

    #[test]
    fn handler_can_schedule_within_horizon() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(1), 0u32);
        let mut seen = vec![];
        q.run_until(SimTime::from_secs(10), |q, e| {
            seen.push((q.now(), e));
            if e < 3 {
                q.schedule_in(SimTime::from_secs(2), e + 1);
            }
        });
        assert_eq!(seen.len(), 4);
        assert_eq!(seen[3].0, SimTime::from_secs(7));
        assert!(seen.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    #[should_panic(expected = "scheduled in the past")]
    fn scheduling_in_past_aborts() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_secs(2), ());
        q.pop_due(SimTime::MAX);
        q.schedule(SimTime::from_secs(1), ());
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(rng_stream(7, "ue0"), |r, _| Some(r.gen())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(rng_stream(7, "ue0"), |r, _| Some(r.gen())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(rng_stream(7, "ue1"), |r, _| Some(r.gen())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn serialization_rounds_up() {
        assert_eq!(SimTime::serialization(1250, 1_000_000), SimTime::from_millis(10));
        assert_eq!(SimTime::serialization(40, 100_000), SimTime::from_micros(3_200));
        assert_eq!(SimTime::serialization(1, 3_000_000), SimTime::from_micros(3));
    }

    #[test]
    fn display_has_six_decimals() {
        assert_eq!(SimTime::from_micros(12_000_250).to_string(), "12.000250");
    }
}
