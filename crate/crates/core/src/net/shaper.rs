use std::collections::VecDeque;

use crate::sim::SimTime;

use super::Packet;

/// Token units: one bit is worth 1e6 units, and the bucket gains `rate_bps`
/// units per microsecond. Keeps the bucket arithmetic exact in integers.
const UNITS_PER_BIT: u64 = 1_000_000;

/// Per-UE token-bucket rate limiter with a drop-tail backlog.
///
/// Departure times are fully determined at offer time: the bucket state after
/// the last scheduled departure is tracked as `(tail_time, tail_tokens)`.
#[derive(Debug)]
pub struct SlaShaper {
    rate_bps: u64,
    burst_bytes: u64,
    backlog_cap_bytes: u64,
    backlog_bytes: u64,
    drops: u64,
    tail_time: SimTime,
    tail_tokens: u64,
    pending: VecDeque<(SimTime, Packet)>,
}

impl SlaShaper {
    /// Starts with a full bucket.
    pub fn new(rate_bps: u64, burst_bytes: u64, backlog_cap_bytes: u64) -> Self {
        assert!(rate_bps > 0, "shaper rate must be positive");
        Self {
            rate_bps,
            burst_bytes,
            backlog_cap_bytes,
            backlog_bytes: 0,
            drops: 0,
            tail_time: SimTime::ZERO,
            tail_tokens: burst_bytes * 8 * UNITS_PER_BIT,
            pending: VecDeque::new(),
        }
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps
    }

    pub fn burst_bytes(&self) -> u64 {
        self.burst_bytes
    }

    pub fn backlog_bytes(&self) -> u64 {
        self.backlog_bytes
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    /// Offers a packet and returns its departure time. A departure equal to
    /// `now` means the packet passes without delay and is *not* retained; a
    /// later departure means the shaper holds it until [`Self::release`].
    /// `Err` hands back a packet dropped because the backlog is full.
    pub fn offer(&mut self, pkt: Packet, now: SimTime) -> Result<(SimTime, Option<Packet>), Packet> {
        let size = pkt.size_bytes as u64;
        let need = size * 8 * UNITS_PER_BIT;
        let cap = self.burst_bytes.max(size) * 8 * UNITS_PER_BIT;

        let t0 = now.max(self.tail_time);
        let elapsed = (t0 - self.tail_time).as_micros();
        let tokens = self
            .tail_tokens
            .saturating_add(elapsed.saturating_mul(self.rate_bps))
            .min(cap);

        let (depart, left) = if tokens >= need {
            (t0, tokens - need)
        } else {
            let wait = (need - tokens).div_ceil(self.rate_bps);
            (t0 + SimTime::from_micros(wait), tokens + wait * self.rate_bps - need)
        };

        if depart == now && self.pending.is_empty() {
            self.tail_time = depart;
            self.tail_tokens = left;
            return Ok((depart, Some(pkt)));
        }
        if self.backlog_bytes + size > self.backlog_cap_bytes {
            self.drops += 1;
            return Err(pkt);
        }
        self.tail_time = depart;
        self.tail_tokens = left;
        self.backlog_bytes += size;
        self.pending.push_back((depart, pkt));
        Ok((depart, None))
    }

    /// Pops the head packet, which must be due at `now`.
    pub fn release(&mut self, now: SimTime) -> Packet {
        let (at, pkt) = self.pending.pop_front().expect("release on empty shaper");
        assert_eq!(at, now, "shaper released off schedule");
        self.backlog_bytes -= pkt.size_bytes as u64;
        pkt
    }
}
