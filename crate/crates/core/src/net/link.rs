use std::collections::VecDeque;

use crate::sim::SimTime;

use super::Packet;

/// Byte-bounded drop-tail FIFO.
#[derive(Debug)]
pub struct PacketQueue {
    capacity_bytes: u64,
    occupancy_bytes: u64,
    drops: u64,
    q: VecDeque<Packet>,
}

impl PacketQueue {
    pub fn new(capacity_bytes: u64) -> Self {
        Self {
            capacity_bytes,
            occupancy_bytes: 0,
            drops: 0,
            q: VecDeque::new(),
        }
    }

    pub fn enqueue(&mut self, pkt: Packet) -> Result<(), Packet> {
        let sz = pkt.size_bytes as u64;
        if self.occupancy_bytes + sz > self.capacity_bytes {
            self.drops += 1;
            return Err(pkt);
        }
        self.occupancy_bytes += sz;
        self.q.push_back(pkt);
        Ok(())
    }

    pub fn dequeue(&mut self) -> Option<Packet> {
        let pkt = self.q.pop_front()?;
        self.occupancy_bytes -= pkt.size_bytes as u64;
        Some(pkt)
    }

    pub fn front(&self) -> Option<&Packet> {
        self.q.front()
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn occupancy_bytes(&self) -> u64 {
        self.occupancy_bytes
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub enqueued: u64,
    pub dropped: u64,
    pub delivered: u64,
    pub in_propagation: u64,
}

/// A transmission that just started: the head packet occupies the wire over
/// `[start, done_at)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxStart {
    pub start: SimTime,
    pub done_at: SimTime,
    pub bytes: u32,
}

/// Rate-limited, delay-bearing pipe. The head of the queue is the packet in
/// service; it stays counted in the queue until its serialization completes.
#[derive(Debug)]
pub struct Link {
    pub name: &'static str,
    rate_bps: u64,
    one_way_delay: SimTime,
    queue: PacketQueue,
    busy: bool,
    counters: LinkCounters,
}

impl Link {
    pub fn new(name: &'static str, rate_bps: u64, one_way_delay: SimTime, capacity_bytes: u64) -> Self {
        Self {
            name,
            rate_bps,
            one_way_delay,
            queue: PacketQueue::new(capacity_bytes),
            busy: false,
            counters: LinkCounters::default(),
        }
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps
    }

    pub fn one_way_delay(&self) -> SimTime {
        self.one_way_delay
    }

    pub fn queue(&self) -> &PacketQueue {
        &self.queue
    }

    pub fn counters(&self) -> LinkCounters {
        self.counters
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    /// Packets accepted and not yet delivered (queued, in service or propagating).
    pub fn in_flight(&self) -> u64 {
        self.queue.len() as u64 + self.counters.in_propagation
    }

    /// `delivered + dropped + in flight == enqueued`.
    pub fn is_conserving(&self) -> bool {
        let c = self.counters;
        c.delivered + c.dropped + self.in_flight() == c.enqueued
    }

    /// Offers a packet. `Err` returns the dropped packet; `Ok(Some(tx))` means
    /// the link was idle and started serializing it.
    pub fn enqueue(&mut self, pkt: Packet, now: SimTime) -> Result<Option<TxStart>, Packet> {
        self.counters.enqueued += 1;
        if let Err(p) = self.queue.enqueue(pkt) {
            self.counters.dropped += 1;
            return Err(p);
        }
        Ok(self.try_start(now))
    }

    fn try_start(&mut self, now: SimTime) -> Option<TxStart> {
        if self.busy || self.rate_bps == 0 {
            return None;
        }
        let bytes = self.queue.front()?.size_bytes;
        self.busy = true;
        Some(TxStart {
            start: now,
            done_at: now + SimTime::serialization(bytes as u64, self.rate_bps),
            bytes,
        })
    }

    /// Serialization of the head packet finished. Returns the packet, the time
    /// it reaches the far end, and the next transmission if backlogged.
    pub fn on_tx_done(&mut self, now: SimTime) -> (Packet, SimTime, Option<TxStart>) {
        assert!(self.busy, "tx-done on idle link {}", self.name);
        let pkt = self.queue.dequeue().expect("busy link has a head packet");
        self.busy = false;
        self.counters.in_propagation += 1;
        let arrive = now + self.one_way_delay;
        (pkt, arrive, self.try_start(now))
    }

    pub fn on_delivered(&mut self) {
        self.counters.in_propagation -= 1;
        self.counters.delivered += 1;
    }

    /// Changes the service rate. Non-preemptive: a packet already on the wire
    /// keeps its old serialization time. Returns a transmission if the link
    /// was stalled at zero rate with a backlog.
    pub fn set_rate(&mut self, rate_bps: u64, now: SimTime) -> Option<TxStart> {
        self.rate_bps = rate_bps;
        self.try_start(now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Direction, Header, Node, PacketKind};

    fn pkt(id: u64, size: u32) -> Packet {
        Packet {
            id,
            flow_id: 0,
            ue: 0,
            size_bytes: size,
            kind: PacketKind::Voip,
            created_at: SimTime::ZERO,
            src: Node::Server,
            dst: Node::Ue(0),
            header: Header::Datagram { seq: id, direction: Direction::Down },
        }
    }

    /// Drives a link to completion, returning (id, delivery time) pairs.
    fn drain(link: &mut Link, first: Option<TxStart>) -> Vec<(u64, SimTime)> {
        let mut out = vec![];
        let mut next = first;
        while let Some(tx) = next {
            let (p, at, n) = link.on_tx_done(tx.done_at);
            link.on_delivered();
            out.push((p.id, at));
            next = n;
        }
        out
    }

    #[test]
    fn single_packet_delay_is_serialization_plus_propagation() {
        let mut link = Link::new("t", 1_000_000, SimTime::from_millis(250), 100_000);
        let tx = link.enqueue(pkt(1, 1250), SimTime::ZERO).unwrap();
        let out = drain(&mut link, tx);
        assert_eq!(out, vec![(1, SimTime::from_millis(260))]);
        assert!(link.is_conserving());
    }

    #[test]
    fn back_to_back_spaced_by_one_serialization() {
        let mut link = Link::new("t", 1_000_000, SimTime::from_millis(5), 100_000);
        let tx = link.enqueue(pkt(1, 1250), SimTime::ZERO).unwrap();
        assert!(link.enqueue(pkt(2, 1250), SimTime::ZERO).unwrap().is_none());
        let out = drain(&mut link, tx);
        assert_eq!(out[1].1 - out[0].1, SimTime::from_millis(10));
        assert_eq!(out.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn full_queue_drops_and_counts() {
        let mut link = Link::new("t", 1_000_000, SimTime::ZERO, 3000);
        link.enqueue(pkt(1, 1500), SimTime::ZERO).unwrap();
        link.enqueue(pkt(2, 1500), SimTime::ZERO).unwrap();
        assert!(link.enqueue(pkt(3, 1500), SimTime::ZERO).is_err());
        assert_eq!(link.queue().drops(), 1);
        assert_eq!(link.counters().dropped, 1);
        assert!(link.queue().occupancy_bytes() <= link.queue().capacity_bytes());
        assert!(link.is_conserving());
    }

    #[test]
    fn zero_rate_stalls_until_rate_set() {
        let mut link = Link::new("ret", 0, SimTime::ZERO, 10_000);
        assert!(link.enqueue(pkt(1, 40), SimTime::ZERO).unwrap().is_none());
        let tx = link.set_rate(100_000, SimTime::from_millis(7)).unwrap();
        assert_eq!(tx.done_at, SimTime::from_micros(7_000 + 3_200));
    }

    #[test]
    fn rate_change_is_non_preemptive() {
        let mut link = Link::new("ret", 100_000, SimTime::ZERO, 10_000);
        let tx = link.enqueue(pkt(1, 1000), SimTime::ZERO).unwrap().unwrap();
        link.enqueue(pkt(2, 1000), SimTime::ZERO).unwrap();
        assert!(link.set_rate(1_000_000, SimTime::from_millis(1)).is_none());
        assert_eq!(tx.done_at, SimTime::from_millis(80));
        let (_, _, next) = link.on_tx_done(tx.done_at);
        assert_eq!(next.unwrap().done_at, SimTime::from_millis(88));
    }
}
