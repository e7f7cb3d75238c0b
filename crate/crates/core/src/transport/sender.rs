use std::collections::{BTreeMap, BTreeSet};

use crate::sim::SimTime;

use super::cc::{Connection, LossKind, Recovery};
use super::{SackBlocks, MSS, TCP_HEADER_BYTES};

/// Segments above which this many bytes are selectively acknowledged are
/// considered lost (forward-acknowledgment rule with a three-segment threshold).
const DUP_THRESH_BYTES: u64 = 3 * MSS as u64;

#[derive(Debug, Clone)]
struct SentSeg {
    len: u32,
    sent_at: SimTime,
    retransmitted: bool,
    sacked: bool,
    lost: bool,
    /// A retransmission of a lost segment is on the wire.
    retx_out: bool,
}

impl SentSeg {
    fn in_pipe(&self) -> bool {
        !self.sacked && (!self.lost || self.retx_out)
    }
}

/// Rate-based sender mode: skips slow start, spaces packets at `rate_bps` and
/// halves the rate on loss, recovering additively toward `target_bps`.
#[derive(Debug, Clone)]
pub struct Pacer {
    target_bps: u64,
    rate_bps: f64,
    next_send: SimTime,
    window_gain: f64,
    nominal_rtt: SimTime,
}

impl Pacer {
    pub fn new(target_bps: u64, nominal_rtt: SimTime, window_gain: f64) -> Self {
        assert!(target_bps > 0);
        Self {
            target_bps,
            rate_bps: target_bps as f64,
            next_send: SimTime::ZERO,
            window_gain,
            nominal_rtt,
        }
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps as u64
    }

    pub fn target_bps(&self) -> u64 {
        self.target_bps
    }

    fn floor_bps(&self) -> f64 {
        (self.target_bps as f64 / 16.0).max(8.0 * MSS as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tx {
    pub seq: u64,
    pub len: u32,
    pub fin: bool,
    pub retransmit: bool,
}

impl Tx {
    pub fn wire_bytes(&self) -> u32 {
        self.len + TCP_HEADER_BYTES
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Poll {
    Send(Tx),
    /// Pacing holds the next packet until this time.
    WaitUntil(SimTime),
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtoAction {
    None,
    /// Outstanding data was declared lost; poll to retransmit.
    Retransmit,
    /// Blocked on a closed receive window; send a window probe.
    Probe,
}

/// Sending half of a transport leg. Sequence numbers are stream byte offsets.
#[derive(Debug, Clone)]
pub struct TcpSender {
    pub cc: Connection,
    pacer: Option<Pacer>,
    snd_una: u64,
    snd_nxt: u64,
    app_limit: u64,
    final_len: Option<u64>,
    peer_edge: u64,
    segs: BTreeMap<u64, SentSeg>,
    retx_queue: BTreeSet<u64>,
    /// Retransmissions currently on the wire.
    retx_in_flight: BTreeSet<u64>,
    pipe: u64,
    fack: u64,
    loss_scan: u64,
    /// First retransmission of a recovery episode goes out regardless of pipe.
    force_retx: bool,
    /// Window before the last timeout, kept until the first ACK after it.
    undo: Option<((u64, u64), Recovery)>,
    /// Latest transmission time of any segment known delivered.
    rack_xmit: SimTime,
    rack_scan: u64,
    timeout_at: Option<SimTime>,
    /// Time of the last window reduction.
    reduced_at: SimTime,
    spurious_timeouts: u64,
    rto_deadline: Option<SimTime>,
    retransmits: u64,
    spurious_acks: u64,
    loss_events: u64,
    first_ack_at: Option<SimTime>,
}

impl TcpSender {
    /// `app_limit` is how many stream bytes the application has handed over
    /// so far; `final_len` is the stream length when known up front.
    pub fn new(app_limit: u64, final_len: Option<u64>, peer_window: u64) -> Self {
        Self {
            cc: Connection::new(),
            pacer: None,
            snd_una: 0,
            snd_nxt: 0,
            app_limit,
            final_len,
            peer_edge: peer_window,
            segs: BTreeMap::new(),
            retx_queue: BTreeSet::new(),
            retx_in_flight: BTreeSet::new(),
            pipe: 0,
            fack: 0,
            loss_scan: 0,
            force_retx: false,
            undo: None,
            rack_xmit: SimTime::ZERO,
            rack_scan: 0,
            timeout_at: None,
            reduced_at: SimTime::ZERO,
            spurious_timeouts: 0,
            rto_deadline: None,
            retransmits: 0,
            spurious_acks: 0,
            loss_events: 0,
            first_ack_at: None,
        }
    }

    pub fn with_pacer(mut self, pacer: Pacer) -> Self {
        self.pacer = Some(pacer);
        self
    }

    pub fn pacer(&self) -> Option<&Pacer> {
        self.pacer.as_ref()
    }

    pub fn set_pacing_target(&mut self, target_bps: u64) {
        if let Some(p) = self.pacer.as_mut() {
            p.target_bps = target_bps.max(1);
            let floor = p.floor_bps();
            p.rate_bps = p.rate_bps.min(p.target_bps as f64).max(floor.min(p.target_bps as f64));
        }
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }

    pub fn app_limit(&self) -> u64 {
        self.app_limit
    }

    pub fn final_len(&self) -> Option<u64> {
        self.final_len
    }

    /// Bytes sent and not cumulatively acknowledged.
    pub fn outstanding(&self) -> u64 {
        self.snd_nxt - self.snd_una
    }

    /// Estimate of bytes actually in the network.
    pub fn pipe(&self) -> u64 {
        self.pipe
    }

    pub fn retransmits(&self) -> u64 {
        self.retransmits
    }

    pub fn spurious_acks(&self) -> u64 {
        self.spurious_acks
    }

    /// Timeouts later shown to be spurious and undone.
    pub fn spurious_timeouts(&self) -> u64 {
        self.spurious_timeouts
    }

    /// Seeds the RTT estimator, e.g. from the connection handshake.
    pub fn seed_rtt(&mut self, sample: SimTime) {
        if self.cc.srtt().is_none() {
            self.cc.on_rtt_sample(sample);
        }
    }

    pub fn loss_events(&self) -> u64 {
        self.loss_events
    }

    pub fn first_ack_at(&self) -> Option<SimTime> {
        self.first_ack_at
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_deadline
    }

    pub fn all_acked(&self) -> bool {
        self.final_len.is_some_and(|f| self.snd_una >= f)
    }

    /// The application handed over more bytes (never shrinks).
    pub fn extend_app_limit(&mut self, limit: u64) {
        self.app_limit = self.app_limit.max(limit);
    }

    /// Fixes the stream length; bytes beyond it are never sent.
    pub fn set_final(&mut self, len: u64) {
        assert!(len >= self.snd_nxt, "final length below sent data");
        self.final_len = Some(len);
    }

    fn send_limit(&self) -> u64 {
        let mut limit = self.app_limit.min(self.peer_edge);
        if let Some(f) = self.final_len {
            limit = limit.min(f);
        }
        limit
    }

    fn window(&self) -> u64 {
        match &self.pacer {
            None => self.cc.cwnd_bytes(),
            Some(p) => {
                let rtt = self.cc.min_rtt().unwrap_or(p.nominal_rtt);
                let w = p.rate_bps * rtt.as_secs_f64() * p.window_gain / 8.0;
                (w as u64).max(2 * MSS as u64)
            }
        }
    }

    /// Blocked only by the receiver's advertised window with nothing in flight.
    pub fn window_closed(&self) -> bool {
        self.segs.is_empty()
            && self.peer_edge <= self.snd_nxt
            && self.snd_nxt < self.app_limit.min(self.final_len.unwrap_or(u64::MAX))
    }

    /// Next packet to transmit at `now`, committing it to the scoreboard.
    pub fn poll(&mut self, now: SimTime) -> Poll {
        let retx = self.retx_queue.first().copied();
        let (seq, len, retransmit) = match retx {
            Some(seq) => (seq, self.segs[&seq].len, true),
            None => {
                let limit = self.send_limit();
                if self.snd_nxt >= limit {
                    return Poll::Idle;
                }
                (self.snd_nxt, (limit - self.snd_nxt).min(MSS as u64) as u32, false)
            }
        };
        let forced = retransmit && self.force_retx;
        if !forced && self.pipe > 0 && self.pipe + len as u64 > self.window() {
            return Poll::Idle;
        }
        if let Some(p) = self.pacer.as_mut() {
            if now < p.next_send {
                return Poll::WaitUntil(p.next_send);
            }
            let gap = SimTime::serialization((len + TCP_HEADER_BYTES) as u64, p.rate_bps.max(1.0) as u64);
            p.next_send = now.max(p.next_send) + gap;
        }

        if retransmit {
            self.force_retx = false;
            self.retx_queue.remove(&seq);
            let seg = self.segs.get_mut(&seq).expect("queued retransmission");
            seg.retx_out = true;
            seg.retransmitted = true;
            seg.sent_at = now;
            self.retx_in_flight.insert(seq);
            self.retransmits += 1;
            if seq == self.snd_una {
                self.rto_deadline = Some(now + self.cc.rto());
            }
        } else {
            self.segs.insert(
                seq,
                SentSeg {
                    len,
                    sent_at: now,
                    retransmitted: false,
                    sacked: false,
                    lost: false,
                    retx_out: false,
                },
            );
            self.snd_nxt += len as u64;
        }
        self.pipe += len as u64;
        if self.rto_deadline.is_none() {
            self.rto_deadline = Some(now + self.cc.rto());
        }
        let fin = self.final_len == Some(seq + len as u64);
        Poll::Send(Tx {
            seq,
            len,
            fin,
            retransmit,
        })
    }

    /// Processes an acknowledgment without a timestamp echo. Returns the
    /// number of newly cumulatively-acknowledged bytes.
    pub fn on_ack(&mut self, now: SimTime, cum: u64, sacks: &SackBlocks, rwnd: u64) -> u64 {
        self.on_ack_echo(now, cum, sacks, rwnd, None)
    }

    /// Processes an acknowledgment that echoes the transmission time of the
    /// segment that triggered it.
    pub fn on_ack_echo(&mut self, now: SimTime, cum: u64, sacks: &SackBlocks, rwnd: u64, echo: Option<SimTime>) -> u64 {
        if cum > self.snd_nxt {
            self.spurious_acks += 1;
            return 0;
        }
        self.first_ack_at.get_or_insert(now);
        if cum >= self.snd_una {
            self.peer_edge = cum + rwnd;
        }

        let mut rtt_sample = None;
        let mut newly = 0;
        let mut acked_original = false;
        // Latest transmission time among segments this ACK reports delivered.
        let mut delivered_sent = echo;
        let min_rtt = self.cc.min_rtt();
        let mut note_delivered = |seg: &SentSeg| {
            if echo.is_none() && !seg.retransmitted {
                delivered_sent = Some(delivered_sent.map_or(seg.sent_at, |d: SimTime| d.max(seg.sent_at)));
            }
        };

        if cum > self.snd_una {
            while let Some(entry) = self.segs.first_entry() {
                if *entry.key() >= cum {
                    break;
                }
                let seq = *entry.key();
                let seg = entry.remove();
                debug_assert!(seq + seg.len as u64 <= cum, "ack splits a segment");
                if seg.in_pipe() {
                    self.pipe -= seg.len as u64;
                }
                if !seg.retransmitted {
                    rtt_sample = Some(now - seg.sent_at);
                }
                note_delivered(&seg);
                let original = match (echo, self.timeout_at) {
                    (Some(e), Some(t)) => e < t,
                    _ => min_rtt.is_some_and(|m| now - seg.sent_at < m),
                };
                if seg.retransmitted && original {
                    acked_original = true;
                }
                self.retx_queue.remove(&seq);
                self.retx_in_flight.remove(&seq);
            }
            newly = cum - self.snd_una;
            self.snd_una = cum;
            self.loss_scan = self.loss_scan.max(cum);
            if let Some(saved) = self.undo.take() {
                if acked_original {
                    self.undo_timeout(saved);
                }
            }
        }

        for (start, end) in sacks.iter() {
            let keys: Vec<u64> = self.segs.range(start..end).map(|(k, _)| *k).collect();
            for k in keys {
                let seg = self.segs.get_mut(&k).expect("listed key");
                if seg.sacked || k + seg.len as u64 > end {
                    continue;
                }
                if seg.in_pipe() {
                    self.pipe -= seg.len as u64;
                }
                seg.sacked = true;
                note_delivered(seg);
                self.retx_queue.remove(&k);
                self.retx_in_flight.remove(&k);
                self.fack = self.fack.max(k + seg.len as u64);
            }
        }

        if let Some(d) = delivered_sent {
            self.rack_xmit = self.rack_xmit.max(d);
        }
        let (new_loss, retx_lost) = self.detect_losses();

        match self.cc.recovery {
            Recovery::Fast { point } | Recovery::Rto { point } if self.snd_una >= point => {
                self.cc.recovery = Recovery::None;
            }
            _ => {}
        }

        if newly > 0 || rtt_sample.is_some() {
            self.cc.on_ack(newly, rtt_sample);
            if let Some(p) = self.pacer.as_mut() {
                if newly > 0 && !matches!(self.cc.recovery, Recovery::Fast { .. }) {
                    let rtt = self.cc.srtt().unwrap_or(p.nominal_rtt).as_secs_f64().max(1e-3);
                    let w = (p.rate_bps * rtt / 8.0).max(MSS as f64);
                    p.rate_bps += (MSS as f64 * newly as f64 / w) * 8.0 / rtt;
                    p.rate_bps = p.rate_bps.min(p.target_bps as f64);
                }
            }
        }

        if new_loss && self.cc.recovery == Recovery::None {
            self.loss_events += 1;
            self.cc.on_loss(LossKind::TripleDup, self.outstanding());
            self.cc.recovery = Recovery::Fast { point: self.snd_nxt };
            self.reduced_at = now;
            self.force_retx = true;
            self.halve_pacing();
        } else if retx_lost && self.cc.in_fast_recovery() {
            // A retransmission sent after the last reduction was lost too.
            self.loss_events += 1;
            self.cc.on_loss(LossKind::TripleDup, self.cc.cwnd_bytes());
            self.cc.recovery = Recovery::Fast { point: self.snd_nxt };
            self.reduced_at = now;
            self.halve_pacing();
        }

        if self.segs.is_empty() {
            self.rto_deadline = None;
        } else if newly > 0 {
            self.rto_deadline = Some(now + self.cc.rto());
        }
        newly
    }

    fn mark_lost(&mut self, k: u64) {
        let seg = self.segs.get_mut(&k).expect("scoreboard entry");
        if seg.in_pipe() {
            self.pipe -= seg.len as u64;
        }
        seg.lost = true;
        seg.retx_out = false;
        self.retx_in_flight.remove(&k);
        self.retx_queue.insert(k);
    }

    /// Marks lost segments; true if a segment not previously known lost was
    /// found. Two rules apply: more than three segments' worth of data above
    /// it has been selectively acknowledged, or a segment transmitted after
    /// it has been delivered. Paths here never reorder, so the second rule
    /// needs no reordering allowance. The second value reports a lost
    /// retransmission sent since the last window reduction.
    fn detect_losses(&mut self) -> (bool, bool) {
        let mut new_loss = false;
        if self.fack >= DUP_THRESH_BYTES {
            let upto = self.fack - DUP_THRESH_BYTES;
            let keys: Vec<u64> = self
                .segs
                .range(self.loss_scan..)
                .take_while(|(k, s)| *k + s.len as u64 <= upto)
                .map(|(k, _)| *k)
                .collect();
            for k in keys {
                let seg = &self.segs[&k];
                self.loss_scan = k + seg.len as u64;
                if !seg.sacked && !seg.lost {
                    self.mark_lost(k);
                    new_loss = true;
                }
            }
        }
        // Original transmissions leave in sequence order, so the rule walks a
        // cursor; retransmissions are checked individually.
        let rack = self.rack_xmit;
        let mut keys = vec![];
        for (k, seg) in self.segs.range(self.rack_scan.max(self.snd_una)..) {
            if seg.retransmitted {
                continue;
            }
            if seg.sent_at >= rack {
                break;
            }
            self.rack_scan = k + seg.len as u64;
            if !seg.sacked && !seg.lost {
                keys.push(*k);
            }
        }
        new_loss |= !keys.is_empty();
        for k in keys {
            self.mark_lost(k);
        }
        let resent: Vec<u64> = self
            .retx_in_flight
            .iter()
            .copied()
            .filter(|k| self.segs[k].sent_at < rack)
            .collect();
        let retx_lost = resent.iter().any(|k| self.segs[k].sent_at >= self.reduced_at);
        for k in resent {
            self.mark_lost(k);
        }
        (new_loss, retx_lost)
    }

    /// The first ACK after a timeout acknowledged an original transmission:
    /// the timeout was spurious, so the window is restored and the loss marks
    /// are recomputed from what the receiver reported.
    fn undo_timeout(&mut self, (window, recovery): ((u64, u64), Recovery)) {
        self.spurious_timeouts += 1;
        self.cc.restore(window);
        self.cc.recovery = recovery;
        self.retx_queue.clear();
        self.retx_in_flight.clear();
        self.pipe = 0;
        for seg in self.segs.values_mut() {
            seg.lost = false;
            seg.retx_out = false;
            if !seg.sacked {
                self.pipe += seg.len as u64;
            }
        }
        self.loss_scan = self.snd_una;
        self.rack_scan = self.snd_una;
    }

    fn halve_pacing(&mut self) {
        if let Some(p) = self.pacer.as_mut() {
            p.rate_bps = (p.rate_bps / 2.0).max(p.floor_bps().min(p.target_bps as f64));
        }
    }

    /// Arms the retransmission timer for a closed window.
    pub fn arm_persist(&mut self, now: SimTime) {
        if self.rto_deadline.is_none() && self.window_closed() {
            self.rto_deadline = Some(now + self.cc.rto());
        }
    }

    /// Retransmission timer expiry at `now`.
    pub fn on_rto(&mut self, now: SimTime) -> RtoAction {
        match self.rto_deadline {
            Some(d) if d <= now => {}
            _ => return RtoAction::None,
        }
        if self.segs.is_empty() {
            if self.window_closed() {
                self.cc.backoff();
                self.rto_deadline = Some(now + self.cc.rto());
                return RtoAction::Probe;
            }
            self.rto_deadline = None;
            return RtoAction::None;
        }
        self.loss_events += 1;
        if !matches!(self.cc.recovery, Recovery::Rto { .. }) {
            self.undo = Some((self.cc.snapshot(), self.cc.recovery));
            self.timeout_at = Some(now);
        }
        self.cc.on_loss(LossKind::Timeout, self.outstanding());
        for (k, seg) in self.segs.iter_mut() {
            if seg.sacked {
                continue;
            }
            seg.lost = true;
            seg.retx_out = false;
            self.retx_queue.insert(*k);
        }
        self.retx_in_flight.clear();
        self.pipe = 0;
        self.cc.recovery = Recovery::Rto { point: self.snd_nxt };
        self.reduced_at = now;
        self.halve_pacing();
        self.rto_deadline = Some(now + self.cc.rto());
        RtoAction::Retransmit
    }
}
