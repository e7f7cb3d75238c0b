use crate::sim::SimTime;

use super::{INITIAL_WINDOW_SEGMENTS, MSS};

const MIN_RTO: SimTime = SimTime::from_secs(1);
const MAX_RTO: SimTime = SimTime::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    TripleDup,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recovery {
    None,
    /// Until the cumulative ACK passes `point`.
    Fast { point: u64 },
    Rto { point: u64 },
}

/// Congestion and RTT state of one transport endpoint.
#[derive(Debug, Clone)]
pub struct Connection {
    mss: u64,
    cwnd: f64,
    ssthresh: u64,
    srtt: Option<SimTime>,
    rttvar: SimTime,
    min_rtt: Option<SimTime>,
    rto: SimTime,
    pub recovery: Recovery,
}

impl Default for Connection {
    fn default() -> Self {
        Self::new()
    }
}

impl Connection {
    pub fn new() -> Self {
        Self {
            mss: MSS as u64,
            cwnd: (INITIAL_WINDOW_SEGMENTS * MSS as u64) as f64,
            ssthresh: u64::MAX,
            srtt: None,
            rttvar: SimTime::ZERO,
            min_rtt: None,
            rto: MIN_RTO,
            recovery: Recovery::None,
        }
    }

    pub fn with_window(cwnd_bytes: u64, ssthresh_bytes: u64) -> Self {
        Self {
            cwnd: cwnd_bytes as f64,
            ssthresh: ssthresh_bytes,
            ..Self::new()
        }
    }

    pub fn cwnd_bytes(&self) -> u64 {
        self.cwnd as u64
    }

    pub fn ssthresh_bytes(&self) -> u64 {
        self.ssthresh
    }

    pub fn srtt(&self) -> Option<SimTime> {
        self.srtt
    }

    pub fn rttvar(&self) -> SimTime {
        self.rttvar
    }

    pub fn min_rtt(&self) -> Option<SimTime> {
        self.min_rtt
    }

    pub fn rto(&self) -> SimTime {
        self.rto
    }

    pub fn in_fast_recovery(&self) -> bool {
        matches!(self.recovery, Recovery::Fast { .. })
    }

    /// Standard smoothed-RTT estimator (gains 1/8 and 1/4), RTO floor 1 s.
    pub fn on_rtt_sample(&mut self, sample: SimTime) {
        let r = sample.as_micros() as i64;
        match self.srtt {
            None => {
                self.srtt = Some(sample);
                self.rttvar = SimTime::from_micros(sample.as_micros() / 2);
            }
            Some(srtt) => {
                let s = srtt.as_micros() as i64;
                let var = self.rttvar.as_micros() as i64;
                let var = (3 * var + (s - r).abs()) / 4;
                let s = (7 * s + r) / 8;
                self.rttvar = SimTime::from_micros(var as u64);
                self.srtt = Some(SimTime::from_micros(s as u64));
            }
        }
        self.min_rtt = Some(self.min_rtt.map_or(sample, |m| m.min(sample)));
        let srtt = self.srtt.expect("set above");
        self.rto = (srtt + SimTime::from_micros(4 * self.rttvar.as_micros())).clamp(MIN_RTO, MAX_RTO);
    }

    /// Window growth for newly acknowledged bytes. No growth during fast recovery.
    pub fn on_ack(&mut self, acked_bytes: u64, rtt_sample: Option<SimTime>) {
        if let Some(r) = rtt_sample {
            self.on_rtt_sample(r);
        }
        if self.in_fast_recovery() || acked_bytes == 0 {
            return;
        }
        if (self.cwnd as u64) < self.ssthresh {
            self.cwnd += acked_bytes as f64;
        } else {
            self.cwnd += (self.mss * acked_bytes) as f64 / self.cwnd;
        }
    }

    pub fn on_loss(&mut self, kind: LossKind, flight_bytes: u64) {
        self.ssthresh = (flight_bytes / 2).max(2 * self.mss);
        match kind {
            LossKind::TripleDup => self.cwnd = self.ssthresh as f64,
            LossKind::Timeout => {
                self.cwnd = self.mss as f64;
                self.backoff();
            }
        }
    }

    /// Window state saved before a timeout so it can be undone.
    pub fn snapshot(&self) -> (u64, u64) {
        (self.cwnd as u64, self.ssthresh)
    }

    pub fn restore(&mut self, (cwnd, ssthresh): (u64, u64)) {
        self.cwnd = cwnd as f64;
        self.ssthresh = ssthresh;
    }

    /// Doubles the RTO, capped at 60 s.
    pub fn backoff(&mut self) {
        self.rto = SimTime::from_micros(self.rto.as_micros() * 2).min(MAX_RTO);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const M: u64 = MSS as u64;

    /// Round-based oracle: every segment in flight is acknowledged once per RTT.
    fn slow_start_oracle(initial_segments: u64, rounds: u32) -> u64 {
        let mut segments = initial_segments;
        for _ in 0..rounds {
            let acks = segments;
            for _ in 0..acks {
                segments += 1;
            }
        }
        segments
    }

    #[test]
    fn three_rtts_of_slow_start() {
        let mut c = Connection::new();
        for _ in 0..3 {
            let acks = c.cwnd_bytes() / M;
            for _ in 0..acks {
                c.on_ack(M, None);
            }
        }
        assert_eq!(slow_start_oracle(10, 3), 80);
        assert_eq!(c.cwnd_bytes(), 80 * M);
    }

    #[test]
    fn congestion_avoidance_adds_about_one_mss_per_rtt() {
        let mut c = Connection::with_window(100 * M, 100 * M);
        for _ in 0..100 {
            c.on_ack(M, None);
        }
        let segs = c.cwnd_bytes() as f64 / M as f64;
        assert!((segs - 101.0).abs() < 0.02, "{segs}");
    }

    #[test]
    fn srtt_converges_to_constant_sample() {
        let mut c = Connection::new();
        for _ in 0..200 {
            c.on_rtt_sample(SimTime::from_millis(560));
        }
        let srtt = c.srtt().unwrap().as_micros() as i64;
        assert!((srtt - 560_000).abs() <= 10);
        assert!(c.rto() >= SimTime::from_secs(1));
    }

    #[test]
    fn triple_dup_halves_flight() {
        let mut c = Connection::with_window(80 * M, u64::MAX);
        c.on_loss(LossKind::TripleDup, 80 * M);
        assert_eq!(c.cwnd_bytes(), 40 * M);
        assert_eq!(c.ssthresh_bytes(), 40 * M);
    }

    #[test]
    fn ssthresh_floor_is_two_mss() {
        let mut c = Connection::new();
        c.on_loss(LossKind::TripleDup, M);
        assert_eq!(c.ssthresh_bytes(), 2 * M);
    }

    #[test]
    fn timeout_collapses_window_and_backs_off() {
        let mut c = Connection::new();
        assert_eq!(c.rto(), SimTime::from_secs(1));
        c.on_loss(LossKind::Timeout, 20 * M);
        assert_eq!(c.cwnd_bytes(), M);
        assert_eq!(c.rto(), SimTime::from_secs(2));
        c.on_loss(LossKind::Timeout, M);
        assert_eq!(c.rto(), SimTime::from_secs(4));
        for _ in 0..10 {
            c.backoff();
        }
        assert_eq!(c.rto(), SimTime::from_secs(60));
    }

    #[test]
    fn no_growth_in_fast_recovery() {
        let mut c = Connection::with_window(40 * M, 40 * M);
        c.recovery = Recovery::Fast { point: 0 };
        c.on_ack(10 * M, None);
        assert_eq!(c.cwnd_bytes(), 40 * M);
    }
}
