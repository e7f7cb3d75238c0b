use crate::sim::SimTime;

/// Constant-bitrate datagram source, e.g. 64 kbps voice in 200-byte packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatagramFlow {
    pub rate_bps: u64,
    pub packet_size_bytes: u32,
}

impl DatagramFlow {
    pub fn voip() -> Self {
        Self {
            rate_bps: 64_000,
            packet_size_bytes: 200,
        }
    }

    pub fn interval(&self) -> SimTime {
        SimTime::serialization(self.packet_size_bytes as u64, self.rate_bps)
    }
}

/// Receiver-side accumulators: one-way delay, interarrival jitter
/// (`J += (|D| - J) / 16` over transit-time differences) and loss.
#[derive(Debug, Clone, Default)]
pub struct DatagramStats {
    sent: u64,
    received: u64,
    delay_sum_us: u128,
    jitter_us: f64,
    last_transit_us: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatagramSummary {
    pub sent: u64,
    pub received: u64,
    pub mean_delay_ms: f64,
    pub jitter_ms: f64,
    pub loss: f64,
}

impl DatagramStats {
    pub fn on_send(&mut self) {
        self.sent += 1;
    }

    pub fn on_receive(&mut self, sent_at: SimTime, now: SimTime) {
        self.received += 1;
        let transit = (now - sent_at).as_micros();
        self.delay_sum_us += transit as u128;
        let transit = transit as i64;
        if let Some(prev) = self.last_transit_us {
            let d = (transit - prev).abs() as f64;
            self.jitter_us += (d - self.jitter_us) / 16.0;
        }
        self.last_transit_us = Some(transit);
    }

    pub fn summary(&self) -> DatagramSummary {
        let mean_delay_ms = if self.received == 0 {
            0.0
        } else {
            self.delay_sum_us as f64 / self.received as f64 / 1e3
        };
        let loss = if self.sent == 0 {
            0.0
        } else {
            (self.sent - self.received.min(self.sent)) as f64 / self.sent as f64
        };
        DatagramSummary {
            sent: self.sent,
            received: self.received,
            mean_delay_ms,
            jitter_ms: self.jitter_us / 1e3,
            loss,
        }
    }
}
