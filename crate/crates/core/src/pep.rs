//! Split-connection proxy pair at the two edges of the satellite segment.
//!
//! A proxied session is three transport legs chained in data order
//! (`lan`, `sat`, `wan` for uploads; reversed for downloads). Between two
//! consecutive legs a [`Relay`] buffers bytes that the upstream leg delivered
//! in order and the downstream leg has not yet had acknowledged.

use serde::{Deserialize, Serialize};

use crate::net::Direction;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PepConfig {
    pub relay_cap_bytes: u64,
    /// Fraction of the known capacity share the satellite leg paces at.
    pub pace_fraction: f64,
    /// Pace the return direction at the current DAMA grant instead of the CRA.
    pub expose_grant: bool,
    /// Satellite-leg window as a multiple of pacing rate × path RTT.
    pub window_gain: f64,
}

impl Default for PepConfig {
    fn default() -> Self {
        Self {
            relay_cap_bytes: 2_000_000,
            pace_fraction: 1.0,
            expose_grant: false,
            window_gain: 2.0,
        }
    }
}

impl PepConfig {
    /// Pacing rate for a satellite leg carrying data in `direction`. A
    /// return leg never exceeds the UE's upload SLA.
    pub fn pacing_target(&self, direction: Direction, sla: (u64, u64), cra_bps: u64, grant_bps: u64) -> u64 {
        let (sla_down_bps, sla_up_bps) = sla;
        let share = match direction {
            Direction::Down => sla_down_bps,
            Direction::Up if self.expose_grant => grant_bps.min(sla_up_bps),
            Direction::Up => cra_bps.min(sla_up_bps),
        };
        ((share as f64 * self.pace_fraction) as u64).max(1)
    }
}

/// Which legs of a proxied session sit where, in data order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegRole {
    /// UE to near proxy.
    Lan,
    /// Near proxy to far proxy, across the satellite.
    Sat,
    /// Far proxy to server.
    Wan,
}

pub fn data_order(direction: Direction) -> [LegRole; 3] {
    match direction {
        Direction::Down => [LegRole::Wan, LegRole::Sat, LegRole::Lan],
        Direction::Up => [LegRole::Lan, LegRole::Sat, LegRole::Wan],
    }
}

/// Byte relay between two legs inside one proxy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relay {
    cap: u64,
    /// Bytes delivered in order by the upstream leg.
    bytes_in: u64,
    /// Bytes acknowledged on the downstream leg.
    bytes_out: u64,
    peak: u64,
    /// Right edge last advertised upstream.
    advertised_edge: u64,
}

impl Relay {
    pub fn new(cap: u64) -> Self {
        Self {
            cap,
            bytes_in: 0,
            bytes_out: 0,
            peak: 0,
            advertised_edge: cap,
        }
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn bytes_in(&self) -> u64 {
        self.bytes_in
    }

    pub fn bytes_out(&self) -> u64 {
        self.bytes_out
    }

    pub fn buffered(&self) -> u64 {
        self.bytes_in - self.bytes_out
    }

    pub fn peak_buffered(&self) -> u64 {
        self.peak
    }

    /// Upstream leg delivered the stream up to `upto`.
    pub fn on_input(&mut self, upto: u64) {
        assert!(
            upto <= self.bytes_out + self.cap,
            "relay overflow: input {upto} beyond window edge {}",
            self.bytes_out + self.cap
        );
        self.bytes_in = self.bytes_in.max(upto);
        self.peak = self.peak.max(self.buffered());
    }

    /// Downstream leg had the stream acknowledged up to `upto`.
    pub fn on_output(&mut self, upto: u64) {
        assert!(upto <= self.bytes_in, "relay emitted bytes it never received");
        self.bytes_out = self.bytes_out.max(upto);
    }

    /// Window to advertise upstream.
    pub fn rwnd(&self) -> u64 {
        self.cap - self.buffered()
    }

    /// Records an advertisement and returns the window it carried.
    pub fn advertise(&mut self) -> u64 {
        self.advertised_edge = self.bytes_out + self.cap;
        self.rwnd()
    }

    /// Whether the window has opened far enough since the last advertisement
    /// to warrant an unsolicited window update.
    pub fn wants_update(&self) -> bool {
        self.bytes_out + self.cap >= self.advertised_edge + self.cap / 4
    }
}

/// Relays of one proxied session plus its establishment bookkeeping.
#[derive(Debug, Clone)]
pub struct PepSession {
    pub direction: Direction,
    /// `relays[0]` joins data-order legs 0 and 1, `relays[1]` legs 1 and 2.
    pub relays: [Relay; 2],
    pub opened_at: SimTime,
}

impl PepSession {
    pub fn new(direction: Direction, cap: u64, opened_at: SimTime) -> Self {
        Self {
            direction,
            relays: [Relay::new(cap), Relay::new(cap)],
            opened_at,
        }
    }

    /// Total bytes held inside both proxies.
    pub fn buffered(&self) -> u64 {
        self.relays.iter().map(Relay::buffered).sum()
    }

    pub fn relayed(&self) -> u64 {
        self.relays[1].bytes_out()
    }
}
