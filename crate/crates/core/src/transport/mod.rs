//! Packet-granularity reliable transport (NewReno-style window control with a
//! SACK scoreboard, optional rate pacing) and constant-bitrate datagram flows.

mod cc;
mod datagram;
mod receiver;
mod sender;

pub use cc::{Connection, LossKind, Recovery};
pub use datagram::{DatagramFlow, DatagramStats, DatagramSummary};
pub use receiver::{RecvOutcome, TcpReceiver};
pub use sender::{Pacer, Poll, RtoAction, TcpSender, Tx};

use crate::sim::SimTime;

/// Payload bytes per full segment.
pub const MSS: u32 = 1460;
/// Initial window in segments.
pub const INITIAL_WINDOW_SEGMENTS: u64 = 10;
/// Per-packet header overhead on the wire.
pub const TCP_HEADER_BYTES: u32 = 40;

/// Up to three selective-acknowledgment ranges `[start, end)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SackBlocks {
    len: u8,
    blocks: [(u64, u64); 3],
}

impl SackBlocks {
    pub fn push(&mut self, block: (u64, u64)) -> bool {
        if (self.len as usize) < self.blocks.len() {
            self.blocks[self.len as usize] = block;
            self.len += 1;
            true
        } else {
            false
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.blocks[..self.len as usize].iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Transport header carried by TCP-like packets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Syn,
    SynAck,
    /// Application request that makes the responder start sending.
    Req,
    /// `ts` is the transmission time, echoed back by the ACK it triggers.
    Data { seq: u64, len: u32, fin: bool, ts: SimTime },
    Ack {
        cum: u64,
        sacks: SackBlocks,
        rwnd: u64,
        echo: Option<SimTime>,
    },
    /// Zero-window probe; answered by an ACK carrying the current window.
    WindowProbe,
}

impl Segment {
    pub fn wire_bytes(&self) -> u32 {
        match self {
            Segment::Data { len, .. } => len + TCP_HEADER_BYTES,
            _ => TCP_HEADER_BYTES,
        }
    }
}
