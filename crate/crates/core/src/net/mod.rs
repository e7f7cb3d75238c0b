//! Nodes, packets and static routing along the backhaul chain
//! UE ↔ eNodeB ↔ (near PEP) ↔ satellite terminal ↔ gateway ↔ (far PEP) ↔ core ↔ server.

mod link;
mod shaper;

pub use link::{Link, LinkCounters, PacketQueue, TxStart};
pub use shaper::SlaShaper;

use std::fmt;

use crate::sim::SimTime;
use crate::transport::Segment;

/// Conventional MTU; no fragmentation is modeled.
pub const MTU_BYTES: u32 = 1500;
/// Size of a bare header packet (pure ACK, SYN, probe).
pub const HEADER_BYTES: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Ue(u16),
    ENodeB,
    NearPep,
    Terminal,
    Gateway,
    FarPep,
    Core,
    Server,
}

impl Node {
    /// Position along the chain, UE side first.
    pub fn position(self) -> u8 {
        match self {
            Node::Ue(_) => 0,
            Node::ENodeB => 1,
            Node::NearPep => 2,
            Node::Terminal => 3,
            Node::Gateway => 4,
            Node::FarPep => 5,
            Node::Core => 6,
            Node::Server => 7,
        }
    }

    fn at_position(p: u8) -> Node {
        match p {
            1 => Node::ENodeB,
            2 => Node::NearPep,
            3 => Node::Terminal,
            4 => Node::Gateway,
            5 => Node::FarPep,
            6 => Node::Core,
            7 => Node::Server,
            _ => unreachable!("no unique node at position {p}"),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Ue(i) => write!(f, "ue{i}"),
            other => write!(f, "{}", format!("{other:?}").to_lowercase()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Data,
    Ack,
    Probe,
    Voip,
    Ctrl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProbeLayer {
    /// ICMP-style echo; never intercepted.
    Network,
    /// TCP-style ping; intercepted by an active PEP.
    Transport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

#[derive(Debug, Clone)]
pub enum Header {
    Tcp(Segment),
    Datagram { seq: u64, direction: Direction },
    Probe { seq: u64, layer: ProbeLayer, reply: bool },
}

#[derive(Debug, Clone)]
pub struct Packet {
    pub id: u64,
    /// Transport leg, datagram flow or probe stream the packet belongs to.
    pub flow_id: u32,
    /// UE whose SLA and accounting this packet falls under.
    pub ue: u16,
    pub size_bytes: u32,
    pub kind: PacketKind,
    pub created_at: SimTime,
    pub src: Node,
    pub dst: Node,
    pub header: Header,
}

impl Packet {
    /// Transport-layer traffic is what a split-connection proxy terminates.
    pub fn is_transport(&self) -> bool {
        match &self.header {
            Header::Tcp(_) => true,
            Header::Probe { layer, .. } => *layer == ProbeLayer::Transport,
            Header::Datagram { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Deliver to the node the packet is at.
    Local,
    Next(Node),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("no route from {at} to unknown destination {dst}")]
pub struct RouteError {
    pub at: Node,
    pub dst: Node,
}

/// Static routing over the fixed chain, with PEP interception.
#[derive(Debug, Clone, Copy)]
pub struct Topology {
    pub n_ues: u16,
    pub pep_enabled: bool,
}

impl Topology {
    fn known(&self, n: Node) -> bool {
        match n {
            Node::Ue(i) => i < self.n_ues,
            _ => true,
        }
    }

    pub fn route(&self, pkt: &Packet, at: Node) -> Result<Route, RouteError> {
        let dst = pkt.dst;
        if !self.known(dst) || !self.known(at) {
            return Err(RouteError { at, dst });
        }
        if at == dst {
            return Ok(Route::Local);
        }
        if self.pep_enabled && pkt.is_transport() {
            let crosses_up = at == Node::NearPep
                && matches!(pkt.src, Node::Ue(_))
                && dst.position() > Node::NearPep.position();
            let crosses_down = at == Node::FarPep
                && matches!(pkt.src, Node::Server | Node::Core)
                && dst.position() < Node::FarPep.position();
            if crosses_up || crosses_down {
                return Ok(Route::Local);
            }
        }
        let here = at.position();
        let there = dst.position();
        let next = if there > here {
            Node::at_position(here + 1)
        } else if here == 1 {
            // eNodeB fans out to the addressed UE.
            dst
        } else {
            Node::at_position(here - 1)
        };
        Ok(Route::Next(next))
    }

    /// Full path a packet takes from `from`, including `from` and the node
    /// where it is delivered.
    pub fn path(&self, pkt: &Packet, from: Node) -> Result<Vec<Node>, RouteError> {
        let mut path = vec![from];
        let mut at = from;
        while let Route::Next(n) = self.route(pkt, at)? {
            path.push(n);
            at = n;
        }
        Ok(path)
    }
}
