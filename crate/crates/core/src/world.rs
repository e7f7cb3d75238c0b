//! One simulation run: the backhaul chain, its links and shapers, the DAMA
//! loop, transport legs (end to end or split at the proxies), traffic
//! sources and measurement.

use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::apps::{self, WorkloadKind};
use crate::dama::{DamaController, TerminalAccessState};
use crate::metrics::{convergence_time, MetricRecord, ThroughputSeries, NO_UE, THROUGHPUT_BIN};
use crate::net::{Direction, Header, Link, Node, Packet, PacketKind, ProbeLayer, Route, SlaShaper, Topology, TxStart};
use crate::pep::{data_order, LegRole, PepSession};
use crate::scenario::{bytes_for, ScenarioSpec};
use crate::sim::{rng_stream, EventHandle, EventQueue, SimTime};
use crate::transport::{
    DatagramFlow, DatagramStats, Pacer, Poll, RtoAction, SackBlocks, Segment, TcpReceiver, TcpSender, MSS,
    TCP_HEADER_BYTES,
};

/// Receive window of an end host.
const ENDPOINT_RWND: u64 = 16 << 20;
/// Application limit of an open-ended bulk source.
const UNLIMITED: u64 = u64::MAX / 4;
const CTRL_RTO: SimTime = SimTime::from_secs(1);
const MAX_CTRL_RTO: SimTime = SimTime::from_secs(60);
const PROBE_BYTES: u32 = 64;

const FWD: usize = 0;
const RET: usize = 1;
const CORE_DOWN: usize = 2;
const CORE_UP: usize = 3;

fn lte_down(ue: u16) -> usize {
    4 + 2 * ue as usize
}

fn lte_up(ue: u16) -> usize {
    5 + 2 * ue as usize
}

#[derive(Debug, Clone)]
enum Ev {
    TxDone(usize),
    Arrive(usize, Packet),
    ShaperRelease { up: bool, ue: u16 },
    LegWake(u32),
    LegRto(u32),
    CtrlRetx(u32),
    FlowStart(usize),
    FlowStop(usize),
    DamaTick,
    DamaRequest(u64),
    DamaEpoch,
    DamaGrant(u64),
    VoipSend(usize),
    ProbeSend,
}

impl Ev {
    fn trace_key(&self) -> (u8, u64) {
        match self {
            Ev::TxDone(l) => (0, *l as u64),
            Ev::Arrive(l, p) => (1, (*l as u64) << 40 | p.id),
            Ev::ShaperRelease { up, ue } => (2, (*up as u64) << 16 | *ue as u64),
            Ev::LegWake(l) => (3, *l as u64),
            Ev::LegRto(l) => (4, *l as u64),
            Ev::CtrlRetx(l) => (5, *l as u64),
            Ev::FlowStart(f) => (6, *f as u64),
            Ev::FlowStop(f) => (7, *f as u64),
            Ev::DamaTick => (8, 0),
            Ev::DamaRequest(r) => (9, *r),
            Ev::DamaEpoch => (10, 0),
            Ev::DamaGrant(g) => (11, *g),
            Ev::VoipSend(v) => (12, *v as u64),
            Ev::ProbeSend => (13, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Direct,
    Lan,
    Sat,
    Wan,
}

impl Role {
    fn slot(self) -> usize {
        match self {
            Role::Direct => 0,
            Role::Lan => 1,
            Role::Sat => 2,
            Role::Wan => 3,
        }
    }

    fn pep_role(self) -> Option<LegRole> {
        match self {
            Role::Direct => None,
            Role::Lan => Some(LegRole::Lan),
            Role::Sat => Some(LegRole::Sat),
            Role::Wan => Some(LegRole::Wan),
        }
    }

    fn from_pep(r: LegRole) -> Role {
        match r {
            LegRole::Lan => Role::Lan,
            LegRole::Sat => Role::Sat,
            LegRole::Wan => Role::Wan,
        }
    }
}

struct Leg {
    flow: usize,
    role: Role,
    ue: u16,
    /// Initiator (UE side) and responder.
    a: Node,
    b: Node,
    /// Addresses each side puts on its packets.
    a_dst: Node,
    b_dst: Node,
    sender_is_a: bool,
    a_established: bool,
    b_accepted: bool,
    req_sent: bool,
    req_received: bool,
    data_seen: bool,
    syn_sent_at: SimTime,
    synack_sent_at: Option<SimTime>,
    ctrl_pending: Option<Segment>,
    ctrl_timer: Option<EventHandle>,
    ctrl_rto: SimTime,
    sender: TcpSender,
    receiver: TcpReceiver,
    final_forwarded: bool,
    rto_ev: Option<(SimTime, EventHandle)>,
    wake_ev: Option<(SimTime, EventHandle)>,
}

impl Leg {
    fn can_send(&self) -> bool {
        if self.sender_is_a {
            self.a_established
        } else {
            self.req_received
        }
    }
}

struct Flow {
    workload: usize,
    round: u8,
    kind: WorkloadKind,
    ue: u16,
    direction: Direction,
    size: Option<u64>,
    background: bool,
    stop: Option<SimTime>,
    start: Option<SimTime>,
    stopped: bool,
    legs: [Option<u32>; 4],
    session: Option<usize>,
    completed_at: Option<SimTime>,
    finished_at: Option<SimTime>,
    handshake_rtt: Option<SimTime>,
    first_byte_at: Option<SimTime>,
    digest: Option<Sha256>,
    digest_bytes: u64,
    series: Option<ThroughputSeries>,
    trigger_scheduled: bool,
}

impl Flow {
    fn is_bulk(&self) -> bool {
        matches!(self.kind, WorkloadKind::BulkDown | WorkloadKind::BulkUp)
    }
}

struct Voip {
    ue: u16,
    flow: DatagramFlow,
    stop: SimTime,
    next_seq: u64,
    down: DatagramStats,
    up: DatagramStats,
}

struct ProbeState {
    ue: u16,
    period: SimTime,
    network: bool,
    transport: bool,
    next_seq: u64,
}

/// Outcome of the property checks performed during and after a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Audit {
    pub dama_epochs: usize,
    /// Σ grants ≤ capacity and every grant ≥ CRA, at every epoch.
    pub dama_ok: bool,
    /// Set when RBDC is zero: every grant equals the CRA.
    pub scpc_constant: Option<bool>,
    pub links_conserving: bool,
    pub throughput_within_rate: bool,
    pub lower_bound_ok: bool,
    pub relay_within_cap: bool,
    pub violations: Vec<String>,
}

impl Audit {
    pub fn all_ok(&self) -> bool {
        self.dama_ok
            && self.scpc_constant != Some(false)
            && self.links_conserving
            && self.throughput_within_rate
            && self.lower_bound_ok
            && self.relay_within_cap
    }
}

/// Per-transfer outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowReport {
    pub workload: usize,
    pub round: u8,
    pub kind: WorkloadKind,
    pub ue: u16,
    pub background: bool,
    pub size: Option<u64>,
    pub start: Option<SimTime>,
    pub completed_at: Option<SimTime>,
    pub finished_at: Option<SimTime>,
    pub handshake_rtt: Option<SimTime>,
    /// Bytes delivered in order to the final receiver.
    pub delivered: u64,
    /// SHA-256 of the delivered payload, for sized transfers.
    pub payload_digest: Option<String>,
    pub retransmits: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_id: String,
    pub records: Vec<MetricRecord>,
    pub flows: Vec<FlowReport>,
    pub audit: Audit,
    /// SHA-256 over the `(time, kind, entity)` sequence of executed events.
    pub trace_digest: String,
    pub events: u64,
}

pub fn run_id(spec: &ScenarioSpec) -> String {
    format!(
        "{}-cra{}-rbdc{}-pep{}-s{}",
        spec.scenario_id,
        spec.cra_bps / 1000,
        spec.rbdc_max_bps / 1000,
        if spec.pep { "on" } else { "off" },
        spec.seed
    )
}

/// Byte `offset` of the synthetic payload of the transfer keyed by `key`.
fn payload_word(key: u64, word: u64) -> [u8; 8] {
    let mut z = key ^ word.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)).to_le_bytes()
}

fn hash_payload(h: &mut Sha256, key: u64, range: std::ops::Range<u64>) {
    let mut o = range.start;
    let mut buf = Vec::with_capacity(4096);
    while o < range.end {
        let word = payload_word(key, o / 8);
        let lo = (o % 8) as usize;
        let hi = ((range.end - (o - o % 8)).min(8)) as usize;
        buf.extend_from_slice(&word[lo..hi]);
        o += (hi - lo) as u64;
        if buf.len() >= 4000 {
            h.update(&buf);
            buf.clear();
        }
    }
    h.update(&buf);
}

/// Wire bytes of a `size`-byte stream cut into full segments.
pub fn wire_bytes(size: u64) -> u64 {
    size + size.div_ceil(MSS as u64) * TCP_HEADER_BYTES as u64
}

pub struct World {
    spec: ScenarioSpec,
    run_id: String,
    q: EventQueue<Ev>,
    topo: Topology,
    links: Vec<Link>,
    link_ends: Vec<(Node, Node)>,
    tx_start: Vec<SimTime>,
    down_shapers: Vec<SlaShaper>,
    up_shapers: Vec<SlaShaper>,
    dama: DamaController,
    grant_bps: u64,
    grants_seen: Vec<u64>,
    flows: Vec<Flow>,
    legs: Vec<Leg>,
    sessions: Vec<PepSession>,
    voips: Vec<Voip>,
    probe: Option<ProbeState>,
    fwd_series: ThroughputSeries,
    ret_series: ThroughputSeries,
    ue_down: Vec<ThroughputSeries>,
    ue_up: Vec<ThroughputSeries>,
    records: Vec<MetricRecord>,
    drops: BTreeMap<&'static str, u64>,
    next_pkt: u64,
    trace: Sha256,
    audit: Audit,
}

impl World {
    /// Builds a run from a single-configuration spec (no sweep).
    pub fn new(spec: &ScenarioSpec) -> Self {
        let spec = spec.clone();
        let end = spec.duration();
        let b = &spec.buffers;
        let sat = spec.delays.sat();
        let mut links = vec![
            Link::new("forward", spec.forward_rate_bps, sat, bytes_for(spec.forward_rate_bps, b.sat_buffer_ms)),
            Link::new("return", spec.cra_bps, sat, bytes_for(spec.return_rate_bps, b.sat_buffer_ms)),
            Link::new("core_down", b.core_rate_bps, spec.delays.core(), b.core_buffer_bytes),
            Link::new("core_up", b.core_rate_bps, spec.delays.core(), b.core_buffer_bytes),
        ];
        let mut link_ends = vec![
            (Node::Gateway, Node::Terminal),
            (Node::Terminal, Node::Gateway),
            (Node::Server, Node::Core),
            (Node::Core, Node::Server),
        ];
        for ue in 0..spec.n_ues {
            links.push(Link::new("lte_down", b.lte_rate_bps, spec.delays.lte(), b.lte_buffer_bytes));
            link_ends.push((Node::ENodeB, Node::Ue(ue)));
            links.push(Link::new("lte_up", b.lte_rate_bps, spec.delays.lte(), b.lte_buffer_bytes));
            link_ends.push((Node::Ue(ue), Node::ENodeB));
        }
        let n = spec.n_ues as usize;
        let shaper = |rate| SlaShaper::new(rate, b.shaper_burst_bytes, bytes_for(rate, b.shaper_backlog_ms).max(b.shaper_burst_bytes));
        let down_shapers = (0..n).map(|_| shaper(spec.sla_down_bps)).collect();
        let up_shapers = (0..n).map(|_| shaper(spec.sla_up_bps)).collect();

        let terminal = TerminalAccessState::new(0, spec.cra_bps, spec.effective_rbdc_bps(), spec.return_rate_bps);
        let dama = DamaController::new(spec.dama.config(), spec.return_rate_bps, vec![terminal])
            .expect("access validated by the scenario");

        let mut flows = vec![];
        let mut voips = vec![];
        let mut q = EventQueue::new();
        for (idx, w) in spec.workloads.iter().enumerate() {
            let jitter_us = (spec.start_jitter_ms * 1e3) as u64;
            let jitter = if jitter_us > 0 {
                let mut rng = rng_stream(spec.seed, &format!("start-jitter/{idx}"));
                SimTime::from_micros(rng.gen_range(0..jitter_us))
            } else {
                SimTime::ZERO
            };
            let start = (w.start() + jitter).min(end);
            if w.kind == WorkloadKind::Voip {
                let v = voips.len();
                voips.push(Voip {
                    ue: w.ue,
                    flow: w.voip_flow(),
                    stop: w.stop(end),
                    next_seq: 0,
                    down: DatagramStats::default(),
                    up: DatagramStats::default(),
                });
                q.schedule(start, Ev::VoipSend(v));
                continue;
            }
            let rounds = if w.kind == WorkloadKind::FetchTwice { 2 } else { 1 };
            for round in 0..rounds {
                let f = flows.len();
                let stop = (!w.kind.is_sized()).then(|| w.stop(end));
                flows.push(Flow {
                    workload: idx,
                    round,
                    kind: w.kind,
                    ue: w.ue,
                    direction: w.direction(),
                    size: w.size_bytes,
                    background: w.background,
                    stop,
                    start: None,
                    stopped: false,
                    legs: [None; 4],
                    session: None,
                    completed_at: None,
                    finished_at: None,
                    handshake_rtt: None,
                    first_byte_at: None,
                    digest: w.size_bytes.map(|_| Sha256::new()),
                    digest_bytes: 0,
                    series: None,
                    trigger_scheduled: round == 0,
                });
                if round == 0 {
                    q.schedule(start, Ev::FlowStart(f));
                }
                if let Some(s) = stop {
                    if s < end {
                        q.schedule(s, Ev::FlowStop(f));
                    }
                }
            }
        }
        let interval = spec.dama.config().interval;
        q.schedule(interval, Ev::DamaTick);
        q.schedule(interval, Ev::DamaEpoch);
        let probe = spec.probes.map(|p| ProbeState {
            ue: p.ue,
            period: SimTime::from_secs_f64(p.period_ms / 1e3),
            network: p.network,
            transport: p.transport,
            next_seq: 0,
        });
        if let Some(p) = spec.probes {
            q.schedule(SimTime::from_secs_f64(p.start_s), Ev::ProbeSend);
        }
        let series = |ue| ThroughputSeries::new(ue, SimTime::ZERO, THROUGHPUT_BIN);
        Self {
            run_id: run_id(&spec),
            topo: Topology {
                n_ues: spec.n_ues,
                pep_enabled: spec.pep,
            },
            tx_start: vec![SimTime::ZERO; links.len()],
            links,
            link_ends,
            down_shapers,
            up_shapers,
            dama,
            grant_bps: spec.cra_bps,
            grants_seen: vec![],
            flows,
            legs: vec![],
            sessions: vec![],
            voips,
            probe,
            fwd_series: series(NO_UE),
            ret_series: series(NO_UE),
            ue_down: (0..spec.n_ues).map(|u| series(u as i32)).collect(),
            ue_up: (0..spec.n_ues).map(|u| series(u as i32)).collect(),
            records: vec![],
            drops: BTreeMap::new(),
            next_pkt: 0,
            trace: Sha256::new(),
            audit: Audit {
                links_conserving: true,
                throughput_within_rate: true,
                lower_bound_ok: true,
                relay_within_cap: true,
                ..Audit::default()
            },
            spec,
            q,
        }
    }

    fn now(&self) -> SimTime {
        self.q.now()
    }

    pub fn run(mut self) -> RunOutput {
        let end = self.spec.duration();
        while let Some((t, ev)) = self.q.pop_due(end) {
            let (kind, id) = ev.trace_key();
            self.trace.update(t.as_micros().to_le_bytes());
            self.trace.update([kind]);
            self.trace.update(id.to_le_bytes());
            self.handle(ev);
        }
        self.finish()
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::TxDone(l) => self.on_tx_done(l),
            Ev::Arrive(l, pkt) => {
                self.links[l].on_delivered();
                let to = self.link_ends[l].1;
                self.arrive(pkt, to);
            }
            Ev::ShaperRelease { up, ue } => {
                let now = self.now();
                let (pkt, from, to) = if up {
                    (self.up_shapers[ue as usize].release(now), Node::ENodeB, Node::NearPep)
                } else {
                    (self.down_shapers[ue as usize].release(now), Node::FarPep, Node::Gateway)
                };
                self.transmit_hop(pkt, from, to);
            }
            Ev::LegWake(l) => {
                self.legs[l as usize].wake_ev = None;
                self.pump(l);
            }
            Ev::LegRto(l) => self.on_leg_rto(l),
            Ev::CtrlRetx(l) => self.on_ctrl_retx(l),
            Ev::FlowStart(f) => self.start_flow(f),
            Ev::FlowStop(f) => self.stop_flow(f),
            Ev::DamaTick => self.on_dama_tick(),
            Ev::DamaRequest(r) => self.dama.on_request(0, r),
            Ev::DamaEpoch => {
                let now = self.now();
                let plan = self.dama.on_epoch(now);
                let grant = plan.grants.get(&0).copied().unwrap_or(self.spec.cra_bps);
                let sat = self.spec.delays.sat();
                self.q.schedule(now + sat, Ev::DamaGrant(grant));
                self.q.schedule_in(self.dama.config.interval, Ev::DamaEpoch);
            }
            Ev::DamaGrant(g) => self.on_grant(g),
            Ev::VoipSend(v) => self.on_voip_send(v),
            Ev::ProbeSend => self.on_probe_send(),
        }
    }

    fn record(&mut self, ue: i32, metric: &str, t: SimTime, value: f64) {
        self.records.push(MetricRecord {
            run_id: self.run_id.clone(),
            scenario_id: self.spec.scenario_id.clone(),
            cra_bps: self.spec.cra_bps,
            rbdc_bps: self.spec.rbdc_max_bps,
            pep: self.spec.pep,
            seed: self.spec.seed,
            ue_id: ue,
            metric_name: metric.to_string(),
            t,
            value,
        });
    }

    fn violation(&mut self, msg: String) {
        if self.audit.violations.len() < 100 {
            self.audit.violations.push(msg);
        }
    }

    // ----- packet forwarding -------------------------------------------------

    fn new_packet(&mut self, ue: u16, flow_id: u32, size: u32, kind: PacketKind, src: Node, dst: Node, header: Header) -> Packet {
        self.next_pkt += 1;
        Packet {
            id: self.next_pkt,
            flow_id,
            ue,
            size_bytes: size,
            kind,
            created_at: self.now(),
            src,
            dst,
            header,
        }
    }

    fn arrive(&mut self, pkt: Packet, at: Node) {
        match self.topo.route(&pkt, at) {
            Ok(Route::Local) => self.deliver(pkt, at),
            Ok(Route::Next(next)) => self.forward(pkt, at, next),
            Err(e) => panic!("routing failure: {e}"),
        }
    }

    fn forward(&mut self, pkt: Packet, from: Node, to: Node) {
        let now = self.now();
        let shaper = match (from, to) {
            (Node::FarPep, Node::Gateway) => Some(false),
            (Node::ENodeB, Node::NearPep) => Some(true),
            _ => None,
        };
        let Some(up) = shaper else {
            return self.transmit_hop(pkt, from, to);
        };
        let ue = pkt.ue;
        let s = if up {
            &mut self.up_shapers[ue as usize]
        } else {
            &mut self.down_shapers[ue as usize]
        };
        match s.offer(pkt, now) {
            Ok((_, Some(pkt))) => self.transmit_hop(pkt, from, to),
            Ok((depart, None)) => {
                self.q.schedule(depart, Ev::ShaperRelease { up, ue });
            }
            Err(_) => {
                *self
                    .drops
                    .entry(if up { "drops_shaper_up" } else { "drops_shaper_down" })
                    .or_default() += 1;
            }
        }
    }

    fn hop_link(from: Node, to: Node) -> Option<usize> {
        match (from, to) {
            (Node::Gateway, Node::Terminal) => Some(FWD),
            (Node::Terminal, Node::Gateway) => Some(RET),
            (Node::Server, Node::Core) => Some(CORE_DOWN),
            (Node::Core, Node::Server) => Some(CORE_UP),
            (Node::ENodeB, Node::Ue(i)) => Some(lte_down(i)),
            (Node::Ue(i), Node::ENodeB) => Some(lte_up(i)),
            _ => None,
        }
    }

    fn transmit_hop(&mut self, pkt: Packet, from: Node, to: Node) {
        let Some(l) = Self::hop_link(from, to) else {
            return self.arrive(pkt, to);
        };
        let now = self.now();
        if l == RET {
            self.dama.record_arrival(0, pkt.size_bytes as u64);
        }
        match self.links[l].enqueue(pkt, now) {
            Ok(Some(tx)) => self.start_tx(l, tx),
            Ok(None) => {}
            Err(_) => {
                let key = match l {
                    FWD => "drops_fwd_link",
                    RET => "drops_ret_link",
                    CORE_DOWN | CORE_UP => "drops_core",
                    _ => "drops_lte",
                };
                *self.drops.entry(key).or_default() += 1;
            }
        }
    }

    fn start_tx(&mut self, l: usize, tx: TxStart) {
        self.tx_start[l] = tx.start;
        self.q.schedule(tx.done_at, Ev::TxDone(l));
    }

    fn on_tx_done(&mut self, l: usize) {
        let now = self.now();
        let start = self.tx_start[l];
        let (pkt, arrive_at, next) = self.links[l].on_tx_done(now);
        if l == FWD || l == RET {
            let wire_bits = pkt.size_bytes as f64 * 8.0;
            let series = if l == FWD { &mut self.fwd_series } else { &mut self.ret_series };
            series.add_interval(start, now, wire_bits);
            if pkt.kind == PacketKind::Data {
                let payload_bits = (pkt.size_bytes - TCP_HEADER_BYTES) as f64 * 8.0;
                let per_ue = if l == FWD { &mut self.ue_down } else { &mut self.ue_up };
                per_ue[pkt.ue as usize].add_interval(start, now, payload_bits);
                let flow = self.legs[pkt.flow_id as usize].flow;
                if let Some(s) = self.flows[flow].series.as_mut() {
                    s.add_interval(start, now, payload_bits);
                }
            }
        }
        self.q.schedule(arrive_at, Ev::Arrive(l, pkt));
        if let Some(tx) = next {
            self.start_tx(l, tx);
        }
    }

    fn deliver(&mut self, pkt: Packet, at: Node) {
        let now = self.now();
        match pkt.header {
            Header::Tcp(seg) => {
                let id = pkt.flow_id;
                let leg = &self.legs[id as usize];
                let to_a = if at == leg.a {
                    true
                } else if at == leg.b {
                    false
                } else {
                    panic!("segment of leg {id} delivered at {at}, not an endpoint");
                };
                self.on_segment(id, to_a, seg);
            }
            Header::Datagram { direction, .. } => {
                let v = &mut self.voips[pkt.flow_id as usize];
                match direction {
                    Direction::Down => v.down.on_receive(pkt.created_at, now),
                    Direction::Up => v.up.on_receive(pkt.created_at, now),
                }
            }
            Header::Probe { seq, layer, reply } => {
                if reply {
                    let metric = match layer {
                        ProbeLayer::Network => "rtt_net_ms",
                        ProbeLayer::Transport => "rtt_tcp_ms",
                    };
                    let rtt = (now - pkt.created_at).as_millis_f64();
                    self.record(pkt.ue as i32, metric, pkt.created_at, rtt);
                } else {
                    let mut back = self.new_packet(
                        pkt.ue,
                        pkt.flow_id,
                        pkt.size_bytes,
                        PacketKind::Probe,
                        at,
                        pkt.src,
                        Header::Probe { seq, layer, reply: true },
                    );
                    back.created_at = pkt.created_at;
                    self.arrive(back, at);
                }
            }
        }
    }

    // ----- flows and legs ------------------------------------------------------

    fn start_flow(&mut self, f: usize) {
        let now = self.now();
        let flow = &mut self.flows[f];
        flow.start = Some(now);
        if flow.is_bulk() {
            flow.series = Some(ThroughputSeries::new(flow.ue as i32, now, THROUGHPUT_BIN));
        }
        if self.spec.pep {
            let dir = flow.direction;
            flow.session = Some(self.sessions.len());
            self.sessions
                .push(PepSession::new(dir, self.spec.pep_config.relay_cap_bytes, now));
            self.open_leg(f, Role::Lan);
        } else {
            self.open_leg(f, Role::Direct);
        }
    }

    fn stop_flow(&mut self, f: usize) {
        self.flows[f].stopped = true;
        if let Some(l) = self.origin_leg(f) {
            let s = &mut self.legs[l as usize].sender;
            if s.final_len().is_none() {
                let len = s.snd_nxt() + MSS as u64;
                s.set_final(len);
            }
            self.pump(l);
        }
    }

    /// Leg whose sender holds the application data.
    fn origin_leg(&self, f: usize) -> Option<u32> {
        let flow = &self.flows[f];
        let role = match (flow.session.is_some(), flow.direction) {
            (false, _) => Role::Direct,
            (true, Direction::Down) => Role::Wan,
            (true, Direction::Up) => Role::Lan,
        };
        flow.legs[role.slot()]
    }

    /// Position in data order within the proxied session.
    fn data_index(&self, l: u32) -> Option<usize> {
        let leg = &self.legs[l as usize];
        let role = leg.role.pep_role()?;
        let dir = self.flows[leg.flow].direction;
        data_order(dir).iter().position(|r| *r == role)
    }

    fn leg_at(&self, f: usize, k: usize) -> Option<u32> {
        let dir = self.flows[f].direction;
        let role = Role::from_pep(data_order(dir)[k]);
        self.flows[f].legs[role.slot()]
    }

    fn open_leg(&mut self, f: usize, role: Role) -> u32 {
        let now = self.now();
        let flow = &self.flows[f];
        let ue = flow.ue;
        let (a, b, a_dst, b_dst) = match role {
            Role::Direct => (Node::Ue(ue), Node::Server, Node::Server, Node::Ue(ue)),
            Role::Lan => (Node::Ue(ue), Node::NearPep, Node::Server, Node::Ue(ue)),
            Role::Sat => (Node::NearPep, Node::FarPep, Node::FarPep, Node::NearPep),
            Role::Wan => (Node::FarPep, Node::Server, Node::Server, Node::Ue(ue)),
        };
        let direction = flow.direction;
        let sender_is_a = direction == Direction::Up;
        let origin = match direction {
            Direction::Down => matches!(role, Role::Direct | Role::Wan),
            Direction::Up => matches!(role, Role::Direct | Role::Lan),
        };
        let id = self.legs.len() as u32;
        // The receiving side of this leg feeds a relay unless it is the
        // final receiver.
        let feeds_relay = flow.session.is_some()
            && matches!(
                (direction, role),
                (Direction::Down, Role::Wan | Role::Sat) | (Direction::Up, Role::Lan | Role::Sat)
            );
        let peer_window = if feeds_relay {
            self.spec.pep_config.relay_cap_bytes
        } else {
            ENDPOINT_RWND
        };
        let mut sender = if origin {
            let final_len = flow.size.or(flow.stopped.then_some(MSS as u64));
            TcpSender::new(flow.size.unwrap_or(UNLIMITED), final_len, peer_window)
        } else {
            TcpSender::new(0, None, peer_window)
        };
        if role == Role::Sat {
            let pc = self.spec.pep_config;
            let target = pc.pacing_target(direction, (self.spec.sla_down_bps, self.spec.sla_up_bps), self.spec.cra_bps, self.grant_bps);
            let nominal_rtt = self.spec.delays.sat() + self.spec.delays.sat();
            sender = sender.with_pacer(Pacer::new(target, nominal_rtt, pc.window_gain));
        }
        self.legs.push(Leg {
            flow: f,
            role,
            ue,
            a,
            b,
            a_dst,
            b_dst,
            sender_is_a,
            a_established: false,
            b_accepted: false,
            req_sent: false,
            req_received: false,
            data_seen: false,
            syn_sent_at: now,
            synack_sent_at: None,
            ctrl_pending: None,
            ctrl_timer: None,
            ctrl_rto: CTRL_RTO,
            sender,
            receiver: TcpReceiver::new(),
            final_forwarded: false,
            rto_ev: None,
            wake_ev: None,
        });
        self.flows[f].legs[role.slot()] = Some(id);
        self.send_ctrl(id, Segment::Syn);
        id
    }

    fn send_seg(&mut self, l: u32, from_a: bool, seg: Segment) {
        let leg = &self.legs[l as usize];
        let (src, dst) = if from_a { (leg.a, leg.a_dst) } else { (leg.b, leg.b_dst) };
        let kind = match seg {
            Segment::Data { .. } => PacketKind::Data,
            Segment::Ack { .. } => PacketKind::Ack,
            _ => PacketKind::Ctrl,
        };
        let size = seg.wire_bytes();
        let ue = leg.ue;
        let pkt = self.new_packet(ue, l, size, kind, src, dst, Header::Tcp(seg));
        self.arrive(pkt, src);
    }

    /// Sends a SYN or request from the initiator and arms its retransmission.
    fn send_ctrl(&mut self, l: u32, seg: Segment) {
        let now = self.now();
        let leg = &mut self.legs[l as usize];
        if let Some(h) = leg.ctrl_timer.take() {
            self.q.cancel(h);
        }
        if seg == Segment::Req {
            leg.req_sent = true;
        }
        leg.ctrl_pending = Some(seg.clone());
        leg.ctrl_rto = CTRL_RTO;
        leg.ctrl_timer = Some(self.q.schedule(now + CTRL_RTO, Ev::CtrlRetx(l)));
        self.send_seg(l, true, seg);
    }

    fn clear_ctrl(&mut self, l: u32) {
        let leg = &mut self.legs[l as usize];
        leg.ctrl_pending = None;
        if let Some(h) = leg.ctrl_timer.take() {
            self.q.cancel(h);
        }
    }

    fn on_ctrl_retx(&mut self, l: u32) {
        let now = self.now();
        let leg = &mut self.legs[l as usize];
        leg.ctrl_timer = None;
        let Some(seg) = leg.ctrl_pending.clone() else {
            return;
        };
        leg.ctrl_rto = (leg.ctrl_rto + leg.ctrl_rto).min(MAX_CTRL_RTO);
        let rto = leg.ctrl_rto;
        leg.ctrl_timer = Some(self.q.schedule(now + rto, Ev::CtrlRetx(l)));
        self.send_seg(l, true, seg);
    }

    fn on_segment(&mut self, l: u32, to_a: bool, seg: Segment) {
        match seg {
            Segment::Syn => {
                assert!(!to_a, "SYN delivered to initiator");
                if !self.legs[l as usize].b_accepted {
                    self.legs[l as usize].b_accepted = true;
                    self.on_accept(l);
                }
                let now = self.now();
                self.legs[l as usize].synack_sent_at.get_or_insert(now);
                self.send_seg(l, false, Segment::SynAck);
            }
            Segment::SynAck => {
                if !self.legs[l as usize].a_established {
                    let now = self.now();
                    let leg = &mut self.legs[l as usize];
                    leg.a_established = true;
                    if leg.sender_is_a {
                        leg.sender.seed_rtt(now - leg.syn_sent_at);
                    }
                    self.clear_ctrl(l);
                    self.on_established(l);
                }
            }
            Segment::Req => {
                if !self.legs[l as usize].req_received {
                    let now = self.now();
                    let leg = &mut self.legs[l as usize];
                    leg.req_received = true;
                    if let Some(t) = leg.synack_sent_at {
                        leg.sender.seed_rtt(now - t);
                    }
                    let f = self.legs[l as usize].flow;
                    self.try_forward_req(f);
                    self.pump(l);
                }
            }
            Segment::Data { seq, len, fin, ts } => self.on_data(l, seq, len, fin, ts),
            Segment::Ack { cum, sacks, rwnd, echo } => self.on_ack(l, cum, sacks, rwnd, echo),
            Segment::WindowProbe => self.send_ack(l, SackBlocks::default(), None),
        }
    }

    fn on_accept(&mut self, l: u32) {
        let f = self.legs[l as usize].flow;
        match self.legs[l as usize].role {
            Role::Lan => {
                self.open_leg(f, Role::Sat);
            }
            Role::Sat => {
                self.open_leg(f, Role::Wan);
            }
            Role::Direct | Role::Wan => {}
        }
    }

    fn on_established(&mut self, l: u32) {
        let now = self.now();
        let leg = &self.legs[l as usize];
        let f = leg.flow;
        let ue_side = matches!(leg.role, Role::Direct | Role::Lan);
        if ue_side {
            let rtt = now - leg.syn_sent_at;
            let flow = &mut self.flows[f];
            flow.handshake_rtt.get_or_insert(rtt);
            if flow.size == Some(0) {
                self.complete(f);
                self.finish_flow(f);
                return;
            }
            if flow.direction == Direction::Down {
                self.send_ctrl(l, Segment::Req);
            } else {
                self.pump(l);
            }
        } else if self.flows[f].direction == Direction::Down {
            self.try_forward_req(f);
        } else {
            self.pump(l);
        }
    }

    /// Passes the download request hop by hop once each next leg is up.
    fn try_forward_req(&mut self, f: usize) {
        let flow = &self.flows[f];
        if flow.direction != Direction::Down || flow.session.is_none() {
            return;
        }
        let chain = [Role::Lan, Role::Sat, Role::Wan];
        for w in chain.windows(2) {
            let (Some(up), Some(next)) = (flow.legs[w[0].slot()], flow.legs[w[1].slot()]) else {
                return;
            };
            let (up, next_leg) = (&self.legs[up as usize], &self.legs[next as usize]);
            if up.req_received && next_leg.a_established && !next_leg.req_sent {
                self.send_ctrl(next, Segment::Req);
                return self.try_forward_req(f);
            }
        }
    }

    fn on_data(&mut self, l: u32, seq: u64, len: u32, fin: bool, ts: SimTime) {
        let now = self.now();
        let leg = &mut self.legs[l as usize];
        let out = leg.receiver.on_data(seq, len, fin);
        if !leg.data_seen {
            leg.data_seen = true;
            if leg.ctrl_pending == Some(Segment::Req) {
                self.clear_ctrl(l);
            }
        }
        let leg = &self.legs[l as usize];
        let f = leg.flow;
        let complete = leg.receiver.is_complete();
        let rcv_nxt = leg.receiver.rcv_nxt();
        let final_len = leg.receiver.final_len();
        if matches!(leg.role, Role::Direct | Role::Lan) && self.flows[f].direction == Direction::Down {
            self.flows[f].first_byte_at.get_or_insert(now);
        }
        let k = self.data_index(l);
        let feeds = k.filter(|k| *k < 2);
        if let (Some(k), Some(s)) = (feeds, self.flows[f].session) {
            let relay = &mut self.sessions[s].relays[k];
            if rcv_nxt > relay.bytes_out() + relay.cap() {
                self.audit.relay_within_cap = false;
            }
            relay.on_input(rcv_nxt);
            if let Some(down) = self.leg_at(f, k + 1) {
                let d = &mut self.legs[down as usize];
                d.sender.extend_app_limit(rcv_nxt);
                if complete && !d.final_forwarded {
                    d.final_forwarded = true;
                    d.sender.set_final(final_len.expect("complete receiver knows its length"));
                }
                self.pump(down);
            }
        } else {
            let key = self.payload_key(f);
            let flow = &mut self.flows[f];
            if let Some(h) = flow.digest.as_mut() {
                hash_payload(h, key, out.delivered.clone());
            }
            flow.digest_bytes = rcv_nxt;
            if complete {
                if flow.direction == Direction::Down {
                    self.complete(f);
                }
                self.finish_flow(f);
            }
        }
        self.send_ack(l, out.sacks, Some(ts));
    }

    fn payload_key(&self, f: usize) -> u64 {
        let flow = &self.flows[f];
        (flow.workload as u64) << 8 | flow.round as u64
    }

    /// Acknowledgment from the receiving side with the current window.
    fn send_ack(&mut self, l: u32, sacks: SackBlocks, echo: Option<SimTime>) {
        let k = self.data_index(l).filter(|k| *k < 2);
        let f = self.legs[l as usize].flow;
        let rwnd = match (k, self.flows[f].session) {
            (Some(k), Some(s)) => self.sessions[s].relays[k].advertise(),
            _ => ENDPOINT_RWND,
        };
        let leg = &self.legs[l as usize];
        let seg = Segment::Ack {
            cum: leg.receiver.rcv_nxt(),
            sacks,
            rwnd,
            echo,
        };
        let from_a = !leg.sender_is_a;
        self.send_seg(l, from_a, seg);
    }

    fn on_ack(&mut self, l: u32, cum: u64, sacks: SackBlocks, rwnd: u64, echo: Option<SimTime>) {
        let now = self.now();
        let leg = &mut self.legs[l as usize];
        leg.sender.on_ack_echo(now, cum, &sacks, rwnd, echo);
        let una = leg.sender.snd_una();
        let all_acked = leg.sender.all_acked();
        let f = leg.flow;
        let ue_sender = matches!(leg.role, Role::Direct | Role::Lan) && self.flows[f].direction == Direction::Up;
        if let (Some(k), Some(s)) = (self.data_index(l).filter(|k| *k >= 1), self.flows[f].session) {
            let relay = &mut self.sessions[s].relays[k - 1];
            relay.on_output(una);
            if relay.wants_update() {
                if let Some(up) = self.leg_at(f, k - 1) {
                    self.send_ack(up, SackBlocks::default(), None);
                }
            }
        }
        if ue_sender && all_acked {
            self.complete(f);
        }
        self.pump(l);
    }

    fn pump(&mut self, l: u32) {
        let now = self.now();
        if !self.legs[l as usize].can_send() {
            return;
        }
        loop {
            let leg = &mut self.legs[l as usize];
            match leg.sender.poll(now) {
                Poll::Send(tx) => {
                    let from_a = leg.sender_is_a;
                    self.send_seg(
                        l,
                        from_a,
                        Segment::Data {
                            seq: tx.seq,
                            len: tx.len,
                            fin: tx.fin,
                            ts: now,
                        },
                    );
                }
                Poll::WaitUntil(t) => {
                    match leg.wake_ev {
                        Some((at, _)) if at <= t => {}
                        other => {
                            if let Some((_, h)) = other {
                                self.q.cancel(h);
                            }
                            let h = self.q.schedule(t, Ev::LegWake(l));
                            self.legs[l as usize].wake_ev = Some((t, h));
                        }
                    }
                    break;
                }
                Poll::Idle => break,
            }
        }
        let leg = &mut self.legs[l as usize];
        if leg.sender.window_closed() {
            leg.sender.arm_persist(now);
        }
        self.sync_rto(l);
    }

    fn sync_rto(&mut self, l: u32) {
        let leg = &mut self.legs[l as usize];
        let Some(d) = leg.sender.rto_deadline() else {
            return;
        };
        match leg.rto_ev {
            Some((at, _)) if at <= d => {}
            other => {
                if let Some((_, h)) = other {
                    self.q.cancel(h);
                }
                let h = self.q.schedule(d, Ev::LegRto(l));
                self.legs[l as usize].rto_ev = Some((d, h));
            }
        }
    }

    fn on_leg_rto(&mut self, l: u32) {
        let now = self.now();
        let leg = &mut self.legs[l as usize];
        leg.rto_ev = None;
        match leg.sender.on_rto(now) {
            RtoAction::Retransmit => self.pump(l),
            RtoAction::Probe => {
                let from_a = leg.sender_is_a;
                self.send_seg(l, from_a, Segment::WindowProbe);
                self.sync_rto(l);
            }
            RtoAction::None => self.sync_rto(l),
        }
    }

    fn complete(&mut self, f: usize) {
        let now = self.now();
        let flow = &mut self.flows[f];
        if flow.completed_at.is_none() {
            flow.completed_at = Some(now);
        }
    }

    fn finish_flow(&mut self, f: usize) {
        let now = self.now();
        if self.flows[f].finished_at.is_some() {
            return;
        }
        self.flows[f].finished_at = Some(now);
        self.check_second_fetch();
    }

    /// Starts each pending second fetch once its first fetch and every
    /// background transfer have ended.
    fn check_second_fetch(&mut self) {
        let background_done = self
            .flows
            .iter()
            .filter(|fl| fl.background)
            .all(|fl| fl.finished_at.is_some());
        if !background_done {
            return;
        }
        let now = self.now();
        for i in 0..self.flows.len() {
            let fl = &self.flows[i];
            if fl.round != 1 || fl.trigger_scheduled {
                continue;
            }
            let first_done = self
                .flows
                .iter()
                .any(|o| o.workload == fl.workload && o.round == 0 && o.finished_at.is_some());
            if first_done {
                let gap = self.spec.workloads[fl.workload].gap();
                self.flows[i].trigger_scheduled = true;
                if now + gap < self.spec.duration() {
                    self.q.schedule(now + gap, Ev::FlowStart(i));
                }
            }
        }
    }

    // ----- return-link access -------------------------------------------------

    fn on_dama_tick(&mut self) {
        let now = self.now();
        let queued = self.links[RET].queue().occupancy_bytes();
        let req = self.dama.on_tick(0, queued);
        self.record(NO_UE, "dama_request_bps", now, req as f64);
        let sat = self.spec.delays.sat();
        self.q.schedule(now + sat, Ev::DamaRequest(req));
        self.q.schedule_in(self.dama.config.interval, Ev::DamaTick);
        if !self.links.iter().all(Link::is_conserving) {
            self.audit.links_conserving = false;
            self.violation(format!("packet conservation broken at {now}"));
        }
    }

    fn on_grant(&mut self, g: u64) {
        let now = self.now();
        self.grant_bps = self.dama.on_grant(0, g);
        self.grants_seen.push(g);
        self.record(NO_UE, "dama_grant_bps", now, g as f64);
        if let Some(tx) = self.links[RET].set_rate(g, now) {
            self.start_tx(RET, tx);
        }
        if self.spec.pep && self.spec.pep_config.expose_grant {
            let pc = self.spec.pep_config;
            let target = pc.pacing_target(Direction::Up, (self.spec.sla_down_bps, self.spec.sla_up_bps), self.spec.cra_bps, g);
            for l in 0..self.legs.len() {
                let leg = &mut self.legs[l];
                if leg.role == Role::Sat && self.flows[leg.flow].direction == Direction::Up {
                    leg.sender.set_pacing_target(target);
                }
            }
        }
    }

    // ----- voice and probes ------------------------------------------------------

    fn on_voip_send(&mut self, v: usize) {
        let now = self.now();
        let voip = &mut self.voips[v];
        if now >= voip.stop {
            return;
        }
        let seq = voip.next_seq;
        voip.next_seq += 1;
        voip.down.on_send();
        voip.up.on_send();
        let (ue, size, interval) = (voip.ue, voip.flow.packet_size_bytes, voip.flow.interval());
        for (direction, src, dst) in [
            (Direction::Down, Node::Server, Node::Ue(ue)),
            (Direction::Up, Node::Ue(ue), Node::Server),
        ] {
            let pkt = self.new_packet(ue, v as u32, size, PacketKind::Voip, src, dst, Header::Datagram { seq, direction });
            self.arrive(pkt, src);
        }
        if now + interval < self.voips[v].stop {
            self.q.schedule(now + interval, Ev::VoipSend(v));
        }
    }

    fn on_probe_send(&mut self) {
        let Some(p) = self.probe.as_mut() else {
            return;
        };
        let seq = p.next_seq;
        p.next_seq += 1;
        let (ue, period) = (p.ue, p.period);
        let layers: Vec<ProbeLayer> = [(p.network, ProbeLayer::Network), (p.transport, ProbeLayer::Transport)]
            .into_iter()
            .filter_map(|(on, layer)| on.then_some(layer))
            .collect();
        for layer in layers {
            let pkt = self.new_packet(
                ue,
                0,
                PROBE_BYTES,
                PacketKind::Probe,
                Node::Ue(ue),
                Node::Server,
                Header::Probe { seq, layer, reply: false },
            );
            self.arrive(pkt, Node::Ue(ue));
        }
        self.q.schedule_in(period, Ev::ProbeSend);
    }

    // ----- end of run -----------------------------------------------------------

    fn finish(mut self) -> RunOutput {
        let end = self.spec.duration();
        for l in &self.links {
            if !l.is_conserving() {
                self.audit.links_conserving = false;
            }
        }
        self.audit_dama();
        self.emit_series(end);
        self.emit_flows(end);
        self.emit_voice(end);
        for s in 0..self.sessions.len() {
            let sess = &self.sessions[s];
            let (relayed, peak) = (sess.relayed(), sess.relays.iter().map(|r| r.peak_buffered()).max().unwrap_or(0));
            let ue = self.flows.iter().find(|f| f.session == Some(s)).map_or(NO_UE, |f| f.ue as i32);
            let t = sess.opened_at;
            self.record(ue, "pep_relay_bytes", t, relayed as f64);
            self.record(ue, "pep_peak_buffer_bytes", t, peak as f64);
        }
        for key in [
            "drops_fwd_link",
            "drops_ret_link",
            "drops_shaper_down",
            "drops_shaper_up",
            "drops_lte",
            "drops_core",
        ] {
            let v = self.drops.get(key).copied().unwrap_or(0);
            self.record(NO_UE, key, end, v as f64);
        }
        let flows = self.flow_reports();
        RunOutput {
            run_id: self.run_id,
            records: self.records,
            flows,
            audit: self.audit,
            trace_digest: hex(&self.trace.finalize()),
            events: self.q.executed(),
        }
    }

    fn audit_dama(&mut self) {
        let cra = self.spec.cra_bps.min(self.spec.return_rate_bps);
        let cap = self.dama.capacity_bps();
        let mut ok = true;
        for plan in self.dama.history() {
            let sum: u64 = plan.grants.values().sum();
            if sum > cap || plan.grants.values().any(|g| *g < cra) {
                ok = false;
            }
        }
        self.audit.dama_epochs = self.dama.history().len();
        self.audit.dama_ok = ok;
        if !ok {
            self.violation("DAMA plan exceeded capacity or undercut CRA".into());
        }
        if self.spec.effective_rbdc_bps() == 0 {
            let constant = self
                .dama
                .history()
                .iter()
                .all(|p| p.grants.values().all(|g| *g == cra))
                && self.grants_seen.iter().all(|g| *g == cra);
            self.audit.scpc_constant = Some(constant);
        }
    }

    fn emit_series(&mut self, end: SimTime) {
        let fwd_rate = self.spec.forward_rate_bps as f64;
        let ret_rate = self.spec.return_rate_bps as f64;
        let mut rows = vec![];
        let mut within = true;
        let mut check = |rates: &[f64], cap: f64| {
            if rates.iter().any(|r| *r > cap * (1.0 + 1e-9)) {
                within = false;
            }
        };
        self.fwd_series.extend_to(end);
        self.ret_series.extend_to(end);
        for (series, name, cap) in [
            (&self.fwd_series, "fwd_link_bps", fwd_rate),
            (&self.ret_series, "ret_link_bps", ret_rate),
        ] {
            let rates = series.rates_bps();
            check(&rates, cap);
            rows.extend(series.times().zip(rates).map(|(t, r)| (NO_UE, name, t, r)));
        }
        for ue in 0..self.spec.n_ues as usize {
            for (all, name, cap) in [
                (&mut self.ue_down, "throughput_down_bps", fwd_rate),
                (&mut self.ue_up, "throughput_up_bps", ret_rate),
            ] {
                let s = &mut all[ue];
                s.extend_to(end);
                let rates = s.rates_bps();
                check(&rates, cap);
                rows.extend(s.times().zip(rates).map(|(t, r)| (ue as i32, name, t, r)));
            }
        }
        if !within {
            self.audit.throughput_within_rate = false;
            self.violation("throughput sample above link rate".into());
        }
        for (ue, name, t, r) in rows {
            self.record(ue, name, t, r);
        }
    }

    fn emit_flows(&mut self, end: SimTime) {
        let burst = self.spec.buffers.shaper_burst_bytes;
        let mut violations = vec![];
        for f in 0..self.flows.len() {
            let flow = &self.flows[f];
            let Some(start) = flow.start else {
                continue;
            };
            let ue = flow.ue as i32;
            let bg = flow.background;
            let mut rows: Vec<(String, SimTime, f64)> = vec![];
            if let Some(rtt) = flow.handshake_rtt {
                rows.push((apps::metric_name("handshake_rtt_ms", bg), start, rtt.as_millis_f64()));
            }
            if let Some(fb) = flow.first_byte_at {
                rows.push((apps::metric_name("first_byte_s", bg), fb, (fb - start).as_secs_f64()));
            }
            let retx: u64 = flow
                .legs
                .iter()
                .flatten()
                .map(|l| self.legs[*l as usize].sender.retransmits())
                .sum();
            let retx_name = apps::metric_name(&format!("retransmits_{}", flow.round), bg);
            rows.push((retx_name, end, retx as f64));
            if let (Some(size), Some(done)) = (flow.size, flow.completed_at) {
                let base = apps::completion_metric(flow.kind, flow.round);
                let elapsed = done - start;
                rows.push((apps::metric_name(base, bg), done, elapsed.as_secs_f64()));
                let rate = match flow.direction {
                    Direction::Down => self.spec.sla_down_bps.min(self.spec.forward_rate_bps),
                    Direction::Up => self.spec.sla_up_bps.min(self.spec.return_rate_bps),
                };
                let shaped = wire_bytes(size).saturating_sub(burst);
                let bound = SimTime::serialization(shaped, rate) + flow.handshake_rtt.unwrap_or(SimTime::ZERO);
                if size > 0 && elapsed < bound {
                    self.audit.lower_bound_ok = false;
                    violations.push(format!("flow {f}: {size} B in {elapsed} s, below bound {bound} s"));
                }
            }
            if flow.is_bulk() && !bg {
                let sla = match flow.direction {
                    Direction::Down => self.spec.sla_down_bps,
                    Direction::Up => self.spec.sla_up_bps,
                } as f64;
                let stop = flow.stop.unwrap_or(end).min(end);
                if let Some(series) = flow.series.as_ref() {
                    let bins = ((stop - start).as_micros() / THROUGHPUT_BIN.as_micros()) as usize;
                    let rates = series.rates_bps();
                    let mut rates: Vec<f64> = rates.into_iter().take(bins).collect();
                    rates.resize(bins, 0.0);
                    let value = convergence_time(&rates, THROUGHPUT_BIN, sla);
                    let t = start + SimTime::from_secs_f64(value.unwrap_or(0.0));
                    rows.push(("convergence_time_s".into(), t, value.unwrap_or(f64::NAN)));
                }
            }
            for (name, t, v) in rows {
                self.record(ue, &name, t, v);
            }
        }
        for v in violations {
            self.violation(v);
        }
    }

    fn emit_voice(&mut self, end: SimTime) {
        for v in 0..self.voips.len() {
            let voip = &self.voips[v];
            let ue = voip.ue as i32;
            let t = voip.stop.min(end);
            let (down, up) = (voip.down.summary(), voip.up.summary());
            for (dir, s) in [("down", down), ("up", up)] {
                self.record(ue, &format!("voip_{dir}_delay_ms"), t, s.mean_delay_ms);
                self.record(ue, &format!("voip_{dir}_jitter_ms"), t, s.jitter_ms);
                self.record(ue, &format!("voip_{dir}_loss"), t, s.loss);
            }
        }
    }

    fn flow_reports(&mut self) -> Vec<FlowReport> {
        let mut out = vec![];
        for f in 0..self.flows.len() {
            let flow = &mut self.flows[f];
            let retransmits = flow
                .legs
                .iter()
                .flatten()
                .map(|l| self.legs[*l as usize].sender.retransmits())
                .sum();
            out.push(FlowReport {
                workload: flow.workload,
                round: flow.round,
                kind: flow.kind,
                ue: flow.ue,
                background: flow.background,
                size: flow.size,
                start: flow.start,
                completed_at: flow.completed_at,
                finished_at: flow.finished_at,
                handshake_rtt: flow.handshake_rtt,
                delivered: flow.digest_bytes,
                payload_digest: flow.digest.take().map(|h| hex(&h.finalize())),
                retransmits,
            });
        }
        out
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs one single-configuration spec to completion.
pub fn simulate(spec: &ScenarioSpec) -> RunOutput {
    World::new(spec).run()
}

/// Digest of the synthetic payload a transfer should deliver.
pub fn expected_payload_digest(workload: usize, round: u8, size: u64) -> String {
    let mut h = Sha256::new();
    hash_payload(&mut h, (workload as u64) << 8 | round as u64, 0..size);
    hex(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_hash_is_chunking_independent() {
        let mut a = Sha256::new();
        hash_payload(&mut a, 7, 0..10_000);
        let mut b = Sha256::new();
        for (s, e) in [(0, 3), (3, 1460), (1460, 1461), (1461, 9_999), (9_999, 10_000)] {
            hash_payload(&mut b, 7, s..e);
        }
        assert_eq!(a.finalize(), b.finalize());
    }

    #[test]
    fn wire_bytes_counts_headers() {
        assert_eq!(wire_bytes(0), 0);
        assert_eq!(wire_bytes(1460), 1500);
        assert_eq!(wire_bytes(1461), 1541);
    }
}
