//! IP-over-CCN tunnel: conversion routers (MIRs) carry transport signaling
//! inside Interest packets.
//!
//! A scenario is a linear path of nodes. The two ends are byte-stream
//! endpoints, either plain IP hosts or CCN-native hosts; the nodes between
//! them are MIRs. Each link is either IP or CCN. A MIR receiving a transport
//! segment on its IP side encapsulates it into an Interest named after the
//! next CCN hop; an Interest addressed to the MIR is decapsulated back into a
//! segment.
//!
//! Connection setup is three control exchanges (SYN, SYN+ACK, ACK) and
//! teardown is four (FIN, ACK, FIN, ACK). Data is pushed in segments carried
//! by Interests, each acknowledged by an Interest in the reverse direction.
//! The fabric delays every hop by a seeded random number of ticks, so
//! segments can arrive out of order.

use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt;
use std::net::{IpAddr, Ipv4Addr};

use bitflags::bitflags;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::names::{ContentName, NameComponent};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TunnelError {
    #[error("{0} is not a registered conversion router")]
    UnknownMir(ContentName),
    #[error("{prefix} or {ip} is already registered")]
    Conflict { prefix: ContentName, ip: IpAddr },
    #[error("interest carries no signaling header")]
    NotSignaling,
    #[error("timed out during {0}")]
    Timeout(&'static str),
    #[error("connection is {found:?}, operation needs {expected:?}")]
    InvalidState {
        expected: ConnState,
        found: ConnState,
    },
    #[error("topology does not fit the mode: {0}")]
    Topology(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// A conversion router's CCN name and IP address.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MirName {
    pub ccn_prefix: ContentName,
    pub ip: IpAddr,
}

/// Bijective mapping between routing prefixes and addresses.
#[derive(Debug, Clone, Default)]
pub struct MirRegistry {
    by_prefix: HashMap<ContentName, IpAddr>,
    by_ip: HashMap<IpAddr, ContentName>,
}

impl MirRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, mir: MirName) -> Result<(), TunnelError> {
        if self.by_prefix.contains_key(&mir.ccn_prefix) || self.by_ip.contains_key(&mir.ip) {
            return Err(TunnelError::Conflict {
                prefix: mir.ccn_prefix,
                ip: mir.ip,
            });
        }
        self.by_ip.insert(mir.ip, mir.ccn_prefix.clone());
        self.by_prefix.insert(mir.ccn_prefix, mir.ip);
        Ok(())
    }

    pub fn address_of(&self, prefix: &ContentName) -> Option<IpAddr> {
        self.by_prefix.get(prefix).copied()
    }

    pub fn prefix_of(&self, ip: &IpAddr) -> Option<&ContentName> {
        self.by_ip.get(ip)
    }

    pub fn contains(&self, mir: &MirName) -> bool {
        self.address_of(&mir.ccn_prefix) == Some(mir.ip)
    }

    pub fn len(&self) -> usize {
        self.by_prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_prefix.is_empty()
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
    pub struct SegmentFlags: u8 {
        const SYN = 0x01;
        const ACK = 0x02;
        const FIN = 0x04;
        const RST = 0x08;
    }
}

impl fmt::Display for SegmentFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter_names().map(|(n, _)| n).collect();
        f.write_str(&names.join("+"))
    }
}

/// Transport signaling carried in an Interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SignalingHeader {
    pub flags: SegmentFlags,
    pub seq: u32,
    pub ack: u32,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    /// Length of the attached payload; derived on decode.
    pub payload_len: u32,
}

impl SignalingHeader {
    /// Encoded size: flags, seq, ack, two addresses, two ports.
    pub const WIRE_LEN: usize = 21;

    fn encode(&self, e: &mut Encoder) {
        e.u8(self.flags.bits())
            .u32(self.seq)
            .u32(self.ack)
            .raw(&self.src.octets())
            .raw(&self.dst.octets())
            .u16(self.src_port)
            .u16(self.dst_port);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let bits = d.u8()?;
        let flags = SegmentFlags::from_bits(bits)
            .ok_or_else(|| DecodeError::Invalid(format!("flag bits {bits:#04x}")))?;
        Ok(SignalingHeader {
            flags,
            seq: d.u32()?,
            ack: d.u32()?,
            src: Ipv4Addr::from(d.fixed::<4>()?),
            dst: Ipv4Addr::from(d.fixed::<4>()?),
            src_port: d.u16()?,
            dst_port: d.u16()?,
            payload_len: 0,
        })
    }

    /// Discriminator shared by both directions of a connection: the first 8
    /// bytes of SHA-256 over the ordered 4-tuple, as hex.
    pub fn conn_id(&self) -> ConnId {
        let a = (self.src, self.src_port);
        let b = (self.dst, self.dst_port);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let mut h = Sha256::new();
        for (ip, port) in [lo, hi] {
            h.update(ip.octets());
            h.update(port.to_be_bytes());
        }
        ConnId(h.finalize()[..8].try_into().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConnId(pub [u8; 8]);

impl ConnId {
    pub fn component(&self) -> NameComponent {
        NameComponent::new(hex::encode(self.0)).expect("hex is a valid component")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterestPacket {
    pub name: ContentName,
    pub signaling: Option<SignalingHeader>,
    pub payload: Option<Vec<u8>>,
}

impl InterestPacket {
    /// Length-prefixed name text, optional 21-byte signaling header,
    /// optional length-prefixed payload; each option is flagged by one byte.
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.str(self.name.as_str());
        match &self.signaling {
            Some(h) => {
                e.u8(1);
                h.encode(&mut e);
            }
            None => {
                e.u8(0);
            }
        }
        match &self.payload {
            Some(p) => e.u8(1).bytes(p),
            None => e.u8(0),
        };
        e.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(buf);
        let name = d
            .str()?
            .parse()
            .map_err(|e| DecodeError::Invalid(format!("{e}")))?;
        let mut signaling = match d.u8()? {
            0 => None,
            1 => Some(SignalingHeader::decode(&mut d)?),
            x => return Err(DecodeError::Invalid(format!("signaling flag {x}"))),
        };
        let payload = match d.u8()? {
            0 => None,
            1 => Some(d.bytes()?.to_vec()),
            x => return Err(DecodeError::Invalid(format!("payload flag {x}"))),
        };
        d.finish()?;
        if let Some(h) = signaling.as_mut() {
            h.payload_len = payload.as_ref().map_or(0, |p| p.len() as u32);
        }
        Ok(InterestPacket {
            name,
            signaling,
            payload,
        })
    }
}

/// Wraps `seg` in an Interest named `target/<conn>`.
pub fn encapsulate_signal(
    registry: &MirRegistry,
    seg: &SignalingHeader,
    payload: Option<Vec<u8>>,
    target: &MirName,
    conn: ConnId,
) -> Result<InterestPacket, TunnelError> {
    if !registry.contains(target) {
        return Err(TunnelError::UnknownMir(target.ccn_prefix.clone()));
    }
    let mut seg = *seg;
    seg.payload_len = payload.as_ref().map_or(0, |p| p.len() as u32);
    Ok(InterestPacket {
        name: target.ccn_prefix.child(&conn.component()),
        signaling: Some(seg),
        payload,
    })
}

pub fn decapsulate(
    interest: &InterestPacket,
) -> Result<(SignalingHeader, Option<Vec<u8>>), TunnelError> {
    let h = interest.signaling.ok_or(TunnelError::NotSignaling)?;
    Ok((h, interest.payload.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TunnelMode {
    IpCcnIp,
    IpCcn,
    CcnIp,
    CcnIpCcn,
}

impl TunnelMode {
    pub const ALL: [TunnelMode; 4] = [
        TunnelMode::IpCcnIp,
        TunnelMode::IpCcn,
        TunnelMode::CcnIp,
        TunnelMode::CcnIpCcn,
    ];

    /// Link kinds from client to server.
    pub fn links(self) -> &'static [LinkKind] {
        use LinkKind::*;
        match self {
            TunnelMode::IpCcnIp => &[Ip, Ccn, Ip],
            TunnelMode::IpCcn => &[Ip, Ccn],
            TunnelMode::CcnIp => &[Ccn, Ip],
            TunnelMode::CcnIpCcn => &[Ccn, Ip, Ccn],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TunnelMode::IpCcnIp => "ip-ccn-ip",
            TunnelMode::IpCcn => "ip-ccn",
            TunnelMode::CcnIp => "ccn-ip",
            TunnelMode::CcnIpCcn => "ccn-ip-ccn",
        }
    }
}

impl std::str::FromStr for TunnelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TunnelMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown tunnel mode {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    Ip,
    Ccn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    IpHost,
    CcnHost,
    Mir,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathNode {
    pub kind: NodeKind,
    pub name: MirName,
    /// An absent node drops everything it receives.
    pub present: bool,
}

/// Linear path from client (first) to server (last).
#[derive(Debug, Clone)]
pub struct Topology {
    pub nodes: Vec<PathNode>,
    pub links: Vec<LinkKind>,
    pub registry: MirRegistry,
}

impl Topology {
    /// Default deployment for `mode`: end hosts of the right kind and the
    /// MIRs the mode needs, all registered.
    pub fn for_mode(mode: TunnelMode) -> Self {
        let links = mode.links().to_vec();
        let n = links.len() + 1;
        let mut nodes = Vec::with_capacity(n);
        let mut registry = MirRegistry::new();
        for i in 0..n {
            let kind = if i == 0 || i == n - 1 {
                let link = if i == 0 { links[0] } else { links[n - 2] };
                match link {
                    LinkKind::Ip => NodeKind::IpHost,
                    LinkKind::Ccn => NodeKind::CcnHost,
                }
            } else {
                NodeKind::Mir
            };
            let label = match kind {
                NodeKind::Mir => format!("/mir{i}"),
                NodeKind::IpHost | NodeKind::CcnHost => format!("/host{i}"),
            };
            let name = MirName {
                ccn_prefix: label.parse().unwrap(),
                ip: IpAddr::V4(Ipv4Addr::new(10, 0, 0, i as u8 + 1)),
            };
            registry.register(name.clone()).expect("distinct names");
            nodes.push(PathNode {
                kind,
                name,
                present: true,
            });
        }
        Topology {
            nodes,
            links,
            registry,
        }
    }

    /// Same topology with the server missing.
    pub fn without_server(mut self) -> Self {
        self.nodes.last_mut().unwrap().present = false;
        self
    }

    fn check(&self) -> Result<(), TunnelError> {
        let bad = |m: String| Err(TunnelError::Topology(m));
        if self.nodes.len() < 2 || self.links.len() + 1 != self.nodes.len() {
            return bad("need at least two nodes and one link between each pair".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let end = i == 0 || i == self.nodes.len() - 1;
            if end == (node.kind == NodeKind::Mir) {
                return bad(format!("node {i} has the wrong kind"));
            }
            let touching: Vec<LinkKind> = [i.checked_sub(1), (i < self.links.len()).then_some(i)]
                .into_iter()
                .flatten()
                .map(|l| self.links[l])
                .collect();
            let ok = match node.kind {
                NodeKind::IpHost => touching == [LinkKind::Ip],
                NodeKind::CcnHost => touching == [LinkKind::Ccn],
                NodeKind::Mir => touching.contains(&LinkKind::Ip) && touching.contains(&LinkKind::Ccn),
            };
            if !ok {
                return bad(format!("node {i} ({:?}) sits between {touching:?}", node.kind));
            }
            if (node.kind != NodeKind::IpHost) && !self.registry.contains(&node.name) {
                return Err(TunnelError::UnknownMir(node.name.ccn_prefix.clone()));
            }
            if !matches!(node.name.ip, IpAddr::V4(_)) {
                return bad(format!("node {i} needs an IPv4 address"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunnelConfig {
    pub segment_size: usize,
    pub seed: u64,
    /// Per-hop delay is 1 + uniform(0..jitter) ticks.
    pub jitter: u64,
    /// Unacknowledged segments allowed in flight.
    pub window: usize,
    /// Probability that a hop drops a packet.
    pub loss: f64,
    /// Idle periods tolerated without progress before giving up.
    pub max_retries: u32,
}

impl Default for TunnelConfig {
    fn default() -> Self {
        TunnelConfig {
            segment_size: 4096,
            seed: 1,
            jitter: 8,
            window: 32,
            loss: 0.0,
            max_retries: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConnState {
    Closed,
    Listen,
    SynSent,
    SynReceived,
    Established,
    FinWait1,
    FinWait2,
    CloseWait,
    LastAck,
}

/// One control message sent by an endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlExchange {
    pub from_client: bool,
    pub flags: SegmentFlags,
    /// CCN links the message crossed as an Interest.
    pub ccn_hops: u32,
}

#[derive(Debug, Clone)]
enum Frame {
    Ip(SignalingHeader, Vec<u8>),
    Ccn(Vec<u8>),
}

#[derive(Debug)]
struct InFlight {
    at: u64,
    seq: u64,
    to: usize,
    from: usize,
    frame: Frame,
    /// Index into the trace when this is a control message.
    trace: Option<usize>,
}

impl PartialEq for InFlight {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for InFlight {}
impl PartialOrd for InFlight {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for InFlight {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(o.at, o.seq))
    }
}

#[derive(Debug)]
struct Endpoint {
    state: ConnState,
    ip: Ipv4Addr,
    port: u16,
    isn: u32,
    snd_nxt: u32,
    snd_una: u32,
    rcv_nxt: u32,
    unacked: BTreeMap<u32, Vec<u8>>,
    reorder: BTreeMap<u32, Vec<u8>>,
    delivered: Vec<u8>,
    last_control: Option<SignalingHeader>,
}

impl Endpoint {
    fn new(ip: Ipv4Addr, port: u16, isn: u32, state: ConnState) -> Self {
        Endpoint {
            state,
            ip,
            port,
            isn,
            snd_nxt: isn,
            snd_una: isn,
            rcv_nxt: 0,
            unacked: BTreeMap::new(),
            reorder: BTreeMap::new(),
            delivered: Vec::new(),
            last_control: None,
        }
    }
}

/// Counters kept across a connection's lifetime.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TunnelCounters {
    pub interests_sent: u64,
    pub ip_segments_sent: u64,
    pub data_segments: u64,
    pub acks: u64,
    pub retransmissions: u64,
    pub dropped: u64,
}

/// A client/server connection across a tunnel path.
#[derive(Debug)]
pub struct TunnelConnection {
    pub mode: Option<TunnelMode>,
    topology: Topology,
    cfg: TunnelConfig,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<InFlight>>,
    ends: [Endpoint; 2],
    conn: ConnId,
    trace: Vec<ControlExchange>,
    pub counters: TunnelCounters,
}

impl TunnelConnection {
    pub fn new(topology: Topology, cfg: TunnelConfig) -> Result<Self, TunnelError> {
        topology.check()?;
        let v4 = |n: &PathNode| match n.name.ip {
            IpAddr::V4(a) => a,
            IpAddr::V6(_) => unreachable!("checked"),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let client = Endpoint::new(v4(&topology.nodes[0]), 40000 + rng.random_range(0..20000), rng.random(), ConnState::Closed);
        let server = Endpoint::new(v4(topology.nodes.last().unwrap()), 80, rng.random(), ConnState::Listen);
        let probe = SignalingHeader {
            flags: SegmentFlags::empty(),
            seq: 0,
            ack: 0,
            src: client.ip,
            dst: server.ip,
            src_port: client.port,
            dst_port: server.port,
            payload_len: 0,
        };
        Ok(TunnelConnection {
            mode: None,
            conn: probe.conn_id(),
            topology,
            cfg,
            rng,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            ends: [client, server],
            trace: Vec::new(),
            counters: TunnelCounters::default(),
        })
    }

    pub fn for_mode(mode: TunnelMode, cfg: TunnelConfig) -> Result<Self, TunnelError> {
        let mut c = Self::new(Topology::for_mode(mode), cfg)?;
        c.mode = Some(mode);
        Ok(c)
    }

    pub fn state(&self) -> ConnState {
        self.ends[0].state
    }

    pub fn peer_state(&self) -> ConnState {
        self.ends[1].state
    }

    pub fn conn_id(&self) -> ConnId {
        self.conn
    }

    /// Bytes the server has delivered in order.
    pub fn received(&self) -> &[u8] {
        &self.ends[1].delivered
    }

    pub fn bytes_delivered(&self) -> u64 {
        self.ends[1].delivered.len() as u64
    }

    // --- fabric ---

    fn end_index(&self, side: usize) -> usize {
        if side == 0 {
            0
        } else {
            self.topology.nodes.len() - 1
        }
    }

    fn emit(&mut self, from: usize, to: usize, header: SignalingHeader, payload: Vec<u8>, trace: Option<usize>) {
        let link = self.topology.links[from.min(to)];
        let frame = match link {
            LinkKind::Ip => {
                self.counters.ip_segments_sent += 1;
                Frame::Ip(header, payload)
            }
            LinkKind::Ccn => {
                self.counters.interests_sent += 1;
                if let Some(t) = trace {
                    self.trace[t].ccn_hops += 1;
                }
                let target = self.topology.nodes[to].name.clone();
                let body = (!payload.is_empty()).then_some(payload);
                let interest = encapsulate_signal(&self.topology.registry, &header, body, &target, self.conn)
                    .expect("topology names are registered");
                Frame::Ccn(interest.encode())
            }
        };
        if self.cfg.loss > 0.0 && self.rng.random_bool(self.cfg.loss.min(1.0)) {
            self.counters.dropped += 1;
            return;
        }
        let delay = 1 + self.rng.random_range(0..self.cfg.jitter.max(1));
        self.seq += 1;
        self.queue.push(Reverse(InFlight {
            at: self.now + delay,
            seq: self.seq,
            to,
            from,
            frame,
            trace,
        }));
    }

    /// Sends a segment from endpoint `side` (0 client, 1 server).
    fn send_segment(&mut self, side: usize, flags: SegmentFlags, seq: u32, ack: u32, payload: Vec<u8>) {
        let (me, peer) = (&self.ends[side], &self.ends[1 - side]);
        let header = SignalingHeader {
            flags,
            seq,
            ack,
            src: me.ip,
            dst: peer.ip,
            src_port: me.port,
            dst_port: peer.port,
            payload_len: payload.len() as u32,
        };
        let control = payload.is_empty() && !(flags == SegmentFlags::ACK && self.ends[side].state == ConnState::Established);
        let trace = control.then(|| {
            self.trace.push(ControlExchange {
                from_client: side == 0,
                flags,
                ccn_hops: 0,
            });
            self.trace.len() - 1
        });
        if control {
            self.ends[side].last_control = Some(header);
        }
        let from = self.end_index(side);
        let to = if side == 0 { 1 } else { from - 1 };
        self.emit(from, to, header, payload, trace);
    }

    /// Delivers the next packet. Returns false when nothing is in flight.
    fn step(&mut self) -> Result<bool, TunnelError> {
        let Some(Reverse(p)) = self.queue.pop() else {
            return Ok(false);
        };
        self.now = p.at;
        let node = &self.topology.nodes[p.to];
        if !node.present {
            self.counters.dropped += 1;
            return Ok(true);
        }
        let (header, payload) = match p.frame {
            Frame::Ip(h, payload) => (h, payload),
            Frame::Ccn(bytes) => {
                let interest = InterestPacket::decode(&bytes)?;
                if !node.name.ccn_prefix.is_prefix_of(&interest.name) {
                    self.counters.dropped += 1;
                    return Ok(true);
                }
                let (h, payload) = decapsulate(&interest)?;
                (h, payload.unwrap_or_default())
            }
        };
        let last = self.topology.nodes.len() - 1;
        if p.to == 0 || p.to == last {
            let side = usize::from(p.to == last);
            self.on_segment(side, header, payload);
        } else {
            let next = if p.to > p.from { p.to + 1 } else { p.to - 1 };
            self.emit(p.to, next, header, payload, p.trace);
        }
        Ok(true)
    }

    // --- endpoint behavior ---

    fn on_segment(&mut self, side: usize, h: SignalingHeader, payload: Vec<u8>) {
        use ConnState::*;
        let f = h.flags;
        let state = self.ends[side].state;
        match (state, f) {
            (Listen, _) if f == SegmentFlags::SYN => {
                let e = &mut self.ends[side];
                e.rcv_nxt = h.seq.wrapping_add(1);
                e.state = SynReceived;
                let (seq, ack) = (e.isn, e.rcv_nxt);
                e.snd_nxt = e.isn.wrapping_add(1);
                e.snd_una = e.snd_nxt;
                self.send_segment(side, SegmentFlags::SYN | SegmentFlags::ACK, seq, ack, Vec::new());
            }
            (SynSent, _) if f == SegmentFlags::SYN | SegmentFlags::ACK => {
                let e = &mut self.ends[side];
                if h.ack != e.isn.wrapping_add(1) {
                    return;
                }
                e.rcv_nxt = h.seq.wrapping_add(1);
                e.state = Established;
                let (seq, ack) = (e.snd_nxt, e.rcv_nxt);
                // The third exchange is still part of setup.
                self.ends[side].state = SynSent;
                self.send_segment(side, SegmentFlags::ACK, seq, ack, Vec::new());
                self.ends[side].state = Established;
            }
            (SynReceived, _) if f == SegmentFlags::ACK => {
                let e = &mut self.ends[side];
                if h.ack == e.snd_nxt {
                    e.state = Established;
                }
            }
            // Duplicates of an earlier control message mean our reply was lost.
            (SynReceived, _) if f == SegmentFlags::SYN => self.resend_control(side),
            (Established, _) if f == SegmentFlags::SYN | SegmentFlags::ACK => self.resend_control(side),
            (CloseWait | LastAck | Closed, _) if f.contains(SegmentFlags::FIN) => self.resend_control(side),
            (Established | FinWait1 | FinWait2, _) if !payload.is_empty() => {
                self.on_data(side, h.seq, payload);
            }
            (Established, _) if f == SegmentFlags::ACK => self.on_ack(side, h.ack),
            (Established, _) if f.contains(SegmentFlags::FIN) => {
                let e = &mut self.ends[side];
                if h.seq != e.rcv_nxt {
                    return;
                }
                e.rcv_nxt = e.rcv_nxt.wrapping_add(1);
                e.state = CloseWait;
                let (seq, ack) = (e.snd_nxt, e.rcv_nxt);
                self.send_segment(side, SegmentFlags::ACK, seq, ack, Vec::new());
                // Nothing left to send: close our half at once.
                let e = &mut self.ends[side];
                e.state = LastAck;
                let seq = e.snd_nxt;
                e.snd_nxt = e.snd_nxt.wrapping_add(1);
                self.send_segment(side, SegmentFlags::FIN | SegmentFlags::ACK, seq, ack, Vec::new());
            }
            (FinWait1, _) if f == SegmentFlags::ACK => {
                if h.ack == self.ends[side].snd_nxt {
                    self.ends[side].state = FinWait2;
                }
            }
            (FinWait1 | FinWait2, _) if f.contains(SegmentFlags::FIN) => {
                let e = &mut self.ends[side];
                e.rcv_nxt = h.seq.wrapping_add(1);
                e.state = Closed;
                let (seq, ack) = (e.snd_nxt, e.rcv_nxt);
                self.send_segment(side, SegmentFlags::ACK, seq, ack, Vec::new());
            }
            (LastAck, _) if f == SegmentFlags::ACK => {
                if h.ack == self.ends[side].snd_nxt {
                    self.ends[side].state = Closed;
                }
            }
            _ => {}
        }
    }

    fn on_data(&mut self, side: usize, seq: u32, payload: Vec<u8>) {
        let e = &mut self.ends[side];
        if seq.wrapping_sub(e.rcv_nxt) < u32::MAX / 2 {
            e.reorder.entry(seq).or_insert(payload);
        }
        while let Some(p) = e.reorder.remove(&e.rcv_nxt) {
            e.rcv_nxt = e.rcv_nxt.wrapping_add(p.len() as u32);
            e.delivered.extend_from_slice(&p);
        }
        let (s, a) = (e.snd_nxt, e.rcv_nxt);
        self.counters.acks += 1;
        self.send_segment(side, SegmentFlags::ACK, s, a, Vec::new());
    }

    fn on_ack(&mut self, side: usize, ack: u32) {
        let e = &mut self.ends[side];
        if ack.wrapping_sub(e.snd_una) > e.snd_nxt.wrapping_sub(e.snd_una) {
            return;
        }
        e.snd_una = ack;
        let acked: Vec<u32> = e
            .unacked
            .iter()
            .filter(|(s, p)| s.wrapping_add(p.len() as u32).wrapping_sub(e.isn) <= ack.wrapping_sub(e.isn))
            .map(|(s, _)| *s)
            .collect();
        for s in acked {
            e.unacked.remove(&s);
        }
    }

    /// Runs the fabric until `done` holds, retransmitting the last control
    /// message (or unacknowledged data) whenever the fabric falls idle.
    fn drive(&mut self, phase: &'static str, done: impl Fn(&Self) -> bool, mut on_idle: impl FnMut(&mut Self)) -> Result<(), TunnelError> {
        let mut retries = 0;
        while !done(self) {
            if !self.step()? {
                if retries >= self.cfg.max_retries {
                    return Err(TunnelError::Timeout(phase));
                }
                retries += 1;
                self.counters.retransmissions += 1;
                on_idle(self);
            }
        }
        Ok(())
    }

    fn resend_control(&mut self, side: usize) {
        if let Some(h) = self.ends[side].last_control {
            let from = self.end_index(side);
            let to = if side == 0 { 1 } else { from - 1 };
            self.emit(from, to, h, Vec::new(), None);
        }
    }

    /// Three-way setup. Returns the control exchanges it took.
    pub fn establish(&mut self) -> Result<Vec<ControlExchange>, TunnelError> {
        if self.state() != ConnState::Closed {
            return Err(TunnelError::InvalidState {
                expected: ConnState::Closed,
                found: self.state(),
            });
        }
        let start = self.trace.len();
        let isn = self.ends[0].isn;
        self.ends[0].state = ConnState::SynSent;
        self.ends[0].snd_nxt = isn.wrapping_add(1);
        self.ends[0].snd_una = self.ends[0].snd_nxt;
        self.send_segment(0, SegmentFlags::SYN, isn, 0, Vec::new());
        let result = self.drive(
            "connection establishment",
            |c| c.ends.iter().all(|e| e.state == ConnState::Established),
            |c| {
                let side = if c.ends[0].state == ConnState::Established { 1 } else { 0 };
                c.resend_control(side);
            },
        );
        if let Err(e) = result {
            self.queue.clear();
            self.ends[0].state = ConnState::Closed;
            return Err(e);
        }
        Ok(self.trace[start..].to_vec())
    }

    /// Pushes `data` to the server and waits until all of it is
    /// acknowledged.
    pub fn send(&mut self, data: &[u8]) -> Result<(), TunnelError> {
        if self.state() != ConnState::Established {
            return Err(TunnelError::InvalidState {
                expected: ConnState::Established,
                found: self.state(),
            });
        }
        let mut chunks = data.chunks(self.cfg.segment_size.max(1));
        let mut pending = chunks.next();
        let mut retries = 0;
        loop {
            while self.ends[0].unacked.len() < self.cfg.window.max(1) {
                let Some(chunk) = pending else { break };
                let e = &mut self.ends[0];
                let seq = e.snd_nxt;
                e.snd_nxt = seq.wrapping_add(chunk.len() as u32);
                e.unacked.insert(seq, chunk.to_vec());
                let ack = e.rcv_nxt;
                self.counters.data_segments += 1;
                self.send_segment(0, SegmentFlags::ACK, seq, ack, chunk.to_vec());
                pending = chunks.next();
            }
            if pending.is_none() && self.ends[0].unacked.is_empty() {
                return Ok(());
            }
            let before = self.ends[0].unacked.len();
            if !self.step()? {
                if retries >= self.cfg.max_retries {
                    return Err(TunnelError::Timeout("data transfer"));
                }
                retries += 1;
                let resend: Vec<(u32, Vec<u8>)> =
                    self.ends[0].unacked.iter().map(|(s, p)| (*s, p.clone())).collect();
                for (seq, p) in resend {
                    self.counters.retransmissions += 1;
                    let ack = self.ends[0].rcv_nxt;
                    self.send_segment(0, SegmentFlags::ACK, seq, ack, p);
                }
            } else if self.ends[0].unacked.len() < before {
                retries = 0;
            }
        }
    }

    /// Four-way teardown initiated by the client, after in-flight data has
    /// been delivered.
    pub fn terminate(&mut self) -> Result<Vec<ControlExchange>, TunnelError> {
        if self.state() != ConnState::Established {
            return Err(TunnelError::InvalidState {
                expected: ConnState::Established,
                found: self.state(),
            });
        }
        self.drive("draining", |c| c.queue.is_empty(), |_| {})?;
        let start = self.trace.len();
        let e = &mut self.ends[0];
        e.state = ConnState::FinWait1;
        let (seq, ack) = (e.snd_nxt, e.rcv_nxt);
        e.snd_nxt = e.snd_nxt.wrapping_add(1);
        self.send_segment(0, SegmentFlags::FIN | SegmentFlags::ACK, seq, ack, Vec::new());
        self.drive(
            "connection termination",
            |c| c.ends.iter().all(|e| e.state == ConnState::Closed),
            |c| {
                let side = if c.ends[0].state == ConnState::Closed { 1 } else { 0 };
                c.resend_control(side);
            },
        )?;
        Ok(self.trace[start..].to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    pub mode: Option<TunnelMode>,
    pub bytes_sent: u64,
    pub bytes_delivered: u64,
    pub sent_digest: String,
    pub digest: String,
    pub establish_exchanges: usize,
    pub terminate_exchanges: usize,
    pub interests_total: u64,
    pub counters: TunnelCounters,
}

impl TransferReport {
    pub fn intact(&self) -> bool {
        self.bytes_sent == self.bytes_delivered && self.sent_digest == self.digest
    }
}

fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Establishes a connection, pushes `payload`, and terminates.
pub fn run_scenario(
    mode: TunnelMode,
    payload: &[u8],
    topology: Topology,
    cfg: TunnelConfig,
) -> Result<TransferReport, TunnelError> {
    if topology.links != mode.links() {
        return Err(TunnelError::Topology(format!(
            "{} needs links {:?}, topology has {:?}",
            mode.as_str(),
            mode.links(),
            topology.links
        )));
    }
    let mut conn = TunnelConnection::new(topology, cfg)?;
    conn.mode = Some(mode);
    let setup = conn.establish()?;
    conn.send(payload)?;
    let teardown = conn.terminate()?;
    Ok(TransferReport {
        mode: Some(mode),
        bytes_sent: payload.len() as u64,
        bytes_delivered: conn.bytes_delivered(),
        sent_digest: sha256_hex(payload),
        digest: sha256_hex(conn.received()),
        establish_exchanges: setup.len(),
        terminate_exchanges: teardown.len(),
        interests_total: conn.counters.interests_sent,
        counters: conn.counters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> SignalingHeader {
        SignalingHeader {
            flags: SegmentFlags::SYN,
            seq: 7,
            ack: 0,
            src: Ipv4Addr::new(10, 0, 0, 1),
            dst: Ipv4Addr::new(10, 0, 0, 4),
            src_port: 40001,
            dst_port: 80,
            payload_len: 0,
        }
    }

    #[test]
    fn encapsulation_names_and_round_trips() {
        let topo = Topology::for_mode(TunnelMode::IpCcnIp);
        let mir2 = topo.nodes[2].name.clone();
        let h = header();
        let i = encapsulate_signal(&topo.registry, &h, None, &mir2, h.conn_id()).unwrap();
        assert_eq!(i.name.as_str(), format!("/mir2/{}", hex::encode(h.conn_id().0)));
        let back = InterestPacket::decode(&i.encode()).unwrap();
        assert_eq!(decapsulate(&back).unwrap(), (h, None));

        let stranger = MirName {
            ccn_prefix: "/mir9".parse().unwrap(),
            ip: "10.9.9.9".parse().unwrap(),
        };
        assert_eq!(
            encapsulate_signal(&topo.registry, &h, None, &stranger, h.conn_id()),
            Err(TunnelError::UnknownMir("/mir9".parse().unwrap()))
        );
    }

    #[test]
    fn signaling_header_is_21_bytes() {
        let i = InterestPacket {
            name: "/a".parse().unwrap(),
            signaling: Some(header()),
            payload: None,
        };
        // name (4 + 2), flag, header, flag
        assert_eq!(i.encode().len(), 6 + 1 + SignalingHeader::WIRE_LEN + 1);
    }

    #[test]
    fn conn_id_is_direction_independent() {
        let h = header();
        let mut r = h;
        std::mem::swap(&mut r.src, &mut r.dst);
        std::mem::swap(&mut r.src_port, &mut r.dst_port);
        assert_eq!(h.conn_id(), r.conn_id());
    }

    #[test]
    fn registry_is_bijective() {
        let mut reg = MirRegistry::new();
        let a = MirName {
            ccn_prefix: "/mir1".parse().unwrap(),
            ip: "10.0.0.1".parse().unwrap(),
        };
        reg.register(a.clone()).unwrap();
        let same_ip = MirName {
            ccn_prefix: "/mir2".parse().unwrap(),
            ..a.clone()
        };
        assert!(reg.register(same_ip).is_err());
        assert_eq!(reg.prefix_of(&reg.address_of(&a.ccn_prefix).unwrap()), Some(&a.ccn_prefix));
    }

    #[test]
    fn handshake_counts() {
        for mode in TunnelMode::ALL {
            let mut c = TunnelConnection::for_mode(mode, TunnelConfig::default()).unwrap();
            let setup = c.establish().unwrap();
            let flags: Vec<_> = setup.iter().map(|x| x.flags).collect();
            assert_eq!(
                flags,
                vec![SegmentFlags::SYN, SegmentFlags::SYN | SegmentFlags::ACK, SegmentFlags::ACK],
                "{mode:?}"
            );
            assert!(setup.iter().all(|x| x.ccn_hops >= 1));
            assert_eq!(c.state(), ConnState::Established);
            assert_eq!(c.peer_state(), ConnState::Established);
            assert!(matches!(c.establish(), Err(TunnelError::InvalidState { .. })));
            let teardown = c.terminate().unwrap();
            assert_eq!(teardown.len(), 4, "{mode:?}");
            assert_eq!(c.bytes_delivered(), 0);
            assert_eq!(c.state(), ConnState::Closed);
            assert_eq!(c.peer_state(), ConnState::Closed);
            assert!(matches!(c.terminate(), Err(TunnelError::InvalidState { .. })));
        }
    }

    #[test]
    fn absent_peer_times_out() {
        let topo = Topology::for_mode(TunnelMode::IpCcnIp).without_server();
        let mut c = TunnelConnection::new(topo, TunnelConfig::default()).unwrap();
        assert_eq!(c.establish(), Err(TunnelError::Timeout("connection establishment")));
        assert_eq!(c.state(), ConnState::Closed);
    }

    #[test]
    fn transfers_survive_reordering() {
        let payload: Vec<u8> = (0..200_000u32).map(|i| (i * 31 % 251) as u8).collect();
        for mode in TunnelMode::ALL {
            let r = run_scenario(mode, &payload, Topology::for_mode(mode), TunnelConfig::default()).unwrap();
            assert!(r.intact(), "{mode:?}");
            assert_eq!((r.establish_exchanges, r.terminate_exchanges), (3, 4));
        }
    }

    #[test]
    fn transfers_survive_loss() {
        let payload = vec![0x5a; 100_000];
        let cfg = TunnelConfig {
            loss: 0.05,
            max_retries: 50,
            ..TunnelConfig::default()
        };
        let r = run_scenario(TunnelMode::CcnIpCcn, &payload, Topology::for_mode(TunnelMode::CcnIpCcn), cfg).unwrap();
        assert!(r.intact());
        assert!(r.counters.retransmissions > 0);
    }
}
