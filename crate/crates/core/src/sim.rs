//! Deterministic virtual-time simulator running APoV rounds over a modeled
//! network.
//!
//! Each node has an uplink and a downlink of `band` bytes per second. A
//! message occupies the sender's uplink (FIFO) and, from the moment it
//! starts, the receiver's downlink; it is delivered once both have carried
//! it. There is no propagation delay. Time is integer nanoseconds.
//!
//! A round runs:
//!
//! 1. every bookkeeper computes a block and sends it to every other node,
//!    round-robin starting from its successor;
//! 2. every consortium node, once it holds all blocks, computes and sends one
//!    vote message to the leader;
//! 3. the leader, once it holds all votes, tallies, seals the block group and
//!    sends it to every other node;
//! 4. every node validates and stores the group.
//!
//! All nodes wait for the round to finish before starting the next one. With
//! [`StorageMode::Pipelined`] storing runs on a per-node storage lane that
//! overlaps the next round; with [`StorageMode::Serial`] the round waits for
//! it.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apov::{
    elect_bookkeepers, Apov, Block, BlockGroup, Chain, ConfidenceVote,
    ConsensusConfig, Digest, NodeId, Transaction, VoteMessage, VotePolicy,
};
use crate::model::{self, ModelParams};

/// Message and record sizes in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageSizes {
    pub m: u32,
    pub h: u32,
    pub t: u32,
    pub h_v: u32,
    pub v_b: u32,
    pub h_r: u32,
    pub r_b: u32,
}

impl Default for MessageSizes {
    fn default() -> Self {
        MessageSizes {
            m: 266,
            h: 692,
            t: 40,
            h_v: 400,
            v_b: 100,
            h_r: 170,
            r_b: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeModel {
    /// The fitted per-step polynomials evaluated at the node count.
    Fitted,
    /// The fitted polynomials divided by a computing-power multiple.
    Scaled { a: f64 },
    /// No computation delay; isolates transmission.
    Zero,
}

impl ComputeModel {
    /// Per-step durations in seconds.
    pub fn steps(&self, n: u32) -> [f64; 4] {
        match *self {
            ComputeModel::Fitted => model::computation_times(n),
            ComputeModel::Scaled { a } => model::computation_times(n).map(|t| t / a),
            ComputeModel::Zero => [0.0; 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageMode {
    /// Storage overlaps the next round on a per-node lane.
    Pipelined,
    /// The round ends only once every node has stored the group.
    Serial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleMode {
    /// Every node keeps books; the round leader does not vote.
    LeaderExcluded,
    /// Every node keeps books and votes, the leader included.
    AllVote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultBehavior {
    /// Silent from this round on.
    CrashAtRound(u64),
    /// Publishes blocks whose merkle root does not match their transactions.
    InvalidBlocks,
    /// Votes with seeded random opinions.
    DissentingVotes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub node: NodeId,
    pub behavior: FaultBehavior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub nodes: u32,
    pub roles: RoleMode,
    /// Bytes per second on each uplink and downlink.
    pub band: f64,
    pub sizes: MessageSizes,
    /// Transactions per block.
    pub k: u32,
    pub compute: ComputeModel,
    pub storage: StorageMode,
    pub seed: u64,
    pub rounds: u32,
    pub faults: Vec<FaultSpec>,
    /// Rounds per bookkeeper term.
    pub term_length: u64,
    /// Bookkeeper seats filled at each election; all nodes when unset.
    pub bookkeeper_seats: Option<u32>,
    /// Per-phase collection timeout in seconds; derived from the analytic
    /// round time when unset.
    pub collect_timeout: Option<f64>,
    /// Retain full block groups in node chains (digests are always kept).
    pub keep_groups: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            nodes: 3,
            roles: RoleMode::LeaderExcluded,
            band: model::PROTOTYPE_BAND,
            sizes: MessageSizes::default(),
            k: 10000,
            compute: ComputeModel::Fitted,
            storage: StorageMode::Pipelined,
            seed: 1,
            rounds: 10,
            faults: Vec::new(),
            term_length: 10,
            bookkeeper_seats: None,
            collect_timeout: None,
            keep_groups: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    ConfigInvalid(String),
    #[error("node {node} does not exist (nodes: {nodes})")]
    UnknownNode { node: NodeId, nodes: u32 },
}

impl SimConfig {
    pub fn prototype(n: u32) -> Self {
        SimConfig {
            nodes: n,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::ConfigInvalid(m.into()));
        if self.nodes < 2 {
            return bad("need at least 2 nodes");
        }
        if !(self.band.is_finite() && self.band > 0.0) {
            return bad("band must be positive");
        }
        let s = self.sizes;
        if [s.m, s.h, s.t, s.h_v, s.v_b, s.h_r, s.r_b].contains(&0) {
            return bad("all message sizes must be positive");
        }
        if self.k == 0 || self.term_length == 0 {
            return bad("k and term_length must be positive");
        }
        if let ComputeModel::Scaled { a } = self.compute {
            if !(a.is_finite() && a > 0.0) {
                return bad("computing-power multiple must be positive");
            }
        }
        if let Some(seats) = self.bookkeeper_seats {
            if seats == 0 || seats > self.nodes {
                return bad("bookkeeper_seats must be in 1..=nodes");
            }
        }
        if let Some(t) = self.collect_timeout {
            if !(t.is_finite() && t > 0.0) {
                return bad("collect_timeout must be positive");
            }
        }
        if let Some(f) = self.faults.iter().find(|f| f.node >= self.nodes) {
            return Err(SimError::UnknownNode {
                node: f.node,
                nodes: self.nodes,
            });
        }
        Ok(())
    }

    fn consensus_config(&self) -> ConsensusConfig {
        let n = self.nodes;
        let seats = self.bookkeeper_seats.unwrap_or(n);
        let (n_c, n_bc) = match self.roles {
            RoleMode::LeaderExcluded => (n - 1, seats.min(n - 1)),
            RoleMode::AllVote => (n, seats),
        };
        ConsensusConfig {
            n_b: seats,
            n_c,
            n_bc,
            k: self.k,
            term_length: self.term_length,
        }
    }

    fn model_params(&self) -> ModelParams {
        let c = self.consensus_config();
        let s = self.sizes;
        ModelParams {
            n: self.nodes,
            n_b: c.n_b,
            n_c: c.n_c,
            n_bc: c.n_bc,
            m: s.m as f64,
            h: s.h as f64,
            t: s.t as f64,
            h_v: s.h_v as f64,
            v_b: s.v_b as f64,
            h_r: s.h_r as f64,
            r_b: s.r_b as f64,
            k: self.k as f64,
            band: self.band,
            a: 1.0,
        }
    }

    fn timeout_ns(&self) -> u64 {
        let secs = self.collect_timeout.unwrap_or_else(|| {
            let est = model::transmission_times(&self.model_params()).t_tran
                + self.compute.steps(self.nodes).iter().sum::<f64>();
            10.0 * est + 1.0
        });
        secs_to_ns(secs)
    }
}

/// Returns `config` with `fault` added.
pub fn inject_fault(config: &SimConfig, fault: FaultSpec) -> Result<SimConfig, SimError> {
    if fault.node >= config.nodes {
        return Err(SimError::UnknownNode {
            node: fault.node,
            nodes: config.nodes,
        });
    }
    let mut out = config.clone();
    out.faults.push(fault);
    Ok(out)
}

fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

fn ns_to_secs(ns: u64) -> f64 {
    ns as f64 / 1e9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: u64,
    pub leader: NodeId,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    /// Storage time on the critical path of this round.
    pub t4: f64,
    pub t_cons: f64,
    pub committed_txs: u64,
    /// Some live node's chain tip differs from the leader's.
    pub forked: bool,
    pub blocks_proposed: u32,
    /// Bookkeepers whose block was left out of the body.
    pub excluded: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stall {
    pub round: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub nodes: u32,
    pub rounds_completed: u64,
    pub mean_round_time: f64,
    pub total_time: f64,
    pub committed_txs: u64,
    /// Committed transactions per second of virtual time.
    pub throughput: f64,
    /// Storage time summed over rounds, whether or not it was overlapped.
    pub storage_time: f64,
    pub divergent_rounds: u64,
    pub stall: Option<Stall>,
    /// Elected bookkeeper sets, one per term.
    pub terms: Vec<Vec<NodeId>>,
    /// Final chain tip per node, `None` for crashed nodes.
    pub tips: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub rounds: Vec<RoundMetrics>,
    pub summary: SimSummary,
}

impl SimReport {
    /// Writes `round,t1,t2,t3,t4,t_cons,committed_txs`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["round", "t1", "t2", "t3", "t4", "t_cons", "committed_txs"])?;
        for r in &self.rounds {
            out.write_record([
                r.round.to_string(),
                format!("{:.6}", r.t1),
                format!("{:.6}", r.t2),
                format!("{:.6}", r.t3),
                format!("{:.6}", r.t4),
                format!("{:.6}", r.t_cons),
                r.committed_txs.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Payload {
    Block(Arc<Block>),
    Votes(VoteMessage),
    Group(Arc<BlockGroup>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    MakeBlock,
    Vote,
    Seal,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Blocks,
    Votes,
    Header,
}

#[derive(Debug)]
enum Event {
    Compute { node: NodeId, step: Step },
    TxStart { msg: usize },
    Deliver { msg: usize },
    Timeout { phase: Phase },
}

#[derive(Debug)]
struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

#[derive(Debug)]
struct Message {
    from: NodeId,
    to: NodeId,
    duration: u64,
    payload: Payload,
}

#[derive(Debug, Default)]
struct RoundState {
    blocks: Vec<Arc<Block>>,
    blocks_done: Option<u64>,
    votes: Vec<VoteMessage>,
    votes_done: Option<u64>,
    sealed: bool,
    group_at: Option<u64>,
    stored_at: Option<u64>,
}

#[derive(Debug)]
struct NodeState {
    chain: Chain,
    crashed: bool,
    crash_round: Option<u64>,
    invalid_blocks: bool,
    dissenting: bool,
    lane_free: u64,
    round: RoundState,
    /// Rounds of the current term in which this node's block was excluded.
    strikes: u64,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    apov: Apov,
    steps_ns: [u64; 4],
    timeout: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    now: u64,
    up_free: Vec<u64>,
    down_free: Vec<u64>,
    messages: Vec<Option<Message>>,
    nodes: Vec<NodeState>,
    // current round
    round: u64,
    round_start: u64,
    leader: NodeId,
    bookkeepers: Vec<NodeId>,
    consortium: Vec<NodeId>,
    prev: Digest,
    validity: HashMap<Digest, bool>,
    stall: Option<String>,
    sealed_group: Option<Arc<BlockGroup>>,
}

/// Runs `config.rounds` rounds and reports per-round metrics and a summary.
pub fn run_rounds(config: &SimConfig) -> Result<SimReport, SimError> {
    config.validate()?;
    let apov = Apov::new(config.consensus_config(), config.seed)
        .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
    let n = config.nodes;
    let nodes = (0..n)
        .map(|id| {
            let faults = config.faults.iter().filter(|f| f.node == id);
            let mut st = NodeState {
                chain: Chain::new(&apov, config.keep_groups),
                crashed: false,
                crash_round: None,
                invalid_blocks: false,
                dissenting: false,
                lane_free: 0,
                round: RoundState::default(),
                strikes: 0,
            };
            for f in faults {
                match f.behavior {
                    FaultBehavior::CrashAtRound(r) => {
                        st.crash_round = Some(st.crash_round.map_or(r, |c: u64| c.min(r)))
                    }
                    FaultBehavior::InvalidBlocks => st.invalid_blocks = true,
                    FaultBehavior::DissentingVotes => st.dissenting = true,
                }
            }
            st
        })
        .collect();
    let steps = config.compute.steps(n);
    let mut sim = Sim {
        cfg: config,
        prev: Chain::new(&apov, false).tip_digest(),
        apov,
        steps_ns: steps.map(secs_to_ns),
        timeout: config.timeout_ns(),
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0,
        up_free: vec![0; n as usize],
        down_free: vec![0; n as usize],
        messages: Vec::new(),
        nodes,
        round: 0,
        round_start: 0,
        leader: BlockGroup::genesis().header.next_leader,
        bookkeepers: (0..n).collect(),
        consortium: Vec::new(),
        validity: HashMap::new(),
        stall: None,
        sealed_group: None,
    };
    Ok(sim.run())
}

impl Sim<'_> {
    fn schedule(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            at,
            seq: self.seq,
            event,
        }));
    }

    fn live(&self, id: NodeId) -> bool {
        !self.nodes[id as usize].crashed
    }

    fn transfer_ns(&self, bytes: u64) -> u64 {
        (bytes as f64 * 1e9 / self.cfg.band).ceil() as u64
    }

    /// Queues a message on the sender's uplink.
    fn send(&mut self, from: NodeId, to: NodeId, bytes: u64, payload: Payload) {
        let duration = self.transfer_ns(bytes);
        let start = self.now.max(self.up_free[from as usize]);
        self.up_free[from as usize] = start + duration;
        self.messages.push(Some(Message {
            from,
            to,
            duration,
            payload,
        }));
        let msg = self.messages.len() - 1;
        self.schedule(start, Event::TxStart { msg });
    }

    fn run(&mut self) -> SimReport {
        let mut rounds = Vec::new();
        let mut terms = vec![self.bookkeepers.clone()];
        let mut storage_time = 0.0;
        for r in 1..=self.cfg.rounds as u64 {
            if r > 1 && (r - 1) % self.cfg.term_length == 0 {
                self.hold_election();
                terms.push(self.bookkeepers.clone());
            }
            match self.run_round(r) {
                Some(m) => {
                    storage_time += ns_to_secs(self.steps_ns[3]);
                    rounds.push(m);
                }
                None => break,
            }
        }
        // Drain storage still pending on the lanes into the last round.
        if let (Some(last), StorageMode::Pipelined) = (rounds.last_mut(), self.cfg.storage) {
            let drain = self.nodes.iter().filter(|n| !n.crashed).map(|n| n.lane_free).max();
            if let Some(drain) = drain {
                let extra = drain.saturating_sub(self.now);
                last.t4 += ns_to_secs(extra);
                last.t_cons += ns_to_secs(extra);
                self.now += extra;
            }
        }

        let total_time: f64 = rounds.iter().map(|m| m.t_cons).sum();
        let committed: u64 = rounds.iter().map(|m| m.committed_txs).sum();
        let summary = SimSummary {
            nodes: self.cfg.nodes,
            rounds_completed: rounds.len() as u64,
            mean_round_time: if rounds.is_empty() {
                0.0
            } else {
                total_time / rounds.len() as f64
            },
            total_time,
            committed_txs: committed,
            throughput: if total_time > 0.0 {
                committed as f64 / total_time
            } else {
                0.0
            },
            storage_time,
            divergent_rounds: rounds.iter().filter(|m| m.forked).count() as u64,
            stall: self.stall.take().map(|reason| Stall {
                round: rounds.len() as u64 + 1,
                reason,
            }),
            terms,
            tips: self
                .nodes
                .iter()
                .map(|n| (!n.crashed).then(|| n.chain.tip_digest().to_hex()))
                .collect(),
        };
        SimReport { rounds, summary }
    }

    /// Confidence votes go to every live node that had no block excluded
    /// during the last term; the top `seats` become bookkeepers.
    fn hold_election(&mut self) {
        let n = self.cfg.nodes;
        let seats = self.cfg.bookkeeper_seats.unwrap_or(n);
        let candidates: Vec<NodeId> = (0..n).filter(|&c| self.live(c)).collect();
        let votes: Vec<ConfidenceVote> = candidates
            .iter()
            .flat_map(|&voter| {
                candidates
                    .iter()
                    .filter(|&&c| self.nodes[c as usize].strikes == 0)
                    .map(move |&c| ConfidenceVote::new(voter, c))
            })
            .collect();
        if let Ok(winners) = elect_bookkeepers(&candidates, &votes, seats.min(candidates.len() as u32)) {
            self.bookkeepers = winners;
            self.bookkeepers.sort_unstable();
        }
        for node in &mut self.nodes {
            node.strikes = 0;
        }
    }

    fn run_round(&mut self, r: u64) -> Option<RoundMetrics> {
        self.round = r;
        self.round_start = self.now;
        self.validity.clear();
        self.messages.clear();
        self.sealed_group = None;
        for node in &mut self.nodes {
            node.round = RoundState::default();
            if node.crash_round.is_some_and(|c| r >= c) {
                node.crashed = true;
            }
        }
        let n = self.cfg.nodes;
        self.consortium = match self.cfg.roles {
            RoleMode::LeaderExcluded => (0..n).filter(|&i| i != self.leader).collect(),
            RoleMode::AllVote => (0..n).collect(),
        };

        for b in self.bookkeepers.clone() {
            if self.live(b) {
                self.schedule(self.now + self.steps_ns[0], Event::Compute { node: b, step: Step::MakeBlock });
            }
        }
        let t0 = self.now;
        self.schedule(t0 + self.timeout, Event::Timeout { phase: Phase::Blocks });
        self.schedule(t0 + 2 * self.timeout, Event::Timeout { phase: Phase::Votes });
        self.schedule(t0 + 3 * self.timeout, Event::Timeout { phase: Phase::Header });

        while let Some(Reverse(s)) = self.queue.pop() {
            self.now = s.at;
            self.handle(s.event);
            if self.stall.is_some() {
                self.queue.clear();
                return None;
            }
            if self.round_complete() {
                break;
            }
        }
        self.queue.clear();
        if !self.round_complete() {
            self.stall = Some("round did not complete".into());
            return None;
        }
        Some(self.round_metrics())
    }

    fn round_complete(&self) -> bool {
        self.nodes.iter().filter(|n| !n.crashed).all(|n| match self.cfg.storage {
            StorageMode::Pipelined => n.round.group_at.is_some(),
            StorageMode::Serial => n.round.stored_at.is_some(),
        })
    }

    fn round_metrics(&mut self) -> RoundMetrics {
        let live = || self.nodes.iter().filter(|n| !n.crashed);
        let t0 = self.round_start;
        let m1 = live().filter_map(|n| n.round.blocks_done).max().unwrap_or(t0);
        let m2 = self.nodes[self.leader as usize].round.votes_done.unwrap_or(m1).max(m1);
        let m3 = live().filter_map(|n| n.round.group_at).max().unwrap_or(m2).max(m2);
        let m4 = match self.cfg.storage {
            StorageMode::Serial => live().filter_map(|n| n.round.stored_at).max().unwrap_or(m3),
            StorageMode::Pipelined => m3,
        }
        .max(m3);
        self.now = m4;

        let group = self.sealed_group.clone().expect("complete round has a group");
        let leader_tip = self.nodes[self.leader as usize].chain.tip_digest();
        let forked = live().any(|n| n.chain.tip_digest() != leader_tip);
        let included: Vec<NodeId> = group.body.iter().map(|b| b.bookkeeper).collect();
        let proposed: Vec<NodeId> = self.nodes[self.leader as usize]
            .round
            .blocks
            .iter()
            .map(|b| b.bookkeeper)
            .collect();
        let excluded: Vec<NodeId> = proposed
            .iter()
            .copied()
            .filter(|b| !included.contains(b))
            .collect();
        for &b in &excluded {
            self.nodes[b as usize].strikes += 1;
        }
        self.prev = group.digest(self.apov.hasher());
        self.leader = group.header.next_leader;

        RoundMetrics {
            round: self.round,
            leader: group.header.leader,
            t1: ns_to_secs(m1 - t0),
            t2: ns_to_secs(m2 - m1),
            t3: ns_to_secs(m3 - m2),
            t4: ns_to_secs(m4 - m3),
            t_cons: ns_to_secs(m4 - t0),
            committed_txs: group.committed_txs() as u64,
            forked,
            blocks_proposed: proposed.len() as u32,
            excluded,
        }
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::Compute { node, step } => {
                if self.live(node) {
                    self.compute_done(node, step);
                }
            }
            Event::TxStart { msg } => {
                let m = self.messages[msg].as_ref().unwrap();
                let (to, d) = (m.to as usize, m.duration);
                let start = self.now.max(self.down_free[to]);
                self.down_free[to] = start + d;
                self.schedule(start + d, Event::Deliver { msg });
            }
            Event::Deliver { msg } => {
                let m = self.messages[msg].take().unwrap();
                if self.live(m.to) && self.live(m.from) {
                    self.deliver(m.to, m.payload);
                }
            }
            Event::Timeout { phase } => self.timeout(phase),
        }
    }

    fn timeout(&mut self, phase: Phase) {
        match phase {
            Phase::Blocks => {
                for id in 0..self.cfg.nodes {
                    if self.live(id) && self.nodes[id as usize].round.blocks_done.is_none() {
                        self.nodes[id as usize].round.blocks_done = Some(self.now);
                        self.after_blocks(id);
                    }
                }
            }
            Phase::Votes => {
                let l = self.leader;
                if self.live(l) && self.nodes[l as usize].round.votes_done.is_none() {
                    self.nodes[l as usize].round.votes_done = Some(self.now);
                    self.maybe_seal();
                }
            }
            Phase::Header => {
                if !self.round_complete() {
                    let reason = if self.live(self.leader) {
                        format!("round {} did not finish before the deadline", self.round)
                    } else {
                        format!("leader {} is unavailable; no block group was sealed", self.leader)
                    };
                    self.stall = Some(reason);
                }
            }
        }
    }

    fn expected_blocks(&self) -> usize {
        self.bookkeepers.len()
    }

    fn compute_done(&mut self, node: NodeId, step: Step) {
        match step {
            Step::MakeBlock => {
                let block = Arc::new(self.make_block(node));
                self.receive_block(node, Arc::clone(&block));
                let n = self.cfg.nodes;
                let bytes = block.nominal_size(self.cfg.sizes.h) + self.cfg.sizes.m as u64;
                for k in 1..n {
                    let to = (node + k) % n;
                    self.send(node, to, bytes, Payload::Block(Arc::clone(&block)));
                }
            }
            Step::Vote => {
                let msg = self.cast_votes(node);
                let bytes = self.cfg.sizes.m as u64
                    + self.cfg.sizes.h_v as u64
                    + msg.votes.len() as u64 * self.cfg.sizes.v_b as u64;
                if node == self.leader {
                    self.receive_votes(msg);
                } else {
                    self.send(node, self.leader, bytes, Payload::Votes(msg));
                }
            }
            Step::Seal => self.seal(),
            Step::Store => {
                self.nodes[node as usize].round.stored_at = Some(self.now);
            }
        }
    }

    fn make_block(&mut self, node: NodeId) -> Block {
        let base = (self.round << 40) | ((node as u64) << 24);
        let txs: Vec<Transaction> = (0..self.cfg.k as u64)
            .map(|i| Transaction::nominal(base | i, self.cfg.sizes.t))
            .collect();
        let mut block = self
            .apov
            .make_block(node, txs, self.prev, self.round)
            .expect("k transactions fit");
        if self.nodes[node as usize].invalid_blocks {
            block.merkle_root.0[0] ^= 0xff;
        }
        block
    }

    fn receive_block(&mut self, node: NodeId, block: Arc<Block>) {
        let expected = self.expected_blocks();
        let st = &mut self.nodes[node as usize].round;
        if st.blocks_done.is_some() {
            return;
        }
        st.blocks.push(block);
        if st.blocks.len() == expected {
            st.blocks_done = Some(self.now);
            self.after_blocks(node);
        }
    }

    fn after_blocks(&mut self, node: NodeId) {
        self.nodes[node as usize].round.blocks.sort_by_key(|b| b.bookkeeper);
        if self.consortium.contains(&node) {
            self.schedule(self.now + self.steps_ns[1], Event::Compute { node, step: Step::Vote });
        }
        if node == self.leader {
            self.maybe_seal();
        }
    }

    fn cast_votes(&mut self, node: NodeId) -> VoteMessage {
        let blocks = self.nodes[node as usize].round.blocks.clone();
        if self.nodes[node as usize].dissenting {
            let seed = self.cfg.seed ^ (self.round << 32) ^ node as u64;
            return self
                .apov
                .cast_validation_votes(node, &blocks, &self.prev, VotePolicy::Dissenting { seed });
        }
        // Validity is a pure function of (block, prev); evaluate it once.
        let hashes: Vec<Digest> = blocks.iter().map(|b| b.hash(self.apov.hasher())).collect();
        let verdicts: Vec<bool> = blocks
            .iter()
            .zip(&hashes)
            .map(|(b, h)| {
                *self
                    .validity
                    .entry(*h)
                    .or_insert_with(|| self.apov.block_is_valid(b, &self.prev))
            })
            .collect();
        self.apov.sign_votes(node, &hashes, |i| verdicts[i])
    }

    fn receive_votes(&mut self, msg: VoteMessage) {
        let l = self.leader as usize;
        if self.nodes[l].round.votes_done.is_some() {
            return;
        }
        self.nodes[l].round.votes.push(msg);
        if self.nodes[l].round.votes.len() == self.consortium.len() {
            self.nodes[l].round.votes_done = Some(self.now);
            self.maybe_seal();
        }
    }

    fn maybe_seal(&mut self) {
        let st = &self.nodes[self.leader as usize].round;
        if st.sealed || st.votes_done.is_none() || st.blocks_done.is_none() {
            return;
        }
        self.nodes[self.leader as usize].round.sealed = true;
        let leader = self.leader;
        self.schedule(self.now + self.steps_ns[2], Event::Compute { node: leader, step: Step::Seal });
    }

    fn round_seed(&self) -> u64 {
        let d = self.apov.hasher().digest(
            &[self.cfg.seed.to_be_bytes(), self.round.to_be_bytes()].concat(),
        );
        u64::from_be_bytes(d.0[..8].try_into().unwrap())
    }

    fn seal(&mut self) {
        let l = self.leader;
        let votes = std::mem::take(&mut self.nodes[l as usize].round.votes);
        let blocks = self.nodes[l as usize].round.blocks.clone();
        let sealed = self.apov.tally_and_seal(
            l,
            &self.consortium,
            votes,
            &blocks,
            self.round,
            self.prev,
            self.round_seed(),
        );
        let group = match sealed {
            Ok(g) => Arc::new(g),
            Err(e) => {
                self.stall = Some(format!("leader {l} cannot seal round {}: {e}", self.round));
                return;
            }
        };
        self.sealed_group = Some(Arc::clone(&group));
        let s = self.cfg.sizes;
        let bytes = s.m as u64
            + s.h_r as u64
            + group.header.tally.len() as u64 * s.r_b as u64
            + group
                .header
                .vote_messages
                .iter()
                .map(|m| s.h_v as u64 + m.votes.len() as u64 * s.v_b as u64)
                .sum::<u64>();
        for k in 1..self.cfg.nodes {
            let to = (l + k) % self.cfg.nodes;
            self.send(l, to, bytes, Payload::Group(Arc::clone(&group)));
        }
        self.receive_group(l, group);
    }

    fn receive_group(&mut self, node: NodeId, group: Arc<BlockGroup>) {
        let apov = self.apov.clone();
        let st = &mut self.nodes[node as usize];
        if st.round.group_at.is_some() {
            return;
        }
        st.round.group_at = Some(self.now);
        if let Err(e) = st.chain.append(&apov, group) {
            self.stall = Some(format!("node {node} rejected the block group: {e}"));
            return;
        }
        match self.cfg.storage {
            StorageMode::Serial => {
                self.schedule(self.now + self.steps_ns[3], Event::Compute { node, step: Step::Store });
            }
            StorageMode::Pipelined => {
                let st = &mut self.nodes[node as usize];
                let start = self.now.max(st.lane_free);
                st.lane_free = start + self.steps_ns[3];
                st.round.stored_at = Some(st.lane_free);
            }
        }
    }

    fn deliver(&mut self, to: NodeId, payload: Payload) {
        match payload {
            Payload::Block(b) => self.receive_block(to, b),
            Payload::Votes(m) => {
                if to == self.leader {
                    self.receive_votes(m)
                }
            }
            Payload::Group(g) => self.receive_group(to, g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: u32) -> SimConfig {
        SimConfig {
            nodes: n,
            k: 50,
            rounds: 5,
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_compute_matches_closed_forms() {
        for n in 3..=6 {
            let cfg = SimConfig {
                compute: ComputeModel::Zero,
                ..SimConfig::prototype(n)
            };
            let cfg = SimConfig { rounds: 2, ..cfg };
            let rep = run_rounds(&cfg).unwrap();
            let t = model::transmission_times(&ModelParams::prototype(n));
            for m in &rep.rounds {
                assert!((m.t1 - t.t_tran1).abs() < 1e-12, "n={n}: {} vs {}", m.t1, t.t_tran1);
                assert!((m.t2 - t.t_tran2).abs() < 1e-12);
                assert!((m.t3 - t.t_tran3).abs() < 1e-12);
                assert_eq!(m.t4, 0.0);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = run_rounds(&small(4)).unwrap();
        let b = run_rounds(&small(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.summary.stall.is_none());
        assert_eq!(a.summary.rounds_completed, 5);
    }

    #[test]
    fn fault_free_rounds_commit_everything() {
        let rep = run_rounds(&small(5)).unwrap();
        for m in &rep.rounds {
            assert_eq!(m.committed_txs, 5 * 50);
            assert!(!m.forked);
            assert!((m.t1 + m.t2 + m.t3 + m.t4 - m.t_cons).abs() < 1e-9);
        }
        let tips: Vec<_> = rep.summary.tips.iter().flatten().collect();
        assert!(tips.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn serial_storage_adds_store_time() {
        let piped = run_rounds(&small(3)).unwrap();
        let serial = run_rounds(&SimConfig {
            storage: StorageMode::Serial,
            ..small(3)
        })
        .unwrap();
        let t4 = model::computation_times(3)[3];
        assert!((serial.rounds[0].t4 - t4).abs() < 1e-9);
        assert_eq!(piped.rounds[0].t4, 0.0);
        assert!(serial.summary.mean_round_time > piped.summary.mean_round_time);
    }

    #[test]
    fn unknown_fault_node() {
        let fault = FaultSpec {
            node: 9,
            behavior: FaultBehavior::InvalidBlocks,
        };
        assert_eq!(
            inject_fault(&small(3), fault),
            Err(SimError::UnknownNode { node: 9, nodes: 3 })
        );
    }

    #[test]
    fn csv_columns() {
        let rep = run_rounds(&small(3)).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("round,t1,t2,t3,t4,t_cons,committed_txs\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
