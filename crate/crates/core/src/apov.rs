//! APoV consensus core: blocks, validation votes, leader tally, block-group
//! sealing, chain verification and bookkeeper election.
//!
//! Everything here is a pure function of its inputs. Network timing lives in
//! [`crate::sim`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use hmac::{Hmac, KeyInit, Mac};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};

pub type NodeId = u32;

/// 256-bit digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    fn prefix_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().unwrap())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub trait HashFunction: Send + Sync {
    fn digest(&self, data: &[u8]) -> Digest;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sha256Hash;

impl HashFunction for Sha256Hash {
    fn digest(&self, data: &[u8]) -> Digest {
        Digest(Sha256::digest(data).into())
    }
}

/// Per-node message authentication.
pub trait Authenticator: Send + Sync {
    fn sign(&self, signer: NodeId, msg: &[u8]) -> Vec<u8>;
    fn verify(&self, signer: NodeId, msg: &[u8], sig: &[u8]) -> bool;
}

/// HMAC-SHA256 with per-node keys derived from a deployment secret. Stands
/// in for public-key signatures inside a single simulated deployment.
#[derive(Clone)]
pub struct HmacAuthenticator {
    secret: [u8; 32],
}

impl HmacAuthenticator {
    pub fn new(secret: [u8; 32]) -> Self {
        HmacAuthenticator { secret }
    }

    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HmacAuthenticator { secret: rng.random() }
    }

    fn mac(&self, signer: NodeId) -> Hmac<Sha256> {
        let mut h = Sha256::new();
        h.update(self.secret);
        h.update(signer.to_be_bytes());
        let key = h.finalize();
        <Hmac<Sha256> as KeyInit>::new_from_slice(&key).expect("any key length")
    }
}

impl fmt::Debug for HmacAuthenticator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("HmacAuthenticator")
    }
}

impl Authenticator for HmacAuthenticator {
    fn sign(&self, signer: NodeId, msg: &[u8]) -> Vec<u8> {
        let mut mac = self.mac(signer);
        mac.update(msg);
        mac.finalize().into_bytes().to_vec()
    }

    fn verify(&self, signer: NodeId, msg: &[u8], sig: &[u8]) -> bool {
        let mut mac = self.mac(signer);
        mac.update(msg);
        mac.verify_slice(sig).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: u64,
    pub payload: Vec<u8>,
    /// Size used for transmission accounting, in bytes.
    pub nominal_size: u32,
}

impl Transaction {
    pub fn new(id: u64, payload: Vec<u8>) -> Self {
        let nominal_size = payload.len() as u32;
        Transaction {
            id,
            payload,
            nominal_size,
        }
    }

    /// A payload-free transaction accounted as `nominal_size` bytes.
    pub fn nominal(id: u64, nominal_size: u32) -> Self {
        Transaction {
            id,
            payload: Vec::new(),
            nominal_size,
        }
    }

    fn encode(&self, e: &mut Encoder) {
        e.u64(self.id).bytes(&self.payload).u32(self.nominal_size);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(Transaction {
            id: d.u64()?,
            payload: d.bytes()?.to_vec(),
            nominal_size: d.u32()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub prev_group_hash: Digest,
    pub merkle_root: Digest,
    pub bookkeeper: NodeId,
    pub timestamp: u64,
    pub txs: Vec<Transaction>,
}

impl Block {
    /// Header fields only; the merkle root commits to the transactions.
    fn encode_header(&self, e: &mut Encoder) {
        e.raw(&self.prev_group_hash.0)
            .raw(&self.merkle_root.0)
            .u32(self.bookkeeper)
            .u64(self.timestamp)
            .u32(self.txs.len() as u32);
    }

    fn encode(&self, e: &mut Encoder) {
        self.encode_header(e);
        for tx in &self.txs {
            tx.encode(e);
        }
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let prev_group_hash = Digest(d.fixed()?);
        let merkle_root = Digest(d.fixed()?);
        let bookkeeper = d.u32()?;
        let timestamp = d.u64()?;
        let n = d.count(16)?;
        let txs = (0..n)
            .map(|_| Transaction::decode(d))
            .collect::<Result<_, _>>()?;
        Ok(Block {
            prev_group_hash,
            merkle_root,
            bookkeeper,
            timestamp,
            txs,
        })
    }

    pub fn hash(&self, h: &dyn HashFunction) -> Digest {
        let mut e = Encoder::new();
        self.encode_header(&mut e);
        h.digest(e.as_slice())
    }

    /// Bytes accounted on the wire: block header plus nominal tx sizes.
    pub fn nominal_size(&self, block_header: u32) -> u64 {
        block_header as u64 + self.txs.iter().map(|t| t.nominal_size as u64).sum::<u64>()
    }
}

/// Merkle root over transaction ids. Leaves are `H(0x00 || id)`, inner nodes
/// `H(0x01 || left || right)`; an odd node is promoted unchanged. The empty
/// root is `H(0x02)`.
pub fn merkle_root(h: &dyn HashFunction, txs: &[Transaction]) -> Digest {
    if txs.is_empty() {
        return h.digest(&[0x02]);
    }
    let mut level: Vec<Digest> = txs
        .iter()
        .map(|t| {
            let mut buf = [0u8; 9];
            buf[1..].copy_from_slice(&t.id.to_be_bytes());
            h.digest(&buf)
        })
        .collect();
    let mut buf = [0u8; 65];
    buf[0] = 0x01;
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => {
                    buf[1..33].copy_from_slice(&l.0);
                    buf[33..].copy_from_slice(&r.0);
                    h.digest(&buf)
                }
                [single] => *single,
                _ => unreachable!(),
            })
            .collect();
    }
    level[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Opinion {
    Approve,
    Disapprove,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationVote {
    pub block_hash: Digest,
    pub opinion: Opinion,
    pub voter: NodeId,
    pub signature: Vec<u8>,
}

impl ValidationVote {
    fn signed_bytes(block_hash: &Digest, opinion: Opinion, voter: NodeId) -> Vec<u8> {
        let mut e = Encoder::new();
        e.raw(&block_hash.0)
            .u8(matches!(opinion, Opinion::Approve) as u8)
            .u32(voter);
        e.finish()
    }

    pub fn verify(&self, auth: &dyn Authenticator) -> bool {
        let msg = Self::signed_bytes(&self.block_hash, self.opinion, self.voter);
        auth.verify(self.voter, &msg, &self.signature)
    }

    fn encode(&self, e: &mut Encoder) {
        e.raw(&self.block_hash.0)
            .u8(matches!(self.opinion, Opinion::Approve) as u8)
            .u32(self.voter)
            .bytes(&self.signature);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let block_hash = Digest(d.fixed()?);
        let opinion = match d.u8()? {
            1 => Opinion::Approve,
            0 => Opinion::Disapprove,
            x => return Err(DecodeError::Invalid(format!("opinion byte {x}"))),
        };
        Ok(ValidationVote {
            block_hash,
            opinion,
            voter: d.u32()?,
            signature: d.bytes()?.to_vec(),
        })
    }
}

/// One consortium node's votes for every block of a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteMessage {
    pub voter: NodeId,
    pub votes: Vec<ValidationVote>,
}

impl VoteMessage {
    fn encode(&self, e: &mut Encoder) {
        e.u32(self.voter).u32(self.votes.len() as u32);
        for v in &self.votes {
            v.encode(e);
        }
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let voter = d.u32()?;
        let n = d.count(41)?;
        let votes = (0..n)
            .map(|_| ValidationVote::decode(d))
            .collect::<Result<_, _>>()?;
        Ok(VoteMessage { voter, votes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfidenceVote {
    pub candidate: NodeId,
    pub voter: NodeId,
    pub weight: u32,
}

impl ConfidenceVote {
    pub fn new(voter: NodeId, candidate: NodeId) -> Self {
        ConfidenceVote {
            candidate,
            voter,
            weight: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockTally {
    pub block_hash: Digest,
    pub approve: u32,
    pub disapprove: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGroupHeader {
    pub height: u64,
    pub leader: NodeId,
    pub prev_group_hash: Digest,
    pub tally: Vec<BlockTally>,
    pub vote_messages: Vec<VoteMessage>,
    pub next_leader: NodeId,
    /// Seed from which `next_leader` was drawn.
    pub seed: u64,
}

impl BlockGroupHeader {
    fn encode(&self, e: &mut Encoder) {
        e.u64(self.height)
            .u32(self.leader)
            .raw(&self.prev_group_hash.0)
            .u32(self.tally.len() as u32);
        for t in &self.tally {
            e.raw(&t.block_hash.0).u32(t.approve).u32(t.disapprove);
        }
        e.u32(self.vote_messages.len() as u32);
        for m in &self.vote_messages {
            m.encode(e);
        }
        e.u32(self.next_leader).u64(self.seed);
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let height = d.u64()?;
        let leader = d.u32()?;
        let prev_group_hash = Digest(d.fixed()?);
        let n = d.count(40)?;
        let tally = (0..n)
            .map(|_| {
                Ok(BlockTally {
                    block_hash: Digest(d.fixed()?),
                    approve: d.u32()?,
                    disapprove: d.u32()?,
                })
            })
            .collect::<Result<_, DecodeError>>()?;
        let n = d.count(8)?;
        let vote_messages = (0..n)
            .map(|_| VoteMessage::decode(d))
            .collect::<Result<_, _>>()?;
        Ok(BlockGroupHeader {
            height,
            leader,
            prev_group_hash,
            tally,
            vote_messages,
            next_leader: d.u32()?,
            seed: d.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGroup {
    pub header: BlockGroupHeader,
    pub body: Vec<Arc<Block>>,
}

impl BlockGroup {
    pub fn genesis() -> Self {
        BlockGroup {
            header: BlockGroupHeader {
                height: 0,
                leader: 0,
                prev_group_hash: Digest::ZERO,
                tally: Vec::new(),
                vote_messages: Vec::new(),
                next_leader: 0,
                seed: 0,
            },
            body: Vec::new(),
        }
    }

    /// Digest over the header serialization followed by the body's block
    /// hashes.
    pub fn digest(&self, h: &dyn HashFunction) -> Digest {
        let mut e = Encoder::new();
        self.header.encode(&mut e);
        e.u32(self.body.len() as u32);
        for b in &self.body {
            e.raw(&b.hash(h).0);
        }
        h.digest(e.as_slice())
    }

    pub fn committed_txs(&self) -> usize {
        self.body.iter().map(|b| b.txs.len()).sum()
    }

    /// Full serialization including every transaction.
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.header.encode(&mut e);
        e.u32(self.body.len() as u32);
        for b in &self.body {
            b.encode(&mut e);
        }
        e.finish()
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        let mut d = Decoder::new(buf);
        let header = BlockGroupHeader::decode(&mut d)?;
        let n = d.count(80)?;
        let body = (0..n)
            .map(|_| Block::decode(&mut d).map(Arc::new))
            .collect::<Result<_, _>>()?;
        d.finish()?;
        Ok(BlockGroup { header, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    pub n_b: u32,
    pub n_c: u32,
    pub n_bc: u32,
    /// Maximum transactions per block.
    pub k: u32,
    /// Rounds per bookkeeper term.
    pub term_length: u64,
}

impl ConsensusConfig {
    /// Every node keeps books, the round leader does not vote.
    pub fn standard(n: u32, k: u32) -> Self {
        ConsensusConfig {
            n_b: n,
            n_c: n.saturating_sub(1),
            n_bc: n.saturating_sub(1),
            k,
            term_length: 10,
        }
    }

    pub fn total_nodes(&self) -> u32 {
        self.n_b + self.n_c - self.n_bc
    }

    pub fn validate(&self) -> Result<(), ApovError> {
        let bad = |m: &str| Err(ApovError::InvalidConfig(m.to_string()));
        if self.n_b < 1 || self.n_c < 1 {
            return bad("n_b and n_c must be at least 1");
        }
        if self.n_bc > self.n_b.min(self.n_c) {
            return bad("n_bc must not exceed min(n_b, n_c)");
        }
        if self.k < 1 {
            return bad("K must be at least 1");
        }
        if self.term_length < 1 {
            return bad("term_length must be at least 1");
        }
        Ok(())
    }

    /// Strict majority of the consortium.
    pub fn is_majority(&self, approve: u32) -> bool {
        2 * approve as u64 > self.n_c as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApovError {
    #[error("block holds {got} transactions, limit is {limit}")]
    TooManyTransactions { got: usize, limit: u32 },
    #[error("vote messages missing from {missing:?}")]
    IncompleteVotes { missing: Vec<NodeId> },
    #[error("malformed vote message from {voter}: {reason}")]
    MalformedVotes { voter: NodeId, reason: String },
    #[error("{candidates} candidates for {seats} bookkeeper seats")]
    NotEnoughCandidates { candidates: usize, seats: u32 },
    #[error("invalid consensus config: {0}")]
    InvalidConfig(String),
}

/// How a consortium node forms its opinion of each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VotePolicy {
    /// Approve exactly the blocks that pass [`Apov::block_is_valid`].
    Honest,
    /// Opinions drawn from a seeded generator, still one vote per block.
    Dissenting { seed: u64 },
}

/// Why a block group failed validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupFault {
    Linkage { detail: String },
    VoteCount { expected: u32, found: usize },
    DuplicateVoter(NodeId),
    VoteCoverage { voter: NodeId },
    BadSignature { voter: NodeId },
    TallyMismatch { block: Digest },
    MajorityRule { block: Digest },
    UntalliedBlock { block: Digest },
    NextLeader { expected: NodeId, found: NodeId },
    TooManyTransactions { block: Digest },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub faults: Vec<GroupFault>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.faults.is_empty()
    }
}

/// Consensus context holding the configuration and the pluggable
/// primitives.
#[derive(Clone)]
pub struct Apov {
    pub config: ConsensusConfig,
    hasher: Arc<dyn HashFunction>,
    auth: Arc<dyn Authenticator>,
}

impl fmt::Debug for Apov {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Apov").field("config", &self.config).finish()
    }
}

impl Apov {
    /// SHA-256 digests and HMAC authenticators keyed from `auth_seed`.
    pub fn new(config: ConsensusConfig, auth_seed: u64) -> Result<Self, ApovError> {
        Self::with_primitives(
            config,
            Arc::new(Sha256Hash),
            Arc::new(HmacAuthenticator::from_seed(auth_seed)),
        )
    }

    pub fn with_primitives(
        config: ConsensusConfig,
        hasher: Arc<dyn HashFunction>,
        auth: Arc<dyn Authenticator>,
    ) -> Result<Self, ApovError> {
        config.validate()?;
        Ok(Apov {
            config,
            hasher,
            auth,
        })
    }

    pub fn hasher(&self) -> &dyn HashFunction {
        &*self.hasher
    }

    pub fn authenticator(&self) -> &dyn Authenticator {
        &*self.auth
    }

    pub fn make_block(
        &self,
        bookkeeper: NodeId,
        txs: Vec<Transaction>,
        prev_group_hash: Digest,
        now: u64,
    ) -> Result<Block, ApovError> {
        if txs.len() > self.config.k as usize {
            return Err(ApovError::TooManyTransactions {
                got: txs.len(),
                limit: self.config.k,
            });
        }
        Ok(Block {
            prev_group_hash,
            merkle_root: merkle_root(&*self.hasher, &txs),
            bookkeeper,
            timestamp: now,
            txs,
        })
    }

    /// Well-formed, linked to `prev`, unique tx ids, and merkle root verifies.
    pub fn block_is_valid(&self, block: &Block, prev: &Digest) -> bool {
        if block.prev_group_hash != *prev || block.txs.len() > self.config.k as usize {
            return false;
        }
        let mut seen = FxHashSet::default();
        if !block.txs.iter().all(|t| seen.insert(t.id)) {
            return false;
        }
        merkle_root(&*self.hasher, &block.txs) == block.merkle_root
    }

    pub fn cast_validation_votes(
        &self,
        voter: NodeId,
        blocks: &[Arc<Block>],
        prev: &Digest,
        policy: VotePolicy,
    ) -> VoteMessage {
        let verdicts: Vec<bool> = match policy {
            VotePolicy::Honest => blocks.iter().map(|b| self.block_is_valid(b, prev)).collect(),
            VotePolicy::Dissenting { .. } => vec![false; blocks.len()],
        };
        let hashes: Vec<Digest> = blocks.iter().map(|b| b.hash(&*self.hasher)).collect();
        self.sign_votes(voter, &hashes, |i| match policy {
            VotePolicy::Honest => verdicts[i],
            VotePolicy::Dissenting { seed } => {
                let mix = seed ^ (voter as u64).rotate_left(32) ^ hashes[i].prefix_u64();
                ChaCha8Rng::seed_from_u64(mix).random()
            }
        })
    }

    /// Signs one vote per block hash with the opinion chosen by `approve`.
    pub fn sign_votes(
        &self,
        voter: NodeId,
        block_hashes: &[Digest],
        approve: impl Fn(usize) -> bool,
    ) -> VoteMessage {
        let votes = block_hashes
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let opinion = if approve(i) {
                    Opinion::Approve
                } else {
                    Opinion::Disapprove
                };
                let msg = ValidationVote::signed_bytes(h, opinion, voter);
                ValidationVote {
                    block_hash: *h,
                    opinion,
                    voter,
                    signature: self.auth.sign(voter, &msg),
                }
            })
            .collect();
        VoteMessage { voter, votes }
    }

    /// Next leader drawn uniformly over all node ids from `seed`.
    pub fn draw_next_leader(&self, seed: u64) -> NodeId {
        ChaCha8Rng::seed_from_u64(seed).random_range(0..self.config.total_nodes())
    }

    /// Counts the votes of `consortium` for `blocks` and seals the block
    /// group. Blocks with a strict-majority approval form the body.
    pub fn tally_and_seal(
        &self,
        leader: NodeId,
        consortium: &[NodeId],
        votes: Vec<VoteMessage>,
        blocks: &[Arc<Block>],
        height: u64,
        prev_group_hash: Digest,
        seed: u64,
    ) -> Result<BlockGroup, ApovError> {
        let hashes: Vec<Digest> = blocks.iter().map(|b| b.hash(&*self.hasher)).collect();
        let present: HashSet<NodeId> = votes.iter().map(|m| m.voter).collect();
        let missing: Vec<NodeId> = consortium
            .iter()
            .copied()
            .filter(|c| !present.contains(c))
            .collect();
        if !missing.is_empty() {
            return Err(ApovError::IncompleteVotes { missing });
        }

        let mut votes = votes;
        votes.sort_by_key(|m| m.voter);
        let mut tally: Vec<BlockTally> = hashes
            .iter()
            .map(|h| BlockTally {
                block_hash: *h,
                approve: 0,
                disapprove: 0,
            })
            .collect();
        let mut seen = HashSet::new();
        for m in &votes {
            let malformed = |reason: &str| ApovError::MalformedVotes {
                voter: m.voter,
                reason: reason.into(),
            };
            if !consortium.contains(&m.voter) {
                return Err(malformed("not a consortium node this round"));
            }
            if !seen.insert(m.voter) {
                return Err(malformed("duplicate vote message"));
            }
            if m.votes.len() != hashes.len()
                || m.votes.iter().zip(&hashes).any(|(v, h)| v.block_hash != *h)
            {
                return Err(malformed("votes do not cover the round's blocks in order"));
            }
            for (v, t) in m.votes.iter().zip(tally.iter_mut()) {
                if v.voter != m.voter || !v.verify(&*self.auth) {
                    return Err(malformed("signature does not verify"));
                }
                match v.opinion {
                    Opinion::Approve => t.approve += 1,
                    Opinion::Disapprove => t.disapprove += 1,
                }
            }
        }

        let body = blocks
            .iter()
            .zip(&tally)
            .filter(|(_, t)| self.config.is_majority(t.approve))
            .map(|(b, _)| Arc::clone(b))
            .collect();
        Ok(BlockGroup {
            header: BlockGroupHeader {
                height,
                leader,
                prev_group_hash,
                tally,
                vote_messages: votes,
                next_leader: self.draw_next_leader(seed),
                seed,
            },
            body,
        })
    }

    /// Checks linkage, vote completeness and signatures, the recorded tally,
    /// the majority rule and the next-leader draw. Merkle roots are not
    /// recomputed; voters already did that.
    pub fn validate_block_group(&self, group: &BlockGroup, prev_hash: &Digest) -> ValidationReport {
        let mut faults = Vec::new();
        let h = &group.header;
        let hasher = &*self.hasher;

        if h.height == 0 {
            if *group != BlockGroup::genesis() {
                faults.push(GroupFault::Linkage {
                    detail: "height 0 is reserved for genesis".into(),
                });
            }
            return ValidationReport { faults };
        }
        if h.prev_group_hash != *prev_hash {
            faults.push(GroupFault::Linkage {
                detail: format!("header links to {}, expected {}", h.prev_group_hash, prev_hash),
            });
        }
        if h.vote_messages.len() != self.config.n_c as usize {
            faults.push(GroupFault::VoteCount {
                expected: self.config.n_c,
                found: h.vote_messages.len(),
            });
        }

        let mut recount: BTreeMap<Digest, (u32, u32)> =
            h.tally.iter().map(|t| (t.block_hash, (0, 0))).collect();
        let mut voters = HashSet::new();
        for m in &h.vote_messages {
            if !voters.insert(m.voter) {
                faults.push(GroupFault::DuplicateVoter(m.voter));
            }
            if m.votes.len() != h.tally.len()
                || m.votes.iter().zip(&h.tally).any(|(v, t)| v.block_hash != t.block_hash)
            {
                faults.push(GroupFault::VoteCoverage { voter: m.voter });
            }
            if m.votes.iter().any(|v| v.voter != m.voter || !v.verify(&*self.auth)) {
                faults.push(GroupFault::BadSignature { voter: m.voter });
            }
            for v in &m.votes {
                if let Some(c) = recount.get_mut(&v.block_hash) {
                    match v.opinion {
                        Opinion::Approve => c.0 += 1,
                        Opinion::Disapprove => c.1 += 1,
                    }
                }
            }
        }
        for t in &h.tally {
            if recount.get(&t.block_hash) != Some(&(t.approve, t.disapprove)) {
                faults.push(GroupFault::TallyMismatch { block: t.block_hash });
            }
        }

        for b in &group.body {
            let bh = b.hash(hasher);
            if b.prev_group_hash != *prev_hash {
                faults.push(GroupFault::Linkage {
                    detail: format!("block {bh} links to {}", b.prev_group_hash),
                });
            }
            if b.txs.len() > self.config.k as usize {
                faults.push(GroupFault::TooManyTransactions { block: bh });
            }
            match h.tally.iter().find(|t| t.block_hash == bh) {
                None => faults.push(GroupFault::UntalliedBlock { block: bh }),
                Some(t) if !self.config.is_majority(t.approve) => {
                    faults.push(GroupFault::MajorityRule { block: bh })
                }
                Some(_) => {}
            }
        }

        let expected = self.draw_next_leader(h.seed);
        if h.next_leader != expected {
            faults.push(GroupFault::NextLeader {
                expected,
                found: h.next_leader,
            });
        }
        ValidationReport { faults }
    }
}

/// Ranks candidates by total confidence-vote weight, ties broken by
/// ascending node id, and returns the top `n_b`. Repeated votes by the same
/// voter for the same candidate count once.
pub fn elect_bookkeepers(
    candidates: &[NodeId],
    votes: &[ConfidenceVote],
    n_b: u32,
) -> Result<Vec<NodeId>, ApovError> {
    let pool: std::collections::BTreeSet<NodeId> = candidates.iter().copied().collect();
    if pool.len() < n_b as usize {
        return Err(ApovError::NotEnoughCandidates {
            candidates: pool.len(),
            seats: n_b,
        });
    }
    let mut score: BTreeMap<NodeId, u64> = pool.iter().map(|&c| (c, 0)).collect();
    let mut counted = HashSet::new();
    for v in votes {
        if let Some(s) = score.get_mut(&v.candidate) {
            if counted.insert((v.voter, v.candidate)) {
                *s += v.weight as u64;
            }
        }
    }
    let mut ranked: Vec<(NodeId, u64)> = score.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(n_b as usize).map(|(c, _)| c).collect())
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("block group at height {height} rejected: {faults:?}")]
    Rejected { height: u64, faults: Vec<GroupFault> },
    #[error("expected height {expected}, got {got}")]
    Height { expected: u64, got: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// A node's local chain. Block groups may be shared between nodes through
/// `Arc`; with `keep_groups` off only digests are retained.
#[derive(Debug, Clone)]
pub struct Chain {
    digests: Vec<Digest>,
    groups: Vec<Arc<BlockGroup>>,
    keep_groups: bool,
    committed_txs: u64,
}

impl Chain {
    pub fn new(apov: &Apov, keep_groups: bool) -> Self {
        let genesis = BlockGroup::genesis();
        Chain {
            digests: vec![genesis.digest(apov.hasher())],
            groups: if keep_groups {
                vec![Arc::new(genesis)]
            } else {
                Vec::new()
            },
            keep_groups,
            committed_txs: 0,
        }
    }

    pub fn height(&self) -> u64 {
        self.digests.len() as u64 - 1
    }

    pub fn tip_digest(&self) -> Digest {
        *self.digests.last().unwrap()
    }

    pub fn digests(&self) -> &[Digest] {
        &self.digests
    }

    pub fn groups(&self) -> &[Arc<BlockGroup>] {
        &self.groups
    }

    pub fn committed_txs(&self) -> u64 {
        self.committed_txs
    }

    /// Validates `group` against the tip and appends it.
    pub fn append(&mut self, apov: &Apov, group: Arc<BlockGroup>) -> Result<Digest, ChainError> {
        let expected = self.height() + 1;
        if group.header.height != expected {
            return Err(ChainError::Height {
                expected,
                got: group.header.height,
            });
        }
        let report = apov.validate_block_group(&group, &self.tip_digest());
        if !report.is_ok() {
            return Err(ChainError::Rejected {
                height: expected,
                faults: report.faults,
            });
        }
        let d = group.digest(apov.hasher());
        self.digests.push(d);
        self.committed_txs += group.committed_txs() as u64;
        if self.keep_groups {
            self.groups.push(group);
        }
        Ok(d)
    }

    /// Rebuilds and fully validates a chain from an append-only file.
    pub fn load(apov: &Apov, path: &Path) -> Result<Chain, ChainError> {
        let mut chain = Chain::new(apov, true);
        for group in ChainFile::read_all(path)? {
            if group.header.height == 0 {
                continue;
            }
            chain.append(apov, Arc::new(group))?;
        }
        Ok(chain)
    }
}

/// Append-only file of serialized block groups, each preceded by a u32
/// big-endian length.
#[derive(Debug)]
pub struct ChainFile {
    out: BufWriter<File>,
}

impl ChainFile {
    pub fn open(path: &Path) -> io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(ChainFile {
            out: BufWriter::new(f),
        })
    }

    pub fn append(&mut self, group: &BlockGroup) -> io::Result<()> {
        let bytes = group.encode();
        self.out.write_all(&(bytes.len() as u32).to_be_bytes())?;
        self.out.write_all(&bytes)?;
        self.out.flush()
    }

    pub fn read_all(path: &Path) -> Result<Vec<BlockGroup>, ChainError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        loop {
            let mut len = [0u8; 4];
            match r.read_exact(&mut len) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let mut buf = vec![0; u32::from_be_bytes(len) as usize];
            r.read_exact(&mut buf)?;
            out.push(BlockGroup::decode(&buf)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apov(n_c: u32) -> Apov {
        let cfg = ConsensusConfig {
            n_b: 3,
            n_c,
            n_bc: n_c.min(3),
            k: 5,
            term_length: 10,
        };
        Apov::new(cfg, 7).unwrap()
    }

    fn txs(base: u64, n: u64) -> Vec<Transaction> {
        (base..base + n).map(|i| Transaction::nominal(i, 40)).collect()
    }

    fn round(a: &Apov, prev: Digest) -> Vec<Arc<Block>> {
        (0..3)
            .map(|b| Arc::new(a.make_block(b, txs(b as u64 * 10, 5), prev, 1).unwrap()))
            .collect()
    }

    #[test]
    fn block_size_limits() {
        let a = apov(4);
        let empty = a.make_block(0, vec![], Digest::ZERO, 0).unwrap();
        assert_eq!(empty.merkle_root, merkle_root(&Sha256Hash, &[]));
        assert!(a.block_is_valid(&empty, &Digest::ZERO));
        assert!(a.make_block(0, txs(0, 5), Digest::ZERO, 0).is_ok());
        assert_eq!(
            a.make_block(0, txs(0, 6), Digest::ZERO, 0),
            Err(ApovError::TooManyTransactions { got: 6, limit: 5 })
        );
    }

    #[test]
    fn merkle_shape() {
        let h = Sha256Hash;
        let t = txs(1, 3);
        let leaf = |id: u64| {
            let mut b = vec![0u8];
            b.extend_from_slice(&id.to_be_bytes());
            h.digest(&b)
        };
        let node = |l: Digest, r: Digest| {
            let mut b = vec![1u8];
            b.extend_from_slice(&l.0);
            b.extend_from_slice(&r.0);
            h.digest(&b)
        };
        assert_eq!(merkle_root(&h, &t[..1]), leaf(1));
        assert_eq!(merkle_root(&h, &t), node(node(leaf(1), leaf(2)), leaf(3)));
    }

    #[test]
    fn honest_votes_reject_corrupted_block() {
        let a = apov(4);
        let mut blocks = round(&a, Digest::ZERO);
        let mut bad = (*blocks[1]).clone();
        bad.merkle_root.0[0] ^= 1;
        blocks[1] = Arc::new(bad);
        let m = a.cast_validation_votes(9, &blocks, &Digest::ZERO, VotePolicy::Honest);
        let ops: Vec<_> = m.votes.iter().map(|v| v.opinion).collect();
        assert_eq!(ops, vec![Opinion::Approve, Opinion::Disapprove, Opinion::Approve]);
        assert!(m.votes.iter().all(|v| v.verify(a.authenticator())));

        let d = a.cast_validation_votes(9, &blocks, &Digest::ZERO, VotePolicy::Dissenting { seed: 3 });
        assert_eq!(d.votes.len(), 3);
    }

    fn votes_with(a: &Apov, consortium: &[NodeId], blocks: &[Arc<Block>], approvals: &[u32]) -> Vec<VoteMessage> {
        let hashes: Vec<_> = blocks.iter().map(|b| b.hash(a.hasher())).collect();
        consortium
            .iter()
            .enumerate()
            .map(|(rank, &v)| a.sign_votes(v, &hashes, |i| (rank as u32) < approvals[i]))
            .collect()
    }

    #[test]
    fn strict_majority_decides_body() {
        let a = apov(4);
        let consortium = [1, 2, 3, 4];
        let blocks = round(&a, Digest::ZERO);
        let votes = votes_with(&a, &consortium, &blocks, &[3, 2, 4]);
        let g = a
            .tally_and_seal(0, &consortium, votes, &blocks, 1, Digest::ZERO, 42)
            .unwrap();
        let approvals: Vec<_> = g.header.tally.iter().map(|t| t.approve).collect();
        assert_eq!(approvals, vec![3, 2, 4]);
        assert_eq!(g.body.len(), 2);
        assert_eq!(g.body[0].bookkeeper, 0);
        assert_eq!(g.body[1].bookkeeper, 2);
        assert!(a.validate_block_group(&g, &Digest::ZERO).is_ok());
    }

    #[test]
    fn missing_vote_message_is_incomplete() {
        let a = apov(4);
        let consortium = [1, 2, 3, 4];
        let blocks = round(&a, Digest::ZERO);
        let mut votes = votes_with(&a, &consortium, &blocks, &[4, 4, 4]);
        votes.remove(2);
        assert_eq!(
            a.tally_and_seal(0, &consortium, votes, &blocks, 1, Digest::ZERO, 1),
            Err(ApovError::IncompleteVotes { missing: vec![3] })
        );
    }

    #[test]
    fn sealing_is_deterministic() {
        let a = apov(4);
        let consortium = [1, 2, 3, 4];
        let blocks = round(&a, Digest::ZERO);
        let seal = |votes| a.tally_and_seal(0, &consortium, votes, &blocks, 1, Digest::ZERO, 99).unwrap();
        let mut shuffled = votes_with(&a, &consortium, &blocks, &[4, 1, 3]);
        let g1 = seal(shuffled.clone());
        shuffled.reverse();
        let g2 = seal(shuffled);
        assert_eq!(g1.encode(), g2.encode());
        assert_eq!(g1.digest(a.hasher()), g2.digest(a.hasher()));
    }

    #[test]
    fn validation_catches_forgeries() {
        let a = apov(4);
        let consortium = [1, 2, 3, 4];
        let blocks = round(&a, Digest::ZERO);
        let votes = votes_with(&a, &consortium, &blocks, &[4, 2, 4]);
        let honest = a
            .tally_and_seal(0, &consortium, votes, &blocks, 1, Digest::ZERO, 5)
            .unwrap();

        let mut forged = honest.clone();
        forged.body.insert(1, Arc::clone(&blocks[1]));
        let r = a.validate_block_group(&forged, &Digest::ZERO);
        assert!(r.faults.contains(&GroupFault::MajorityRule {
            block: blocks[1].hash(a.hasher())
        }));

        let r = a.validate_block_group(&honest, &Digest([1; 32]));
        assert!(r.faults.iter().any(|f| matches!(f, GroupFault::Linkage { .. })));

        let mut bad_sig = honest.clone();
        bad_sig.header.vote_messages[0].votes[0].signature[0] ^= 1;
        let r = a.validate_block_group(&bad_sig, &Digest::ZERO);
        assert_eq!(r.faults, vec![GroupFault::BadSignature { voter: 1 }]);

        let mut short = honest.clone();
        short.header.vote_messages.pop();
        let r = a.validate_block_group(&short, &Digest::ZERO);
        assert!(r.faults.contains(&GroupFault::VoteCount { expected: 4, found: 3 }));

        let mut leader = honest;
        leader.header.next_leader ^= 1;
        let r = a.validate_block_group(&leader, &Digest::ZERO);
        assert!(matches!(r.faults[..], [GroupFault::NextLeader { .. }]));
    }

    #[test]
    fn elections() {
        let votes = |pairs: &[(NodeId, NodeId)]| -> Vec<ConfidenceVote> {
            pairs.iter().map(|&(v, c)| ConfidenceVote::new(v, c)).collect()
        };
        let (a, b, c) = (1, 2, 3);
        let mut vs = Vec::new();
        for voter in 0..5 {
            vs.push((voter, a));
        }
        for voter in 0..4 {
            vs.push((voter, c));
        }
        for voter in 0..3 {
            vs.push((voter, b));
        }
        assert_eq!(elect_bookkeepers(&[a, b, c], &votes(&vs), 2).unwrap(), vec![a, c]);
        let tie = votes(&[(0, b), (1, b), (0, a), (1, a)]);
        assert_eq!(elect_bookkeepers(&[b, a], &tie, 1).unwrap(), vec![a]);
        assert_eq!(
            elect_bookkeepers(&[a], &[], 2),
            Err(ApovError::NotEnoughCandidates { candidates: 1, seats: 2 })
        );
        let repeated = votes(&[(0, b), (0, b), (0, b), (1, a), (2, a)]);
        assert_eq!(elect_bookkeepers(&[a, b], &repeated, 1).unwrap(), vec![a]);
    }

    #[test]
    fn chain_persists_and_reloads() {
        let a = apov(4);
        let consortium = [1, 2, 3, 4];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("chain.bin");
        let mut file = ChainFile::open(&path).unwrap();
        let mut chain = Chain::new(&a, true);
        for h in 1..=3 {
            let prev = chain.tip_digest();
            let blocks = round(&a, prev);
            let votes = votes_with(&a, &consortium, &blocks, &[4, 4, 1]);
            let g = a
                .tally_and_seal(0, &consortium, votes, &blocks, h, prev, h)
                .unwrap();
            file.append(&g).unwrap();
            chain.append(&a, Arc::new(g)).unwrap();
        }
        drop(file);
        assert_eq!(chain.committed_txs(), 30);
        let back = Chain::load(&a, &path).unwrap();
        assert_eq!(back.digests(), chain.digests());

        let stale = chain.groups()[2].clone();
        assert!(matches!(
            chain.append(&a, stale),
            Err(ChainError::Height { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn genesis_is_fixed() {
        let a = apov(4);
        let g = BlockGroup::genesis();
        assert!(a.validate_block_group(&g, &Digest::ZERO).is_ok());
        assert_eq!(BlockGroup::decode(&g.encode()).unwrap(), g);
        assert_eq!(Chain::new(&a, false).tip_digest(), g.digest(a.hasher()));
    }
}
