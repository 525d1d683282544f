//! Hierarchical identifier registry.
//!
//! Domains form a tree under a single top-level domain. Each domain runs its
//! own small APoV consortium and chain, keeps an off-chain record store
//! replicated to its supervisors, and a FIB with the forwarding entries of
//! the identifiers it registered.
//!
//! Registration passes a compliance check, commits through one consensus
//! round, then lands in the off-chain store and the FIB. Resolution checks
//! the querying domain, climbs to the top, then descends: along the domain
//! path the identifier carries when it has one, breadth first otherwise.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apov::{Apov, ApovError, Chain, ChainError, ConsensusConfig, NodeId, Transaction, VotePolicy};
use crate::fib::{FibError, Hpt};
use crate::names::{ContentName, ForwardingInfo, Identifier, NameComponent};

pub type DomainId = usize;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("{identifier} is already registered in {domain}")]
    Duplicate {
        identifier: Identifier,
        domain: ContentName,
    },
    #[error("compliance review rejected {identifier}: {reason}")]
    ComplianceRejected {
        identifier: Identifier,
        reason: String,
    },
    #[error("consensus round failed: {0}")]
    ConsensusFailed(String),
    #[error("unknown domain {0}")]
    UnknownDomain(ContentName),
    #[error("domain {child} must be a direct child of {parent}")]
    BadDomainName {
        parent: ContentName,
        child: ContentName,
    },
    #[error("invalid domain name {0}")]
    InvalidName(String),
    #[error("record store: {0}")]
    Store(#[from] io::Error),
}

impl From<ApovError> for RegistryError {
    fn from(e: ApovError) -> Self {
        RegistryError::ConsensusFailed(e.to_string())
    }
}

impl From<ChainError> for RegistryError {
    fn from(e: ChainError) -> Self {
        RegistryError::ConsensusFailed(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub identifier: Identifier,
    pub owner: Identifier,
    pub forwarding: ForwardingInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Committed,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub identifier: Identifier,
    pub owner: Identifier,
    pub domain: ContentName,
    pub height: u64,
    pub tx_id: u64,
    pub forwarding: ForwardingInfo,
    pub status: RecordStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResolveOutcome {
    Resolved {
        forwarding: ForwardingInfo,
        record: RegistrationRecord,
        from_cache: bool,
    },
    ProxiedToIp,
    NotFound { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionResult {
    pub outcome: ResolveOutcome,
    pub hops: Vec<ContentName>,
}

impl ResolutionResult {
    pub fn is_resolved(&self) -> bool {
        matches!(self.outcome, ResolveOutcome::Resolved { .. })
    }
}

/// Accepts or rejects a request before it goes to consensus.
pub type CompliancePredicate = Box<dyn Fn(&RegisterRequest) -> Result<(), String> + Send + Sync>;

/// Owner must be an identity; content names are capped at 32 components.
pub fn default_compliance(req: &RegisterRequest) -> Result<(), String> {
    if !matches!(req.owner, Identifier::Identity(_)) {
        return Err(format!("owner {} is not an identity", req.owner));
    }
    if let Identifier::Content(n) = &req.identifier {
        if n.len() > 32 {
            return Err(format!("{} components exceed the limit of 32", n.len()));
        }
    }
    Ok(())
}

/// Bounded FIFO map.
#[derive(Debug, Clone)]
struct Cache {
    cap: usize,
    order: VecDeque<Identifier>,
    map: HashMap<Identifier, RegistrationRecord>,
}

impl Cache {
    fn new(cap: usize) -> Self {
        Cache {
            cap,
            order: VecDeque::new(),
            map: HashMap::new(),
        }
    }

    fn get(&self, id: &Identifier) -> Option<&RegistrationRecord> {
        self.map.get(id)
    }

    fn put(&mut self, id: Identifier, rec: RegistrationRecord) {
        if self.cap == 0 {
            return;
        }
        if self.map.insert(id.clone(), rec).is_none() {
            self.order.push_back(id);
            if self.order.len() > self.cap {
                let old = self.order.pop_front().unwrap();
                self.map.remove(&old);
            }
        }
    }
}

pub struct Domain {
    pub name: ContentName,
    pub parent: Option<DomainId>,
    pub children: Vec<DomainId>,
    pub supervisors: Vec<NodeId>,
    apov: Apov,
    chain: Chain,
    /// One off-chain store per supervisor, kept identical.
    replicas: Vec<HashMap<Identifier, RegistrationRecord>>,
    fib: Hpt,
    cache: Cache,
    store: Option<BufWriter<File>>,
}

impl Domain {
    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn fib(&self) -> &Hpt {
        &self.fib
    }

    pub fn records(&self) -> &HashMap<Identifier, RegistrationRecord> {
        &self.replicas[0]
    }

    pub fn depth(&self) -> usize {
        self.name.len()
    }
}

impl std::fmt::Debug for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Domain")
            .field("name", &self.name)
            .field("height", &self.chain.height())
            .field("records", &self.records().len())
            .finish()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistryConfig {
    /// Consensus nodes per domain; all of them supervise the record store.
    pub supervisors: u32,
    pub cache_capacity: usize,
    /// Directory for JSON-lines record files, one per domain.
    pub store_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        RegistryConfig {
            supervisors: 3,
            cache_capacity: 256,
            store_dir: None,
            seed: 7,
        }
    }
}

/// Problems found by [`Registry::audit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditIssue {
    MissingGroup { domain: ContentName, identifier: Identifier, height: u64 },
    MissingTransaction { domain: ContentName, identifier: Identifier, height: u64, tx_id: u64 },
    ReplicaDivergence { domain: ContentName, supervisor: NodeId },
    CountMismatch { domain: ContentName, on_chain: u64, off_chain: usize },
    FibMissing { domain: ContentName, identifier: Identifier },
}

pub struct Registry {
    cfg: RegistryConfig,
    domains: Vec<Domain>,
    by_name: HashMap<ContentName, DomainId>,
    owner_of: HashMap<Identifier, DomainId>,
    compliance: CompliancePredicate,
    next_tx: u64,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("domains", &self.domains)
            .field("registered", &self.owner_of.len())
            .finish()
    }
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            '/' => out.push_str("%2F"),
            c => out.push(c),
        }
    }
    out
}

/// FIB name under which a non-content identifier is anchored in `domain`.
pub fn anchor_name(domain: &ContentName, id: &Identifier) -> ContentName {
    let scheme = NameComponent::new(id.scheme()).unwrap();
    let value = NameComponent::new(percent_encode(&id.value())).expect("opaque values have no control characters");
    domain.child(&scheme).child(&value)
}

impl Registry {
    pub fn new(top: &str, cfg: RegistryConfig) -> Result<Self, RegistryError> {
        let mut r = Registry {
            cfg,
            domains: Vec::new(),
            by_name: HashMap::new(),
            owner_of: HashMap::new(),
            compliance: Box::new(default_compliance),
            next_tx: 1,
        };
        let name: ContentName = top
            .parse()
            .map_err(|e| RegistryError::InvalidName(format!("{top:?}: {e}")))?;
        r.push_domain(name, None)?;
        Ok(r)
    }

    /// Top domain with `fanout` children, each with `fanout` children:
    /// `/top`, `/top/d0`, `/top/d0/d0`, ...
    pub fn three_level(fanout: usize, cfg: RegistryConfig) -> Result<Self, RegistryError> {
        let mut r = Registry::new("/top", cfg)?;
        for i in 0..fanout {
            let mid = r.add_domain(0, &format!("d{i}"))?;
            for j in 0..fanout {
                r.add_domain(mid, &format!("d{j}"))?;
            }
        }
        Ok(r)
    }

    pub fn set_compliance(&mut self, p: CompliancePredicate) {
        self.compliance = p;
    }

    fn push_domain(&mut self, name: ContentName, parent: Option<DomainId>) -> Result<DomainId, RegistryError> {
        let n = self.cfg.supervisors.max(2);
        let id = self.domains.len();
        let apov = Apov::new(ConsensusConfig::standard(n, 64), self.cfg.seed ^ (id as u64) << 16)?;
        let chain = Chain::new(&apov, true);
        let store = match &self.cfg.store_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let f = OpenOptions::new().create(true).append(true).open(store_path(dir, &name))?;
                Some(BufWriter::new(f))
            }
            None => None,
        };
        self.domains.push(Domain {
            name: name.clone(),
            parent,
            children: Vec::new(),
            supervisors: (0..n).collect(),
            apov,
            chain,
            replicas: vec![HashMap::new(); n as usize],
            fib: Hpt::new(),
            cache: Cache::new(self.cfg.cache_capacity),
            store,
        });
        self.by_name.insert(name, id);
        if let Some(p) = parent {
            self.domains[p].children.push(id);
        }
        Ok(id)
    }

    pub fn add_domain(&mut self, parent: DomainId, label: &str) -> Result<DomainId, RegistryError> {
        let pname = self.domains[parent].name.clone();
        let child = NameComponent::new(label)
            .map(|c| pname.child(&c))
            .map_err(|_| RegistryError::BadDomainName {
                parent: pname.clone(),
                child: pname.clone(),
            })?;
        if self.by_name.contains_key(&child) {
            return Err(RegistryError::BadDomainName { parent: pname, child });
        }
        self.push_domain(child, Some(parent))
    }

    pub fn domain_id(&self, name: &ContentName) -> Result<DomainId, RegistryError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| RegistryError::UnknownDomain(name.clone()))
    }

    pub fn domain(&self, id: DomainId) -> &Domain {
        &self.domains[id]
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn registered(&self) -> usize {
        self.owner_of.len()
    }

    /// Reviews, commits through one consensus round, then stores.
    pub fn register(&mut self, domain: DomainId, req: RegisterRequest) -> Result<RegistrationRecord, RegistryError> {
        if let Some(&d) = self.owner_of.get(&req.identifier) {
            return Err(RegistryError::Duplicate {
                identifier: req.identifier,
                domain: self.domains[d].name.clone(),
            });
        }
        if let Err(reason) = (self.compliance)(&req) {
            return Err(RegistryError::ComplianceRejected {
                identifier: req.identifier,
                reason,
            });
        }

        let tx_id = self.next_tx;
        let d = &mut self.domains[domain];
        let payload = serde_json::to_vec(&req).expect("request serializes");
        let tx = Transaction::new(tx_id, payload);
        let height = commit_round(d, tx)?;
        self.next_tx += 1;

        let record = RegistrationRecord {
            identifier: req.identifier.clone(),
            owner: req.owner,
            domain: d.name.clone(),
            height,
            tx_id,
            forwarding: req.forwarding,
            status: RecordStatus::Committed,
        };
        match &req.identifier {
            Identifier::Content(name) => d.fib.insert(name, req.forwarding),
            other => {
                let anchor = anchor_name(&d.name, other);
                d.fib.insert(&anchor, req.forwarding);
                d.fib
                    .bind_identifier(&anchor, other.clone())
                    .map_err(|e: FibError| RegistryError::ConsensusFailed(e.to_string()))?;
            }
        }
        for replica in &mut d.replicas {
            replica.insert(record.identifier.clone(), record.clone());
        }
        if let Some(store) = &mut d.store {
            serde_json::to_writer(&mut *store, &record).map_err(io::Error::other)?;
            store.write_all(b"\n")?;
            store.flush()?;
        }
        self.owner_of.insert(record.identifier.clone(), domain);
        Ok(record)
    }

    /// Local check: FIB first, then the cache.
    fn check_local(&self, d: DomainId, id: &Identifier) -> Option<ResolveOutcome> {
        let dom = &self.domains[d];
        if let Some(rec) = dom.records().get(id) {
            let name = match id {
                Identifier::Content(n) => Some(n.clone()),
                other => dom.fib.translate(other).ok(),
            };
            if let Some(f) = name.and_then(|n| dom.fib.forwarding_of(&n)) {
                return Some(ResolveOutcome::Resolved {
                    forwarding: f,
                    record: rec.clone(),
                    from_cache: false,
                });
            }
        }
        dom.cache.get(id).map(|rec| ResolveOutcome::Resolved {
            forwarding: rec.forwarding,
            record: rec.clone(),
            from_cache: true,
        })
    }

    /// Resolution without touching caches.
    pub fn lookup(&self, origin: DomainId, id: &Identifier) -> ResolutionResult {
        let mut hops = vec![self.domains[origin].name.clone()];
        if matches!(id, Identifier::Ip(_)) {
            let dom = &self.domains[origin];
            return match dom.fib.translate(id).ok().and_then(|n| dom.fib.forwarding_of(&n)) {
                Some(f) => ResolutionResult {
                    outcome: ResolveOutcome::Resolved {
                        forwarding: f,
                        record: dom.records()[id].clone(),
                        from_cache: false,
                    },
                    hops,
                },
                None => ResolutionResult {
                    outcome: ResolveOutcome::ProxiedToIp,
                    hops,
                },
            };
        }

        let mut visited = vec![false; self.domains.len()];
        let done = |outcome, hops| ResolutionResult { outcome, hops };

        // Upward.
        let mut cur = origin;
        loop {
            visited[cur] = true;
            if let Some(o) = self.check_local(cur, id) {
                return done(o, hops);
            }
            match self.domains[cur].parent {
                Some(p) => {
                    cur = p;
                    hops.push(self.domains[cur].name.clone());
                }
                None => break,
            }
        }

        // Downward along the carried domain path.
        if let Some(name) = id.as_content() {
            let mut at = cur;
            loop {
                let next = self.domains[at]
                    .children
                    .iter()
                    .copied()
                    .find(|&c| self.domains[c].name.is_prefix_of(name));
                let Some(c) = next else { break };
                at = c;
                if visited[c] {
                    continue;
                }
                visited[c] = true;
                hops.push(self.domains[c].name.clone());
                if let Some(o) = self.check_local(c, id) {
                    return done(o, hops);
                }
            }
            if at != cur {
                return done(
                    ResolveOutcome::NotFound {
                        message: format!("{id} is not registered under {}", self.domains[at].name),
                    },
                    hops,
                );
            }
        }

        // Breadth-first descent.
        let mut queue: VecDeque<DomainId> = self.domains[cur].children.iter().copied().collect();
        while let Some(d) = queue.pop_front() {
            queue.extend(self.domains[d].children.iter().copied());
            if visited[d] {
                continue;
            }
            visited[d] = true;
            hops.push(self.domains[d].name.clone());
            if let Some(o) = self.check_local(d, id) {
                return done(o, hops);
            }
        }
        done(
            ResolveOutcome::NotFound {
                message: format!("{id} is not registered in any domain"),
            },
            hops,
        )
    }

    /// Resolves and caches a remote answer at the origin.
    pub fn resolve(&mut self, origin: DomainId, id: &Identifier) -> ResolutionResult {
        let r = self.lookup(origin, id);
        if let ResolveOutcome::Resolved { record, from_cache: false, .. } = &r.outcome {
            if record.domain != self.domains[origin].name {
                self.domains[origin].cache.put(id.clone(), record.clone());
            }
        }
        r
    }

    /// Checks that every record points at a committed transaction, that
    /// replicas agree, and that the FIB holds every record.
    pub fn audit(&self) -> Vec<AuditIssue> {
        let mut out = Vec::new();
        for d in &self.domains {
            let recs = d.records();
            for rec in recs.values() {
                let Some(group) = d.chain.groups().get(rec.height as usize) else {
                    out.push(AuditIssue::MissingGroup {
                        domain: d.name.clone(),
                        identifier: rec.identifier.clone(),
                        height: rec.height,
                    });
                    continue;
                };
                let has_tx = group.body.iter().any(|b| b.txs.iter().any(|t| t.id == rec.tx_id));
                if !has_tx {
                    out.push(AuditIssue::MissingTransaction {
                        domain: d.name.clone(),
                        identifier: rec.identifier.clone(),
                        height: rec.height,
                        tx_id: rec.tx_id,
                    });
                }
                let name = match &rec.identifier {
                    Identifier::Content(n) => Some(n.clone()),
                    other => d.fib.translate(other).ok(),
                };
                if name.and_then(|n| d.fib.forwarding_of(&n)).is_none() {
                    out.push(AuditIssue::FibMissing {
                        domain: d.name.clone(),
                        identifier: rec.identifier.clone(),
                    });
                }
            }
            for (i, r) in d.replicas.iter().enumerate().skip(1) {
                if r != recs {
                    out.push(AuditIssue::ReplicaDivergence {
                        domain: d.name.clone(),
                        supervisor: d.supervisors[i],
                    });
                }
            }
            if d.chain.committed_txs() != recs.len() as u64 {
                out.push(AuditIssue::CountMismatch {
                    domain: d.name.clone(),
                    on_chain: d.chain.committed_txs(),
                    off_chain: recs.len(),
                });
            }
        }
        out
    }

    /// Handles one request message.
    pub fn handle(&mut self, req: Request) -> Response {
        match req {
            Request::Register { domain, request } => {
                match self.domain_id(&domain).and_then(|d| self.register(d, request)) {
                    Ok(record) => Response::Registered { record },
                    Err(e) => Response::error(&e),
                }
            }
            Request::Resolve { origin, identifier } => match self.domain_id(&origin) {
                Ok(d) => Response::Resolution(self.resolve(d, &identifier)),
                Err(e) => Response::error(&e),
            },
        }
    }

    /// [`Registry::handle`] over JSON text.
    pub fn handle_json(&mut self, msg: &str) -> String {
        let resp = match serde_json::from_str::<Request>(msg) {
            Ok(req) => self.handle(req),
            Err(e) => Response::Error {
                kind: "malformed".into(),
                message: e.to_string(),
            },
        };
        serde_json::to_string(&resp).expect("responses serialize")
    }
}

/// One APoV round in `d` carrying a single block with `tx`. Returns the
/// committed height.
fn commit_round(d: &mut Domain, tx: Transaction) -> Result<u64, RegistryError> {
    let prev = d.chain.tip_digest();
    let height = d.chain.height() + 1;
    let leader = d.chain.groups().last().map_or(0, |g| g.header.next_leader);
    let consortium: Vec<NodeId> = d.supervisors.iter().copied().filter(|&s| s != leader).collect();
    let bookkeeper = consortium[0];
    let block = Arc::new(d.apov.make_block(bookkeeper, vec![tx], prev, height)?);
    let blocks = [block];
    let votes = consortium
        .iter()
        .map(|&v| d.apov.cast_validation_votes(v, &blocks, &prev, VotePolicy::Honest))
        .collect();
    let group = d
        .apov
        .tally_and_seal(leader, &consortium, votes, &blocks, height, prev, height)?;
    if group.body.is_empty() {
        return Err(RegistryError::ConsensusFailed("block did not reach a majority".into()));
    }
    d.chain.append(&d.apov, Arc::new(group))?;
    Ok(height)
}

fn store_path(dir: &Path, domain: &ContentName) -> PathBuf {
    dir.join(format!("{}.jsonl", percent_encode(domain.as_str())))
}

/// Reads a domain's JSON-lines record file.
pub fn read_records(dir: &Path, domain: &ContentName) -> io::Result<Vec<RegistrationRecord>> {
    let f = BufReader::new(File::open(store_path(dir, domain))?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(io::Error::other)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Register {
        domain: ContentName,
        #[serde(flatten)]
        request: RegisterRequest,
    },
    Resolve {
        origin: ContentName,
        identifier: Identifier,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Response {
    Registered { record: RegistrationRecord },
    Resolution(ResolutionResult),
    Error { kind: String, message: String },
}

impl Response {
    fn error(e: &RegistryError) -> Self {
        let kind = match e {
            RegistryError::Duplicate { .. } => "duplicate",
            RegistryError::ComplianceRejected { .. } => "compliance_rejected",
            RegistryError::ConsensusFailed(_) => "consensus_failed",
            RegistryError::UnknownDomain(_)
            | RegistryError::BadDomainName { .. }
            | RegistryError::InvalidName(_) => "unknown_domain",
            RegistryError::Store(_) => "store",
        };
        Response::Error {
            kind: kind.into(),
            message: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: &str, owner: &str) -> RegisterRequest {
        RegisterRequest {
            identifier: id.parse().unwrap(),
            owner: owner.parse().unwrap(),
            forwarding: ForwardingInfo::face(3),
        }
    }

    fn named(r: &Registry, n: &str) -> DomainId {
        r.domain_id(&n.parse().unwrap()).unwrap()
    }

    fn world() -> Registry {
        let mut r = Registry::new("/top", RegistryConfig::default()).unwrap();
        let cn = r.add_domain(0, "cn").unwrap();
        r.add_domain(0, "us").unwrap();
        r.add_domain(cn, "gd").unwrap();
        r
    }

    #[test]
    fn register_then_resolve_locally() {
        let mut r = world();
        let cn = named(&r, "/top/cn");
        let rec = r.register(cn, req("content:/video/v1", "id:alice")).unwrap();
        assert_eq!(rec.height, 1);
        assert_eq!(rec.domain.as_str(), "/top/cn");
        let res = r.resolve(cn, &"content:/video/v1".parse().unwrap());
        assert!(res.is_resolved());
        assert_eq!(res.hops.len(), 1);
        assert!(r.audit().is_empty());

        let dup = r.register(0, req("content:/video/v1", "id:bob"));
        assert!(matches!(dup, Err(RegistryError::Duplicate { .. })));
        let bad = r.register(0, req("content:/x", "geo:earth"));
        assert!(matches!(bad, Err(RegistryError::ComplianceRejected { .. })));
        assert_eq!(r.domain(0).chain().height(), 0);
    }

    #[test]
    fn hops_follow_the_carried_path() {
        let mut r = world();
        let gd = named(&r, "/top/cn/gd");
        let us = named(&r, "/top/us");
        let id: Identifier = "content:/top/cn/gd/news".parse().unwrap();
        r.register(gd, req("content:/top/cn/gd/news", "id:alice")).unwrap();
        let res = r.resolve(us, &id);
        assert!(res.is_resolved());
        let hops: Vec<&str> = res.hops.iter().map(|h| h.as_str()).collect();
        assert_eq!(hops, ["/top/us", "/top", "/top/cn", "/top/cn/gd"]);
        // Cached at the origin for the next query.
        let again = r.resolve(us, &id);
        assert_eq!(again.hops.len(), 1);
        assert!(matches!(again.outcome, ResolveOutcome::Resolved { from_cache: true, .. }));
    }

    #[test]
    fn non_content_and_ip_identifiers() {
        let mut r = world();
        let gd = named(&r, "/top/cn/gd");
        r.register(gd, req("id:carol/phone", "id:carol")).unwrap();
        let res = r.lookup(0, &"id:carol/phone".parse().unwrap());
        assert!(res.is_resolved());
        assert_eq!(res.hops.len(), 4, "{:?}", res.hops);

        let ip: Identifier = "ip:203.0.113.9".parse().unwrap();
        assert_eq!(r.lookup(gd, &ip).outcome, ResolveOutcome::ProxiedToIp);
        r.register(gd, req("ip:203.0.113.9", "id:carol")).unwrap();
        assert!(r.lookup(gd, &ip).is_resolved());
        assert_eq!(r.lookup(0, &ip).outcome, ResolveOutcome::ProxiedToIp);
    }

    #[test]
    fn not_found_visits_everything_once() {
        let r = world();
        let res = r.lookup(named(&r, "/top/us"), &"geo:moon".parse().unwrap());
        assert!(matches!(res.outcome, ResolveOutcome::NotFound { .. }));
        assert_eq!(res.hops.len(), 4);
        let mut uniq = res.hops.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), res.hops.len());
    }

    #[test]
    fn json_messages_and_store() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RegistryConfig {
            store_dir: Some(dir.path().to_path_buf()),
            ..RegistryConfig::default()
        };
        let mut r = Registry::three_level(2, cfg).unwrap();
        let out = r.handle_json(
            r#"{"op":"register","domain":"/top/d1/d0","identifier":"content:/top/d1/d0/a","owner":"id:dan","forwarding":{"face_id":4,"metric":null}}"#,
        );
        assert!(out.contains(r#""status":"registered""#), "{out}");
        let out = r.handle_json(r#"{"op":"resolve","origin":"/top/d0/d1","identifier":"content:/top/d1/d0/a"}"#);
        let resp: Response = serde_json::from_str(&out).unwrap();
        match resp {
            Response::Resolution(res) => assert_eq!(res.hops.len(), 5),
            other => panic!("{other:?}"),
        }
        assert!(r.handle_json("{}").contains("malformed"));
        let recs = read_records(dir.path(), &"/top/d1/d0".parse().unwrap()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].owner.to_string(), "id:dan");
    }
}
