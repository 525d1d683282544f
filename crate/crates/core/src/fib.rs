//! Forwarding table combining a hash index with a prefix tree (HPT-FIB).
//!
//! Every proper prefix of a stored name is itself present ("reconstruction"),
//! so membership in the hash index is monotone in prefix length and the
//! longest indexed prefix of a query can be found by binary search over
//! prefix lengths. Non-real fillers are split in two kinds:
//!
//! * `Virtual`: no real proper prefix exists, a search ending here is a MISS.
//! * `SemiVirtual`: some real proper prefix exists, a search ending here
//!   backtracks through parent links to the nearest real ancestor.
//!
//! The tree lives in an arena; node 0 is the root sentinel, which is never
//! indexed and behaves as a virtual entry. The hash index stores node ids and
//! hashes the canonical full-name string held by each node.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::hash::BuildHasher;
use std::io::{self, BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use hashbrown::HashTable;
use rustc_hash::FxBuildHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::names::{ContentName, ForwardingInfo, Identifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntryState {
    Real,
    Virtual,
    SemiVirtual,
}

impl EntryState {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryState::Real => "real",
            EntryState::Virtual => "virtual",
            EntryState::SemiVirtual => "semi-virtual",
        }
    }

    pub fn is_real(self) -> bool {
        self == EntryState::Real
    }
}

impl fmt::Display for EntryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EntryState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(EntryState::Real),
            "virtual" => Ok(EntryState::Virtual),
            "semi-virtual" => Ok(EntryState::SemiVirtual),
            other => Err(format!("unknown entry state {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FibError {
    #[error("{0} is not a real entry")]
    UnknownContent(ContentName),
    #[error("{0} is already bound")]
    DuplicateBinding(Identifier),
    #[error("{0} has no binding")]
    NotBound(Identifier),
    #[error("content identifier {0} cannot be bound as an alternate identifier")]
    ContentBinding(Identifier),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LookupOutcome {
    Hit {
        matched_prefix: ContentName,
        forwarding: ForwardingInfo,
    },
    Miss,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupResult {
    pub outcome: LookupOutcome,
    /// Hash-index accesses made by the lookup.
    pub probes: u32,
}

impl LookupResult {
    pub fn is_hit(&self) -> bool {
        matches!(self.outcome, LookupOutcome::Hit { .. })
    }

    pub fn matched_prefix(&self) -> Option<&ContentName> {
        match &self.outcome {
            LookupOutcome::Hit { matched_prefix, .. } => Some(matched_prefix),
            LookupOutcome::Miss => None,
        }
    }
}

/// A single broken invariant found by [`Hpt::verify_integrity`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    PrefixNotIndexed { name: String, prefix: String },
    WrongState { name: String, expected: EntryState, found: EntryState },
    NonRealLeaf { name: String },
    ForwardingMismatch { name: String },
    ParentMismatch { name: String },
    IndexMismatch { detail: String },
    BindingMismatch { detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PrefixNotIndexed { name, prefix } => {
                write!(f, "{name}: prefix {prefix} is not indexed")
            }
            Violation::WrongState { name, expected, found } => {
                write!(f, "{name}: state {found}, expected {expected}")
            }
            Violation::NonRealLeaf { name } => write!(f, "{name}: non-real leaf"),
            Violation::ForwardingMismatch { name } => {
                write!(f, "{name}: forwarding presence does not match state")
            }
            Violation::ParentMismatch { name } => write!(f, "{name}: broken parent link"),
            Violation::IndexMismatch { detail } => write!(f, "index: {detail}"),
            Violation::BindingMismatch { detail } => write!(f, "binding: {detail}"),
        }
    }
}

const NIL: u32 = u32::MAX;
const ROOT: u32 = 0;

#[derive(Debug, Clone)]
struct Node {
    name: Box<str>,
    depth: u16,
    state: EntryState,
    parent: u32,
    first_child: u32,
    next_sibling: u32,
    prev_sibling: u32,
    forwarding: Option<ForwardingInfo>,
    /// Alternate identifiers bound to this content entry.
    bindings: Vec<Identifier>,
}

#[derive(Debug, Default)]
struct ProbeCounter {
    lookups: AtomicU64,
    probes: AtomicU64,
}

/// Cumulative lookup statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProbeStats {
    pub lookups: u64,
    pub probes: u64,
}

/// Read-only view of one table entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryView<'a> {
    pub name: &'a str,
    pub state: EntryState,
    pub forwarding: Option<ForwardingInfo>,
    pub bindings: &'a [Identifier],
}

pub struct Hpt {
    nodes: Vec<Option<Node>>,
    free: Vec<u32>,
    index: HashTable<u32>,
    hasher: FxBuildHasher,
    alt_index: HashMap<Identifier, ContentName>,
    real_count: usize,
    counter: ProbeCounter,
}

impl Default for Hpt {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for Hpt {
    fn clone(&self) -> Self {
        Hpt {
            nodes: self.nodes.clone(),
            free: self.free.clone(),
            index: self.index.clone(),
            hasher: self.hasher,
            alt_index: self.alt_index.clone(),
            real_count: self.real_count,
            counter: ProbeCounter::default(),
        }
    }
}

impl fmt::Debug for Hpt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hpt")
            .field("entries", &self.index.len())
            .field("real", &self.real_count)
            .field("bindings", &self.alt_index.len())
            .finish()
    }
}

impl Hpt {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    /// Pre-sizes the arena and index for roughly `entries` indexed names.
    pub fn with_capacity(entries: usize) -> Self {
        let mut nodes = Vec::with_capacity(entries + 1);
        nodes.push(Some(Node {
            name: "".into(),
            depth: 0,
            state: EntryState::Virtual,
            parent: NIL,
            first_child: NIL,
            next_sibling: NIL,
            prev_sibling: NIL,
            forwarding: None,
            bindings: Vec::new(),
        }));
        Hpt {
            nodes,
            free: Vec::new(),
            index: HashTable::with_capacity(entries),
            hasher: FxBuildHasher,
            alt_index: HashMap::new(),
            real_count: 0,
            counter: ProbeCounter::default(),
        }
    }

    /// Number of real entries.
    pub fn len(&self) -> usize {
        self.real_count
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Number of indexed entries of any state.
    pub fn entry_count(&self) -> usize {
        self.index.len()
    }

    pub fn state_of(&self, name: &ContentName) -> Option<EntryState> {
        self.find(name.as_str()).map(|id| self.node(id).state)
    }

    pub fn forwarding_of(&self, name: &ContentName) -> Option<ForwardingInfo> {
        self.find(name.as_str()).and_then(|id| self.node(id).forwarding)
    }

    pub fn bindings_of(&self, name: &ContentName) -> &[Identifier] {
        self.find(name.as_str())
            .map(|id| self.node(id).bindings.as_slice())
            .unwrap_or(&[])
    }

    pub fn probe_stats(&self) -> ProbeStats {
        ProbeStats {
            lookups: self.counter.lookups.load(Ordering::Relaxed),
            probes: self.counter.probes.load(Ordering::Relaxed),
        }
    }

    /// All indexed entries in canonical name order.
    pub fn entries(&self) -> Vec<EntryView<'_>> {
        let mut out: Vec<_> = self
            .nodes
            .iter()
            .skip(1)
            .flatten()
            .map(|n| EntryView {
                name: &n.name,
                state: n.state,
                forwarding: n.forwarding,
                bindings: &n.bindings,
            })
            .collect();
        out.sort_unstable_by(|a, b| a.name.cmp(b.name));
        out
    }

    // --- arena and index plumbing ---

    fn node(&self, id: u32) -> &Node {
        self.nodes[id as usize].as_ref().expect("live node")
    }

    fn node_mut(&mut self, id: u32) -> &mut Node {
        self.nodes[id as usize].as_mut().expect("live node")
    }

    fn find(&self, key: &str) -> Option<u32> {
        let hash = self.hasher.hash_one(key);
        self.index
            .find(hash, |&id| {
                self.nodes[id as usize].as_ref().map(|n| &*n.name) == Some(key)
            })
            .copied()
    }

    fn alloc(&mut self, name: &str, depth: usize, state: EntryState) -> u32 {
        let node = Node {
            name: name.into(),
            depth: depth as u16,
            state,
            parent: NIL,
            first_child: NIL,
            next_sibling: NIL,
            prev_sibling: NIL,
            forwarding: None,
            bindings: Vec::new(),
        };
        let id = match self.free.pop() {
            Some(id) => {
                self.nodes[id as usize] = Some(node);
                id
            }
            None => {
                self.nodes.push(Some(node));
                (self.nodes.len() - 1) as u32
            }
        };
        let hash = self.hasher.hash_one(name);
        let Hpt {
            index,
            nodes,
            hasher,
            ..
        } = self;
        index.insert_unique(hash, id, |&other| {
            hasher.hash_one(&*nodes[other as usize].as_ref().unwrap().name)
        });
        id
    }

    fn release(&mut self, id: u32) {
        let hash = self.hasher.hash_one(&*self.node(id).name);
        if let Ok(entry) = self.index.find_entry(hash, |&other| other == id) {
            entry.remove();
        }
        self.nodes[id as usize] = None;
        self.free.push(id);
    }

    fn link(&mut self, parent: u32, child: u32) {
        let first = self.node(parent).first_child;
        {
            let c = self.node_mut(child);
            c.parent = parent;
            c.prev_sibling = NIL;
            c.next_sibling = first;
        }
        if first != NIL {
            self.node_mut(first).prev_sibling = child;
        }
        self.node_mut(parent).first_child = child;
    }

    fn unlink(&mut self, child: u32) {
        let (parent, prev, next) = {
            let c = self.node(child);
            (c.parent, c.prev_sibling, c.next_sibling)
        };
        if prev != NIL {
            self.node_mut(prev).next_sibling = next;
        } else {
            self.node_mut(parent).first_child = next;
        }
        if next != NIL {
            self.node_mut(next).prev_sibling = prev;
        }
        let c = self.node_mut(child);
        c.parent = NIL;
        c.prev_sibling = NIL;
        c.next_sibling = NIL;
    }

    fn children(&self, id: u32) -> Children<'_> {
        Children {
            fib: self,
            next: self.node(id).first_child,
        }
    }

    fn drop_bindings(&mut self, id: u32) {
        let bindings = std::mem::take(&mut self.node_mut(id).bindings);
        for alt in bindings {
            self.alt_index.remove(&alt);
        }
    }

    // --- updates ---

    /// Inserts or updates the real entry `name` with forwarding `f`.
    pub fn insert(&mut self, name: &ContentName, f: ForwardingInfo) {
        if let Some(id) = self.find(name.as_str()) {
            let node = self.node_mut(id);
            match node.state {
                EntryState::Real => node.forwarding = Some(f),
                prior => {
                    node.state = EntryState::Real;
                    node.forwarding = Some(f);
                    self.real_count += 1;
                    if prior == EntryState::Virtual {
                        self.promote_virtual_subtree(id);
                    }
                }
            }
            return;
        }

        let n = name.len();
        let leaf = self.alloc(name.as_str(), n, EntryState::Real);
        self.node_mut(leaf).forwarding = Some(f);
        self.real_count += 1;

        // Walk towards the root creating missing prefixes until an existing
        // entry is found; the fillers take their state from that ancestor.
        let mut child = leaf;
        let mut created = Vec::new();
        for i in (1..n).rev() {
            if let Some(ancestor) = self.find(name.prefix_str(i)) {
                self.link(ancestor, child);
                let fill = if self.node(ancestor).state == EntryState::Virtual {
                    EntryState::Virtual
                } else {
                    EntryState::SemiVirtual
                };
                for id in created {
                    self.node_mut(id).state = fill;
                }
                return;
            }
            let filler = self.alloc(name.prefix_str(i), i, EntryState::Virtual);
            self.link(filler, child);
            created.push(filler);
            child = filler;
        }
        self.link(ROOT, child);
    }

    /// Turns every virtual descendant of `id` semi-virtual. Virtual entries
    /// only occur below virtual ancestors, so the walk stops at anything else.
    fn promote_virtual_subtree(&mut self, id: u32) {
        let mut stack: Vec<u32> = self.children(id).collect();
        while let Some(cur) = stack.pop() {
            if self.node(cur).state != EntryState::Virtual {
                continue;
            }
            self.node_mut(cur).state = EntryState::SemiVirtual;
            stack.extend(self.children(cur));
        }
    }

    /// Removes the real entry `name`. Returns false (and changes nothing)
    /// when `name` is not a real entry.
    pub fn delete(&mut self, name: &ContentName) -> bool {
        let Some(id) = self.find(name.as_str()) else {
            return false;
        };
        if !self.node(id).state.is_real() {
            return false;
        }
        self.real_count -= 1;
        self.drop_bindings(id);
        self.node_mut(id).forwarding = None;

        if self.node(id).first_child != NIL {
            let parent = self.node(id).parent;
            match self.node(parent).state {
                EntryState::Real | EntryState::SemiVirtual => {
                    self.node_mut(id).state = EntryState::SemiVirtual;
                }
                EntryState::Virtual => {
                    let mut queue = VecDeque::from([id]);
                    while let Some(cur) = queue.pop_front() {
                        self.node_mut(cur).state = EntryState::Virtual;
                        queue.extend(
                            self.children(cur)
                                .filter(|&c| self.node(c).state == EntryState::SemiVirtual),
                        );
                    }
                }
            }
            return true;
        }

        // Leaf: remove it and prune non-real leaf ancestors.
        let mut cur = id;
        loop {
            let parent = self.node(cur).parent;
            self.unlink(cur);
            self.release(cur);
            if parent == ROOT {
                break;
            }
            let p = self.node(parent);
            if p.state.is_real() || p.first_child != NIL {
                break;
            }
            cur = parent;
        }
        true
    }

    // --- lookups ---

    fn record(&self, probes: u32) {
        self.counter.lookups.fetch_add(1, Ordering::Relaxed);
        self.counter.probes.fetch_add(probes as u64, Ordering::Relaxed);
    }

    /// Binary search over prefix lengths for the longest indexed prefix.
    /// Returns that entry (if any) and the probe count.
    fn longest_indexed(&self, name: &ContentName) -> (Option<u32>, u32) {
        let (mut lo, mut hi) = (1usize, name.len());
        let mut last = None;
        let mut probes = 0;
        while lo <= hi {
            let mid = (lo + hi) / 2;
            probes += 1;
            match self.find(name.prefix_str(mid)) {
                Some(id) => {
                    last = Some(id);
                    lo = mid + 1;
                }
                None => hi = mid - 1,
            }
        }
        (last, probes)
    }

    fn hit(&self, query: &ContentName, id: u32) -> LookupOutcome {
        let node = self.node(id);
        LookupOutcome::Hit {
            matched_prefix: query.prefix(node.depth as usize).unwrap(),
            forwarding: node.forwarding.expect("real entry carries forwarding"),
        }
    }

    /// Longest-prefix match by binary search over prefix lengths, with
    /// parent-link backtracking when the search ends on a semi-virtual entry.
    pub fn lookup_lpm(&self, name: &ContentName) -> LookupResult {
        let (last, probes) = self.longest_indexed(name);
        let outcome = match last {
            None => LookupOutcome::Miss,
            Some(id) => match self.node(id).state {
                EntryState::Real => self.hit(name, id),
                EntryState::Virtual => LookupOutcome::Miss,
                EntryState::SemiVirtual => {
                    let mut cur = self.node(id).parent;
                    while cur != ROOT && !self.node(cur).state.is_real() {
                        cur = self.node(cur).parent;
                    }
                    if cur == ROOT {
                        LookupOutcome::Miss
                    } else {
                        self.hit(name, cur)
                    }
                }
            },
        };
        self.record(probes);
        LookupResult { outcome, probes }
    }

    /// Binary search that treats a semi-virtual terminal entry as a MISS.
    /// This is the classic scheme that produces false negatives; it exists
    /// for comparison in benchmarks.
    pub fn lookup_binary_no_backtrack(&self, name: &ContentName) -> LookupResult {
        let (last, probes) = self.longest_indexed(name);
        let outcome = match last {
            Some(id) if self.node(id).state.is_real() => self.hit(name, id),
            _ => LookupOutcome::Miss,
        };
        self.record(probes);
        LookupResult { outcome, probes }
    }

    /// Linear longest-first search over prefixes, length N down to 1.
    pub fn lookup_oracle(&self, name: &ContentName) -> LookupResult {
        let mut probes = 0;
        let mut outcome = LookupOutcome::Miss;
        for k in (1..=name.len()).rev() {
            probes += 1;
            if let Some(id) = self.find(name.prefix_str(k)) {
                if self.node(id).state.is_real() {
                    outcome = self.hit(name, id);
                    break;
                }
            }
        }
        self.record(probes);
        LookupResult { outcome, probes }
    }

    // --- multi-identifier translation ---

    /// Binds the non-content identifier `alt` to the real entry `content`.
    pub fn bind_identifier(
        &mut self,
        content: &ContentName,
        alt: Identifier,
    ) -> Result<(), FibError> {
        if matches!(alt, Identifier::Content(_)) {
            return Err(FibError::ContentBinding(alt));
        }
        let id = self
            .find(content.as_str())
            .filter(|&id| self.node(id).state.is_real())
            .ok_or_else(|| FibError::UnknownContent(content.clone()))?;
        if self.alt_index.contains_key(&alt) {
            return Err(FibError::DuplicateBinding(alt));
        }
        self.node_mut(id).bindings.push(alt.clone());
        self.alt_index.insert(alt, content.clone());
        Ok(())
    }

    /// Maps an identifier to the content name used for routing. Content
    /// identifiers route as themselves.
    pub fn translate(&self, alt: &Identifier) -> Result<ContentName, FibError> {
        match alt {
            Identifier::Content(name) => Ok(name.clone()),
            other => self
                .alt_index
                .get(other)
                .cloned()
                .ok_or_else(|| FibError::NotBound(other.clone())),
        }
    }

    // --- integrity ---

    /// Checks every structural invariant and returns all violations found.
    pub fn verify_integrity(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let live = self.nodes.iter().skip(1).flatten().count();
        if live != self.index.len() {
            out.push(Violation::IndexMismatch {
                detail: format!("{live} live nodes but {} indexed names", self.index.len()),
            });
        }

        // Top-down walk carrying "has a real proper prefix".
        let mut reached = 0usize;
        let mut reals = 0usize;
        let mut bound = 0usize;
        let mut queue: VecDeque<(u32, bool)> = VecDeque::new();
        for c in self.children(ROOT) {
            queue.push_back((c, false));
        }
        while let Some((id, real_above)) = queue.pop_front() {
            reached += 1;
            if reached > live {
                out.push(Violation::IndexMismatch {
                    detail: "cycle in the prefix tree".into(),
                });
                break;
            }
            let node = self.node(id);
            self.check_node(id, node, real_above, &mut out);
            if node.state.is_real() {
                reals += 1;
            }
            bound += node.bindings.len();
            let below = real_above || node.state.is_real();
            for c in self.children(id) {
                if self.node(c).parent != id {
                    out.push(Violation::ParentMismatch {
                        name: self.node(c).name.to_string(),
                    });
                }
                queue.push_back((c, below));
            }
        }
        if reached != live {
            out.push(Violation::IndexMismatch {
                detail: format!("{} live nodes unreachable from the root", live.abs_diff(reached)),
            });
        }
        if reals != self.real_count {
            out.push(Violation::IndexMismatch {
                detail: format!("real count {} but {reals} real nodes", self.real_count),
            });
        }
        if bound != self.alt_index.len() {
            out.push(Violation::BindingMismatch {
                detail: format!(
                    "{bound} bindings on nodes but {} in the translation index",
                    self.alt_index.len()
                ),
            });
        }
        out
    }

    fn check_node(&self, id: u32, node: &Node, real_above: bool, out: &mut Vec<Violation>) {
        let name = &*node.name;
        if self.find(name) != Some(id) {
            out.push(Violation::IndexMismatch {
                detail: format!("{name} does not resolve to its own node"),
            });
        }
        if let Ok(parsed) = name.parse::<ContentName>() {
            if parsed.len() != node.depth as usize {
                out.push(Violation::ParentMismatch { name: name.into() });
            }
            if parsed.len() > 1 {
                let prefix = parsed.prefix_str(parsed.len() - 1);
                if self.find(prefix).is_none() {
                    out.push(Violation::PrefixNotIndexed {
                        name: name.into(),
                        prefix: prefix.into(),
                    });
                }
                if node.parent == ROOT || &*self.node(node.parent).name != prefix {
                    out.push(Violation::ParentMismatch { name: name.into() });
                }
            } else if node.parent != ROOT {
                out.push(Violation::ParentMismatch { name: name.into() });
            }
        } else {
            out.push(Violation::IndexMismatch {
                detail: format!("{name:?} is not a canonical name"),
            });
        }

        if node.state.is_real() {
            if node.forwarding.is_none() {
                out.push(Violation::ForwardingMismatch { name: name.into() });
            }
        } else {
            let expected = if real_above {
                EntryState::SemiVirtual
            } else {
                EntryState::Virtual
            };
            if node.state != expected {
                out.push(Violation::WrongState {
                    name: name.into(),
                    expected,
                    found: node.state,
                });
            }
            if node.forwarding.is_some() {
                out.push(Violation::ForwardingMismatch { name: name.into() });
            }
            if node.first_child == NIL {
                out.push(Violation::NonRealLeaf { name: name.into() });
            }
            if !node.bindings.is_empty() {
                out.push(Violation::BindingMismatch {
                    detail: format!("{name} is not real but carries bindings"),
                });
            }
        }
        for alt in &node.bindings {
            if self.alt_index.get(alt).map(|c| c.as_str()) != Some(name) {
                out.push(Violation::BindingMismatch {
                    detail: format!("{alt} on {name} is missing from the translation index"),
                });
            }
        }
    }

    #[cfg(test)]
    fn force_state(&mut self, name: &ContentName, state: EntryState) {
        let id = self.find(name.as_str()).unwrap();
        self.node_mut(id).state = state;
    }

    // --- dump / load ---

    /// Writes one line per entry:
    /// `<name>\t<state>\t<face_id[:metric]|->\t<comma-separated bindings>`.
    pub fn dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in self.entries() {
            let face = match e.forwarding {
                Some(ForwardingInfo {
                    face_id,
                    metric: Some(m),
                }) => format!("{face_id}:{m}"),
                Some(f) => f.face_id.to_string(),
                None => "-".to_string(),
            };
            let bindings: Vec<String> = e.bindings.iter().map(|b| b.to_string()).collect();
            writeln!(w, "{}\t{}\t{}\t{}", e.name, e.state, face, bindings.join(","))?;
        }
        Ok(())
    }

    /// Rebuilds a table from [`Hpt::dump`] output by replaying the real
    /// entries, then checks every listed non-real entry against the result.
    pub fn load<R: BufRead>(r: R) -> Result<Hpt, DumpError> {
        struct Line {
            no: usize,
            name: ContentName,
            state: EntryState,
            forwarding: Option<ForwardingInfo>,
            bindings: Vec<Identifier>,
        }
        let mut lines = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let no = i + 1;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| DumpError::Parse { line: no, reason };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", fields.len())));
            }
            let name: ContentName = fields[0].parse().map_err(|e| bad(format!("{e}")))?;
            let state: EntryState = fields[1].parse().map_err(bad)?;
            let forwarding = match fields[2] {
                "-" => None,
                f => {
                    let (face, metric) = match f.split_once(':') {
                        Some((face, m)) => (face, Some(m)),
                        None => (f, None),
                    };
                    let face_id = face.parse().map_err(|_| bad(format!("bad face {f:?}")))?;
                    let metric = metric
                        .map(|m| m.parse().map_err(|_| bad(format!("bad metric {f:?}"))))
                        .transpose()?;
                    Some(ForwardingInfo { face_id, metric })
                }
            };
            if state.is_real() != forwarding.is_some() {
                return Err(bad("forwarding must be present exactly for real entries".into()));
            }
            let bindings = if fields[3].is_empty() {
                Vec::new()
            } else {
                fields[3]
                    .split(',')
                    .map(|b| b.parse().map_err(|e| bad(format!("{e}"))))
                    .collect::<Result<_, _>>()?
            };
            lines.push(Line {
                no,
                name,
                state,
                forwarding,
                bindings,
            });
        }

        let mut fib = Hpt::with_capacity(lines.len());
        for l in lines.iter().filter(|l| l.state.is_real()) {
            fib.insert(&l.name, l.forwarding.unwrap());
        }
        for l in &lines {
            match fib.state_of(&l.name) {
                Some(found) if found == l.state => {}
                found => {
                    return Err(DumpError::StateMismatch {
                        line: l.no,
                        name: l.name.to_string(),
                        listed: l.state,
                        rebuilt: found,
                    })
                }
            }
        }
        if fib.entry_count() != lines.len() {
            let listed: std::collections::HashSet<&str> =
                lines.iter().map(|l| l.name.as_str()).collect();
            let extra = fib
                .entries()
                .into_iter()
                .find(|e| !listed.contains(e.name))
                .map(|e| e.name.to_string())
                .unwrap_or_default();
            return Err(DumpError::UnlistedEntry(extra));
        }
        for l in lines {
            for b in l.bindings {
                fib.bind_identifier(&l.name, b)?;
            }
        }
        Ok(fib)
    }
}

#[derive(Debug, Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: {name} listed as {listed} but rebuilt as {rebuilt:?}")]
    StateMismatch {
        line: usize,
        name: String,
        listed: EntryState,
        rebuilt: Option<EntryState>,
    },
    #[error("reconstruction produced {0}, which the dump does not list")]
    UnlistedEntry(String),
    #[error(transparent)]
    Binding(#[from] FibError),
}

struct Children<'a> {
    fib: &'a Hpt,
    next: u32,
}

impl Iterator for Children<'_> {
    type Item = u32;

    fn next(&mut self) -> Option<u32> {
        if self.next == NIL {
            return None;
        }
        let cur = self.next;
        self.next = self.fib.node(cur).next_sibling;
        Some(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use EntryState::*;

    fn n(s: &str) -> ContentName {
        s.parse().unwrap()
    }

    fn f(face: u32) -> ForwardingInfo {
        ForwardingInfo::face(face)
    }

    fn states(fib: &Hpt) -> Vec<(String, EntryState)> {
        fib.entries()
            .into_iter()
            .map(|e| (e.name.to_string(), e.state))
            .collect()
    }

    fn s(name: &str, st: EntryState) -> (String, EntryState) {
        (name.to_string(), st)
    }

    #[test]
    fn insert_single_component() {
        let mut fib = Hpt::new();
        fib.insert(&n("/a"), f(1));
        assert_eq!(states(&fib), vec![s("/a", Real)]);
        assert_eq!(fib.len(), 1);
        assert!(fib.verify_integrity().is_empty());
    }

    #[test]
    fn insert_builds_virtual_prefixes() {
        let mut fib = Hpt::new();
        fib.insert(&n("/c1/c2/c3"), f(1));
        assert_eq!(
            states(&fib),
            vec![s("/c1", Virtual), s("/c1/c2", Virtual), s("/c1/c2/c3", Real)]
        );

        fib.insert(&n("/c1"), f(2));
        assert_eq!(
            states(&fib),
            vec![s("/c1", Real), s("/c1/c2", SemiVirtual), s("/c1/c2/c3", Real)]
        );
        assert_eq!(fib.forwarding_of(&n("/c1/c2/c3")), Some(f(1)));
        assert!(fib.verify_integrity().is_empty());
    }

    #[test]
    fn insert_below_real_ancestor_creates_semi_virtual_fillers() {
        let mut fib = Hpt::new();
        fib.insert(&n("/a"), f(1));
        fib.insert(&n("/a/b/c/d"), f(2));
        assert_eq!(
            states(&fib),
            vec![
                s("/a", Real),
                s("/a/b", SemiVirtual),
                s("/a/b/c", SemiVirtual),
                s("/a/b/c/d", Real)
            ]
        );
        assert!(fib.verify_integrity().is_empty());
    }

    #[test]
    fn repeat_insert_updates_forwarding() {
        let mut fib = Hpt::new();
        fib.insert(&n("/a/b"), f(1));
        fib.insert(&n("/a/b"), f(7));
        assert_eq!(fib.forwarding_of(&n("/a/b")), Some(f(7)));
        assert_eq!(fib.len(), 1);
        assert_eq!(fib.entry_count(), 2);
    }

    fn three_level() -> Hpt {
        let mut fib = Hpt::new();
        fib.insert(&n("/c1/c2/c3"), f(3));
        fib.insert(&n("/c1"), f(1));
        fib
    }

    #[test]
    fn delete_absent_is_noop() {
        let mut fib = three_level();
        let before = states(&fib);
        assert!(!fib.delete(&n("/x")));
        assert!(!fib.delete(&n("/c1/c2")));
        assert_eq!(states(&fib), before);
    }

    #[test]
    fn delete_leaf_prunes_fillers() {
        let mut fib = three_level();
        assert!(fib.delete(&n("/c1/c2/c3")));
        assert_eq!(states(&fib), vec![s("/c1", Real)]);
        assert!(fib.verify_integrity().is_empty());
    }

    #[test]
    fn delete_inner_real_under_root_demotes_subtree() {
        let mut fib = three_level();
        assert!(fib.delete(&n("/c1")));
        assert_eq!(
            states(&fib),
            vec![s("/c1", Virtual), s("/c1/c2", Virtual), s("/c1/c2/c3", Real)]
        );
        assert!(fib.verify_integrity().is_empty());
    }

    #[test]
    fn delete_inner_real_under_real_becomes_semi_virtual() {
        let mut fib = Hpt::new();
        fib.insert(&n("/a"), f(1));
        fib.insert(&n("/a/b"), f(2));
        fib.insert(&n("/a/b/c"), f(3));
        assert!(fib.delete(&n("/a/b")));
        assert_eq!(
            states(&fib),
            vec![s("/a", Real), s("/a/b", SemiVirtual), s("/a/b/c", Real)]
        );
        assert!(fib.verify_integrity().is_empty());
    }

    #[test]
    fn demotion_stops_at_real_descendants() {
        let mut fib = Hpt::new();
        fib.insert(&n("/a/b/c/d"), f(4));
        fib.insert(&n("/a/b/x"), f(5));
        fib.insert(&n("/a"), f(1));
        fib.insert(&n("/a/b/c"), f(3));
        assert_eq!(fib.state_of(&n("/a/b/c/d")), Some(Real));
        assert!(fib.delete(&n("/a")));
        assert_eq!(fib.state_of(&n("/a/b")), Some(Virtual));
        // /a/b/c is real, so its subtree keeps its states.
        assert_eq!(fib.state_of(&n("/a/b/c")), Some(Real));
        assert!(fib.verify_integrity().is_empty());
    }

    #[test]
    fn lookup_on_empty_table() {
        let fib = Hpt::new();
        for len in 1..=12 {
            let q = ContentName::from_components((0..len).map(|i| format!("q{i}"))).unwrap();
            let r = fib.lookup_lpm(&q);
            assert_eq!(r.outcome, LookupOutcome::Miss);
            let bound = (len as f64 + 1.0).log2().ceil() as u32;
            assert!(r.probes <= bound, "len {len}: {} > {bound}", r.probes);
        }
    }

    #[test]
    fn lookup_hits_real_terminal() {
        let mut fib = Hpt::new();
        fib.insert(&n("/a/b"), f(9));
        assert_eq!(fib.state_of(&n("/a")), Some(Virtual));
        let r = fib.lookup_lpm(&n("/a/b/c/d"));
        // lengths probed: 2 (hit), 3 (miss); the search then stops.
        assert_eq!(r.probes, 2);
        assert_eq!(
            r.outcome,
            LookupOutcome::Hit {
                matched_prefix: n("/a/b"),
                forwarding: f(9)
            }
        );
    }

    #[test]
    fn lookup_backtracks_from_semi_virtual() {
        let mut fib = Hpt::new();
        fib.insert(&n("/a"), f(1));
        fib.insert(&n("/a/b/c"), f(3));
        assert_eq!(fib.state_of(&n("/a/b")), Some(SemiVirtual));
        let q = n("/a/b/x");
        let r = fib.lookup_lpm(&q);
        assert_eq!(r.matched_prefix(), Some(&n("/a")));
        // without backtracking the same search is a false negative
        assert_eq!(fib.lookup_binary_no_backtrack(&q).outcome, LookupOutcome::Miss);
        assert_eq!(fib.lookup_oracle(&q).outcome, r.outcome);
    }

    #[test]
    fn lookup_ending_on_virtual_misses() {
        let mut fib = Hpt::new();
        fib.insert(&n("/a/b/c"), f(3));
        let r = fib.lookup_lpm(&n("/a/b/z/w"));
        assert_eq!(r.outcome, LookupOutcome::Miss);
    }

    #[test]
    fn oracle_examples() {
        let fib = Hpt::new();
        let q = n("/1/2/3/4/5/6");
        let r = fib.lookup_oracle(&q);
        assert_eq!((r.outcome, r.probes), (LookupOutcome::Miss, 6));

        let mut fib = Hpt::new();
        fib.insert(&n("/a"), f(1));
        let r = fib.lookup_oracle(&n("/a/b"));
        assert_eq!(r.matched_prefix(), Some(&n("/a")));
        assert_eq!(r.probes, 2);
    }

    #[test]
    fn probe_counter_accumulates() {
        let mut fib = Hpt::new();
        fib.insert(&n("/a"), f(1));
        fib.lookup_oracle(&n("/a/b"));
        fib.lookup_oracle(&n("/x"));
        assert_eq!(fib.probe_stats(), ProbeStats { lookups: 2, probes: 3 });
    }

    #[test]
    fn bind_and_translate() {
        let mut fib = Hpt::new();
        fib.insert(&n("/c1/c2"), f(1));
        let alice: Identifier = "id:alice".parse().unwrap();
        fib.bind_identifier(&n("/c1/c2"), alice.clone()).unwrap();
        assert_eq!(fib.translate(&alice).unwrap(), n("/c1/c2"));
        assert_eq!(fib.bindings_of(&n("/c1/c2")), &[alice.clone()]);

        let content = Identifier::Content(n("/c1/c2"));
        assert_eq!(fib.translate(&content).unwrap(), n("/c1/c2"));

        assert_eq!(
            fib.bind_identifier(&n("/c1"), "id:bob".parse().unwrap()),
            Err(FibError::UnknownContent(n("/c1")))
        );
        assert_eq!(
            fib.bind_identifier(&n("/c1/c2"), alice.clone()),
            Err(FibError::DuplicateBinding(alice.clone()))
        );
        let bob: Identifier = "id:bob".parse().unwrap();
        assert_eq!(fib.translate(&bob), Err(FibError::NotBound(bob)));
        assert!(matches!(
            fib.bind_identifier(&n("/c1/c2"), content),
            Err(FibError::ContentBinding(_))
        ));
        assert!(fib.verify_integrity().is_empty());
    }

    #[test]
    fn deleting_entry_releases_its_bindings() {
        let mut fib = Hpt::new();
        fib.insert(&n("/c1/c2"), f(1));
        let ip: Identifier = "ip:10.0.0.1".parse().unwrap();
        fib.bind_identifier(&n("/c1/c2"), ip.clone()).unwrap();
        fib.delete(&n("/c1/c2"));
        assert!(matches!(fib.translate(&ip), Err(FibError::NotBound(_))));
        assert!(fib.verify_integrity().is_empty());
    }

    #[test]
    fn forced_wrong_state_is_reported_once() {
        let mut fib = Hpt::new();
        fib.insert(&n("/c1/c2/c3"), f(1));
        fib.force_state(&n("/c1/c2"), SemiVirtual);
        let report = fib.verify_integrity();
        assert_eq!(
            report,
            vec![Violation::WrongState {
                name: "/c1/c2".into(),
                expected: Virtual,
                found: SemiVirtual
            }]
        );
    }

    #[test]
    fn dump_and_load_round_trip() {
        let mut fib = three_level();
        fib.insert(
            &n("/c1/x"),
            ForwardingInfo {
                face_id: 4,
                metric: Some(10),
            },
        );
        fib.bind_identifier(&n("/c1/c2/c3"), "id:alice".parse().unwrap())
            .unwrap();
        fib.bind_identifier(&n("/c1/c2/c3"), "geo:CN-GD".parse().unwrap())
            .unwrap();
        let mut buf = Vec::new();
        fib.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "/c1\treal\t1\t\n\
             /c1/c2\tsemi-virtual\t-\t\n\
             /c1/c2/c3\treal\t3\tid:alice,geo:CN-GD\n\
             /c1/x\treal\t4:10\t\n"
        );
        let back = Hpt::load(buf.as_slice()).unwrap();
        assert_eq!(states(&back), states(&fib));
        assert_eq!(back.forwarding_of(&n("/c1/x")), fib.forwarding_of(&n("/c1/x")));
        assert_eq!(
            back.translate(&"geo:CN-GD".parse().unwrap()).unwrap(),
            n("/c1/c2/c3")
        );
    }

    #[test]
    fn load_rejects_inconsistent_dumps() {
        let wrong_state = "/a\tvirtual\t-\t\n/a/b\treal\t1\t\n/a/c\tsemi-virtual\t-\t\n";
        assert!(matches!(
            Hpt::load(wrong_state.as_bytes()),
            Err(DumpError::StateMismatch { line: 3, .. })
        ));
        let missing_filler = "/a/b\treal\t1\t\n";
        assert!(matches!(
            Hpt::load(missing_filler.as_bytes()),
            Err(DumpError::UnlistedEntry(name)) if name == "/a"
        ));
        let bad_fields = "/a\treal\t1\n";
        assert!(matches!(
            Hpt::load(bad_fields.as_bytes()),
            Err(DumpError::Parse { line: 1, .. })
        ));
        let real_without_face = "/a\treal\t-\t\n";
        assert!(Hpt::load(real_without_face.as_bytes()).is_err());
    }
}
