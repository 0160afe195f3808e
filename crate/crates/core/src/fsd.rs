//! FIB-state distribution: each device keeps a table of local equivalence
//! classes (LECs) — header spaces that share one downstream forwarding path —
//! and the tables are kept eventually consistent under FIB and link events by
//! a three-message protocol: path updates (broadcast), requests and replies
//! (unicast).
//!
//! Paths are kept *maximal*: a [`LecPath::Truncated`] path always ends at the
//! device where knowledge (equivalently, forwarding) stops, which is exactly
//! the device whose later broadcasts can extend it. That is what lets one
//! broadcast repair every dependent table with no re-broadcasts: everyone who
//! cares about the announcer already names it in their path.

use std::collections::{BTreeMap, VecDeque};

use serde_json::json;
use thiserror::Error;

use crate::datamodel::{
    apply_fib_update, DataModelError, DeviceId, Fib, FibEntry, FibUpdate, HopTarget,
    LinkStateMap, Topology,
};
use crate::hsa::HeaderSpace;
use crate::simharness::{Outgoing, Protocol, Snapshot};

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum FsdError {
    #[error(transparent)]
    DataModel(#[from] DataModelError),
    #[error("FIB rule on {device:?} cannot be distributed: {reason}")]
    UnsupportedRule { device: String, reason: String },
    #[error("forwarding loop through {device:?} for {space}")]
    ForwardingLoop { device: String, space: String },
    #[error("request from {device:?} to {nexthop:?} left {space} unanswered")]
    UncoveredRequest {
        device: String,
        nexthop: String,
        space: String,
    },
}

/// Downstream path knowledge for one equivalence class. Sequences always
/// start at the owning device.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum LecPath {
    /// Full path ending at the device that delivers the packet.
    Complete(Vec<DeviceId>),
    /// Known prefix; forwarding stops (and the packet is lost) at the last
    /// listed device. Always at least two devices — a prefix that ends at the
    /// owner itself carries no information and collapses to `Null`.
    Truncated(Vec<DeviceId>),
    /// No local path.
    Null,
}

impl LecPath {
    pub fn devices(&self) -> &[DeviceId] {
        match self {
            LecPath::Complete(p) | LecPath::Truncated(p) => p,
            LecPath::Null => &[],
        }
    }

    pub fn contains(&self, d: DeviceId) -> bool {
        self.devices().contains(&d)
    }

    pub fn is_complete(&self) -> bool {
        matches!(self, LecPath::Complete(_))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, LecPath::Null)
    }
}

/// Collapses degenerate truncations: a prefix of just the owner means "no
/// path".
fn truncated(prefix: Vec<DeviceId>) -> LecPath {
    if prefix.len() <= 1 {
        LecPath::Null
    } else {
        LecPath::Truncated(prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LecEntry {
    pub space: HeaderSpace,
    pub path: LecPath,
}

/// Per-device table: disjoint spaces, at most one entry per distinct path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LecTable {
    pub owner: DeviceId,
    pub entries: Vec<LecEntry>,
}

impl LecTable {
    pub fn new(owner: DeviceId) -> Self {
        LecTable {
            owner,
            entries: Vec::new(),
        }
    }

    /// Partitions `space` by the table; uncovered remainder maps to `Null`.
    pub fn lookup(&self, space: &HeaderSpace) -> Vec<(HeaderSpace, LecPath)> {
        let mut out = Vec::new();
        let mut rest = space.clone();
        for e in &self.entries {
            let hit = space.intersect(&e.space);
            if !hit.is_empty() {
                rest = rest.subtract(&e.space);
                out.push((hit, e.path.clone()));
            }
        }
        if !rest.is_empty() {
            out.push((rest, LecPath::Null));
        }
        out
    }

    /// Carves `space` out of every entry, then merges it into the entry with
    /// exactly `path` (or appends a new one). Keeps the disjointness and
    /// one-entry-per-path invariants.
    fn upsert(&mut self, space: &HeaderSpace, path: LecPath) {
        if space.is_empty() {
            return;
        }
        let path = match path {
            LecPath::Truncated(p) => truncated(p),
            other => other,
        };
        for e in &mut self.entries {
            e.space = e.space.subtract(space);
        }
        self.entries.retain(|e| !e.space.is_empty());
        if let Some(e) = self.entries.iter_mut().find(|e| e.path == path) {
            e.space = e.space.union(space);
        } else {
            self.entries.push(LecEntry {
                space: space.clone(),
                path,
            });
        }
    }

    /// Union of all entry spaces.
    pub fn covered(&self, width: u16) -> HeaderSpace {
        let mut acc = HeaderSpace::empty(width);
        for e in &self.entries {
            acc = acc.union(&e.space);
        }
        acc
    }

    /// Test hook: checks disjointness, owner-anchored paths, uniqueness of
    /// path values, and the no-degenerate-truncation rule.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, a) in self.entries.iter().enumerate() {
            if a.space.is_empty() {
                return Err(format!("entry {i} has an empty space"));
            }
            match &a.path {
                LecPath::Null => {}
                LecPath::Complete(p) => {
                    if p.first() != Some(&self.owner) {
                        return Err(format!("entry {i} path does not start at the owner"));
                    }
                }
                LecPath::Truncated(p) => {
                    if p.first() != Some(&self.owner) {
                        return Err(format!("entry {i} path does not start at the owner"));
                    }
                    if p.len() < 2 {
                        return Err(format!("entry {i} has a degenerate truncated path"));
                    }
                }
            }
            for (j, b) in self.entries.iter().enumerate().skip(i + 1) {
                if !a.space.intersect(&b.space).is_empty() {
                    return Err(format!("entries {i} and {j} overlap"));
                }
                if a.path == b.path {
                    return Err(format!("entries {i} and {j} duplicate a path"));
                }
            }
        }
        Ok(())
    }
}

/// Wire messages. Spaces drive byte metering; paths ride along.
#[derive(Debug, Clone)]
pub enum FsdMessage {
    /// Broadcast: `origin`'s local path for `space` changed to `path`.
    PathUpdate {
        origin: DeviceId,
        space: HeaderSpace,
        path: LecPath,
    },
    /// Unicast to a rule's next hop: describe your paths over `space`.
    Request { space: HeaderSpace },
    /// Unicast back to the requester: one uniform piece of the request.
    Reply { space: HeaderSpace, path: LecPath },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct FsdCounts {
    pub broadcasts: u64,
    pub requests: u64,
    pub replies: u64,
}

/// Checks that an entry fits the distributable profile (exactly one plain
/// next hop) and returns it: `None` means local delivery at the owner.
fn entry_hop(
    topo: &Topology,
    device: DeviceId,
    e: &FibEntry,
) -> Result<Option<DeviceId>, FsdError> {
    let unsupported = |reason: &str| FsdError::UnsupportedRule {
        device: topo.name(device).to_string(),
        reason: reason.to_string(),
    };
    if e.cond.is_some() {
        return Err(unsupported("conditional next-hop"));
    }
    if e.group.members.len() != 1 {
        return Err(unsupported(&format!(
            "{} next hops; exactly one is distributable",
            e.group.members.len()
        )));
    }
    let m = &e.group.members[0];
    if !m.rewrite.is_identity() {
        return Err(unsupported("header rewrite"));
    }
    match m.target {
        HopTarget::Offnet => Err(unsupported("forwards off-network")),
        HopTarget::Device(d) if d == device => Ok(None),
        HopTarget::Device(d) => Ok(Some(d)),
    }
}

/// Follows the forwarding chain for `space` starting at `origin` and returns
/// the resulting path pieces: complete when a rule delivers locally or hands
/// off to its declared destination, truncated where a rule, a link, or
/// knowledge runs out. Revisiting a device is a forwarding loop.
fn chase(
    topo: &Topology,
    links: &LinkStateMap,
    fibs: &BTreeMap<DeviceId, Fib>,
    origin: DeviceId,
    space: &HeaderSpace,
) -> Result<Vec<(HeaderSpace, LecPath)>, FsdError> {
    let mut out = Vec::new();
    let mut stack = vec![(origin, space.clone(), vec![origin])];
    while let Some((dev, space, path)) = stack.pop() {
        let Some(fib) = fibs.get(&dev) else {
            out.push((space, truncated(path)));
            continue;
        };
        for (piece, entry) in fib.lookup(&space) {
            let Some(e) = entry else {
                out.push((piece, truncated(path.clone())));
                continue;
            };
            match entry_hop(topo, dev, e)? {
                None => out.push((piece, LecPath::Complete(path.clone()))),
                Some(n) if !links.is_up(dev, n) => {
                    out.push((piece, truncated(path.clone())));
                }
                Some(n) if e.dst == Some(n) => {
                    let mut p = path.clone();
                    p.push(n);
                    out.push((piece, LecPath::Complete(p)));
                }
                Some(n) => {
                    if path.contains(&n) || path.len() >= topo.device_count() {
                        return Err(FsdError::ForwardingLoop {
                            device: topo.name(n).to_string(),
                            space: piece.to_string(),
                        });
                    }
                    let mut p = path.clone();
                    p.push(n);
                    stack.push((n, piece, p));
                }
            }
        }
    }
    Ok(out)
}

/// Builds every device's LEC table from scratch on a stable FIB state.
///
/// Rules that deliver locally or hand off straight to their destination seed
/// announcements; announcements then extend paths upstream via match
/// intersection until nothing new appears. Ruled spaces left without a
/// complete path get their maximal known prefix, so later events downstream
/// can splice knowledge in. A data plane that revisits a device fails with a
/// loop report (the hop bound is the device count).
pub fn init_tables(
    topo: &Topology,
    links: &LinkStateMap,
    fibs: &BTreeMap<DeviceId, Fib>,
) -> Result<BTreeMap<DeviceId, LecTable>, FsdError> {
    let mut tables: BTreeMap<DeviceId, LecTable> = topo
        .device_ids()
        .map(|d| (d, LecTable::new(d)))
        .collect();
    let mut queue: VecDeque<(DeviceId, HeaderSpace, Vec<DeviceId>)> = VecDeque::new();
    for (&dev, fib) in fibs {
        for e in &fib.entries {
            match entry_hop(topo, dev, e)? {
                None => {
                    let path = vec![dev];
                    tables
                        .get_mut(&dev)
                        .unwrap()
                        .upsert(&e.space, LecPath::Complete(path.clone()));
                    queue.push_back((dev, e.space.clone(), path));
                }
                Some(n) if e.dst == Some(n) && links.is_up(dev, n) => {
                    let path = vec![dev, n];
                    tables
                        .get_mut(&dev)
                        .unwrap()
                        .upsert(&e.space, LecPath::Complete(path.clone()));
                    queue.push_back((dev, e.space.clone(), path));
                }
                _ => {}
            }
        }
    }
    while let Some((m, ps, path)) = queue.pop_front() {
        for &n in topo.in_neighbors(m) {
            if !links.is_up(n, m) {
                continue;
            }
            let Some(fib) = fibs.get(&n) else { continue };
            for e in &fib.entries {
                if entry_hop(topo, n, e)? != Some(m) {
                    continue;
                }
                let inter = e.space.intersect(&ps);
                if inter.is_empty() {
                    continue;
                }
                if path.contains(&n) || path.len() >= topo.device_count() {
                    return Err(FsdError::ForwardingLoop {
                        device: topo.name(n).to_string(),
                        space: inter.to_string(),
                    });
                }
                let mut ext = vec![n];
                ext.extend_from_slice(&path);
                // Only genuinely new knowledge propagates; this is the
                // termination argument.
                let known = tables[&n]
                    .entries
                    .iter()
                    .find(|t| t.path == LecPath::Complete(ext.clone()))
                    .map(|t| t.space.clone());
                let fresh = match known {
                    Some(k) => inter.subtract(&k),
                    None => inter,
                };
                if fresh.is_empty() {
                    continue;
                }
                tables
                    .get_mut(&n)
                    .unwrap()
                    .upsert(&fresh, LecPath::Complete(ext.clone()));
                queue.push_back((n, fresh, ext));
            }
        }
    }
    let width = topo.width();
    for (&dev, fib) in fibs {
        for e in &fib.entries {
            let rest = e.space.subtract(&tables[&dev].covered(width));
            if rest.is_empty() {
                continue;
            }
            for (s, p) in chase(topo, links, fibs, dev, &rest)? {
                tables.get_mut(&dev).unwrap().upsert(&s, p);
            }
        }
    }
    Ok(tables)
}

/// Semantic table content for convergence comparisons: the space mapped to
/// each concrete path. Explicit `Null` entries and uncovered space are the
/// same thing and are omitted (they are the complement of the rest).
fn semantic_map(t: &LecTable) -> BTreeMap<LecPath, HeaderSpace> {
    let mut m: BTreeMap<LecPath, HeaderSpace> = BTreeMap::new();
    for e in &t.entries {
        if e.path.is_null() {
            continue;
        }
        m.entry(e.path.clone())
            .and_modify(|s| *s = s.union(&e.space))
            .or_insert_with(|| e.space.clone());
    }
    m
}

/// True when both table sets carry the same knowledge: for every path value,
/// the space mapped to it agrees, device by device.
pub fn tables_semantically_equal(
    a: &BTreeMap<DeviceId, LecTable>,
    b: &BTreeMap<DeviceId, LecTable>,
) -> bool {
    let devices: std::collections::BTreeSet<DeviceId> =
        a.keys().chain(b.keys()).copied().collect();
    for d in devices {
        let empty = LecTable::new(d);
        let ma = semantic_map(a.get(&d).unwrap_or(&empty));
        let mb = semantic_map(b.get(&d).unwrap_or(&empty));
        if ma.len() != mb.len() {
            return false;
        }
        for (p, s) in &ma {
            match mb.get(p) {
                Some(t) if t.equal(s) => {}
                _ => return false,
            }
        }
    }
    true
}

/// The distribution protocol over one control plane's FIBs. Local events
/// (rule changes, link events) are applied by the driver; the returned
/// messages go through the simulation engine, which calls [`Protocol`]
/// handlers on delivery.
pub struct FsdSim {
    topo: Topology,
    links: LinkStateMap,
    fibs: BTreeMap<DeviceId, Fib>,
    tables: BTreeMap<DeviceId, LecTable>,
    /// Requested-but-unanswered space per (requester, next hop).
    outstanding: BTreeMap<(DeviceId, DeviceId), HeaderSpace>,
    counts: FsdCounts,
    loops: Vec<FsdError>,
}

impl FsdSim {
    pub fn new(
        topo: Topology,
        fibs: BTreeMap<DeviceId, Fib>,
        links: LinkStateMap,
    ) -> Result<Self, FsdError> {
        for fib in fibs.values() {
            fib.validate(&topo)?;
        }
        let tables = init_tables(&topo, &links, &fibs)?;
        Ok(FsdSim {
            topo,
            links,
            fibs,
            tables,
            outstanding: BTreeMap::new(),
            counts: FsdCounts::default(),
            loops: Vec::new(),
        })
    }

    pub fn topo(&self) -> &Topology {
        &self.topo
    }

    pub fn links(&self) -> &LinkStateMap {
        &self.links
    }

    pub fn fibs(&self) -> &BTreeMap<DeviceId, Fib> {
        &self.fibs
    }

    pub fn table(&self, device: DeviceId) -> &LecTable {
        &self.tables[&device]
    }

    pub fn tables(&self) -> &BTreeMap<DeviceId, LecTable> {
        &self.tables
    }

    pub fn counts(&self) -> FsdCounts {
        self.counts
    }

    pub fn take_counts(&mut self) -> FsdCounts {
        std::mem::take(&mut self.counts)
    }

    /// Exact partition of `space` with current path knowledge; uncovered
    /// space reports `Null`. Call at quiescence (the engine's gate enforces
    /// the contract).
    pub fn query(&self, device: DeviceId, space: &HeaderSpace) -> Vec<(HeaderSpace, LecPath)> {
        self.tables[&device].lookup(space)
    }

    /// Post-quiescence contract check: every request answered in full and no
    /// forwarding loop observed.
    pub fn check_settled(&self) -> Result<(), FsdError> {
        if let Some(err) = self.loops.first() {
            return Err(err.clone());
        }
        if let Some(((d, n), space)) = self.outstanding.iter().next() {
            return Err(FsdError::UncoveredRequest {
                device: self.topo.name(*d).to_string(),
                nexthop: self.topo.name(*n).to_string(),
                space: space.to_string(),
            });
        }
        Ok(())
    }

    /// Applies a FIB change at `device` and returns the protocol messages it
    /// triggers. Spaces that lost their rule (or whose behavior changed away
    /// from the surviving rule) go out as NULL path updates immediately; the
    /// new rule's match is re-learned — instantly when the next hop is the
    /// owner or the declared destination, through a request otherwise.
    pub fn on_rule_change(
        &mut self,
        device: DeviceId,
        update: &FibUpdate,
    ) -> Result<Vec<Outgoing<DeviceId, FsdMessage>>, FsdError> {
        let fib = self
            .fibs
            .get(&device)
            .cloned()
            .unwrap_or_else(|| Fib::new(device));
        let (next, changed) = apply_fib_update(&fib, &self.topo, update)?;
        let kept = match update {
            FibUpdate::Insert(e) | FibUpdate::Modify { entry: e, .. } => {
                entry_hop(&self.topo, device, e)?;
                Some(e.clone())
            }
            FibUpdate::Delete { .. } => None,
        };
        self.fibs.insert(device, next);
        if changed.is_empty() {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        let lost = match &kept {
            Some(e) => changed.subtract(&e.space),
            None => changed.clone(),
        };
        if !lost.is_empty() {
            self.tables
                .get_mut(&device)
                .unwrap()
                .upsert(&lost, LecPath::Null);
            out.extend(self.broadcast(device, &lost, LecPath::Null));
        }
        if let Some(e) = kept {
            out.extend(self.evaluate_rule(device, &e)?);
        }
        Ok(out)
    }

    /// Marks the directed link (or both directions of a cable) and lets every
    /// rule crossing it react: failures announce NULL paths, recoveries
    /// re-learn as if freshly installed.
    pub fn on_link_event(
        &mut self,
        a: DeviceId,
        b: DeviceId,
        up: bool,
        cable: bool,
    ) -> Result<Vec<Outgoing<DeviceId, FsdMessage>>, FsdError> {
        let mut dirs = vec![(a, b)];
        if cable {
            dirs.push((b, a));
        }
        for &(x, y) in &dirs {
            self.links.set_link(x, y, up);
        }
        let mut out = Vec::new();
        for (x, y) in dirs {
            let entries: Vec<FibEntry> = match self.fibs.get(&x) {
                Some(f) => f
                    .entries
                    .iter()
                    .filter(|e| entry_hop(&self.topo, x, e).ok().flatten() == Some(y))
                    .cloned()
                    .collect(),
                None => Vec::new(),
            };
            for e in entries {
                if up {
                    out.extend(self.evaluate_rule(x, &e)?);
                } else {
                    self.tables
                        .get_mut(&x)
                        .unwrap()
                        .upsert(&e.space, LecPath::Null);
                    out.extend(self.broadcast(x, &e.space, LecPath::Null));
                }
            }
        }
        Ok(out)
    }

    /// Splices `origin`'s announced path into every entry that both routes
    /// through `origin` and overlaps the announced space. Returns whether the
    /// table changed. Never produces messages: one broadcast is enough.
    pub fn on_path_update(
        &mut self,
        at: DeviceId,
        origin: DeviceId,
        space: &HeaderSpace,
        path: &LecPath,
    ) -> bool {
        if at == origin {
            return false;
        }
        let mut plans: Vec<(HeaderSpace, LecPath)> = Vec::new();
        let mut loops: Vec<FsdError> = Vec::new();
        for e in &self.tables[&at].entries {
            if !e.path.contains(origin) {
                continue;
            }
            let inter = e.space.intersect(space);
            if inter.is_empty() {
                continue;
            }
            let prefix: Vec<DeviceId> = e
                .path
                .devices()
                .iter()
                .copied()
                .take_while(|&d| d != origin)
                .collect();
            let new_path = match path {
                LecPath::Null => {
                    let mut p = prefix;
                    p.push(origin);
                    truncated(p)
                }
                LecPath::Complete(p) | LecPath::Truncated(p) => {
                    if p.iter().any(|d| prefix.contains(d)) {
                        loops.push(FsdError::ForwardingLoop {
                            device: self.topo.name(origin).to_string(),
                            space: inter.to_string(),
                        });
                        continue;
                    }
                    let mut joined = prefix;
                    joined.extend_from_slice(p);
                    if path.is_complete() {
                        LecPath::Complete(joined)
                    } else {
                        truncated(joined)
                    }
                }
            };
            if new_path != e.path {
                plans.push((inter, new_path));
            }
        }
        self.loops.extend(loops);
        let changed = !plans.is_empty();
        let table = self.tables.get_mut(&at).unwrap();
        for (s, p) in plans {
            table.upsert(&s, p);
        }
        changed
    }

    /// Immediate knowledge where possible, a request otherwise.
    fn evaluate_rule(
        &mut self,
        device: DeviceId,
        e: &FibEntry,
    ) -> Result<Vec<Outgoing<DeviceId, FsdMessage>>, FsdError> {
        let mut out = Vec::new();
        match entry_hop(&self.topo, device, e)? {
            None => {
                let p = LecPath::Complete(vec![device]);
                self.tables
                    .get_mut(&device)
                    .unwrap()
                    .upsert(&e.space, p.clone());
                out.extend(self.broadcast(device, &e.space, p));
            }
            Some(n) if !self.links.is_up(device, n) => {
                self.tables
                    .get_mut(&device)
                    .unwrap()
                    .upsert(&e.space, LecPath::Null);
                out.extend(self.broadcast(device, &e.space, LecPath::Null));
            }
            Some(n) if e.dst == Some(n) => {
                let p = LecPath::Complete(vec![device, n]);
                self.tables
                    .get_mut(&device)
                    .unwrap()
                    .upsert(&e.space, p.clone());
                out.extend(self.broadcast(device, &e.space, p));
            }
            Some(n) => {
                self.counts.requests += 1;
                let slot = self
                    .outstanding
                    .entry((device, n))
                    .or_insert_with(|| HeaderSpace::empty(e.space.width()));
                *slot = slot.union(&e.space);
                out.push(Outgoing {
                    from: device,
                    to: n,
                    msg: FsdMessage::Request {
                        space: e.space.clone(),
                    },
                });
            }
        }
        Ok(out)
    }

    fn broadcast(
        &mut self,
        from: DeviceId,
        space: &HeaderSpace,
        path: LecPath,
    ) -> Vec<Outgoing<DeviceId, FsdMessage>> {
        self.counts.broadcasts += 1;
        self.topo
            .device_ids()
            .filter(|&d| d != from)
            .map(|d| Outgoing {
                from,
                to: d,
                msg: FsdMessage::PathUpdate {
                    origin: from,
                    space: space.clone(),
                    path: path.clone(),
                },
            })
            .collect()
    }

    fn make_replies(
        &mut self,
        at: DeviceId,
        requester: DeviceId,
        space: &HeaderSpace,
    ) -> Vec<Outgoing<DeviceId, FsdMessage>> {
        let parts = self.tables[&at].lookup(space);
        self.counts.replies += parts.len() as u64;
        parts
            .into_iter()
            .map(|(s, p)| Outgoing {
                from: at,
                to: requester,
                msg: FsdMessage::Reply { space: s, path: p },
            })
            .collect()
    }

    fn install_reply(
        &mut self,
        at: DeviceId,
        from: DeviceId,
        space: &HeaderSpace,
        path: &LecPath,
    ) -> Vec<Outgoing<DeviceId, FsdMessage>> {
        if let Some(rem) = self.outstanding.get_mut(&(at, from)) {
            *rem = rem.subtract(space);
            if rem.is_empty() {
                self.outstanding.remove(&(at, from));
            }
        }
        // The rule may have changed while the request was in flight; only
        // pieces still routed through the replier over a live link install.
        let mut live = HeaderSpace::empty(space.width());
        if let Some(fib) = self.fibs.get(&at) {
            for (piece, e) in fib.lookup(space) {
                if let Some(e) = e {
                    if entry_hop(&self.topo, at, e).ok().flatten() == Some(from)
                        && self.links.is_up(at, from)
                    {
                        live = live.union(&piece);
                    }
                }
            }
        }
        if live.is_empty() {
            return Vec::new();
        }
        let spliced = match path {
            LecPath::Null => LecPath::Truncated(vec![at, from]),
            LecPath::Complete(p) | LecPath::Truncated(p) => {
                if p.contains(&at) {
                    self.loops.push(FsdError::ForwardingLoop {
                        device: self.topo.name(at).to_string(),
                        space: live.to_string(),
                    });
                    return Vec::new();
                }
                let mut joined = vec![at];
                joined.extend_from_slice(p);
                if path.is_complete() {
                    LecPath::Complete(joined)
                } else {
                    truncated(joined)
                }
            }
        };
        self.tables
            .get_mut(&at)
            .unwrap()
            .upsert(&live, spliced.clone());
        self.broadcast(at, &live, spliced)
    }
}

impl Protocol for FsdSim {
    type Addr = DeviceId;
    type Msg = FsdMessage;

    fn on_message(
        &mut self,
        to: DeviceId,
        from: DeviceId,
        msg: FsdMessage,
    ) -> Vec<Outgoing<DeviceId, FsdMessage>> {
        match msg {
            FsdMessage::PathUpdate {
                origin,
                space,
                path,
            } => {
                self.on_path_update(to, origin, &space, &path);
                Vec::new()
            }
            FsdMessage::Request { space } => self.make_replies(to, from, &space),
            FsdMessage::Reply { space, path } => self.install_reply(to, from, &space, &path),
        }
    }

    fn msg_words(msg: &FsdMessage) -> usize {
        match msg {
            FsdMessage::PathUpdate { space, .. }
            | FsdMessage::Request { space }
            | FsdMessage::Reply { space, .. } => space.word_count(),
        }
    }
}

impl Snapshot for FsdSim {
    fn snapshot(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (d, t) in &self.tables {
            let rows: Vec<serde_json::Value> = t
                .entries
                .iter()
                .map(|e| {
                    let names = |p: &[DeviceId]| {
                        p.iter()
                            .map(|&x| self.topo.name(x).to_string())
                            .collect::<Vec<_>>()
                    };
                    match &e.path {
                        LecPath::Null => json!({
                            "space": e.space.to_string(),
                            "path": serde_json::Value::Null,
                        }),
                        LecPath::Complete(p) => json!({
                            "space": e.space.to_string(),
                            "path": names(p),
                            "complete": true,
                        }),
                        LecPath::Truncated(p) => json!({
                            "space": e.space.to_string(),
                            "path": names(p),
                            "complete": false,
                        }),
                    }
                })
                .collect();
            map.insert(self.topo.name(*d).to_string(), rows.into());
        }
        map.into()
    }
}
