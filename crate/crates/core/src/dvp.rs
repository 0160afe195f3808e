//! The distributed verification protocol over a DV-Network.
//!
//! Every DV-node x maintains its violation space `H(x)`: the headers that,
//! entering the node's device in the node's path-state, can *not* complete
//! the required path. Sinks are trivially satisfied (`H ≡ ∅`); elsewhere H
//! is recomputed locally from the device's FIB and the recorded H of each
//! downstream DV-node:
//!
//!   - an uncovered header (no FIB entry) violates — implicit drop;
//!   - a next-hop member violates a header when its link is down, it leaves
//!     the network (off-net or delivery short of a sink), it steps off the
//!     DV-Network, or the rewritten header lies in the recorded downstream
//!     violation space (the inverse image pulls the record back through the
//!     member's rewrite);
//!   - an ALL group violates on the union of member violations, an ANY
//!     group on their intersection (strict mode folds ANY into ALL);
//!   - a conditional entry must be programmed onto its primary while the
//!     primary link is up and onto its backup otherwise;
//!   - a configured coverage set `C` must be a subset of the programmed
//!     next-hop devices, else the whole entry space violates.
//!
//! State distributes by symmetric-difference deltas: when H changes, the
//! node sends `old Δ new` to every structural upstream, which replays it
//! onto its record of the sender with another symmetric difference and
//! recomputes. Replay commutes, so on a DAG any delivery order converges to
//! the same fixpoint; on a correct data plane the initial wave is silent.
//! The verdict reads the root: `H(root) ∩ query` violates, the rest is
//! verified. It is only meaningful at quiescence, which the simulation
//! engine enforces.

use std::collections::{BTreeMap, BTreeSet};

use crate::datamodel::{
    apply_fib_update, DataModelError, DeviceId, Fib, FibUpdate, HopTarget, GroupMode,
    LinkStateMap, NextHop, Topology,
};
use crate::dvnet::{DvNetwork, NodeId};
use crate::hsa::HeaderSpace;
use crate::simharness::{Outgoing, Protocol, Snapshot};

#[derive(Debug, Clone, Default)]
pub struct DvpConfig {
    /// Treat ANY groups like ALL groups (every member must work).
    pub strict_any: bool,
    /// Per-device required next-hop coverage; devices absent here are
    /// unconstrained.
    pub coverage: BTreeMap<DeviceId, BTreeSet<DeviceId>>,
}

/// The wire message: a symmetric-difference update of the sender's H.
#[derive(Debug, Clone)]
pub struct DeltaMessage {
    pub delta: HeaderSpace,
}

#[derive(Debug, Clone)]
struct NodeState {
    h: HeaderSpace,
    /// Recorded downstream violation spaces, one per structural out-edge.
    records: BTreeMap<NodeId, HeaderSpace>,
}

/// One verification protocol instance: a DV-Network plus the participating
/// devices' FIB view for a single requirement.
pub struct DvpSim {
    net: DvNetwork,
    topo: Topology,
    links: LinkStateMap,
    fibs: BTreeMap<DeviceId, Fib>,
    cfg: DvpConfig,
    states: Vec<NodeState>,
    /// Per node: structural successor node by device, for member lookup.
    succ_by_dev: Vec<BTreeMap<DeviceId, NodeId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub verified: HeaderSpace,
    pub violated: HeaderSpace,
}

impl DvpSim {
    pub fn new(
        net: DvNetwork,
        topo: Topology,
        fibs: BTreeMap<DeviceId, Fib>,
        links: LinkStateMap,
        cfg: DvpConfig,
    ) -> Self {
        let width = topo.width();
        let succ_by_dev: Vec<BTreeMap<DeviceId, NodeId>> = net
            .ids()
            .map(|x| net.out(x).iter().map(|&y| (net.node(y).device, y)).collect())
            .collect();
        let states = net
            .ids()
            .map(|x| NodeState {
                h: HeaderSpace::empty(width),
                records: net
                    .out(x)
                    .iter()
                    .map(|&y| (y, HeaderSpace::empty(width)))
                    .collect(),
            })
            .collect();
        DvpSim {
            net,
            topo,
            links,
            fibs,
            cfg,
            states,
            succ_by_dev,
        }
    }

    pub fn net(&self) -> &DvNetwork {
        &self.net
    }

    pub fn node_h(&self, x: NodeId) -> &HeaderSpace {
        &self.states[x.index()].h
    }

    pub fn record(&self, x: NodeId, downstream: NodeId) -> Option<&HeaderSpace> {
        self.states[x.index()].records.get(&downstream)
    }

    pub fn links(&self) -> &LinkStateMap {
        &self.links
    }

    pub fn fib(&self, device: DeviceId) -> Option<&Fib> {
        self.fibs.get(&device)
    }

    pub fn node_label(&self, x: NodeId) -> String {
        let n = self.net.node(x);
        format!("{}#{}", self.topo.name(n.device), n.state)
    }

    /// Bytes of recorded downstream state held at each node.
    pub fn record_bytes(&self, bytes_per_word: u64) -> BTreeMap<String, u64> {
        self.net
            .ids()
            .map(|x| {
                let words: usize = self.states[x.index()]
                    .records
                    .values()
                    .map(|h| h.word_count())
                    .sum();
                (self.node_label(x), words as u64 * bytes_per_word)
            })
            .collect()
    }

    /// First evaluation wave. Sinks stay silent; every other node computes
    /// its H from default-empty records, oldest (sink-adjacent) first. On a
    /// correct data plane every H stays empty and no message is emitted.
    pub fn init(&mut self) -> Vec<Outgoing<NodeId, DeltaMessage>> {
        let order: Vec<NodeId> = self.net.topo_order().iter().rev().copied().collect();
        let mut outs = Vec::new();
        for x in order {
            if !self.net.node(x).is_sink {
                outs.extend(self.refresh(x));
            }
        }
        outs
    }

    /// Replays a downstream delta onto the record and recomputes.
    pub fn on_delta(
        &mut self,
        x: NodeId,
        from: NodeId,
        delta: &HeaderSpace,
    ) -> Vec<Outgoing<NodeId, DeltaMessage>> {
        let rec = self.states[x.index()]
            .records
            .get_mut(&from)
            .expect("delta from a non-downstream node");
        *rec = rec.symmetric_difference(delta);
        self.refresh(x)
    }

    /// Applies a FIB update on a device and re-evaluates its nodes.
    pub fn on_fib_update(
        &mut self,
        device: DeviceId,
        update: &FibUpdate,
    ) -> Result<Vec<Outgoing<NodeId, DeltaMessage>>, DataModelError> {
        let cur = self
            .fibs
            .get(&device)
            .cloned()
            .unwrap_or_else(|| Fib::new(device));
        let (next, _changed) = apply_fib_update(&cur, &self.topo, update)?;
        self.fibs.insert(device, next);
        Ok(self.refresh_device(device))
    }

    /// Marks a link (or both directions of a cable) up or down and
    /// re-evaluates the affected devices' nodes.
    pub fn on_link_event(
        &mut self,
        a: DeviceId,
        b: DeviceId,
        up: bool,
        cable: bool,
    ) -> Vec<Outgoing<NodeId, DeltaMessage>> {
        let mut outs = Vec::new();
        if cable {
            self.links.set_cable(a, b, up);
            outs.extend(self.refresh_device(a));
            outs.extend(self.refresh_device(b));
        } else {
            self.links.set_link(a, b, up);
            outs.extend(self.refresh_device(a));
        }
        outs
    }

    fn refresh_device(&mut self, device: DeviceId) -> Vec<Outgoing<NodeId, DeltaMessage>> {
        let nodes: Vec<NodeId> = self
            .net
            .project(device)
            .nodes
            .iter()
            .map(|&(_, id)| id)
            .collect();
        let mut outs = Vec::new();
        for x in nodes {
            if !self.net.node(x).is_sink {
                outs.extend(self.refresh(x));
            }
        }
        outs
    }

    /// Recomputes H(x); on change, sends `old Δ new` to all upstreams.
    fn refresh(&mut self, x: NodeId) -> Vec<Outgoing<NodeId, DeltaMessage>> {
        let new = self.recompute(x);
        let old = &self.states[x.index()].h;
        if new.equal(old) {
            return Vec::new();
        }
        let delta = old.symmetric_difference(&new);
        self.states[x.index()].h = new;
        self.net
            .ins(x)
            .iter()
            .map(|&up| Outgoing {
                from: x,
                to: up,
                msg: DeltaMessage {
                    delta: delta.clone(),
                },
            })
            .collect()
    }

    fn recompute(&self, x: NodeId) -> HeaderSpace {
        let width = self.topo.width();
        if self.net.node(x).is_sink {
            return HeaderSpace::empty(width);
        }
        if self.net.is_degenerate() {
            // No satisfying walk exists at all.
            return HeaderSpace::full(width);
        }
        let device = self.net.node(x).device;
        let empty_fib = Fib::new(device);
        let fib = self.fibs.get(&device).unwrap_or(&empty_fib);
        let full = HeaderSpace::full(width);
        let mut h = HeaderSpace::empty(width);
        for (piece, entry) in fib.lookup(&full) {
            let Some(entry) = entry else {
                h = h.union(&piece);
                continue;
            };
            if let Some(cond) = &entry.cond {
                let expected = if self.links.is_up(device, cond.primary) {
                    cond.primary
                } else {
                    cond.backup
                };
                if entry.group.member_devices() != vec![expected] {
                    h = h.union(&piece);
                    continue;
                }
            }
            if let Some(cov) = self.cfg.coverage.get(&device) {
                let programmed: BTreeSet<DeviceId> =
                    entry.group.member_devices().into_iter().collect();
                if !cov.is_subset(&programmed) {
                    h = h.union(&piece);
                    continue;
                }
            }
            if entry.group.members.is_empty() {
                h = h.union(&piece);
                continue;
            }
            let member_v: Vec<HeaderSpace> = entry
                .group
                .members
                .iter()
                .map(|m| self.member_violation(x, &piece, m))
                .collect();
            let all_must_work = match entry.group.mode {
                GroupMode::All => true,
                GroupMode::Any => self.cfg.strict_any,
            };
            let combined = if all_must_work {
                member_v
                    .iter()
                    .fold(HeaderSpace::empty(width), |acc, v| acc.union(v))
            } else {
                member_v
                    .iter()
                    .fold(piece.clone(), |acc, v| acc.intersect(v))
            };
            h = h.union(&combined);
        }
        h
    }

    /// The subset of `piece` that member `m` fails to carry to a satisfying
    /// continuation, as seen from node x's records.
    fn member_violation(&self, x: NodeId, piece: &HeaderSpace, m: &NextHop) -> HeaderSpace {
        let device = self.net.node(x).device;
        let target = match m.target {
            // Off-net forwarding leaves the verified network: nothing
            // downstream can complete the path.
            HopTarget::Offnet => return piece.clone(),
            // Local delivery short of a sink ends the walk unaccepted.
            HopTarget::Device(d) if d == device => return piece.clone(),
            HopTarget::Device(d) => d,
        };
        if !self.links.is_up(device, target) {
            return piece.clone();
        }
        match self.succ_by_dev[x.index()].get(&target) {
            // The hop exists in the topology but steps off the DV-Network:
            // no satisfying continuation from there.
            None => piece.clone(),
            Some(&y) => {
                let rec = &self.states[x.index()].records[&y];
                piece.intersect(&rec.inverse_image(&m.rewrite))
            }
        }
    }

    /// Splits `query` into verified and violated parts by the root's H.
    /// Call at quiescence (see [`crate::simharness::Engine::when_quiescent`]).
    pub fn verdict(&self, query: &HeaderSpace) -> Verdict {
        let violated = self.states[self.net.root().index()].h.intersect(query);
        Verdict {
            verified: query.subtract(&violated),
            violated,
        }
    }

    /// The purely-local contract of a node: its device's FIB must map every
    /// header to exactly the node's structural successor devices (or the
    /// configured coverage). On loop-free networks the conjunction of these
    /// local checks implies full verification, with no distribution at all.
    pub fn local_contract(&self, x: NodeId) -> bool {
        if self.net.node(x).is_sink {
            return true;
        }
        let device = self.net.node(x).device;
        let expected: BTreeSet<DeviceId> = match self.cfg.coverage.get(&device) {
            Some(c) => c.clone(),
            None => self.succ_by_dev[x.index()].keys().copied().collect(),
        };
        let empty_fib = Fib::new(device);
        let fib = self.fibs.get(&device).unwrap_or(&empty_fib);
        let full = HeaderSpace::full(self.topo.width());
        for (_, entry) in fib.lookup(&full) {
            let Some(entry) = entry else {
                return false;
            };
            let programmed: BTreeSet<DeviceId> =
                entry.group.member_devices().into_iter().collect();
            if programmed != expected {
                return false;
            }
        }
        true
    }

    pub fn local_contract_all(&self) -> bool {
        self.net.ids().all(|x| self.local_contract(x))
    }
}

impl Protocol for DvpSim {
    type Addr = NodeId;
    type Msg = DeltaMessage;

    fn on_message(
        &mut self,
        to: NodeId,
        from: NodeId,
        msg: DeltaMessage,
    ) -> Vec<Outgoing<NodeId, DeltaMessage>> {
        self.on_delta(to, from, &msg.delta)
    }

    fn msg_words(msg: &DeltaMessage) -> usize {
        msg.delta.word_count()
    }
}

impl Snapshot for DvpSim {
    fn snapshot(&self) -> serde_json::Value {
        let map: BTreeMap<String, String> = self
            .net
            .ids()
            .map(|x| (self.node_label(x), self.states[x.index()].h.to_string()))
            .collect();
        serde_json::to_value(map).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Conditional, FibEntry, NextHopGroup};
    use crate::dvnet::build_product;
    use crate::hsa::{FieldLayout, HeaderRewrite};
    use crate::reqlang::{compile, parse_requirement, resolve_labels, DEFAULT_STATE_BUDGET};
    use crate::simharness::{DeliveryMode, Engine};

    fn layout() -> FieldLayout {
        FieldLayout::new(8).unwrap()
    }

    fn line_topo() -> (Topology, Vec<DeviceId>) {
        let mut t = Topology::new(layout());
        let s = t.add_device("S", &[]).unwrap();
        let a = t.add_device("A", &[]).unwrap();
        let d = t.add_device("D", &[]).unwrap();
        t.add_link(s, a).unwrap();
        t.add_link(a, d).unwrap();
        (t, vec![s, a, d])
    }

    fn net_for(topo: &Topology, req_text: &str) -> DvNetwork {
        let req = parse_requirement(req_text).unwrap();
        let resolved = resolve_labels(&req, topo).unwrap();
        let dfa = compile(&resolved, topo, DEFAULT_STATE_BUDGET).unwrap();
        build_product(topo, &dfa, resolved.sources[0], DEFAULT_STATE_BUDGET).unwrap()
    }

    fn fwd(space: &str, to: DeviceId, topo: &Topology) -> FibEntry {
        FibEntry {
            space: HeaderSpace::parse(space, topo.layout()).unwrap(),
            group: NextHopGroup::single(
                HopTarget::Device(to),
                HeaderRewrite::identity(topo.width()),
            ),
            cond: None,
            dst: None,
        }
    }

    fn fib_of(owner: DeviceId, entries: Vec<FibEntry>) -> (DeviceId, Fib) {
        (owner, Fib { owner, entries })
    }

    #[test]
    fn correct_line_is_silent_and_verified() {
        let (topo, ids) = line_topo();
        let (s, a, d) = (ids[0], ids[1], ids[2]);
        let net = net_for(&topo, "([S]: any) -> .*[D]");
        let fibs = BTreeMap::from([
            fib_of(s, vec![fwd("********", a, &topo)]),
            fib_of(a, vec![fwd("********", d, &topo)]),
        ]);
        let mut sim = DvpSim::new(net, topo.clone(), fibs, LinkStateMap::new(), DvpConfig::default());
        let outs = sim.init();
        assert!(outs.is_empty(), "correct data plane must be silent");
        let full = HeaderSpace::full(8);
        let v = sim.verdict(&full);
        assert!(v.violated.is_empty());
        assert!(v.verified.equal(&full));
    }

    #[test]
    fn broken_hop_detected_then_repaired() {
        let (topo, ids) = line_topo();
        let (s, a, d) = (ids[0], ids[1], ids[2]);
        let net = net_for(&topo, "([S]: any) -> .*[D]");
        // A forwards only headers starting with 0; 1******* is dropped.
        let fibs = BTreeMap::from([
            fib_of(s, vec![fwd("********", a, &topo)]),
            fib_of(a, vec![fwd("0*******", d, &topo)]),
        ]);
        let sim = DvpSim::new(net, topo.clone(), fibs, LinkStateMap::new(), DvpConfig::default());
        let mut eng = Engine::new(sim, DeliveryMode::Fifo, 1, 2);
        let outs = eng.proto.init();
        eng.inject(outs);
        let phase = eng.run_to_quiescence("init", 100).unwrap();
        // One delta: the A-node reports 1******* upstream to the S-node.
        assert_eq!(phase.messages, 1);
        let bad = HeaderSpace::parse("1*******", topo.layout()).unwrap();
        let v = eng
            .when_quiescent(|p| p.verdict(&HeaderSpace::full(8)))
            .unwrap();
        assert!(v.violated.equal(&bad));

        // Repair: cover the missing half. The delta retraces the same hop.
        let outs = eng
            .proto
            .on_fib_update(a, &FibUpdate::Insert(fwd("1*******", d, &topo)))
            .unwrap();
        eng.inject(outs);
        let phase = eng.run_to_quiescence("repair", 100).unwrap();
        assert_eq!(phase.messages, 1);
        let v = eng
            .when_quiescent(|p| p.verdict(&HeaderSpace::full(8)))
            .unwrap();
        assert!(v.violated.is_empty());
    }

    #[test]
    fn rewrite_violations_pull_back_through_preimage() {
        let (topo, ids) = line_topo();
        let (s, a, d) = (ids[0], ids[1], ids[2]);
        let net = net_for(&topo, "([S]: any) -> .*[D]");
        // S rewrites the top bit to 1; A only forwards 1*******. Every
        // header S emits reaches D, so nothing violates even though A alone
        // would drop half the space.
        let rw = HeaderRewrite::parse_pattern("1*******").unwrap();
        let s_entry = FibEntry {
            space: HeaderSpace::full(8),
            group: NextHopGroup::single(HopTarget::Device(a), rw),
            cond: None,
            dst: None,
        };
        let fibs = BTreeMap::from([
            (s, Fib { owner: s, entries: vec![s_entry] }),
            fib_of(a, vec![fwd("1*******", d, &topo)]),
        ]);
        let sim = DvpSim::new(net, topo.clone(), fibs, LinkStateMap::new(), DvpConfig::default());
        let mut eng = Engine::new(sim, DeliveryMode::Fifo, 1, 2);
        let outs = eng.proto.init();
        eng.inject(outs);
        eng.run_to_quiescence("init", 100).unwrap();
        // A's own node still carries H = 0*******; the root sees none of it.
        let v = eng
            .when_quiescent(|p| p.verdict(&HeaderSpace::full(8)))
            .unwrap();
        assert!(v.violated.is_empty(), "violated: {}", v.violated);
    }

    fn diamond() -> (Topology, Vec<DeviceId>) {
        let mut t = Topology::new(layout());
        let s = t.add_device("S", &[]).unwrap();
        let a = t.add_device("A", &[]).unwrap();
        let b = t.add_device("B", &[]).unwrap();
        let d = t.add_device("D", &[]).unwrap();
        t.add_link(s, a).unwrap();
        t.add_link(s, b).unwrap();
        t.add_link(a, d).unwrap();
        t.add_link(b, d).unwrap();
        (t, vec![s, a, b, d])
    }

    #[test]
    fn all_vs_any_vs_strict_any() {
        let (topo, ids) = diamond();
        let (s, a, b, d) = (ids[0], ids[1], ids[2], ids[3]);
        // A delivers; B has no FIB and drops everything.
        let run = |mode: GroupMode, strict: bool| {
            let net = net_for(&topo, "([S]: any) -> .*[D]");
            let group = NextHopGroup {
                mode,
                members: vec![
                    NextHop {
                        target: HopTarget::Device(a),
                        rewrite: HeaderRewrite::identity(8),
                    },
                    NextHop {
                        target: HopTarget::Device(b),
                        rewrite: HeaderRewrite::identity(8),
                    },
                ],
            };
            let s_entry = FibEntry {
                space: HeaderSpace::full(8),
                group,
                cond: None,
                dst: None,
            };
            let fibs = BTreeMap::from([
                (s, Fib { owner: s, entries: vec![s_entry] }),
                fib_of(a, vec![fwd("********", d, &topo)]),
            ]);
            let cfg = DvpConfig { strict_any: strict, ..DvpConfig::default() };
            let mut sim = DvpSim::new(net, topo.clone(), fibs, LinkStateMap::new(), cfg);
            let outs = sim.init();
            let mut eng = Engine::new(sim, DeliveryMode::Fifo, 1, 2);
            eng.inject(outs);
            eng.run_to_quiescence("init", 100).unwrap();
            eng.when_quiescent(|p| p.verdict(&HeaderSpace::full(8)))
                .unwrap()
        };
        // ALL: B's total drop taints everything.
        assert!(run(GroupMode::All, false).verified.is_empty());
        // ANY (permissive): A's good path suffices.
        assert!(run(GroupMode::Any, false).violated.is_empty());
        // ANY under strict mode behaves like ALL.
        assert!(run(GroupMode::Any, true).verified.is_empty());
    }

    #[test]
    fn conditional_entry_follows_link_state() {
        let (topo, ids) = diamond();
        let (s, a, b, d) = (ids[0], ids[1], ids[2], ids[3]);
        let net = net_for(&topo, "([S]: any) -> .*[D]");
        let cond_entry = |member: DeviceId| FibEntry {
            space: HeaderSpace::full(8),
            group: NextHopGroup::single(
                HopTarget::Device(member),
                HeaderRewrite::identity(8),
            ),
            cond: Some(Conditional { primary: a, backup: b }),
            dst: None,
        };
        let fibs = BTreeMap::from([
            (s, Fib { owner: s, entries: vec![cond_entry(a)] }),
            fib_of(a, vec![fwd("********", d, &topo)]),
            fib_of(b, vec![fwd("********", d, &topo)]),
        ]);
        let mut sim = DvpSim::new(
            net,
            topo.clone(),
            fibs,
            LinkStateMap::new(),
            DvpConfig::default(),
        );
        let outs = sim.init();
        assert!(outs.is_empty());
        assert!(sim.verdict(&HeaderSpace::full(8)).violated.is_empty());

        // Primary link fails but the FIB still points at the primary: the
        // conditional contract is broken until the backup is programmed.
        let outs = sim.on_link_event(s, a, false, false);
        assert!(outs.is_empty(), "root has no upstream to notify");
        assert!(sim.verdict(&HeaderSpace::full(8)).verified.is_empty());

        let repair = FibUpdate::Modify {
            space: HeaderSpace::full(8),
            entry: cond_entry(b),
        };
        sim.on_fib_update(s, &repair).unwrap();
        assert!(sim.verdict(&HeaderSpace::full(8)).violated.is_empty());
    }

    #[test]
    fn coverage_contract_requires_subset() {
        let (topo, ids) = diamond();
        let (s, a, d) = (ids[0], ids[1], ids[3]);
        let net = net_for(&topo, "([S]: any) -> .*[D]");
        let fibs = BTreeMap::from([
            fib_of(s, vec![fwd("********", a, &topo)]),
            fib_of(a, vec![fwd("********", d, &topo)]),
        ]);
        // Requiring coverage {A} passes; requiring {A, B} does not, even
        // though the lone programmed path works.
        for (cov, ok) in [(vec![a], true), (vec![a, ids[2]], false)] {
            let cfg = DvpConfig {
                strict_any: false,
                coverage: BTreeMap::from([(s, cov.into_iter().collect())]),
            };
            let mut sim =
                DvpSim::new(net.clone(), topo.clone(), fibs.clone(), LinkStateMap::new(), cfg);
            sim.init();
            let v = sim.verdict(&HeaderSpace::full(8));
            assert_eq!(v.violated.is_empty(), ok);
        }
    }

    #[test]
    fn local_contract_equality() {
        let (topo, ids) = diamond();
        let (s, a, b, d) = (ids[0], ids[1], ids[2], ids[3]);
        let net = net_for(&topo, "([S]: any) -> .*[D]");
        let both = NextHopGroup {
            mode: GroupMode::All,
            members: vec![
                NextHop { target: HopTarget::Device(a), rewrite: HeaderRewrite::identity(8) },
                NextHop { target: HopTarget::Device(b), rewrite: HeaderRewrite::identity(8) },
            ],
        };
        let full_entry = |g: NextHopGroup| FibEntry {
            space: HeaderSpace::full(8),
            group: g,
            cond: None,
            dst: None,
        };
        let good = BTreeMap::from([
            (s, Fib { owner: s, entries: vec![full_entry(both.clone())] }),
            fib_of(a, vec![fwd("********", d, &topo)]),
            fib_of(b, vec![fwd("********", d, &topo)]),
        ]);
        let sim = DvpSim::new(net.clone(), topo.clone(), good, LinkStateMap::new(), DvpConfig::default());
        assert!(sim.local_contract_all());

        // Dropping B from S's members breaks S's local contract only.
        let partial = BTreeMap::from([
            fib_of(s, vec![fwd("********", a, &topo)]),
            fib_of(a, vec![fwd("********", d, &topo)]),
            fib_of(b, vec![fwd("********", d, &topo)]),
        ]);
        let sim2 = DvpSim::new(net, topo.clone(), partial, LinkStateMap::new(), DvpConfig::default());
        assert!(!sim2.local_contract_all());
        let s_node = sim2.net().root();
        assert!(!sim2.local_contract(s_node));
    }

    #[test]
    fn link_down_to_sink_violates_everything() {
        let (topo, ids) = line_topo();
        let (s, a, d) = (ids[0], ids[1], ids[2]);
        let net = net_for(&topo, "([S]: any) -> .*[D]");
        let fibs = BTreeMap::from([
            fib_of(s, vec![fwd("********", a, &topo)]),
            fib_of(a, vec![fwd("********", d, &topo)]),
        ]);
        let mut sim = DvpSim::new(net, topo.clone(), fibs, LinkStateMap::new(), DvpConfig::default());
        sim.init();
        let outs = sim.on_link_event(a, d, false, false);
        // The A-node's H flips to full and one delta flows upstream.
        assert_eq!(outs.len(), 1);
        let mut eng = Engine::new(sim, DeliveryMode::Fifo, 9, 2);
        eng.inject(outs);
        eng.run_to_quiescence("fail", 100).unwrap();
        let v = eng
            .when_quiescent(|p| p.verdict(&HeaderSpace::full(8)))
            .unwrap();
        assert!(v.verified.is_empty());
    }

    #[test]
    fn implicit_drop_and_offnet_both_violate() {
        let (topo, ids) = line_topo();
        let (s, a, _d) = (ids[0], ids[1], ids[2]);
        let net = net_for(&topo, "([S]: any) -> .*[D]");
        // S covers only 0*******; A throws its half off-net.
        let offnet = FibEntry {
            space: HeaderSpace::parse("0*******", topo.layout()).unwrap(),
            group: NextHopGroup::single(HopTarget::Offnet, HeaderRewrite::identity(8)),
            cond: None,
            dst: None,
        };
        let fibs = BTreeMap::from([
            fib_of(s, vec![fwd("0*******", a, &topo)]),
            (a, Fib { owner: a, entries: vec![offnet] }),
        ]);
        let mut sim = DvpSim::new(net, topo.clone(), fibs, LinkStateMap::new(), DvpConfig::default());
        let outs = sim.init();
        let mut eng = Engine::new(sim, DeliveryMode::Fifo, 1, 2);
        eng.inject(outs);
        eng.run_to_quiescence("init", 100).unwrap();
        let v = eng
            .when_quiescent(|p| p.verdict(&HeaderSpace::full(8)))
            .unwrap();
        assert!(v.verified.is_empty(), "both halves must violate");
    }

    #[test]
    fn delta_replay_is_order_independent() {
        let (topo, ids) = line_topo();
        let (s, a, d) = (ids[0], ids[1], ids[2]);
        let net = net_for(&topo, "([S]: any) -> .*[D]");
        let fibs = BTreeMap::from([
            fib_of(s, vec![fwd("********", a, &topo)]),
            fib_of(a, vec![fwd("********", d, &topo)]),
        ]);
        let mk = || {
            let mut sim = DvpSim::new(
                net.clone(),
                topo.clone(),
                fibs.clone(),
                LinkStateMap::new(),
                DvpConfig::default(),
            );
            sim.init();
            sim
        };
        let root = net.root();
        let a_node = net.out(root)[0];
        let d1 = HeaderSpace::parse("00******", topo.layout()).unwrap();
        let d2 = HeaderSpace::parse("0*******", topo.layout()).unwrap();

        let mut s1 = mk();
        s1.on_delta(root, a_node, &d1);
        s1.on_delta(root, a_node, &d2);
        let mut s2 = mk();
        s2.on_delta(root, a_node, &d2);
        s2.on_delta(root, a_node, &d1);
        assert!(s1.record(root, a_node).unwrap().equal(s2.record(root, a_node).unwrap()));
        assert!(s1.node_h(root).equal(s2.node_h(root)));
        // And replaying both again cancels back to the starting state.
        s1.on_delta(root, a_node, &d1);
        s1.on_delta(root, a_node, &d2);
        assert!(s1.record(root, a_node).unwrap().is_empty());
        assert!(s1.node_h(root).is_empty());
    }

    #[test]
    fn degenerate_network_violates_all() {
        let (topo, ids) = line_topo();
        let s = ids[0];
        // No walk from S can satisfy [S][D]: A sits between them.
        let req = parse_requirement("([S]: any) -> [S][D]").unwrap();
        let resolved = resolve_labels(&req, &topo).unwrap();
        let dfa = compile(&resolved, &topo, DEFAULT_STATE_BUDGET).unwrap();
        let net = build_product(&topo, &dfa, s, DEFAULT_STATE_BUDGET).unwrap();
        assert!(net.is_degenerate());
        let mut sim = DvpSim::new(net, topo.clone(), BTreeMap::new(), LinkStateMap::new(), DvpConfig::default());
        sim.init();
        let v = sim.verdict(&HeaderSpace::full(8));
        assert!(v.verified.is_empty());
    }

    #[test]
    fn repair_messages_cross_each_hop_once() {
        // S -> A -> B -> C -> D line; breaking C's rule ripples one delta
        // per hop back to the root: three messages.
        let mut t = Topology::new(layout());
        let names = ["S", "A", "B", "C", "D"];
        let ids: Vec<DeviceId> = names
            .iter()
            .map(|n| t.add_device(n, &[]).unwrap())
            .collect();
        for w in ids.windows(2) {
            t.add_link(w[0], w[1]).unwrap();
        }
        let net = net_for(&t, "([S]: any) -> .*[D]");
        let fibs: BTreeMap<DeviceId, Fib> = ids
            .windows(2)
            .map(|w| fib_of(w[0], vec![fwd("********", w[1], &t)]))
            .collect();
        let mut sim = DvpSim::new(net, t.clone(), fibs, LinkStateMap::new(), DvpConfig::default());
        let outs = sim.init();
        assert!(outs.is_empty());
        let c = ids[3];
        let mut eng = Engine::new(sim, DeliveryMode::Fifo, 5, 2);
        let outs = eng
            .proto
            .on_fib_update(c, &FibUpdate::Delete { space: HeaderSpace::full(8) })
            .unwrap();
        eng.inject(outs);
        let ph = eng.run_to_quiescence("break", 100).unwrap();
        assert_eq!(ph.messages, 3);
        let v = eng
            .when_quiescent(|p| p.verdict(&HeaderSpace::full(8)))
            .unwrap();
        assert!(v.verified.is_empty());
    }
}
