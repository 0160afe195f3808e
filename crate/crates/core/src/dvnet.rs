//! DV-Networks: the rooted DAGs distributed verification runs on.
//!
//! A DV-node is a (device, DFA-state) pair; the network is the product of the
//! topology with a requirement's path DFA, explored from the source. Stepping
//! the DFA happens on the device being *entered*, so a node's state encodes
//! the path prefix that reached it — two different ways of arriving at one
//! device become two DV-nodes. Accepting nodes are destinations: they are
//! sinks and absorb (their forwarding behavior is not examined further).
//! Nodes that cannot reach any sink are pruned; what remains must be acyclic
//! or the requirement is not convertible and the cycle is reported.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::datamodel::{DeviceId, Topology};
use crate::reqlang::PathDfa;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum DvNetError {
    #[error("requirement is not convertible: the product contains a cycle [{}]", .cycle.join(" -> "))]
    Cyclic { cycle: Vec<String> },
    #[error("DV-network exceeds the node budget of {budget}")]
    Budget { budget: usize },
}

/// Index of a DV-node within its network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
pub struct DvNode {
    pub device: DeviceId,
    pub state: u32,
    pub is_sink: bool,
}

/// A rooted DAG of DV-nodes. When the root itself is dead (no satisfying
/// path exists at all) the network is *degenerate*: a single root node, no
/// sinks; every packet violates there.
#[derive(Debug, Clone)]
pub struct DvNetwork {
    nodes: Vec<DvNode>,
    root: NodeId,
    sinks: Vec<NodeId>,
    /// Downstream edges: `out[x]` are the nodes x forwards toward.
    out_edges: Vec<Vec<NodeId>>,
    /// Upstream edges: who forwards through x.
    in_edges: Vec<Vec<NodeId>>,
    index: BTreeMap<(DeviceId, u32), NodeId>,
    /// Root-first topological order (empty for a degenerate network's sake:
    /// it still lists the root).
    topo_order: Vec<NodeId>,
    degenerate: bool,
}

impl DvNetwork {
    pub fn nodes(&self) -> &[DvNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &DvNode {
        &self.nodes[id.index()]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn sinks(&self) -> &[NodeId] {
        &self.sinks
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn out(&self, id: NodeId) -> &[NodeId] {
        &self.out_edges[id.index()]
    }

    pub fn ins(&self, id: NodeId) -> &[NodeId] {
        &self.in_edges[id.index()]
    }

    pub fn lookup(&self, device: DeviceId, state: u32) -> Option<NodeId> {
        self.index.get(&(device, state)).copied()
    }

    /// Root-first topological order.
    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo_order
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    /// The DV-nodes projected onto one device, with their states.
    pub fn project(&self, device: DeviceId) -> NodeProjection {
        let nodes = self
            .ids()
            .filter(|&id| self.node(id).device == device)
            .map(|id| (self.node(id).state, id))
            .collect();
        NodeProjection { device, nodes }
    }

    pub fn device_node_count(&self, device: DeviceId) -> usize {
        self.ids().filter(|&id| self.node(id).device == device).count()
    }

    /// All root-to-sink walks as device sequences (finite: the network is a
    /// DAG). Intended for small networks; used by equivalence tests and
    /// debugging dumps.
    pub fn walks(&self) -> Vec<Vec<DeviceId>> {
        let mut out = Vec::new();
        if self.degenerate {
            return out;
        }
        let mut path = vec![self.root];
        self.walk_rec(&mut path, &mut out);
        out.sort();
        out
    }

    fn walk_rec(&self, path: &mut Vec<NodeId>, out: &mut Vec<Vec<DeviceId>>) {
        let cur = *path.last().unwrap();
        if self.node(cur).is_sink {
            out.push(path.iter().map(|&n| self.node(n).device).collect());
            return;
        }
        for &next in self.out(cur) {
            path.push(next);
            self.walk_rec(path, out);
            path.pop();
        }
    }
}

#[derive(Debug, Clone)]
pub struct NodeProjection {
    pub device: DeviceId,
    /// (DFA state, node id) pairs, sorted by state.
    pub nodes: Vec<(u32, NodeId)>,
}

/// Builds the product DV-Network of `topo` and `dfa` from `source`. The path
/// includes the source device itself as its first symbol.
pub fn build_product(
    topo: &Topology,
    dfa: &PathDfa,
    source: DeviceId,
    budget: usize,
) -> Result<DvNetwork, DvNetError> {
    let s0 = dfa.step(dfa.init(), source.index());
    if dfa.is_dead(s0) {
        return Ok(degenerate(source, s0));
    }
    // Forward exploration. Sinks absorb: no expansion past accepting states.
    let mut index: BTreeMap<(DeviceId, u32), NodeId> = BTreeMap::new();
    let mut nodes: Vec<DvNode> = Vec::new();
    let mut out_edges: Vec<Vec<NodeId>> = Vec::new();
    let mut queue = VecDeque::new();
    let root_key = (source, s0);
    index.insert(root_key, NodeId(0));
    nodes.push(DvNode {
        device: source,
        state: s0,
        is_sink: dfa.is_accepting(s0),
    });
    out_edges.push(Vec::new());
    queue.push_back(NodeId(0));
    while let Some(id) = queue.pop_front() {
        let (device, state, sink) = {
            let n = &nodes[id.index()];
            (n.device, n.state, n.is_sink)
        };
        if sink {
            continue;
        }
        for &next_dev in topo.out_neighbors(device) {
            let t = dfa.step(state, next_dev.index());
            if dfa.is_dead(t) {
                continue;
            }
            let key = (next_dev, t);
            let target = match index.get(&key) {
                Some(&n) => n,
                None => {
                    if nodes.len() >= budget {
                        return Err(DvNetError::Budget { budget });
                    }
                    let n = NodeId(nodes.len() as u32);
                    index.insert(key, n);
                    nodes.push(DvNode {
                        device: next_dev,
                        state: t,
                        is_sink: dfa.is_accepting(t),
                    });
                    out_edges.push(Vec::new());
                    queue.push_back(n);
                    target_push(&mut out_edges[id.index()], n);
                    continue;
                }
            };
            target_push(&mut out_edges[id.index()], target);
        }
    }
    finish(topo, nodes, out_edges, NodeId(0))
}

fn target_push(edges: &mut Vec<NodeId>, n: NodeId) {
    if !edges.contains(&n) {
        edges.push(n);
    }
}

fn degenerate(source: DeviceId, state: u32) -> DvNetwork {
    DvNetwork {
        nodes: vec![DvNode {
            device: source,
            state,
            is_sink: false,
        }],
        root: NodeId(0),
        sinks: Vec::new(),
        out_edges: vec![Vec::new()],
        in_edges: vec![Vec::new()],
        index: BTreeMap::new(),
        topo_order: vec![NodeId(0)],
        degenerate: true,
    }
}

/// Prunes sink-unreachable nodes, checks acyclicity, and assembles the final
/// network. Pruning is sound: a node that cannot reach an accepting state
/// can never be part of a satisfying path, so treating it as nil preserves
/// the verification function.
fn finish(
    topo: &Topology,
    nodes: Vec<DvNode>,
    out_edges: Vec<Vec<NodeId>>,
    root: NodeId,
) -> Result<DvNetwork, DvNetError> {
    let n = nodes.len();
    // Backward reachability from sinks.
    let mut rev: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for (i, outs) in out_edges.iter().enumerate() {
        for &t in outs {
            rev[t.index()].push(NodeId(i as u32));
        }
    }
    let mut keep = vec![false; n];
    let mut queue: VecDeque<NodeId> = (0..n)
        .filter(|&i| nodes[i].is_sink)
        .map(|i| NodeId(i as u32))
        .collect();
    for &s in &queue {
        keep[s.index()] = true;
    }
    while let Some(s) = queue.pop_front() {
        for &p in &rev[s.index()] {
            if !keep[p.index()] {
                keep[p.index()] = true;
                queue.push_back(p);
            }
        }
    }
    if !keep[root.index()] {
        let r = &nodes[root.index()];
        return Ok(degenerate(r.device, r.state));
    }
    // Renumber kept nodes in first-seen order (stable).
    let mut renum: Vec<Option<NodeId>> = vec![None; n];
    let mut kept_nodes = Vec::new();
    let mut kept_out: Vec<Vec<NodeId>> = Vec::new();
    for i in 0..n {
        if keep[i] {
            renum[i] = Some(NodeId(kept_nodes.len() as u32));
            kept_nodes.push(nodes[i].clone());
            kept_out.push(Vec::new());
        }
    }
    for i in 0..n {
        if let Some(new_i) = renum[i] {
            for &t in &out_edges[i] {
                if let Some(new_t) = renum[t.index()] {
                    kept_out[new_i.index()].push(new_t);
                }
            }
            kept_out[new_i.index()].sort();
        }
    }
    let nodes = kept_nodes;
    let out_edges = kept_out;
    let root = renum[root.index()].unwrap();
    let m = nodes.len();
    let mut in_edges: Vec<Vec<NodeId>> = vec![Vec::new(); m];
    for (i, outs) in out_edges.iter().enumerate() {
        for &t in outs {
            in_edges[t.index()].push(NodeId(i as u32));
        }
    }
    for ins in &mut in_edges {
        ins.sort();
    }
    // Kahn's algorithm; leftovers witness a cycle.
    let mut indeg: Vec<usize> = in_edges.iter().map(|v| v.len()).collect();
    let mut order = Vec::with_capacity(m);
    let mut ready: VecDeque<NodeId> = (0..m)
        .filter(|&i| indeg[i] == 0)
        .map(|i| NodeId(i as u32))
        .collect();
    while let Some(x) = ready.pop_front() {
        order.push(x);
        for &t in &out_edges[x.index()] {
            indeg[t.index()] -= 1;
            if indeg[t.index()] == 0 {
                ready.push_back(t);
            }
        }
    }
    if order.len() != m {
        return Err(DvNetError::Cyclic {
            cycle: cycle_witness(topo, &nodes, &out_edges, &indeg),
        });
    }
    let sinks: Vec<NodeId> = (0..m as u32)
        .map(NodeId)
        .filter(|&i| nodes[i.index()].is_sink)
        .collect();
    let index = nodes
        .iter()
        .enumerate()
        .map(|(i, nd)| ((nd.device, nd.state), NodeId(i as u32)))
        .collect();
    Ok(DvNetwork {
        nodes,
        root,
        sinks,
        out_edges,
        in_edges,
        index,
        topo_order: order,
        degenerate: false,
    })
}

/// Walks within the un-sorted remainder until a node repeats.
fn cycle_witness(
    topo: &Topology,
    nodes: &[DvNode],
    out_edges: &[Vec<NodeId>],
    indeg: &[usize],
) -> Vec<String> {
    let start = (0..nodes.len())
        .find(|&i| indeg[i] > 0)
        .map(|i| NodeId(i as u32))
        .expect("cycle exists");
    let mut seen: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut path = vec![start];
    seen.insert(start, 0);
    loop {
        let cur = *path.last().unwrap();
        let next = out_edges[cur.index()]
            .iter()
            .copied()
            .find(|t| indeg[t.index()] > 0)
            .expect("cyclic nodes keep a cyclic successor");
        if let Some(&at) = seen.get(&next) {
            return path[at..]
                .iter()
                .map(|&n| {
                    let nd = &nodes[n.index()];
                    format!("{}#{}", topo.name(nd.device), nd.state)
                })
                .collect();
        }
        seen.insert(next, path.len());
        path.push(next);
    }
}

/// Builds the all-shortest-paths network from `source` to `dests`: each
/// device's state is its hop distance to the nearest destination and only
/// distance-decreasing links are kept. The dual of the product form: states
/// come from distance layers instead of DFA states.
pub fn build_shortest_path(
    topo: &Topology,
    source: DeviceId,
    dests: &[DeviceId],
) -> Result<DvNetwork, DvNetError> {
    let n = topo.device_count();
    let mut dist: Vec<Option<u32>> = vec![None; n];
    let mut queue = VecDeque::new();
    let mut sorted_dests: Vec<DeviceId> = dests.to_vec();
    sorted_dests.sort();
    sorted_dests.dedup();
    for &d in &sorted_dests {
        dist[d.index()] = Some(0);
        queue.push_back(d);
    }
    while let Some(v) = queue.pop_front() {
        let dv = dist[v.index()].unwrap();
        for &u in topo.in_neighbors(v) {
            if dist[u.index()].is_none() {
                dist[u.index()] = Some(dv + 1);
                queue.push_back(u);
            }
        }
    }
    let Some(_) = dist[source.index()] else {
        return Ok(degenerate(source, u32::MAX));
    };
    // Forward walk from the source over distance-decreasing links.
    let mut index: BTreeMap<(DeviceId, u32), NodeId> = BTreeMap::new();
    let mut nodes = Vec::new();
    let mut out_edges: Vec<Vec<NodeId>> = Vec::new();
    let mut bfs = VecDeque::new();
    let src_layer = dist[source.index()].unwrap();
    index.insert((source, src_layer), NodeId(0));
    nodes.push(DvNode {
        device: source,
        state: src_layer,
        is_sink: src_layer == 0,
    });
    out_edges.push(Vec::new());
    bfs.push_back(NodeId(0));
    while let Some(id) = bfs.pop_front() {
        let (device, layer, sink) = {
            let nd = &nodes[id.index()];
            (nd.device, nd.state, nd.is_sink)
        };
        if sink {
            continue;
        }
        for &v in topo.out_neighbors(device) {
            match dist[v.index()] {
                Some(dv) if dv + 1 == layer => {}
                _ => continue,
            }
            let key = (v, layer - 1);
            let target = match index.get(&key) {
                Some(&t) => t,
                None => {
                    let t = NodeId(nodes.len() as u32);
                    index.insert(key, t);
                    nodes.push(DvNode {
                        device: v,
                        state: layer - 1,
                        is_sink: layer - 1 == 0,
                    });
                    out_edges.push(Vec::new());
                    bfs.push_back(t);
                    t
                }
            };
            target_push(&mut out_edges[id.index()], target);
        }
    }
    finish(topo, nodes, out_edges, NodeId(0))
}
