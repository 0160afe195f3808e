//! Deterministic benchmark topologies and the sweep behind `dpv bench`.
//!
//! Four families: forwarding lines, n×n grids routed right/down, fat-trees
//! routed toward one edge switch, and seeded random DAGs. Each case carries
//! its own FIBs and a source/destination pair, and knows how to build a
//! converged reachability engine; the sweep then applies one standard
//! perturbation per case and reports both phases' metrics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::datamodel::{
    DeviceId, Fib, FibEntry, FibUpdate, HopTarget, LinkStateMap, NextHop, NextHopGroup, Topology,
};
use crate::dvnet::build_product;
use crate::dvp::{DvpConfig, DvpSim};
use crate::hsa::{FieldLayout, HeaderRewrite, HeaderSpace};
use crate::reqlang::{compile, ResolvedPath, ResolvedRequirement, DEFAULT_STATE_BUDGET};
use crate::simharness::{DeliveryMode, Engine, PhaseMetrics};

/// Header width shared by all generated cases.
const WIDTH: u16 = 8;

const MAX_TICKS: u64 = 1_000_000;

pub struct BenchCase {
    pub name: String,
    pub topo: Topology,
    pub fibs: BTreeMap<DeviceId, Fib>,
    pub source: DeviceId,
    pub dst: DeviceId,
}

fn any_entry(width: u16, hops: &[DeviceId]) -> FibEntry {
    let members = hops
        .iter()
        .map(|&h| NextHop {
            target: HopTarget::Device(h),
            rewrite: HeaderRewrite::identity(width),
        })
        .collect();
    FibEntry {
        space: HeaderSpace::full(width),
        group: NextHopGroup {
            mode: crate::datamodel::GroupMode::Any,
            members,
        },
        cond: None,
        dst: None,
    }
}

impl BenchCase {
    /// Builds the `.*[dst]` reachability engine from the case's source and
    /// runs it to initial convergence. Generated cases are DAGs, so the
    /// product always builds.
    pub fn engine(&self, mode: DeliveryMode, seed: u64) -> Engine<DvpSim> {
        let all: Vec<DeviceId> = self.topo.device_ids().collect();
        let resolved = ResolvedRequirement {
            sources: vec![self.source],
            space: HeaderSpace::full(self.topo.width()),
            path: ResolvedPath::Concat(
                Box::new(ResolvedPath::Star(Box::new(ResolvedPath::Devs(all)))),
                Box::new(ResolvedPath::Devs(vec![self.dst])),
            ),
        };
        let dfa = compile(&resolved, &self.topo, DEFAULT_STATE_BUDGET).expect("bench DFA compiles");
        let net = build_product(&self.topo, &dfa, self.source, DEFAULT_STATE_BUDGET)
            .expect("bench case builds an acyclic product");
        let sim = DvpSim::new(
            net,
            self.topo.clone(),
            self.fibs.clone(),
            LinkStateMap::new(),
            DvpConfig::default(),
        );
        let mut eng = Engine::new(sim, mode, seed, (self.topo.width() as u64 + 3) / 4);
        let outs = eng.proto.init();
        eng.inject(outs);
        eng.run_to_quiescence("init", MAX_TICKS)
            .expect("bench init converges");
        eng
    }
}

/// A forwarding line `n0 → n1 → … → n(n-1)`: every device routes the full
/// space forward and the last delivers locally.
pub fn line(n: usize) -> BenchCase {
    assert!(n >= 2);
    let mut topo = Topology::new(FieldLayout::new(WIDTH).unwrap());
    let ids: Vec<DeviceId> = (0..n)
        .map(|i| topo.add_device(&format!("n{i}"), &[]).unwrap())
        .collect();
    for w in ids.windows(2) {
        topo.add_link(w[0], w[1]).unwrap();
    }
    let mut fibs = BTreeMap::new();
    for (i, &d) in ids.iter().enumerate() {
        let hop = if i + 1 < n { ids[i + 1] } else { d };
        let mut fib = Fib::new(d);
        fib.entries.push(any_entry(WIDTH, &[hop]));
        fibs.insert(d, fib);
    }
    BenchCase {
        name: format!("line{n}"),
        topo,
        fibs,
        source: ids[0],
        dst: ids[n - 1],
    }
}

/// The line perturbation: device `i` drops its forwarding entry. Quiescing
/// afterwards takes exactly `i` messages — one per device between `i` and
/// the root.
pub fn line_break(case: &BenchCase, i: usize) -> (DeviceId, FibUpdate) {
    let d = case.topo.device(&format!("n{i}")).unwrap();
    (
        d,
        FibUpdate::Delete {
            space: HeaderSpace::full(case.topo.width()),
        },
    )
}

/// An n×n grid `g{row}x{col}` with links to the right and down: every
/// device forwards right when it can, else down, and the far corner
/// delivers.
pub fn grid(n: usize) -> BenchCase {
    assert!(n >= 2);
    let mut topo = Topology::new(FieldLayout::new(WIDTH).unwrap());
    let mut ids = vec![Vec::with_capacity(n); n];
    for r in 0..n {
        for c in 0..n {
            ids[r].push(topo.add_device(&format!("g{r}x{c}"), &[]).unwrap());
        }
    }
    for r in 0..n {
        for c in 0..n {
            if c + 1 < n {
                topo.add_link(ids[r][c], ids[r][c + 1]).unwrap();
            }
            if r + 1 < n {
                topo.add_link(ids[r][c], ids[r + 1][c]).unwrap();
            }
        }
    }
    let mut fibs = BTreeMap::new();
    for r in 0..n {
        for c in 0..n {
            let d = ids[r][c];
            let hop = if c + 1 < n {
                ids[r][c + 1]
            } else if r + 1 < n {
                ids[r + 1][c]
            } else {
                d
            };
            let mut fib = Fib::new(d);
            fib.entries.push(any_entry(WIDTH, &[hop]));
            fibs.insert(d, fib);
        }
    }
    BenchCase {
        name: format!("grid{n}x{n}"),
        topo,
        fibs,
        source: ids[0][0],
        dst: ids[n - 1][n - 1],
    }
}

/// Repoints an interior grid device from its right neighbor to its down
/// neighbor. Both directions reach the corner, so the verification result
/// is unchanged and the swap generates no traffic.
pub fn grid_flip(case: &BenchCase, n: usize, r: usize, c: usize) -> (DeviceId, FibUpdate) {
    assert!(r + 1 < n && c + 1 < n, "flips are defined on interior devices");
    let d = case.topo.device(&format!("g{r}x{c}")).unwrap();
    let down = case.topo.device(&format!("g{}x{c}", r + 1)).unwrap();
    let space = HeaderSpace::full(case.topo.width());
    (
        d,
        FibUpdate::Modify {
            space: space.clone(),
            entry: any_entry(WIDTH, &[down]),
        },
    )
}

/// A k-ary fat-tree — k/2 edge and k/2 aggregation switches per pod,
/// (k/2)² cores — wired with exactly the links a packet headed for
/// `edge0x0` may take: up inside every other pod, core down to a pod-0
/// aggregation switch, aggregation down to the destination edge. FIBs spray
/// over every legal hop. k = 4 gives 20 switches, k = 8 gives 80.
pub fn fat_tree(k: usize) -> BenchCase {
    assert!(k >= 2 && k % 2 == 0);
    let h = k / 2;
    let mut topo = Topology::new(FieldLayout::new(WIDTH).unwrap());
    let cores: Vec<Vec<DeviceId>> = (0..h)
        .map(|i| {
            (0..h)
                .map(|j| topo.add_device(&format!("core{i}x{j}"), &[]).unwrap())
                .collect()
        })
        .collect();
    let mut aggs = Vec::with_capacity(k);
    let mut edges = Vec::with_capacity(k);
    for p in 0..k {
        aggs.push(
            (0..h)
                .map(|i| topo.add_device(&format!("agg{p}x{i}"), &[]).unwrap())
                .collect::<Vec<_>>(),
        );
        edges.push(
            (0..h)
                .map(|i| topo.add_device(&format!("edge{p}x{i}"), &[]).unwrap())
                .collect::<Vec<_>>(),
        );
    }
    let dst = edges[0][0];
    for p in 0..k {
        for (i, &e) in edges[p].iter().enumerate() {
            if p == 0 && i == 0 {
                continue; // the destination edge only receives
            }
            for &a in &aggs[p] {
                topo.add_link(e, a).unwrap();
            }
        }
        for (i, &a) in aggs[p].iter().enumerate() {
            if p == 0 {
                topo.add_link(a, dst).unwrap();
            } else {
                for &core in &cores[i] {
                    topo.add_link(a, core).unwrap();
                }
            }
        }
    }
    for (i, row) in cores.iter().enumerate() {
        for &core in row {
            topo.add_link(core, aggs[0][i]).unwrap();
        }
    }
    let mut fibs = BTreeMap::new();
    for d in topo.device_ids() {
        let mut fib = Fib::new(d);
        if d == dst {
            fib.entries.push(any_entry(WIDTH, &[d]));
        } else {
            let hops: Vec<DeviceId> = topo.out_neighbors(d).to_vec();
            fib.entries.push(any_entry(WIDTH, &hops));
        }
        fibs.insert(d, fib);
    }
    BenchCase {
        name: format!("fattree{k}"),
        topo,
        fibs,
        source: edges[k - 1][0],
        dst,
    }
}

/// The fat-tree perturbation: the first core loses its link down into pod 0.
pub fn fat_tree_event(case: &BenchCase) -> (DeviceId, DeviceId) {
    (
        case.topo.device("core0x0").unwrap(),
        case.topo.device("agg0x0").unwrap(),
    )
}

/// A seeded random DAG over `n` devices: a guaranteed chain `r0 → … →
/// r(n-1)` plus extra forward links, ANY-spray FIBs, delivery at the last
/// device. Every walk strictly advances, so every walk reaches the
/// destination.
pub fn random_dag(n: usize, seed: u64) -> BenchCase {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut topo = Topology::new(FieldLayout::new(WIDTH).unwrap());
    let ids: Vec<DeviceId> = (0..n)
        .map(|i| topo.add_device(&format!("r{i}"), &[]).unwrap())
        .collect();
    for w in ids.windows(2) {
        topo.add_link(w[0], w[1]).unwrap();
    }
    for i in 0..n {
        for j in (i + 2)..n {
            if rng.gen_bool(0.3) {
                topo.add_link(ids[i], ids[j]).unwrap();
            }
        }
    }
    let mut fibs = BTreeMap::new();
    for (i, &d) in ids.iter().enumerate() {
        let mut fib = Fib::new(d);
        if i + 1 == n {
            fib.entries.push(any_entry(WIDTH, &[d]));
        } else {
            let hops: Vec<DeviceId> = topo.out_neighbors(d).to_vec();
            fib.entries.push(any_entry(WIDTH, &hops));
        }
        fibs.insert(d, fib);
    }
    BenchCase {
        name: format!("dag{n}s{seed}"),
        topo,
        fibs,
        source: ids[0],
        dst: ids[n - 1],
    }
}

/// The DAG perturbation: the middle device drops its entry.
pub fn dag_break(case: &BenchCase, n: usize) -> (DeviceId, FibUpdate) {
    let d = case.topo.device(&format!("r{}", n / 2)).unwrap();
    (
        d,
        FibUpdate::Delete {
            space: HeaderSpace::full(case.topo.width()),
        },
    )
}

/// The two-update reroute fixture: one path in use
/// (src → sw1 → sw3 → sw5 → dst) and a parallel unused segment
/// (sw2 → sw4 → dst), with the sw5 → sw4 crossover available.
pub fn case12() -> BenchCase {
    let mut topo = Topology::new(FieldLayout::new(WIDTH).unwrap());
    let names = ["src", "sw1", "sw2", "sw3", "sw4", "sw5", "dst"];
    let id: BTreeMap<&str, DeviceId> = names
        .iter()
        .map(|n| (*n, topo.add_device(n, &[]).unwrap()))
        .collect();
    for (a, b) in [
        ("src", "sw1"),
        ("sw1", "sw2"),
        ("sw1", "sw3"),
        ("sw2", "sw4"),
        ("sw3", "sw5"),
        ("sw4", "dst"),
        ("sw5", "dst"),
        ("sw5", "sw4"),
    ] {
        topo.add_link(id[a], id[b]).unwrap();
    }
    let route = [
        ("src", "sw1"),
        ("sw1", "sw3"),
        ("sw2", "sw4"),
        ("sw3", "sw5"),
        ("sw4", "dst"),
        ("sw5", "dst"),
        ("dst", "dst"),
    ];
    let mut fibs = BTreeMap::new();
    for (owner, hop) in route {
        let d = id[owner];
        let mut fib = Fib::new(d);
        fib.entries.push(any_entry(WIDTH, &[id[hop]]));
        fibs.insert(d, fib);
    }
    BenchCase {
        name: "case12".into(),
        topo,
        fibs,
        source: id["src"],
        dst: id["dst"],
    }
}

/// Case1: sw2 repoints off-network. Its own verdict flips, so exactly one
/// message reaches sw1 — which is not using sw2 and stays quiet.
pub fn case1_update(case: &BenchCase) -> (DeviceId, FibUpdate) {
    let sw2 = case.topo.device("sw2").unwrap();
    let space = HeaderSpace::full(case.topo.width());
    let entry = FibEntry {
        space: space.clone(),
        group: NextHopGroup::single(
            HopTarget::Offnet,
            HeaderRewrite::identity(case.topo.width()),
        ),
        cond: None,
        dst: None,
    };
    (sw2, FibUpdate::Modify { space, entry })
}

/// Case2: sw5 repoints to sw4, which still reaches dst; its verdict does
/// not change and nothing at all is sent.
pub fn case2_update(case: &BenchCase) -> (DeviceId, FibUpdate) {
    let sw5 = case.topo.device("sw5").unwrap();
    let sw4 = case.topo.device("sw4").unwrap();
    let space = HeaderSpace::full(case.topo.width());
    (
        sw5,
        FibUpdate::Modify {
            space,
            entry: any_entry(WIDTH, &[sw4]),
        },
    )
}

fn row_json(case: &BenchCase, eng: &Engine<DvpSim>, event: &str, phase: &PhaseMetrics) -> Value {
    let init = &eng.metrics().phases[0];
    json!({
        "case": case.name,
        "devices": case.topo.device_count(),
        "nodes": eng.proto.net().node_count(),
        "init_messages": init.messages,
        "init_bytes": init.bytes,
        "init_ticks": init.ticks,
        "event": event,
        "event_messages": phase.messages,
        "event_bytes": phase.bytes,
        "event_ticks": phase.ticks,
    })
}

fn run_fib_event(
    eng: &mut Engine<DvpSim>,
    d: DeviceId,
    update: &FibUpdate,
    label: &str,
) -> PhaseMetrics {
    let outs = eng.proto.on_fib_update(d, update).expect("bench update applies");
    eng.inject(outs);
    eng.run_to_quiescence(label, MAX_TICKS)
        .expect("bench event converges")
}

/// One row per generated case: initial-convergence metrics plus the metrics
/// of the case's standard perturbation.
pub fn sweep(mode: DeliveryMode, seed: u64) -> Vec<Value> {
    let mut rows = Vec::new();

    let case = case12();
    let mut eng = case.engine(mode, seed);
    let (d, up) = case1_update(&case);
    let phase = run_fib_event(&mut eng, d, &up, "case1");
    rows.push(row_json(&case, &eng, "case1: sw2 off-network", &phase));
    let mut eng = case.engine(mode, seed);
    let (d, up) = case2_update(&case);
    let phase = run_fib_event(&mut eng, d, &up, "case2");
    rows.push(row_json(&case, &eng, "case2: sw5 to sw4", &phase));

    for n in [4usize, 8, 16, 32] {
        let case = line(n);
        let mut eng = case.engine(mode, seed);
        let (d, up) = line_break(&case, n - 2);
        let phase = run_fib_event(&mut eng, d, &up, "break");
        rows.push(row_json(&case, &eng, "break next to last", &phase));
    }

    for n in [3usize, 5, 8] {
        let case = grid(n);
        let mut eng = case.engine(mode, seed);
        let (d, up) = grid_flip(&case, n, n / 2, n / 2);
        let phase = run_fib_event(&mut eng, d, &up, "flip");
        rows.push(row_json(&case, &eng, "interior right-to-down flip", &phase));
    }

    for k in [4usize, 8] {
        let case = fat_tree(k);
        let mut eng = case.engine(mode, seed);
        let (a, b) = fat_tree_event(&case);
        let outs = eng.proto.on_link_event(a, b, false, false);
        eng.inject(outs);
        let phase = eng
            .run_to_quiescence("core link down", MAX_TICKS)
            .expect("bench event converges");
        rows.push(row_json(&case, &eng, "core0x0 link down", &phase));
    }

    for (i, n) in [6usize, 10, 14].into_iter().enumerate() {
        let case = random_dag(n, seed.wrapping_add(i as u64));
        let mut eng = case.engine(mode, seed);
        let (d, up) = dag_break(&case, n);
        let phase = run_fib_event(&mut eng, d, &up, "break");
        rows.push(row_json(&case, &eng, "middle device break", &phase));
    }

    rows
}
