//! Fixtures for the FIB-state-distribution tests: the frozen six-device
//! two-flow scenario with its staged event script, and a randomized
//! loop-free instance/script generator for convergence checks.

use std::collections::BTreeMap;

use dpv_core::datamodel::{
    DeviceId, Fib, FibEntry, FibUpdate, HopTarget, LinkStateMap, NextHopGroup, Topology,
};
use dpv_core::fsd::{init_tables, tables_semantically_equal, FsdCounts, FsdSim, LecPath, LecTable};
use dpv_core::hsa::{FieldLayout, HeaderRewrite, HeaderSpace};
use dpv_core::simharness::{DeliveryMode, Engine};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const W: u16 = 8;

fn sp(t: &str) -> HeaderSpace {
    HeaderSpace::parse_literal(t, W).unwrap()
}

fn entry(space: &str, to: DeviceId, dst: DeviceId) -> FibEntry {
    FibEntry {
        space: sp(space),
        group: NextHopGroup::single(HopTarget::Device(to), HeaderRewrite::identity(W)),
        cond: None,
        dst: Some(dst),
    }
}

fn ids(topo: &Topology, names: &str) -> Vec<DeviceId> {
    names
        .chars()
        .map(|c| topo.device(&c.to_string()).unwrap())
        .collect()
}

fn complete(topo: &Topology, names: &str) -> LecPath {
    LecPath::Complete(ids(topo, names))
}

fn trunc(topo: &Topology, names: &str) -> LecPath {
    LecPath::Truncated(ids(topo, names))
}

/// Asserts that `space` maps uniformly to `want` in the table.
fn expect(table: &LecTable, space: &str, want: &LecPath) {
    let parts = table.lookup(&sp(space));
    assert_eq!(
        parts.len(),
        1,
        "space {space} not uniform on {:?}: {parts:?}",
        table.owner
    );
    assert_eq!(&parts[0].1, want, "space {space} on {:?}", table.owner);
}

/// Two flows over six devices: 10****** takes A,B,C,D and 0******* takes
/// A,B,E,F,D, with spare cables C-E and A-F for the repair and failure
/// stages.
pub fn two_flow_case() -> (Topology, BTreeMap<DeviceId, Fib>) {
    let mut t = Topology::new(FieldLayout::new(W).unwrap());
    let a = t.add_device("A", &[]).unwrap();
    let b = t.add_device("B", &[]).unwrap();
    let c = t.add_device("C", &[]).unwrap();
    let d = t.add_device("D", &[]).unwrap();
    let e = t.add_device("E", &[]).unwrap();
    let f = t.add_device("F", &[]).unwrap();
    for (x, y) in [(a, b), (b, c), (c, d), (b, e), (e, f), (f, d), (c, e), (a, f)] {
        t.add_cable(x, y).unwrap();
    }
    let fibs = BTreeMap::from([
        (
            a,
            Fib {
                owner: a,
                entries: vec![entry("10******", b, d), entry("0*******", b, d)],
            },
        ),
        (
            b,
            Fib {
                owner: b,
                entries: vec![
                    entry("100*****", c, d),
                    entry("101*****", c, d),
                    entry("0*******", e, d),
                ],
            },
        ),
        (
            c,
            Fib {
                owner: c,
                entries: vec![entry("10******", d, d)],
            },
        ),
        (
            d,
            Fib {
                owner: d,
                entries: vec![entry("********", d, d)],
            },
        ),
        (
            e,
            Fib {
                owner: e,
                entries: vec![entry("0*******", f, d), entry("10******", f, d)],
            },
        ),
        (
            f,
            Fib {
                owner: f,
                entries: vec![entry("0*******", d, d), entry("10******", d, d)],
            },
        ),
    ]);
    (t, fibs)
}

/// Replays the staged script — reroute, withdrawal, match shrink, two
/// repairs, then two link failures — asserting tables and message counts
/// after every stage. Returns the final engine for further checks.
pub fn run_staged_script(mode: DeliveryMode, seed: u64) -> Engine<FsdSim> {
    let (t, fibs) = two_flow_case();
    let a = t.device("A").unwrap();
    let b = t.device("B").unwrap();
    let c = t.device("C").unwrap();
    let d = t.device("D").unwrap();
    let e = t.device("E").unwrap();
    let f = t.device("F").unwrap();
    let sim = FsdSim::new(t.clone(), fibs, LinkStateMap::new()).unwrap();
    let mut eng = Engine::new(sim, mode, seed, (W as u64 + 3) / 4);

    // Initial tables: every device holds its flow paths.
    expect(eng.proto.table(a), "10******", &complete(&t, "ABCD"));
    expect(eng.proto.table(a), "0*******", &complete(&t, "ABEFD"));
    expect(eng.proto.table(b), "10******", &complete(&t, "BCD"));
    expect(eng.proto.table(b), "0*******", &complete(&t, "BEFD"));
    expect(eng.proto.table(c), "10******", &complete(&t, "CD"));
    expect(eng.proto.table(d), "********", &complete(&t, "D"));
    expect(eng.proto.table(e), "10******", &complete(&t, "EFD"));
    expect(eng.proto.table(f), "10******", &complete(&t, "FD"));

    // Stage 1: B reroutes 101***** from C to E. One request, one reply, one
    // broadcast; A and B fold the space into their 0******* classes.
    let out = eng
        .proto
        .on_rule_change(
            b,
            &FibUpdate::Modify {
                space: sp("101*****"),
                entry: entry("101*****", e, d),
            },
        )
        .unwrap();
    eng.inject(out);
    eng.run_to_quiescence("reroute", 1_000).unwrap();
    assert_eq!(
        eng.proto.take_counts(),
        FsdCounts { broadcasts: 1, requests: 1, replies: 1 }
    );
    expect(eng.proto.table(b), "101*****", &complete(&t, "BEFD"));
    expect(eng.proto.table(b), "100*****", &complete(&t, "BCD"));
    assert_eq!(eng.proto.table(b).entries.len(), 2);
    expect(eng.proto.table(a), "101*****", &complete(&t, "ABEFD"));
    expect(eng.proto.table(a), "100*****", &complete(&t, "ABCD"));
    assert_eq!(eng.proto.table(a).entries.len(), 2);
    expect(eng.proto.table(c), "10******", &complete(&t, "CD"));

    // Stage 2: C withdraws its rule. A single NULL broadcast; upstream paths
    // truncate at C while the other flow is untouched.
    let out = eng
        .proto
        .on_rule_change(c, &FibUpdate::Delete { space: sp("10******") })
        .unwrap();
    eng.inject(out);
    eng.run_to_quiescence("withdraw", 1_000).unwrap();
    assert_eq!(
        eng.proto.take_counts(),
        FsdCounts { broadcasts: 1, requests: 0, replies: 0 }
    );
    expect(eng.proto.table(c), "10******", &LecPath::Null);
    expect(eng.proto.table(b), "100*****", &trunc(&t, "BC"));
    expect(eng.proto.table(a), "100*****", &trunc(&t, "ABC"));
    expect(eng.proto.table(a), "0*******", &complete(&t, "ABEFD"));

    // Stage 3: E shrinks 10****** to 1*00****. The request covers the whole
    // new match; F splits it into a known and an unknown half, so three
    // updates go out: two for the new classes and one for the lost space.
    let out = eng
        .proto
        .on_rule_change(
            e,
            &FibUpdate::Modify {
                space: sp("10******"),
                entry: entry("1*00****", f, d),
            },
        )
        .unwrap();
    eng.inject(out);
    eng.run_to_quiescence("shrink", 1_000).unwrap();
    assert_eq!(
        eng.proto.take_counts(),
        FsdCounts { broadcasts: 3, requests: 1, replies: 2 }
    );
    expect(eng.proto.table(e), "1000****", &complete(&t, "EFD"));
    expect(eng.proto.table(e), "0*******", &complete(&t, "EFD"));
    expect(eng.proto.table(e), "1100****", &trunc(&t, "EF"));
    expect(eng.proto.table(e), "101*****", &LecPath::Null);
    expect(eng.proto.table(e), "1001****", &LecPath::Null);
    // B's rerouted class splits in two: the surviving flow and a truncated
    // leftover with different paths.
    expect(eng.proto.table(b), "0*******", &complete(&t, "BEFD"));
    expect(eng.proto.table(b), "101*****", &trunc(&t, "BE"));
    expect(eng.proto.table(b), "100*****", &trunc(&t, "BC"));
    assert_eq!(eng.proto.table(b).entries.len(), 3);
    expect(eng.proto.table(a), "0*******", &complete(&t, "ABEFD"));
    expect(eng.proto.table(a), "101*****", &trunc(&t, "ABE"));
    expect(eng.proto.table(a), "100*****", &trunc(&t, "ABC"));

    // Stage 4: C repairs half the broken flow via E. The truncated upstream
    // paths end at C, so C's broadcast alone heals them.
    let out = eng
        .proto
        .on_rule_change(c, &FibUpdate::Insert(entry("1000****", e, d)))
        .unwrap();
    eng.inject(out);
    eng.run_to_quiescence("repair-a", 1_000).unwrap();
    assert_eq!(
        eng.proto.take_counts(),
        FsdCounts { broadcasts: 1, requests: 1, replies: 1 }
    );
    expect(eng.proto.table(c), "1000****", &complete(&t, "CEFD"));
    expect(eng.proto.table(b), "1000****", &complete(&t, "BCEFD"));
    expect(eng.proto.table(b), "1001****", &trunc(&t, "BC"));
    expect(eng.proto.table(a), "1000****", &complete(&t, "ABCEFD"));
    expect(eng.proto.table(a), "1001****", &trunc(&t, "ABC"));

    // Stage 5: the other repaired half only reaches a truncated path at E,
    // and that is what C learns and announces.
    let out = eng
        .proto
        .on_rule_change(c, &FibUpdate::Insert(entry("1100****", e, d)))
        .unwrap();
    eng.inject(out);
    eng.run_to_quiescence("repair-b", 1_000).unwrap();
    assert_eq!(
        eng.proto.take_counts(),
        FsdCounts { broadcasts: 1, requests: 1, replies: 1 }
    );
    expect(eng.proto.table(c), "1100****", &trunc(&t, "CEF"));

    // Stage 6: the C-E cable dies. Both of C's repair rules cross it, so two
    // NULL updates go out; upstream paths fall back to ending at C, which
    // still shows where repair has to happen.
    let out = eng.proto.on_link_event(c, e, false, true).unwrap();
    eng.inject(out);
    eng.run_to_quiescence("cable-ce", 1_000).unwrap();
    assert_eq!(
        eng.proto.take_counts(),
        FsdCounts { broadcasts: 2, requests: 0, replies: 0 }
    );
    expect(eng.proto.table(c), "1000****", &LecPath::Null);
    expect(eng.proto.table(c), "1100****", &LecPath::Null);
    expect(eng.proto.table(b), "100*****", &trunc(&t, "BC"));
    expect(eng.proto.table(a), "100*****", &trunc(&t, "ABC"));
    expect(eng.proto.table(a), "0*******", &complete(&t, "ABEFD"));

    // Stage 7: the A-F cable dies too. No rule on either end uses it, so the
    // failure is completely silent.
    let out = eng.proto.on_link_event(a, f, false, true).unwrap();
    assert!(out.is_empty());
    eng.inject(out);
    let metrics = eng.run_to_quiescence("cable-af", 1_000).unwrap();
    assert_eq!(metrics.messages, 0);
    assert_eq!(eng.proto.take_counts(), FsdCounts::default());

    // Settled, internally consistent, and identical to a from-scratch build
    // on the final FIB and link state.
    eng.proto.check_settled().unwrap();
    for tbl in eng.proto.tables().values() {
        tbl.check_invariants().unwrap();
    }
    let fresh = init_tables(eng.proto.topo(), eng.proto.links(), eng.proto.fibs()).unwrap();
    assert!(tables_semantically_equal(eng.proto.tables(), &fresh));
    expect(eng.proto.table(a), "0*******", &complete(&t, "ABEFD"));
    expect(eng.proto.table(a), "101*****", &trunc(&t, "ABE"));
    expect(eng.proto.table(a), "100*****", &trunc(&t, "ABC"));
    eng
}

pub struct FsdInstance {
    pub topo: Topology,
    pub fibs: BTreeMap<DeviceId, Fib>,
    pub links: LinkStateMap,
    pub dst: DeviceId,
    /// Hop distance to `dst` on the full topology; rules only ever point at
    /// strictly smaller depths, which rules out forwarding loops.
    pub depth: BTreeMap<DeviceId, u32>,
    pub width: u16,
}

/// A connected topology of at most eight devices with spanning-tree-style
/// FIBs toward one destination.
pub fn random_fsd_instance(seed: u64) -> FsdInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.gen_range(4..=8) as u16;
    let n = rng.gen_range(3..=8usize);
    let mut topo = Topology::new(FieldLayout::new(width).unwrap());
    let devs: Vec<DeviceId> = (0..n)
        .map(|i| topo.add_device(&format!("n{i}"), &[]).unwrap())
        .collect();
    for i in 1..n {
        let p = rng.gen_range(0..i);
        topo.add_cable(devs[i], devs[p]).unwrap();
    }
    for _ in 0..n / 2 {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i != j && !topo.has_link(devs[i], devs[j]) {
            topo.add_cable(devs[i], devs[j]).unwrap();
        }
    }
    let dst = devs[rng.gen_range(0..n)];
    let mut depth: BTreeMap<DeviceId, u32> = BTreeMap::from([(dst, 0)]);
    let mut frontier = vec![dst];
    while let Some(x) = frontier.pop() {
        let dx = depth[&x];
        for &y in topo.out_neighbors(x) {
            depth.entry(y).or_insert_with(|| {
                frontier.push(y);
                dx + 1
            });
        }
    }
    let mut fibs: BTreeMap<DeviceId, Fib> = BTreeMap::new();
    fibs.insert(
        dst,
        Fib {
            owner: dst,
            entries: vec![FibEntry {
                space: HeaderSpace::full(width),
                group: NextHopGroup::single(HopTarget::Device(dst), HeaderRewrite::identity(width)),
                cond: None,
                dst: Some(dst),
            }],
        },
    );
    for &d in &devs {
        if d == dst {
            continue;
        }
        let mut used = HeaderSpace::empty(width);
        let mut entries = Vec::new();
        for _ in 0..rng.gen_range(1..=3) {
            let word = super::random_word(&mut rng, width, 0.5);
            let space = HeaderSpace::parse_literal(&word, width)
                .unwrap()
                .subtract(&used);
            if space.is_empty() {
                continue;
            }
            used = used.union(&space);
            let to = lower_depth_neighbor(&topo, &depth, d, &mut rng);
            entries.push(FibEntry {
                space,
                group: NextHopGroup::single(HopTarget::Device(to), HeaderRewrite::identity(width)),
                cond: None,
                dst: Some(dst),
            });
        }
        if !entries.is_empty() {
            fibs.insert(d, Fib { owner: d, entries });
        }
    }
    FsdInstance {
        topo,
        fibs,
        links: LinkStateMap::new(),
        dst,
        depth,
        width,
    }
}

fn lower_depth_neighbor(
    topo: &Topology,
    depth: &BTreeMap<DeviceId, u32>,
    d: DeviceId,
    rng: &mut ChaCha8Rng,
) -> DeviceId {
    let mine = depth[&d];
    let cands: Vec<DeviceId> = topo
        .out_neighbors(d)
        .iter()
        .copied()
        .filter(|y| depth[y] < mine)
        .collect();
    cands[rng.gen_range(0..cands.len())]
}

pub enum FsdScriptEvent {
    Rule(DeviceId, FibUpdate),
    Link(DeviceId, DeviceId, bool),
}

/// Draws the next event against the sim's current state: link flaps, rule
/// withdrawals, fresh inserts into uncovered space, and retargets that
/// respect the depth ordering.
pub fn random_fsd_event(
    sim: &FsdSim,
    inst: &FsdInstance,
    rng: &mut ChaCha8Rng,
) -> FsdScriptEvent {
    loop {
        if rng.gen_bool(0.25) {
            let cables: Vec<(DeviceId, DeviceId)> = sim
                .topo()
                .links()
                .filter(|(a, b)| a < b)
                .collect();
            let (a, b) = cables[rng.gen_range(0..cables.len())];
            return FsdScriptEvent::Link(a, b, !sim.links().is_up(a, b));
        }
        let devs: Vec<DeviceId> = sim
            .topo()
            .device_ids()
            .filter(|&d| d != inst.dst)
            .collect();
        let d = devs[rng.gen_range(0..devs.len())];
        let entries: Vec<FibEntry> = sim
            .fibs()
            .get(&d)
            .map(|f| f.entries.clone())
            .unwrap_or_default();
        match rng.gen_range(0..3) {
            0 if !entries.is_empty() => {
                let e = &entries[rng.gen_range(0..entries.len())];
                return FsdScriptEvent::Rule(
                    d,
                    FibUpdate::Delete {
                        space: e.space.clone(),
                    },
                );
            }
            1 if !entries.is_empty() => {
                let e = &entries[rng.gen_range(0..entries.len())];
                let to = lower_depth_neighbor(&inst.topo, &inst.depth, d, rng);
                return FsdScriptEvent::Rule(
                    d,
                    FibUpdate::Modify {
                        space: e.space.clone(),
                        entry: FibEntry {
                            space: e.space.clone(),
                            group: NextHopGroup::single(
                                HopTarget::Device(to),
                                HeaderRewrite::identity(inst.width),
                            ),
                            cond: None,
                            dst: Some(inst.dst),
                        },
                    },
                );
            }
            _ => {
                let mut used = HeaderSpace::empty(inst.width);
                for e in &entries {
                    used = used.union(&e.space);
                }
                let word = super::random_word(rng, inst.width, 0.5);
                let space = HeaderSpace::parse_literal(&word, inst.width)
                    .unwrap()
                    .subtract(&used);
                if space.is_empty() {
                    continue;
                }
                let to = lower_depth_neighbor(&inst.topo, &inst.depth, d, rng);
                return FsdScriptEvent::Rule(
                    d,
                    FibUpdate::Insert(FibEntry {
                        space,
                        group: NextHopGroup::single(
                            HopTarget::Device(to),
                            HeaderRewrite::identity(inst.width),
                        ),
                        cond: None,
                        dst: Some(inst.dst),
                    }),
                );
            }
        }
    }
}

/// Runs `events` random events to quiescence, checking after each that the
/// tables settled, hold their invariants, and match a from-scratch rebuild.
pub fn run_random_fsd_script(seed: u64, events: usize, mode: DeliveryMode) {
    let inst = random_fsd_instance(seed);
    let sim = FsdSim::new(inst.topo.clone(), inst.fibs.clone(), inst.links.clone())
        .unwrap_or_else(|e| panic!("seed {seed}: bad instance: {e}"));
    let mut eng = Engine::new(sim, mode, seed, (inst.width as u64 + 3) / 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for i in 0..events {
        let out = match random_fsd_event(&eng.proto, &inst, &mut rng) {
            FsdScriptEvent::Rule(d, up) => eng
                .proto
                .on_rule_change(d, &up)
                .unwrap_or_else(|e| panic!("seed {seed} event {i}: {e}")),
            FsdScriptEvent::Link(a, b, up) => eng.proto.on_link_event(a, b, up, true).unwrap(),
        };
        eng.inject(out);
        eng.run_to_quiescence(&format!("event-{i}"), 100_000).unwrap();
        eng.proto.check_settled().unwrap();
        for tbl in eng.proto.tables().values() {
            tbl.check_invariants()
                .unwrap_or_else(|e| panic!("seed {seed} event {i}: {e}"));
        }
        let fresh = init_tables(eng.proto.topo(), eng.proto.links(), eng.proto.fibs())
            .unwrap_or_else(|e| panic!("seed {seed} event {i}: fresh build: {e}"));
        assert!(
            tables_semantically_equal(eng.proto.tables(), &fresh),
            "seed {seed} event {i}: tables diverged from a fresh build"
        );
    }
}
