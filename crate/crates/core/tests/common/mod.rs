//! Shared test fixtures: a random-instance generator and an independent
//! per-packet delivery oracle.
//!
//! The oracle deliberately takes the opposite route from the engine: it
//! pushes one concrete header forward through the DV-Network, applying
//! rewrites hop by hop, and asks whether some/every member chain reaches a
//! sink. The engine works symbolically backwards with inverse images. The
//! two must agree on every header.

#![allow(dead_code)]

pub mod fsd_case;

use std::collections::BTreeMap;

use dpv_core::datamodel::{
    apply_fib_update, DeviceId, Fib, FibEntry, FibUpdate, GroupMode, HopTarget, LinkStateMap,
    NextHop, NextHopGroup, Topology,
};
use dpv_core::dvnet::{build_product, build_shortest_path, DvNetwork, NodeId};
use dpv_core::dvp::{DvpConfig, DvpSim};
use dpv_core::hsa::{FieldLayout, HeaderRewrite, HeaderSpace};
use dpv_core::reqlang::{compile, parse_requirement, resolve_labels, DEFAULT_STATE_BUDGET};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub topo: Topology,
    pub net: DvNetwork,
    pub fibs: BTreeMap<DeviceId, Fib>,
    pub links: LinkStateMap,
    pub cfg: DvpConfig,
    pub width: u16,
}

impl Instance {
    pub fn sim(&self) -> DvpSim {
        DvpSim::new(
            self.net.clone(),
            self.topo.clone(),
            self.fibs.clone(),
            self.links.clone(),
            self.cfg.clone(),
        )
    }

    pub fn bytes_per_word(&self) -> u64 {
        (self.width as u64 + 3) / 4
    }

    /// Forward per-packet evaluation: can `header`, entering node `x`,
    /// still complete the required path?
    pub fn delivered(
        &self,
        x: NodeId,
        header: u128,
        memo: &mut BTreeMap<(NodeId, u128), bool>,
    ) -> bool {
        if self.net.node(x).is_sink {
            return true;
        }
        if self.net.is_degenerate() {
            return false;
        }
        if let Some(&v) = memo.get(&(x, header)) {
            return v;
        }
        let device = self.net.node(x).device;
        let verdict = 'eval: {
            let Some(fib) = self.fibs.get(&device) else {
                break 'eval false;
            };
            let Some(entry) = fib.entries.iter().find(|e| e.space.contains(header)) else {
                break 'eval false;
            };
            if let Some(cond) = &entry.cond {
                let expected = if self.links.is_up(device, cond.primary) {
                    cond.primary
                } else {
                    cond.backup
                };
                if entry.group.member_devices() != vec![expected] {
                    break 'eval false;
                }
            }
            if let Some(cov) = self.cfg.coverage.get(&device) {
                let programmed: std::collections::BTreeSet<DeviceId> =
                    entry.group.member_devices().into_iter().collect();
                if !cov.is_subset(&programmed) {
                    break 'eval false;
                }
            }
            if entry.group.members.is_empty() {
                break 'eval false;
            }
            let member_ok = |m: &NextHop| -> bool {
                let d = match m.target {
                    HopTarget::Offnet => return false,
                    HopTarget::Device(d) if d == device => return false,
                    HopTarget::Device(d) => d,
                };
                if !self.links.is_up(device, d) {
                    return false;
                }
                let Some(y) = self
                    .net
                    .out(x)
                    .iter()
                    .copied()
                    .find(|&y| self.net.node(y).device == d)
                else {
                    return false;
                };
                self.delivered(y, m.rewrite.apply_header(header), memo)
            };
            let strict = match entry.group.mode {
                GroupMode::All => true,
                GroupMode::Any => self.cfg.strict_any,
            };
            if strict {
                entry.group.members.iter().all(member_ok)
            } else {
                entry.group.members.iter().any(member_ok)
            }
        };
        memo.insert((x, header), verdict);
        verdict
    }

    /// Compares the engine's root H against the oracle on every header.
    /// Returns (verified, violated) header counts for vacuity tracking.
    pub fn assert_matches(&self, sim: &DvpSim, context: &str) -> (u64, u64) {
        let root_h = sim.node_h(self.net.root());
        let mut memo = BTreeMap::new();
        let (mut ok, mut bad) = (0, 0);
        for header in 0u128..(1 << self.width) {
            let oracle_violated = !self.delivered(self.net.root(), header, &mut memo);
            let sim_violated = root_h.contains(header);
            assert_eq!(
                sim_violated, oracle_violated,
                "{context}: header {header:0w$b} sim={sim_violated} oracle={oracle_violated}\nroot H = {root_h}",
                w = self.width as usize,
            );
            if oracle_violated {
                bad += 1;
            } else {
                ok += 1;
            }
        }
        (ok, bad)
    }
}

/// A scripted mid-run change, applied both to the engine and the mirror.
#[derive(Debug, Clone)]
pub enum TestEvent {
    Fib(DeviceId, FibUpdate),
    Link(DeviceId, DeviceId, bool),
}

fn random_word(rng: &mut ChaCha8Rng, width: u16, star_p: f64) -> String {
    (0..width)
        .map(|_| {
            if rng.gen_bool(star_p) {
                '*'
            } else if rng.gen_bool(0.5) {
                '1'
            } else {
                '0'
            }
        })
        .collect()
}

fn random_rewrite(rng: &mut ChaCha8Rng, width: u16) -> HeaderRewrite {
    if rng.gen_bool(0.7) {
        return HeaderRewrite::identity(width);
    }
    // A couple of fixed bits, rest untouched.
    let s: String = (0..width)
        .map(|_| {
            if rng.gen_bool(0.2) {
                if rng.gen_bool(0.5) {
                    '1'
                } else {
                    '0'
                }
            } else {
                '*'
            }
        })
        .collect();
    HeaderRewrite::parse_pattern(&s).unwrap()
}

fn random_group(
    rng: &mut ChaCha8Rng,
    topo: &Topology,
    owner: DeviceId,
    width: u16,
) -> NextHopGroup {
    let mut pool: Vec<HopTarget> = topo
        .out_neighbors(owner)
        .iter()
        .map(|&d| HopTarget::Device(d))
        .collect();
    if rng.gen_bool(0.08) {
        pool.push(HopTarget::Device(owner)); // premature local delivery
    }
    if rng.gen_bool(0.08) {
        pool.push(HopTarget::Offnet);
    }
    if pool.is_empty() {
        pool.push(HopTarget::Offnet);
    }
    let count = 1 + rng.gen_range(0..pool.len().min(3));
    let mut members = Vec::new();
    let mut picked = std::collections::BTreeSet::new();
    for _ in 0..count {
        let t = pool[rng.gen_range(0..pool.len())];
        if picked.insert(t) {
            members.push(NextHop {
                target: t,
                rewrite: random_rewrite(rng, width),
            });
        }
    }
    let mode = if rng.gen_bool(0.5) {
        GroupMode::All
    } else {
        GroupMode::Any
    };
    NextHopGroup { mode, members }
}

fn random_entry(
    rng: &mut ChaCha8Rng,
    topo: &Topology,
    owner: DeviceId,
    used: &HeaderSpace,
    width: u16,
) -> Option<FibEntry> {
    let word = HeaderSpace::parse_literal(&random_word(rng, width, 0.55), width).ok()?;
    let space = word.subtract(used);
    if space.is_empty() {
        return None;
    }
    let group = random_group(rng, topo, owner, width);
    let outs = topo.out_neighbors(owner);
    let cond = if outs.len() >= 2 && group.members.len() == 1 && rng.gen_bool(0.25) {
        let pi = rng.gen_range(0..outs.len());
        let mut bi = rng.gen_range(0..outs.len() - 1);
        if bi >= pi {
            bi += 1;
        }
        Some(dpv_core::datamodel::Conditional {
            primary: outs[pi],
            backup: outs[bi],
        })
    } else {
        None
    };
    Some(FibEntry {
        space,
        group,
        cond,
        dst: None,
    })
}

/// A random layered-DAG verification instance. The topology always carries
/// the chain d0 -> d1 -> ... so at least one end-to-end walk exists; random
/// skip links, FIBs, link failures, coverage, and strictness are layered on
/// top. `max_nodes` caps the DV-Network size by retrying derived seeds.
pub fn random_instance(seed: u64, max_nodes: usize) -> Instance {
    random_instance_max(seed, max_nodes, 8)
}

/// Same generator with a caller-chosen header-width ceiling.
pub fn random_instance_max(seed: u64, max_nodes: usize, max_width: u16) -> Instance {
    for attempt in 0..64 {
        let inst = try_random_instance(seed.wrapping_add(attempt * 7919), max_width);
        if inst.net.node_count() <= max_nodes {
            return inst;
        }
    }
    panic!("no instance under {max_nodes} nodes for seed {seed}");
}

fn try_random_instance(seed: u64, max_width: u16) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width: u16 = rng.gen_range(4..=max_width);
    let n: usize = rng.gen_range(4..=9);
    let mut topo = Topology::new(FieldLayout::new(width).unwrap());
    let ids: Vec<DeviceId> = (0..n)
        .map(|i| topo.add_device(&format!("d{i}"), &[]).unwrap())
        .collect();
    for i in 0..n - 1 {
        topo.add_link(ids[i], ids[i + 1]).unwrap();
        for j in i + 2..n {
            if rng.gen_bool(0.3) {
                topo.add_link(ids[i], ids[j]).unwrap();
            }
        }
    }
    let src = "d0".to_string();
    let dst = format!("d{}", n - 1);
    let mid = format!("d{}", n / 2);
    let net = match rng.gen_range(0..4) {
        0 => req_net(&topo, &format!("([{src}]: any) -> .*[{dst}]")),
        1 => req_net(&topo, &format!("([{src}]: any) -> .*[{mid}].*[{dst}]")),
        2 => req_net(
            &topo,
            &format!("([{src}]: any) -> loopfree ∩ .*[{dst}]"),
        ),
        _ => build_shortest_path(&topo, ids[0], &[ids[n - 1]]).unwrap(),
    };

    let mut fibs = BTreeMap::new();
    for &dev in &ids {
        let mut entries = Vec::new();
        let mut used = HeaderSpace::empty(width);
        for _ in 0..rng.gen_range(1..=3) {
            if let Some(e) = random_entry(&mut rng, &topo, dev, &used, width) {
                used = used.union(&e.space);
                entries.push(e);
            }
        }
        fibs.insert(dev, Fib { owner: dev, entries });
    }

    let mut links = LinkStateMap::new();
    for (a, b) in topo.links().collect::<Vec<_>>() {
        if rng.gen_bool(0.06) {
            links.set_link(a, b, false);
        }
    }

    let mut coverage = BTreeMap::new();
    for &dev in &ids {
        if rng.gen_bool(0.15) && !topo.out_neighbors(dev).is_empty() {
            let outs = topo.out_neighbors(dev);
            let cov: std::collections::BTreeSet<DeviceId> = outs
                .iter()
                .copied()
                .filter(|_| rng.gen_bool(0.5))
                .collect();
            if !cov.is_empty() {
                coverage.insert(dev, cov);
            }
        }
    }
    let cfg = DvpConfig {
        strict_any: rng.gen_bool(0.2),
        coverage,
    };
    Instance {
        topo,
        net,
        fibs,
        links,
        cfg,
        width,
    }
}

fn req_net(topo: &Topology, text: &str) -> DvNetwork {
    let req = parse_requirement(text).unwrap();
    let resolved = resolve_labels(&req, topo).unwrap();
    let dfa = compile(&resolved, topo, DEFAULT_STATE_BUDGET).unwrap();
    build_product(topo, &dfa, resolved.sources[0], DEFAULT_STATE_BUDGET).unwrap()
}

/// Draws the next scripted event against the mirror state and applies it to
/// the mirror; the caller replays it onto the engine.
pub fn next_event(inst: &mut Instance, rng: &mut ChaCha8Rng) -> TestEvent {
    let all_links: Vec<(DeviceId, DeviceId)> = inst.topo.links().collect();
    if rng.gen_bool(0.4) && !all_links.is_empty() {
        let (a, b) = all_links[rng.gen_range(0..all_links.len())];
        let up = !inst.links.is_up(a, b);
        inst.links.set_link(a, b, up);
        return TestEvent::Link(a, b, up);
    }
    // FIB event on a random device.
    let devs: Vec<DeviceId> = inst.topo.device_ids().collect();
    for _ in 0..16 {
        let dev = devs[rng.gen_range(0..devs.len())];
        let fib = inst.fibs.entry(dev).or_insert_with(|| Fib::new(dev));
        let update = if !fib.entries.is_empty() && rng.gen_bool(0.5) {
            let i = rng.gen_range(0..fib.entries.len());
            let space = fib.entries[i].space.clone();
            if rng.gen_bool(0.5) {
                FibUpdate::Delete { space }
            } else {
                let group = random_group(rng, &inst.topo, dev, inst.width);
                let entry = FibEntry {
                    space: space.clone(),
                    group,
                    cond: None,
                    dst: None,
                };
                FibUpdate::Modify { space, entry }
            }
        } else {
            let used = fib
                .entries
                .iter()
                .fold(HeaderSpace::empty(inst.width), |acc, e| acc.union(&e.space));
            match random_entry(rng, &inst.topo, dev, &used, inst.width) {
                Some(e) => FibUpdate::Insert(e),
                None => continue,
            }
        };
        let (next, _) = apply_fib_update(fib, &inst.topo, &update).unwrap();
        inst.fibs.insert(dev, next);
        return TestEvent::Fib(dev, update);
    }
    // Nowhere to insert: fall back to a link toggle.
    let (a, b) = all_links[rng.gen_range(0..all_links.len())];
    let up = !inst.links.is_up(a, b);
    inst.links.set_link(a, b, up);
    TestEvent::Link(a, b, up)
}
