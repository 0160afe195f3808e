//! Path-set automata: Thompson NFAs, subset determinization, and DFA
//! products.
//!
//! The alphabet is the topology's device set. Resulting DFAs are total (an
//! explicit non-accepting dead state absorbs everything else) and pruned:
//! states that cannot reach an accepting state are merged into the dead
//! state. No minimization is performed — DV-node identity depends on the
//! as-constructed states, and minimization would merge states the protocol
//! distinguishes.

use std::collections::{BTreeMap, VecDeque};

use super::ReqError;

/// Device bitset sized to the topology.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub(super) struct DevSet {
    bits: Vec<u64>,
}

impl DevSet {
    pub fn empty(n: usize) -> Self {
        DevSet {
            bits: vec![0; n.div_ceil(64)],
        }
    }

    pub fn insert(&mut self, d: usize) {
        self.bits[d / 64] |= 1 << (d % 64);
    }

    pub fn contains(&self, d: usize) -> bool {
        self.bits[d / 64] >> (d % 64) & 1 == 1
    }
}

#[derive(Debug, Clone, Default)]
struct NfaState {
    eps: Vec<u32>,
    edges: Vec<(DevSet, u32)>,
}

/// Thompson-style NFA with one accept state.
#[derive(Debug, Clone)]
pub(super) struct Nfa {
    n_devices: usize,
    states: Vec<NfaState>,
    start: u32,
    accept: u32,
}

impl Nfa {
    fn state(states: &mut Vec<NfaState>) -> u32 {
        states.push(NfaState::default());
        (states.len() - 1) as u32
    }

    pub fn symbol(n_devices: usize, devs: DevSet) -> Self {
        let mut states = Vec::new();
        let start = Self::state(&mut states);
        let accept = Self::state(&mut states);
        states[start as usize].edges.push((devs, accept));
        Nfa {
            n_devices,
            states,
            start,
            accept,
        }
    }

    /// Matches the empty sequence only.
    pub fn epsilon(n_devices: usize) -> Self {
        let mut states = Vec::new();
        let start = Self::state(&mut states);
        let accept = Self::state(&mut states);
        states[start as usize].eps.push(accept);
        Nfa {
            n_devices,
            states,
            start,
            accept,
        }
    }

    fn absorb(&mut self, other: Nfa) -> (u32, u32) {
        let off = self.states.len() as u32;
        for mut s in other.states {
            for e in &mut s.eps {
                *e += off;
            }
            for (_, t) in &mut s.edges {
                *t += off;
            }
            self.states.push(s);
        }
        (other.start + off, other.accept + off)
    }

    pub fn concat(mut self, other: Nfa) -> Self {
        let (os, oa) = self.absorb(other);
        let a = self.accept;
        self.states[a as usize].eps.push(os);
        self.accept = oa;
        self
    }

    pub fn alt(mut self, other: Nfa) -> Self {
        let (os, oa) = self.absorb(other);
        let start = Self::state(&mut self.states);
        let accept = Self::state(&mut self.states);
        let old_start = self.start;
        let old_accept = self.accept;
        self.states[start as usize].eps.push(old_start);
        self.states[start as usize].eps.push(os);
        self.states[old_accept as usize].eps.push(accept);
        self.states[oa as usize].eps.push(accept);
        self.start = start;
        self.accept = accept;
        self
    }

    pub fn star(mut self) -> Self {
        let start = Self::state(&mut self.states);
        let accept = Self::state(&mut self.states);
        let old_start = self.start;
        let old_accept = self.accept;
        self.states[start as usize].eps.push(old_start);
        self.states[start as usize].eps.push(accept);
        self.states[old_accept as usize].eps.push(old_start);
        self.states[old_accept as usize].eps.push(accept);
        self.start = start;
        self.accept = accept;
        self
    }

    pub fn plus(self) -> Self {
        let rep = self.clone().star();
        self.concat(rep)
    }

    pub fn opt(self) -> Self {
        let n = self.n_devices;
        self.alt(Nfa::epsilon(n))
    }

    fn closure(&self, set: &mut Vec<u32>) {
        let mut seen = vec![false; self.states.len()];
        let mut queue: VecDeque<u32> = set.iter().copied().collect();
        for &s in set.iter() {
            seen[s as usize] = true;
        }
        while let Some(s) = queue.pop_front() {
            for &t in &self.states[s as usize].eps {
                if !seen[t as usize] {
                    seen[t as usize] = true;
                    queue.push_back(t);
                }
            }
        }
        set.clear();
        set.extend(
            seen.iter()
                .enumerate()
                .filter(|(_, &v)| v)
                .map(|(i, _)| i as u32),
        );
    }

    /// Subset construction; the result is total and pruned.
    pub fn determinize(&self, budget: usize) -> Result<PathDfa, ReqError> {
        let mut init = vec![self.start];
        self.closure(&mut init);
        let mut index: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
        let mut subsets: Vec<Vec<u32>> = Vec::new();
        let mut trans: Vec<Vec<u32>> = Vec::new();
        index.insert(init.clone(), 0);
        subsets.push(init);
        let mut work = 0usize;
        while work < subsets.len() {
            let cur = subsets[work].clone();
            let mut row = Vec::with_capacity(self.n_devices);
            for d in 0..self.n_devices {
                let mut next: Vec<u32> = Vec::new();
                for &s in &cur {
                    for (devs, t) in &self.states[s as usize].edges {
                        if devs.contains(d) && !next.contains(t) {
                            next.push(*t);
                        }
                    }
                }
                self.closure(&mut next);
                let id = match index.get(&next) {
                    Some(&id) => id,
                    None => {
                        let id = subsets.len() as u32;
                        if subsets.len() >= budget {
                            return Err(ReqError::StateBudget {
                                budget,
                                reached: subsets.len() + 1,
                            });
                        }
                        index.insert(next.clone(), id);
                        subsets.push(next);
                        id
                    }
                };
                row.push(id);
            }
            trans.push(row);
            work += 1;
        }
        let accepting: Vec<bool> = subsets.iter().map(|s| s.contains(&self.accept)).collect();
        Ok(PathDfa::normalize(self.n_devices, trans, accepting, 0))
    }
}

/// Deterministic, total path automaton over device indices.
#[derive(Debug, Clone)]
pub struct PathDfa {
    n_devices: usize,
    /// `next[s][d]`; row `dead` self-loops.
    next: Vec<Vec<u32>>,
    accepting: Vec<bool>,
    init: u32,
    dead: u32,
}

impl PathDfa {
    /// Builds the canonical form: unreachable states dropped, states that
    /// cannot reach acceptance merged into one dead state, breadth-first
    /// renumbering from the initial state.
    fn normalize(
        n_devices: usize,
        trans: Vec<Vec<u32>>,
        accepting: Vec<bool>,
        init: u32,
    ) -> PathDfa {
        let n = trans.len();
        // Backward reachability from accepting states.
        let mut rev: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (s, row) in trans.iter().enumerate() {
            for &t in row {
                rev[t as usize].push(s as u32);
            }
        }
        let mut live = vec![false; n];
        let mut queue: VecDeque<u32> = (0..n as u32).filter(|&s| accepting[s as usize]).collect();
        for &s in &queue {
            live[s as usize] = true;
        }
        while let Some(s) = queue.pop_front() {
            for &p in &rev[s as usize] {
                if !live[p as usize] {
                    live[p as usize] = true;
                    queue.push_back(p);
                }
            }
        }
        // Forward BFS over live states assigns the new numbering.
        let mut renum: Vec<Option<u32>> = vec![None; n];
        let mut order: Vec<u32> = Vec::new();
        if live[init as usize] {
            renum[init as usize] = Some(0);
            order.push(init);
            let mut head = 0;
            while head < order.len() {
                let s = order[head];
                head += 1;
                for &t in &trans[s as usize] {
                    if live[t as usize] && renum[t as usize].is_none() {
                        renum[t as usize] = Some(order.len() as u32);
                        order.push(t);
                    }
                }
            }
        }
        let dead = order.len() as u32;
        let mut next = Vec::with_capacity(order.len() + 1);
        let mut acc = Vec::with_capacity(order.len() + 1);
        for &old in &order {
            let row = trans[old as usize]
                .iter()
                .map(|&t| renum[t as usize].unwrap_or(dead))
                .collect();
            next.push(row);
            acc.push(accepting[old as usize]);
        }
        next.push(vec![dead; n_devices]);
        acc.push(false);
        let init = if order.is_empty() { dead } else { 0 };
        PathDfa {
            n_devices,
            next,
            accepting: acc,
            init,
            dead,
        }
    }

    /// Product automaton; `both` selects intersection vs union acceptance.
    pub(super) fn product(
        a: &PathDfa,
        b: &PathDfa,
        both: bool,
        budget: usize,
    ) -> Result<PathDfa, ReqError> {
        assert_eq!(a.n_devices, b.n_devices);
        let n = a.n_devices;
        let mut index: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut pairs: Vec<(u32, u32)> = Vec::new();
        index.insert((a.init, b.init), 0);
        pairs.push((a.init, b.init));
        let mut trans: Vec<Vec<u32>> = Vec::new();
        let mut work = 0usize;
        while work < pairs.len() {
            let (sa, sb) = pairs[work];
            let mut row = Vec::with_capacity(n);
            for d in 0..n {
                let key = (a.next[sa as usize][d], b.next[sb as usize][d]);
                let id = match index.get(&key) {
                    Some(&id) => id,
                    None => {
                        let id = pairs.len() as u32;
                        if pairs.len() >= budget {
                            return Err(ReqError::StateBudget {
                                budget,
                                reached: pairs.len() + 1,
                            });
                        }
                        index.insert(key, id);
                        pairs.push(key);
                        id
                    }
                };
                row.push(id);
            }
            trans.push(row);
            work += 1;
        }
        let accepting = pairs
            .iter()
            .map(|&(sa, sb)| {
                let aa = a.accepting[sa as usize];
                let bb = b.accepting[sb as usize];
                if both {
                    aa && bb
                } else {
                    aa || bb
                }
            })
            .collect();
        Ok(PathDfa::normalize(n, trans, accepting, 0))
    }

    pub fn n_devices(&self) -> usize {
        self.n_devices
    }

    pub fn init(&self) -> u32 {
        self.init
    }

    pub fn dead(&self) -> u32 {
        self.dead
    }

    pub fn is_dead(&self, s: u32) -> bool {
        s == self.dead
    }

    pub fn is_accepting(&self, s: u32) -> bool {
        self.accepting[s as usize]
    }

    pub fn step(&self, s: u32, device: usize) -> u32 {
        self.next[s as usize][device]
    }

    /// States excluding the dead sink.
    pub fn live_states(&self) -> usize {
        self.next.len() - 1
    }

    /// Whole-sequence acceptance (anchored at both ends).
    pub fn accepts<I: IntoIterator<Item = usize>>(&self, seq: I) -> bool {
        let mut s = self.init;
        for d in seq {
            s = self.step(s, d);
            if self.is_dead(s) {
                return false;
            }
        }
        self.is_accepting(s)
    }
}
