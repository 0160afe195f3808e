//! Composition of several control planes into one verified data plane.
//!
//! Each control plane (CP) programs its own candidate FIBs and is verified
//! independently; the composer owns the verified spaces and assigns every
//! header in the managed space to the highest-preference `(requirement,
//! cp)` pair whose verified space covers it. Headers no ranked pair can
//! carry fall into the residue and are dropped rather than forwarded
//! unverified. Flapping CPs — those whose verification results keep
//! changing — are suppressed with exponential-decay damping so an unstable
//! plane cannot keep winning the cover, and fast-reroute virtual CPs can be
//! derived mechanically from a base plane to pre-verify failure responses.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::datamodel::{DeviceId, Fib, FibEntry, HopTarget};
use crate::hsa::HeaderSpace;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ComposerError {
    #[error("unknown control plane {0:?}")]
    UnknownCp(String),
    #[error("control plane {cp:?} has no FIB for device {device:?}")]
    MissingFib { cp: String, device: String },
}

/// BGP-style route-flap damping, applied per control plane.
///
/// The penalty decays by half every `half_life` ticks. Each observed flap
/// adds `increment`; a penalty strictly above `suppress` suppresses the CP
/// and it stays suppressed until the decayed penalty falls strictly below
/// `reuse`. Updates apply in a fixed order: decay, release check, add,
/// suppress check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingParams {
    pub increment: f64,
    pub suppress: f64,
    pub reuse: f64,
    pub half_life: u64,
}

impl Default for DampingParams {
    fn default() -> Self {
        DampingParams {
            increment: 1000.0,
            suppress: 3000.0,
            reuse: 1500.0,
            half_life: 300,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct DampEntry {
    penalty: f64,
    last: u64,
    suppressed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Damper {
    params: DampingParams,
    entries: BTreeMap<String, DampEntry>,
}

impl Damper {
    pub fn new(params: DampingParams) -> Self {
        Damper {
            params,
            entries: BTreeMap::new(),
        }
    }

    fn advance(params: &DampingParams, e: &mut DampEntry, now: u64) {
        debug_assert!(now >= e.last, "damping clock must be monotonic");
        let elapsed = now.saturating_sub(e.last);
        if elapsed > 0 {
            e.penalty *= (-(elapsed as f64) / params.half_life as f64).exp2();
            e.last = now;
        }
        if e.suppressed && e.penalty < params.reuse {
            e.suppressed = false;
        }
    }

    pub fn observe_flap(&mut self, key: &str, now: u64) {
        let e = self.entries.entry(key.to_string()).or_default();
        Self::advance(&self.params, e, now);
        e.penalty += self.params.increment;
        if e.penalty > self.params.suppress {
            e.suppressed = true;
        }
    }

    pub fn is_suppressed(&mut self, key: &str, now: u64) -> bool {
        match self.entries.get_mut(key) {
            None => false,
            Some(e) => {
                Self::advance(&self.params, e, now);
                e.suppressed
            }
        }
    }

    pub fn penalty(&mut self, key: &str, now: u64) -> f64 {
        match self.entries.get_mut(key) {
            None => 0.0,
            Some(e) => {
                Self::advance(&self.params, e, now);
                e.penalty
            }
        }
    }
}

/// One header piece of the cover and the pair that won it.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignedPiece {
    pub space: HeaderSpace,
    pub requirement: String,
    pub cp: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpAssignment {
    pub pieces: Vec<AssignedPiece>,
    /// Headers no eligible pair covers; these are dropped.
    pub residue: HeaderSpace,
}

impl CpAssignment {
    /// The pair assigned to one concrete header, if any.
    pub fn lookup(&self, header: u128) -> Option<(&str, &str)> {
        self.pieces
            .iter()
            .find(|p| p.space.contains(header))
            .map(|p| (p.requirement.as_str(), p.cp.as_str()))
    }
}

/// Owns the ranked preference list, the latest verification results, and
/// the damper.
pub struct Composer {
    space: HeaderSpace,
    /// `(requirement, cp)` pairs, most preferred first.
    rank: Vec<(String, String)>,
    results: BTreeMap<(String, String), HeaderSpace>,
    damper: Damper,
}

impl Composer {
    pub fn new(space: HeaderSpace, rank: Vec<(String, String)>, params: DampingParams) -> Self {
        Composer {
            space,
            rank,
            results: BTreeMap::new(),
            damper: Damper::new(params),
        }
    }

    pub fn rank(&self) -> &[(String, String)] {
        &self.rank
    }

    pub fn damper(&mut self) -> &mut Damper {
        &mut self.damper
    }

    /// Records a verification result. A change against the previous result
    /// for the same pair counts as a flap of that CP.
    pub fn set_result(&mut self, requirement: &str, cp: &str, verified: HeaderSpace, now: u64) {
        let key = (requirement.to_string(), cp.to_string());
        let flapped = match self.results.get(&key) {
            Some(old) => !old.equal(&verified),
            None => false,
        };
        self.results.insert(key, verified);
        if flapped {
            self.damper.observe_flap(cp, now);
        }
    }

    /// Greedy preference-ordered cover of the managed space. Suppressed CPs
    /// are skipped; whatever remains uncovered is the drop residue.
    pub fn compose(&mut self, now: u64) -> CpAssignment {
        let mut remaining = self.space.clone();
        let mut pieces = Vec::new();
        for (req, cp) in self.rank.clone() {
            if remaining.is_empty() {
                break;
            }
            if self.damper.is_suppressed(&cp, now) {
                continue;
            }
            let Some(verified) = self.results.get(&(req.clone(), cp.clone())) else {
                continue;
            };
            let won = remaining.intersect(verified);
            if won.is_empty() {
                continue;
            }
            remaining = remaining.subtract(&won);
            pieces.push(AssignedPiece {
                space: won,
                requirement: req,
                cp,
            });
        }
        CpAssignment {
            pieces,
            residue: remaining,
        }
    }

    /// Builds the per-device tables realizing `assignment`: each device's
    /// composed FIB carries, for every assigned piece, the winning CP's
    /// entries restricted to that piece. Residue headers have no entry and
    /// fall to the implicit drop.
    pub fn emit_tables(
        &self,
        assignment: &CpAssignment,
        cps: &BTreeMap<String, BTreeMap<DeviceId, Fib>>,
    ) -> Result<BTreeMap<DeviceId, Fib>, ComposerError> {
        let mut out: BTreeMap<DeviceId, Fib> = BTreeMap::new();
        for piece in &assignment.pieces {
            let cp_fibs = cps
                .get(&piece.cp)
                .ok_or_else(|| ComposerError::UnknownCp(piece.cp.clone()))?;
            for (&device, fib) in cp_fibs {
                let target = out.entry(device).or_insert_with(|| Fib::new(device));
                for (hit, entry) in fib.lookup(&piece.space) {
                    if let Some(entry) = entry {
                        target.entries.push(FibEntry {
                            space: hit,
                            group: entry.group.clone(),
                            cond: entry.cond,
                            dst: entry.dst,
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// When several ingress devices could decide a requirement's composition,
/// the lowest device id leads.
pub fn elect_decider(ingresses: &[DeviceId]) -> Option<DeviceId> {
    ingresses.iter().copied().min()
}

/// How a fast-reroute virtual control plane responds to losing the link
/// `at -> failed`.
#[derive(Debug, Clone)]
pub enum FrrStrategy {
    /// Point the affected members at a different neighbor of `at`.
    AlternateNextHop { alt: DeviceId },
    /// Send the affected traffic through an intermediate device whose own
    /// plane carries it onward.
    Tunnel { via: DeviceId },
    /// Replace the device's whole table with another control plane's.
    CrossCp { from_cp: String },
}

/// Derives a virtual CP from `base` that pre-programs the response to the
/// failure of `at -> failed`. Conditional entries already carry their own
/// backup and are left untouched. The result is an ordinary CP: it gets
/// verified and ranked like any other.
pub fn derive_frr_cp(
    base: &BTreeMap<DeviceId, Fib>,
    all_cps: &BTreeMap<String, BTreeMap<DeviceId, Fib>>,
    at: DeviceId,
    failed: DeviceId,
    strategy: &FrrStrategy,
) -> Result<BTreeMap<DeviceId, Fib>, ComposerError> {
    let mut out = base.clone();
    let Some(fib) = out.get_mut(&at) else {
        return Ok(out);
    };
    match strategy {
        FrrStrategy::AlternateNextHop { alt } | FrrStrategy::Tunnel { via: alt } => {
            for entry in &mut fib.entries {
                if entry.cond.is_some() {
                    continue;
                }
                for m in &mut entry.group.members {
                    if m.target == HopTarget::Device(failed) {
                        m.target = HopTarget::Device(*alt);
                    }
                }
            }
        }
        FrrStrategy::CrossCp { from_cp } => {
            let other = all_cps
                .get(from_cp)
                .ok_or_else(|| ComposerError::UnknownCp(from_cp.clone()))?;
            let replacement = other
                .get(&at)
                .cloned()
                .unwrap_or_else(|| Fib::new(at));
            *fib = replacement;
        }
    }
    Ok(out)
}
