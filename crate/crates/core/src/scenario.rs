//! Scenario files and runners: the glue between the on-disk JSON formats and
//! the protocol engines.
//!
//! A scenario bundles a topology file, one or more FIB files, an optional
//! requirement program, and an event script. The runners here drive a full
//! run — build the DFA, the DV-Network, and the simulator, replay the script
//! with a quiescence phase per event — and return one deterministic
//! `serde_json::Value` report each, so the CLI can render text or JSON from
//! the same data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::composer::{elect_decider, Composer, ComposerError, DampingParams};
use crate::datamodel::{
    apply_fib_update, Conditional, DataModelError, DeviceId, Fib, FibEntry, FibSet, FibUpdate,
    GroupMode, HopTarget, LinkStateMap, NextHop, NextHopGroup, Topology,
};
use crate::dvnet::{build_product, DvNetError, DvNetwork};
use crate::dvp::{DvpConfig, DvpSim, Verdict};
use crate::fsd::{init_tables, tables_semantically_equal, FsdError, FsdSim};
use crate::hsa::{FieldLayout, HeaderRewrite, HeaderSpace, HsaError};
use crate::reqlang::{
    compile, parse_program, resolve_labels, Program, ReqError, Requirement, ResolvedRequirement,
    DEFAULT_STATE_BUDGET,
};
use crate::simharness::{DeliveryMode, Engine, SimError, Snapshot};

/// Divergence guard for a single quiescence phase.
const MAX_TICKS: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("scenario config: {0}")]
    Config(String),
    #[error(transparent)]
    Hsa(#[from] HsaError),
    #[error(transparent)]
    Data(#[from] DataModelError),
    #[error(transparent)]
    Req(#[from] ReqError),
    #[error(transparent)]
    DvNet(#[from] DvNetError),
    #[error(transparent)]
    Fsd(#[from] FsdError),
    #[error(transparent)]
    Composer(#[from] ComposerError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn bad_json(e: serde_json::Error) -> ScenarioError {
    ScenarioError::Config(format!("invalid JSON: {e}"))
}

/// Prefixes an error with the file it came from; `Io`/`Json` already carry
/// their path and pass through untouched.
fn at_path(err: ScenarioError, path: &Path) -> ScenarioError {
    match err {
        e @ (ScenarioError::Io { .. } | ScenarioError::Json { .. }) => e,
        other => ScenarioError::Config(format!("{}: {other}", path.display())),
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct TopologyFile {
    width: u16,
    #[serde(default)]
    fields: BTreeMap<String, (u16, u16)>,
    devices: Vec<DeviceFile>,
    #[serde(default)]
    links: Vec<(String, String)>,
}

#[derive(Debug, Deserialize)]
struct DeviceFile {
    id: String,
    #[serde(default)]
    labels: Vec<String>,
}

/// device → control plane → entries.
type FibFile = BTreeMap<String, BTreeMap<String, Vec<EntryFile>>>;

#[derive(Debug, Deserialize)]
struct EntryFile {
    #[serde(rename = "match")]
    space: String,
    #[serde(default)]
    mode: Option<String>,
    nexthops: Vec<NextHopFile>,
    #[serde(default)]
    dst: Option<String>,
    #[serde(default)]
    cond: Option<CondFile>,
}

#[derive(Debug, Deserialize)]
struct NextHopFile {
    dev: String,
    #[serde(default)]
    rewrite: Option<RewriteFile>,
}

/// A rewrite is either a `{0,1,*}` pattern over the whole header or a map of
/// whole-field assignments.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RewriteFile {
    Pattern(String),
    Fields(BTreeMap<String, String>),
}

#[derive(Debug, Deserialize)]
struct CondFile {
    primary: String,
    backup: String,
}

#[derive(Debug, Deserialize)]
struct EventFile {
    t: u64,
    kind: String,
    #[serde(default)]
    a: Option<String>,
    #[serde(default)]
    b: Option<String>,
    /// Link events hit the whole cable unless marked directed.
    #[serde(default)]
    directed: bool,
    #[serde(default)]
    device: Option<String>,
    #[serde(default)]
    cp: Option<String>,
    #[serde(default)]
    space: Option<String>,
    #[serde(default)]
    entry: Option<EntryFile>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn paths(&self) -> Vec<&str> {
        match self {
            OneOrMany::One(p) => vec![p.as_str()],
            OneOrMany::Many(ps) => ps.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ScenarioFile {
    topology: String,
    fibs: OneOrMany,
    #[serde(default, alias = "cpspec")]
    requirements: Option<String>,
    #[serde(default)]
    script: Option<String>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    delivery_mode: Option<String>,
    /// Source devices for requirements that do not name their own.
    #[serde(default)]
    ingresses: Vec<String>,
    #[serde(default)]
    strict_any: bool,
    /// Per-device required next-hop coverage (degenerate local-contract mode).
    #[serde(default)]
    coverage: BTreeMap<String, Vec<String>>,
    /// Requirement names handled by FIB-state distribution, not by DV-nets.
    #[serde(default)]
    delegated: Vec<String>,
    /// Which control plane the `fsd` runner distributes; defaults to the
    /// only one.
    #[serde(default)]
    fsd_cp: Option<String>,
}

// ---------------------------------------------------------------------------
// Loaded scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum ScriptEvent {
    Link {
        a: DeviceId,
        b: DeviceId,
        up: bool,
        cable: bool,
    },
    Fib {
        /// `None` applies to every control plane.
        cp: Option<String>,
        device: DeviceId,
        update: FibUpdate,
    },
}

#[derive(Debug, Clone)]
pub struct TimedEvent {
    pub t: u64,
    pub kind: String,
    pub event: ScriptEvent,
}

pub struct Scenario {
    pub topo: Topology,
    pub fibs: FibSet,
    pub program: Option<Program>,
    pub script: Vec<TimedEvent>,
    pub seed: u64,
    pub delivery: DeliveryMode,
    pub ingresses: Vec<DeviceId>,
    pub strict_any: bool,
    pub coverage: BTreeMap<DeviceId, BTreeSet<DeviceId>>,
    pub delegated: BTreeSet<String>,
    pub fsd_cp: Option<String>,
}

pub fn parse_topology(text: &str) -> Result<Topology, ScenarioError> {
    let file: TopologyFile = serde_json::from_str(text).map_err(bad_json)?;
    let mut layout = FieldLayout::new(file.width)?;
    for (name, (lo, hi)) in &file.fields {
        layout = layout.with_field(name, *lo, *hi)?;
    }
    let mut topo = Topology::new(layout);
    for dev in &file.devices {
        let labels: Vec<&str> = dev.labels.iter().map(String::as_str).collect();
        topo.add_device(&dev.id, &labels)?;
    }
    for (from, to) in &file.links {
        let f = topo.device(from)?;
        let t = topo.device(to)?;
        topo.add_link(f, t)?;
    }
    Ok(topo)
}

pub fn parse_fibs(text: &str, topo: &Topology) -> Result<FibSet, ScenarioError> {
    let file: FibFile = serde_json::from_str(text).map_err(bad_json)?;
    let mut by_cp: BTreeMap<String, BTreeMap<DeviceId, Fib>> = BTreeMap::new();
    for (device_name, cps) in &file {
        let owner = topo.device(device_name)?;
        for (cp, entries) in cps {
            let fib = by_cp
                .entry(cp.clone())
                .or_default()
                .entry(owner)
                .or_insert_with(|| Fib::new(owner));
            for entry in entries {
                fib.entries.push(convert_entry(entry, owner, topo)?);
            }
        }
    }
    let set = FibSet { by_cp };
    set.validate(topo)?;
    Ok(set)
}

/// `OFFNET`, and any real device that is not a neighbor of `owner`, both map
/// to off-network forwarding; a name that is no device at all is a config
/// error, not a silent drop.
fn hop_target(name: &str, owner: DeviceId, topo: &Topology) -> Result<HopTarget, ScenarioError> {
    if name == "OFFNET" {
        return Ok(HopTarget::Offnet);
    }
    let dev = topo.device(name)?;
    if dev == owner || topo.has_link(owner, dev) {
        Ok(HopTarget::Device(dev))
    } else {
        Ok(HopTarget::Offnet)
    }
}

fn convert_entry(
    file: &EntryFile,
    owner: DeviceId,
    topo: &Topology,
) -> Result<FibEntry, ScenarioError> {
    let space = HeaderSpace::parse(&file.space, topo.layout())?;
    let mode = match file.mode.as_deref() {
        None | Some("any") => GroupMode::Any,
        Some("all") => GroupMode::All,
        Some(other) => {
            return Err(ScenarioError::Config(format!(
                "unknown group mode `{other}` (expected any|all)"
            )))
        }
    };
    let mut members = Vec::new();
    for hop in &file.nexthops {
        let rewrite = match &hop.rewrite {
            None => HeaderRewrite::identity(topo.width()),
            Some(RewriteFile::Pattern(p)) => {
                let rw = HeaderRewrite::parse_pattern(p)?;
                if rw.width() != topo.width() {
                    return Err(ScenarioError::Config(format!(
                        "rewrite `{p}` is {} bits wide, the topology is {}",
                        rw.width(),
                        topo.width()
                    )));
                }
                rw
            }
            Some(RewriteFile::Fields(f)) => HeaderRewrite::from_fields(topo.layout(), f)?,
        };
        members.push(NextHop {
            target: hop_target(&hop.dev, owner, topo)?,
            rewrite,
        });
    }
    if members.is_empty() {
        return Err(ScenarioError::Config(format!(
            "entry `{}` has no next hops",
            file.space
        )));
    }
    let dst = file.dst.as_deref().map(|d| topo.device(d)).transpose()?;
    let cond = file
        .cond
        .as_ref()
        .map(|c| {
            Ok::<_, ScenarioError>(Conditional {
                primary: topo.device(&c.primary)?,
                backup: topo.device(&c.backup)?,
            })
        })
        .transpose()?;
    Ok(FibEntry {
        space,
        group: NextHopGroup { mode, members },
        cond,
        dst,
    })
}

fn need<'a, T>(opt: &'a Option<T>, field: &str, kind: &str) -> Result<&'a T, ScenarioError> {
    opt.as_ref().ok_or_else(|| {
        ScenarioError::Config(format!("event kind `{kind}` needs a `{field}` field"))
    })
}

pub fn parse_script(text: &str, topo: &Topology) -> Result<Vec<TimedEvent>, ScenarioError> {
    let file: Vec<EventFile> = serde_json::from_str(text).map_err(bad_json)?;
    let mut events = Vec::new();
    for ev in &file {
        let event = match ev.kind.as_str() {
            "link_down" | "link_up" => {
                let a = topo.device(need(&ev.a, "a", &ev.kind)?)?;
                let b = topo.device(need(&ev.b, "b", &ev.kind)?)?;
                ScriptEvent::Link {
                    a,
                    b,
                    up: ev.kind == "link_up",
                    cable: !ev.directed,
                }
            }
            "fib_insert" | "fib_delete" | "fib_modify" => {
                let device = topo.device(need(&ev.device, "device", &ev.kind)?)?;
                let update = match ev.kind.as_str() {
                    "fib_insert" => {
                        FibUpdate::Insert(convert_entry(need(&ev.entry, "entry", &ev.kind)?, device, topo)?)
                    }
                    "fib_delete" => FibUpdate::Delete {
                        space: HeaderSpace::parse(need(&ev.space, "space", &ev.kind)?, topo.layout())?,
                    },
                    _ => FibUpdate::Modify {
                        space: HeaderSpace::parse(need(&ev.space, "space", &ev.kind)?, topo.layout())?,
                        entry: convert_entry(need(&ev.entry, "entry", &ev.kind)?, device, topo)?,
                    },
                };
                ScriptEvent::Fib {
                    cp: ev.cp.clone(),
                    device,
                    update,
                }
            }
            other => {
                return Err(ScenarioError::Config(format!(
                    "unknown event kind `{other}`"
                )))
            }
        };
        events.push(TimedEvent {
            t: ev.t,
            kind: ev.kind.clone(),
            event,
        });
    }
    // Stable: same-t events keep file order.
    events.sort_by_key(|e| e.t);
    Ok(events)
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a scenario file and everything it references; relative paths are
/// taken from the scenario file's directory. When several FIB files define
/// the same (control plane, device), the later file wins.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = read(path)?;
    let file: ScenarioFile =
        serde_json::from_str(&text).map_err(|source| ScenarioError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));

    let topo_path = dir.join(&file.topology);
    let topo = parse_topology(&read(&topo_path)?).map_err(|e| at_path(e, &topo_path))?;

    let mut fibs = FibSet {
        by_cp: BTreeMap::new(),
    };
    for rel in file.fibs.paths() {
        let p = dir.join(rel);
        let set = parse_fibs(&read(&p)?, &topo).map_err(|e| at_path(e, &p))?;
        for (cp, m) in set.by_cp {
            fibs.by_cp.entry(cp).or_default().extend(m);
        }
    }
    fibs.validate(&topo)?;

    let program = match &file.requirements {
        Some(rel) => {
            let p = dir.join(rel);
            Some(
                parse_program(&read(&p)?)
                    .map_err(|e| at_path(ScenarioError::from(e), &p))?,
            )
        }
        None => None,
    };

    let script = match &file.script {
        Some(rel) => {
            let p = dir.join(rel);
            parse_script(&read(&p)?, &topo).map_err(|e| at_path(e, &p))?
        }
        None => Vec::new(),
    };

    let delivery = match file.delivery_mode.as_deref() {
        None | Some("fifo") => DeliveryMode::Fifo,
        Some("reorder") => DeliveryMode::reorder(),
        Some(other) => {
            return Err(ScenarioError::Config(format!(
                "unknown delivery mode `{other}` (expected fifo|reorder)"
            )))
        }
    };

    let ingresses = file
        .ingresses
        .iter()
        .map(|n| topo.device(n))
        .collect::<Result<Vec<_>, _>>()?;
    let coverage = file
        .coverage
        .iter()
        .map(|(d, hops)| {
            let dev = topo.device(d)?;
            let set = hops
                .iter()
                .map(|h| topo.device(h))
                .collect::<Result<BTreeSet<_>, _>>()?;
            Ok((dev, set))
        })
        .collect::<Result<BTreeMap<_, _>, DataModelError>>()?;

    Ok(Scenario {
        topo,
        fibs,
        program,
        script,
        seed: file.seed,
        delivery,
        ingresses,
        strict_any: file.strict_any,
        coverage,
        delegated: file.delegated.into_iter().collect(),
        fsd_cp: file.fsd_cp,
    })
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

/// The byte proxy: one wildcard word costs ceil(width / 4) bytes.
fn bytes_per_word(topo: &Topology) -> u64 {
    (topo.width() as u64 + 3) / 4
}

fn verdict_json(v: &Verdict) -> Value {
    json!({
        "verified": v.verified.to_string(),
        "violated": v.violated.to_string(),
        "holds": v.violated.is_empty(),
    })
}

fn cp_fibs(sc: &Scenario, cp: &str) -> BTreeMap<DeviceId, Fib> {
    sc.topo
        .device_ids()
        .map(|d| (d, sc.fibs.fib_or_empty(cp, d)))
        .collect()
}

/// Sources for a requirement: an explicit `[src]:` selector wins; otherwise
/// the scenario's declared ingress set; otherwise the path's leading label.
fn resolve_with_ingresses(
    req: &Requirement,
    sc: &Scenario,
) -> Result<ResolvedRequirement, ScenarioError> {
    if req.sources.is_none() && !sc.ingresses.is_empty() {
        let mut named = req.clone();
        named.sources = Some(sc.topo.name(sc.ingresses[0]).to_string());
        let mut resolved = resolve_labels(&named, &sc.topo)?;
        resolved.sources = sc.ingresses.clone();
        Ok(resolved)
    } else {
        Ok(resolve_labels(req, &sc.topo)?)
    }
}

/// Applies one scripted event to a dvp engine and runs it to quiescence.
/// FIB events tagged for another control plane are skipped (the phase is
/// still recorded, with nothing in flight).
fn apply_dvp_event(
    eng: &mut Engine<DvpSim>,
    ev: &TimedEvent,
    cp: &str,
) -> Result<(), ScenarioError> {
    match &ev.event {
        ScriptEvent::Link { a, b, up, cable } => {
            let outs = eng.proto.on_link_event(*a, *b, *up, *cable);
            eng.inject(outs);
        }
        ScriptEvent::Fib {
            cp: evcp,
            device,
            update,
        } => {
            if evcp.as_deref().map_or(true, |c| c == cp) {
                let outs = eng.proto.on_fib_update(*device, update)?;
                eng.inject(outs);
            }
        }
    }
    eng.run_to_quiescence(&format!("t{}:{}", ev.t, ev.kind), MAX_TICKS)?;
    Ok(())
}

fn dvp_engine(
    sc: &Scenario,
    cp_fibs: &BTreeMap<DeviceId, Fib>,
    dfa_net: DvNetwork,
    bpw: u64,
) -> Result<Engine<DvpSim>, ScenarioError> {
    let cfg = DvpConfig {
        strict_any: sc.strict_any,
        coverage: sc.coverage.clone(),
    };
    let sim = DvpSim::new(
        dfa_net,
        sc.topo.clone(),
        cp_fibs.clone(),
        LinkStateMap::new(),
        cfg,
    );
    let mut eng = Engine::new(sim, sc.delivery, sc.seed, bpw);
    let outs = eng.proto.init();
    eng.inject(outs);
    eng.run_to_quiescence("init", MAX_TICKS)?;
    Ok(eng)
}

/// Runs every (non-delegated requirement × control plane × source) instance
/// through the whole script, with a verdict at every quiescent point.
pub fn run_verify(sc: &Scenario, dump_dag: bool) -> Result<Value, ScenarioError> {
    let program = sc.program.as_ref().ok_or_else(|| {
        ScenarioError::Config("verify needs a requirements file in the scenario".into())
    })?;
    let cps: Vec<String> = sc.fibs.cps().map(str::to_string).collect();
    if cps.is_empty() {
        return Err(ScenarioError::Config(
            "no control planes in the FIB files".into(),
        ));
    }
    let bpw = bytes_per_word(&sc.topo);
    let mut rows = Vec::new();
    for (name, req) in program.requirements() {
        if sc.delegated.contains(name) {
            continue;
        }
        let resolved = resolve_with_ingresses(req, sc)?;
        let dfa = compile(&resolved, &sc.topo, DEFAULT_STATE_BUDGET)?;
        for cp in &cps {
            let fibs = cp_fibs(sc, cp);
            for &source in &resolved.sources {
                let net = build_product(&sc.topo, &dfa, source, DEFAULT_STATE_BUDGET)?;
                let mut eng = dvp_engine(sc, &fibs, net, bpw)?;
                let initial = eng.when_quiescent(|p| p.verdict(&resolved.space))?;
                let mut steps = Vec::new();
                for ev in &sc.script {
                    apply_dvp_event(&mut eng, ev, cp)?;
                    let v = eng.when_quiescent(|p| p.verdict(&resolved.space))?;
                    steps.push(json!({
                        "t": ev.t,
                        "kind": ev.kind,
                        "verdict": verdict_json(&v),
                    }));
                }
                let final_v = eng.when_quiescent(|p| p.verdict(&resolved.space))?;
                let mut row = json!({
                    "requirement": name,
                    "cp": cp,
                    "source": sc.topo.name(source),
                    "space": resolved.space.to_string(),
                    "nodes": eng.proto.net().node_count(),
                    "initial": verdict_json(&initial),
                    "steps": steps,
                    "final": verdict_json(&final_v),
                    "record_bytes": eng.proto.record_bytes(bpw),
                    "metrics": serde_json::to_value(eng.metrics()).expect("metrics serialize"),
                });
                if dump_dag {
                    row["dvnet"] = render_dvnet(eng.proto.net(), &sc.topo);
                }
                rows.push(row);
            }
        }
    }
    Ok(json!({ "command": "verify", "rows": rows }))
}

fn render_dvnet(net: &DvNetwork, topo: &Topology) -> Value {
    let nodes: Vec<Value> = net
        .ids()
        .map(|x| {
            let n = net.node(x);
            json!({
                "id": x.0,
                "device": topo.name(n.device),
                "state": n.state,
                "sink": n.is_sink,
            })
        })
        .collect();
    let mut edges = Vec::new();
    for x in net.ids() {
        for &y in net.out(x) {
            edges.push(json!([x.0, y.0]));
        }
    }
    json!({
        "root": net.root().0,
        "sinks": net.sinks().iter().map(|s| s.0).collect::<Vec<_>>(),
        "degenerate": net.is_degenerate(),
        "nodes": nodes,
        "edges": edges,
    })
}

/// Final FIB state of one control plane after the whole script.
fn cp_fibs_after_script(
    sc: &Scenario,
    cp: &str,
) -> Result<BTreeMap<DeviceId, Fib>, ScenarioError> {
    let mut fibs = cp_fibs(sc, cp);
    for ev in &sc.script {
        if let ScriptEvent::Fib {
            cp: evcp,
            device,
            update,
        } = &ev.event
        {
            if evcp.as_deref().map_or(true, |c| c == cp) {
                let fib = fibs.get_mut(device).expect("every device has a fib");
                let (next, _) = apply_fib_update(fib, &sc.topo, update)?;
                *fib = next;
            }
        }
    }
    Ok(fibs)
}

/// Verifies every ranked (requirement, control plane) pair over the full
/// script, feeds the final verified spaces to the composer, and emits the
/// composed tables from the final FIB state.
pub fn run_compose(sc: &Scenario) -> Result<Value, ScenarioError> {
    let program = sc.program.as_ref().ok_or_else(|| {
        ScenarioError::Config("compose needs a requirements file in the scenario".into())
    })?;
    let spec = program.cpspec.as_ref().ok_or_else(|| {
        ScenarioError::Config("compose needs a cpspec block in the requirements file".into())
    })?;
    let space = spec.space.eval_space(sc.topo.layout())?;
    let bpw = bytes_per_word(&sc.topo);
    let now = sc.script.last().map(|e| e.t).unwrap_or(0);
    let mut composer = Composer::new(space.clone(), spec.rank.clone(), DampingParams::default());
    let mut results = Vec::new();
    for (req_name, cp_name) in &spec.rank {
        let req = program.requirement(req_name).ok_or_else(|| {
            ScenarioError::Config(format!("cpspec ranks unknown requirement `{req_name}`"))
        })?;
        if !sc.fibs.by_cp.contains_key(cp_name) {
            return Err(ScenarioError::Config(format!(
                "cpspec ranks unknown control plane `{cp_name}`"
            )));
        }
        let resolved = resolve_with_ingresses(req, sc)?;
        let dfa = compile(&resolved, &sc.topo, DEFAULT_STATE_BUDGET)?;
        let query = space.intersect(&resolved.space);
        let fibs = cp_fibs(sc, cp_name);
        let mut verified = query.clone();
        for &source in &resolved.sources {
            let net = build_product(&sc.topo, &dfa, source, DEFAULT_STATE_BUDGET)?;
            let mut eng = dvp_engine(sc, &fibs, net, bpw)?;
            for ev in &sc.script {
                apply_dvp_event(&mut eng, ev, cp_name)?;
            }
            let v = eng.when_quiescent(|p| p.verdict(&query))?;
            verified = verified.intersect(&v.verified);
        }
        composer.set_result(req_name, cp_name, verified.clone(), now);
        results.push(json!({
            "requirement": req_name,
            "cp": cp_name,
            "verified": verified.to_string(),
        }));
    }
    let assignment = composer.compose(now);
    let mut final_fibs: BTreeMap<String, BTreeMap<DeviceId, Fib>> = BTreeMap::new();
    for cp in sc.fibs.by_cp.keys() {
        final_fibs.insert(cp.clone(), cp_fibs_after_script(sc, cp)?);
    }
    let tables = composer.emit_tables(&assignment, &final_fibs)?;
    let decider = elect_decider(&sc.ingresses).map(|d| sc.topo.name(d).to_string());
    Ok(json!({
        "command": "compose",
        "space": space.to_string(),
        "rank": spec.rank,
        "results": results,
        "assignment": {
            "pieces": assignment.pieces.iter().map(|p| json!({
                "space": p.space.to_string(),
                "requirement": p.requirement,
                "cp": p.cp,
            })).collect::<Vec<_>>(),
            "residue": assignment.residue.to_string(),
        },
        "decider": decider,
        "tables": render_fibs(&tables, &sc.topo),
    }))
}

fn render_fibs(fibs: &BTreeMap<DeviceId, Fib>, topo: &Topology) -> Value {
    let mut out = serde_json::Map::new();
    for (&dev, fib) in fibs {
        let entries: Vec<Value> = fib.entries.iter().map(|e| render_entry(e, topo)).collect();
        out.insert(topo.name(dev).to_string(), Value::Array(entries));
    }
    Value::Object(out)
}

fn render_entry(e: &FibEntry, topo: &Topology) -> Value {
    let mut obj = serde_json::Map::new();
    obj.insert("match".into(), Value::String(e.space.to_string()));
    if e.group.mode == GroupMode::All {
        obj.insert("mode".into(), json!("all"));
    }
    let hops: Vec<Value> = e
        .group
        .members
        .iter()
        .map(|m| {
            let mut h = serde_json::Map::new();
            let dev = match m.target {
                HopTarget::Device(d) => topo.name(d).to_string(),
                HopTarget::Offnet => "OFFNET".to_string(),
            };
            h.insert("dev".into(), Value::String(dev));
            if !m.rewrite.is_identity() {
                h.insert("rewrite".into(), Value::String(m.rewrite.to_string()));
            }
            Value::Object(h)
        })
        .collect();
    obj.insert("nexthops".into(), Value::Array(hops));
    if let Some(d) = e.dst {
        obj.insert("dst".into(), Value::String(topo.name(d).to_string()));
    }
    if let Some(c) = e.cond {
        obj.insert(
            "cond".into(),
            json!({ "primary": topo.name(c.primary), "backup": topo.name(c.backup) }),
        );
    }
    Value::Object(obj)
}

/// Distributes one control plane's FIB state over the staged protocol,
/// replaying the script with per-stage message counts, and checks the final
/// tables against a from-scratch initialization.
pub fn run_fsd(sc: &Scenario) -> Result<Value, ScenarioError> {
    let cps: Vec<String> = sc.fibs.cps().map(str::to_string).collect();
    let cp = match (&sc.fsd_cp, cps.len()) {
        (Some(c), _) => {
            if !cps.iter().any(|x| x == c) {
                return Err(ScenarioError::Config(format!(
                    "fsd_cp `{c}` is not in the FIB files"
                )));
            }
            c.clone()
        }
        (None, 1) => cps[0].clone(),
        (None, 0) => {
            return Err(ScenarioError::Config(
                "no control planes in the FIB files".into(),
            ))
        }
        (None, _) => {
            return Err(ScenarioError::Config(
                "several control planes; set fsd_cp in the scenario".into(),
            ))
        }
    };
    let fibs = cp_fibs(sc, &cp);
    let sim = FsdSim::new(sc.topo.clone(), fibs, LinkStateMap::new())?;
    let mut eng = Engine::new(sim, sc.delivery, sc.seed, bytes_per_word(&sc.topo));
    let mut stages = Vec::new();
    for ev in &sc.script {
        let outs = match &ev.event {
            ScriptEvent::Link { a, b, up, cable } => {
                eng.proto.on_link_event(*a, *b, *up, *cable)?
            }
            ScriptEvent::Fib {
                cp: evcp,
                device,
                update,
            } => {
                if evcp.as_deref().map_or(true, |c| c == cp) {
                    eng.proto.on_rule_change(*device, update)?
                } else {
                    Vec::new()
                }
            }
        };
        eng.inject(outs);
        eng.run_to_quiescence(&format!("t{}:{}", ev.t, ev.kind), MAX_TICKS)?;
        let counts = eng.proto.take_counts();
        stages.push(json!({
            "t": ev.t,
            "kind": ev.kind,
            "counts": serde_json::to_value(counts).expect("counts serialize"),
        }));
    }
    eng.when_quiescent(|p| p.check_settled())??;
    let fresh = init_tables(eng.proto.topo(), eng.proto.links(), eng.proto.fibs())?;
    let consistent = tables_semantically_equal(eng.proto.tables(), &fresh);
    let tables = eng.when_quiescent(|p| p.snapshot())?;
    Ok(json!({
        "command": "fsd",
        "cp": cp,
        "stages": stages,
        "consistent": consistent,
        "tables": tables,
        "metrics": serde_json::to_value(eng.metrics()).expect("metrics serialize"),
    }))
}
