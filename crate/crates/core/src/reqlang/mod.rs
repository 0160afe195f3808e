//! Requirement language: packet-space predicates plus path sets.
//!
//! A requirement pairs a packet-space predicate with a path-set expression:
//! the packets in the space must traverse paths in the set. Path sets are
//! regexes over `[label]` device atoms (`[^label]` complements, `.` matches
//! any device) combined with ∩/∪; `loopfree` is a builtin expanding to the
//! intersection, over every device x, of `[^x]* ∪ [^x]*[x][^x]*` — no device
//! seen twice. Programs bind names to predicates, path sets, and requirements
//! and may carry one `cpspec` block ranking requirements across control
//! planes.
//!
//! Compilation goes regex → Thompson NFA → subset DFA → dead-state pruning,
//! with ∩/∪ done as DFA products. DFAs are never minimized (DV-node identity
//! tracks the constructed states) and construction aborts past a state
//! budget.

mod dfa;
mod parse;

pub use dfa::PathDfa;

use std::fmt;

use thiserror::Error;

use crate::datamodel::{DeviceId, Topology};
use crate::hsa::{FieldLayout, HeaderSpace, HsaError};

use dfa::{DevSet, Nfa};
use parse::{Parser, RawExpr, RawItem};

/// Upper bound on DFA states during any construction step.
pub const DEFAULT_STATE_BUDGET: usize = 100_000;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ReqError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: u32,
        col: u32,
        message: String,
    },
    #[error("unknown name {0:?}")]
    UnknownName(String),
    #[error("duplicate definition of {0:?}")]
    DuplicateName(String),
    #[error("type error: {0}")]
    TypeMismatch(String),
    #[error("unknown field {0:?} in predicate")]
    UnknownField(String),
    #[error(transparent)]
    Hsa(HsaError),
    #[error("path DFA exceeds the state budget of {budget} (reached {reached})")]
    StateBudget { budget: usize, reached: usize },
    #[error("requirement has no resolvable source: {0}")]
    MissingSources(String),
    #[error("program has no cpspec block")]
    NoCpSpec,
}

impl From<HsaError> for ReqError {
    fn from(e: HsaError) -> Self {
        match e {
            HsaError::UnknownField(f) => ReqError::UnknownField(f),
            other => ReqError::Hsa(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
}

/// Packet-space predicate over header fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PacketSpacePred {
    /// The whole header space (builtin name `any`).
    Any,
    Cmp {
        field: String,
        op: CmpOp,
        value: String,
    },
    And(Box<PacketSpacePred>, Box<PacketSpacePred>),
    Or(Box<PacketSpacePred>, Box<PacketSpacePred>),
}

impl PacketSpacePred {
    fn prec(&self) -> u8 {
        match self {
            PacketSpacePred::Any | PacketSpacePred::Cmp { .. } => 3,
            PacketSpacePred::And(..) => 2,
            PacketSpacePred::Or(..) => 1,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let parens = self.prec() < min;
        if parens {
            write!(f, "(")?;
        }
        match self {
            PacketSpacePred::Any => write!(f, "any")?,
            PacketSpacePred::Cmp { field, op, value } => {
                let op = match op {
                    CmpOp::Eq => "=",
                    CmpOp::Ne => "≠",
                };
                write!(f, "({field} {op} {value})")?;
            }
            PacketSpacePred::And(l, r) => {
                l.fmt_prec(f, 2)?;
                write!(f, " ∩ ")?;
                r.fmt_prec(f, 2)?;
            }
            PacketSpacePred::Or(l, r) => {
                l.fmt_prec(f, 1)?;
                write!(f, " ∪ ")?;
                r.fmt_prec(f, 1)?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }

    /// The header space the predicate denotes under `layout`.
    pub fn eval_space(&self, layout: &FieldLayout) -> Result<HeaderSpace, ReqError> {
        match self {
            PacketSpacePred::Any => Ok(HeaderSpace::full(layout.width())),
            PacketSpacePred::Cmp { field, op, value } => {
                let word = layout.field_word(field, value)?;
                let space = HeaderSpace::from_word(word);
                match op {
                    CmpOp::Eq => Ok(space),
                    CmpOp::Ne => Ok(HeaderSpace::full(layout.width()).subtract(&space)),
                }
            }
            PacketSpacePred::And(l, r) => {
                Ok(l.eval_space(layout)?.intersect(&r.eval_space(layout)?))
            }
            PacketSpacePred::Or(l, r) => Ok(l.eval_space(layout)?.union(&r.eval_space(layout)?)),
        }
    }
}

impl fmt::Display for PacketSpacePred {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// Path-set expression: a regex over device atoms with set combinators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathSetExpr {
    Label { atom: String, negate: bool },
    AnyDev,
    LoopFree,
    Concat(Box<PathSetExpr>, Box<PathSetExpr>),
    Alt(Box<PathSetExpr>, Box<PathSetExpr>),
    Inter(Box<PathSetExpr>, Box<PathSetExpr>),
    Star(Box<PathSetExpr>),
    Plus(Box<PathSetExpr>),
    Opt(Box<PathSetExpr>),
}

impl PathSetExpr {
    fn prec(&self) -> u8 {
        match self {
            PathSetExpr::Label { .. } | PathSetExpr::AnyDev | PathSetExpr::LoopFree => 5,
            PathSetExpr::Star(..) | PathSetExpr::Plus(..) | PathSetExpr::Opt(..) => 4,
            PathSetExpr::Concat(..) => 3,
            PathSetExpr::Inter(..) => 2,
            PathSetExpr::Alt(..) => 1,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let parens = self.prec() < min;
        if parens {
            write!(f, "(")?;
        }
        match self {
            PathSetExpr::Label { atom, negate } => {
                if *negate {
                    write!(f, "[^{atom}]")?;
                } else {
                    write!(f, "[{atom}]")?;
                }
            }
            PathSetExpr::AnyDev => write!(f, ".")?,
            PathSetExpr::LoopFree => write!(f, "loopfree")?,
            PathSetExpr::Concat(l, r) => {
                l.fmt_prec(f, 3)?;
                r.fmt_prec(f, 4)?;
            }
            PathSetExpr::Inter(l, r) => {
                l.fmt_prec(f, 2)?;
                write!(f, " ∩ ")?;
                r.fmt_prec(f, 2)?;
            }
            PathSetExpr::Alt(l, r) => {
                l.fmt_prec(f, 1)?;
                write!(f, " ∪ ")?;
                r.fmt_prec(f, 1)?;
            }
            PathSetExpr::Star(e) => {
                e.fmt_prec(f, 5)?;
                write!(f, "*")?;
            }
            PathSetExpr::Plus(e) => {
                e.fmt_prec(f, 5)?;
                write!(f, "+")?;
            }
            PathSetExpr::Opt(e) => {
                e.fmt_prec(f, 5)?;
                write!(f, "?")?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }

    /// True when the expression is a plain regex: no ∩ and no `loopfree`.
    /// Only pure subtrees may sit under concatenation or repetition.
    fn is_pure(&self) -> bool {
        match self {
            PathSetExpr::Label { .. } | PathSetExpr::AnyDev => true,
            PathSetExpr::LoopFree | PathSetExpr::Inter(..) => false,
            PathSetExpr::Concat(l, r) | PathSetExpr::Alt(l, r) => l.is_pure() && r.is_pure(),
            PathSetExpr::Star(e) | PathSetExpr::Plus(e) | PathSetExpr::Opt(e) => e.is_pure(),
        }
    }
}

impl fmt::Display for PathSetExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// A named or standalone requirement: packets in `pred` must follow paths in
/// `path`, starting at `sources` (explicit, or inferred from the path's
/// leading label).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Requirement {
    pub sources: Option<String>,
    pub pred: PacketSpacePred,
    pub path: PathSetExpr,
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sources {
            Some(s) => write!(f, "([{s}]: {}) -> {}", self.pred, self.path),
            None => write!(f, "({}, {})", self.pred, self.path),
        }
    }
}

/// What a program definition binds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Binding {
    Pred(PacketSpacePred),
    Path(PathSetExpr),
    Req(Requirement),
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binding::Pred(p) => p.fmt(f),
            Binding::Path(p) => p.fmt(f),
            Binding::Req(r) => r.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsistencyMode {
    Eventual,
    /// Accepted but unimplemented stronger mode; kept as a labeled stub.
    Stub(String),
}

/// Composition spec: the covered packet space and the preference order of
/// (requirement, control-plane) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpSpec {
    pub space: PacketSpacePred,
    pub rank: Vec<(String, String)>,
    pub option: ConsistencyMode,
}

impl fmt::Display for CpSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cpspec {{ space: {}; rank: [", self.space)?;
        for (i, (req, cp)) in self.rank.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "({req}, {cp})")?;
        }
        let option = match &self.option {
            ConsistencyMode::Eventual => "eventual",
            ConsistencyMode::Stub(s) => s,
        };
        write!(f, "]; option: {option}; }}")
    }
}

#[derive(Debug, Default, Clone)]
struct RawCpSpec {
    space: Option<RawExpr>,
    rank: Vec<(String, String)>,
    option: Option<String>,
}

/// A parsed program: ordered definitions plus an optional cpspec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub defs: Vec<(String, Binding)>,
    pub cpspec: Option<CpSpec>,
}

impl Program {
    pub fn binding(&self, name: &str) -> Option<&Binding> {
        self.defs.iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    pub fn requirement(&self, name: &str) -> Option<&Requirement> {
        match self.binding(name) {
            Some(Binding::Req(r)) => Some(r),
            _ => None,
        }
    }

    pub fn requirements(&self) -> impl Iterator<Item = (&str, &Requirement)> {
        self.defs.iter().filter_map(|(n, b)| match b {
            Binding::Req(r) => Some((n.as_str(), r)),
            _ => None,
        })
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, binding) in &self.defs {
            writeln!(f, "{name} = {binding}")?;
        }
        if let Some(spec) = &self.cpspec {
            writeln!(f, "{spec}")?;
        }
        Ok(())
    }
}

/// Parses a full program: definitions and at most one cpspec block.
pub fn parse_program(text: &str) -> Result<Program, ReqError> {
    let items = Parser::new(text)?.parse_items()?;
    let mut defs: Vec<(String, Binding)> = Vec::new();
    let mut cpspec = None;
    for item in items {
        match item {
            RawItem::Def { name, expr, .. } => {
                if defs.iter().any(|(n, _)| *n == name) {
                    return Err(ReqError::DuplicateName(name));
                }
                let binding = lower(&expr, &defs)?;
                defs.push((name, binding));
            }
            RawItem::CpSpec(raw) => {
                if cpspec.is_some() {
                    return Err(ReqError::DuplicateName("cpspec".into()));
                }
                cpspec = Some(lower_cpspec(raw, &defs)?);
            }
        }
    }
    Ok(Program { defs, cpspec })
}

/// Parses one standalone requirement (`pred -> path`, `([S]: pred) -> path`,
/// or `(pred, path)`).
pub fn parse_requirement(text: &str) -> Result<Requirement, ReqError> {
    let program = format!("r = {text}");
    let parsed = parse_program(&program)?;
    match parsed.binding("r") {
        Some(Binding::Req(r)) => Ok(r.clone()),
        Some(_) => Err(ReqError::TypeMismatch(
            "expected a requirement (pred -> path)".into(),
        )),
        None => Err(ReqError::TypeMismatch("empty requirement".into())),
    }
}

/// Parses a program and returns its cpspec block.
pub fn parse_cpspec(text: &str) -> Result<(Program, CpSpec), ReqError> {
    let program = parse_program(text)?;
    match program.cpspec.clone() {
        Some(spec) => Ok((program, spec)),
        None => Err(ReqError::NoCpSpec),
    }
}

fn lookup<'a>(defs: &'a [(String, Binding)], name: &str) -> Option<&'a Binding> {
    defs.iter().find(|(n, _)| n == name).map(|(_, b)| b)
}

fn lower(expr: &RawExpr, defs: &[(String, Binding)]) -> Result<Binding, ReqError> {
    match expr {
        RawExpr::FieldCmp { field, op, value } => Ok(Binding::Pred(PacketSpacePred::Cmp {
            field: field.clone(),
            op: *op,
            value: value.clone(),
        })),
        RawExpr::Label { atom, negate } => Ok(Binding::Path(PathSetExpr::Label {
            atom: atom.clone(),
            negate: *negate,
        })),
        RawExpr::AnyDev => Ok(Binding::Path(PathSetExpr::AnyDev)),
        RawExpr::Ref(name) => match lookup(defs, name) {
            Some(b) => Ok(b.clone()),
            None if name == "loopfree" => Ok(Binding::Path(PathSetExpr::LoopFree)),
            None if name == "any" => Ok(Binding::Pred(PacketSpacePred::Any)),
            None => Err(ReqError::UnknownName(name.clone())),
        },
        RawExpr::And(l, r) => match (lower(l, defs)?, lower(r, defs)?) {
            (Binding::Pred(a), Binding::Pred(b)) => Ok(Binding::Pred(PacketSpacePred::And(
                Box::new(a),
                Box::new(b),
            ))),
            (Binding::Path(a), Binding::Path(b)) => {
                Ok(Binding::Path(PathSetExpr::Inter(Box::new(a), Box::new(b))))
            }
            _ => Err(ReqError::TypeMismatch(
                "∩ needs two predicates or two path sets".into(),
            )),
        },
        RawExpr::Or(l, r) => match (lower(l, defs)?, lower(r, defs)?) {
            (Binding::Pred(a), Binding::Pred(b)) => Ok(Binding::Pred(PacketSpacePred::Or(
                Box::new(a),
                Box::new(b),
            ))),
            (Binding::Path(a), Binding::Path(b)) => {
                Ok(Binding::Path(PathSetExpr::Alt(Box::new(a), Box::new(b))))
            }
            _ => Err(ReqError::TypeMismatch(
                "∪ needs two predicates or two path sets".into(),
            )),
        },
        RawExpr::Concat(l, r) => {
            let (a, b) = (path_of(lower(l, defs)?)?, path_of(lower(r, defs)?)?);
            if !a.is_pure() || !b.is_pure() {
                return Err(ReqError::TypeMismatch(
                    "path-set combos (∩, loopfree) cannot appear under concatenation".into(),
                ));
            }
            Ok(Binding::Path(PathSetExpr::Concat(Box::new(a), Box::new(b))))
        }
        RawExpr::Star(e) | RawExpr::Plus(e) | RawExpr::Opt(e) => {
            let inner = path_of(lower(e, defs)?)?;
            if !inner.is_pure() {
                return Err(ReqError::TypeMismatch(
                    "path-set combos (∩, loopfree) cannot appear under repetition".into(),
                ));
            }
            Ok(Binding::Path(match expr {
                RawExpr::Star(_) => PathSetExpr::Star(Box::new(inner)),
                RawExpr::Plus(_) => PathSetExpr::Plus(Box::new(inner)),
                _ => PathSetExpr::Opt(Box::new(inner)),
            }))
        }
        RawExpr::SrcPred { .. } => Err(ReqError::TypeMismatch(
            "a source selector is only allowed on a requirement's left arm".into(),
        )),
        RawExpr::Req {
            sources,
            pred,
            path,
        } => {
            let pred = match lower(pred, defs)? {
                Binding::Pred(p) => p,
                _ => {
                    return Err(ReqError::TypeMismatch(
                        "left arm of a requirement must be a packet-space predicate".into(),
                    ))
                }
            };
            let path = path_of(lower(path, defs)?)?;
            Ok(Binding::Req(Requirement {
                sources: sources.clone(),
                pred,
                path,
            }))
        }
    }
}

fn path_of(b: Binding) -> Result<PathSetExpr, ReqError> {
    match b {
        Binding::Path(p) => Ok(p),
        _ => Err(ReqError::TypeMismatch("expected a path set".into())),
    }
}

fn lower_cpspec(raw: RawCpSpec, defs: &[(String, Binding)]) -> Result<CpSpec, ReqError> {
    let space = match raw.space {
        Some(e) => match lower(&e, defs)? {
            Binding::Pred(p) => p,
            _ => {
                return Err(ReqError::TypeMismatch(
                    "cpspec space must be a packet-space predicate".into(),
                ))
            }
        },
        None => PacketSpacePred::Any,
    };
    for (req, _) in &raw.rank {
        match lookup(defs, req) {
            Some(Binding::Req(_)) => {}
            Some(_) => {
                return Err(ReqError::TypeMismatch(format!(
                    "cpspec rank entry {req:?} is not a requirement"
                )))
            }
            None => return Err(ReqError::UnknownName(req.clone())),
        }
    }
    let option = match raw.option.as_deref() {
        None | Some("eventual") => ConsistencyMode::Eventual,
        Some(other) => ConsistencyMode::Stub(other.to_string()),
    };
    Ok(CpSpec {
        space,
        rank: raw.rank,
        option,
    })
}

/// A path set with labels resolved to device-id sets; `loopfree` expanded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedPath {
    Devs(Vec<DeviceId>),
    Concat(Box<ResolvedPath>, Box<ResolvedPath>),
    Alt(Box<ResolvedPath>, Box<ResolvedPath>),
    Inter(Box<ResolvedPath>, Box<ResolvedPath>),
    Star(Box<ResolvedPath>),
    Plus(Box<ResolvedPath>),
    Opt(Box<ResolvedPath>),
}

/// A requirement bound to one topology: concrete sources, concrete packet
/// space, and a label-free path expression ready to compile.
#[derive(Debug, Clone)]
pub struct ResolvedRequirement {
    pub sources: Vec<DeviceId>,
    pub space: HeaderSpace,
    pub path: ResolvedPath,
}

/// Binds labels, sources, and the packet space of `req` to `topo`. An
/// unmatched path label resolves to the empty device set (legal: the atom
/// just matches nothing); an unresolvable source is an error.
pub fn resolve_labels(req: &Requirement, topo: &Topology) -> Result<ResolvedRequirement, ReqError> {
    let space = req.pred.eval_space(topo.layout())?;
    let path = resolve_path(&req.path, topo);
    let source_atom = match &req.sources {
        Some(s) => Some(s.clone()),
        None => first_anchor(&req.path).map(|s| s.to_string()),
    };
    let atom = source_atom.ok_or_else(|| {
        ReqError::MissingSources(
            "no source selector and the path set has no leading device label".into(),
        )
    })?;
    let sources = topo.devices_matching(&atom);
    if sources.is_empty() {
        return Err(ReqError::MissingSources(format!(
            "source label [{atom}] matches no device"
        )));
    }
    Ok(ResolvedRequirement {
        sources,
        space,
        path,
    })
}

fn resolve_path(path: &PathSetExpr, topo: &Topology) -> ResolvedPath {
    match path {
        PathSetExpr::Label { atom, negate } => {
            let matched = topo.devices_matching(atom);
            if *negate {
                let devs = topo.device_ids().filter(|d| !matched.contains(d)).collect();
                ResolvedPath::Devs(devs)
            } else {
                ResolvedPath::Devs(matched)
            }
        }
        PathSetExpr::AnyDev => ResolvedPath::Devs(topo.device_ids().collect()),
        PathSetExpr::LoopFree => expand_loopfree(topo),
        PathSetExpr::Concat(l, r) => ResolvedPath::Concat(
            Box::new(resolve_path(l, topo)),
            Box::new(resolve_path(r, topo)),
        ),
        PathSetExpr::Alt(l, r) => ResolvedPath::Alt(
            Box::new(resolve_path(l, topo)),
            Box::new(resolve_path(r, topo)),
        ),
        PathSetExpr::Inter(l, r) => ResolvedPath::Inter(
            Box::new(resolve_path(l, topo)),
            Box::new(resolve_path(r, topo)),
        ),
        PathSetExpr::Star(e) => ResolvedPath::Star(Box::new(resolve_path(e, topo))),
        PathSetExpr::Plus(e) => ResolvedPath::Plus(Box::new(resolve_path(e, topo))),
        PathSetExpr::Opt(e) => ResolvedPath::Opt(Box::new(resolve_path(e, topo))),
    }
}

/// `loopfree` = ∩ over devices x of `[^x]* ∪ [^x]*[x][^x]*`.
fn expand_loopfree(topo: &Topology) -> ResolvedPath {
    let mut acc: Option<ResolvedPath> = None;
    for x in topo.device_ids() {
        let not_x: Vec<DeviceId> = topo.device_ids().filter(|&d| d != x).collect();
        let never = ResolvedPath::Star(Box::new(ResolvedPath::Devs(not_x.clone())));
        let once = ResolvedPath::Concat(
            Box::new(ResolvedPath::Star(Box::new(ResolvedPath::Devs(
                not_x.clone(),
            )))),
            Box::new(ResolvedPath::Concat(
                Box::new(ResolvedPath::Devs(vec![x])),
                Box::new(ResolvedPath::Star(Box::new(ResolvedPath::Devs(not_x)))),
            )),
        );
        let term = ResolvedPath::Alt(Box::new(never), Box::new(once));
        acc = Some(match acc {
            None => term,
            Some(prev) => ResolvedPath::Inter(Box::new(prev), Box::new(term)),
        });
    }
    acc.unwrap_or(ResolvedPath::Devs(Vec::new()))
}

/// Leftmost positive label of a path expression, used to infer sources when
/// the requirement has no explicit selector.
fn first_anchor(path: &PathSetExpr) -> Option<&str> {
    match path {
        PathSetExpr::Label {
            atom,
            negate: false,
        } => Some(atom),
        PathSetExpr::Concat(l, _) => first_anchor(l),
        PathSetExpr::Inter(l, r) => first_anchor(l).or_else(|| first_anchor(r)),
        _ => None,
    }
}

/// Compiles a resolved requirement's path set to a total, pruned DFA.
pub fn compile(
    req: &ResolvedRequirement,
    topo: &Topology,
    budget: usize,
) -> Result<PathDfa, ReqError> {
    compile_path(&req.path, topo.device_count(), budget)
}

fn compile_path(path: &ResolvedPath, n_devices: usize, budget: usize) -> Result<PathDfa, ReqError> {
    match path {
        ResolvedPath::Inter(l, r) => {
            let a = compile_path(l, n_devices, budget)?;
            let b = compile_path(r, n_devices, budget)?;
            PathDfa::product(&a, &b, true, budget)
        }
        ResolvedPath::Alt(l, r) if !resolved_is_pure(l) || !resolved_is_pure(r) => {
            let a = compile_path(l, n_devices, budget)?;
            let b = compile_path(r, n_devices, budget)?;
            PathDfa::product(&a, &b, false, budget)
        }
        pure => thompson(pure, n_devices).determinize(budget),
    }
}

fn resolved_is_pure(path: &ResolvedPath) -> bool {
    match path {
        ResolvedPath::Devs(_) => true,
        ResolvedPath::Inter(..) => false,
        ResolvedPath::Concat(l, r) | ResolvedPath::Alt(l, r) => {
            resolved_is_pure(l) && resolved_is_pure(r)
        }
        ResolvedPath::Star(e) | ResolvedPath::Plus(e) | ResolvedPath::Opt(e) => {
            resolved_is_pure(e)
        }
    }
}

fn thompson(path: &ResolvedPath, n: usize) -> Nfa {
    match path {
        ResolvedPath::Devs(devs) => {
            let mut set = DevSet::empty(n);
            for d in devs {
                set.insert(d.index());
            }
            Nfa::symbol(n, set)
        }
        ResolvedPath::Concat(l, r) => thompson(l, n).concat(thompson(r, n)),
        ResolvedPath::Alt(l, r) => thompson(l, n).alt(thompson(r, n)),
        ResolvedPath::Star(e) => thompson(e, n).star(),
        ResolvedPath::Plus(e) => thompson(e, n).plus(),
        ResolvedPath::Opt(e) => thompson(e, n).opt(),
        ResolvedPath::Inter(..) => unreachable!("intersections are compiled via products"),
    }
}
