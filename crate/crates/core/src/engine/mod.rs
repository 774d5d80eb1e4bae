//! The stage-by-stage construction.
//!
//! Each stage walks down the tree from the root, letting every visited node
//! act once and appoint one successor, until a node stops the stage or the
//! stage number is reached. Every change of state is recorded as an
//! [`Event`]; the resulting trace is what the verifier audits.

mod event;
mod markers;
mod stream;
mod tracked;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::ops::Bound;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use event::{
    read_jsonl, to_jsonl, write_jsonl, DefinedMarker, Event, EventBody, Snapshot, TraceReadError, WitnessSource,
};
pub use markers::{MarkerRecord, MarkerRegistry};
pub use stream::{from_intervals, to_intervals, Stream};
pub use tracked::{Change, TrackedSet, TrackedSetError, Transition};

use crate::adversary::Adversary;
use crate::omega;
use crate::operator::{check_axiom, split_join, Axiom, FiniteSet, LiteralAxiom, OperatorKind, Term, Violation};
use crate::tree::{Node, NodeInfo, Outcome, Requirement, RequirementOrdering, Tree};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `A` and `D` are built independently.
    #[default]
    Theorem2,
    /// `A` is read off `D` through the block operator.
    Corollary3,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Theorem2 => "theorem2",
            Mode::Corollary3 => "corollary3",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "theorem2" => Ok(Mode::Theorem2),
            "corollary3" => Ok(Mode::Corollary3),
            _ => Err(format!("unknown mode `{s}` (expected theorem2 or corollary3)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("operator {op} has kind {kind}, but requirement operators must be s-operators")]
    NotSOperator { op: Requirement, kind: OperatorKind },
    #[error("operator {op}: {violation}")]
    Validation { op: Requirement, violation: Violation },
    #[error("operator {op}: {message}")]
    BadReference { op: Requirement, message: String },
    #[error("stage {stage}, substage {substage}: internal invariant broken: {message}")]
    Trap { stage: u64, substage: u64, message: String },
}

#[derive(Clone, Debug)]
pub struct RunSpec {
    pub mode: Mode,
    pub stages: u64,
    pub ordering: RequirementOrdering,
    pub adversary: Adversary,
    pub label: String,
    /// Take a snapshot after every stage divisible by this.
    pub snapshot_every: Option<u64>,
}

impl RunSpec {
    pub fn new(adversary: Adversary, stages: u64) -> Self {
        Self {
            mode: Mode::Theorem2,
            stages,
            ordering: RequirementOrdering::default(),
            adversary,
            label: String::new(),
            snapshot_every: None,
        }
    }

    pub fn mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetupRecord {
    pub r_node: Node,
    pub i: u32,
    pub x: u64,
    pub z: u64,
    pub d: u64,
    pub stage: u64,
}

/// Parameters of one node. Initialization resets everything but
/// `last_init`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeParams {
    pub witness: Option<u64>,
    /// Witnesses picked since the last initialization.
    pub picked: Vec<u64>,
    pub stopped: bool,
    /// The use `F` of the current witness once it has been realized.
    pub realized_use: Option<FiniteSet>,
    pub gamma: BTreeSet<LiteralAxiom>,
    /// Kept on the child `alpha^i(i)` of the R-node that builds it.
    pub delta: BTreeSet<LiteralAxiom>,
    pub setup_stream: BTreeSet<u64>,
    pub setups: BTreeMap<u64, SetupRecord>,
    pub last_init: u64,
}

impl NodeParams {
    fn is_blank(&self) -> bool {
        self.witness.is_none()
            && self.picked.is_empty()
            && !self.stopped
            && self.realized_use.is_none()
            && self.gamma.is_empty()
            && self.delta.is_empty()
            && self.setup_stream.is_empty()
            && self.setups.is_empty()
    }
}

enum Step {
    Continue(Outcome, &'static str),
    Stop(Outcome, &'static str),
}

type EResult<T> = Result<T, EngineError>;

pub struct Engine {
    mode: Mode,
    budget: u64,
    label: String,
    tree: Tree,
    adversary: Adversary,
    a: TrackedSet,
    d: TrackedSet,
    live: BTreeMap<Requirement, Vec<LiteralAxiom>>,
    params: BTreeMap<Node, NodeParams>,
    last_true: HashMap<Node, u64>,
    markers: MarkerRegistry,
    counter: u64,
    f_history: Vec<Node>,
    events: Vec<Event>,
    snapshots: Vec<Snapshot>,
    snapshot_every: Option<u64>,
    stage: u64,
    substage: u64,
}

pub struct RunOutput {
    pub events: Vec<Event>,
    pub snapshots: Vec<Snapshot>,
    pub engine: Engine,
}

/// Validates the adversary and runs the construction for `spec.stages`
/// stages.
pub fn run(spec: RunSpec) -> Result<RunOutput, EngineError> {
    let mut engine = Engine::new(spec)?;
    engine.run_to_end()?;
    let events = std::mem::take(&mut engine.events);
    let snapshots = std::mem::take(&mut engine.snapshots);
    Ok(RunOutput { events, snapshots, engine })
}

impl Engine {
    pub fn new(spec: RunSpec) -> EResult<Self> {
        let tree = Tree::new(spec.ordering);
        for (op, sched) in &spec.adversary.operators {
            if sched.kind != OperatorKind::S {
                return Err(EngineError::NotSOperator { op: *op, kind: sched.kind });
            }
            sched.validate().map_err(|violation| EngineError::Validation { op: *op, violation })?;
            for axiom in sched.entries.values() {
                check_references(&tree, axiom).map_err(|message| EngineError::BadReference { op: *op, message })?;
            }
        }
        Ok(Self {
            mode: spec.mode,
            budget: spec.stages,
            label: spec.label,
            tree,
            adversary: spec.adversary,
            a: TrackedSet::new(),
            d: TrackedSet::new(),
            live: BTreeMap::new(),
            params: BTreeMap::new(),
            last_true: HashMap::new(),
            markers: MarkerRegistry::default(),
            counter: 0,
            f_history: Vec::new(),
            events: Vec::new(),
            snapshots: Vec::new(),
            snapshot_every: spec.snapshot_every.filter(|&n| n > 0),
            stage: 0,
            substage: 0,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn a(&self) -> &TrackedSet {
        &self.a
    }

    pub fn d(&self) -> &TrackedSet {
        &self.d
    }

    pub fn markers(&self) -> &MarkerRegistry {
        &self.markers
    }

    pub fn params(&self, node: &Node) -> Option<&NodeParams> {
        self.params.get(node)
    }

    pub fn all_params(&self) -> impl Iterator<Item = (&Node, &NodeParams)> {
        self.params.iter()
    }

    /// `f_s` for `s = 1..=stage`.
    pub fn f_history(&self) -> &[Node] {
        &self.f_history
    }

    pub fn stage(&self) -> u64 {
        self.stage
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn live_axioms(&self, op: Requirement) -> &[LiteralAxiom] {
        self.live.get(&op).map_or(&[], Vec::as_slice)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn in_a(&self, x: u64) -> bool {
        match self.mode {
            Mode::Theorem2 => self.a.contains(x),
            Mode::Corollary3 => omega::in_omega(&self.d, x),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let witnesses = self.params.iter().filter_map(|(n, p)| p.witness.map(|x| (n.clone(), x)));
        capture_snapshot(self.mode, self.stage, &self.a, &self.d, &self.markers, witnesses)
    }

    fn run_to_end(&mut self) -> EResult<()> {
        self.emit(EventBody::RunStarted {
            mode: self.mode.to_string(),
            stages: self.budget,
            ordering: self.tree.ordering().pattern(),
            scenario: self.label.clone(),
        });
        self.emit(EventBody::Initialize { node: Node::root(), witness: None, markers: Vec::new(), subtree: true });
        for s in 1..=self.budget {
            self.run_stage(s)?;
        }
        let snapshot = self.snapshot();
        self.emit(EventBody::RunFinished { snapshot });
        Ok(())
    }

    fn emit(&mut self, body: EventBody) {
        let seq = self.events.len() as u64;
        self.events.push(Event { seq, stage: self.stage, substage: self.substage, body });
    }

    fn trap(&self, message: impl Into<String>) -> EngineError {
        EngineError::Trap { stage: self.stage, substage: self.substage, message: message.into() }
    }

    fn mention(&mut self, v: u64) {
        self.counter = self.counter.max(v);
    }

    /// A number larger than anything mentioned so far.
    fn new_number(&mut self) -> u64 {
        let v = match self.mode {
            Mode::Theorem2 => self.counter + 1,
            Mode::Corollary3 => omega::pick_odd_marker(self.counter),
        };
        self.counter = v;
        v
    }

    fn initialized_from_history(&self, node: &Node) -> u64 {
        (1..self.stage).rev().find(|&s| &self.f_history[s as usize - 1] < node).unwrap_or(0)
    }

    fn last_init(&self, node: &Node) -> u64 {
        self.params.get(node).map_or_else(|| self.initialized_from_history(node), |p| p.last_init)
    }

    fn p(&self, node: &Node) -> u64 {
        (node.len() as u64).max(self.last_init(node))
    }

    fn params_mut(&mut self, node: &Node) -> &mut NodeParams {
        if !self.params.contains_key(node) {
            let last_init = self.initialized_from_history(node);
            self.params.insert(node.clone(), NodeParams { last_init, ..NodeParams::default() });
        }
        self.params.get_mut(node).expect("just inserted")
    }

    fn info(&self, node: &Node) -> EResult<std::sync::Arc<NodeInfo>> {
        self.tree.info(node).map_err(|e| self.trap(e.to_string()))
    }

    fn run_stage(&mut self, s: u64) -> EResult<()> {
        self.stage = s;
        self.substage = 0;
        self.mention(s);
        self.enter_axioms()?;

        let mut node = Node::root();
        let mut stream = Stream::range(0, s);
        self.emit(EventBody::OutcomeTaken {
            node: node.clone(),
            case: "root".into(),
            stream: stream.intervals(),
            p: 0,
        });
        self.last_true.insert(node.clone(), s);

        for t in 1..s {
            self.substage = t;
            let step = self.act(&node, &stream)?;
            let (o, case, stop) = match step {
                Step::Continue(o, c) => (o, c, false),
                Step::Stop(o, c) => (o, c, true),
            };
            let child = node.child(o);
            stream = self.appoint(&node, &child, &stream, case);
            node = child;
            if stop {
                break;
            }
        }

        self.f_history.push(node.clone());
        self.initialize_lower(&node);
        self.emit(EventBody::StageEnd { f: node.clone() });
        if self.snapshot_every.is_some_and(|n| s.is_multiple_of(n)) {
            let snap = self.snapshot();
            self.snapshots.push(snap);
        }
        Ok(())
    }

    fn appoint(&mut self, parent: &Node, child: &Node, parent_stream: &Stream, case: &str) -> Stream {
        let s = self.stage;
        let p = self.p(child);
        let stream = match child.last() {
            Some(Outcome::I(_)) => {
                let set = self.params.get(child).map(|q| q.setup_stream.clone()).unwrap_or_default();
                Stream::Set(set).intersect_range(p, s)
            }
            _ => parent_stream.intersect_range(p, s),
        };
        if child.last() == Some(Outcome::Stop) {
            self.params_mut(parent).stopped = true;
        }
        self.emit(EventBody::OutcomeTaken { node: child.clone(), case: case.into(), stream: stream.intervals(), p });
        self.last_true.insert(child.clone(), s);
        stream
    }

    fn enter_axioms(&mut self) -> EResult<()> {
        let s = self.stage;
        let entering: Vec<(Requirement, Axiom)> = self
            .adversary
            .operators
            .iter()
            .filter_map(|(op, sched)| sched.entries.get(&s).map(|a| (*op, a.clone())))
            .collect();
        for (op, axiom) in entering {
            match self.resolve(&axiom) {
                Ok(lit) => {
                    let resolved = Axiom::literal(lit.head, lit.body.clone());
                    if let Err(v) = check_axiom(OperatorKind::S, s, &resolved) {
                        self.emit(EventBody::AxiomDropped { op, axiom: axiom.to_string(), reason: v.to_string() });
                        continue;
                    }
                    self.mention(lit.head);
                    if let Some(m) = lit.body.max_element() {
                        self.mention(m);
                    }
                    self.emit(EventBody::AxiomEntered { op, head: lit.head, body: lit.body.clone() });
                    self.live.entry(op).or_default().push(lit);
                }
                Err(reason) => {
                    self.emit(EventBody::AxiomDropped { op, axiom: axiom.to_string(), reason });
                }
            }
        }
        Ok(())
    }

    fn resolve(&self, axiom: &Axiom) -> Result<LiteralAxiom, String> {
        let head = self.resolve_term(&axiom.head)?;
        let mut body = FiniteSet::empty();
        for b in &axiom.body {
            body.insert(b.side.code(self.resolve_term(&b.term)?));
        }
        Ok(LiteralAxiom { head, body })
    }

    fn resolve_term(&self, term: &Term) -> Result<u64, String> {
        match term {
            Term::Lit(v) => Ok(*v),
            Term::Witness { node } => {
                self.params.get(node).and_then(|p| p.witness).ok_or_else(|| format!("{node} has no current witness"))
            }
            Term::Marker { e, z, x } => {
                let (z, x) = (self.resolve_term(z)?, self.resolve_term(x)?);
                self.markers
                    .all_defined()
                    .filter(|m| m.z == z && m.x == x)
                    .filter(|m| self.tree.assign_requirement(&m.owner).ok() == Some(Requirement::S(*e)))
                    .max_by_key(|m| (m.stage, m.value))
                    .map(|m| m.value)
                    .ok_or_else(|| format!("no defined marker of an S{e} node for ({z},{x})"))
            }
        }
    }

    fn act(&mut self, node: &Node, stream: &Stream) -> EResult<Step> {
        let info = self.info(node)?;
        match info.requirement {
            Requirement::S(e) => self.act_s(node, e),
            Requirement::R(k) => self.act_r(node, &info, k, stream),
        }
    }

    fn add_gamma(&mut self, node: &Node, z: u64, body: FiniteSet) {
        let ax = LiteralAxiom { head: z, body: body.clone() };
        if self.params_mut(node).gamma.insert(ax) {
            self.emit(EventBody::GammaAxiom { node: node.clone(), z, body });
        }
    }

    fn add_delta(&mut self, node: &Node, x: u64, body: FiniteSet) {
        let ax = LiteralAxiom { head: x, body: body.clone() };
        if self.params_mut(node).delta.insert(ax) {
            self.emit(EventBody::DeltaAxiom { node: node.clone(), x, body });
        }
    }

    fn extract_marker(&mut self, value: u64) -> EResult<()> {
        let (s, t) = (self.stage, self.substage);
        self.d.extract(value, s, t).map_err(|e| self.trap(format!("marker {value}: {e}")))?;
        self.emit(EventBody::ExtractD { d: value });
        Ok(())
    }

    fn cancel_marker(&mut self, value: u64) {
        if self.markers.cancel(value) {
            let owner = self.markers.get(value).expect("known marker").owner.clone();
            self.emit(EventBody::MarkerCanceled { owner, value });
        }
    }

    fn act_s(&mut self, beta: &Node, e: usize) -> EResult<Step> {
        let s = self.stage;
        let axioms = self.live_axioms(Requirement::S(e)).to_vec();
        for ax in axioms {
            let (a_part, d_part) = split_join(&ax.body);
            let z = ax.head;
            let Some(x) = a_part.min_element() else {
                self.add_gamma(beta, z, d_part);
                continue;
            };
            let defined = self.markers.defined(beta, z, x);
            let x_in = self.in_a(x);
            match defined {
                None if x_in && x < s => {
                    let m = self.new_number();
                    if !self.markers.define(beta.clone(), z, x, m, s) {
                        return Err(self.trap(format!("marker {m} is not fresh")));
                    }
                    self.emit(EventBody::MarkerDefined { owner: beta.clone(), z, x, value: m });
                    self.add_gamma(beta, z, FiniteSet::singleton(m));
                }
                Some(m) if !x_in => {
                    self.extract_marker(m)?;
                    self.cancel_marker(m);
                }
                _ => {}
            }
        }
        Ok(Step::Continue(Outcome::Infty, "1"))
    }

    fn in_phi_d(&self, op: Requirement, x: u64) -> bool {
        self.live_axioms(op).iter().any(|a| a.head == x && a.body.is_subset_of(|v| self.d.contains(v)))
    }

    /// The use of `x` that has been inside `D` the longest; ties go to the
    /// smaller canonical index.
    fn select_fx(&self, k: usize, x: u64) -> Option<FiniteSet> {
        let since = |f: &FiniteSet| f.iter().map(|v| self.d.member_since(v).unwrap_or(u64::MAX)).max().unwrap_or(0);
        self.live_axioms(Requirement::R(k))
            .iter()
            .filter(|a| a.head == x && a.body.is_subset_of(|v| self.d.contains(v)))
            .map(|a| &a.body)
            .min_by(|f, g| since(f).cmp(&since(g)).then_with(|| f.canonical_cmp(g)))
            .cloned()
    }

    fn restrained(&self, extra: &FiniteSet) -> BTreeSet<u64> {
        self.params
            .values()
            .filter(|p| p.stopped)
            .filter_map(|p| p.realized_use.as_ref())
            .flat_map(|f| f.iter())
            .chain(extra.iter())
            .collect()
    }

    /// Block element that would leave `D` if `x` left `A` with use `fx`.
    fn block_choice(&self, x: u64, fx: &FiniteSet) -> EResult<Option<u64>> {
        if self.mode != Mode::Corollary3 {
            return Ok(None);
        }
        let restrained = self.restrained(fx);
        omega::choose_extraction(&self.d, x, fx.min_element(), |v| restrained.contains(&v))
            .map(Some)
            .map_err(|e| self.trap(e.to_string()))
    }

    fn extract_a(&mut self, x: u64, fx: &FiniteSet) -> EResult<()> {
        let (s, t) = (self.stage, self.substage);
        match self.block_choice(x, fx)? {
            None => {
                self.a.extract(x, s, t).map_err(|e| self.trap(format!("witness: {e}")))?;
                self.emit(EventBody::ExtractA { x, derived: false });
            }
            Some(b) => {
                self.d.extract(b, s, t).map_err(|e| self.trap(format!("block element: {e}")))?;
                self.mention(b);
                self.emit(EventBody::ExtractA { x, derived: true });
                self.emit(EventBody::ExtractD { d: b });
            }
        }
        Ok(())
    }

    /// Whether `z` stays in `Phi_i` once `x` leaves `A`, the markers for `x`
    /// leave `D`, and `use_` is kept in `D`.
    fn z_survives(&self, info: &NodeInfo, i: usize, x: u64, z: u64, use_: &FiniteSet) -> EResult<bool> {
        let hat: BTreeSet<u64> = (0..info.active_s.len())
            .flat_map(|j| {
                let beta = info.beta(j);
                self.markers.defined_by(&beta).filter(|m| m.x == x).map(|m| m.value).collect::<Vec<_>>()
            })
            .collect();
        let block = self.block_choice(x, use_)?;
        let Requirement::S(e) = info.ancestor_reqs[info.active_s[i]] else {
            return Err(self.trap("active ancestor is not an S-node"));
        };
        let a_member = |v: u64| v != x && self.in_a(v);
        let d_member = |v: u64| (self.d.contains(v) && Some(v) != block && !hat.contains(&v)) || use_.contains(v);
        let join = crate::operator::join(a_member, d_member);
        Ok(self.live_axioms(Requirement::S(e)).iter().any(|a| a.head == z && a.body.is_subset_of(&join)))
    }

    /// The marker record behind a use `{d}` when `d` is a defined marker of
    /// `beta_i` for the pair `(z, x)`.
    fn marker_of_beta(&self, info: &NodeInfo, i: usize, x: u64, fx: &FiniteSet) -> Option<MarkerRecord> {
        let d = fx.min_element()?;
        let m = self.markers.get(d)?;
        (fx.len() == 1 && m.defined && m.owner == info.beta(i) && m.x == x).then(|| m.clone())
    }

    fn is_cleared(&self, info: &NodeInfo, i: usize, x: u64, fx: &FiniteSet) -> EResult<bool> {
        match self.marker_of_beta(info, i, x, fx) {
            None => Ok(true),
            Some(m) => self.z_survives(info, i, x, m.z, fx),
        }
    }

    fn act_r(&mut self, alpha: &Node, info: &NodeInfo, k: usize, stream: &Stream) -> EResult<Step> {
        let s = self.stage;
        let n = info.active_s.len();
        let (stopped, witness) = self.params.get(alpha).map_or((false, None), |p| (p.stopped, p.witness));
        if stopped {
            return Ok(Step::Continue(Outcome::Stop, "2.1"));
        }
        let Some(x) = witness else {
            let p = self.p(&alpha.child(Outcome::Wait));
            let pick = stream.intersect_range(p, s).iter().find(|&v| self.in_a(v));
            if let Some(v) = pick {
                let params = self.params_mut(alpha);
                params.witness = Some(v);
                params.picked.push(v);
                self.mention(v);
                self.emit(EventBody::WitnessAppointed { node: alpha.clone(), x: v, source: WitnessSource::Pick });
            }
            return Ok(Step::Stop(Outcome::Wait, "2.2.1"));
        };
        if !self.in_a(x) {
            return Err(self.trap(format!("current witness {x} of {alpha} is not in A")));
        }
        if !self.in_phi_d(Requirement::R(k), x) {
            return Ok(Step::Continue(Outcome::Wait, "2.2.2"));
        }

        let fx = self.select_fx(k, x).expect("realized witness has a use");
        self.params_mut(alpha).realized_use = Some(fx.clone());
        self.emit(EventBody::Realized { node: alpha.clone(), x, uses: fx.clone() });

        let mut uncleared = Vec::new();
        for i in 0..n {
            if !self.is_cleared(info, i, x, &fx)? {
                uncleared.push(i);
            }
        }
        if uncleared.is_empty() {
            self.extract_a(x, &fx)?;
            if let Some(m) = (0..n).find_map(|i| self.marker_of_beta(info, i, x, &fx)) {
                self.cancel_marker(m.value);
            }
            return Ok(Step::Stop(Outcome::Stop, "2.2.3.1"));
        }
        if let Some((i, rec)) = self.cleared_stream_witness(alpha, info)? {
            self.stream_diagonalize(alpha, i, rec)?;
            return Ok(Step::Stop(Outcome::Stop, "2.2.3.2"));
        }
        if uncleared.len() != 1 {
            return Err(self.trap(format!("witness {x} of {alpha} is uncleared for several i: {uncleared:?}")));
        }
        let i = uncleared[0];
        let m = self.marker_of_beta(info, i, x, &fx).expect("uncleared means a marker use");
        self.setup(alpha, info, i, x, m)?;
        Ok(Step::Continue(Outcome::I(i as u32), "2.2.3.3"))
    }

    /// Least `i`, then least `x`, among setup witnesses that have become
    /// cleared.
    fn cleared_stream_witness(&self, alpha: &Node, info: &NodeInfo) -> EResult<Option<(usize, SetupRecord)>> {
        let s = self.stage;
        for i in 0..info.active_s.len() {
            let child = alpha.child(Outcome::I(i as u32));
            let Some(params) = self.params.get(&child) else { continue };
            let p = self.p(&child);
            for &x in params.setup_stream.range(p..s) {
                let rec = params
                    .setups
                    .get(&x)
                    .ok_or_else(|| self.trap(format!("stream element {x} of {child} has no setup record")))?;
                if !self.in_a(x) {
                    continue;
                }
                if self.z_survives(info, i, x, rec.z, &FiniteSet::singleton(rec.d))? {
                    return Ok(Some((i, rec.clone())));
                }
            }
        }
        Ok(None)
    }

    fn stream_diagonalize(&mut self, alpha: &Node, _i: usize, rec: SetupRecord) -> EResult<()> {
        let (s, t) = (self.stage, self.substage);
        let x = rec.x;
        let current = self.params.get(alpha).and_then(|p| p.witness);
        if current != Some(x) {
            if let Some(c) = current {
                self.emit(EventBody::WitnessCanceled { node: alpha.clone(), x: c });
            }
            self.params_mut(alpha).witness = Some(x);
            self.emit(EventBody::WitnessAppointed { node: alpha.clone(), x, source: WitnessSource::Stream });
        }
        let fx = FiniteSet::singleton(rec.d);
        if self.in_a(x) {
            self.extract_a(x, &fx)?;
        }
        self.cancel_marker(rec.d);
        self.params_mut(alpha).realized_use = Some(fx.clone());
        self.emit(EventBody::Realized { node: alpha.clone(), x, uses: fx });
        if !self.d.contains(rec.d) {
            self.d.enumerate(rec.d, s, t).map_err(|e| self.trap(e.to_string()))?;
            self.emit(EventBody::EnumD { d: rec.d });
        }
        Ok(())
    }

    fn setup(&mut self, alpha: &Node, info: &NodeInfo, i: usize, x: u64, m: MarkerRecord) -> EResult<()> {
        let s = self.stage;
        let child = alpha.child(Outcome::I(i as u32));
        let prior_max = self.params.get(&child).and_then(|p| p.setup_stream.last().copied());
        if prior_max.is_some_and(|mx| x <= mx) {
            return Err(self.trap(format!("setup witness {x} does not exceed the stream of {child}")));
        }

        // (a)
        let rec = SetupRecord { r_node: alpha.clone(), i: i as u32, x, z: m.z, d: m.value, stage: s };
        {
            let params = self.params_mut(&child);
            params.setup_stream.insert(x);
            params.setups.insert(x, rec);
        }
        self.emit(EventBody::StreamAdd { node: child.clone(), x });
        self.add_delta(&child, x, FiniteSet::singleton(m.z));
        self.emit(EventBody::SetupCreated { node: alpha.clone(), i: i as u32, x, z: m.z, d: m.value });

        // (b) markers picked since the child was last visited or initialized
        let window = self.last_true.get(&child).copied().unwrap_or(0).max(self.last_init(&child));
        let height = alpha.len() as u64;
        let mut killed = Vec::new();
        for j in i..info.active_s.len() {
            let beta = info.beta(j);
            killed.extend(self.markers.defined_by(&beta).filter(|r| r.x > height && r.stage > window).map(|r| r.value));
        }
        self.emit(EventBody::GammaKilled { node: alpha.clone(), i: i as u32, markers: killed.clone() });
        for v in killed {
            self.extract_marker(v)?;
            self.cancel_marker(v);
        }

        // (c)
        let stream = self.params.get(&child).map(|p| p.setup_stream.clone()).unwrap_or_default();
        for y in 0..s {
            if self.in_a(y) && !stream.contains(&y) {
                self.add_delta(&child, y, FiniteSet::empty());
            }
        }

        // (d)
        self.params_mut(alpha).witness = None;
        self.emit(EventBody::WitnessCanceled { node: alpha.clone(), x });
        Ok(())
    }

    fn initialize_lower(&mut self, f: &Node) {
        let s = self.stage;
        let mut targets: BTreeSet<Node> =
            self.params.range::<Node, _>((Bound::Excluded(f), Bound::Unbounded)).map(|(n, _)| n.clone()).collect();
        let owned: Vec<(Node, u64)> =
            self.markers.all_defined().filter(|m| &m.owner > f).map(|m| (m.owner.clone(), m.value)).collect();
        targets.extend(owned.iter().map(|(n, _)| n.clone()));
        for node in targets {
            let markers: Vec<u64> = owned.iter().filter(|(o, _)| *o == node).map(|&(_, v)| v).collect();
            for &v in &markers {
                self.markers.cancel(v);
            }
            let old = self.params.insert(node.clone(), NodeParams { last_init: s, ..NodeParams::default() });
            let (blank, witness) = old.map_or((true, None), |p| (p.is_blank(), p.witness));
            if !blank || !markers.is_empty() {
                self.emit(EventBody::Initialize { node, witness, markers, subtree: false });
            }
        }
    }
}

/// Snapshot of a state given by its parts; shared with trace replay.
pub fn capture_snapshot(
    mode: Mode,
    stage: u64,
    a: &TrackedSet,
    d: &TrackedSet,
    markers: &MarkerRegistry,
    witnesses: impl Iterator<Item = (Node, u64)>,
) -> Snapshot {
    let a_extracted = match mode {
        Mode::Theorem2 => a.missing().collect(),
        Mode::Corollary3 => {
            let blocks: BTreeSet<u64> = d.touched().filter_map(omega::block_of).collect();
            blocks.into_iter().filter(|&n| !omega::in_omega(d, n)).collect()
        }
    };
    Snapshot {
        stage,
        a_extracted,
        d_extracted: d.missing().collect(),
        d_reentered: d.reentered().collect(),
        markers: markers
            .all_defined()
            .map(|m| DefinedMarker { owner: m.owner.clone(), z: m.z, x: m.x, value: m.value })
            .collect(),
        witnesses: witnesses.map(|(n, x)| (n.to_string(), x)).collect(),
    }
}

fn check_references(tree: &Tree, axiom: &Axiom) -> Result<(), String> {
    fn term(tree: &Tree, t: &Term) -> Result<(), String> {
        match t {
            Term::Lit(_) => Ok(()),
            Term::Witness { node } => match tree.assign_requirement(node) {
                Ok(Requirement::R(_)) => Ok(()),
                Ok(r) => Err(format!("witness reference to {node}, which is assigned {r}")),
                Err(e) => Err(e.to_string()),
            },
            Term::Marker { z, x, .. } => term(tree, z).and(term(tree, x)),
        }
    }
    term(tree, &axiom.head)?;
    axiom.body.iter().try_for_each(|b| term(tree, &b.term))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{BodyTerm, OperatorSchedule, Side};
    use Outcome::*;

    fn n(path: &[Outcome]) -> Node {
        Node::from_outcomes(path.iter().copied())
    }

    fn kinds(events: &[Event]) -> Vec<&EventBody> {
        events.iter().map(|e| &e.body).collect()
    }

    fn cases(events: &[Event]) -> Vec<(u64, String)> {
        events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::OutcomeTaken { case, .. } if case != "root" => Some((e.stage, case.clone())),
                _ => None,
            })
            .collect()
    }

    fn witness(path: &[Outcome]) -> Term {
        Term::Witness { node: n(path) }
    }

    #[test]
    fn budget_one_only_root() {
        let out = run(RunSpec::new(Adversary::default(), 1)).unwrap();
        assert_eq!(out.engine.f_history(), &[Node::root()]);
        assert!(cases(&out.events).is_empty());
    }

    #[test]
    fn empty_adversary_first_stages() {
        let out = run(RunSpec::new(Adversary::default(), 4)).unwrap();
        assert_eq!(
            cases(&out.events),
            vec![
                (2, "1".into()),
                (3, "1".into()),
                (3, "2.2.1".into()),
                (4, "1".into()),
                (4, "2.2.2".into()),
                (4, "1".into())
            ]
        );
        // R0 at <infty> picks 2: at least |alpha^wait| = 2, inside [0, 3)
        let picked: Vec<_> = kinds(&out.events)
            .into_iter()
            .filter_map(|b| match b {
                EventBody::WitnessAppointed { node, x, .. } => Some((node.clone(), *x)),
                _ => None,
            })
            .collect();
        assert_eq!(picked[0], (n(&[Infty]), 2));
    }

    #[test]
    fn rejects_non_s_operator() {
        let mut adv = Adversary::default();
        adv.operators.insert(Requirement::R(0), OperatorSchedule::new(Requirement::R(0), OperatorKind::E));
        assert!(matches!(run(RunSpec::new(adv, 3)), Err(EngineError::NotSOperator { .. })));
    }

    #[test]
    fn rejects_bad_witness_reference() {
        let mut adv = Adversary::default();
        let ax = Axiom { head: witness(&[]), body: vec![] };
        adv.operators.insert(Requirement::R(0), OperatorSchedule::new(Requirement::R(0), OperatorKind::S).with(5, ax));
        assert!(matches!(run(RunSpec::new(adv, 3)), Err(EngineError::BadReference { .. })));
    }

    #[test]
    fn diagonalize_once() {
        let mut adv = Adversary::default();
        let ax = Axiom { head: witness(&[Infty]), body: vec![] };
        adv.operators.insert(Requirement::R(0), OperatorSchedule::new(Requirement::R(0), OperatorKind::S).with(5, ax));
        let out = run(RunSpec::new(adv, 12)).unwrap();
        let c = cases(&out.events);
        assert_eq!(c.iter().filter(|(_, c)| c == "2.2.3.1").count(), 1);
        assert!(c.contains(&(5, "2.2.3.1".into())));
        assert!(c.contains(&(6, "2.1".into())));
        assert!(!out.engine.in_a(2));
        assert_eq!(out.engine.a().log(2).len(), 1);
    }

    #[test]
    fn case_one_markers() {
        // S0: <0, {A:2}> enters at stage 5 with 2 still in A
        let mut adv = Adversary::default();
        let ax = Axiom { head: Term::Lit(0), body: vec![BodyTerm { term: Term::Lit(2), side: Side::A }] };
        adv.operators.insert(Requirement::S(0), OperatorSchedule::new(Requirement::S(0), OperatorKind::S).with(5, ax));
        let out = run(RunSpec::new(adv, 6)).unwrap();
        let defined: Vec<_> = out.engine.markers().all_defined().map(|m| (m.owner.clone(), m.z, m.x)).collect();
        assert_eq!(defined, vec![(Node::root(), 0, 2)]);
        let m = out.engine.markers().defined(&Node::root(), 0, 2).unwrap();
        assert!(m > 5);
        assert!(out.engine.params(&Node::root()).unwrap().gamma.contains(&LiteralAxiom::new(0, [m])));
    }

    #[test]
    fn new_numbers_increase() {
        let mut e = Engine::new(RunSpec::new(Adversary::default(), 3)).unwrap();
        e.mention(10);
        let a = e.new_number();
        let b = e.new_number();
        assert!(a > 10 && b > a);
        let mut c = Engine::new(RunSpec::new(Adversary::default(), 3).mode(Mode::Corollary3)).unwrap();
        c.mention(10);
        assert_eq!(c.new_number(), 11);
        assert_eq!(c.new_number(), 13);
    }

    #[test]
    fn mode_strings() {
        assert_eq!("corollary3".parse::<Mode>(), Ok(Mode::Corollary3));
        assert_eq!(Mode::Theorem2.to_string(), "theorem2");
        assert!("x".parse::<Mode>().is_err());
    }
}
