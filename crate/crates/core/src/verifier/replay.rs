//! Rebuilds construction state from a trace, one event at a time.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::engine::{capture_snapshot, Event, EventBody, MarkerRegistry, Mode, Snapshot, TrackedSet};
use crate::omega;
use crate::operator::{join, FiniteSet, LiteralAxiom};
use crate::tree::{Node, Outcome, Requirement, RequirementOrdering, Tree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("event {seq}: {message}")]
    Inconsistent { seq: u64, message: String },
    #[error("trace has no run_started record")]
    NotStarted,
    #[error("trace has no run_finished record")]
    NotFinished,
    #[error("replayed state differs from the recorded snapshot at stage {stage}: {detail}")]
    Mismatch { stage: u64, detail: String },
}

pub struct Replay {
    pub mode: Mode,
    pub tree: Tree,
    pub budget: u64,
    pub scenario: String,
    pub stage: u64,
    pub a: TrackedSet,
    pub d: TrackedSet,
    /// `A`-elements removed through derived events.
    pub a_derived_out: BTreeSet<u64>,
    pub markers: MarkerRegistry,
    pub live: BTreeMap<Requirement, Vec<LiteralAxiom>>,
    pub gamma: BTreeMap<Node, BTreeSet<LiteralAxiom>>,
    pub delta: BTreeMap<Node, BTreeSet<LiteralAxiom>>,
    pub witness: BTreeMap<Node, u64>,
    pub stopped: BTreeSet<Node>,
    pub realized: BTreeMap<Node, FiniteSet>,
    pub f_history: Vec<Node>,
    pub finished: Option<Snapshot>,
    started: bool,
}

impl Default for Replay {
    fn default() -> Self {
        Self {
            mode: Mode::Theorem2,
            tree: Tree::default(),
            budget: 0,
            scenario: String::new(),
            stage: 0,
            a: TrackedSet::new(),
            d: TrackedSet::new(),
            a_derived_out: BTreeSet::new(),
            markers: MarkerRegistry::default(),
            live: BTreeMap::new(),
            gamma: BTreeMap::new(),
            delta: BTreeMap::new(),
            witness: BTreeMap::new(),
            stopped: BTreeSet::new(),
            realized: BTreeMap::new(),
            f_history: Vec::new(),
            finished: None,
            started: false,
        }
    }
}

impl Replay {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn in_a(&self, x: u64) -> bool {
        match self.mode {
            Mode::Theorem2 => self.a.contains(x),
            Mode::Corollary3 => omega::in_omega(&self.d, x),
        }
    }

    pub fn ops(&self, op: Requirement) -> &[LiteralAxiom] {
        self.live.get(&op).map_or(&[], Vec::as_slice)
    }

    /// `z` in `Phi_op(A (+) D)`.
    pub fn in_phi_join(&self, op: Requirement, z: u64) -> bool {
        let j = join(|v| self.in_a(v), |v| self.d.contains(v));
        self.ops(op).iter().any(|a| a.head == z && a.body.is_subset_of(&j))
    }

    /// `x` in `Phi_op(D)`.
    pub fn in_phi_d(&self, op: Requirement, x: u64) -> bool {
        self.ops(op).iter().any(|a| a.head == x && a.body.is_subset_of(|v| self.d.contains(v)))
    }

    pub fn snapshot(&self) -> Snapshot {
        let witnesses = self.witness.iter().map(|(n, x)| (n.clone(), *x));
        capture_snapshot(self.mode, self.stage, &self.a, &self.d, &self.markers, witnesses)
    }

    /// Last stage before the current one at which `node` was initialized.
    pub fn last_init(&self, node: &Node) -> u64 {
        let s = self.stage as usize;
        (1..s.min(self.f_history.len() + 1)).rev().find(|&t| &self.f_history[t - 1] < node).unwrap_or(0) as u64
    }

    pub fn apply(&mut self, e: &Event) -> Result<(), ReplayError> {
        let bad = |message: String| ReplayError::Inconsistent { seq: e.seq, message };
        if !self.started && !matches!(e.body, EventBody::RunStarted { .. }) {
            return Err(ReplayError::NotStarted);
        }
        self.stage = e.stage;
        let (s, t) = (e.stage, e.substage);
        match &e.body {
            EventBody::RunStarted { mode, stages, ordering, scenario } => {
                self.mode = mode.parse().map_err(bad)?;
                let ordering = RequirementOrdering::new(ordering).map_err(bad)?;
                self.tree = Tree::new(ordering);
                self.budget = *stages;
                self.scenario = scenario.clone();
                self.started = true;
            }
            EventBody::AxiomEntered { op, head, body } => {
                self.live.entry(*op).or_default().push(LiteralAxiom { head: *head, body: body.clone() });
            }
            EventBody::AxiomDropped { .. } | EventBody::SetupCreated { .. } | EventBody::GammaKilled { .. } => {}
            EventBody::StreamAdd { .. } => {}
            EventBody::WitnessAppointed { node, x, .. } => {
                self.witness.insert(node.clone(), *x);
            }
            EventBody::WitnessCanceled { node, x } => {
                if self.witness.get(node) != Some(x) {
                    return Err(bad(format!("{node} does not have witness {x}")));
                }
                self.witness.remove(node);
            }
            EventBody::Realized { node, uses, .. } => {
                self.realized.insert(node.clone(), uses.clone());
            }
            EventBody::ExtractA { x, derived } => {
                if *derived {
                    if self.mode != Mode::Corollary3 {
                        return Err(bad("derived extraction outside the block variant".into()));
                    }
                    if !self.a_derived_out.insert(*x) {
                        return Err(bad(format!("{x} left A twice")));
                    }
                } else {
                    self.a.extract(*x, s, t).map_err(|err| bad(format!("A: {err}")))?;
                }
            }
            EventBody::ExtractD { d } => self.d.extract(*d, s, t).map_err(|err| bad(format!("D: {err}")))?,
            EventBody::EnumD { d } => self.d.enumerate(*d, s, t).map_err(|err| bad(format!("D: {err}")))?,
            EventBody::MarkerDefined { owner, z, x, value } => {
                if !self.markers.define(owner.clone(), *z, *x, *value, s) {
                    return Err(bad(format!("marker {value} reused or slot ({z},{x}) of {owner} taken")));
                }
            }
            EventBody::MarkerCanceled { value, .. } => {
                if !self.markers.cancel(*value) {
                    return Err(bad(format!("marker {value} canceled while not defined")));
                }
            }
            EventBody::GammaAxiom { node, z, body } => {
                self.gamma.entry(node.clone()).or_default().insert(LiteralAxiom { head: *z, body: body.clone() });
            }
            EventBody::DeltaAxiom { node, x, body } => {
                self.delta.entry(node.clone()).or_default().insert(LiteralAxiom { head: *x, body: body.clone() });
            }
            EventBody::OutcomeTaken { node, .. } => {
                if node.last() == Some(Outcome::Stop) {
                    self.stopped.insert(node.parent().expect("non-root"));
                }
            }
            EventBody::Initialize { node, markers, subtree, .. } => {
                if *subtree {
                    self.reset_where(|n| node.is_prefix_of(n));
                } else {
                    self.reset_where(|n| n == node);
                }
                for v in markers {
                    if !self.markers.cancel(*v) {
                        return Err(bad(format!("initialization cancels marker {v}, which is not defined")));
                    }
                }
            }
            EventBody::StageEnd { f } => {
                if self.f_history.len() as u64 + 1 != s {
                    return Err(bad(format!("stage {s} ends out of order")));
                }
                self.f_history.push(f.clone());
            }
            EventBody::RunFinished { snapshot } => self.finished = Some(snapshot.clone()),
        }
        Ok(())
    }

    fn reset_where(&mut self, hit: impl Fn(&Node) -> bool) {
        self.witness.retain(|n, _| !hit(n));
        self.stopped.retain(|n| !hit(n));
        self.realized.retain(|n, _| !hit(n));
        self.gamma.retain(|n, _| !hit(n));
        self.delta.retain(|n, _| !hit(n));
    }
}

/// Replays a whole trace and checks the result against its final snapshot.
pub fn replay(events: &[Event]) -> Result<Replay, ReplayError> {
    let mut r = Replay::new();
    for e in events {
        r.apply(e)?;
    }
    let Some(recorded) = r.finished.clone() else {
        return Err(ReplayError::NotFinished);
    };
    let mine = r.snapshot();
    if mine != recorded {
        return Err(ReplayError::Mismatch { stage: recorded.stage, detail: snapshot_diff(&recorded, &mine) });
    }
    Ok(r)
}

/// Checks a list of intermediate snapshots against the trace.
pub fn check_snapshots(events: &[Event], snapshots: &[Snapshot]) -> Result<(), ReplayError> {
    let mut r = Replay::new();
    let mut pending = snapshots.iter().peekable();
    for e in events {
        r.apply(e)?;
        if let EventBody::StageEnd { .. } = e.body {
            while let Some(snap) = pending.next_if(|snap| snap.stage == e.stage) {
                let mine = r.snapshot();
                if &mine != snap {
                    return Err(ReplayError::Mismatch { stage: snap.stage, detail: snapshot_diff(snap, &mine) });
                }
            }
        }
    }
    match pending.next() {
        Some(snap) => Err(ReplayError::Mismatch { stage: snap.stage, detail: "stage not in trace".into() }),
        None => Ok(()),
    }
}

fn snapshot_diff(want: &Snapshot, got: &Snapshot) -> String {
    let mut parts = Vec::new();
    if want.a_extracted != got.a_extracted {
        parts.push(format!("A-extracted {:?} vs {:?}", want.a_extracted, got.a_extracted));
    }
    if want.d_extracted != got.d_extracted {
        parts.push(format!("D-extracted {:?} vs {:?}", want.d_extracted, got.d_extracted));
    }
    if want.d_reentered != got.d_reentered {
        parts.push(format!("D-reentered {:?} vs {:?}", want.d_reentered, got.d_reentered));
    }
    if want.markers != got.markers {
        parts.push("defined markers differ".into());
    }
    if want.witnesses != got.witnesses {
        parts.push("witnesses differ".into());
    }
    if want.stage != got.stage {
        parts.push(format!("stage {} vs {}", want.stage, got.stage));
    }
    parts.join("; ")
}
