//! Audits over traces.
//!
//! Every audit is a pure function of the event list. A failing audit carries
//! the first violation it met; audits about limit behaviour only judge a
//! final window of stages and say so when the window is not quiet.

pub mod replay;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use replay::{check_snapshots, replay, Replay, ReplayError};

use crate::engine::{Event, EventBody, Mode, Transition, WitnessSource};
use crate::omega;
use crate::tree::{Node, Outcome, Requirement, Status};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NoVerdict,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub element: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<Node>,
    pub stages: Vec<u64>,
    /// Sequence numbers of the events involved.
    pub events: Vec<u64>,
    pub message: String,
}

impl Counterexample {
    fn at(e: &Event, message: impl Into<String>) -> Self {
        Self { stages: vec![e.stage], events: vec![e.seq], message: message.into(), ..Self::default() }
    }

    fn element(mut self, x: u64) -> Self {
        self.element = Some(x);
        self
    }

    fn node(mut self, n: &Node) -> Self {
        self.node = Some(n.clone());
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub name: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stats: BTreeMap<String, Value>,
}

impl AuditReport {
    fn new(kind: AuditKind, verdict: Verdict) -> Self {
        Self { name: kind.to_string(), verdict, counterexample: None, stats: BTreeMap::new() }
    }

    fn pass(kind: AuditKind) -> Self {
        Self::new(kind, Verdict::Pass)
    }

    fn fail(kind: AuditKind, cx: Counterexample) -> Self {
        Self { counterexample: Some(cx), ..Self::new(kind, Verdict::Fail) }
    }

    fn no_verdict(kind: AuditKind, why: impl Into<String>) -> Self {
        Self::new(kind, Verdict::NoVerdict).stat("reason", why.into())
    }

    fn stat(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.stats.insert(key.into(), v.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "FAIL",
            Verdict::NoVerdict => "no verdict",
        };
        write!(f, "{:<14} {v}", self.name)?;
        if let Some(cx) = &self.counterexample {
            write!(f, ": {}", cx.message)?;
            if let Some(x) = cx.element {
                write!(f, " [element {x}]")?;
            }
            if let Some(n) = &cx.node {
                write!(f, " [node {n}]")?;
            }
            write!(f, " [stages {:?}, events {:?}]", cx.stages, cx.events)?;
        }
        if let Some(Value::String(r)) = self.stats.get("reason") {
            write!(f, ": {r}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuditKind {
    ChangeCounts,
    Markers,
    Streams,
    TruePath,
    ROutcomes,
    SQuiescence,
    Omega,
}

impl AuditKind {
    pub const ALL: [AuditKind; 7] = [
        AuditKind::ChangeCounts,
        AuditKind::Markers,
        AuditKind::Streams,
        AuditKind::TruePath,
        AuditKind::ROutcomes,
        AuditKind::SQuiescence,
        AuditKind::Omega,
    ];

    /// Audits that apply to a trace of the given mode.
    pub fn for_mode(mode: Mode) -> Vec<AuditKind> {
        Self::ALL.into_iter().filter(|k| *k != AuditKind::Omega || mode == Mode::Corollary3).collect()
    }
}

impl fmt::Display for AuditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuditKind::ChangeCounts => "change_counts",
            AuditKind::Markers => "markers",
            AuditKind::Streams => "streams",
            AuditKind::TruePath => "true_path",
            AuditKind::ROutcomes => "r_outcomes",
            AuditKind::SQuiescence => "s_quiescence",
            AuditKind::Omega => "omega",
        })
    }
}

impl FromStr for AuditKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown audit `{s}` (expected all or one of change_counts, markers, streams, true_path, r_outcomes, s_quiescence, omega)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub window: u64,
    pub zbound: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { window: 25, zbound: 64 }
    }
}

/// Mode recorded in the trace header, if any.
pub fn trace_mode(events: &[Event]) -> Option<Mode> {
    events.iter().find_map(|e| match &e.body {
        EventBody::RunStarted { mode, .. } => mode.parse().ok(),
        _ => None,
    })
}

pub fn run_audit(kind: AuditKind, events: &[Event], opts: &AuditOptions) -> AuditReport {
    match kind {
        AuditKind::ChangeCounts => audit_change_counts(events),
        AuditKind::Markers => audit_markers(events),
        AuditKind::Streams => audit_streams(events),
        AuditKind::TruePath => true_path_estimate(events, opts.window),
        AuditKind::ROutcomes => check_r_outcomes(events),
        AuditKind::SQuiescence => check_s_at_quiescence(events, opts.window, opts.zbound),
        AuditKind::Omega => omega_consistency(events),
    }
}

pub fn run_audits(kinds: &[AuditKind], events: &[Event], opts: &AuditOptions) -> Vec<AuditReport> {
    kinds.iter().map(|k| run_audit(*k, events, opts)).collect()
}

fn replay_failure(kind: AuditKind, err: ReplayError) -> AuditReport {
    let cx = match &err {
        ReplayError::Inconsistent { seq, .. } => Counterexample { events: vec![*seq], ..Counterexample::default() },
        _ => Counterexample::default(),
    };
    AuditReport::fail(kind, Counterexample { message: format!("trace does not replay: {err}"), ..cx })
}

/// `A` changes at most once, by extraction; `D` changes follow
/// `[]`, `[extract]` or `[extract, enumerate]`.
pub fn audit_change_counts(events: &[Event]) -> AuditReport {
    const K: AuditKind = AuditKind::ChangeCounts;
    let mut a_log: BTreeMap<u64, Vec<&Event>> = BTreeMap::new();
    let mut d_log: BTreeMap<u64, Vec<(Transition, &Event)>> = BTreeMap::new();
    let log_cx = |x: u64, log: &[&Event], message: String| Counterexample {
        element: Some(x),
        node: None,
        stages: log.iter().map(|e| e.stage).collect(),
        events: log.iter().map(|e| e.seq).collect(),
        message,
    };
    for e in events {
        match &e.body {
            EventBody::ExtractA { x, .. } => {
                let log = a_log.entry(*x).or_default();
                log.push(e);
                if log.len() > 1 {
                    return AuditReport::fail(K, log_cx(*x, log, format!("{x} changed in A {} times", log.len())));
                }
            }
            EventBody::ExtractD { d: x } | EventBody::EnumD { d: x } => {
                let tr = if matches!(e.body, EventBody::ExtractD { .. }) {
                    Transition::Extract
                } else {
                    Transition::Enumerate
                };
                let log = d_log.entry(*x).or_default();
                log.push((tr, e));
                let pattern: Vec<Transition> = log.iter().map(|(t, _)| *t).collect();
                let ok =
                    matches!(pattern.as_slice(), [Transition::Extract] | [Transition::Extract, Transition::Enumerate]);
                if !ok {
                    let evs: Vec<&Event> = log.iter().map(|(_, e)| *e).collect();
                    return AuditReport::fail(K, log_cx(*x, &evs, format!("{x} has D-history {pattern:?}")));
                }
            }
            _ => {}
        }
    }
    AuditReport::pass(K)
        .stat("a_changes", a_log.len())
        .stat("d_changes", d_log.values().map(Vec::len).sum::<usize>())
        .stat("d_reentered", d_log.values().filter(|l| l.len() == 2).count())
}

/// Numbers an event brings into play, for the freshness check.
fn numbers_in(body: &EventBody) -> Vec<u64> {
    match body {
        EventBody::RunStarted { .. } | EventBody::AxiomDropped { .. } | EventBody::RunFinished { .. } => vec![],
        EventBody::AxiomEntered { head, body, .. } => std::iter::once(*head).chain(body.iter()).collect(),
        EventBody::WitnessAppointed { x, .. } | EventBody::WitnessCanceled { x, .. } => vec![*x],
        EventBody::Realized { x, uses, .. } => std::iter::once(*x).chain(uses.iter()).collect(),
        EventBody::ExtractA { x, .. } => vec![*x],
        EventBody::ExtractD { d } | EventBody::EnumD { d } => vec![*d],
        EventBody::MarkerDefined { z, x, value, .. } => vec![*z, *x, *value],
        EventBody::MarkerCanceled { value, .. } => vec![*value],
        EventBody::GammaAxiom { z, body, .. } => std::iter::once(*z).chain(body.iter()).collect(),
        EventBody::DeltaAxiom { x, body, .. } => std::iter::once(*x).chain(body.iter()).collect(),
        EventBody::StreamAdd { x, .. } => vec![*x],
        EventBody::OutcomeTaken { stream, p, .. } => {
            std::iter::once(*p).chain(stream.iter().map(|&(_, hi)| hi.saturating_sub(1))).collect()
        }
        EventBody::SetupCreated { x, z, d, .. } => vec![*x, *z, *d],
        EventBody::GammaKilled { markers, .. } => markers.clone(),
        EventBody::Initialize { witness, markers, .. } => witness.iter().chain(markers).copied().collect(),
        EventBody::StageEnd { .. } => vec![],
    }
}

/// Marker values are new when picked and never reused; defined markers sit
/// in `D`; right after an S-node acts, each of its markers still in `D`
/// belongs to a pair whose `x` is in `A`.
pub fn audit_markers(events: &[Event]) -> AuditReport {
    const K: AuditKind = AuditKind::Markers;
    let mut r = Replay::new();
    let mut mentioned = 0u64;
    let mut defined = 0usize;
    for e in events {
        match &e.body {
            EventBody::MarkerDefined { value, owner, .. } => {
                if r.markers.get(*value).is_some() {
                    return AuditReport::fail(
                        K,
                        Counterexample::at(e, "marker value used twice").element(*value).node(owner),
                    );
                }
                if *value <= mentioned.max(e.stage) {
                    return AuditReport::fail(
                        K,
                        Counterexample::at(e, format!("marker is not new: {mentioned} was already mentioned"))
                            .element(*value)
                            .node(owner),
                    );
                }
                defined += 1;
            }
            EventBody::MarkerCanceled { value, owner } if !r.markers.get(*value).is_some_and(|m| m.defined) => {
                let msg = "canceling a marker that is not defined";
                return AuditReport::fail(K, Counterexample::at(e, msg).element(*value).node(owner));
            }
            _ => {}
        }
        if let Err(err) = r.apply(e) {
            return replay_failure(K, err);
        }
        mentioned = numbers_in(&e.body).into_iter().fold(mentioned.max(e.stage), u64::max);
        match &e.body {
            EventBody::OutcomeTaken { node, case, .. } if case == "1" => {
                let owner = node.parent().expect("non-root");
                for m in r.markers.defined_by(&owner) {
                    if r.d.contains(m.value) && !r.in_a(m.x) {
                        let msg = format!("after acting, marker for ({},{}) is in D but {} is not in A", m.z, m.x, m.x);
                        return AuditReport::fail(K, Counterexample::at(e, msg).element(m.value).node(&owner));
                    }
                }
            }
            EventBody::StageEnd { .. } => {
                if let Some(m) = r.markers.all_defined().find(|m| !r.d.contains(m.value)) {
                    let msg = "defined marker is not in D at stage end";
                    return AuditReport::fail(K, Counterexample::at(e, msg).element(m.value).node(&m.owner));
                }
            }
            _ => {}
        }
    }
    AuditReport::pass(K).stat("markers_defined", defined).stat("markers_live", r.markers.all_defined().count())
}

fn intervals_subset(small: &[(u64, u64)], big: &[(u64, u64)]) -> bool {
    small.iter().all(|&(lo, hi)| lo >= hi || big.iter().any(|&(a, b)| a <= lo && hi <= b))
}

/// Streams stay inside `[p, s)` and only grow between initializations;
/// picked witnesses and setup witnesses strictly increase.
pub fn audit_streams(events: &[Event]) -> AuditReport {
    const K: AuditKind = AuditKind::Streams;
    let mut r = Replay::new();
    // node -> (last init, last stream)
    let mut streams: HashMap<Node, (u64, Vec<(u64, u64)>)> = HashMap::new();
    let mut picks: HashMap<Node, (u64, u64)> = HashMap::new();
    let mut setups: HashMap<Node, (u64, u64)> = HashMap::new();
    let mut checked = 0usize;
    for e in events {
        if let Err(err) = r.apply(e) {
            return replay_failure(K, err);
        }
        let s = e.stage;
        match &e.body {
            EventBody::OutcomeTaken { node, stream, p, .. } => {
                checked += 1;
                let init = r.last_init(node);
                let want_p = (node.len() as u64).max(init);
                if *p != want_p {
                    let msg = format!("p recorded as {p}, recomputed as {want_p}");
                    return AuditReport::fail(K, Counterexample::at(e, msg).node(node));
                }
                if let Some(&(lo, hi)) = stream.iter().find(|&&(lo, hi)| lo < *p || hi > s) {
                    let msg = format!("stream interval [{lo},{hi}) leaves [{p},{s})");
                    return AuditReport::fail(K, Counterexample::at(e, msg).node(node).element(lo));
                }
                if let Some((prev_init, prev)) = streams.get(node) {
                    if *prev_init == init && !intervals_subset(prev, stream) {
                        let msg = format!("stream shrank from {prev:?} to {stream:?} without initialization");
                        return AuditReport::fail(K, Counterexample::at(e, msg).node(node));
                    }
                }
                streams.insert(node.clone(), (init, stream.clone()));
            }
            EventBody::WitnessAppointed { node, x, source: WitnessSource::Pick } => {
                let init = r.last_init(node);
                if let Some(&(prev_init, prev)) = picks.get(node) {
                    if prev_init == init && *x <= prev {
                        let msg = format!("picked {x} after {prev} without initialization");
                        return AuditReport::fail(K, Counterexample::at(e, msg).node(node).element(*x));
                    }
                }
                let wait = node.child(Outcome::Wait);
                let p_wait = (wait.len() as u64).max(r.last_init(&wait));
                let in_stream =
                    streams.get(node).is_some_and(|(_, st)| st.iter().any(|&(lo, hi)| (lo..hi).contains(x)));
                if *x < p_wait || !in_stream {
                    let msg = format!("witness {x} is not in the stream above {p_wait}");
                    return AuditReport::fail(K, Counterexample::at(e, msg).node(node).element(*x));
                }
                picks.insert(node.clone(), (init, *x));
            }
            EventBody::StreamAdd { node, x } => {
                let init = r.last_init(node);
                if let Some(&(prev_init, prev)) = setups.get(node) {
                    if prev_init == init && *x <= prev {
                        let msg = format!("setup witness {x} does not exceed {prev}");
                        return AuditReport::fail(K, Counterexample::at(e, msg).node(node).element(*x));
                    }
                }
                setups.insert(node.clone(), (init, *x));
            }
            _ => {}
        }
    }
    AuditReport::pass(K).stat("visits_checked", checked)
}

/// Estimate of the leftmost path visited in the final `window` stages and
/// how much of it has settled.
pub fn true_path_estimate(events: &[Event], window: u64) -> AuditReport {
    const K: AuditKind = AuditKind::TruePath;
    let f: Vec<&Node> = events
        .iter()
        .filter_map(|e| match &e.body {
            EventBody::StageEnd { f } => Some(f),
            _ => None,
        })
        .collect();
    let budget = f.len() as u64;
    let left_drift = f.windows(2).filter(|w| w[1].is_left_of(w[0])).count();
    if budget <= 1 || budget < window || window == 0 {
        return AuditReport::no_verdict(K, format!("{budget} stages is too short for a window of {window}"))
            .stat("degenerate", true)
            .stat("left_drift", left_drift);
    }
    let start = (budget - window) as usize;
    let recent = &f[start..];
    let mut estimate = Node::root();
    loop {
        let d = estimate.len();
        let next = recent.iter().filter(|g| estimate.is_proper_prefix_of(g)).map(|g| g.outcomes()[d]).min();
        match next {
            Some(o) => estimate = estimate.child(o),
            None => break,
        }
    }
    // stage s initializes every node to the right of or below f_s
    let inits = |n: &Node| -> (usize, u64) {
        let hits: Vec<u64> = f.iter().enumerate().filter(|(_, g)| **g < n).map(|(i, _)| i as u64 + 1).collect();
        (hits.len(), hits.last().copied().unwrap_or(0))
    };
    let cutoff = budget - window;
    let mut stable = Node::root();
    let mut counts = Vec::new();
    for len in 1..=estimate.len() {
        let prefix = estimate.prefix(len);
        let (count, last) = inits(&prefix);
        if last > cutoff {
            break;
        }
        counts.push(json!({ "node": prefix.to_string(), "initializations": count, "last_initialized": last }));
        stable = prefix;
    }
    let report = if stable.is_root() {
        AuditReport::no_verdict(K, "no part of the estimate is settled")
    } else {
        AuditReport::pass(K)
    };
    report
        .stat("estimate", estimate.to_string())
        .stat("stable_prefix", stable.to_string())
        .stat("stable_len", stable.len())
        .stat("prefix_initializations", Value::Array(counts))
        .stat("left_drift", left_drift)
}

/// Stopped R-nodes keep their diagonalization; waiting R-nodes on the final
/// path keep an unrealized witness.
pub fn check_r_outcomes(events: &[Event]) -> AuditReport {
    const K: AuditKind = AuditKind::ROutcomes;
    let mut r = Replay::new();
    let mut appointed_at: HashMap<Node, u64> = HashMap::new();
    let mut last_end: Option<&Event> = None;
    for e in events {
        if let Err(err) = r.apply(e) {
            return replay_failure(K, err);
        }
        match &e.body {
            EventBody::WitnessAppointed { node, .. } => {
                appointed_at.insert(node.clone(), e.stage);
            }
            EventBody::StageEnd { .. } => {
                last_end = Some(e);
                for node in &r.stopped {
                    let Some(f) = r.realized.get(node) else {
                        return AuditReport::fail(
                            K,
                            Counterexample::at(e, "stopped without a realized use").node(node),
                        );
                    };
                    if let Some(d) = f.iter().find(|&d| !r.d.contains(d)) {
                        let msg = "use of a stopped witness left D";
                        return AuditReport::fail(K, Counterexample::at(e, msg).node(node).element(d));
                    }
                }
            }
            _ => {}
        }
    }
    let Some(end) = last_end else {
        return AuditReport::no_verdict(K, "trace has no completed stage");
    };
    let op_of = |n: &Node| r.tree.assign_requirement(n).ok();
    for node in &r.stopped {
        let (Some(op @ Requirement::R(_)), Some(&x)) = (op_of(node), r.witness.get(node)) else {
            return AuditReport::fail(K, Counterexample::at(end, "stopped node without a witness").node(node));
        };
        if r.in_a(x) || !r.in_phi_d(op, x) {
            let msg = format!("stopped witness {x}: in A = {}, realized = {}", r.in_a(x), r.in_phi_d(op, x));
            return AuditReport::fail(K, Counterexample::at(end, msg).node(node).element(x));
        }
    }
    let f = r.f_history.last().cloned().unwrap_or_default();
    let mut waiting = 0;
    for d in 0..f.len() {
        let alpha = f.prefix(d);
        let Some(op @ Requirement::R(_)) = op_of(&alpha) else { continue };
        if f.outcomes()[d] != Outcome::Wait {
            continue;
        }
        let Some(&x) = r.witness.get(&alpha) else { continue };
        if appointed_at.get(&alpha).is_some_and(|&s| s >= end.stage) {
            continue;
        }
        waiting += 1;
        if !r.in_a(x) || r.in_phi_d(op, x) {
            let msg = format!("waiting witness {x}: in A = {}, realized = {}", r.in_a(x), r.in_phi_d(op, x));
            return AuditReport::fail(K, Counterexample::at(end, msg).node(&alpha).element(x));
        }
    }
    AuditReport::pass(K).stat("stopped", r.stopped.len()).stat("waiting", waiting)
}

fn is_quiet_event(body: &EventBody) -> bool {
    !matches!(
        body,
        EventBody::ExtractA { .. }
            | EventBody::ExtractD { .. }
            | EventBody::EnumD { .. }
            | EventBody::AxiomEntered { .. }
            | EventBody::MarkerDefined { .. }
            | EventBody::MarkerCanceled { .. }
            | EventBody::GammaAxiom { .. }
            | EventBody::DeltaAxiom { .. }
    )
}

/// Once nothing has changed for `window` stages, every S-node active along
/// the final path computes its set correctly through Gamma, and every
/// Delta built on an edge of the final path computes `A`.
pub fn check_s_at_quiescence(events: &[Event], window: u64, zbound: u64) -> AuditReport {
    const K: AuditKind = AuditKind::SQuiescence;
    let r = match replay_all(events) {
        Ok(r) => r,
        Err(err) => return replay_failure(K, err),
    };
    let budget = r.f_history.len() as u64;
    if budget < window || budget == 0 {
        return AuditReport::no_verdict(K, format!("{budget} stages is too short for a window of {window}"));
    }
    let cutoff = budget - window;
    if let Some(e) = events.iter().rev().find(|e| e.stage > cutoff && !is_quiet_event(&e.body)) {
        return AuditReport::no_verdict(K, format!("not quiescent: change at stage {} (event {})", e.stage, e.seq));
    }
    let f = r.f_history.last().cloned().unwrap_or_default();
    let info = match r.tree.info(&f) {
        Ok(i) => i,
        Err(err) => return replay_failure(K, ReplayError::Inconsistent { seq: 0, message: err.to_string() }),
    };
    let mut s_checked = 0;
    for (depth, (req, status)) in info.ancestor_reqs.iter().zip(&info.statuses).enumerate() {
        let (Requirement::S(_), Status::Active) = (req, status) else { continue };
        let beta = f.prefix(depth);
        let gamma = r.gamma.get(&beta);
        s_checked += 1;
        for z in 0..zbound {
            let target = r.in_phi_join(*req, z);
            let via_gamma =
                gamma.is_some_and(|g| g.iter().any(|a| a.head == z && a.body.is_subset_of(|v| r.d.contains(v))));
            if target != via_gamma {
                let msg = format!("z = {z}: in the set = {target}, through Gamma = {via_gamma}");
                let cx = Counterexample {
                    element: Some(z),
                    node: Some(beta),
                    stages: vec![budget],
                    events: vec![],
                    message: msg,
                };
                return AuditReport::fail(K, cx);
            }
        }
    }
    let mut edges = 0;
    for depth in 0..f.len() {
        let Outcome::I(i) = f.outcomes()[depth] else { continue };
        let alpha = f.prefix(depth);
        let Ok(ainfo) = r.tree.info(&alpha) else { continue };
        let op = ainfo.ancestor_reqs[ainfo.active_s[i as usize]];
        let child = alpha.child(Outcome::I(i));
        edges += 1;
        let Some(delta) = r.delta.get(&child) else { continue };
        let heads: BTreeSet<u64> = delta.iter().map(|a| a.head).filter(|&x| x < zbound).collect();
        for x in heads {
            let via_delta = delta.iter().any(|a| a.head == x && a.body.iter().all(|z| r.in_phi_join(op, z)));
            if via_delta != r.in_a(x) {
                let msg = format!("x = {x}: in A = {}, through Delta = {via_delta}", r.in_a(x));
                let cx = Counterexample {
                    element: Some(x),
                    node: Some(child),
                    stages: vec![budget],
                    events: vec![],
                    message: msg,
                };
                return AuditReport::fail(K, cx);
            }
        }
    }
    AuditReport::pass(K).stat("s_nodes", s_checked).stat("delta_edges", edges)
}

fn replay_all(events: &[Event]) -> Result<Replay, ReplayError> {
    let mut r = Replay::new();
    for e in events {
        r.apply(e)?;
    }
    Ok(r)
}

/// In the block variant, `A` is exactly what the blocks in `D` say, markers
/// are odd, and each block loses at most one element.
pub fn omega_consistency(events: &[Event]) -> AuditReport {
    const K: AuditKind = AuditKind::Omega;
    if trace_mode(events) != Some(Mode::Corollary3) {
        let cx = Counterexample { message: "trace is not from the block variant".into(), ..Counterexample::default() };
        return AuditReport::fail(K, cx);
    }
    let mut r = Replay::new();
    let mut touched_blocks: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for e in events {
        if let Err(err) = r.apply(e) {
            return replay_failure(K, err);
        }
        match &e.body {
            EventBody::MarkerDefined { value, owner, .. } if value % 2 == 0 => {
                return AuditReport::fail(K, Counterexample::at(e, "even marker").element(*value).node(owner));
            }
            EventBody::ExtractD { d } | EventBody::EnumD { d } => {
                if let Some(n) = omega::block_of(*d) {
                    let elems = touched_blocks.entry(n).or_default();
                    elems.insert(*d);
                    if elems.len() > 1 {
                        let msg = format!("both elements of block {n} changed");
                        return AuditReport::fail(K, Counterexample::at(e, msg).element(n));
                    }
                }
            }
            EventBody::ExtractA { x, derived: false } => {
                return AuditReport::fail(K, Counterexample::at(e, "A changed directly").element(*x));
            }
            EventBody::StageEnd { .. } => {
                let candidates: BTreeSet<u64> = touched_blocks.keys().chain(&r.a_derived_out).copied().collect();
                for n in candidates {
                    let recorded = !r.a_derived_out.contains(&n);
                    if recorded != omega::in_omega(&r.d, n) {
                        let msg =
                            format!("A says {n} is {}in, the blocks of D disagree", if recorded { "" } else { "not " });
                        return AuditReport::fail(K, Counterexample::at(e, msg).element(n));
                    }
                }
            }
            _ => {}
        }
    }
    AuditReport::pass(K).stat("blocks_touched", touched_blocks.len())
}
