use sdeg_core::adversary::builtin;
use sdeg_core::engine::{read_jsonl, run, to_jsonl, Event, EventBody, Mode, RunSpec};
use sdeg_core::operator::FiniteSet;
use sdeg_core::tree::{Node, Outcome, Requirement, RequirementOrdering};
use sdeg_core::verifier::{
    check_snapshots, replay, run_audit, run_audits, AuditKind, AuditOptions, ReplayError, Verdict,
};

fn trace(name: &str, stages: u64, mode: Mode) -> Vec<Event> {
    let adv = builtin(name, &RequirementOrdering::default(), Some(3), stages).unwrap();
    run(RunSpec::new(adv, stages).mode(mode).label(name)).unwrap().events
}

fn audit(kind: AuditKind, events: &[Event]) -> sdeg_core::verifier::AuditReport {
    run_audit(kind, events, &AuditOptions::default())
}

/// Inserts `body` right after the event at `at`, renumbering sequence
/// numbers.
fn insert_after(events: &[Event], at: usize, body: EventBody) -> Vec<Event> {
    let mut out = events.to_vec();
    let e = Event { seq: 0, stage: events[at].stage, substage: events[at].substage, body };
    out.insert(at + 1, e);
    for (i, e) in out.iter_mut().enumerate() {
        e.seq = i as u64;
    }
    out
}

fn position(events: &[Event], pred: impl Fn(&EventBody) -> bool) -> usize {
    events.iter().position(|e| pred(&e.body)).expect("event present")
}

fn last_stage_end(events: &[Event]) -> usize {
    events.iter().rposition(|e| matches!(e.body, EventBody::StageEnd { .. })).unwrap()
}

#[test]
fn every_audit_passes_on_builtin_scenarios() {
    for name in ["empty", "diag1", "setup1", "setup-then-release"] {
        for mode in [Mode::Theorem2, Mode::Corollary3] {
            let events = trace(name, 100, mode);
            for r in run_audits(&AuditKind::for_mode(mode), &events, &AuditOptions::default()) {
                assert_eq!(r.verdict, Verdict::Pass, "{name} {mode}: {r}");
            }
        }
    }
}

#[test]
fn empty_adversary_counts_nothing() {
    let events = trace("empty", 40, Mode::Theorem2);
    let r = audit(AuditKind::ChangeCounts, &events);
    assert!(r.passed());
    assert_eq!(r.stats["a_changes"], 0);
    assert_eq!(r.stats["d_changes"], 0);
    assert_eq!(audit(AuditKind::Markers, &events).stats["markers_defined"], 0);
}

#[test]
fn release_shows_reentry() {
    let r = audit(AuditKind::ChangeCounts, &trace("setup-then-release", 60, Mode::Theorem2));
    assert!(r.passed());
    assert_eq!(r.stats["d_reentered"], 1);
}

#[test]
fn second_a_extraction_is_caught() {
    let events = trace("diag1", 20, Mode::Theorem2);
    let at = position(&events, |b| matches!(b, EventBody::ExtractA { .. }));
    let EventBody::ExtractA { x, .. } = events[at].body else { unreachable!() };
    // a trace that re-enumerates x and extracts it again
    let bad = insert_after(&events, last_stage_end(&events) - 1, EventBody::ExtractA { x, derived: false });
    let r = audit(AuditKind::ChangeCounts, &bad);
    assert_eq!(r.verdict, Verdict::Fail);
    let cx = r.counterexample.unwrap();
    assert_eq!(cx.element, Some(x));
    assert_eq!(cx.events.len(), 2);
}

#[test]
fn third_d_change_is_caught() {
    let events = trace("setup-then-release", 60, Mode::Theorem2);
    let at = position(&events, |b| matches!(b, EventBody::EnumD { .. }));
    let EventBody::EnumD { d } = events[at].body else { unreachable!() };
    let bad = insert_after(&events, at, EventBody::ExtractD { d });
    let r = audit(AuditKind::ChangeCounts, &bad);
    assert_eq!(r.verdict, Verdict::Fail);
    assert_eq!(r.counterexample.unwrap().element, Some(d));
}

#[test]
fn stale_marker_value_is_caught() {
    let events = trace("setup1", 30, Mode::Theorem2);
    let mut bad = events.clone();
    let at = position(&bad, |b| matches!(b, EventBody::MarkerDefined { .. }));
    let EventBody::MarkerDefined { value, .. } = &mut bad[at].body else { unreachable!() };
    let old = *value;
    *value = 1;
    for e in bad.iter_mut().skip(at + 1) {
        match &mut e.body {
            EventBody::ExtractD { d } | EventBody::EnumD { d } if *d == old => *d = 1,
            EventBody::GammaAxiom { body, .. } if *body == FiniteSet::singleton(old) => *body = FiniteSet::singleton(1),
            EventBody::GammaKilled { markers, .. } => markers.iter_mut().filter(|m| **m == old).for_each(|m| *m = 1),
            EventBody::MarkerCanceled { value, .. } if *value == old => *value = 1,
            _ => {}
        }
    }
    let r = audit(AuditKind::Markers, &bad);
    assert_eq!(r.verdict, Verdict::Fail, "{r}");
    assert_eq!(r.counterexample.unwrap().element, Some(1));
}

#[test]
fn marker_out_of_d_is_caught() {
    let events = trace("setup1", 8, Mode::Theorem2);
    let at = position(&events, |b| matches!(b, EventBody::MarkerDefined { .. }));
    let EventBody::MarkerDefined { value, .. } = events[at].body else { unreachable!() };
    let bad = insert_after(&events, at, EventBody::ExtractD { d: value });
    let r = audit(AuditKind::Markers, &bad);
    assert_eq!(r.verdict, Verdict::Fail);
    assert_eq!(r.counterexample.unwrap().element, Some(value));
}

#[test]
fn wrong_p_is_caught() {
    let mut events = trace("empty", 10, Mode::Theorem2);
    let at = events.iter().rposition(|e| matches!(e.body, EventBody::OutcomeTaken { .. })).unwrap();
    let EventBody::OutcomeTaken { p, .. } = &mut events[at].body else { unreachable!() };
    *p += 1;
    assert_eq!(audit(AuditKind::Streams, &events).verdict, Verdict::Fail);
}

#[test]
fn stream_past_stage_is_caught() {
    let mut events = trace("empty", 10, Mode::Theorem2);
    let at = events.iter().rposition(|e| matches!(e.body, EventBody::OutcomeTaken { .. })).unwrap();
    let stage = events[at].stage;
    let EventBody::OutcomeTaken { stream, .. } = &mut events[at].body else { unreachable!() };
    stream.push((stage + 3, stage + 5));
    let r = audit(AuditKind::Streams, &events);
    assert_eq!(r.verdict, Verdict::Fail);
    assert!(r.counterexample.unwrap().message.contains("leaves"));
}

#[test]
fn true_path_on_empty_is_the_spine() {
    let r = audit(AuditKind::TruePath, &trace("empty", 60, Mode::Theorem2));
    assert_eq!(r.verdict, Verdict::Pass);
    let stable: Vec<Outcome> =
        r.stats["stable_prefix"].as_str().unwrap().split('.').map(|o| o.parse().unwrap()).collect();
    assert!(stable.iter().all(|o| matches!(o, Outcome::Infty | Outcome::Wait)));
    assert!(stable.len() >= 30, "{r:?}");
}

#[test]
fn true_path_on_diag1_settles_on_stop() {
    let r = audit(AuditKind::TruePath, &trace("diag1", 60, Mode::Theorem2));
    assert_eq!(r.verdict, Verdict::Pass);
    assert!(r.stats["stable_prefix"].as_str().unwrap().starts_with("infty.stop"), "{r:?}");
}

#[test]
fn true_path_degenerate_budget() {
    let r = audit(AuditKind::TruePath, &trace("empty", 1, Mode::Theorem2));
    assert_eq!(r.verdict, Verdict::NoVerdict);
    assert_eq!(r.stats["degenerate"], true);
}

#[test]
fn r_outcomes_wait_form_on_empty() {
    let r = audit(AuditKind::ROutcomes, &trace("empty", 30, Mode::Theorem2));
    assert!(r.passed());
    assert_eq!(r.stats["stopped"], 0);
    assert!(r.stats["waiting"].as_u64().unwrap() > 0);
}

#[test]
fn r_outcomes_catch_missing_extraction() {
    let events = trace("diag1", 20, Mode::Theorem2);
    assert_eq!(audit(AuditKind::ROutcomes, &events).stats["stopped"], 1);
    let bad: Vec<Event> = events.into_iter().filter(|e| !matches!(e.body, EventBody::ExtractA { .. })).collect();
    let r = audit(AuditKind::ROutcomes, &bad);
    assert_eq!(r.verdict, Verdict::Fail);
    assert_eq!(r.counterexample.unwrap().node, Some(Node::from_outcomes([Outcome::Infty])));
}

#[test]
fn s_quiescence_needs_quiet_window() {
    let r = audit(AuditKind::SQuiescence, &trace("random", 60, Mode::Theorem2));
    assert_eq!(r.verdict, Verdict::NoVerdict);
    let r = audit(AuditKind::SQuiescence, &trace("empty", 10, Mode::Theorem2));
    assert_eq!(r.verdict, Verdict::NoVerdict);
}

#[test]
fn s_quiescence_catches_missing_gamma() {
    let events = trace("diag1", 60, Mode::Theorem2);
    assert!(audit(AuditKind::SQuiescence, &events).passed());
    let bad =
        insert_after(&events, 0, EventBody::AxiomEntered { op: Requirement::S(0), head: 0, body: FiniteSet::empty() });
    let r = audit(AuditKind::SQuiescence, &bad);
    assert_eq!(r.verdict, Verdict::Fail);
    let cx = r.counterexample.unwrap();
    assert_eq!((cx.element, cx.node), (Some(0), Some(Node::root())));
}

#[test]
fn delta_checked_at_setup_stage() {
    let events = trace("setup1", 10, Mode::Theorem2);
    let opts = AuditOptions { window: 0, zbound: 64 };
    let r = run_audit(AuditKind::SQuiescence, &events, &opts);
    assert!(r.passed(), "{r}");
    assert_eq!(r.stats["delta_edges"], 1);

    let mut bad = events.clone();
    for e in &mut bad {
        if let EventBody::DeltaAxiom { body, .. } = &mut e.body {
            if !body.is_empty() {
                *body = FiniteSet::singleton(40);
            }
        }
    }
    let r = run_audit(AuditKind::SQuiescence, &bad, &opts);
    assert_eq!(r.verdict, Verdict::Fail);
}

#[test]
fn omega_rejects_plain_mode() {
    let r = audit(AuditKind::Omega, &trace("diag1", 20, Mode::Theorem2));
    assert_eq!(r.verdict, Verdict::Fail);
    assert!(!AuditKind::for_mode(Mode::Theorem2).contains(&AuditKind::Omega));
}

#[test]
fn omega_catches_second_block_element() {
    let events = trace("diag1", 20, Mode::Corollary3);
    let at = position(&events, |b| matches!(b, EventBody::ExtractD { d } if d % 4 != 1 && d % 2 == 0));
    let EventBody::ExtractD { d } = events[at].body else { unreachable!() };
    let other = if d % 4 == 0 { d + 2 } else { d - 2 };
    let bad = insert_after(&events, at, EventBody::ExtractD { d: other });
    let r = audit(AuditKind::Omega, &bad);
    assert_eq!(r.verdict, Verdict::Fail);
    assert_eq!(r.counterexample.unwrap().element, Some(d / 4));
}

#[test]
fn omega_catches_direct_a_change() {
    let events = trace("empty", 10, Mode::Corollary3);
    let bad = insert_after(&events, 3, EventBody::ExtractA { x: 5, derived: false });
    assert_eq!(audit(AuditKind::Omega, &bad).verdict, Verdict::Fail);
}

#[test]
fn replay_detects_corruption() {
    let events = trace("setup-then-release", 50, Mode::Theorem2);
    assert!(replay(&events).is_ok());
    let dropped: Vec<Event> = events.iter().filter(|e| !matches!(e.body, EventBody::EnumD { .. })).cloned().collect();
    assert!(matches!(replay(&dropped), Err(ReplayError::Mismatch { .. })));
    let truncated = &events[..events.len() - 1];
    assert_eq!(replay(truncated).err(), Some(ReplayError::NotFinished));
    assert_eq!(replay(&events[1..]).err(), Some(ReplayError::NotStarted));
}

#[test]
fn snapshots_replay_exactly() {
    let adv = builtin("random", &RequirementOrdering::default(), Some(11), 80).unwrap();
    let spec = RunSpec { snapshot_every: Some(5), ..RunSpec::new(adv, 80) };
    let out = run(spec).unwrap();
    assert_eq!(out.snapshots.len(), 16);
    check_snapshots(&out.events, &out.snapshots).unwrap();
    let mut wrong = out.snapshots.clone();
    wrong[3].d_extracted.push(999);
    assert!(check_snapshots(&out.events, &wrong).is_err());
}

#[test]
fn audits_commute_with_serialization() {
    for seed in 0..4 {
        let events = trace("random", 70, if seed % 2 == 0 { Mode::Theorem2 } else { Mode::Corollary3 });
        let back = read_jsonl(to_jsonl(&events).as_bytes()).unwrap();
        assert_eq!(back, events);
        let opts = AuditOptions::default();
        assert_eq!(run_audits(&AuditKind::ALL, &back, &opts), run_audits(&AuditKind::ALL, &events, &opts));
    }
}
