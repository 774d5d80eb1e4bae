//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdeg_core::adversary::builtin;
use sdeg_core::engine::{read_jsonl, run, to_jsonl, Event, EventBody, Mode, RunOutput, RunSpec};
use sdeg_core::operator::{brute_force_s_reduce, FiniteSet};
use sdeg_core::tree::{Node, Outcome, Requirement, RequirementOrdering, Status, Tree};
use sdeg_core::verifier::{check_snapshots, replay, run_audit, run_audits, AuditKind, AuditOptions, Replay, Verdict};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn simulate(name: &str, seed: Option<u64>, stages: u64, mode: Mode) -> Result<RunOutput, String> {
    let adv = builtin(name, &RequirementOrdering::default(), seed, stages).map_err(|e| e.to_string())?;
    run(RunSpec::new(adv, stages).mode(mode).label(name)).map_err(|e| format!("{name}: {e}"))
}

fn all_audits_pass(events: &[Event], mode: Mode) -> Result<(), String> {
    for r in run_audits(&AuditKind::for_mode(mode), events, &AuditOptions::default()) {
        ensure(r.passed(), || format!("audit {r}"))?;
    }
    Ok(())
}

fn cases<'a>(events: &'a [Event], case: &'a str) -> impl Iterator<Item = (&'a Event, &'a Node)> + 'a {
    events.iter().filter_map(move |e| match &e.body {
        EventBody::OutcomeTaken { node, case: c, .. } if c == case => Some((e, node)),
        _ => None,
    })
}

fn d_log(events: &[Event], d: u64) -> Vec<&'static str> {
    events
        .iter()
        .filter_map(|e| match e.body {
            EventBody::ExtractD { d: v } if v == d => Some("extract"),
            EventBody::EnumD { d: v } if v == d => Some("enumerate"),
            _ => None,
        })
        .collect()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let out = simulate("empty", None, 200, Mode::Theorem2)?;
    let elapsed = start.elapsed();
    let changes =
        out.events.iter().filter(|e| matches!(e.body, EventBody::ExtractA { .. } | EventBody::ExtractD { .. })).count();
    ensure(changes == 0, || format!("{changes} extractions"))?;
    let tree = Tree::default();
    for (s, f) in out.engine.f_history().iter().enumerate() {
        for d in 0..f.len() {
            let req = tree.assign_requirement(&f.prefix(d)).map_err(|e| e.to_string())?;
            if let Requirement::R(_) = req {
                ensure(f.outcomes()[d] == Outcome::Wait, || format!("stage {}: R-node on {f} does not wait", s + 1))?;
            }
        }
    }
    all_audits_pass(&out.events, Mode::Theorem2)?;
    ensure(elapsed < Duration::from_secs(2), || format!("took {elapsed:?}"))?;
    Ok(format!("200 stages in {elapsed:.2?}, final f has length {}", out.engine.f_history().last().unwrap().len()))
}

fn criterion_2() -> Check {
    let out = simulate("diag1", None, 60, Mode::Theorem2)?;
    let fired: Vec<_> = cases(&out.events, "2.2.3.1").collect();
    ensure(fired.len() == 1, || format!("case fired {} times", fired.len()))?;
    let (ev, stop) = fired[0];
    let (fire_stage, alpha) = (ev.stage, stop.parent().unwrap());
    let tree = Tree::default();
    let op = tree.assign_requirement(&alpha).map_err(|e| e.to_string())?;

    let mut r = Replay::new();
    let mut x = None;
    for e in &out.events {
        r.apply(e).map_err(|e| e.to_string())?;
        if let EventBody::StageEnd { f } = &e.body {
            if e.stage < fire_stage {
                continue;
            }
            let w = *x.get_or_insert_with(|| r.witness[&alpha]);
            ensure(!r.in_a(w), || format!("stage {}: witness {w} back in A", e.stage))?;
            ensure(r.in_phi_d(op, w), || format!("stage {}: witness {w} not realized", e.stage))?;
            ensure(alpha.child(Outcome::Stop).is_prefix_of(f), || format!("stage {}: f = {f}", e.stage))?;
        }
    }
    let x = x.ok_or("no stage after firing")?;
    let a_changes = out.events.iter().filter(|e| matches!(e.body, EventBody::ExtractA { x: v, .. } if v == x)).count();
    ensure(a_changes == 1, || format!("witness {x} changed {a_changes} times in A"))?;
    Ok(format!("fired once at stage {fire_stage} on {alpha}, witness {x}, f ends in stop from then on"))
}

fn criterion_3() -> Check {
    let out = simulate("setup1", None, 80, Mode::Theorem2)?;
    let (ev, node) = cases(&out.events, "2.2.3.3").next().ok_or("case never fired")?;
    let (x, z, d) = out
        .events
        .iter()
        .find_map(|e| match &e.body {
            EventBody::SetupCreated { x, z, d, .. } => Some((*x, *z, *d)),
            _ => None,
        })
        .ok_or("no setup_created")?;
    let has_delta = out.events.iter().any(
        |e| matches!(&e.body, EventBody::DeltaAxiom { x: h, body, .. } if *h == x && *body == FiniteSet::singleton(z)),
    );
    ensure(has_delta, || format!("no delta axiom <{x},{{{z}}}>"))?;
    let has_stream = out.events.iter().any(|e| matches!(&e.body, EventBody::StreamAdd { x: v, .. } if *v == x));
    ensure(has_stream, || format!("no stream_add {x}"))?;
    let killed: Vec<u64> = out
        .events
        .iter()
        .flat_map(|e| match &e.body {
            EventBody::GammaKilled { markers, .. } => markers.clone(),
            _ => vec![],
        })
        .collect();
    ensure(killed.contains(&d), || format!("marker {d} was not killed"))?;
    for m in &killed {
        let log = d_log(&out.events, *m);
        ensure(log == ["extract"], || format!("killed marker {m} has D-log {log:?}"))?;
    }
    let with_i0 = out.engine.f_history().iter().filter(|f| f.outcomes().contains(&Outcome::I(0))).count();
    ensure(with_i0 > 0, || "i0 never on f".into())?;
    Ok(format!("setup ({x},{z}) at stage {} via {node}, killed {killed:?}, i0 on f at {with_i0} stages", ev.stage))
}

fn criterion_4() -> Check {
    let out = simulate("setup-then-release", None, 80, Mode::Theorem2)?;
    let (ev, _) = cases(&out.events, "2.2.3.2").next().ok_or("case never fired")?;
    let d = out
        .events
        .iter()
        .find_map(|e| match &e.body {
            EventBody::SetupCreated { d, .. } => Some(*d),
            _ => None,
        })
        .ok_or("no setup_created")?;
    let log = d_log(&out.events, d);
    ensure(log == ["extract", "enumerate"], || format!("D-log of {d} is {log:?}"))?;
    all_audits_pass(&out.events, Mode::Theorem2)?;
    Ok(format!("released at stage {}, D-log of {d} is {log:?}, all audits pass", ev.stage))
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let kinds = [AuditKind::ChangeCounts, AuditKind::Markers, AuditKind::Streams];
    let mut events = 0;
    for seed in 0..50 {
        let out = simulate("random", Some(seed), 150, Mode::Theorem2)?;
        events += out.events.len();
        for r in run_audits(&kinds, &out.events, &AuditOptions::default()) {
            ensure(r.passed(), || format!("seed {seed}: {r}"))?;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("50 seeds, {events} events, no traps, {elapsed:.2?}"))
}

fn criterion_6() -> Check {
    let mut runs: Vec<(&str, Option<u64>)> =
        ["empty", "diag1", "setup1", "setup-then-release"].into_iter().map(|n| (n, None)).collect();
    runs.extend((100..105).map(|s| ("random", Some(s))));
    for (name, seed) in runs {
        for mode in [Mode::Theorem2, Mode::Corollary3] {
            let adv = builtin(name, &RequirementOrdering::default(), seed, 90).map_err(|e| e.to_string())?;
            let spec = RunSpec { snapshot_every: Some(7), ..RunSpec::new(adv, 90).mode(mode) };
            let a = run(spec.clone()).map_err(|e| e.to_string())?;
            let b = run(spec).map_err(|e| e.to_string())?;
            let (ta, tb) = (to_jsonl(&a.events), to_jsonl(&b.events));
            ensure(ta == tb, || format!("{name} {seed:?} {mode}: traces differ"))?;
            let back = read_jsonl(ta.as_bytes()).map_err(|e| e.to_string())?;
            let r = replay(&back).map_err(|e| format!("{name} {seed:?} {mode}: {e}"))?;
            ensure(r.snapshot() == a.engine.snapshot(), || format!("{name} {seed:?} {mode}: final state differs"))?;
            check_snapshots(&back, &a.snapshots).map_err(|e| format!("{name} {seed:?} {mode}: {e}"))?;
        }
    }
    Ok("18 configurations: identical traces, exact replay of final and intermediate snapshots".into())
}

fn criterion_7() -> Check {
    let mut touched = 0;
    for name in ["empty", "diag1", "setup1", "setup-then-release"] {
        let out = simulate(name, None, 80, Mode::Corollary3)?;
        let r = run_audit(AuditKind::Omega, &out.events, &AuditOptions::default());
        ensure(r.passed(), || format!("{name}: {r}"))?;
        touched += r.stats["blocks_touched"].as_u64().unwrap_or(0);
        all_audits_pass(&out.events, Mode::Corollary3).map_err(|e| format!("{name}: {e}"))?;
    }
    ensure(touched > 0, || "no block was ever touched".into())?;
    Ok(format!("4 scenarios consistent, {touched} blocks touched"))
}

fn criterion_8() -> Check {
    let opts = AuditOptions { window: 25, zbound: 64 };
    let mut summary = Vec::new();
    for name in ["diag1", "setup1", "setup-then-release"] {
        let out = simulate(name, None, 120, Mode::Theorem2)?;
        let r = run_audit(AuditKind::SQuiescence, &out.events, &opts);
        ensure(r.verdict == Verdict::Pass, || format!("{name}: {r}"))?;
        summary.push(format!("{name} ({} S)", r.stats["s_nodes"]));
    }
    // f crosses an i-edge only while a setup is being made, so check Delta
    // with an empty window at the end of the setup stage
    let out = simulate("setup1", None, 10, Mode::Theorem2)?;
    let r = run_audit(AuditKind::SQuiescence, &out.events, &AuditOptions { window: 0, zbound: 64 });
    ensure(r.verdict == Verdict::Pass && r.stats["delta_edges"] == 1, || format!("setup stage: {r}"))?;
    summary.push("setup stage (1 Delta edge)".into());
    Ok(summary.join(", "))
}

/// `A <=_Q B` on `[0, n)`: each `x` needs some `W` inside the universe with
/// `x in A` exactly when `W` is contained in `B`. Searched by brute force.
fn q_reducible(a: &BTreeSet<u64>, b: &BTreeSet<u64>, n: u64) -> bool {
    (0..n).all(|x| {
        (0u64..1 << n).any(|w| {
            let inside = (0..n).filter(|y| w >> y & 1 == 1).all(|y| b.contains(&y));
            inside == a.contains(&x)
        })
    })
}

fn criterion_9() -> Check {
    const N: u64 = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut tally = BTreeMap::from([(true, 0), (false, 0)]);
    let random_set = |rng: &mut ChaCha8Rng| -> BTreeSet<u64> {
        // dense sets so that the full universe comes up regularly
        let p = rng.gen_range(0.3..1.0);
        (0..N).filter(|_| rng.gen_bool(p)).collect()
    };
    for i in 0..100 {
        let a = random_set(&mut rng);
        let b = random_set(&mut rng);
        let comp = |s: &BTreeSet<u64>| -> FiniteSet { (0..N).filter(|x| !s.contains(x)).collect() };
        // an empty body has no bounded counterpart on the other side
        let s_side = brute_force_s_reduce(&comp(&a), &comp(&b), N, N, false);
        let q_side = q_reducible(&a, &b, N);
        ensure(s_side.is_some() == q_side, || {
            format!("pair {i}: A = {a:?}, B = {b:?}, s {} vs Q {q_side}", s_side.is_some())
        })?;
        if let Some(red) = s_side {
            // the reduction itself dualizes: x in A iff no body of x meets the complement of B
            for x in 0..N {
                let hit = red.operator.iter().any(|ax| ax.head == x && ax.body.iter().all(|y| !b.contains(&y)));
                ensure(hit != a.contains(&x), || format!("pair {i}: operator disagrees at {x}"))?;
            }
        }
        *tally.get_mut(&q_side).unwrap() += 1;
    }
    Ok(format!("100 pairs agree ({} reducible, {} not)", tally[&true], tally[&false]))
}

mod tree_oracle {
    //! Recomputes tree facts from scratch for one path at a time, walking
    //! down from the root with plain vectors.

    use super::*;

    pub struct Facts {
        pub requirement: Requirement,
        pub successors: Vec<Outcome>,
        pub statuses: Vec<Status>,
    }

    fn listing(u: usize) -> Requirement {
        if u.is_multiple_of(2) {
            Requirement::S(u / 2)
        } else {
            Requirement::R(u / 2)
        }
    }

    fn position(r: Requirement) -> usize {
        match r {
            Requirement::S(e) => 2 * e,
            Requirement::R(k) => 2 * k + 1,
        }
    }

    fn successors(req: Requirement, reqs: &[Requirement], st: &[Status]) -> Vec<Outcome> {
        match req {
            Requirement::S(_) => vec![Outcome::Infty],
            Requirement::R(_) => {
                let n =
                    (0..st.len()).filter(|&d| st[d] == Status::Active && matches!(reqs[d], Requirement::S(_))).count();
                let mut v = vec![Outcome::Stop];
                v.extend((0..n as u32).map(Outcome::I));
                v.push(Outcome::Wait);
                v
            }
        }
    }

    /// `None` if the path leaves the tree.
    pub fn facts(path: &[Outcome]) -> Option<Facts> {
        let mut reqs: Vec<Requirement> = Vec::new();
        let mut st: Vec<Status> = Vec::new();
        let mut req = listing(0);
        for &o in path {
            if !successors(req, &reqs, &st).contains(&o) {
                return None;
            }
            let active_s: Vec<usize> =
                (0..st.len()).filter(|&d| st[d] == Status::Active && matches!(reqs[d], Requirement::S(_))).collect();
            match (req, o) {
                (Requirement::S(_), _) => st.push(Status::Active),
                (Requirement::R(_), Outcome::Stop | Outcome::Wait) => st.push(Status::Satisfied),
                (Requirement::R(_), Outcome::I(i)) => {
                    let i = i as usize;
                    for (j, &d) in active_s.iter().enumerate() {
                        st[d] = if j < i {
                            Status::Active
                        } else if j == i {
                            Status::Satisfied
                        } else {
                            Status::Neither
                        };
                    }
                    st.push(Status::Neither);
                }
                (Requirement::R(_), Outcome::Infty) => return None,
            }
            reqs.push(req);
            let taken: BTreeSet<usize> =
                (0..st.len()).filter(|&d| st[d] != Status::Neither).map(|d| position(reqs[d])).collect();
            req = listing((0..).find(|u| !taken.contains(u)).unwrap());
        }
        Some(Facts { requirement: req, successors: successors(req, &reqs, &st), statuses: st })
    }

    /// Every path of length at most `depth`, found by trying all outcome
    /// strings over a small alphabet.
    pub fn paths(depth: usize) -> BTreeSet<Vec<Outcome>> {
        let alphabet: Vec<Outcome> =
            [Outcome::Stop, Outcome::Wait, Outcome::Infty].into_iter().chain((0..8).map(Outcome::I)).collect();
        let mut out = BTreeSet::from([vec![]]);
        let mut layer = vec![vec![]];
        for _ in 0..depth {
            let mut next = Vec::new();
            for p in &layer {
                for &o in &alphabet {
                    let mut q: Vec<Outcome> = p.clone();
                    q.push(o);
                    if facts(&q).is_some() {
                        next.push(q);
                    }
                }
            }
            out.extend(next.iter().cloned());
            layer = next;
        }
        out
    }
}

fn criterion_10() -> Check {
    let tree = Tree::default();
    let from_tree: BTreeSet<Vec<Outcome>> = tree.nodes_to_depth(4).iter().map(|n| n.outcomes().to_vec()).collect();
    let from_oracle = tree_oracle::paths(4);
    ensure(from_tree == from_oracle, || {
        format!("node sets differ: tree {} vs oracle {}", from_tree.len(), from_oracle.len())
    })?;
    for path in &from_oracle {
        let node = Node::from_outcomes(path.iter().copied());
        let want = tree_oracle::facts(path).unwrap();
        let got_req = tree.assign_requirement(&node).map_err(|e| e.to_string())?;
        ensure(got_req == want.requirement, || format!("{node}: requirement {got_req} vs {}", want.requirement))?;
        let got_succ = tree.successors(&node).map_err(|e| e.to_string())?;
        ensure(got_succ == want.successors, || format!("{node}: successors {got_succ:?} vs {:?}", want.successors))?;
        for (d, want_st) in want.statuses.iter().enumerate() {
            let got = tree.status_along(&node.prefix(d), &node).map_err(|e| e.to_string())?;
            ensure(got == *want_st, || format!("{node}: status of depth {d} is {got:?}, expected {want_st:?}"))?;
        }
    }
    let deeper: BTreeSet<Vec<Outcome>> = tree.nodes_to_depth(7).iter().map(|n| n.outcomes().to_vec()).collect();
    ensure(deeper == tree_oracle::paths(7), || "node sets differ at depth 7".into())?;
    Ok(format!("{} nodes to depth 4 match, node sets agree to depth 7 ({} nodes)", from_oracle.len(), deeper.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("empty adversary", criterion_1),
        ("single diagonalization", criterion_2),
        ("setup", criterion_3),
        ("setup then release", criterion_4),
        ("fuzz", criterion_5),
        ("determinism and replay", criterion_6),
        ("block variant", criterion_7),
        ("quiescence", criterion_8),
        ("complement duality", criterion_9),
        ("tree tables", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
