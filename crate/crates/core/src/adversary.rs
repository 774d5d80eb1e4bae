//! Adversary operators: the finite enumerations the construction runs
//! against.
//!
//! The file format is JSON:
//!
//! ```json
//! {"operators": [{"id": "R0", "kind": "s", "axioms": [
//!     {"stage": 10, "x": {"sym": "witness", "node": ["infty"]},
//!      "body": {"sym": "marker", "e": 0, "z": 0, "xRef": {"sym": "witness", "node": ["infty"]}}}
//! ]}]}
//! ```
//!
//! `id` is a requirement label (`S0`, `R3`) or a position in the requirement
//! listing. A body is a list of elements or a single element; an element is
//! a number (already coded), `{"side": "A"|"D", "value": n}`, or a symbolic
//! term with an optional `side`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::operator::{Axiom, BodyTerm, OperatorKind, OperatorSchedule, Side, Term, Violation};
use crate::tree::{Node, Requirement, RequirementOrdering, Tree};

/// Operators keyed by the requirement they belong to. Missing operators are
/// empty.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Adversary {
    pub operators: BTreeMap<Requirement, OperatorSchedule>,
}

impl Adversary {
    pub fn axiom_count(&self) -> usize {
        self.operators.values().map(|s| s.entries.len()).sum()
    }

    /// Last stage at which any axiom enters.
    pub fn last_entry(&self) -> Option<u64> {
        self.operators.values().filter_map(|s| s.entries.keys().next_back().copied()).max()
    }
}

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("cannot parse adversary: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("operator {0} is listed twice")]
    Duplicate(Requirement),
    #[error("operator {op}: {violation}")]
    Validation { op: Requirement, violation: Violation },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("scenario `random` needs a seed")]
    MissingSeed,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum IdRepr {
    Index(usize),
    Label(Requirement),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TermRepr {
    Num(u64),
    Sym(SymRepr),
}

#[derive(Deserialize)]
#[serde(tag = "sym", rename_all = "lowercase")]
enum SymRepr {
    Witness {
        node: Node,
    },
    Marker {
        e: usize,
        z: Box<TermRepr>,
        #[serde(rename = "xRef")]
        x_ref: Box<TermRepr>,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ElemRepr {
    Num(u64),
    Lit {
        #[serde(default)]
        side: Side,
        value: u64,
    },
    Sym {
        #[serde(default)]
        side: Side,
        #[serde(flatten)]
        sym: SymRepr,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BodyRepr {
    List(Vec<ElemRepr>),
    One(ElemRepr),
}

impl Default for BodyRepr {
    fn default() -> Self {
        BodyRepr::List(Vec::new())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AxiomRepr {
    stage: u64,
    x: TermRepr,
    #[serde(default)]
    body: BodyRepr,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OperatorRepr {
    id: IdRepr,
    kind: OperatorKind,
    #[serde(default)]
    axioms: Vec<AxiomRepr>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    operators: Vec<OperatorRepr>,
}

fn term(t: TermRepr) -> Term {
    match t {
        TermRepr::Num(v) => Term::Lit(v),
        TermRepr::Sym(s) => sym(s),
    }
}

fn sym(s: SymRepr) -> Term {
    match s {
        SymRepr::Witness { node } => Term::Witness { node },
        SymRepr::Marker { e, z, x_ref } => Term::Marker { e, z: Box::new(term(*z)), x: Box::new(term(*x_ref)) },
    }
}

fn elem(e: ElemRepr) -> BodyTerm {
    match e {
        ElemRepr::Num(v) => BodyTerm::raw(v),
        ElemRepr::Lit { side, value } => BodyTerm { term: Term::Lit(value), side },
        ElemRepr::Sym { side, sym: s } => BodyTerm { term: sym(s), side },
    }
}

/// Parses and validates an adversary file.
pub fn load_adversary(text: &str, ordering: &RequirementOrdering) -> Result<Adversary, AdversaryError> {
    let file: FileRepr = serde_json::from_str(text)?;
    let mut adv = Adversary::default();
    for op in file.operators {
        let id = match op.id {
            IdRepr::Index(i) => ordering.requirement(i),
            IdRepr::Label(r) => r,
        };
        if adv.operators.contains_key(&id) {
            return Err(AdversaryError::Duplicate(id));
        }
        let mut sched = OperatorSchedule::new(id, op.kind);
        for a in op.axioms {
            let body = match a.body {
                BodyRepr::List(v) => v.into_iter().map(elem).collect(),
                BodyRepr::One(e) => vec![elem(e)],
            };
            if sched.entries.contains_key(&a.stage) {
                return Err(AdversaryError::Validation {
                    op: id,
                    violation: Violation::OnePerStage { stage: a.stage },
                });
            }
            sched.entries.insert(a.stage, Axiom { head: term(a.x), body });
        }
        sched.validate().map_err(|violation| AdversaryError::Validation { op: id, violation })?;
        adv.operators.insert(id, sched);
    }
    Ok(adv)
}

pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("empty", include_str!("../scenarios/empty.json")),
    ("diag1", include_str!("../scenarios/diag1.json")),
    ("setup1", include_str!("../scenarios/setup1.json")),
    ("setup-then-release", include_str!("../scenarios/setup-then-release.json")),
];

/// Names accepted by [`builtin`], including the seeded `random`.
pub fn scenario_names() -> Vec<&'static str> {
    BUILTIN_SCENARIOS.iter().map(|(n, _)| *n).chain(["random"]).collect()
}

pub fn builtin(
    name: &str,
    ordering: &RequirementOrdering,
    seed: Option<u64>,
    stages: u64,
) -> Result<Adversary, AdversaryError> {
    if name == "random" {
        let seed = seed.ok_or(AdversaryError::MissingSeed)?;
        return Ok(random_adversary(seed, stages, &RandomParams::default(), ordering));
    }
    let (_, text) = BUILTIN_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| AdversaryError::UnknownScenario(name.into()))?;
    load_adversary(text, ordering)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomParams {
    /// Chance that an operator gets an axiom at a given stage.
    pub density: f64,
    /// Operators are generated for listing positions `0..operators`.
    pub operators: usize,
    /// Witness references point at R-nodes of at most this length.
    pub max_depth: usize,
    /// Literal heads of S-operators stay below this.
    pub z_range: u64,
}

impl Default for RandomParams {
    fn default() -> Self {
        Self { density: 0.15, operators: 6, max_depth: 4, z_range: 6 }
    }
}

/// A seeded adversary mixing literal and symbolic axioms. Every schedule
/// passes validation; symbolic axioms may still be dropped at runtime.
pub fn random_adversary(seed: u64, stages: u64, params: &RandomParams, ordering: &RequirementOrdering) -> Adversary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = Tree::new(ordering.clone());
    let nodes = tree.nodes_to_depth(params.max_depth);
    let r_nodes = |k: usize| -> Vec<Node> {
        nodes.iter().filter(|n| tree.assign_requirement(n).ok() == Some(Requirement::R(k))).cloned().collect()
    };
    let s_indices: Vec<usize> = (0..params.operators)
        .filter_map(|i| match ordering.requirement(i) {
            Requirement::S(e) => Some(e),
            Requirement::R(_) => None,
        })
        .collect();
    let all_r: Vec<Node> = nodes.iter().filter(|n| !tree.assign_requirement(n).unwrap().is_s()).cloned().collect();

    let mut adv = Adversary::default();
    for idx in 0..params.operators {
        let id = ordering.requirement(idx);
        let mut sched = OperatorSchedule::new(id, OperatorKind::S);
        let own = match id {
            Requirement::R(k) => r_nodes(k),
            Requirement::S(_) => Vec::new(),
        };
        for s in 1..=stages {
            if !rng.gen_bool(params.density) {
                continue;
            }
            let axiom = match id {
                Requirement::S(_) => random_s_axiom(&mut rng, s, params, &all_r),
                Requirement::R(_) => random_r_axiom(&mut rng, s, &own, &s_indices),
            };
            if let Some(a) = axiom {
                sched.entries.insert(s, a);
            }
        }
        debug_assert!(sched.validate().is_ok());
        adv.operators.insert(id, sched);
    }
    adv
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> Option<&'a T> {
    (!xs.is_empty()).then(|| &xs[rng.gen_range(0..xs.len())])
}

fn random_s_axiom(rng: &mut ChaCha8Rng, s: u64, params: &RandomParams, r_nodes: &[Node]) -> Option<Axiom> {
    let z = rng.gen_range(0..params.z_range.min(s));
    let roll: f64 = rng.gen();
    let body = if roll < 0.25 {
        vec![]
    } else if roll < 0.7 {
        let node = pick(rng, r_nodes)?.clone();
        vec![BodyTerm { term: Term::Witness { node }, side: Side::A }]
    } else if roll < 0.85 {
        // coded 2x < s
        let x = rng.gen_range(0..s.div_ceil(2));
        vec![BodyTerm { term: Term::Lit(x), side: Side::A }]
    } else {
        if s < 2 {
            return None;
        }
        let d = rng.gen_range(0..s / 2);
        vec![BodyTerm { term: Term::Lit(d), side: Side::D }]
    };
    Some(Axiom { head: Term::Lit(z), body })
}

fn random_r_axiom(rng: &mut ChaCha8Rng, s: u64, own: &[Node], s_indices: &[usize]) -> Option<Axiom> {
    let head = match pick(rng, own) {
        Some(node) if rng.gen_bool(0.85) => Term::Witness { node: node.clone() },
        _ => Term::Lit(rng.gen_range(0..s)),
    };
    let roll: f64 = rng.gen();
    let body = if roll < 0.3 {
        vec![]
    } else if roll < 0.85 {
        let e = *pick(rng, s_indices)?;
        let z = rng.gen_range(0..6);
        vec![BodyTerm {
            term: Term::Marker { e, z: Box::new(Term::Lit(z)), x: Box::new(head.clone()) },
            side: Side::Raw,
        }]
    } else {
        vec![BodyTerm::raw(rng.gen_range(0..s))]
    };
    Some(Axiom { head, body })
}
