//! Finite-set coding and the algebra of enumeration operators.
//!
//! An operator is a set of axioms `<x, F>`: `x` lands in `Phi(B)` as soon as
//! the finite body `F` is contained in `B`. Operators given to the simulator
//! arrive as [`OperatorSchedule`]s: at most one new axiom per stage, with the
//! usual bound that everything mentioned by an axiom entering at stage `s`
//! is below `s`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{Node, Requirement};

/// Largest set accepted by [`star_transform`]; the transform is exponential.
pub const STAR_MAX_CARD: usize = 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OperatorError {
    #[error("axiom with head {head} has a symbolic part that only a running engine can resolve")]
    Unresolved { head: String },
    #[error("canonical index of a set containing {0} does not fit in 64 bits")]
    IndexOverflow(u64),
    #[error("star transform of a set with {0} elements is too large")]
    TooLarge(usize),
    #[error("approximation sequence has no entry for stage {0}")]
    ApproxOutOfRange(u64),
}

/// A finite set of naturals, kept sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FiniteSet(BTreeSet<u64>);

impl FiniteSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn singleton(x: u64) -> Self {
        Self(BTreeSet::from([x]))
    }

    pub fn contains(&self, x: u64) -> bool {
        self.0.contains(&x)
    }

    pub fn insert(&mut self, x: u64) -> bool {
        self.0.insert(x)
    }

    pub fn remove(&mut self, x: u64) -> bool {
        self.0.remove(&x)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_element(&self) -> Option<u64> {
        self.0.last().copied()
    }

    pub fn min_element(&self) -> Option<u64> {
        self.0.first().copied()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = u64> + '_ {
        self.0.iter().copied()
    }

    pub fn as_set(&self) -> &BTreeSet<u64> {
        &self.0
    }

    pub fn is_subset_of(&self, member: impl Fn(u64) -> bool) -> bool {
        self.0.iter().all(|&x| member(x))
    }

    /// Canonical index `sum of 2^x`.
    pub fn encode(&self) -> Result<u64, OperatorError> {
        let mut u = 0u64;
        for x in self.iter() {
            if x >= 64 {
                return Err(OperatorError::IndexOverflow(x));
            }
            u |= 1 << x;
        }
        Ok(u)
    }

    pub fn decode(u: u64) -> Self {
        (0..64).filter(|&i| u >> i & 1 == 1).collect()
    }

    /// Compares by canonical index without materializing it, so sets with
    /// large elements still order correctly.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        let mut a = self.0.iter().rev();
        let mut b = other.0.iter().rev();
        loop {
            match (a.next(), b.next()) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some(x), Some(y)) if x != y => return x.cmp(y),
                _ => {}
            }
        }
    }
}

impl FromIterator<u64> for FiniteSet {
    fn from_iter<I: IntoIterator<Item = u64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<const N: usize> From<[u64; N]> for FiniteSet {
    fn from(xs: [u64; N]) -> Self {
        xs.into_iter().collect()
    }
}

impl fmt::Display for FiniteSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, x) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, "}}")
    }
}

pub fn encode(f: &FiniteSet) -> Result<u64, OperatorError> {
    f.encode()
}

pub fn decode(u: u64) -> FiniteSet {
    FiniteSet::decode(u)
}

/// Restriction on axiom bodies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    /// Any finite body.
    E,
    /// Empty or singleton bodies.
    S,
    /// Empty or exactly two elements.
    E2,
    /// At most `n` elements.
    Be(u32),
}

impl OperatorKind {
    pub fn admits_cardinality(self, card: usize) -> bool {
        match self {
            OperatorKind::E => true,
            OperatorKind::S => card <= 1,
            OperatorKind::E2 => card == 0 || card == 2,
            OperatorKind::Be(n) => card <= n as usize,
        }
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OperatorKind::E => write!(f, "e"),
            OperatorKind::S => write!(f, "s"),
            OperatorKind::E2 => write!(f, "e2"),
            OperatorKind::Be(n) => write!(f, "be({n})"),
        }
    }
}

impl FromStr for OperatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "e" => Ok(OperatorKind::E),
            "s" => Ok(OperatorKind::S),
            "e2" => Ok(OperatorKind::E2),
            _ => {
                let n = s
                    .strip_prefix("be(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|n| n.parse::<u32>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| format!("unknown operator kind `{s}`"))?;
                Ok(OperatorKind::Be(n))
            }
        }
    }
}

impl Serialize for OperatorKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OperatorKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which half of a join `A (+) D` a body element addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Side {
    /// Already coded; used as is.
    #[default]
    #[serde(rename = "raw")]
    Raw,
    #[serde(rename = "A")]
    A,
    #[serde(rename = "D")]
    D,
}

impl Side {
    pub fn code(self, v: u64) -> u64 {
        match self {
            Side::Raw => v,
            Side::A => 2 * v,
            Side::D => 2 * v + 1,
        }
    }
}

/// A number in an axiom, possibly naming a value that only exists inside a
/// running construction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Lit(u64),
    /// Current witness of the R-node at this path.
    Witness {
        node: Node,
    },
    /// Currently defined marker of an `S_e` node for the pair `(z, x)`.
    Marker {
        e: usize,
        z: Box<Term>,
        x: Box<Term>,
    },
}

impl Term {
    pub fn literal(&self) -> Option<u64> {
        match self {
            Term::Lit(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Lit(v) => write!(f, "{v}"),
            Term::Witness { node } => write!(f, "x[{node}]"),
            Term::Marker { e, z, x } => write!(f, "gamma_{e}({z},{x})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BodyTerm {
    pub term: Term,
    pub side: Side,
}

impl BodyTerm {
    pub fn raw(v: u64) -> Self {
        Self { term: Term::Lit(v), side: Side::Raw }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Axiom {
    pub head: Term,
    pub body: Vec<BodyTerm>,
}

impl Axiom {
    pub fn literal(head: u64, body: FiniteSet) -> Self {
        Self { head: Term::Lit(head), body: body.iter().map(BodyTerm::raw).collect() }
    }

    /// Returns the axiom as numbers when nothing in it is symbolic.
    pub fn as_literal(&self) -> Option<LiteralAxiom> {
        let head = self.head.literal()?;
        let mut body = FiniteSet::empty();
        for b in &self.body {
            body.insert(b.side.code(b.term.literal()?));
        }
        Some(LiteralAxiom { head, body })
    }

    pub fn is_literal(&self) -> bool {
        self.as_literal().is_some()
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {{", self.head)?;
        for (i, b) in self.body.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            match b.side {
                Side::Raw => write!(f, "{}", b.term)?,
                Side::A => write!(f, "A:{}", b.term)?,
                Side::D => write!(f, "D:{}", b.term)?,
            }
        }
        write!(f, "}}>")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LiteralAxiom {
    pub head: u64,
    pub body: FiniteSet,
}

impl LiteralAxiom {
    pub fn new(head: u64, body: impl Into<FiniteSet>) -> Self {
        Self { head, body: body.into() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Violation {
    #[error("stage {stage}: axiom {axiom} breaks the {kind} body constraint")]
    Kind { stage: u64, kind: OperatorKind, axiom: String },
    #[error("stage {stage}: more than one axiom enters at this stage")]
    OnePerStage { stage: u64 },
    #[error("stage {stage}: axiom {axiom} mentions a number not below the stage")]
    Bound { stage: u64, axiom: String },
}

/// An enumeration of one operator: the axiom (if any) entering at each stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OperatorSchedule {
    pub id: Requirement,
    pub kind: OperatorKind,
    pub entries: BTreeMap<u64, Axiom>,
}

impl OperatorSchedule {
    pub fn new(id: Requirement, kind: OperatorKind) -> Self {
        Self { id, kind, entries: BTreeMap::new() }
    }

    pub fn with(mut self, stage: u64, axiom: Axiom) -> Self {
        self.entries.insert(stage, axiom);
        self
    }

    pub fn validate(&self) -> Result<(), Violation> {
        for (&stage, axiom) in &self.entries {
            check_axiom(self.kind, stage, axiom)?;
        }
        Ok(())
    }

    /// Literal axioms that have entered by stage `s`.
    pub fn literal_up_to(&self, s: u64) -> Result<Vec<LiteralAxiom>, OperatorError> {
        self.entries
            .range(..=s)
            .map(|(_, a)| a.as_literal().ok_or_else(|| OperatorError::Unresolved { head: a.head.to_string() }))
            .collect()
    }
}

/// Checks one axiom entering at `stage`. Symbolic parts only count toward
/// the kind constraint here; their bound is checked when resolved.
pub fn check_axiom(kind: OperatorKind, stage: u64, axiom: &Axiom) -> Result<(), Violation> {
    let distinct_literals: BTreeSet<u64> =
        axiom.body.iter().filter_map(|b| b.term.literal().map(|v| b.side.code(v))).collect();
    let symbolic = axiom.body.iter().filter(|b| b.term.literal().is_none()).count();
    let card = distinct_literals.len() + symbolic;
    if !kind.admits_cardinality(card) {
        return Err(Violation::Kind { stage, kind, axiom: axiom.to_string() });
    }
    let head_ok = axiom.head.literal().is_none_or(|h| h < stage);
    let body_ok = distinct_literals.iter().all(|&b| b < stage);
    if !head_ok || !body_ok {
        return Err(Violation::Bound { stage, axiom: axiom.to_string() });
    }
    Ok(())
}

/// `{ x < head_bound : some <x, F> with F inside B }`.
pub fn apply(axioms: &[Axiom], b: impl Fn(u64) -> bool, head_bound: u64) -> Result<FiniteSet, OperatorError> {
    let literal = axioms
        .iter()
        .map(|a| a.as_literal().ok_or_else(|| OperatorError::Unresolved { head: a.head.to_string() }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(apply_literal(&literal, b, head_bound))
}

pub fn apply_literal(axioms: &[LiteralAxiom], b: impl Fn(u64) -> bool, head_bound: u64) -> FiniteSet {
    axioms.iter().filter(|a| a.head < head_bound && a.body.is_subset_of(&b)).map(|a| a.head).collect()
}

/// Explicit stage-indexed approximations `X_0, X_1, ...` to a set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SetApproxSequence {
    stages: Vec<FiniteSet>,
}

impl SetApproxSequence {
    pub fn new(stages: Vec<FiniteSet>) -> Self {
        Self { stages }
    }

    pub fn from_fn(budget: u64, f: impl Fn(u64) -> FiniteSet) -> Self {
        Self { stages: (0..=budget).map(f).collect() }
    }

    pub fn at(&self, s: u64) -> Result<&FiniteSet, OperatorError> {
        self.stages.get(s as usize).ok_or(OperatorError::ApproxOutOfRange(s))
    }
}

/// `Phi(X)[s] = Phi_s(X_s)` restricted to heads below `s`.
pub fn staged_apply(
    schedule: &OperatorSchedule,
    approx: &SetApproxSequence,
    s: u64,
) -> Result<FiniteSet, OperatorError> {
    let axioms = schedule.literal_up_to(s)?;
    let xs = approx.at(s)?;
    Ok(apply_literal(&axioms, |v| xs.contains(v), s))
}

/// Membership in `A (+) D`: evens code `A`, odds code `D`.
pub fn join(a: impl Fn(u64) -> bool, d: impl Fn(u64) -> bool) -> impl Fn(u64) -> bool {
    move |v| if v % 2 == 0 { a(v / 2) } else { d(v / 2) }
}

/// Splits a coded body into its `A`-part and `D`-part.
pub fn split_join(body: &FiniteSet) -> (FiniteSet, FiniteSet) {
    let a = body.iter().filter(|v| v % 2 == 0).map(|v| v / 2).collect();
    let d = body.iter().filter(|v| v % 2 == 1).map(|v| v / 2).collect();
    (a, d)
}

/// Canonical indices of all subsets of `x`.
pub fn star_transform(x: &FiniteSet) -> Result<FiniteSet, OperatorError> {
    if let Some(m) = x.max_element().filter(|&m| m >= 64) {
        return Err(OperatorError::IndexOverflow(m));
    }
    if x.len() > STAR_MAX_CARD {
        return Err(OperatorError::TooLarge(x.len()));
    }
    let elems: Vec<u64> = x.iter().collect();
    let mut out = FiniteSet::empty();
    for mask in 0u64..(1 << elems.len()) {
        let u = elems.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).fold(0u64, |acc, (_, &e)| acc | 1 << e);
        out.insert(u);
    }
    Ok(out)
}

/// Result of a successful bounded s-reduction search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SReduction {
    /// Lexicographically least witnessing operator.
    pub operator: Vec<LiteralAxiom>,
    /// Whether a second, different operator also works.
    pub multiple: bool,
}

/// Searches for an s-operator `Phi` with bodies below `body_bound` and
/// `A = Phi(B)` on `[0, universe)`. For each head `x` in `A` the candidate
/// bodies are the empty set (when allowed) and `{b}` for `b` in `B`.
pub fn brute_force_s_reduce(
    a: &FiniteSet,
    b: &FiniteSet,
    universe: u64,
    body_bound: u64,
    allow_empty: bool,
) -> Option<SReduction> {
    let heads: Vec<u64> = a.iter().filter(|&x| x < universe).collect();
    let mut candidates: Vec<FiniteSet> = Vec::new();
    if allow_empty {
        candidates.push(FiniteSet::empty());
    }
    candidates.extend(b.iter().filter(|&v| v < body_bound).map(FiniteSet::singleton));

    let target: FiniteSet = a.iter().filter(|&x| x < universe).collect();
    let mut found: Vec<Vec<LiteralAxiom>> = Vec::new();
    let mut chosen: Vec<LiteralAxiom> = Vec::with_capacity(heads.len());
    search(&heads, &candidates, b, universe, &target, &mut chosen, &mut found);
    let mut found = found.into_iter();
    let operator = found.next()?;
    Some(SReduction { operator, multiple: found.next().is_some() })
}

fn search(
    heads: &[u64],
    candidates: &[FiniteSet],
    b: &FiniteSet,
    universe: u64,
    target: &FiniteSet,
    chosen: &mut Vec<LiteralAxiom>,
    found: &mut Vec<Vec<LiteralAxiom>>,
) {
    if found.len() >= 2 {
        return;
    }
    let Some((&x, rest)) = heads.split_first() else {
        if apply_literal(chosen, |v| b.contains(v), universe) == *target {
            found.push(chosen.clone());
        }
        return;
    };
    for body in candidates {
        chosen.push(LiteralAxiom { head: x, body: body.clone() });
        search(rest, candidates, b, universe, target, chosen, found);
        chosen.pop();
        if found.len() >= 2 {
            return;
        }
    }
}
