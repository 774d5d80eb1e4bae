//! The tree of strategies.
//!
//! Nodes are strings over the outcome alphabet `stop < i(0) < i(1) < ... <
//! wait < infty`. Each node is assigned a requirement and carries, for every
//! proper ancestor, whether that ancestor is active, satisfied, or neither
//! along it. The tree is infinite, so node information is computed on demand
//! from the parent and memoized.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    Stop,
    I(u32),
    Wait,
    Infty,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Stop => write!(f, "stop"),
            Outcome::I(i) => write!(f, "i{i}"),
            Outcome::Wait => write!(f, "wait"),
            Outcome::Infty => write!(f, "infty"),
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stop" => Ok(Outcome::Stop),
            "wait" => Ok(Outcome::Wait),
            "infty" => Ok(Outcome::Infty),
            _ => s
                .strip_prefix('i')
                .and_then(|n| n.parse().ok())
                .map(Outcome::I)
                .ok_or_else(|| format!("unknown outcome `{s}`")),
        }
    }
}

impl Serialize for Outcome {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub fn outcome_lt(a: Outcome, b: Outcome) -> bool {
    a < b
}

/// A string of outcomes. The derived order is the priority order: `a < b`
/// iff `a` is left of `b` or a proper initial segment of it.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Node(Vec<Outcome>);

#[allow(clippy::len_without_is_empty)]
impl Node {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn from_outcomes(path: impl IntoIterator<Item = Outcome>) -> Self {
        Self(path.into_iter().collect())
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, o: Outcome) -> Self {
        let mut v = self.0.clone();
        v.push(o);
        Self(v)
    }

    pub fn parent(&self) -> Option<Self> {
        let (_, init) = self.0.split_last()?;
        Some(Self(init.to_vec()))
    }

    pub fn last(&self) -> Option<Outcome> {
        self.0.last().copied()
    }

    pub fn prefix(&self, len: usize) -> Self {
        Self(self.0[..len].to_vec())
    }

    /// `self` is an initial segment of `other` (possibly equal).
    pub fn is_prefix_of(&self, other: &Node) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn is_proper_prefix_of(&self, other: &Node) -> bool {
        self.len() < other.len() && self.is_prefix_of(other)
    }

    pub fn is_left_of(&self, other: &Node) -> bool {
        self.0.iter().zip(&other.0).find(|(a, b)| a != b).is_some_and(|(a, b)| a < b)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "root");
        }
        for (i, o) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{o}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Priority {
    Higher,
    Lower,
    Equal,
}

pub fn compare_priority(a: &Node, b: &Node) -> Priority {
    match a.cmp(b) {
        std::cmp::Ordering::Less => Priority::Higher,
        std::cmp::Ordering::Greater => Priority::Lower,
        std::cmp::Ordering::Equal => Priority::Equal,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Requirement {
    /// `Phi_e(A (+) D) = Z_e` implies `Z_e = Gamma(D)` or `A = Delta(Z_e)`.
    S(usize),
    /// `A != Phi_k(D)`.
    R(usize),
}

impl Requirement {
    pub fn index(self) -> usize {
        match self {
            Requirement::S(e) | Requirement::R(e) => e,
        }
    }

    pub fn is_s(self) -> bool {
        matches!(self, Requirement::S(_))
    }
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Requirement::S(e) => write!(f, "S{e}"),
            Requirement::R(k) => write!(f, "R{k}"),
        }
    }
}

impl FromStr for Requirement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unknown requirement `{s}`");
        let (tag, n) = s.split_at_checked(1).ok_or_else(bad)?;
        let n: usize = n.parse().map_err(|_| bad())?;
        match tag {
            "S" => Ok(Requirement::S(n)),
            "R" => Ok(Requirement::R(n)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Requirement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Requirement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Effective listing `U_0, U_1, ...` of all requirements, given by a
/// repeating pattern of `S` and `R` slots. `"SR"` yields
/// `S0, R0, S1, R1, ...`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RequirementOrdering {
    pattern: Vec<bool>, // true = S slot
    s_per_period: usize,
    r_per_period: usize,
}

impl RequirementOrdering {
    pub fn new(pattern: &str) -> Result<Self, String> {
        let slots = pattern
            .chars()
            .map(|c| match c {
                'S' | 's' => Ok(true),
                'R' | 'r' => Ok(false),
                _ => Err(format!("ordering pattern `{pattern}` may only contain S and R")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let s_per_period = slots.iter().filter(|&&b| b).count();
        let r_per_period = slots.len() - s_per_period;
        if s_per_period == 0 || r_per_period == 0 {
            return Err(format!("ordering pattern `{pattern}` must list both S and R requirements"));
        }
        Ok(Self { pattern: slots, s_per_period, r_per_period })
    }

    pub fn pattern(&self) -> String {
        self.pattern.iter().map(|&s| if s { 'S' } else { 'R' }).collect()
    }

    pub fn requirement(&self, index: usize) -> Requirement {
        let period = self.pattern.len();
        let (q, pos) = (index / period, index % period);
        let is_s = self.pattern[pos];
        let before = self.pattern[..pos].iter().filter(|&&b| b == is_s).count();
        if is_s {
            Requirement::S(q * self.s_per_period + before)
        } else {
            Requirement::R(q * self.r_per_period + before)
        }
    }

    pub fn index_of(&self, req: Requirement) -> usize {
        let (is_s, n, per) = match req {
            Requirement::S(e) => (true, e, self.s_per_period),
            Requirement::R(k) => (false, k, self.r_per_period),
        };
        let (q, j) = (n / per, n % per);
        let pos = self
            .pattern
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == is_s)
            .nth(j)
            .map(|(p, _)| p)
            .expect("slot exists by construction");
        q * self.pattern.len() + pos
    }
}

impl Default for RequirementOrdering {
    fn default() -> Self {
        Self::new("SR").expect("valid default pattern")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Satisfied,
    Neither,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("{node} is not a node of the tree")]
    NotInTree { node: Node },
    #[error("{ancestor} is not a proper initial segment of {node}")]
    NotAncestor { ancestor: Node, node: Node },
}

/// Everything the tree knows about one node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeInfo {
    pub node: Node,
    pub requirement: Requirement,
    /// Requirement of the ancestor at each depth `0..len`.
    pub ancestor_reqs: Vec<Requirement>,
    /// Status of the ancestor at each depth `0..len` along this node.
    pub statuses: Vec<Status>,
    /// Depths of the S-ancestors active along this node, shallowest first.
    pub active_s: Vec<usize>,
}

impl NodeInfo {
    pub fn successors(&self) -> Vec<Outcome> {
        match self.requirement {
            Requirement::S(_) => vec![Outcome::Infty],
            Requirement::R(_) => {
                let n = self.active_s.len() as u32;
                std::iter::once(Outcome::Stop)
                    .chain((0..n).map(Outcome::I))
                    .chain(std::iter::once(Outcome::Wait))
                    .collect()
            }
        }
    }

    pub fn admits(&self, o: Outcome) -> bool {
        match (self.requirement, o) {
            (Requirement::S(_), Outcome::Infty) => true,
            (Requirement::S(_), _) => false,
            (Requirement::R(_), Outcome::I(i)) => (i as usize) < self.active_s.len(),
            (Requirement::R(_), Outcome::Infty) => false,
            (Requirement::R(_), _) => true,
        }
    }

    /// The `i`-th active S-ancestor.
    pub fn beta(&self, i: usize) -> Node {
        self.node.prefix(self.active_s[i])
    }
}

/// Lazily built, memoized tree of strategies.
#[derive(Debug)]
pub struct Tree {
    ordering: RequirementOrdering,
    memo: RwLock<HashMap<Node, Arc<NodeInfo>>>,
}

impl Tree {
    pub fn new(ordering: RequirementOrdering) -> Self {
        Self { ordering, memo: RwLock::new(HashMap::new()) }
    }

    pub fn ordering(&self) -> &RequirementOrdering {
        &self.ordering
    }

    pub fn info(&self, node: &Node) -> Result<Arc<NodeInfo>, TreeError> {
        if let Some(hit) = self.memo.read().expect("tree memo poisoned").get(node) {
            return Ok(Arc::clone(hit));
        }
        let info = match node.parent() {
            None => NodeInfo {
                node: Node::root(),
                requirement: self.ordering.requirement(0),
                ancestor_reqs: Vec::new(),
                statuses: Vec::new(),
                active_s: Vec::new(),
            },
            Some(parent) => {
                let p = self.info(&parent)?;
                let o = node.last().expect("non-root");
                if !p.admits(o) {
                    return Err(TreeError::NotInTree { node: node.clone() });
                }
                self.child_info(&p, o)
            }
        };
        let info = Arc::new(info);
        let mut memo = self.memo.write().expect("tree memo poisoned");
        Ok(Arc::clone(memo.entry(node.clone()).or_insert(info)))
    }

    fn child_info(&self, parent: &NodeInfo, o: Outcome) -> NodeInfo {
        let mut statuses = parent.statuses.clone();
        match (parent.requirement, o) {
            (Requirement::S(_), _) => statuses.push(Status::Active),
            (Requirement::R(_), Outcome::I(i)) => {
                for (j, &depth) in parent.active_s.iter().enumerate() {
                    statuses[depth] = match j.cmp(&(i as usize)) {
                        std::cmp::Ordering::Less => Status::Active,
                        std::cmp::Ordering::Equal => Status::Satisfied,
                        std::cmp::Ordering::Greater => Status::Neither,
                    };
                }
                statuses.push(Status::Neither);
            }
            (Requirement::R(_), _) => statuses.push(Status::Satisfied),
        }
        let mut ancestor_reqs = parent.ancestor_reqs.clone();
        ancestor_reqs.push(parent.requirement);

        let excluded: Vec<usize> = ancestor_reqs
            .iter()
            .zip(&statuses)
            .filter(|(_, st)| **st != Status::Neither)
            .map(|(r, _)| self.ordering.index_of(*r))
            .collect();
        let requirement = self.ordering.requirement((0..).find(|u| !excluded.contains(u)).expect("unbounded listing"));
        let active_s = statuses
            .iter()
            .enumerate()
            .filter(|&(d, st)| *st == Status::Active && ancestor_reqs[d].is_s())
            .map(|(d, _)| d)
            .collect();
        NodeInfo { node: parent.node.child(o), requirement, ancestor_reqs, statuses, active_s }
    }

    pub fn successors(&self, node: &Node) -> Result<Vec<Outcome>, TreeError> {
        Ok(self.info(node)?.successors())
    }

    pub fn status_along(&self, ancestor: &Node, node: &Node) -> Result<Status, TreeError> {
        if !ancestor.is_proper_prefix_of(node) {
            return Err(TreeError::NotAncestor { ancestor: ancestor.clone(), node: node.clone() });
        }
        Ok(self.info(node)?.statuses[ancestor.len()])
    }

    pub fn assign_requirement(&self, node: &Node) -> Result<Requirement, TreeError> {
        Ok(self.info(node)?.requirement)
    }

    /// All nodes of length at most `depth`, in priority order.
    pub fn nodes_to_depth(&self, depth: usize) -> Vec<Node> {
        let mut out = vec![Node::root()];
        let mut frontier = vec![Node::root()];
        for _ in 0..depth {
            let mut next = Vec::new();
            for n in &frontier {
                for o in self.successors(n).expect("enumerated nodes are in the tree") {
                    next.push(n.child(o));
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out.sort();
        out
    }
}

impl Default for Tree {
    fn default() -> Self {
        Self::new(RequirementOrdering::default())
    }
}
