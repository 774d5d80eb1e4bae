//! Registry of the markers S-nodes place in `D` to back their Gamma axioms.

use std::collections::BTreeMap;
use std::ops::Bound;

use serde::{Deserialize, Serialize};

use crate::tree::Node;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerRecord {
    pub owner: Node,
    pub z: u64,
    pub x: u64,
    pub value: u64,
    pub stage: u64,
    pub defined: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MarkerRegistry {
    records: BTreeMap<u64, MarkerRecord>,
    defined: BTreeMap<(Node, u64, u64), u64>,
}

impl MarkerRegistry {
    pub fn get(&self, value: u64) -> Option<&MarkerRecord> {
        self.records.get(&value)
    }

    pub fn defined(&self, owner: &Node, z: u64, x: u64) -> Option<u64> {
        self.defined.get(&(owner.clone(), z, x)).copied()
    }

    /// Records a new marker. Returns false, changing nothing, if `value`
    /// was used before or the slot is taken.
    pub fn define(&mut self, owner: Node, z: u64, x: u64, value: u64, stage: u64) -> bool {
        let slot = (owner.clone(), z, x);
        if self.records.contains_key(&value) || self.defined.contains_key(&slot) {
            return false;
        }
        self.defined.insert(slot, value);
        self.records.insert(value, MarkerRecord { owner, z, x, value, stage, defined: true });
        true
    }

    /// Cancels a defined marker; returns false if it was not defined.
    pub fn cancel(&mut self, value: u64) -> bool {
        match self.records.get_mut(&value) {
            Some(r) if r.defined => {
                r.defined = false;
                self.defined.remove(&(r.owner.clone(), r.z, r.x));
                true
            }
            _ => false,
        }
    }

    /// Defined markers of `owner`, in slot order.
    pub fn defined_by<'a>(&'a self, owner: &'a Node) -> impl Iterator<Item = &'a MarkerRecord> + 'a {
        self.defined
            .range((Bound::Included((owner.clone(), 0, 0)), Bound::Unbounded))
            .take_while(move |((o, _, _), _)| o == owner)
            .map(|(_, v)| &self.records[v])
    }

    pub fn all_defined(&self) -> impl Iterator<Item = &MarkerRecord> {
        self.defined.values().map(|v| &self.records[v])
    }

    pub fn all(&self) -> impl Iterator<Item = &MarkerRecord> {
        self.records.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Outcome;

    #[test]
    fn define_cancel() {
        let mut r = MarkerRegistry::default();
        let b = Node::root();
        let c = Node::root().child(Outcome::Infty);
        assert!(r.define(b.clone(), 0, 2, 7, 5));
        assert!(r.define(c.clone(), 0, 2, 9, 6));
        assert!(r.define(b.clone(), 1, 3, 11, 6));
        assert!(!r.define(c.clone(), 5, 5, 9, 7));
        assert!(!r.define(c.clone(), 0, 2, 13, 7));
        assert_eq!(r.defined(&b, 0, 2), Some(7));
        assert_eq!(r.defined_by(&b).map(|m| m.value).collect::<Vec<_>>(), vec![7, 11]);
        assert!(r.cancel(7));
        assert!(!r.cancel(7));
        assert_eq!(r.defined(&b, 0, 2), None);
        assert!(!r.get(7).unwrap().defined);
        assert_eq!(r.all_defined().count(), 2);
    }
}
