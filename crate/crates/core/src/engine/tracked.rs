//! Cofinite sets with a full per-element change log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Extract,
    Enumerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Change {
    pub stage: u64,
    pub substage: u64,
    pub transition: Transition,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrackedSetError {
    #[error("cannot extract {0}: it is not in the set")]
    NotIn(u64),
    #[error("cannot enumerate {0}: it is already in the set")]
    AlreadyIn(u64),
}

/// A set that starts as all of the naturals. Membership is derived from the
/// log: an element is in iff its log has even length.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrackedSet {
    log: BTreeMap<u64, Vec<Change>>,
}

impl TrackedSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, x: u64) -> bool {
        self.log.get(&x).is_none_or(|l| l.len() % 2 == 0)
    }

    /// Membership as at the end of `stage`.
    pub fn contains_at(&self, x: u64, stage: u64) -> bool {
        self.log.get(&x).is_none_or(|l| l.iter().filter(|c| c.stage <= stage).count() % 2 == 0)
    }

    pub fn extract(&mut self, x: u64, stage: u64, substage: u64) -> Result<(), TrackedSetError> {
        if !self.contains(x) {
            return Err(TrackedSetError::NotIn(x));
        }
        self.push(x, stage, substage, Transition::Extract);
        Ok(())
    }

    pub fn enumerate(&mut self, x: u64, stage: u64, substage: u64) -> Result<(), TrackedSetError> {
        if self.contains(x) {
            return Err(TrackedSetError::AlreadyIn(x));
        }
        self.push(x, stage, substage, Transition::Enumerate);
        Ok(())
    }

    fn push(&mut self, x: u64, stage: u64, substage: u64, transition: Transition) {
        self.log.entry(x).or_default().push(Change { stage, substage, transition });
    }

    pub fn log(&self, x: u64) -> &[Change] {
        self.log.get(&x).map_or(&[], Vec::as_slice)
    }

    /// Elements with a nonempty log.
    pub fn touched(&self) -> impl Iterator<Item = u64> + '_ {
        self.log.keys().copied()
    }

    /// Elements currently out of the set.
    pub fn missing(&self) -> impl Iterator<Item = u64> + '_ {
        self.log.iter().filter(|(_, l)| l.len() % 2 == 1).map(|(&x, _)| x)
    }

    /// Elements that left and came back.
    pub fn reentered(&self) -> impl Iterator<Item = u64> + '_ {
        self.log.iter().filter(|(_, l)| !l.is_empty() && l.len() % 2 == 0).map(|(&x, _)| x)
    }

    /// First stage from which `x` has stayed in the set without interruption,
    /// or `None` if it is out now.
    pub fn member_since(&self, x: u64) -> Option<u64> {
        match self.log.get(&x) {
            None => Some(0),
            Some(l) if l.len() % 2 == 0 => Some(l.last().map_or(0, |c| c.stage)),
            Some(_) => None,
        }
    }

    /// Last stage at which anything changed.
    pub fn last_change_stage(&self) -> Option<u64> {
        self.log.values().filter_map(|l| l.last()).map(|c| c.stage).max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn starts_full() {
        let s = TrackedSet::new();
        assert!(s.contains(0) && s.contains(u64::MAX));
        assert_eq!(s.member_since(5), Some(0));
    }

    #[test]
    fn toggles() {
        let mut s = TrackedSet::new();
        s.extract(4, 2, 1).unwrap();
        assert!(!s.contains(4));
        assert_eq!(s.extract(4, 3, 0), Err(TrackedSetError::NotIn(4)));
        s.enumerate(4, 6, 2).unwrap();
        assert!(s.contains(4));
        assert!(s.contains_at(4, 1));
        assert!(!s.contains_at(4, 5));
        assert!(s.contains_at(4, 6));
        assert_eq!(s.member_since(4), Some(6));
        assert_eq!(s.reentered().collect::<Vec<_>>(), vec![4]);
        assert_eq!(s.log(4).len(), 2);
    }

    proptest! {
        #[test]
        fn log_alternates(ops in prop::collection::vec((0u64..5, any::<bool>()), 0..40)) {
            let mut s = TrackedSet::new();
            for (stage, (x, ex)) in ops.into_iter().enumerate() {
                let _ = if ex { s.extract(x, stage as u64, 0) } else { s.enumerate(x, stage as u64, 0) };
            }
            for x in s.touched() {
                let log = s.log(x);
                for (i, c) in log.iter().enumerate() {
                    let want = if i % 2 == 0 { Transition::Extract } else { Transition::Enumerate };
                    prop_assert_eq!(c.transition, want);
                }
                prop_assert_eq!(s.contains(x), log.len().is_multiple_of(2));
            }
        }
    }
}
