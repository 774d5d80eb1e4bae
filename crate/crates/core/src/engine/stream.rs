//! Streams: sets of candidate witnesses handed down the tree.

use std::collections::BTreeSet;

/// Either a half-open interval or an explicit set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Stream {
    Range { lo: u64, hi: u64 },
    Set(BTreeSet<u64>),
}

impl Stream {
    pub fn range(lo: u64, hi: u64) -> Self {
        Stream::Range { lo, hi: hi.max(lo) }
    }

    pub fn intersect_range(&self, lo: u64, hi: u64) -> Self {
        match self {
            Stream::Range { lo: a, hi: b } => Stream::range((*a).max(lo), (*b).min(hi)),
            Stream::Set(s) => Stream::Set(s.range(lo..hi.max(lo)).copied().collect()),
        }
    }

    pub fn contains(&self, x: u64) -> bool {
        match self {
            Stream::Range { lo, hi } => (*lo..*hi).contains(&x),
            Stream::Set(s) => s.contains(&x),
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = u64> + '_> {
        match self {
            Stream::Range { lo, hi } => Box::new(*lo..*hi),
            Stream::Set(s) => Box::new(s.iter().copied()),
        }
    }

    pub fn min(&self) -> Option<u64> {
        self.iter().next()
    }

    pub fn max(&self) -> Option<u64> {
        match self {
            Stream::Range { lo, hi } => (lo < hi).then(|| hi - 1),
            Stream::Set(s) => s.last().copied(),
        }
    }

    /// Maximal half-open intervals covering the stream, ascending.
    pub fn intervals(&self) -> Vec<(u64, u64)> {
        match self {
            Stream::Range { lo, hi } if lo < hi => vec![(*lo, *hi)],
            Stream::Range { .. } => Vec::new(),
            Stream::Set(s) => to_intervals(s.iter().copied()),
        }
    }
}

pub fn to_intervals(xs: impl IntoIterator<Item = u64>) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::new();
    for x in xs {
        match out.last_mut() {
            Some((_, hi)) if *hi == x => *hi = x + 1,
            _ => out.push((x, x + 1)),
        }
    }
    out
}

pub fn from_intervals(iv: &[(u64, u64)]) -> impl Iterator<Item = u64> + '_ {
    iv.iter().flat_map(|&(lo, hi)| lo..hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_intersection() {
        let s = Stream::range(0, 10).intersect_range(3, 20);
        assert_eq!(s, Stream::range(3, 10));
        assert_eq!(s.max(), Some(9));
        assert_eq!(Stream::range(5, 3).intervals(), vec![]);
    }

    #[test]
    fn set_intervals() {
        let s = Stream::Set([2, 3, 4, 7, 9, 10].into_iter().collect());
        assert_eq!(s.intervals(), vec![(2, 5), (7, 8), (9, 11)]);
        let back: Vec<_> = from_intervals(&s.intervals()).collect();
        assert_eq!(back, vec![2, 3, 4, 7, 9, 10]);
        assert_eq!(s.intersect_range(4, 10).intervals(), vec![(4, 5), (7, 8), (9, 10)]);
    }
}
