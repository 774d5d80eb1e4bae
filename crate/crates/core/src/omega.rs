//! The variant where `A` is not built directly but read off `D` through the
//! fixed operator `Omega = { <n, {4n, 4n+2}> }`.

use thiserror::Error;

use crate::engine::TrackedSet;
use crate::operator::FiniteSet;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OmegaError {
    #[error("block {n} already lost an element")]
    BlockTouched { n: u64 },
    #[error("both elements of block {n} are restrained")]
    BothRestrained { n: u64 },
}

/// `{4n, 4n+2}`.
pub fn omega_block(n: u64) -> [u64; 2] {
    [4 * n, 4 * n + 2]
}

pub fn omega_block_set(n: u64) -> FiniteSet {
    omega_block(n).into()
}

/// The block an even number belongs to, if any.
pub fn block_of(v: u64) -> Option<u64> {
    v.is_multiple_of(2).then_some(v / 4)
}

pub fn in_omega(d: &TrackedSet, n: u64) -> bool {
    omega_block(n).iter().all(|&v| d.contains(v))
}

/// `{ n < bound : F_n inside D }`.
pub fn project_a(d: &TrackedSet, bound: u64) -> FiniteSet {
    (0..bound).filter(|&n| in_omega(d, n)).collect()
}

/// Which element of block `n` leaves `D` when `n` leaves `A`.
///
/// If the realizing use is an element of the block, the other element goes.
/// Otherwise the least element outside `restrained` goes.
pub fn choose_extraction(
    d: &TrackedSet,
    n: u64,
    realized_use: Option<u64>,
    restrained: impl Fn(u64) -> bool,
) -> Result<u64, OmegaError> {
    let block = omega_block(n);
    if !block.iter().all(|&v| d.contains(v)) {
        return Err(OmegaError::BlockTouched { n });
    }
    if let Some(u) = realized_use.filter(|u| block.contains(u)) {
        let other = if block[0] == u { block[1] } else { block[0] };
        return Ok(other);
    }
    block.into_iter().find(|&v| !restrained(v)).ok_or(OmegaError::BothRestrained { n })
}

/// Next odd number strictly above `counter`.
pub fn pick_odd_marker(counter: u64) -> u64 {
    let v = counter + 1;
    if v % 2 == 1 {
        v
    } else {
        v + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn blocks() {
        assert_eq!(omega_block(0), [0, 2]);
        assert_eq!(omega_block(3), [12, 14]);
        let (b1, b2) = (omega_block_set(1), omega_block_set(2));
        assert!(b1.iter().all(|v| !b2.contains(v)));
        assert_eq!(block_of(14), Some(3));
        assert_eq!(block_of(7), None);
    }

    #[test]
    fn projection() {
        let mut d = TrackedSet::new();
        assert_eq!(project_a(&d, 4), FiniteSet::from([0, 1, 2, 3]));
        d.extract(4, 1, 0).unwrap();
        assert_eq!(project_a(&d, 4), FiniteSet::from([0, 2, 3]));
    }

    #[test]
    fn extraction_choice() {
        let mut d = TrackedSet::new();
        assert_eq!(choose_extraction(&d, 1, Some(6), |_| false), Ok(4));
        assert_eq!(choose_extraction(&d, 1, Some(7), |_| false), Ok(4));
        assert_eq!(choose_extraction(&d, 1, None, |v| v == 4), Ok(6));
        assert_eq!(choose_extraction(&d, 1, None, |_| true), Err(OmegaError::BothRestrained { n: 1 }));
        d.extract(4, 1, 0).unwrap();
        assert_eq!(choose_extraction(&d, 1, None, |_| false), Err(OmegaError::BlockTouched { n: 1 }));
    }

    #[test]
    fn odd_markers() {
        assert_eq!(pick_odd_marker(10), 11);
        assert_eq!(pick_odd_marker(11), 13);
    }

    proptest! {
        #[test]
        fn blocks_partition_evens(v in 0u64..10_000) {
            let v = v * 2;
            let n = block_of(v).unwrap();
            prop_assert!(omega_block(n).contains(&v));
        }

        #[test]
        fn marker_is_odd_and_fresh(c in 0u64..1_000_000) {
            let m = pick_odd_marker(c);
            prop_assert!(m % 2 == 1 && m > c && m <= c + 2);
        }
    }
}
