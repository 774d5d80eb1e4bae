//! Simulator for a tree-of-strategies priority construction of two sets
//! `A` and `D`, where `D` is built to sit strictly below `A (+) D` with no
//! singleton degree in between, together with audits of its finite-stage
//! invariants.

pub mod adversary;
pub mod engine;
pub mod omega;
pub mod operator;
pub mod tree;
pub mod verifier;
