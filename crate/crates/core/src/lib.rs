//! Random-order contention resolution schemes built from controller
//! mechanisms, with their applications to posted-price auctions, stochastic
//! k-set packing and submodular stochastic probing.
//!
//! Every probabilistic guarantee is checked at desk scale, either by
//! Monte-Carlo estimation over reproducible trial streams ([`seed`]) or by
//! exhaustive enumeration.

pub mod constraint;
pub mod controllers;
pub mod crs;
pub mod error;
pub mod harness;
pub mod knapsack;
pub mod matroids;
pub mod mechanisms;
pub mod probing;
pub mod relaxations;
pub mod seed;
pub mod set;
pub mod stats;
pub mod submodular;

pub use constraint::{Constraint, ConstraintSpec};
pub use error::{Error, Result};
pub use matroids::{ExchangeMapping, Matroid, MatroidSpec, SupportDecomposition};
pub use set::ElementSet;

/// Default bound on ground-set sizes for routines that enumerate all subsets.
pub const DEFAULT_DESK_CAP: usize = 20;

/// Enumeration cap, overridable through `ROCRS_DESK_CAP`.
pub fn desk_cap() -> usize {
    std::env::var("ROCRS_DESK_CAP")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_DESK_CAP)
}

pub(crate) fn check_desk_cap(what: &'static str, n: usize) -> Result<()> {
    let cap = desk_cap();
    if n > cap {
        return Err(Error::Capacity { what, got: n, cap });
    }
    Ok(())
}
