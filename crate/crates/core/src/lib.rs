//! Signed β-model for directed signed networks.
//!
//! Each ordered pair of nodes carries an edge in `{−1, 0, 1}` driven by the
//! sender's out-status `α_i`, the receiver's in-status `β_j` and the sender's
//! negative-edge sparsity `κ_i`. The crate fits `(α, β)` by estimating
//! equations plus a one-step refinement, estimates the sparsity pattern, and
//! ranks nodes with pairwise confidence intervals and a multiplicity-adjusted
//! Benjamini–Hochberg procedure.

pub mod bench;
pub mod error;
pub mod estimation;
pub mod inference;
pub mod io;
pub mod kappa;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use estimation::{fit, FitResult, SolverConfig};
pub use model::{KappaVector, Sign, SignedAdjacency, Theta};
pub use numerics::RandomStream;
