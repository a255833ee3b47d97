//! Path-integral Monte Carlo for the thermal reduced density matrix of an
//! exciton system coupled to an arbitrary phonon bath.
//!
//! The sampler targets the population-normalised estimator: phonon paths are
//! drawn from `f_I ∝ tr(ρ̄) e^{-β V_PIMC}` with a random-walk or Langevin
//! (MALA) kernel, and every sample contributes `ρ̄ / tr(ρ̄)`, whose trace is
//! one by construction. Grid-based oracles provide exact references.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimator;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod sampler;
pub mod stats;
pub mod units;

pub use estimator::{BeadPath, DriftField, EstimatorError, PathEvaluator, PathWeights, ScaledMatrix};
pub use linalg::SiteMatrix;
pub use model::{ModelError, ModelSystem};
