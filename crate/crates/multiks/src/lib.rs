//! Numerical toolkit for multi-population chemotaxis aggregation in the plane.
//!
//! The model couples `n` cell populations through logarithmic (Newtonian)
//! attraction with a symmetric nonnegative coupling matrix `A`, quadratic
//! confinement wells centered at per-population drift points `v_i`, and
//! prescribed masses `beta_i`. The central object is the free energy
//!
//! ```text
//! F_v(rho) = sum_i  int rho_i ln rho_i
//!          + (1/4pi) sum_ij a_ij  int int rho_i(x) ln|x-y| rho_j(y)
//!          + sum_i (1/2) int |x - v_i|^2 rho_i
//! ```
//!
//! whose critical points solve a Liouville system and whose minimizers are
//! steady states of the rescaled Keller-Segel dynamics. Whether a minimizer
//! exists is governed by the signs of the subset quantities
//! `Lambda_J = sum_{i in J} beta_i (8 pi - sum_{j in J} a_ij beta_j)` and, at
//! criticality, by the spread of the drift centers.
//!
//! Modules:
//! - [`criticality`]: exact algebra of the `Lambda_J` table, mass/drift statistics.
//! - [`field`]: density tuples on a truncated grid, moments, entropy, rearrangement.
//! - [`potential`]: log-kernel Newtonian potentials and interaction energies.
//! - [`energy`]: assembly of the free energy and its scaling identities.
//! - [`radial`]: 1-D solver for the radial Liouville system via cumulative masses.
//! - [`minimizer`]: damped Gibbs fixed-point descent with concentration detection.
//! - [`dynamics`]: positivity-preserving finite-volume time integration.

// `!(x > 0.0)` deliberately sends NaN down the rejection path; index loops
// over small coupled matrices read better than iterator chains here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod criticality;
pub mod dynamics;
pub mod energy;
pub mod field;
pub mod minimizer;
pub mod potential;
pub mod radial;
mod vec2;

pub use criticality::{CriticalityClass, CriticalityVerdict, InteractionSpec};
pub use energy::EnergyBreakdown;
pub use field::{DensityField, Grid2D};
pub use minimizer::{MinimizeReport, Verdict};
pub use radial::RadialProfile;
pub use vec2::Vec2;
