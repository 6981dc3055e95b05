//! Kink solitons in planar trapped-ion Coulomb crystals.
//!
//! The crate computes stationary crystal structures and Peierls-Nabarro
//! potentials by constrained energy minimization, integrates the full ion
//! dynamics with a Langevin bath and trap/field ramps, detects and locates
//! kinks, reduces kink motion to a collective coordinate and runs stochastic
//! quench ensembles.

// Checks of the form `!(x > 0.0)` deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod collective;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod kinkdetect;
pub mod model;
pub mod optimize;
pub mod spectrum;
pub mod statics;
pub mod units;

pub use error::{Error, Result};
pub use model::{AxialMassScaling, Configuration, IonSystem, Potential};
pub use units::UnitSystem;
