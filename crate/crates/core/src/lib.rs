//! Finite elements for quasi-static linear poroelasticity.
//!
//! The Biot system is rewritten in terms of the displacement `u` and two
//! pseudo-pressures: `ξ = αp − λ div u`, which pairs with `u` in a generalized
//! Stokes problem, and `η = c₀p + α div u`, which obeys a diffusion equation.
//! Taylor-Hood elements (P2 displacement, P1 pseudo-pressures) discretize
//! space; backward Euler discretizes time, either with the two subproblems
//! decoupled (`θ = 0`) or solved monolithically (`θ = 1`).

pub mod assembly;
pub mod diagnostics;
pub mod elements;
pub mod error;
pub mod mesh;
pub mod model;
pub mod solver;
pub mod sparse;
pub mod stepper;

pub use error::{Error, Result};
