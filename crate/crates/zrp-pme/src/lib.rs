//! Simulation and numerical-verification toolkit for the rescaled zero-range
//! process with jump rates `k^alpha` and its porous-medium-equation limit:
//! equilibrium samplers, an event-driven simulator with exponential tilting,
//! entropy/dissipation functionals, deterministic reference solvers, and a
//! variational evaluator of the dynamic rate function and action.

pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod lattice;
pub mod pme;
pub mod rate_fn;
pub mod sim;
pub mod tilt;

pub use error::{Error, Result};
pub use lattice::{Configuration, ScalingParams, TorusLattice};
