//! Trajectory-level stochastic thermodynamics of a continuously measured qubit.
//!
//! The state is reduced to the Bloch-sphere coordinates `(r_z, φ)`. The crate
//! integrates the stochastic dynamics, solves the Fokker–Planck equation for
//! the `r_z` density, and accumulates system, environmental and total
//! stochastic entropy production along trajectories.

pub mod analysis;
pub mod config;
pub mod ensemble;
pub mod entropy;
pub mod error;
pub mod fokker_planck;
pub mod model;
pub mod noise;
pub mod output;
pub mod protocol;
pub mod purity;
pub mod quad;
pub mod sde;
pub mod validate;

pub use error::{Error, Result};
