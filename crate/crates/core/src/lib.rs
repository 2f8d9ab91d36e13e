//! Mesoscopic platoon control.
//!
//! Vehicles are double integrators organised as a leader-follower chain and
//! described by car-following pairs `χ_i = (Δp_i, Δv_i)`. Each follower
//! combines local feedback with aggregate statistics of the upstream
//! platoon, fed through a stable linear filter. The crate provides the
//! plant and aggregates, both spacing-policy control laws, a deterministic
//! simulator, Lyapunov/ISS certificates and trajectory checks, and a flat
//! configuration format driving the `mesoplatoon` command-line tool.

pub mod aggregates;
pub mod config;
pub mod control;
pub mod error;
pub mod platoon;
pub mod sim;
pub mod stability;

pub use aggregates::{PsiPair, RhoParams};
pub use control::{ControllerParams, Policy};
pub use error::{Error, Result};
pub use platoon::{CarFollowingState, EquilibriumSpec, ErrorState, Limits, Rho, VehicleState};
pub use sim::{simulate, Scenario, TrajectoryLog};
