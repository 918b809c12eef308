//! Planning library for a UAV that relays a base-station feed to vehicles on
//! a highway: it alternates a max-min bandwidth-allocation LP with a
//! convexified trajectory optimization until the worst normal-speed vehicle's
//! average rate stops improving, while high-speed vehicles keep a guaranteed
//! instantaneous rate.
//!
//! Modules:
//! - [`units`], [`link`]: conversions and closed-form channel/propulsion models
//! - [`scenario`], [`schema`]: problem instances and the JSON scenario format
//! - [`solver`]: a log-barrier interior-point method for the convex subproblems
//! - [`bandwidth`]: the per-slot bandwidth-share LP for a fixed trajectory
//! - [`trajectory`]: successive convex approximation of the trajectory block
//! - [`driver`], [`verify`]: the alternating loop, baselines, and exact
//!   post-hoc constraint verification
//! - [`experiments`]: seeded Monte Carlo batches and parameter sweeps

pub mod bandwidth;
pub mod driver;
pub mod experiments;
pub mod link;
pub mod scenario;
pub mod schema;
pub mod solver;
pub mod trajectory;
pub mod units;
pub mod verify;

#[cfg(test)]
pub(crate) mod testkit;

pub use link::{PowerModelParams, Trajectory};
pub use scenario::{ScenarioConfig, ScenarioSpec, VehicleClass, VehicleTrack};
