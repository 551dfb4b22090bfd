//! Decentralized multi-MAV person tracking: cooperative EKF fusion with
//! converted spherical measurements, convex formation MPC with
//! potential-field external inputs, a lossy inter-robot channel and a
//! deterministic closed-loop simulator with experiment presets.
//!
//! Module map:
//! - [`geometry`]: frames, spherical conversions, planar angles.
//! - [`sensing`]: synthetic detection, noise model, covariance conversion.
//! - [`fusion`]: replicated constant-velocity EKF and covariance merging.
//! - [`potential`]: cotangential repulsive fields and safety thresholds.
//! - [`mpc`]: condensed QP, box-ADMM solver and the per-MAV controller.
//! - [`network`]: seeded lossy/delayed broadcast channel.
//! - [`simworld`]: person, MAV and drift dynamics; the world tick.
//! - [`harness`]: scenario config, metrics, presets and the runner.

pub mod fusion;
pub mod geometry;
pub mod harness;
pub mod mpc;
pub mod network;
pub mod potential;
pub mod sensing;
pub mod simworld;

pub use geometry::Vec3;
pub use sensing::MavId;
