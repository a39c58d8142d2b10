//! Trajectory diffusion policy with controller-in-the-loop guidance.
//!
//! The crate trains a small trajectory denoiser, samples it with a
//! deterministic DDIM chain, and steers the sampling with gradients of
//! controller tracking costs — a velocity-limited IK arm or a whole-body MPC
//! for an aerial manipulator. A benchmark simulator quantifies how far each
//! embodiment falls short of a perfect-tracking oracle and how much
//! guidance recovers.

pub mod bench;
pub mod denoiser;
pub mod error;
pub mod guidance;
pub mod ik;
pub mod mpc;
pub mod policy;
pub mod sampler;
pub mod schedule;
pub mod se3;
pub mod traj;
pub mod training;
