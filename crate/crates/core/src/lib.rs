//! Offline-sampling data-driven stochastic MPC for unknown LTI systems
//! under measurement noise.
//!
//! The toolkit builds a non-parametric Hankel predictor from one noisy
//! input-state trajectory, tightens chance constraints by offline
//! uncertainty sampling, synthesizes a robust first-step constraint for
//! recursive feasibility, and runs the closed loop as a sequence of dense
//! QPs. A Monte Carlo harness evaluates the closed loop over noise
//! scenarios.

pub mod controller;
pub mod cost;
pub mod error;
pub mod geometry;
pub mod invariance;
pub mod hankel;
pub mod harness;
pub mod noise;
pub mod plant;
pub mod scenario;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
