//! Simulation and verification of completely-positive classical-quantum
//! dynamics.
//!
//! The crate evolves hybrid states `ϱ(q, p)` (one density matrix per
//! phase-space cell) under continuous classical-quantum master equations,
//! audits complete positivity of the couplings, unravels saturated dynamics
//! into pure-state trajectories, evaluates discretized path actions, and
//! solves a zero-dimensional toy theory both perturbatively and by
//! quadrature.

pub mod action;
pub mod error;
pub mod generator;
pub mod model;
pub mod psd;
pub mod state;
pub mod unravel;
pub mod zerodim;

pub use error::{CqError, Result};
