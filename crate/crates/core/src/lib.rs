//! Simulation, state estimation, and switching feedback control for a
//! continuously monitored qubit.
//!
//! The crate is organized around the Bloch-vector form of the diffusive
//! stochastic master equation:
//!
//! * [`qubit`] - 2x2 complex algebra, density/Bloch maps, superoperators,
//!   ball projection, fidelity.
//! * [`model`] - physical parameters and the drift/diffusion/output fields.
//! * [`sde`] - stochastic integration, noise streams, deterministic
//!   references.
//! * [`estimators`] - quantum filter, decorrelated extended Kalman filter,
//!   and the multiple-model adaptive estimator, behind a common trait with
//!   a by-name registry.
//! * [`control`] - switching Lyapunov controller (true-state or
//!   certainty-equivalent), constant drive, and no-op, behind a common
//!   trait with a by-name registry.
//! * [`config`], [`recipes`], [`ensemble`], [`csv`] - experiment
//!   configuration, built-in experiment recipes, seeded Monte Carlo
//!   execution, and CSV/metadata persistence.

pub mod config;
pub mod control;
pub mod csv;
pub mod ensemble;
pub mod estimators;
pub mod model;
pub mod qubit;
pub mod recipes;
pub mod sde;
