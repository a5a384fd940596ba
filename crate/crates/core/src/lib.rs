//! Competitive latency–price contract market for AI services over radio
//! access networks.
//!
//! Operators post menus of (latency agreement, price) items to users whose
//! latency sensitivity is private. Violation of an agreement is bounded by a
//! Chernoff bound over three M/M/c stages, menus are designed by
//! one-dimensional screening, and the market outcome is found by a damped,
//! annealed fixed point between softmax user responses and operator menu
//! redesigns.
//!
//! Module map:
//!
//! - [`queueing`]: Erlang-C, stage sojourn tails, Chernoff violation bound.
//! - [`contracts`]: menus, utilities, feasibility audits, menu optimiser.
//! - [`market`]: the mixed matching fixed point, projection and equilibrium audit.
//! - [`benchmarks`]: CT, MC and GSMC comparison mechanisms.
//! - [`scenario`]: default configuration, scenario files, sweeps and plot scripts.
//! - [`audit`]: the property suite behind `validate`.
//! - [`cli`]: the command implementations behind the `airan-market` binary.

pub mod audit;
pub mod benchmarks;
pub mod cli;
pub mod contracts;
pub mod error;
pub mod market;
pub mod minimize;
pub mod queueing;
pub mod scenario;

pub use error::{Error, Result};
