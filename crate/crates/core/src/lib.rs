//! Self-organizing interaction graphs for dynamic distributed constraint
//! optimization.
//!
//! Agents arrive and leave at arbitrary times. Using only message passing,
//! they build a rooted hierarchy (parent/children registers), keep it valid
//! while the population changes, and start a paired DCOP solver whenever
//! their neighborhood or incident constraints change.
//!
//! The crate is organised bottom-up:
//!
//! - [`policy`]: the response predicate, respondent selection and the
//!   out-degree cap.
//! - [`protocol`]: the per-agent connection state machine.
//! - [`liveness`]: keep-alive exchange and removal of unreachable neighbors.
//! - [`model`]: domains, quadratic binary constraints, the global objective
//!   and environment events.
//! - [`solver`]: a top-down greedy solver with analytic refinement and a
//!   bottom-up utility propagation solver with fault containment.
//! - [`sim`]: a deterministic discrete-event kernel that hosts the agents.
//! - [`monitor`]: validity oracle, stabilization detection and metrics.
//! - [`experiment`]: script generation, multi-seed experiment runs and
//!   result files.

pub mod error;
pub mod experiment;
pub mod liveness;
pub mod model;
pub mod monitor;
pub mod policy;
pub mod protocol;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use protocol::AgentId;
