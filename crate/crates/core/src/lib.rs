//! Reconcile-then-optimize toolkit for cooperative wind-power offering.
//!
//! Heterogeneous scenario forecasts of several wind power producers and of
//! their aggregate are reconciled into a coherent joint forecast, the
//! coalition's day-ahead offer is found from a two-stage stochastic program,
//! and expected and realized imbalance costs are shared through the
//! program's dual values.

pub mod allocation;
pub mod data;
pub mod error;
pub mod hierarchy;
pub mod learn;
pub mod market;
pub mod panel;
pub mod pipeline;
pub mod reconcile;
pub mod rng;
pub mod scoring;

pub use error::{Error, Result};
pub use hierarchy::Hierarchy;
pub use panel::ScenarioPanel;
